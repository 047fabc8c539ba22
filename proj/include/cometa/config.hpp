#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cometa/data.hpp"
#include "cometa/error.hpp"
#include "cometa/generator.hpp"
#include "cometa/protocol.hpp"
#include "cometa/synth.hpp"

namespace cometa::config {

using nlohmann::json;

struct MovieLensPaths {
  std::string ratings;
  std::string users;
  std::string movies;
};

struct DataSource {
  std::string kind = "synthetic";  // synthetic | movielens | csv
  data::SyntheticConfig synthetic;
  std::uint64_t synthetic_seed = 7;
  MovieLensPaths movielens;
  std::string csv_path;
  data::CsvSchema csv;
};

struct RunConfig {
  DataSource data;
  protocol::ProtocolConfig protocol;
  std::vector<InitializerKind> kinds{std::begin(kAllKinds), std::end(kAllKinds)};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t parallel_seeds = 1;
  std::string out = "runs/default";
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) known = known || it.key() == a;
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& target, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(target);
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline char single_char(const std::string& s, const std::string& where) {
  if (s.size() != 1) throw ConfigError(where + " must be a single character");
  return s[0];
}

}  // namespace detail

/// Overlays a JSON document on `base`. Keys absent from the document keep
/// their base values; unknown keys are rejected.
inline RunConfig overlay(const json& j, RunConfig base = {}) {
  using detail::read;
  detail::check_keys(j, {"data", "split", "model", "warm", "seg", "eval", "out"}, "config");
  RunConfig c = std::move(base);
  if (j.contains("data")) {
    const json& d = j["data"];
    detail::check_keys(d, {"source", "synthetic", "movielens", "csv"}, "data");
    read(d, "source", c.data.kind, "data");
    if (d.contains("synthetic")) {
      const json& s = d["synthetic"];
      detail::check_keys(s, {"seed", "users", "old_items", "new_items", "latent_dim", "old_count_min", "old_count_max",
                             "new_count_min", "new_count_max", "noise", "bins"},
                         "data.synthetic");
      auto& sc = c.data.synthetic;
      read(s, "seed", c.data.synthetic_seed, "data.synthetic");
      read(s, "users", sc.users, "data.synthetic");
      read(s, "old_items", sc.old_items, "data.synthetic");
      read(s, "new_items", sc.new_items, "data.synthetic");
      read(s, "latent_dim", sc.latent_dim, "data.synthetic");
      read(s, "old_count_min", sc.old_count_min, "data.synthetic");
      read(s, "old_count_max", sc.old_count_max, "data.synthetic");
      read(s, "new_count_min", sc.new_count_min, "data.synthetic");
      read(s, "new_count_max", sc.new_count_max, "data.synthetic");
      read(s, "noise", sc.noise, "data.synthetic");
      read(s, "bins", sc.bins, "data.synthetic");
    }
    if (d.contains("movielens")) {
      const json& m = d["movielens"];
      detail::check_keys(m, {"ratings", "users", "movies"}, "data.movielens");
      read(m, "ratings", c.data.movielens.ratings, "data.movielens");
      read(m, "users", c.data.movielens.users, "data.movielens");
      read(m, "movies", c.data.movielens.movies, "data.movielens");
    }
    if (d.contains("csv")) {
      const json& m = d["csv"];
      detail::check_keys(m, {"path", "user_id", "item_id", "label", "timestamp", "user_attrs", "item_attrs",
                             "delimiter", "multi_value_separator"},
                         "data.csv");
      read(m, "path", c.data.csv_path, "data.csv");
      read(m, "user_id", c.data.csv.user_id, "data.csv");
      read(m, "item_id", c.data.csv.item_id, "data.csv");
      read(m, "label", c.data.csv.label, "data.csv");
      if (m.contains("timestamp")) {
        if (m["timestamp"].is_null()) {
          c.data.csv.timestamp.reset();
        } else {
          c.data.csv.timestamp = m["timestamp"].get<std::string>();
        }
      }
      read(m, "user_attrs", c.data.csv.user_attrs, "data.csv");
      read(m, "item_attrs", c.data.csv.item_attrs, "data.csv");
      std::string delim(1, c.data.csv.delimiter), multi(1, c.data.csv.multi_value_separator);
      read(m, "delimiter", delim, "data.csv");
      read(m, "multi_value_separator", multi, "data.csv");
      c.data.csv.delimiter = detail::single_char(delim, "data.csv.delimiter");
      c.data.csv.multi_value_separator = detail::single_char(multi, "data.csv.multi_value_separator");
    }
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    detail::check_keys(s, {"n_old", "n_new", "k_fold", "holdout"}, "split");
    auto& sp = c.protocol.split;
    read(s, "n_old", sp.n_old, "split");
    read(s, "n_new", sp.n_new, "split");
    read(s, "k_fold", sp.k_fold, "split");
    read(s, "holdout", sp.holdout, "split");
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    detail::check_keys(m, {"embedding_dim", "hidden", "lr", "batch_size", "pretrain_epochs"}, "model");
    read(m, "embedding_dim", c.protocol.embedding_dim, "model");
    read(m, "hidden", c.protocol.hidden, "model");
    read(m, "lr", c.protocol.pretrain.lr, "model");
    read(m, "batch_size", c.protocol.pretrain.batch_size, "model");
    read(m, "pretrain_epochs", c.protocol.pretrain.epochs, "model");
  }
  if (j.contains("warm")) {
    const json& w = j["warm"];
    detail::check_keys(w, {"epochs", "lr", "batch_size"}, "warm");
    read(w, "epochs", c.protocol.warm.epochs, "warm");
    read(w, "lr", c.protocol.warm.lr, "warm");
    read(w, "batch_size", c.protocol.warm.batch_size, "warm");
  }
  if (j.contains("seg")) {
    const json& s = j["seg"];
    detail::check_keys(s, {"eta", "beta", "minibatch", "order", "lr", "epochs", "top_k", "positive_only",
                           "gen_hidden", "episodes_per_step"},
                       "seg");
    auto& sc = c.protocol.seg;
    read(s, "eta", sc.eta, "seg");
    read(s, "beta", sc.beta, "seg");
    read(s, "minibatch", sc.minibatch, "seg");
    if (s.contains("order")) {
      const std::string order = s["order"].get<std::string>();
      if (order == "full") {
        sc.order = seg::GradientOrder::full;
      } else if (order == "first") {
        sc.order = seg::GradientOrder::first;
      } else {
        throw ConfigError("seg.order must be 'full' or 'first', got '" + order + "'");
      }
    }
    read(s, "lr", sc.lr, "seg");
    read(s, "epochs", sc.epochs, "seg");
    read(s, "top_k", sc.top_k, "seg");
    read(s, "positive_only", sc.positive_only, "seg");
    read(s, "gen_hidden", sc.gen_hidden, "seg");
    read(s, "episodes_per_step", sc.episodes_per_step, "seg");
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    detail::check_keys(e, {"kinds", "seeds", "parallel_seeds", "phase"}, "eval");
    if (e.contains("kinds")) {
      c.kinds.clear();
      for (const auto& k : e["kinds"]) c.kinds.push_back(parse_kind(k.get<std::string>()));
    }
    read(e, "seeds", c.seeds, "eval");
    read(e, "parallel_seeds", c.parallel_seeds, "eval");
    if (e.contains("phase")) {
      const std::string phase = e["phase"].get<std::string>();
      if (phase != "cold" && phase != "all") throw ConfigError("eval.phase must be 'cold' or 'all'");
      c.protocol.cold_only = phase == "cold";
    }
  }
  read(j, "out", c.out, "config");
  return c;
}

/// Full effective configuration as JSON; overlay(to_json(c)) == c.
inline json to_json(const RunConfig& c) {
  const auto& sc = c.data.synthetic;
  json kinds = json::array();
  for (InitializerKind k : c.kinds) kinds.push_back(to_string(k));
  const auto& ps = c.protocol.seg;
  return {
      {"data",
       {{"source", c.data.kind},
        {"synthetic",
         {{"seed", c.data.synthetic_seed},
          {"users", sc.users},
          {"old_items", sc.old_items},
          {"new_items", sc.new_items},
          {"latent_dim", sc.latent_dim},
          {"old_count_min", sc.old_count_min},
          {"old_count_max", sc.old_count_max},
          {"new_count_min", sc.new_count_min},
          {"new_count_max", sc.new_count_max},
          {"noise", sc.noise},
          {"bins", sc.bins}}},
        {"movielens",
         {{"ratings", c.data.movielens.ratings}, {"users", c.data.movielens.users}, {"movies", c.data.movielens.movies}}},
        {"csv",
         {{"path", c.data.csv_path},
          {"user_id", c.data.csv.user_id},
          {"item_id", c.data.csv.item_id},
          {"label", c.data.csv.label},
          {"timestamp", c.data.csv.timestamp ? json(*c.data.csv.timestamp) : json(nullptr)},
          {"user_attrs", c.data.csv.user_attrs},
          {"item_attrs", c.data.csv.item_attrs},
          {"delimiter", std::string(1, c.data.csv.delimiter)},
          {"multi_value_separator", std::string(1, c.data.csv.multi_value_separator)}}}}},
      {"split",
       {{"n_old", c.protocol.split.n_old},
        {"n_new", c.protocol.split.n_new},
        {"k_fold", c.protocol.split.k_fold},
        {"holdout", c.protocol.split.holdout}}},
      {"model",
       {{"embedding_dim", c.protocol.embedding_dim},
        {"hidden", c.protocol.hidden},
        {"lr", c.protocol.pretrain.lr},
        {"batch_size", c.protocol.pretrain.batch_size},
        {"pretrain_epochs", c.protocol.pretrain.epochs}}},
      {"warm",
       {{"epochs", c.protocol.warm.epochs}, {"lr", c.protocol.warm.lr}, {"batch_size", c.protocol.warm.batch_size}}},
      {"seg",
       {{"eta", ps.eta},
        {"beta", ps.beta},
        {"minibatch", ps.minibatch},
        {"order", ps.order == seg::GradientOrder::full ? "full" : "first"},
        {"lr", ps.lr},
        {"epochs", ps.epochs},
        {"top_k", ps.top_k},
        {"positive_only", ps.positive_only},
        {"gen_hidden", ps.gen_hidden},
        {"episodes_per_step", ps.episodes_per_step}}},
      {"eval",
       {{"kinds", kinds},
        {"seeds", c.seeds},
        {"parallel_seeds", c.parallel_seeds},
        {"phase", c.protocol.cold_only ? "cold" : "all"}}},
      {"out", c.out},
  };
}

inline RunConfig load(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return overlay(j, std::move(base));
}

/// Checks values and that every input file exists.
inline void validate(const RunConfig& c) {
  c.protocol.split.validate();
  c.protocol.seg.validate();
  if (c.protocol.embedding_dim < 1) throw ConfigError("model.embedding_dim must be at least 1");
  if (c.kinds.empty()) throw ConfigError("eval.kinds is empty");
  if (c.seeds.empty()) throw ConfigError("eval.seeds is empty");
  if (c.parallel_seeds < 1) throw ConfigError("eval.parallel_seeds must be at least 1");
  auto need = [](const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string(what) + " path is not set");
    if (!std::filesystem::exists(path)) throw ConfigError(std::string(what) + " not found: '" + path + "'");
  };
  if (c.data.kind == "synthetic") {
    c.data.synthetic.validate();
  } else if (c.data.kind == "movielens") {
    need(c.data.movielens.ratings, "ratings file");
    need(c.data.movielens.users, "users file");
    need(c.data.movielens.movies, "movies file");
  } else if (c.data.kind == "csv") {
    need(c.data.csv_path, "csv file");
  } else {
    throw ConfigError("data.source must be synthetic, movielens or csv, got '" + c.data.kind + "'");
  }
}

inline data::InteractionLog load_data(const RunConfig& c) {
  if (c.data.kind == "synthetic") return data::synthesize(c.data.synthetic, c.data.synthetic_seed);
  if (c.data.kind == "movielens") {
    return data::load_movielens(c.data.movielens.ratings, c.data.movielens.users, c.data.movielens.movies);
  }
  if (c.data.kind == "csv") return data::load_csv(c.data.csv_path, c.data.csv);
  throw ConfigError("unknown data source '" + c.data.kind + "'");
}

}  // namespace cometa::config
