#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cometa/beg.hpp"
#include "cometa/checkpoint.hpp"
#include "cometa/config.hpp"
#include "cometa/protocol.hpp"
#include "cometa/report.hpp"
#include "cometa/split.hpp"

namespace cometa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

/// Command-line overrides; unset fields leave the file or default value.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool force = false;
  std::optional<std::string> kinds;
  std::optional<std::string> phase;
  std::optional<std::size_t> parallel_seeds;
};

/// Defaults, then the config file, then flags.
inline config::RunConfig resolve(const Flags& f) {
  config::RunConfig c = f.config.empty() ? config::RunConfig{} : config::load(f.config);
  if (f.seed) c.seeds = {*f.seed};
  if (f.out) c.out = *f.out;
  if (f.kinds) {
    c.kinds.clear();
    std::stringstream ss(*f.kinds);
    for (std::string k; std::getline(ss, k, ',');)
      if (!k.empty()) c.kinds.push_back(parse_kind(k));
  }
  if (f.phase) {
    if (*f.phase != "cold" && *f.phase != "all") throw ConfigError("--phase must be 'cold' or 'all'");
    c.protocol.cold_only = *f.phase == "cold";
  }
  if (f.parallel_seeds) c.parallel_seeds = *f.parallel_seeds;
  return c;
}

inline std::string seed_file(const char* stem, std::uint64_t seed, const char* ext) {
  return std::string(stem) + "_seed" + std::to_string(seed) + ext;
}

/// Everything a command needs once the config is resolved.
class Session {
 public:
  Session(config::RunConfig cfg, bool force, std::ostream& log)
      : cfg_(std::move(cfg)), force_(force), log_(log), dir_(cfg_.out) {
    config::validate(cfg_);
  }

  void load() {
    data_ = config::load_data(cfg_);
    split_ = data::split(data_, cfg_.protocol.split);
    say("loaded " + std::to_string(data_.records.size()) + " records, " + std::to_string(split_.old_items.size()) +
        " old items, " + std::to_string(split_.new_items.size()) + " new items");
  }

  void prepare() {
    claim({"manifest.json"});
    load();
    json m = data::split_manifest(data_, cfg_.protocol.split, split_);
    m["config"] = config::to_json(cfg_);
    report::write_text(dir_ / "manifest.json", m.dump(2) + "\n");
    say("wrote " + (dir_ / "manifest.json").string());
  }

  void pretrain() {
    std::vector<std::string> files;
    for (std::uint64_t s : cfg_.seeds) files.push_back(seed_file("backbone", s, ".ckpt"));
    claim(files);
    load();
    protocol::parallel_for(cfg_.seeds.size(), cfg_.parallel_seeds, [&](std::size_t i) {
      const std::uint64_t seed = cfg_.seeds[i];
      const model::ModelParams p = protocol::pretrain_backbone(data_, split_, cfg_.protocol, seed, logger());
      io::save(dir_ / files[i], io::Container{{io::model_section(p)}});
      say("wrote " + (dir_ / files[i]).string());
    });
  }

  void train_cometa() {
    std::vector<std::string> files;
    for (std::uint64_t s : cfg_.seeds) {
      files.push_back(seed_file("seg", s, ".ckpt"));
      files.push_back(seed_file("neighbors", s, ".tsv"));
      files.push_back(seed_file("episode_loss", s, ".csv"));
    }
    claim(files);
    load();
    protocol::parallel_for(cfg_.seeds.size(), cfg_.parallel_seeds, [&](std::size_t i) {
      const std::uint64_t seed = cfg_.seeds[i];
      const fs::path ckpt = dir_ / seed_file("backbone", seed, ".ckpt");
      if (!fs::exists(ckpt)) throw Error("missing backbone checkpoint " + ckpt.string() + "; run pretrain first");
      const model::ModelParams backbone = load_backbone(ckpt);
      const std::uint64_t before = model::hash_params(backbone);
      const protocol::CometaModules modules =
          protocol::train_modules(backbone, data_, split_, cfg_.protocol, cfg_.kinds, seed, logger());
      if (model::hash_params(backbone) != before) throw Error("generator training changed the backbone");

      io::Container c;
      std::string curve = "variant,epoch,loss,loss_a,loss_b\n";
      char buf[128];
      for (const auto& [name, result] : modules.generators) {
        c.sections.push_back(io::seg_section(name, result.params, generator_meta(backbone)));
        for (const seg::EpochStats& st : result.curve) {
          std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g,%.17g\n", st.epoch + 1, st.loss, st.loss_a, st.loss_b);
          curve += name + buf;
        }
      }
      io::save(dir_ / files[3 * i], c);
      report::write_text(dir_ / files[3 * i + 2], curve);

      const beg::CooccurrenceIndex warm = modules.index.extended(data_, split_.fold(data::Fold::warm_a));
      std::vector<beg::NeighborList> lists;
      for (std::size_t item : split_.new_items) {
        if (warm.indexed(item)) {
          lists.push_back(beg::top_k_neighbors(warm, item, split_.old_items, cfg_.protocol.seg.top_k));
        } else {
          lists.push_back({item, {}});
        }
      }
      report::write_text(dir_ / files[3 * i + 1], beg::dump(lists, data_.items));
      say("wrote generators for seed " + std::to_string(seed));
    });
  }

  /// Uses checkpoints in the output directory when present, otherwise trains in memory.
  void evaluate() {
    claim({"report.md", "report.json", "timings.json"});
    load();
    std::vector<std::vector<protocol::PhaseReport>> per_seed(cfg_.seeds.size());
    std::vector<double> prep_seconds(cfg_.seeds.size());
    protocol::parallel_for(cfg_.seeds.size(), cfg_.parallel_seeds, [&](std::size_t i) {
      const std::uint64_t seed = cfg_.seeds[i];
      const auto t0 = std::chrono::steady_clock::now();
      const fs::path backbone_path = dir_ / seed_file("backbone", seed, ".ckpt");
      model::ModelParams backbone;
      if (fs::exists(backbone_path)) {
        backbone = load_backbone(backbone_path);
        say("seed " + std::to_string(seed) + " using " + backbone_path.string());
      } else {
        backbone = protocol::pretrain_backbone(data_, split_, cfg_.protocol, seed, logger());
      }
      const protocol::CometaModules modules = load_or_train_modules(backbone, seed);
      prep_seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      per_seed[i] = protocol::evaluate_seed(backbone, modules, data_, split_, cfg_.protocol, cfg_.kinds, seed, logger());
    });
    std::vector<protocol::PhaseReport> all;
    for (auto& v : per_seed) all.insert(all.end(), v.begin(), v.end());
    report::emit(all, dir_);

    json timings = json::array();
    for (std::size_t i = 0; i < cfg_.seeds.size(); ++i) {
      json methods = json::object();
      for (const auto& r : per_seed[i]) methods[r.method] = r.wall_seconds;
      timings.push_back({{"seed", cfg_.seeds[i]}, {"training_seconds", prep_seconds[i]}, {"methods", methods}});
    }
    report::write_text(dir_ / "timings.json", timings.dump(2) + "\n");
    say("wrote " + (dir_ / "report.md").string());
  }

 private:
  config::RunConfig cfg_;
  bool force_;
  std::ostream& log_;
  std::mutex log_mu_;
  fs::path dir_;
  data::InteractionLog data_;
  data::SplitResult split_;

  void say(const std::string& line) {
    std::lock_guard lock(log_mu_);
    log_ << line << '\n';
  }
  protocol::Logger logger() {
    return [this](const std::string& line) { say(line); };
  }

  /// Creates the output directory and refuses to clobber outputs unless forced.
  void claim(const std::vector<std::string>& files) {
    fs::create_directories(dir_);
    if (force_) return;
    for (const std::string& f : files) {
      if (fs::exists(dir_ / f)) throw ConfigError("refusing to overwrite " + (dir_ / f).string() + " (pass --force)");
    }
  }

  json generator_meta(const model::ModelParams& backbone) const {
    return {{"backbone_hash", model::hash_params(backbone)}, {"seg", config::to_json(cfg_)["seg"]}};
  }

  model::ModelParams load_backbone(const fs::path& path) const {
    const model::ModelParams p = io::model_from(io::load(path).at("MODL"));
    const model::FeatureSchema want = model::schema_for(data_, cfg_.protocol.embedding_dim, cfg_.protocol.hidden);
    if (!(p.schema == want)) {
      throw ConfigError("checkpoint " + path.string() + " has schema " + json(p.schema).dump() +
                        " but the config implies " + json(want).dump());
    }
    return p;
  }

  protocol::CometaModules load_or_train_modules(const model::ModelParams& backbone, std::uint64_t seed) {
    const fs::path path = dir_ / seed_file("seg", seed, ".ckpt");
    std::optional<io::Container> saved;
    if (fs::exists(path)) saved = io::load(path);
    const json meta = generator_meta(backbone);
    std::vector<InitializerKind> missing;
    std::map<std::string, seg::SegTrainResult> loaded;
    for (InitializerKind k : cfg_.kinds) {
      const auto variant = seg_variant(k);
      if (!variant) continue;
      const std::string name = seg_variant_name(*variant);
      const io::Section* s = saved ? saved->find("SEGP", name) : nullptr;
      if (!s) {
        missing.push_back(k);
        continue;
      }
      if (json::parse(s->text) != meta) {
        throw ConfigError("generator '" + name + "' in " + path.string() +
                          " was trained on a different backbone or with different settings");
      }
      loaded[name] = seg::SegTrainResult{io::seg_from(*s), {}};
    }
    if (!loaded.empty()) say("seed " + std::to_string(seed) + " using generators from " + path.string());
    protocol::CometaModules m = protocol::train_modules(backbone, data_, split_, cfg_.protocol, missing, seed, logger());
    m.generators.merge(loaded);
    return m;
  }
};

/// Renders report.json in `dir` as markdown.
inline std::string render_report(const fs::path& dir) {
  const fs::path path = dir / "report.json";
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string() + "; run evaluate first");
  return report::to_markdown(report::from_json(json::parse(in)));
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"CoMeta cold-start item embedding experiments", "cometa"};
  app.require_subcommand(1);
  Flags flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", flags.config, "JSON run configuration");
    sub->add_option("--seed", flags.seed, "run this single seed instead of the configured list");
    sub->add_option("-o,--out", flags.out, "output directory");
    sub->add_flag("-f,--force", flags.force, "overwrite existing outputs");
    sub->add_option("--kinds", flags.kinds, "comma-separated initializer kinds");
    sub->add_option("--phase", flags.phase, "cold or all");
    sub->add_option("--parallel-seeds", flags.parallel_seeds, "seeds run concurrently");
  };
  CLI::App* prepare = app.add_subcommand("prepare", "split the data and write manifest.json");
  CLI::App* pretrain = app.add_subcommand("pretrain", "train the backbone on old items");
  CLI::App* train = app.add_subcommand("train-cometa", "train the embedding generators on a pretrained backbone");
  CLI::App* evaluate = app.add_subcommand("evaluate", "run cold and warm phases and write the report");
  CLI::App* show = app.add_subcommand("report", "print the report in the output directory");
  for (CLI::App* sub : {prepare, pretrain, train, evaluate, show}) common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsageError;
  }

  try {
    config::RunConfig cfg = resolve(flags);
    if (show->parsed()) {
      out << render_report(cfg.out);
      return kOk;
    }
    Session session(std::move(cfg), flags.force, err);
    if (prepare->parsed()) session.prepare();
    if (pretrain->parsed()) session.pretrain();
    if (train->parsed()) session.train_cometa();
    if (evaluate->parsed()) session.evaluate();
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace cometa::cli
