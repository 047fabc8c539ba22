#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cometa/beg.hpp"
#include "cometa/data.hpp"
#include "cometa/generator.hpp"
#include "cometa/metrics.hpp"
#include "cometa/model.hpp"
#include "cometa/seg.hpp"
#include "cometa/split.hpp"

namespace cometa::protocol {

enum class Phase { cold = 0, warm_a = 1, warm_b = 2, warm_c = 3 };

inline constexpr std::array<Phase, 4> kPhases{Phase::cold, Phase::warm_a, Phase::warm_b, Phase::warm_c};

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::cold: return "cold";
    case Phase::warm_a: return "warm_a";
    case Phase::warm_b: return "warm_b";
    case Phase::warm_c: return "warm_c";
  }
  return "?";
}

struct PhaseMetrics {
  double auc = 0.0;
  double logloss = 0.0;

  bool operator==(const PhaseMetrics&) const = default;
};

struct PhaseReport {
  std::string method;
  std::uint64_t seed = 0;
  std::array<std::optional<PhaseMetrics>, 4> phases;
  double wall_seconds = 0.0;
  std::uint64_t test_hash = 0;

  const std::optional<PhaseMetrics>& operator[](Phase p) const { return phases[static_cast<int>(p)]; }
};

struct ProtocolConfig {
  data::SplitSpec split;
  std::size_t embedding_dim = 16;
  std::vector<std::size_t> hidden{64, 64, 64};
  model::TrainConfig pretrain{.epochs = 10, .lr = 1e-3, .batch_size = 256};
  model::TrainConfig warm{.epochs = 1, .lr = 1e-3, .batch_size = 256};
  seg::SegConfig seg;
  bool cold_only = false;
};

using Logger = std::function<void(const std::string&)>;

/// Independent stream seed for one named stage of a run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  Fnv1a h;
  h.update(stream.data(), stream.size());
  std::uint64_t z = seed ^ h.digest();
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Step 1: backbone trained on the old items' pretraining records.
inline model::ModelParams pretrain_backbone(const data::InteractionLog& log, const data::SplitResult& split,
                                            const ProtocolConfig& cfg, std::uint64_t seed,
                                            const Logger& logger = {}) {
  const model::FeatureSchema schema = model::schema_for(log, cfg.embedding_dim, cfg.hidden);
  model::ModelParams params = model::ModelParams::init(schema, derive_seed(seed, "backbone/init"));
  return model::pretrain(std::move(params), log, split.pretrain, cfg.pretrain, derive_seed(seed, "backbone/shuffle"),
                         [&](std::size_t epoch, double loss) {
                           if (logger) {
                             logger("seed " + std::to_string(seed) + " pretrain epoch " + std::to_string(epoch + 1) +
                                    " loss " + std::to_string(loss));
                           }
                         });
}

/// Co-occurrence index over every old-item record.
inline beg::CooccurrenceIndex old_item_index(const data::InteractionLog& log, const data::SplitResult& split,
                                             bool positive_only) {
  std::vector<std::size_t> records = split.pretrain;
  records.insert(records.end(), split.module_train.begin(), split.module_train.end());
  return beg::CooccurrenceIndex::build(log, records, positive_only);
}

/// Distinct generator variants the kinds need, keyed by seg_variant_name.
inline std::map<std::string, seg::SegVariant> variants_for(std::span<const InitializerKind> kinds) {
  std::map<std::string, seg::SegVariant> out;
  for (InitializerKind k : kinds)
    if (auto v = seg_variant(k)) out.emplace(seg_variant_name(*v), *v);
  return out;
}

struct CometaModules {
  beg::CooccurrenceIndex index;
  std::map<std::string, seg::SegTrainResult> generators;
};

/// Step 2: B-EG index and every S-EG variant the kinds need, on the frozen backbone.
inline CometaModules train_modules(const model::ModelParams& backbone, const data::InteractionLog& log,
                                   const data::SplitResult& split, const ProtocolConfig& cfg,
                                   std::span<const InitializerKind> kinds, std::uint64_t seed,
                                   const Logger& logger = {}) {
  CometaModules out;
  out.index = old_item_index(log, split, cfg.seg.positive_only);
  const beg::CandidateSet candidates(split.old_items);
  const model::GlobalAverages averages = model::global_averages(backbone, split.old_items);
  const seg::EpisodeSources src{log, out.index, candidates, averages, cfg.seg.top_k, {}};
  for (const auto& [name, variant] : variants_for(kinds)) {
    auto log_epoch = [&, name = name](const seg::EpochStats& st) {
      if (logger) {
        logger("seed " + std::to_string(seed) + " generator " + name + " epoch " + std::to_string(st.epoch + 1) +
               " loss " + std::to_string(st.loss) + " loss_a " + std::to_string(st.loss_a) + " loss_b " +
               std::to_string(st.loss_b));
      }
    };
    out.generators.emplace(name, seg::train_seg(backbone, split.module_train, src, cfg.seg, variant,
                                                derive_seed(seed, "generator/" + name), log_epoch));
  }
  return out;
}

/// Scores of `params` on a fixed batch, in chunks.
inline std::vector<double> score(const model::ModelParams& params, const data::InteractionLog& log,
                                 std::span<const std::size_t> records) {
  constexpr std::size_t kChunk = 4096;
  std::vector<double> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    const auto chunk = records.subspan(start, std::min(kChunk, records.size() - start));
    const Tensor p = model::predict(params, model::make_batch(log, chunk));
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

inline PhaseMetrics evaluate_on(const model::ModelParams& params, const data::InteractionLog& log,
                                std::span<const std::size_t> test, std::span<const double> labels) {
  const std::vector<double> s = score(params, log, test);
  return {metrics::auc(s, labels), metrics::logloss(s, labels)};
}

/// Steps 3-7 for one seed: cold initialization, optional warm regeneration,
/// then item-only updates on warm-a, warm-b, warm-c, evaluating on the new
/// items' test records after each. Every kind starts from the same backbone.
inline std::vector<PhaseReport> evaluate_seed(const model::ModelParams& backbone, const CometaModules& modules,
                                              const data::InteractionLog& log, const data::SplitResult& split,
                                              const ProtocolConfig& cfg, std::span<const InitializerKind> kinds,
                                              std::uint64_t seed, const Logger& logger = {}) {
  const std::vector<std::size_t> test = split.fold(data::Fold::test);
  if (test.empty()) throw DataError("new items have no test records");
  std::vector<double> labels;
  for (std::size_t r : test) labels.push_back(static_cast<double>(log.records[r].label));
  const std::uint64_t test_hash = data::hash_records(test);

  const beg::CandidateSet candidates(split.old_items);
  const model::GlobalAverages averages = model::global_averages(backbone, split.old_items);
  const beg::CooccurrenceIndex warm_index = modules.index.extended(log, split.fold(data::Fold::warm_a));
  const std::uint64_t start_hash = model::hash_params(backbone);
  const std::uint64_t frozen_hash = model::hash_non_item_params(backbone);
  const std::array<data::Fold, 3> folds{data::Fold::warm_a, data::Fold::warm_b, data::Fold::warm_c};

  std::vector<PhaseReport> reports;
  for (InitializerKind kind : kinds) {
    const auto t0 = std::chrono::steady_clock::now();
    if (model::hash_params(backbone) != start_hash) throw Error("backbone changed between methods");
    PhaseReport rep;
    rep.method = to_string(kind);
    rep.seed = seed;
    rep.test_hash = test_hash;

    const seg::SegParams* generator = nullptr;
    if (const auto variant = seg_variant(kind)) {
      auto it = modules.generators.find(seg_variant_name(*variant));
      if (it == modules.generators.end()) throw Error("no trained generator for '" + rep.method + "'");
      generator = &it->second.params;
    }
    const GenerationContext cold{backbone, log, modules.index, candidates, averages, generator, cfg.seg.top_k, {}};
    model::ModelParams params =
        initialize_cold(backbone, cold, kind, split.new_items, derive_seed(seed, "init/" + rep.method));
    if (model::hash_non_item_params(params) != frozen_hash) throw Error("initialization touched frozen parameters");
    rep.phases[0] = evaluate_on(params, log, test, labels);

    if (!cfg.cold_only) {
      if (regenerates(kind)) {
        const GenerationContext warm{params, log, warm_index, candidates, averages, generator, cfg.seg.top_k, {}};
        params = regenerate_warm(params, warm, kind, split.new_items);
      }
      for (std::size_t f = 0; f < folds.size(); ++f) {
        const std::vector<std::size_t> records = split.fold(folds[f]);
        const std::string stream = std::string("warm/") + phase_name(kPhases[f + 1]);
        if (cfg.warm.epochs > 0 && !records.empty()) {
          params = model::update_item_embeddings_only(std::move(params), log, records, split.new_items, cfg.warm,
                                                      derive_seed(seed, stream));
        }
        rep.phases[f + 1] = evaluate_on(params, log, test, labels);
      }
      if (model::hash_non_item_params(params) != frozen_hash) throw Error("warm updates touched frozen parameters");
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (logger) {
      std::string line = "seed " + std::to_string(seed) + " " + rep.method;
      for (Phase p : kPhases)
        if (rep[p]) line += " " + std::string(phase_name(p)) + " auc " + std::to_string(rep[p]->auc);
      logger(line);
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

/// Runs fn(0..n-1) on up to `workers` threads; each index runs exactly once.
/// The first exception is rethrown after all threads finish.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// The whole protocol for every seed; reports ordered by seed, then kind.
inline std::vector<PhaseReport> run_protocol(const data::InteractionLog& log, const data::SplitResult& split,
                                             const ProtocolConfig& cfg, std::span<const InitializerKind> kinds,
                                             std::span<const std::uint64_t> seeds, std::size_t parallel_seeds = 1,
                                             const Logger& logger = {}) {
  if (kinds.empty()) throw ConfigError("no initializer kinds requested");
  if (seeds.empty()) throw ConfigError("no seeds requested");
  std::mutex log_mu;
  const Logger safe = [&](const std::string& line) {
    if (!logger) return;
    std::lock_guard lock(log_mu);
    logger(line);
  };
  std::vector<std::vector<PhaseReport>> per_seed(seeds.size());
  parallel_for(seeds.size(), parallel_seeds, [&](std::size_t i) {
    const model::ModelParams backbone = pretrain_backbone(log, split, cfg, seeds[i], safe);
    const CometaModules modules = train_modules(backbone, log, split, cfg, kinds, seeds[i], safe);
    per_seed[i] = evaluate_seed(backbone, modules, log, split, cfg, kinds, seeds[i], safe);
  });
  std::vector<PhaseReport> out;
  for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace cometa::protocol
