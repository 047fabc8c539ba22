#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cometa/data.hpp"
#include "cometa/error.hpp"
#include "cometa/tensor.hpp"

namespace cometa::data {

/// Planted-structure generator. Users and items get standard normal latent
/// vectors; a record's clean label is 1 when the latent dot product is positive
/// (sigma(p.q) > 0.5), then flipped with probability `noise`. Attributes are
/// quantized latent coordinates, so both attributes and co-occurrence carry signal.
struct SyntheticConfig {
  std::size_t users = 2000;
  std::size_t old_items = 300;
  std::size_t new_items = 100;
  std::size_t latent_dim = 3;
  std::size_t old_count_min = 201;
  std::size_t old_count_max = 300;
  std::size_t new_count_min = 81;
  std::size_t new_count_max = 160;
  double noise = 0.1;
  std::size_t bins = 4;

  void validate() const {
    if (users == 0 || old_items + new_items == 0) throw ConfigError("synthetic: empty population");
    if (latent_dim < 3) throw ConfigError("synthetic: latent_dim must be at least 3");
    if (old_count_min > old_count_max || new_count_min > new_count_max) {
      throw ConfigError("synthetic: count range min exceeds max");
    }
    if (old_count_max > users || new_count_max > users) {
      throw ConfigError("synthetic: an item cannot have more interactions than there are users");
    }
    if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synthetic: noise must be in [0, 1]");
    if (bins < 1) throw ConfigError("synthetic: bins must be at least 1");
  }
};

/// Latent factors behind a synthetic log, for tests.
struct SyntheticTruth {
  Tensor user_latent;  // users x latent_dim
  Tensor item_latent;  // items x latent_dim
};

inline std::size_t quantize(double x, std::size_t bins) {
  const double pos = std::floor((x + 2.0) / 4.0 * static_cast<double>(bins));
  return static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
}

/// Items 0 .. old_items-1 draw counts from the old range, the rest from the new range.
inline InteractionLog synthesize(const SyntheticConfig& cfg, std::uint64_t seed, SyntheticTruth* truth = nullptr) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t n_items = cfg.old_items + cfg.new_items;
  const std::size_t k = cfg.latent_dim;
  Tensor pu(cfg.users, k), qi(n_items, k);
  for (double& v : pu.values()) v = normal(rng);
  for (double& v : qi.values()) v = normal(rng);

  InteractionLog log;
  log.user_fields = {{"p0_bin", {}, {}}, {"p1_bin", {}, {}}};
  log.item_fields = {{"q0_bin", {}, {}}, {"q1_bin", {}, {}}, {"tags", {}, {}}};
  for (std::size_t b = 0; b < cfg.bins; ++b) {
    for (auto* f : {&log.user_fields[0], &log.user_fields[1], &log.item_fields[0], &log.item_fields[1]}) {
      f->vocab.encode("b" + std::to_string(b));
    }
  }
  for (std::size_t j = 2; j < k; ++j) log.item_fields[2].vocab.encode("t" + std::to_string(j));

  for (std::size_t u = 0; u < cfg.users; ++u) {
    log.users.encode("u" + std::to_string(u));
    log.user_fields[0].values.push_back({quantize(pu(u, 0), cfg.bins)});
    log.user_fields[1].values.push_back({quantize(pu(u, 1), cfg.bins)});
  }
  for (std::size_t i = 0; i < n_items; ++i) {
    log.items.encode("i" + std::to_string(i));
    log.item_fields[0].values.push_back({quantize(qi(i, 0), cfg.bins)});
    log.item_fields[1].values.push_back({quantize(qi(i, 1), cfg.bins)});
    std::vector<std::size_t> tags;
    for (std::size_t j = 2; j < k; ++j)
      if (qi(i, j) > 0.5) tags.push_back(j - 2);
    log.item_fields[2].values.push_back(std::move(tags));
  }

  std::vector<std::size_t> user_pool(cfg.users);
  std::iota(user_pool.begin(), user_pool.end(), 0);
  for (std::size_t i = 0; i < n_items; ++i) {
    const bool old = i < cfg.old_items;
    std::uniform_int_distribution<std::size_t> count_dist(old ? cfg.old_count_min : cfg.new_count_min,
                                                          old ? cfg.old_count_max : cfg.new_count_max);
    const std::size_t count = count_dist(rng);
    // Partial Fisher-Yates: the first `count` entries become a uniform sample without replacement.
    for (std::size_t s = 0; s < count; ++s) {
      std::uniform_int_distribution<std::size_t> pick(s, cfg.users - 1);
      std::swap(user_pool[s], user_pool[pick(rng)]);
    }
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t u = user_pool[s];
      double score = 0.0;
      for (std::size_t j = 0; j < k; ++j) score += pu(u, j) * qi(i, j);
      std::uint8_t label = score > 0.0 ? 1 : 0;
      if (unit(rng) < cfg.noise) label = static_cast<std::uint8_t>(1 - label);
      const auto ts = static_cast<std::int64_t>(unit(rng) * 1e9);
      log.records.push_back({u, i, label, ts});
    }
  }
  if (truth) *truth = {std::move(pu), std::move(qi)};
  log.validate();
  return log;
}

}  // namespace cometa::data
