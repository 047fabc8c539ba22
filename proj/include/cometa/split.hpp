#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cometa/data.hpp"
#include "cometa/error.hpp"
#include "cometa/tensor.hpp"

namespace cometa::data {

/// Item grouping thresholds. Old items have more than n_old samples; new items
/// have more than n_new and fewer than n_old. `holdout` is the number of most
/// recent samples per old item reserved for training the cold-start modules.
struct SplitSpec {
  std::size_t n_old = 200;
  std::size_t n_new = 80;
  std::size_t k_fold = 20;
  std::size_t holdout = 40;

  void validate() const {
    if (k_fold < 1) throw ConfigError("k_fold must be at least 1");
    if (!(n_old > n_new)) throw ConfigError("n_old must exceed n_new");
    if (n_new < 3 * k_fold) throw ConfigError("n_new must be at least 3 * k_fold");
  }
};

enum class Fold : std::uint8_t { warm_a = 0, warm_b = 1, warm_c = 2, test = 3 };

struct NewItemFolds {
  std::size_t item = 0;
  std::array<std::vector<std::size_t>, 4> folds;  // record indices, timestamp order

  const std::vector<std::size_t>& operator[](Fold f) const { return folds[static_cast<int>(f)]; }
};

struct SplitResult {
  std::vector<std::size_t> old_items;     // ascending
  std::vector<std::size_t> new_items;     // ascending
  std::vector<std::size_t> pretrain;      // record indices of old items, ascending
  std::vector<std::size_t> module_train;  // held-out old-item records, ascending
  std::vector<NewItemFolds> new_folds;    // parallel to new_items

  /// Union over new items of one fold, in new-item order.
  std::vector<std::size_t> fold(Fold f) const {
    std::vector<std::size_t> out;
    for (const auto& nf : new_folds) {
      const auto& v = nf[f];
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }

  bool operator==(const SplitResult& o) const {
    if (old_items != o.old_items || new_items != o.new_items || pretrain != o.pretrain ||
        module_train != o.module_train || new_folds.size() != o.new_folds.size()) {
      return false;
    }
    for (std::size_t k = 0; k < new_folds.size(); ++k) {
      if (new_folds[k].item != o.new_folds[k].item || new_folds[k].folds != o.new_folds[k].folds) return false;
    }
    return true;
  }
};

/// Groups items by sample count and cuts each new item's time-ordered samples
/// into warm-a / warm-b / warm-c (k_fold each) and test (the remainder).
inline SplitResult split(const InteractionLog& log, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::vector<std::size_t>> by_item(log.items.size());
  for (std::size_t r = 0; r < log.records.size(); ++r) by_item[log.records[r].item].push_back(r);

  auto time_order = [&](std::vector<std::size_t>& recs) {
    std::stable_sort(recs.begin(), recs.end(), [&](std::size_t a, std::size_t b) {
      return log.records[a].timestamp < log.records[b].timestamp;
    });
  };

  SplitResult out;
  for (std::size_t item = 0; item < by_item.size(); ++item) {
    std::vector<std::size_t>& recs = by_item[item];
    const std::size_t count = recs.size();
    if (count > spec.n_old) {
      out.old_items.push_back(item);
      time_order(recs);
      const std::size_t held = std::min(spec.holdout, count / 2);
      out.pretrain.insert(out.pretrain.end(), recs.begin(), recs.end() - static_cast<std::ptrdiff_t>(held));
      out.module_train.insert(out.module_train.end(), recs.end() - static_cast<std::ptrdiff_t>(held), recs.end());
    } else if (count > spec.n_new && count < spec.n_old) {
      out.new_items.push_back(item);
      time_order(recs);
      NewItemFolds nf;
      nf.item = item;
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t fold = std::min<std::size_t>(k / spec.k_fold, 3);
        nf.folds[fold].push_back(recs[k]);
      }
      out.new_folds.push_back(std::move(nf));
    }
  }
  if (out.old_items.empty()) throw DataError("split produced no old items");
  if (out.new_items.empty()) throw DataError("split produced no new items");
  std::sort(out.pretrain.begin(), out.pretrain.end());
  std::sort(out.module_train.begin(), out.module_train.end());
  return out;
}

inline std::uint64_t hash_records(std::span<const std::size_t> records) {
  Fnv1a h;
  for (std::size_t r : records) h.update_pod(static_cast<std::uint64_t>(r));
  return h.digest();
}

/// Audit dump of item assignments and fold boundaries (raw ids).
inline nlohmann::json split_manifest(const InteractionLog& log, const SplitSpec& spec, const SplitResult& s) {
  using nlohmann::json;
  json m;
  m["schema_version"] = 1;
  m["spec"] = {{"n_old", spec.n_old}, {"n_new", spec.n_new}, {"k_fold", spec.k_fold}, {"holdout", spec.holdout}};
  m["counts"] = {{"old_items", s.old_items.size()},
                 {"new_items", s.new_items.size()},
                 {"pretrain_samples", s.pretrain.size()},
                 {"module_train_samples", s.module_train.size()},
                 {"warm_samples", s.fold(Fold::warm_a).size() + s.fold(Fold::warm_b).size() +
                                      s.fold(Fold::warm_c).size()},
                 {"test_samples", s.fold(Fold::test).size()}};
  json old = json::array();
  for (std::size_t i : s.old_items) old.push_back(log.items.decode(i));
  m["old_items"] = std::move(old);
  json items = json::array();
  for (const auto& nf : s.new_folds) {
    json folds = json::object();
    const char* names[] = {"warm_a", "warm_b", "warm_c", "test"};
    for (int f = 0; f < 4; ++f) {
      const auto& recs = nf.folds[f];
      json entry = {{"size", recs.size()}};
      if (!recs.empty()) {
        entry["first_timestamp"] = log.records[recs.front()].timestamp;
        entry["last_timestamp"] = log.records[recs.back()].timestamp;
      }
      folds[names[f]] = std::move(entry);
    }
    items.push_back({{"item", log.items.decode(nf.item)}, {"folds", std::move(folds)}});
  }
  m["new_items"] = std::move(items);
  m["test_hash"] = hash_records(s.fold(Fold::test));
  return m;
}

}  // namespace cometa::data
