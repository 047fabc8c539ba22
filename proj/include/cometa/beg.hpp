#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cometa/data.hpp"
#include "cometa/error.hpp"
#include "cometa/tensor.hpp"

namespace cometa::beg {

/// Bipartite user-item incidence: U(i) per item and I(a) per user, both as
/// sorted duplicate-free lists.
class CooccurrenceIndex {
 public:
  CooccurrenceIndex() = default;

  static CooccurrenceIndex from_pairs(std::span<const std::pair<std::size_t, std::size_t>> user_item) {
    CooccurrenceIndex idx;
    idx.add(user_item);
    return idx;
  }

  /// Index of the given records; with positive_only, records labelled 0 are skipped.
  static CooccurrenceIndex build(const data::InteractionLog& log, std::span<const std::size_t> records,
                                 bool positive_only) {
    CooccurrenceIndex idx;
    idx.positive_only_ = positive_only;
    idx.add(log, records);
    return idx;
  }

  /// Copy with further records merged in (same positive_only rule).
  CooccurrenceIndex extended(const data::InteractionLog& log, std::span<const std::size_t> records) const {
    CooccurrenceIndex idx = *this;
    idx.add(log, records);
    return idx;
  }

  bool indexed(std::size_t item) const { return by_item_.contains(item); }
  bool positive_only() const { return positive_only_; }
  std::size_t item_count() const { return by_item_.size(); }
  std::size_t user_count() const { return by_user_.size(); }

  const std::vector<std::size_t>& users_of(std::size_t item) const {
    auto it = by_item_.find(item);
    if (it == by_item_.end()) throw IndexError("item " + std::to_string(item) + " is not in the co-occurrence index");
    return it->second;
  }

  /// Empty for users the index has never seen.
  const std::vector<std::size_t>& items_of(std::size_t user) const {
    static const std::vector<std::size_t> none;
    auto it = by_user_.find(user);
    return it == by_user_.end() ? none : it->second;
  }

  /// Users that interacted with `item` among the given records (same label rule as the index).
  std::vector<std::size_t> users_in(const data::InteractionLog& log, std::span<const std::size_t> records,
                                    std::size_t item) const {
    std::vector<std::size_t> users;
    for (std::size_t r : records) {
      const data::Interaction& rec = log.records.at(r);
      if (rec.item != item || (positive_only_ && rec.label != 1)) continue;
      users.push_back(rec.user);
    }
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    return users;
  }

 private:
  static void insert_sorted(std::vector<std::size_t>& v, std::size_t x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) v.insert(it, x);
  }

  void add(std::span<const std::pair<std::size_t, std::size_t>> user_item) {
    for (auto [user, item] : user_item) {
      insert_sorted(by_item_[item], user);
      insert_sorted(by_user_[user], item);
    }
  }

  void add(const data::InteractionLog& log, std::span<const std::size_t> records) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t r : records) {
      const data::Interaction& rec = log.records.at(r);
      if (positive_only_ && rec.label != 1) continue;
      pairs.emplace_back(rec.user, rec.item);
    }
    std::sort(pairs.begin(), pairs.end(), [](auto a, auto b) { return std::tie(a.second, a.first) < std::tie(b.second, b.first); });
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    add(pairs);
  }

  std::map<std::size_t, std::vector<std::size_t>> by_item_;
  std::map<std::size_t, std::vector<std::size_t>> by_user_;
  bool positive_only_ = true;
};

/// `log_base` 0 means the natural logarithm.
struct SimilarityOptions {
  double log_base = 0.0;
};

namespace detail {

inline double user_weight(std::size_t item_count, const SimilarityOptions& opts) {
  double l = std::log1p(static_cast<double>(item_count));
  if (opts.log_base > 0.0) l /= std::log(opts.log_base);
  return 1.0 / l;
}

}  // namespace detail

/// Co-occurrence similarity with each shared user's vote damped by
/// 1 / log(1 + |I(a)|), normalized by sqrt(|U(i)| |U(j)|).
inline double similarity(const CooccurrenceIndex& index, std::size_t i, std::size_t j,
                         const SimilarityOptions& opts = {}) {
  if (i == j) throw Error("similarity of an item with itself");
  const auto& ui = index.users_of(i);
  const auto& uj = index.users_of(j);
  double total = 0.0;
  auto a = ui.begin(), b = uj.begin();
  while (a != ui.end() && b != uj.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      total += detail::user_weight(index.items_of(*a).size(), opts);
      ++a;
      ++b;
    }
  }
  return total / std::sqrt(static_cast<double>(ui.size()) * static_cast<double>(uj.size()));
}

/// Items eligible as neighbors.
class CandidateSet {
 public:
  CandidateSet() = default;
  explicit CandidateSet(std::span<const std::size_t> items) : items_(items.begin(), items.end()) {
    std::sort(items_.begin(), items_.end());
    items_.erase(std::unique(items_.begin(), items_.end()), items_.end());
  }
  bool contains(std::size_t item) const { return std::binary_search(items_.begin(), items_.end(), item); }
  const std::vector<std::size_t>& items() const { return items_; }

 private:
  std::vector<std::size_t> items_;
};

struct Neighbor {
  std::size_t item = 0;
  double sim = 0.0;
  double alpha = 0.0;
};

struct NeighborList {
  std::size_t item = 0;
  std::vector<Neighbor> entries;  // Sim descending, ties by ascending id
};

/// Top-K neighbors of an item whose interacting users are `users` (sorted,
/// unique). The item need not be in the index; it is never its own neighbor.
inline NeighborList neighbors_for_users(const CooccurrenceIndex& index, std::size_t item,
                                        std::span<const std::size_t> users, const CandidateSet& candidates,
                                        std::size_t k, const SimilarityOptions& opts = {}) {
  if (k < 1) throw Error("top-K needs K >= 1");
  NeighborList out;
  out.item = item;
  if (users.empty()) return out;
  std::map<std::size_t, double> votes;
  for (std::size_t a : users) {
    const auto& items = index.items_of(a);
    if (items.empty()) continue;
    const double w = detail::user_weight(items.size(), opts);
    for (std::size_t j : items) {
      if (j == item || !candidates.contains(j)) continue;
      votes[j] += w;
    }
  }
  for (auto [j, total] : votes) {
    const double sim =
        total / std::sqrt(static_cast<double>(users.size()) * static_cast<double>(index.users_of(j).size()));
    if (sim > 0.0) out.entries.push_back({j, sim, 0.0});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.sim != b.sim ? a.sim > b.sim : a.item < b.item;
  });
  if (out.entries.size() > k) out.entries.resize(k);
  double norm = 0.0;
  for (const Neighbor& n : out.entries) norm += n.sim;
  for (Neighbor& n : out.entries) n.alpha = n.sim / norm;
  return out;
}

/// Top-K indexed neighbors of an indexed item among `old_items`.
inline NeighborList top_k_neighbors(const CooccurrenceIndex& index, std::size_t item,
                                    std::span<const std::size_t> old_items, std::size_t k,
                                    const SimilarityOptions& opts = {}) {
  return neighbors_for_users(index, item, index.users_of(item), CandidateSet(old_items), k, opts);
}

/// Sum of alpha-weighted neighbor rows; nullopt for an empty list (caller picks the fallback).
inline std::optional<Tensor> base_embedding(const NeighborList& neighbors, const Tensor& item_table) {
  if (neighbors.entries.empty()) return std::nullopt;
  Tensor out(1, item_table.cols());
  for (const Neighbor& n : neighbors.entries) {
    if (n.item >= item_table.rows()) {
      throw IndexError("neighbor " + std::to_string(n.item) + " outside item table of " +
                       std::to_string(item_table.rows()) + " rows");
    }
    for (std::size_t c = 0; c < out.cols(); ++c) out[c] += n.alpha * item_table(n.item, c);
  }
  return out;
}

/// One line per list: `item<TAB>neighbor:sim:alpha,...` with raw ids.
inline std::string dump(std::span<const NeighborList> lists, const data::Vocabulary& items) {
  std::string out;
  char buf[64];
  for (const NeighborList& l : lists) {
    out += items.decode(l.item);
    out += '\t';
    for (std::size_t k = 0; k < l.entries.size(); ++k) {
      if (k) out += ',';
      out += items.decode(l.entries[k].item);
      std::snprintf(buf, sizeof(buf), ":%.17g", l.entries[k].sim);
      out += buf;
      std::snprintf(buf, sizeof(buf), ":%.17g", l.entries[k].alpha);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace cometa::beg
