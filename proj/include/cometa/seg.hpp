#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cometa/beg.hpp"
#include "cometa/data.hpp"
#include "cometa/graph.hpp"
#include "cometa/model.hpp"
#include "cometa/optim.hpp"
#include "cometa/tensor.hpp"

namespace cometa::seg {

/// W_u (d x d), W_f ((m d) x d) and the generator MLP 2d -> hidden... -> d.
struct SegParams {
  Tensor w_u;
  Tensor w_f;
  std::vector<Tensor> gen_w;
  std::vector<Tensor> gen_b;

  bool operator==(const SegParams&) const = default;

  std::size_t dim() const { return w_u.cols(); }

  static constexpr double kOutputInit = 0.01;

  /// Projections and hidden layers ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the
  /// linear output layer starts small so early shifts stay near zero.
  static SegParams init(std::size_t d, std::size_t item_fields, std::span<const std::size_t> hidden,
                        std::uint64_t seed) {
    if (d < 1 || item_fields < 1) throw ConfigError("shift generator needs d >= 1 and at least one item field");
    std::mt19937_64 rng(seed);
    auto uniform = [&](std::size_t r, std::size_t c, double bound) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor t(r, c);
      for (double& v : t.values()) v = dist(rng);
      return t;
    };
    auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
    SegParams p;
    p.w_u = uniform(d, d, fan(d));
    p.w_f = uniform(item_fields * d, d, fan(item_fields * d));
    std::size_t in = 2 * d;
    for (std::size_t width : hidden) {
      if (width < 1) throw ConfigError("generator hidden widths must be positive");
      p.gen_w.push_back(uniform(in, width, fan(in)));
      p.gen_b.emplace_back(1, width);
      in = width;
    }
    p.gen_w.push_back(uniform(in, d, kOutputInit * fan(in)));
    p.gen_b.emplace_back(1, d);
    return p;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out{&w_u, &w_f};
    for (std::size_t k = 0; k < gen_w.size(); ++k) {
      out.push_back(&gen_w[k]);
      out.push_back(&gen_b[k]);
    }
    return out;
  }
  std::vector<const Tensor*> tensors() const {
    auto mut = const_cast<SegParams*>(this)->tensors();
    return {mut.begin(), mut.end()};
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out{"w_u", "w_f"};
    for (std::size_t k = 0; k < gen_w.size(); ++k) {
      out.push_back("gen/w" + std::to_string(k));
      out.push_back("gen/b" + std::to_string(k));
    }
    return out;
  }
};

inline std::uint64_t hash_params(const SegParams& p) {
  Fnv1a h;
  for (const Tensor* t : p.tensors()) h.update(*t);
  return h.digest();
}

enum class GradientOrder { full, first };

struct SegConfig {
  double eta = 1e-3;
  double beta = 0.1;
  std::size_t minibatch = 20;
  GradientOrder order = GradientOrder::full;
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t top_k = 8;
  bool positive_only = true;
  std::vector<std::size_t> gen_hidden{64, 64};
  std::size_t episodes_per_step = 1;

  void validate() const {
    if (!(eta >= 0.0)) throw ConfigError("inner step size must be non-negative");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (minibatch < 1) throw ConfigError("episode minibatch must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("generator learning rate must be positive");
    if (top_k < 1) throw ConfigError("top_k must be at least 1");
    if (episodes_per_step < 1) throw ConfigError("episodes_per_step must be at least 1");
  }
};

/// Graph leaves for SegParams, in tensors() order via all().
struct SegVars {
  ad::Var w_u, w_f;
  std::vector<ad::Var> gen_w, gen_b;

  SegVars(ad::Graph& g, const SegParams& p, bool trainable) {
    auto leaf = [&](const Tensor& t) { return trainable ? g.param(t) : g.constant(t); };
    w_u = leaf(p.w_u);
    w_f = leaf(p.w_f);
    for (std::size_t k = 0; k < p.gen_w.size(); ++k) {
      gen_w.push_back(leaf(p.gen_w[k]));
      gen_b.push_back(leaf(p.gen_b[k]));
    }
  }

  std::vector<ad::Var> all() const {
    std::vector<ad::Var> out{w_u, w_f};
    for (std::size_t k = 0; k < gen_w.size(); ++k) {
      out.push_back(gen_w[k]);
      out.push_back(gen_b[k]);
    }
    return out;
  }

  /// g_omega([h_u, h_f]): relu hidden layers, linear output.
  ad::Var generate(ad::Var h_u, ad::Var h_f) const {
    ad::Var h = ad::concat({h_u, h_f});
    for (std::size_t k = 0; k + 1 < gen_w.size(); ++k) h = ad::relu(ad::add(ad::matmul(h, gen_w[k]), gen_b[k]));
    return ad::add(ad::matmul(h, gen_w.back()), gen_b.back());
  }

  ad::Var shift(ad::Var mean_user, ad::Var attrs) const {
    return generate(ad::matmul(mean_user, w_u), ad::matmul(attrs, w_f));
  }
};

/// Mean of the users' ID-embedding rows, 1 x d.
inline Tensor mean_user_embedding(std::span<const std::size_t> users, const Tensor& user_table) {
  if (users.empty()) throw Error("no interacted users to pool; use the global user average");
  return model::mean_rows(user_table, users);
}

inline Tensor refined_user_repr(const Tensor& mean_vec, const SegParams& p) {
  ad::Graph g;
  return ad::matmul(g.constant(mean_vec), g.constant(p.w_u)).value();
}

inline Tensor refined_attr_repr(const Tensor& attrs, const SegParams& p) {
  if (attrs.cols() != p.w_f.rows()) {
    throw ShapeError("attribute vector has " + std::to_string(attrs.cols()) + " columns, W_f expects " +
                     std::to_string(p.w_f.rows()));
  }
  ad::Graph g;
  return ad::matmul(g.constant(attrs), g.constant(p.w_f)).value();
}

inline Tensor shift_embedding(const Tensor& h_u, const Tensor& h_f, const SegParams& p) {
  ad::Graph g;
  const SegVars s(g, p, false);
  return s.generate(g.constant(h_u), g.constant(h_f)).value();
}

/// v_SEG from the pooled user embedding and the item's concatenated attribute embeddings.
inline Tensor generate_shift(const SegParams& p, const Tensor& mean_user, const Tensor& attrs) {
  return shift_embedding(refined_user_repr(mean_user, p), refined_attr_repr(attrs, p), p);
}

/// One meta-training task: two disjoint record sets of a single item.
struct EpisodeBatchPair {
  std::size_t item = 0;
  std::vector<std::size_t> a;
  std::vector<std::size_t> b;
};

/// One episode per item with at least 2M records in `records`, D_a and D_b
/// drawn without replacement. Items ascending.
inline std::vector<EpisodeBatchPair> make_episodes(const data::InteractionLog& log,
                                                   std::span<const std::size_t> records, std::size_t m,
                                                   std::mt19937_64& rng) {
  std::map<std::size_t, std::vector<std::size_t>> by_item;
  for (std::size_t r : records) by_item[log.records.at(r).item].push_back(r);
  std::vector<EpisodeBatchPair> out;
  for (auto& [item, recs] : by_item) {
    if (recs.size() < 2 * m) continue;
    for (std::size_t s = 0; s < 2 * m; ++s) {
      std::uniform_int_distribution<std::size_t> pick(s, recs.size() - 1);
      std::swap(recs[s], recs[pick(rng)]);
    }
    out.push_back({item, {recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(m)},
                   {recs.begin() + static_cast<std::ptrdiff_t>(m), recs.begin() + static_cast<std::ptrdiff_t>(2 * m)}});
  }
  return out;
}

/// Frozen-backbone embedding columns around the item slot for a fixed pool of records.
class ContextCache {
 public:
  ContextCache(const model::ModelParams& p, const data::InteractionLog& log, std::span<const std::size_t> records) {
    if (records.empty()) return;
    const model::EmbeddingContext all = model::embed_around_item(p, model::make_batch(log, records));
    ctx_ = all;
    for (std::size_t k = 0; k < records.size(); ++k) row_.emplace(records[k], k);
  }

  model::EmbeddingContext gather(std::span<const std::size_t> records) const {
    if (records.empty()) throw Error("empty minibatch");
    model::EmbeddingContext out{Tensor(records.size(), ctx_.left.cols()), {}};
    if (!ctx_.right.empty()) out.right = Tensor(records.size(), ctx_.right.cols());
    for (std::size_t k = 0; k < records.size(); ++k) {
      auto it = row_.find(records[k]);
      if (it == row_.end()) throw IndexError("record " + std::to_string(records[k]) + " is not cached");
      out.left.set_row(k, ctx_.left.row_span(it->second));
      if (!ctx_.right.empty()) out.right.set_row(k, ctx_.right.row_span(it->second));
    }
    return out;
  }

 private:
  model::EmbeddingContext ctx_;
  std::unordered_map<std::size_t, std::size_t> row_;
};

/// What the generator sees of the world during training.
struct EpisodeSources {
  const data::InteractionLog& log;
  const beg::CooccurrenceIndex& index;
  const beg::CandidateSet& old_items;
  const model::GlobalAverages& averages;
  std::size_t top_k = 8;
  beg::SimilarityOptions similarity;
};

/// use_beg = false trains without a base embedding (v_BEG = 0); pin_user
/// replaces the pooled user embedding with the global user average.
struct SegVariant {
  bool use_beg = true;
  bool pin_user = false;
};

struct EpisodeInputs {
  model::EmbeddingContext ctx_a, ctx_b;
  std::vector<double> labels_a, labels_b;
  Tensor mean_user;  // 1 x d
  Tensor attrs;      // 1 x (m d)
  Tensor v_beg;      // 1 x d
};

/// Base embedding for an item whose interacting users are `users`; global item
/// average when there are no users or no positively similar candidates.
inline Tensor base_or_fallback(const model::ModelParams& p, const EpisodeSources& src, std::size_t item,
                               std::span<const std::size_t> users) {
  if (users.empty()) return src.averages.item;
  const beg::NeighborList nl = beg::neighbors_for_users(src.index, item, users, src.old_items, src.top_k, src.similarity);
  auto v = beg::base_embedding(nl, p.item_id);
  return v ? *v : src.averages.item;
}

inline Tensor pooled_users_or_fallback(const model::ModelParams& p, const EpisodeSources& src,
                                       std::span<const std::size_t> users, bool pin_user) {
  if (pin_user || users.empty()) return src.averages.user;
  return mean_user_embedding(users, p.user_id);
}

/// D_a's interacting users (per the index's label rule) stand in for the few
/// observed users of a new item, both for neighbor search and user pooling.
inline EpisodeInputs prepare_episode(const model::ModelParams& frozen, const ContextCache& cache,
                                     const EpisodeSources& src, const EpisodeBatchPair& ep, SegVariant variant) {
  EpisodeInputs in;
  in.ctx_a = cache.gather(ep.a);
  in.ctx_b = cache.gather(ep.b);
  for (std::size_t r : ep.a) in.labels_a.push_back(static_cast<double>(src.log.records.at(r).label));
  for (std::size_t r : ep.b) in.labels_b.push_back(static_cast<double>(src.log.records.at(r).label));
  const std::vector<std::size_t> users = src.index.users_in(src.log, ep.a, ep.item);
  in.mean_user = pooled_users_or_fallback(frozen, src, users, variant.pin_user);
  in.attrs = model::item_attribute_embeddings(frozen, src.log, ep.item);
  in.v_beg = variant.use_beg ? base_or_fallback(frozen, src, ep.item, users) : Tensor(1, frozen.schema.embedding_dim);
  return in;
}

struct EpisodeResult {
  double loss_a = 0.0;
  double loss_b = 0.0;
  double loss = 0.0;
  std::vector<Tensor> grads;  // parallel to SegParams::tensors()
  Tensor v_seg;
  Tensor v_seg_adapted;
};

/// Two-stage episode loss: loss_a with v_BEG + v_SEG on D_a, one gradient step
/// on v_SEG, loss_b with v_BEG + v_SEG' on D_b, mixed by beta. Gradients reach
/// only the generator parameters. With beg_as_param, v_BEG enters the graph as
/// a trainable leaf instead of a constant (for instrumentation).
inline EpisodeResult episode_loss(const model::ModelParams& frozen, const EpisodeInputs& in, const SegParams& p,
                                  const SegConfig& cfg, bool beg_as_param = false) {
  cfg.validate();
  if (in.labels_a.empty() || in.labels_b.empty()) throw Error("empty episode minibatch");
  const std::size_t d = frozen.schema.embedding_dim;
  if (p.dim() != d || in.v_beg.shape() != Shape{1, d} || in.mean_user.shape() != Shape{1, d}) {
    throw ShapeError("episode inputs do not match embedding dimension " + std::to_string(d));
  }
  ad::Graph g;
  const model::FrozenHead head(g, frozen);
  const SegVars s(g, p, true);
  const ad::Var v_seg = s.shift(g.constant(in.mean_user), g.constant(in.attrs));
  const ad::Var v_beg = beg_as_param ? g.param(in.v_beg) : g.constant(in.v_beg);

  auto predict = [&](const model::EmbeddingContext& ctx, ad::Var v) {
    std::vector<ad::Var> parts{g.constant(ctx.left), ad::broadcast(v, {ctx.left.rows(), d})};
    if (!ctx.right.empty()) parts.push_back(g.constant(ctx.right));
    return head(ad::concat(parts));
  };

  const ad::Var loss_a = ad::bce(predict(in.ctx_a, ad::add(v_beg, v_seg)), in.labels_a);
  const bool second_order = cfg.order == GradientOrder::full;
  ad::Var dv = g.grad(loss_a, std::vector<ad::Var>{v_seg}, second_order)[0];
  if (!second_order) dv = g.constant(dv.value());
  const ad::Var adapted = sgd_step(v_seg, dv, cfg.eta);
  const ad::Var loss_b = ad::bce(predict(in.ctx_b, ad::add(v_beg, adapted)), in.labels_b);
  const ad::Var loss = ad::add(ad::scale(loss_a, cfg.beta), ad::scale(loss_b, 1.0 - cfg.beta));

  EpisodeResult out;
  out.loss_a = loss_a.value()[0];
  out.loss_b = loss_b.value()[0];
  out.loss = loss.value()[0];
  for (const ad::Var& gv : g.grad(loss, s.all(), false)) out.grads.push_back(gv.value());
  out.v_seg = v_seg.value();
  out.v_seg_adapted = adapted.value();
  return out;
}

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double loss_a = 0.0;
  double loss_b = 0.0;
};

struct SegTrainResult {
  SegParams params;
  std::vector<EpochStats> curve;
};

/// Mean episode losses over the given episodes without updating anything.
inline EpochStats evaluate_episodes(const model::ModelParams& frozen, const ContextCache& cache,
                                    const EpisodeSources& src, std::span<const EpisodeBatchPair> episodes,
                                    const SegParams& p, const SegConfig& cfg, SegVariant variant) {
  EpochStats st;
  for (const EpisodeBatchPair& ep : episodes) {
    const EpisodeResult r = episode_loss(frozen, prepare_episode(frozen, cache, src, ep, variant), p, cfg);
    st.loss += r.loss;
    st.loss_a += r.loss_a;
    st.loss_b += r.loss_b;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, episodes.size()));
  st.loss /= n;
  st.loss_a /= n;
  st.loss_b /= n;
  return st;
}

/// Adam over episode losses of old items. The backbone is read-only.
inline SegTrainResult train_seg(const model::ModelParams& frozen, std::span<const std::size_t> module_records,
                                const EpisodeSources& src, const SegConfig& cfg, SegVariant variant,
                                std::uint64_t seed, const std::function<void(const EpochStats&)>& logger = {}) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  SegTrainResult out;
  out.params = SegParams::init(frozen.schema.embedding_dim, frozen.schema.item_fields.size(), cfg.gen_hidden, rng());
  if (cfg.epochs == 0) return out;

  const ContextCache cache(frozen, src.log, module_records);
  std::vector<Tensor*> tensors = out.params.tensors();
  AdamState adam = make_adam_state(tensors, {.lr = cfg.lr});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<EpisodeBatchPair> episodes = make_episodes(src.log, module_records, cfg.minibatch, rng);
    if (episodes.empty()) throw DataError("no old item has enough records for an episode");
    std::shuffle(episodes.begin(), episodes.end(), rng);
    EpochStats st;
    st.epoch = epoch;
    for (std::size_t start = 0; start < episodes.size(); start += cfg.episodes_per_step) {
      const std::size_t stop = std::min(episodes.size(), start + cfg.episodes_per_step);
      std::vector<Tensor> total;
      for (std::size_t e = start; e < stop; ++e) {
        EpisodeResult r = episode_loss(frozen, prepare_episode(frozen, cache, src, episodes[e], variant), out.params, cfg);
        st.loss += r.loss;
        st.loss_a += r.loss_a;
        st.loss_b += r.loss_b;
        if (total.empty()) {
          total = std::move(r.grads);
        } else {
          for (std::size_t k = 0; k < total.size(); ++k)
            for (std::size_t j = 0; j < total[k].size(); ++j) total[k][j] += r.grads[k][j];
        }
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (Tensor& t : total)
        for (double& v : t.values()) v *= scale;
      adam_step(tensors, total, adam);
    }
    const double n = static_cast<double>(episodes.size());
    st.loss /= n;
    st.loss_a /= n;
    st.loss_b /= n;
    out.curve.push_back(st);
    if (logger) logger(st);
  }
  return out;
}

}  // namespace cometa::seg
