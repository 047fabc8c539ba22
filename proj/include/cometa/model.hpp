#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cometa/bce.hpp"
#include "cometa/data.hpp"
#include "cometa/graph.hpp"
#include "cometa/optim.hpp"
#include "cometa/tensor.hpp"

namespace cometa::model {

struct FieldSpec {
  std::string name;
  std::size_t vocab = 1;

  bool operator==(const FieldSpec&) const = default;
};

/// Shapes of everything the backbone learns.
struct FeatureSchema {
  std::size_t embedding_dim = 16;
  std::size_t user_vocab = 1;
  std::size_t item_vocab = 1;
  std::vector<FieldSpec> user_fields;
  std::vector<FieldSpec> item_fields;
  std::vector<std::size_t> hidden{64, 64, 64};

  bool operator==(const FeatureSchema&) const = default;

  /// Width of the concatenated embedding [u, Z_u, v, Z_v].
  std::size_t input_width() const { return (user_fields.size() + item_fields.size() + 2) * embedding_dim; }

  void validate() const {
    if (embedding_dim < 1) throw ConfigError("embedding dimension must be at least 1");
    if (user_vocab < 1 || item_vocab < 1) throw ConfigError("id vocabularies must be non-empty");
    std::vector<std::string> names;
    for (const auto* fields : {&user_fields, &item_fields}) {
      for (const auto& f : *fields) {
        if (f.vocab < 1) throw ConfigError("field '" + f.name + "' has an empty vocabulary");
        names.push_back(f.name);
      }
    }
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
      throw ConfigError("field names must be unique");
    }
    for (std::size_t h : hidden)
      if (h < 1) throw ConfigError("hidden widths must be positive");
  }
};

inline void to_json(nlohmann::json& j, const FieldSpec& f) { j = {{"name", f.name}, {"vocab", f.vocab}}; }
inline void from_json(const nlohmann::json& j, FieldSpec& f) {
  j.at("name").get_to(f.name);
  j.at("vocab").get_to(f.vocab);
}
inline void to_json(nlohmann::json& j, const FeatureSchema& s) {
  j = {{"embedding_dim", s.embedding_dim}, {"user_vocab", s.user_vocab}, {"item_vocab", s.item_vocab},
       {"user_fields", s.user_fields},     {"item_fields", s.item_fields}, {"hidden", s.hidden}};
}
inline void from_json(const nlohmann::json& j, FeatureSchema& s) {
  j.at("embedding_dim").get_to(s.embedding_dim);
  j.at("user_vocab").get_to(s.user_vocab);
  j.at("item_vocab").get_to(s.item_vocab);
  j.at("user_fields").get_to(s.user_fields);
  j.at("item_fields").get_to(s.item_fields);
  j.at("hidden").get_to(s.hidden);
}

inline FeatureSchema schema_for(const data::InteractionLog& log, std::size_t embedding_dim,
                                std::vector<std::size_t> hidden = {64, 64, 64}) {
  FeatureSchema s;
  s.embedding_dim = embedding_dim;
  s.user_vocab = std::max<std::size_t>(1, log.users.size());
  s.item_vocab = std::max<std::size_t>(1, log.items.size());
  for (const auto& f : log.user_fields) s.user_fields.push_back({f.name, std::max<std::size_t>(1, f.vocab.size())});
  for (const auto& f : log.item_fields) s.item_fields.push_back({f.name, std::max<std::size_t>(1, f.vocab.size())});
  s.hidden = std::move(hidden);
  s.validate();
  return s;
}

/// Embedding tables plus MLP and prediction-layer weights. Row-vector
/// convention: a layer computes x * W + b.
struct ModelParams {
  FeatureSchema schema;
  Tensor user_id;
  Tensor item_id;
  std::vector<Tensor> user_attr;
  std::vector<Tensor> item_attr;
  std::vector<Tensor> hidden_w;
  std::vector<Tensor> hidden_b;
  Tensor out_w;
  Tensor out_b;

  bool operator==(const ModelParams&) const = default;

  /// Embeddings ~ U(-0.01, 0.01); layer weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0.
  static ModelParams init(const FeatureSchema& schema, std::uint64_t seed) {
    schema.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&](std::size_t r, std::size_t c, double bound) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor t(r, c);
      for (double& v : t.values()) v = dist(rng);
      return t;
    };
    const std::size_t d = schema.embedding_dim;
    ModelParams p;
    p.schema = schema;
    p.user_id = uniform(schema.user_vocab, d, kEmbeddingInit);
    p.item_id = uniform(schema.item_vocab, d, kEmbeddingInit);
    for (const auto& f : schema.user_fields) p.user_attr.push_back(uniform(f.vocab, d, kEmbeddingInit));
    for (const auto& f : schema.item_fields) p.item_attr.push_back(uniform(f.vocab, d, kEmbeddingInit));
    std::size_t fan_in = schema.input_width();
    for (std::size_t width : schema.hidden) {
      p.hidden_w.push_back(uniform(fan_in, width, 1.0 / std::sqrt(static_cast<double>(fan_in))));
      p.hidden_b.emplace_back(1, width);
      fan_in = width;
    }
    p.out_w = uniform(fan_in, 1, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    p.out_b = Tensor(1, 1);
    return p;
  }

  static constexpr double kEmbeddingInit = 0.01;

  /// All tensors in a fixed order; names() is parallel.
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out{&user_id, &item_id};
    for (auto& t : user_attr) out.push_back(&t);
    for (auto& t : item_attr) out.push_back(&t);
    for (std::size_t k = 0; k < hidden_w.size(); ++k) {
      out.push_back(&hidden_w[k]);
      out.push_back(&hidden_b[k]);
    }
    out.push_back(&out_w);
    out.push_back(&out_b);
    return out;
  }
  std::vector<const Tensor*> tensors() const {
    auto mut = const_cast<ModelParams*>(this)->tensors();
    return {mut.begin(), mut.end()};
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out{"user_id", "item_id"};
    for (const auto& f : schema.user_fields) out.push_back("user_attr/" + f.name);
    for (const auto& f : schema.item_fields) out.push_back("item_attr/" + f.name);
    for (std::size_t k = 0; k < hidden_w.size(); ++k) {
      out.push_back("mlp/w" + std::to_string(k));
      out.push_back("mlp/b" + std::to_string(k));
    }
    out.push_back("out/w");
    out.push_back("out/b");
    return out;
  }
};

inline std::uint64_t hash_params(const ModelParams& p) {
  Fnv1a h;
  for (const Tensor* t : p.tensors()) h.update(*t);
  return h.digest();
}

/// Hash of everything except the item-ID table: MLP, prediction layer, user and attribute tables.
inline std::uint64_t hash_non_item_params(const ModelParams& p) {
  Fnv1a h;
  const auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k)
    if (ts[k] != &p.item_id) h.update(*ts[k]);
  return h.digest();
}

/// Per-sample feature indices for one minibatch. Attribute poolings have one
/// row per sample. `item_override`, when set, replaces the item-ID embedding rows.
struct SampleBatch {
  std::vector<std::size_t> users;
  std::vector<std::size_t> items;
  std::vector<std::shared_ptr<const ad::Pooling>> user_attrs;
  std::vector<std::shared_ptr<const ad::Pooling>> item_attrs;
  std::vector<double> labels;
  std::optional<Tensor> item_override;

  std::size_t size() const { return labels.size(); }
};

inline SampleBatch make_batch(const data::InteractionLog& log, std::span<const std::size_t> records) {
  SampleBatch b;
  std::vector<ad::Pooling> ua(log.user_fields.size()), ia(log.item_fields.size());
  for (std::size_t r : records) {
    const data::Interaction& rec = log.records.at(r);
    b.users.push_back(rec.user);
    b.items.push_back(rec.item);
    b.labels.push_back(static_cast<double>(rec.label));
    for (std::size_t f = 0; f < ua.size(); ++f) ua[f].add_mean(log.user_fields[f].values[rec.user]);
    for (std::size_t f = 0; f < ia.size(); ++f) ia[f].add_mean(log.item_fields[f].values[rec.item]);
  }
  for (auto& p : ua) b.user_attrs.push_back(std::make_shared<const ad::Pooling>(std::move(p)));
  for (auto& p : ia) b.item_attrs.push_back(std::make_shared<const ad::Pooling>(std::move(p)));
  return b;
}

enum class Trainable { none, all, item_id_only };

/// Model parameters as graph leaves. vars() follows ModelParams::tensors() order.
struct BoundModel {
  ad::Var user_id, item_id;
  std::vector<ad::Var> user_attr, item_attr, hidden_w, hidden_b;
  ad::Var out_w, out_b;

  std::vector<ad::Var> vars() const {
    std::vector<ad::Var> out{user_id, item_id};
    out.insert(out.end(), user_attr.begin(), user_attr.end());
    out.insert(out.end(), item_attr.begin(), item_attr.end());
    for (std::size_t k = 0; k < hidden_w.size(); ++k) {
      out.push_back(hidden_w[k]);
      out.push_back(hidden_b[k]);
    }
    out.push_back(out_w);
    out.push_back(out_b);
    return out;
  }
};

inline BoundModel bind(ad::Graph& g, const ModelParams& p, Trainable trainable) {
  const bool all = trainable == Trainable::all;
  auto leaf = [&](const Tensor& t, bool train) { return train ? g.param(t) : g.constant(t); };
  BoundModel m;
  m.user_id = leaf(p.user_id, all);
  m.item_id = leaf(p.item_id, all || trainable == Trainable::item_id_only);
  for (const auto& t : p.user_attr) m.user_attr.push_back(leaf(t, all));
  for (const auto& t : p.item_attr) m.item_attr.push_back(leaf(t, all));
  for (std::size_t k = 0; k < p.hidden_w.size(); ++k) {
    m.hidden_w.push_back(leaf(p.hidden_w[k], all));
    m.hidden_b.push_back(leaf(p.hidden_b[k], all));
  }
  m.out_w = leaf(p.out_w, all);
  m.out_b = leaf(p.out_b, all);
  return m;
}

namespace detail {

inline void check_indices(std::span<const std::size_t> ids, std::size_t vocab, const std::string& field) {
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw IndexError("field '" + field + "': index " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
}

inline std::shared_ptr<const ad::Pooling> one_hot(std::span<const std::size_t> ids) {
  auto p = std::make_shared<ad::Pooling>();
  for (std::size_t id : ids) p->add_single(id);
  return p;
}

}  // namespace detail

/// Concatenated embedding E = [u, Z_u, v, Z_v], batch x (n + m + 2) d.
/// `item_override` (batch x d), when given, takes the place of the v slot.
inline ad::Var embed(const BoundModel& m, const FeatureSchema& schema, const SampleBatch& batch,
                     std::optional<ad::Var> item_override = std::nullopt) {
  const std::size_t n = batch.size();
  if (n == 0) throw Error("empty batch");
  if (batch.users.size() != n || batch.items.size() != n || batch.user_attrs.size() != schema.user_fields.size() ||
      batch.item_attrs.size() != schema.item_fields.size()) {
    throw ShapeError("batch arity does not match the feature schema");
  }
  detail::check_indices(batch.users, schema.user_vocab, "user_id");
  detail::check_indices(batch.items, schema.item_vocab, "item_id");
  auto check_pool = [&](const ad::Pooling& p, const FieldSpec& f) {
    if (p.rows() != n) throw ShapeError("field '" + f.name + "' pooling has " + std::to_string(p.rows()) + " rows");
    detail::check_indices(p.indices, f.vocab, f.name);
  };
  for (std::size_t f = 0; f < schema.user_fields.size(); ++f) check_pool(*batch.user_attrs[f], schema.user_fields[f]);
  for (std::size_t f = 0; f < schema.item_fields.size(); ++f) check_pool(*batch.item_attrs[f], schema.item_fields[f]);

  std::vector<ad::Var> parts;
  parts.push_back(ad::pool(m.user_id, detail::one_hot(batch.users)));
  for (std::size_t f = 0; f < m.user_attr.size(); ++f) parts.push_back(ad::pool(m.user_attr[f], batch.user_attrs[f]));
  if (item_override) {
    if (item_override->shape() != Shape{n, schema.embedding_dim}) {
      throw ShapeError("item override is " + item_override->shape().str() + ", expected " +
                       Shape{n, schema.embedding_dim}.str());
    }
    parts.push_back(*item_override);
  } else {
    parts.push_back(ad::pool(m.item_id, detail::one_hot(batch.items)));
  }
  for (std::size_t f = 0; f < m.item_attr.size(); ++f) parts.push_back(ad::pool(m.item_attr[f], batch.item_attrs[f]));
  return ad::concat(parts);
}

/// MLP and prediction layer applied to a concatenated embedding, batch x 1.
inline ad::Var apply_head(std::span<const ad::Var> hidden_w, std::span<const ad::Var> hidden_b, ad::Var out_w,
                          ad::Var out_b, ad::Var e) {
  ad::Var h = e;
  for (std::size_t k = 0; k < hidden_w.size(); ++k) h = ad::relu(ad::add(ad::matmul(h, hidden_w[k]), hidden_b[k]));
  return ad::sigmoid(ad::add(ad::matmul(h, out_w), out_b));
}

/// The head's weights bound as graph constants.
struct FrozenHead {
  std::vector<ad::Var> hidden_w, hidden_b;
  ad::Var out_w, out_b;

  FrozenHead(ad::Graph& g, const ModelParams& p) {
    for (std::size_t k = 0; k < p.hidden_w.size(); ++k) {
      hidden_w.push_back(g.constant(p.hidden_w[k]));
      hidden_b.push_back(g.constant(p.hidden_b[k]));
    }
    out_w = g.constant(p.out_w);
    out_b = g.constant(p.out_b);
  }

  ad::Var operator()(ad::Var e) const { return apply_head(hidden_w, hidden_b, out_w, out_b, e); }
};

/// Uses batch.item_override as a constant when no graph override is passed.
inline ad::Var predictions(const BoundModel& m, const FeatureSchema& schema, const SampleBatch& batch,
                           std::optional<ad::Var> item_override = std::nullopt) {
  ad::Graph& g = *m.out_w.graph();
  if (!item_override && batch.item_override) item_override = g.constant(*batch.item_override);
  return apply_head(m.hidden_w, m.hidden_b, m.out_w, m.out_b, embed(m, schema, batch, item_override));
}

inline Tensor embed_batch(const ModelParams& p, const SampleBatch& batch) {
  ad::Graph g;
  const BoundModel m = bind(g, p, Trainable::none);
  std::optional<ad::Var> override;
  if (batch.item_override) override = g.constant(*batch.item_override);
  return embed(m, p.schema, batch, override).value();
}

/// The columns of E on either side of the item-ID slot: [u, Z_u] and [Z_v].
/// `right` is empty when items have no attribute fields.
struct EmbeddingContext {
  Tensor left;
  Tensor right;
};

inline EmbeddingContext embed_around_item(const ModelParams& p, const SampleBatch& batch) {
  const Tensor e = embed_batch(p, batch);
  const std::size_t d = p.schema.embedding_dim;
  const std::size_t left_cols = (1 + p.schema.user_fields.size()) * d;
  const std::size_t right_cols = e.cols() - left_cols - d;
  EmbeddingContext out{Tensor(e.rows(), left_cols), {}};
  if (right_cols > 0) out.right = Tensor(e.rows(), right_cols);
  for (std::size_t r = 0; r < e.rows(); ++r) {
    const auto row = e.row_span(r);
    std::copy_n(row.begin(), left_cols, out.left.row_span(r).begin());
    if (right_cols > 0) std::copy_n(row.begin() + left_cols + d, right_cols, out.right.row_span(r).begin());
  }
  return out;
}

/// Click probabilities, batch x 1.
inline Tensor predict(const ModelParams& p, const SampleBatch& batch) {
  ad::Graph g;
  const BoundModel m = bind(g, p, Trainable::none);
  return predictions(m, p.schema, batch).value();
}

inline double bce_loss(std::span<const double> predictions, std::span<const double> labels) {
  for (double y : labels)
    if (y != 0.0 && y != 1.0) throw DataError("labels must be 0 or 1");
  return binary_cross_entropy(predictions, labels);
}

struct TrainConfig {
  std::size_t epochs = 1;
  double lr = 1e-3;
  std::size_t batch_size = 256;
};

using EpochLogger = std::function<void(std::size_t epoch, double mean_loss)>;

namespace detail {

/// Shuffled minibatch passes; `step` receives each batch's record ids and returns its loss.
template <typename Step>
void run_epochs(std::span<const std::size_t> records, const TrainConfig& cfg, std::uint64_t seed,
                const EpochLogger& logger, Step&& step) {
  if (records.empty()) throw Error("empty training set");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(records.begin(), records.end());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> chunk(order.data() + start, stop - start);
      total += step(chunk) * static_cast<double>(chunk.size());
    }
    if (logger) logger(epoch, total / static_cast<double>(order.size()));
  }
}

}  // namespace detail

/// Adam over every parameter on shuffled minibatches of `records`.
inline ModelParams pretrain(ModelParams params, const data::InteractionLog& log, std::span<const std::size_t> records,
                            const TrainConfig& cfg, std::uint64_t seed, const EpochLogger& logger = {}) {
  const std::vector<Tensor*> tensors = params.tensors();
  AdamState adam = make_adam_state(tensors, {.lr = cfg.lr});
  detail::run_epochs(records, cfg, seed, logger, [&](std::span<const std::size_t> chunk) {
    const SampleBatch batch = make_batch(log, chunk);
    ad::Graph g;
    const BoundModel m = bind(g, params, Trainable::all);
    const ad::Var loss = ad::bce(predictions(m, params.schema, batch), batch.labels);
    const std::vector<ad::Var> vars = m.vars();
    const std::vector<ad::Var> grads = g.grad(loss, vars, false);
    std::vector<Tensor> gv;
    gv.reserve(grads.size());
    for (const ad::Var& v : grads) gv.push_back(v.value());
    adam_step(tensors, gv, adam);
    return loss.value()[0];
  });
  return params;
}

/// Fine-tunes only the listed item-ID rows; every other tensor and row is left
/// bit-identical.
inline ModelParams update_item_embeddings_only(ModelParams params, const data::InteractionLog& log,
                                               std::span<const std::size_t> records,
                                               std::span<const std::size_t> trainable_items, const TrainConfig& cfg,
                                               std::uint64_t seed, const EpochLogger& logger = {}) {
  std::vector<char> allowed(params.schema.item_vocab, 0);
  for (std::size_t i : trainable_items) {
    detail::check_indices(std::span<const std::size_t>(&i, 1), params.schema.item_vocab, "item_id");
    allowed[i] = 1;
  }
  Tensor* table = &params.item_id;
  AdamState adam = make_adam_state(std::span<Tensor* const>(&table, 1), {.lr = cfg.lr});
  detail::run_epochs(records, cfg, seed, logger, [&](std::span<const std::size_t> chunk) {
    const SampleBatch batch = make_batch(log, chunk);
    ad::Graph g;
    const BoundModel m = bind(g, params, Trainable::item_id_only);
    const ad::Var loss = ad::bce(predictions(m, params.schema, batch), batch.labels);
    const ad::GradientMap grads = g.backward(loss);
    if (grads.size() != 1 || grads.begin()->first != m.item_id.id()) {
      throw Error("item-only update produced gradients for frozen parameters");
    }
    Tensor grad = grads.begin()->second;
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      if (allowed[r]) continue;
      for (double& v : grad.row_span(r)) v = 0.0;
    }
    adam_step(std::span<Tensor* const>(&table, 1), std::span<const Tensor>(&grad, 1), adam);
    return loss.value()[0];
  });
  return params;
}

/// Mean old-item ID embedding and mean user ID embedding, used when a new item
/// has no interactions to draw on.
struct GlobalAverages {
  Tensor item;  // 1 x d
  Tensor user;  // 1 x d
};

inline Tensor mean_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error("mean of no rows");
  Tensor out(1, table.cols());
  for (std::size_t r : rows) {
    if (r >= table.rows()) throw IndexError("row " + std::to_string(r) + " outside table");
    for (std::size_t j = 0; j < table.cols(); ++j) out[j] += table(r, j);
  }
  for (double& v : out.values()) v /= static_cast<double>(rows.size());
  return out;
}

inline GlobalAverages global_averages(const ModelParams& p, std::span<const std::size_t> old_items) {
  std::vector<std::size_t> all_users(p.user_id.rows());
  for (std::size_t u = 0; u < all_users.size(); ++u) all_users[u] = u;
  return {mean_rows(p.item_id, old_items), mean_rows(p.user_id, all_users)};
}

/// Concatenated attribute embeddings [Z^1 .. Z^m] of one item, 1 x (m d).
inline Tensor item_attribute_embeddings(const ModelParams& p, const data::InteractionLog& log, std::size_t item) {
  const std::size_t d = p.schema.embedding_dim;
  const std::size_t m = p.item_attr.size();
  if (m == 0) throw ShapeError("items have no attribute fields");
  if (log.item_fields.size() != m) throw ShapeError("log and model disagree on item attribute fields");
  Tensor out(1, m * d);
  for (std::size_t f = 0; f < m; ++f) {
    const auto& values = log.item_fields[f].values.at(item);
    if (values.empty()) continue;
    const double w = 1.0 / static_cast<double>(values.size());
    for (std::size_t v : values) {
      if (v >= p.item_attr[f].rows()) throw IndexError("attribute value outside vocabulary");
      for (std::size_t j = 0; j < d; ++j) out[f * d + j] += w * p.item_attr[f](v, j);
    }
  }
  return out;
}

}  // namespace cometa::model
