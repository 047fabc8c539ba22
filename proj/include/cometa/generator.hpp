#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cometa/beg.hpp"
#include "cometa/model.hpp"
#include "cometa/seg.hpp"

namespace cometa {

enum class InitializerKind { random, global_average, attribute_only, cometa, cometa_no_beg, cometa_no_seg };

inline constexpr InitializerKind kAllKinds[] = {InitializerKind::random,        InitializerKind::global_average,
                                                InitializerKind::attribute_only, InitializerKind::cometa,
                                                InitializerKind::cometa_no_beg, InitializerKind::cometa_no_seg};

inline std::string to_string(InitializerKind k) {
  switch (k) {
    case InitializerKind::random: return "random";
    case InitializerKind::global_average: return "global_average";
    case InitializerKind::attribute_only: return "attribute_only";
    case InitializerKind::cometa: return "cometa";
    case InitializerKind::cometa_no_beg: return "cometa_no_beg";
    case InitializerKind::cometa_no_seg: return "cometa_no_seg";
  }
  return "?";
}

inline InitializerKind parse_kind(std::string_view s) {
  for (InitializerKind k : kAllKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown initializer kind '" + std::string(s) + "'");
}

/// Kinds that regenerate their embeddings from warm-a users before fine-tuning.
inline bool regenerates(InitializerKind k) {
  return k == InitializerKind::cometa || k == InitializerKind::cometa_no_beg || k == InitializerKind::cometa_no_seg;
}

/// The S-EG variant a kind was trained with; nullopt when the kind uses no generator.
inline std::optional<seg::SegVariant> seg_variant(InitializerKind k) {
  switch (k) {
    case InitializerKind::cometa: return seg::SegVariant{true, false};
    case InitializerKind::cometa_no_beg: return seg::SegVariant{false, false};
    case InitializerKind::attribute_only: return seg::SegVariant{false, true};
    default: return std::nullopt;
  }
}

/// Stable name for the trained generator a kind relies on.
inline std::string seg_variant_name(seg::SegVariant v) {
  if (v.pin_user) return v.use_beg ? "pinned_user" : "attribute_only";
  return v.use_beg ? "full" : "no_beg";
}

/// Read-only inputs to embedding generation. `seg` must be the generator
/// trained for the kind being generated.
struct GenerationContext {
  const model::ModelParams& model;
  const data::InteractionLog& log;
  const beg::CooccurrenceIndex& index;
  const beg::CandidateSet& old_items;
  const model::GlobalAverages& averages;
  const seg::SegParams* seg = nullptr;
  std::size_t top_k = 8;
  beg::SimilarityOptions similarity;

  seg::EpisodeSources sources() const { return {log, index, old_items, averages, top_k, similarity}; }
};

struct MetaParts {
  Tensor v_beg;  // zero when the kind has no base generator
  Tensor v_seg;  // zero when the kind has no shift generator
};

/// Components of the generated embedding for an item observed with `users`
/// (empty in the cold phase, which falls back to the global averages).
inline MetaParts meta_parts(const GenerationContext& ctx, InitializerKind kind, std::size_t item,
                            std::span<const std::size_t> users) {
  const std::size_t d = ctx.model.schema.embedding_dim;
  const seg::EpisodeSources src = ctx.sources();
  MetaParts parts{Tensor(1, d), Tensor(1, d)};
  const bool use_beg = kind == InitializerKind::cometa || kind == InitializerKind::cometa_no_seg;
  if (use_beg) parts.v_beg = seg::base_or_fallback(ctx.model, src, item, users);
  if (const auto variant = seg_variant(kind)) {
    if (!ctx.seg) throw Error("initializer '" + to_string(kind) + "' needs a trained shift generator");
    const Tensor pooled = seg::pooled_users_or_fallback(ctx.model, src, users, variant->pin_user);
    parts.v_seg = seg::generate_shift(*ctx.seg, pooled, model::item_attribute_embeddings(ctx.model, ctx.log, item));
  }
  return parts;
}

/// Initial ID embedding of a new item, 1 x d. `rng` is used by the random kind only.
inline Tensor meta_embedding(const GenerationContext& ctx, InitializerKind kind, std::size_t item,
                             std::span<const std::size_t> users, std::mt19937_64& rng) {
  const std::size_t d = ctx.model.schema.embedding_dim;
  switch (kind) {
    case InitializerKind::random: {
      std::uniform_real_distribution<double> dist(-model::ModelParams::kEmbeddingInit, model::ModelParams::kEmbeddingInit);
      Tensor v(1, d);
      for (double& x : v.values()) x = dist(rng);
      return v;
    }
    case InitializerKind::global_average:
      return ctx.averages.item;
    default: {
      const MetaParts p = meta_parts(ctx, kind, item, users);
      Tensor v(1, d);
      for (std::size_t c = 0; c < d; ++c) v[c] = p.v_beg[c] + p.v_seg[c];
      return v;
    }
  }
}

/// Cold phase: every new item's row replaced by its generated embedding
/// computed without interactions. Other rows and tensors are untouched.
inline model::ModelParams initialize_cold(const model::ModelParams& params, const GenerationContext& ctx,
                                          InitializerKind kind, std::span<const std::size_t> new_items,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> rows;
  for (std::size_t item : new_items) rows.push_back(meta_embedding(ctx, kind, item, {}, rng));
  model::ModelParams out = params;
  for (std::size_t k = 0; k < new_items.size(); ++k) out.item_id.set_row(new_items[k], rows[k].values());
  return out;
}

/// Warm phase: rows regenerated from each item's users in `ctx.index` (which
/// should include the warm interactions). Items the index has no users for
/// keep their current row.
inline model::ModelParams regenerate_warm(const model::ModelParams& params, const GenerationContext& ctx,
                                          InitializerKind kind, std::span<const std::size_t> new_items) {
  std::mt19937_64 unused(0);
  std::vector<std::optional<Tensor>> rows;
  for (std::size_t item : new_items) {
    if (!ctx.index.indexed(item)) {
      rows.emplace_back();
      continue;
    }
    rows.emplace_back(meta_embedding(ctx, kind, item, ctx.index.users_of(item), unused));
  }
  model::ModelParams out = params;
  for (std::size_t k = 0; k < new_items.size(); ++k)
    if (rows[k]) out.item_id.set_row(new_items[k], rows[k]->values());
  return out;
}

}  // namespace cometa
