#pragma once

#include "cometa/protocol.hpp"
#include "cometa/synth.hpp"

namespace testutil {

inline cometa::data::SyntheticConfig tiny_synth() {
  return {.users = 120, .old_items = 12, .new_items = 6, .latent_dim = 3, .old_count_min = 50, .old_count_max = 70,
          .new_count_min = 25, .new_count_max = 35};
}

inline cometa::data::SplitSpec tiny_split() { return {.n_old = 45, .n_new = 20, .k_fold = 4, .holdout = 10}; }

/// Small dimensions everywhere so full protocol runs take milliseconds.
inline cometa::protocol::ProtocolConfig tiny_protocol() {
  cometa::protocol::ProtocolConfig c;
  c.split = tiny_split();
  c.embedding_dim = 4;
  c.hidden = {16, 8};
  c.pretrain = {.epochs = 3, .lr = 5e-3, .batch_size = 64};
  c.warm = {.epochs = 1, .lr = 1e-2, .batch_size = 16};
  c.seg.minibatch = 4;
  c.seg.epochs = 2;
  c.seg.gen_hidden = {6};
  c.seg.top_k = 3;
  return c;
}

struct TinyWorld {
  cometa::data::InteractionLog log;
  cometa::data::SplitResult split;
  cometa::protocol::ProtocolConfig cfg;
  cometa::model::ModelParams backbone;

  explicit TinyWorld(std::uint64_t seed = 1)
      : log(cometa::data::synthesize(tiny_synth(), seed)),
        split(cometa::data::split(log, tiny_split())),
        cfg(tiny_protocol()),
        backbone(cometa::protocol::pretrain_backbone(log, split, cfg, seed)) {}
};

}  // namespace testutil
