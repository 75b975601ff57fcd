#pragma once

#include <memory>

#include "uatmc/data.hpp"
#include "uatmc/model.hpp"

namespace uatmc::testing {

struct World {
  data::SynthData data;
  data::InteractionTable split;
  model::ModelParams params;
  std::shared_ptr<const model::Content> content;
};

inline data::SynthConfig tiny_synth() {
  data::SynthConfig c;
  c.num_users = 120;
  c.num_items = 80;
  c.latent_dim = 4;
  c.dim_v = 6;
  c.dim_t = 6;
  c.min_user_interactions = 4;
  c.max_user_interactions = 10;
  c.unpopular_count = 25;
  c.unpopular_interactions = 5;
  return c;
}

inline World make_world(std::uint64_t seed, model::Kind kind = model::Kind::kConcat,
                        model::Fusion fusion = model::Fusion::kTanh, data::SynthConfig sc = tiny_synth(),
                        double init_std = 0.3) {
  World w;
  w.data = data::synth_generate(sc, seed);
  w.split = data::split_leave_one_out(w.data.table, seed + 1);
  model::ModelConfig mc;
  mc.kind = kind;
  mc.fusion = fusion;
  mc.dim = 6;
  mc.fuse_dim = 5;
  mc.init_std = init_std;
  w.params = model::init_params(mc, sc.num_users, sc.num_items, sc.dim_v, sc.dim_t, seed + 2);
  w.content = model::build_content(kind, w.split, w.data.visual, w.data.textual);
  return w;
}

}  // namespace uatmc::testing
