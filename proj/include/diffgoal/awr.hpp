#pragma once

#include "diffgoal/oracles.hpp"

namespace diffgoal {

/// Symmetric mean nearest-neighbor squared distance over full per-entity
/// feature vectors. Zero iff the sets coincide as point multisets.
float chamfer_distance(const EntitySet& a, const EntitySet& b);

/// Modified-entity sparsity metric: non-agent entities whose position moved
/// more than `threshold`, matched by identity.
int count_modified_entities(const EntitySet& state, const EntitySet& subgoal,
                            float threshold);

struct AWRConfig {
  float temperature = 3.0f;  // beta
  float weight_clip = 100.0f;
  float learning_rate = 3e-4f;
  float grad_clip_norm = 20.0f;

  void validate() const {
    if (temperature < 0.0f) throw ConfigError("temperature must be >= 0");
    if (weight_clip <= 0.0f) throw ConfigError("weight_clip must be > 0");
  }
};

/// Deterministic transformer subgoal generator trained with
/// advantage-weighted regression under a Chamfer loss; the diffusion model's
/// comparison point.
struct AWRGeneratorBundle {
  SetTransformerConfig net_cfg;
  AWRConfig cfg;
  NormStats norm;
  ParamStore store;
  SetToSetNet net;
  Adam opt;
  int64_t steps = 0;

  static AWRGeneratorBundle create(const SetTransformerConfig& net_cfg,
                                   const AWRConfig& cfg, const NormStats& norm,
                                   uint64_t seed);

  /// Weighted Chamfer regression toward g~ with
  /// w = clip(exp(beta * (V(g~, g) - V(s, g))), weight_clip). The value
  /// oracle stays frozen.
  float train_step(const DiffuserBatch& batch, const ValueOracle& value);

  /// Deterministic subgoal prediction, projected to a valid entity set.
  EntitySet predict(const EntitySet& state, const EntitySet& goal) const;
  /// Raw (denormalized) feature prediction before snapping.
  Mat predict_features(const EntitySet& state, const EntitySet& goal) const;
};

void save_awr(const AWRGeneratorBundle& a, const std::string& path);
AWRGeneratorBundle load_awr(const std::string& path);

}  // namespace diffgoal
