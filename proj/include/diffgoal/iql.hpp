#pragma once

#include "diffgoal/nets.hpp"
#include "diffgoal/samplers.hpp"

namespace diffgoal {

struct IQLConfig {
  float discount = 0.99f;
  float target_smoothing = 0.005f;
  float expectile = 0.9f;
  float learning_rate = 3e-4f;
  int batch_size = 512;
  float grad_clip_norm = 20.0f;
  float bc_coefficient = 0.1f;

  void validate() const {
    if (!(expectile >= 0.5f && expectile < 1.0f))
      throw ConfigError("expectile must be in [0.5, 1)");
    if (!(discount > 0.0f && discount < 1.0f))
      throw ConfigError("discount must be in (0,1)");
    if (bc_coefficient < 0.0f) throw ConfigError("bc_coefficient must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }
};

/// Asymmetric squared loss |kappa - 1{u<0}| u^2.
inline float expectile_loss(float u, float kappa) {
  float w = std::abs(kappa - (u < 0.0f ? 1.0f : 0.0f));
  return w * u * u;
}

/// Goal-conditioned IQL agent: V, twin Q with EMA targets, and a
/// deterministic tanh policy extracted with DDPG+BC. All heads are
/// permutation-invariant pooled set transformers.
struct AgentBundle {
  SetTransformerConfig net_cfg;
  IQLConfig cfg;

  ParamStore v_store, q_store, q_target_store, pi_store;
  PooledNet v_net, q1_net, q2_net, q1_target, q2_target, pi_net;
  Adam v_opt, q_opt, pi_opt;
  int64_t steps = 0;

  static AgentBundle create(const SetTransformerConfig& net_cfg,
                            const IQLConfig& cfg, uint64_t seed);

  /// V regressed toward min of target twin Q under the expectile loss.
  float update_value(const ValueBatch& batch);
  /// Twin Q regressed to r + gamma * (1 - done) * V(s', g); EMA targets after.
  float update_q(const ValueBatch& batch);
  /// Policy loss: -min(Q1,Q2)(s, pi(s,g), g) / mean|Q|  +  alpha * ||pi - a||^2.
  float update_policy(const PolicyBatch& batch);

  /// Deterministic bounded action.
  Vec2 act(const EntitySet& state, const EntitySet& goal) const;

  /// Batched V(s, g); rows follow the input order.
  Eigen::VectorXf value(const EntityBatch& state, const EntityBatch& goal) const;
  float value1(const EntitySet& state, const EntitySet& goal) const;
};

void save_agent(const AgentBundle& agent, const std::string& path);
AgentBundle load_agent(const std::string& path);

}  // namespace diffgoal
