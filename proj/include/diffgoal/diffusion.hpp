#pragma once

#include "diffgoal/nets.hpp"
#include "diffgoal/samplers.hpp"

namespace diffgoal {

/// Forward-process schedule over a small number of steps. Index 0 is unused
/// (alpha_bar[0] = 1 by convention); steps run 1..num_steps.
struct DiffusionSchedule {
  int num_steps = 10;
  Eigen::VectorXf betas;       // size num_steps + 1
  Eigen::VectorXf alphas;      // 1 - beta
  Eigen::VectorXf alpha_bars;  // cumulative product

  static DiffusionSchedule cosine(int num_steps);
  void validate() const;
};

/// Per-channel affine normalization fitted on dataset entity features.
struct NormStats {
  Eigen::RowVectorXf mean, std;

  Mat normalize(const Mat& x) const {
    return ((x.rowwise() - mean).array().rowwise() / std.array()).matrix();
  }
  Mat denormalize(const Mat& x) const {
    return ((x.array().rowwise() * std.array()).matrix().rowwise() + mean);
  }
};

NormStats compute_norm_stats(const OfflineDataset& ds);

/// x_tau = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * noise, per entity,
/// identity channels included (they diffuse in the same continuous space).
Mat q_sample(const Mat& clean, int tau, const Mat& noise,
             const DiffusionSchedule& sched);

/// Projects sampled features back to a valid entity set: identities snap to
/// the state's identity one-hots with greedy one-to-one matching, positions
/// clamp to the arena.
EntitySet snap_to_valid(const Mat& features, const EntitySet& state);

/// Optional instrumentation of the reverse chain.
struct SampleTrace {
  std::vector<uint64_t> cond_hashes;  // conditioning tokens, hashed per step
  std::vector<int> taus;
};

/// Conditional denoising diffusion over subgoal entity sets.
struct DiffuserBundle {
  SetTransformerConfig net_cfg;
  DiffusionSchedule schedule;
  int subgoal_horizon = 50;  // K
  NormStats norm;
  ParamStore store;
  DenoiserNet net;
  Adam opt;
  int64_t steps = 0;

  static DiffuserBundle create(const SetTransformerConfig& net_cfg,
                               int num_steps, int K, const NormStats& norm,
                               uint64_t seed, float lr = 3e-4f,
                               float grad_clip = 20.0f);

  /// Noise-prediction MSE over noisy-subgoal tokens only; state and goal
  /// enter clean. Returns the loss.
  float train_step(const DiffuserBatch& batch, Rng& rng);

  /// N candidates by ancestral reverse diffusion conditioned on (state, goal).
  std::vector<EntitySet> sample(const EntitySet& state, const EntitySet& goal,
                                int n, Rng& rng, SampleTrace* trace = nullptr) const;

  /// Single net evaluation (exposed for equivariance and conditioning tests).
  Mat denoise_step(const Mat& noisy_norm, const Mat& state_norm,
                   const Mat& goal_norm, int batch, int entities,
                   const std::vector<int>& taus) const;
};

void save_diffuser(const DiffuserBundle& d, const std::string& path);
DiffuserBundle load_diffuser(const std::string& path);

}  // namespace diffgoal
