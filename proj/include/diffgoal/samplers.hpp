#pragma once

#include "diffgoal/dataset.hpp"

namespace diffgoal {

/// Batch for value-function training (hindsight-relabeled).
struct ValueBatch {
  EntityBatch state, next, goal;
  Eigen::MatrixXf actions;       // B x 2
  Eigen::VectorXf reward;        // 0 or -1, relabeled against goal
  Eigen::VectorXf done;          // 1{reward == 0}
  std::vector<uint8_t> goal_is_next;  // provenance: 1 if the 0.2 branch fired
};

/// Batch for policy extraction: goals uniform over the trajectory future.
struct PolicyBatch {
  EntityBatch state, goal;
  Eigen::MatrixXf actions;  // B x 2
};

/// Batch for the subgoal generator: (s, g, g~) with g~ = states[min(t+K, t_g)].
struct DiffuserBatch {
  EntityBatch state, goal, subgoal;
};

/// Uniform over transitions; goal from the future of the same trajectory with
/// probability 0.8, otherwise the next state. Rewards relabeled at sampling
/// time as r = 1{success(s', g)} - 1.
ValueBatch sample_value_batch(const OfflineDataset& ds, int batch_size, Rng& rng);

PolicyBatch sample_policy_batch(const OfflineDataset& ds, int batch_size, Rng& rng);

DiffuserBatch sample_diffuser_batch(const OfflineDataset& ds, int K,
                                    int batch_size, Rng& rng);

}  // namespace diffgoal
