// Shared test fixtures: the discrete chain dataset used for the value-oracle
// checks and the two-mode synthetic subgoal distribution.
#pragma once

#include <vector>

#include "diffgoal/diffusion.hpp"

namespace diffgoal::testing {

/// Deterministic chain MDP embedded in entity space: one object moves over
/// `num_states` grid cells along x, the agent parks at a fixed pose. Actions
/// are +-1 cell encoded as (+-1, 0). Random-walk trajectories cover the chain.
struct ChainFixture {
  int num_states = 20;
  EnvConfig env;
  OfflineDataset dataset;

  float cell_x(int i) const {
    return (float(i) + 0.5f) / float(num_states);
  }

  EntitySet make_state(int i) const {
    EntitySet s(2, env.id_dim);
    s.set_identity(0, 0);
    s.set_position(0, Vec2(0.5f, 0.9f));
    s.set_identity(1, 1);
    s.set_position(1, Vec2(cell_x(i), 0.5f));
    return s;
  }

  static ChainFixture build(int num_states, int num_episodes, int episode_len,
                            uint64_t seed) {
    ChainFixture f;
    f.num_states = num_states;
    f.env.num_objects = 1;
    f.env.id_dim = 3;
    // success iff the object sits in the same cell as the goal
    f.env.success_eps = 0.4f / float(num_states);
    f.env.action_scale = 0.5f;  // unused by the synthetic transitions
    f.dataset.env_config = f.env;

    Rng rng(seed);
    for (int ep = 0; ep < num_episodes; ++ep) {
      Trajectory traj;
      traj.env_config = f.env;
      traj.seed = int64_t(ep);
      int pos = int(rng.uniform_int(uint64_t(num_states)));
      traj.states.push_back(f.make_state(pos));
      for (int t = 0; t < episode_len; ++t) {
        int dir = rng.uniform() < 0.5 ? -1 : 1;
        int next = std::clamp(pos + dir, 0, num_states - 1);
        dir = next - pos;  // 0 at the walls
        traj.actions.emplace_back(float(dir), 0.0f);
        pos = next;
        traj.states.push_back(f.make_state(pos));
      }
      f.dataset.trajectories.push_back(std::move(traj));
    }
    f.dataset.recount();
    return f;
  }

  /// Exact optimal value for the sparse-reward chain.
  static double dp_value(int d, double gamma) {
    return -(1.0 - std::pow(gamma, double(d))) / (1.0 - gamma);
  }
};

/// Two-mode synthetic subgoal distribution: from a fixed state, either
/// object A or object B moves to its goal position; the diffuser should
/// sample both modes while a deterministic regressor averages them.
struct BimodalFixture {
  int id_dim = 4;
  float jitter = 0.01f;
  Vec2 agent{0.5f, 0.15f};
  Vec2 a_start{0.25f, 0.5f}, b_start{0.75f, 0.5f};
  Vec2 a_goal{0.35f, 0.85f}, b_goal{0.65f, 0.85f};

  EntitySet make(const Vec2& a, const Vec2& b, const Vec2& ag, Rng& rng,
                 bool jittered) const {
    auto j = [&](const Vec2& p) {
      if (!jittered) return p;
      return Vec2(p.x() + float(rng.normal()) * jitter,
                  p.y() + float(rng.normal()) * jitter);
    };
    EntitySet s(3, id_dim);
    s.set_identity(0, 0);
    s.set_position(0, j(ag));
    s.set_identity(1, 1);
    s.set_position(1, j(a));
    s.set_identity(2, 2);
    s.set_position(2, j(b));
    return s;
  }

  EntitySet state(Rng& rng, bool jittered = true) const {
    return make(a_start, b_start, agent, rng, jittered);
  }
  EntitySet goal(Rng& rng, bool jittered = true) const {
    return make(a_goal, b_goal, agent, rng, jittered);
  }
  EntitySet subgoal_mode_a(Rng& rng, bool jittered = true) const {
    return make(a_goal, b_start, agent, rng, jittered);
  }
  EntitySet subgoal_mode_b(Rng& rng, bool jittered = true) const {
    return make(a_start, b_goal, agent, rng, jittered);
  }

  DiffuserBatch batch(int batch_size, Rng& rng) const {
    std::vector<EntitySet> s, g, sub;
    for (int i = 0; i < batch_size; ++i) {
      s.push_back(state(rng));
      g.push_back(goal(rng));
      if (rng.uniform() < 0.5)
        sub.push_back(subgoal_mode_a(rng));
      else
        sub.push_back(subgoal_mode_b(rng));
    }
    DiffuserBatch b;
    b.state = EntityBatch::from_sets(s);
    b.goal = EntityBatch::from_sets(g);
    b.subgoal = EntityBatch::from_sets(sub);
    return b;
  }

  NormStats norm_stats(Rng& rng) const {
    // moment-match over a large draw of the three set families
    const int n = 2000;
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(2 + id_dim);
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(2 + id_dim);
    int64_t count = 0;
    for (int i = 0; i < n; ++i) {
      for (const EntitySet& s :
           {state(rng), goal(rng), subgoal_mode_a(rng), subgoal_mode_b(rng)}) {
        sum += s.features().colwise().sum().cast<double>();
        sq += s.features().array().square().colwise().sum().matrix().cast<double>();
        count += s.size();
      }
    }
    NormStats st;
    st.mean = (sum / double(count)).cast<float>();
    Eigen::RowVectorXd var =
        (sq / double(count)) - (sum / double(count)).array().square().matrix();
    st.std = var.cwiseMax(1e-8).cwiseSqrt().cast<float>();
    return st;
  }

  /// 0 = mode A, 1 = mode B, by nearest clean subgoal pattern over object
  /// positions.
  int assign_mode(const EntitySet& sample) const {
    float da = mode_distance(sample, true);
    float db = mode_distance(sample, false);
    return da <= db ? 0 : 1;
  }

  float mode_distance(const EntitySet& sample, bool mode_a) const {
    Vec2 a_target = mode_a ? a_goal : a_start;
    Vec2 b_target = mode_a ? b_start : b_goal;
    int ia = sample.find_identity(1);
    int ib = sample.find_identity(2);
    float d2 = (sample.position(ia) - a_target).squaredNorm() +
               (sample.position(ib) - b_target).squaredNorm();
    return std::sqrt(d2);
  }
};

}  // namespace diffgoal::testing
