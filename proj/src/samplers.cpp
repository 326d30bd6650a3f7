#include "diffgoal/samplers.hpp"

namespace diffgoal {

namespace {

struct Pick {
  const Trajectory* traj;
  int t;  // transition index, 0 <= t < T
};

// Uniform over all transitions (trajectories weighted by length).
Pick pick_transition(const OfflineDataset& ds, Rng& rng) {
  if (ds.total_transitions <= 0) throw InputError("sampler: empty dataset");
  int64_t u = int64_t(rng.uniform_int(uint64_t(ds.total_transitions)));
  for (const auto& traj : ds.trajectories) {
    if (u < traj.num_transitions()) return {&traj, int(u)};
    u -= traj.num_transitions();
  }
  throw DataError("sampler: transition index out of range");
}

EntityBatch to_batch(const std::vector<const EntitySet*>& sets) {
  EntityBatch b;
  b.batch = int(sets.size());
  b.entities = sets[0]->size();
  b.feat_dim = sets[0]->feature_dim();
  b.features.resize(b.batch * b.entities, b.feat_dim);
  for (int i = 0; i < b.batch; ++i)
    b.features.middleRows(i * b.entities, b.entities) = sets[i]->features();
  return b;
}

}  // namespace

ValueBatch sample_value_batch(const OfflineDataset& ds, int batch_size, Rng& rng) {
  ValueBatch out;
  std::vector<const EntitySet*> s, sn, g;
  out.actions.resize(batch_size, 2);
  out.reward.resize(batch_size);
  out.done.resize(batch_size);
  out.goal_is_next.resize(batch_size);

  const float eps = ds.env_config.success_eps;
  for (int i = 0; i < batch_size; ++i) {
    auto [traj, t] = pick_transition(ds, rng);
    const int T = traj->num_transitions();
    const EntitySet* goal;
    bool from_next;
    if (rng.uniform() < 0.8) {
      int tg = t + 1 + int(rng.uniform_int(uint64_t(T - t)));  // uniform (t, T]
      goal = &traj->states[tg];
      from_next = false;
    } else {
      goal = &traj->states[t + 1];
      from_next = true;
    }
    s.push_back(&traj->states[t]);
    sn.push_back(&traj->states[t + 1]);
    g.push_back(goal);
    out.actions.row(i) = traj->actions[t].transpose();
    bool reached = PushArena::success(traj->states[t + 1], *goal, eps);
    out.reward(i) = reached ? 0.0f : -1.0f;
    out.done(i) = reached ? 1.0f : 0.0f;
    out.goal_is_next[i] = from_next ? 1 : 0;
  }
  out.state = to_batch(s);
  out.next = to_batch(sn);
  out.goal = to_batch(g);
  return out;
}

PolicyBatch sample_policy_batch(const OfflineDataset& ds, int batch_size, Rng& rng) {
  PolicyBatch out;
  std::vector<const EntitySet*> s, g;
  out.actions.resize(batch_size, 2);
  for (int i = 0; i < batch_size; ++i) {
    auto [traj, t] = pick_transition(ds, rng);
    const int T = traj->num_transitions();
    int tg = t + 1 + int(rng.uniform_int(uint64_t(T - t)));
    s.push_back(&traj->states[t]);
    g.push_back(&traj->states[tg]);
    out.actions.row(i) = traj->actions[t].transpose();
  }
  out.state = to_batch(s);
  out.goal = to_batch(g);
  return out;
}

DiffuserBatch sample_diffuser_batch(const OfflineDataset& ds, int K,
                                    int batch_size, Rng& rng) {
  if (K < 1) throw InputError("sample_diffuser_batch: K must be >= 1");
  DiffuserBatch out;
  std::vector<const EntitySet*> s, g, sg;
  for (int i = 0; i < batch_size; ++i) {
    auto [traj, t] = pick_transition(ds, rng);
    const int T = traj->num_transitions();
    int tg = t + 1 + int(rng.uniform_int(uint64_t(T - t)));
    int tsub = std::min(t + K, tg);
    s.push_back(&traj->states[t]);
    g.push_back(&traj->states[tg]);
    sg.push_back(&traj->states[tsub]);
  }
  out.state = to_batch(s);
  out.goal = to_batch(g);
  out.subgoal = to_batch(sg);
  return out;
}

}  // namespace diffgoal
