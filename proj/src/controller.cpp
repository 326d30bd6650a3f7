#include "diffgoal/controller.hpp"

#include <cmath>

#include "diffgoal/awr.hpp"

namespace diffgoal {

SubgoalDecision select_subgoal(int t, const EntitySet& state,
                               const EntitySet& current_subgoal,
                               const EntitySet& goal,
                               const SubgoalGenerator& gen,
                               const ValueOracle& value,
                               const ControllerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (t % cfg.subgoal_steps != 0) {
    SubgoalDecision d;
    d.subgoal = current_subgoal;
    d.refreshed = false;
    return d;
  }

  SubgoalDecision d;
  d.refreshed = true;

  const int n = cfg.num_candidates;
  std::vector<EntitySet> candidates = gen.propose(state, goal, n, rng);
  if (int(candidates.size()) != n)
    throw InputError("subgoal generator returned wrong candidate count");

  // batched value queries: N reachability, N goal-progress, 1 state-goal
  std::vector<EntitySet> s_tiled(n, state), g_tiled(n, goal);
  Eigen::VectorXf v_reach = value.value_pairs(s_tiled, candidates);
  Eigen::VectorXf v_togo = value.value_pairs(candidates, g_tiled);
  d.v_state_goal = value.value_pairs({state}, {goal})(0);
  if (!v_reach.allFinite() || !v_togo.allFinite() ||
      !std::isfinite(d.v_state_goal))
    throw NumericError("select_subgoal: value function returned non-finite");

  int chosen = -1;
  switch (cfg.mode) {
    case ControllerConfig::Mode::Full: {
      float best = -std::numeric_limits<float>::infinity();
      for (int i = 0; i < n; ++i) {
        if (v_reach(i) > cfg.value_threshold && v_togo(i) > best) {
          best = v_togo(i);
          chosen = i;
        }
      }
      if (chosen < 0) {  // empty filtered set: fall back to the goal
        d.subgoal = goal;
        d.fallback_empty = true;
        return d;
      }
      break;
    }
    case ControllerConfig::Mode::MaxValue: {
      float best = -std::numeric_limits<float>::infinity();
      for (int i = 0; i < n; ++i) {
        if (v_togo(i) > best) {
          best = v_togo(i);
          chosen = i;
        }
      }
      break;
    }
    case ControllerConfig::Mode::RandomSample:
      chosen = int(rng.uniform_int(uint64_t(n)));
      break;
  }

  d.v_reach_chosen = v_reach(chosen);
  d.v_togo_chosen = v_togo(chosen);
  if (v_togo(chosen) <= d.v_state_goal) {
    // the state is already closer to the goal than the pick: go directly
    d.subgoal = goal;
    d.shortcut = true;
    return d;
  }
  d.chosen_index = chosen;
  d.subgoal = candidates[chosen];
  return d;
}

EpisodeResult rollout(PushArena& env, const PolicyFn& policy,
                      const ValueOracle& value, const SubgoalGenerator* gen,
                      const ControllerConfig& cfg, int max_steps,
                      uint64_t seed) {
  if (max_steps < 1) throw InputError("rollout: max_steps must be >= 1");
  auto [state, goal] = env.reset(seed);
  Rng rng(Rng::splitmix(seed ^ 0xC0117ULL));

  EpisodeResult res;
  res.success_flags.reserve(max_steps);
  EntitySet subgoal = goal;

  for (int t = 0; t < max_steps; ++t) {
    if (gen) {
      SubgoalDecision d;
      try {
        d = select_subgoal(t, state, subgoal, goal, *gen, value, cfg, rng);
      } catch (const std::exception& e) {
        throw NumericError("rollout step " + std::to_string(t) + ": " +
                           e.what());
      }
      subgoal = d.subgoal;
      if (d.refreshed) {
        int modified = -1;
        if (same_identities(state, subgoal))
          modified = count_modified_entities(
              state, subgoal, 2.0f * env.config().success_eps);
        res.subgoal_log.push_back({t, d.chosen_index, d.shortcut,
                                   d.fallback_empty, d.v_reach_chosen,
                                   d.v_togo_chosen, d.v_state_goal, modified});
      }
    }
    Vec2 a = policy.act(state, subgoal);
    auto step = env.step(a);
    state = step.state;
    res.episode_return += step.reward;
    res.success_flags.push_back(step.success ? 1 : 0);
    if (step.success && res.first_success_step < 0) res.first_success_step = t;
    ++res.steps;
  }
  res.success_at_end = !res.success_flags.empty() && res.success_flags.back();
  return res;
}

}  // namespace diffgoal
