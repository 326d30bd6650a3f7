#pragma once

#include "diffgoal/oracles.hpp"

namespace diffgoal {

/// Test-time knobs for value-filtered subgoal selection.
struct ControllerConfig {
  int num_candidates = 256;        // N
  int subgoal_steps = 25;          // T_sg
  float value_threshold = -30.0f;  // R-hat, reachability filter
  enum class Mode { Full, MaxValue, RandomSample };
  Mode mode = Mode::Full;

  void validate() const {
    if (num_candidates < 1) throw ConfigError("num_candidates must be >= 1");
    if (subgoal_steps < 1) throw ConfigError("subgoal_steps must be >= 1");
    if (!(value_threshold < 0.0f))
      throw ConfigError("value_threshold must be negative");
  }
};

struct SubgoalDecision {
  EntitySet subgoal;
  bool refreshed = false;       // false: held g' unchanged
  bool shortcut = false;        // value test replaced the pick with g
  bool fallback_empty = false;  // empty filtered set fell back to g
  int chosen_index = -1;        // candidate index, -1 when subgoal == g or held
  float v_state_goal = 0.0f;
  float v_reach_chosen = 0.0f;  // V(s, subgoal) of the chosen candidate
  float v_togo_chosen = 0.0f;   // V(subgoal, g)
};

/// One decision of the subgoal generation procedure. Every refresh draws N
/// candidates, filters them by V(s, cand) > threshold (mode Full), picks the
/// argmax of V(cand, g) (lowest index wins ties) and falls back to the goal
/// whenever the pick is no closer than the state itself.
SubgoalDecision select_subgoal(int t, const EntitySet& state,
                               const EntitySet& current_subgoal,
                               const EntitySet& goal,
                               const SubgoalGenerator& gen,
                               const ValueOracle& value,
                               const ControllerConfig& cfg, Rng& rng);

struct EpisodeResult {
  bool success_at_end = false;
  float episode_return = 0.0f;  // sum of sparse rewards against the true goal
  int steps = 0;
  int first_success_step = -1;
  std::vector<uint8_t> success_flags;
  struct SubgoalRecord {
    int t;
    int chosen_index;
    bool shortcut;
    bool fallback_empty;
    float v_reach, v_togo, v_state_goal;
    int modified_entities;  // vs. the state at emission, threshold 2*eps
  };
  std::vector<SubgoalRecord> subgoal_log;
};

/// Closed-loop episode: subgoal selection every subgoal_steps, policy acting
/// toward the current subgoal, rewards and success measured against the true
/// goal. gen == nullptr runs the flat baseline (subgoal == goal throughout).
EpisodeResult rollout(PushArena& env, const PolicyFn& policy,
                      const ValueOracle& value, const SubgoalGenerator* gen,
                      const ControllerConfig& cfg, int max_steps,
                      uint64_t seed);

}  // namespace diffgoal
