#pragma once

#include "diffgoal/entity.hpp"
#include "diffgoal/rng.hpp"

namespace diffgoal {

struct EnvConfig {
  int num_objects = 2;
  int id_dim = 7;  // identity space; index 0 is the agent, 1..id_dim-1 objects
  float agent_radius = 0.035f;
  float object_radius = 0.045f;
  float action_scale = 0.10f;   // max per-step displacement
  float success_eps = 0.05f;    // per-entity goal threshold
  int max_episode_steps = 300;

  void validate() const;
  int num_entities() const { return num_objects + 1; }
};

/// Deterministic 2-D multi-entity pushing arena on [0,1]^2. The agent disc
/// displaces object discs quasi-statically (no momentum, no rotation);
/// object-object overlaps are resolved recursively in displacement order with
/// ties broken by ascending identity index. Reward is 0 at the goal and -1
/// otherwise, and episodes never terminate on success.
class PushArena {
 public:
  explicit PushArena(const EnvConfig& cfg) : cfg_(cfg) { cfg.validate(); }

  struct StepResult {
    EntitySet state;
    float reward = -1.0f;
    bool success = false;
  };

  /// Seeded episode initialisation. Returns (state, goal): same identities,
  /// independently sampled non-overlapping configurations.
  std::pair<EntitySet, EntitySet> reset(uint64_t seed);

  StepResult step(const Vec2& action);

  const EntitySet& state() const { return state_; }
  const EntitySet& goal() const { return goal_; }
  const EnvConfig& config() const { return cfg_; }
  int steps_taken() const { return steps_; }

  /// Pure transition function; used by step() and by trajectory replay.
  static EntitySet step_dynamics(const EnvConfig& cfg, const EntitySet& state,
                                 const Vec2& action);

  /// True iff every non-agent entity is within eps (Euclidean) of the goal
  /// entity with the same identity. Matching is by identity, never by order.
  static bool success(const EntitySet& state, const EntitySet& goal, float eps);

  /// Samples a valid non-overlapping configuration of the given identities.
  static EntitySet sample_configuration(const EnvConfig& cfg,
                                        const std::vector<int>& object_ids,
                                        Rng& rng);

 private:
  EnvConfig cfg_;
  EntitySet state_;
  EntitySet goal_;
  int steps_ = 0;
  bool live_ = false;
};

}  // namespace diffgoal
