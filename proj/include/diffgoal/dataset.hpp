#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diffgoal/env.hpp"

namespace diffgoal {

/// One recorded episode. states.size() == actions.size() + 1 and replaying
/// the actions from states[0] through PushArena::step_dynamics reproduces
/// states exactly.
struct Trajectory {
  std::vector<EntitySet> states;
  std::vector<Vec2> actions;
  int64_t seed = 0;
  EnvConfig env_config;

  int num_transitions() const { return int(actions.size()); }
};

struct CollectorConfig {
  float interaction_radius = 0.30f;
  int retarget_interval = 25;
  int episode_length = 100;
  int num_transitions = 200000;

  void validate(const EnvConfig& env) const;
};

/// Immutable after load; safe for concurrent read.
struct OfflineDataset {
  std::vector<Trajectory> trajectories;
  std::map<std::string, std::string> metadata;
  EnvConfig env_config;
  int64_t total_transitions = 0;

  void recount() {
    total_transitions = 0;
    for (const auto& t : trajectories) total_transitions += t.num_transitions();
  }
};

/// Scripted random-interaction collector: every retarget_interval steps a
/// target object is chosen uniformly; actions are uniform random displacements
/// resampled until the agent's next position lies within interaction_radius of
/// the target (bounded attempts, closest-so-far fallback).
OfflineDataset collect(const EnvConfig& env_cfg, const CollectorConfig& col,
                       uint64_t seed);

/// Self-describing binary container, little-endian f32 arrays with explicit
/// length prefixes. Round-trips bit-exact.
void save_dataset(const OfflineDataset& ds, const std::string& path);
OfflineDataset load_dataset(const std::string& path);

/// Replays every trajectory through step_dynamics and checks bit-exact
/// state reproduction. Throws DataError on mismatch.
void verify_replay(const OfflineDataset& ds);

/// FNV-1a 64-bit over a file's bytes; fingerprint for determinism checks.
uint64_t fnv1a_file(const std::string& path);
uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h = 1469598103934665603ULL);

}  // namespace diffgoal
