#include "diffgoal/env.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace diffgoal {

void EnvConfig::validate() const {
  if (num_objects < 0) throw ConfigError("num_objects must be >= 0");
  if (num_objects + 1 > id_dim)
    throw ConfigError("num_objects + 1 must be <= id_dim");
  if (!(action_scale > 0.0f && action_scale < 1.0f))
    throw ConfigError("action_scale must be in (0,1)");
  if (!(success_eps > 0.0f && success_eps < 1.0f))
    throw ConfigError("success_eps must be in (0,1)");
  if (agent_radius <= 0.0f || object_radius <= 0.0f)
    throw ConfigError("radii must be positive");
  if (max_episode_steps < 1) throw ConfigError("max_episode_steps must be >= 1");
}

namespace {

float entity_radius(const EnvConfig& cfg, const EntitySet& s, int m) {
  return s.is_agent(m) ? cfg.agent_radius : cfg.object_radius;
}

Vec2 clamp01(const Vec2& p) {
  return Vec2(std::clamp(p.x(), 0.0f, 1.0f), std::clamp(p.y(), 0.0f, 1.0f));
}

// Pushes entity `pushed` out of contact with a disc at `center`, along the
// separating direction. Degenerate (concentric) case pushes along +x so the
// result is deterministic.
void separate(EntitySet& s, int pushed, const Vec2& center, float contact) {
  Vec2 d = s.position(pushed) - center;
  float dist = d.norm();
  Vec2 dir = dist > 1e-9f ? Vec2(d / dist) : Vec2(1.0f, 0.0f);
  s.set_position(pushed, center + dir * contact);
}

}  // namespace

EntitySet PushArena::step_dynamics(const EnvConfig& cfg, const EntitySet& state,
                                   const Vec2& action) {
  if (!action.allFinite()) throw InputError("step: non-finite action");
  if (std::abs(action.x()) > 1.0f + 1e-6f || std::abs(action.y()) > 1.0f + 1e-6f)
    throw InputError("step: action outside [-1,1]^2");

  EntitySet next = state;
  int agent = next.agent_row();
  if (agent < 0) throw InputError("step: state has no agent");

  Vec2 a(std::clamp(action.x(), -1.0f, 1.0f), std::clamp(action.y(), -1.0f, 1.0f));
  const Vec2 start = next.position(agent);
  const Vec2 delta = a * cfg.action_scale;

  // Object rows in ascending identity order (deterministic resolution order).
  std::vector<int> rows_by_id;
  for (int id = 1; id < cfg.id_dim; ++id) {
    int r = next.find_identity(id);
    if (r >= 0) rows_by_id.push_back(r);
  }

  // The agent sweeps along its displacement in substeps so objects are pushed
  // ahead of it rather than teleported behind when a single step would carry
  // the agent past an object's center.
  const float substep = 0.5f * std::min(cfg.agent_radius, cfg.object_radius);
  const int n_sub = std::max(1, int(std::ceil(delta.norm() / substep)));
  const float agent_contact = cfg.agent_radius + cfg.object_radius;

  for (int k = 1; k <= n_sub; ++k) {
    next.set_position(agent, clamp01(start + (float(k) / float(n_sub)) * delta));

    // Resolve overlaps breadth-first in displacement order: the agent first,
    // then every object it displaced, then objects those displaced, etc.
    std::deque<int> frontier{agent};
    int guard = 0;
    while (!frontier.empty() && guard++ < 64 * (next.size() + 1)) {
      int pusher = frontier.front();
      frontier.pop_front();
      float pr = entity_radius(cfg, next, pusher);
      for (int r : rows_by_id) {
        if (r == pusher) continue;
        float contact = pr + cfg.object_radius;
        Vec2 gap = next.position(r) - next.position(pusher);
        if (gap.squaredNorm() < contact * contact - 1e-12f) {
          separate(next, r, next.position(pusher), contact);
          // A chain push can land r back on the (immovable) agent.
          if (pusher != agent &&
              (next.position(r) - next.position(agent)).squaredNorm() <
                  agent_contact * agent_contact - 1e-12f) {
            separate(next, r, next.position(agent), agent_contact);
          }
          frontier.push_back(r);
        }
      }
    }
  }

  for (int m = 0; m < next.size(); ++m)
    next.set_position(m, clamp01(next.position(m)));
  return next;
}

bool PushArena::success(const EntitySet& state, const EntitySet& goal,
                        float eps) {
  if (!same_identities(state, goal))
    throw InputError("success: identity sets differ");
  for (int m = 0; m < state.size(); ++m) {
    int id = state.identity_index(m);
    if (id == 0) continue;  // agent pose never participates
    int gm = goal.find_identity(id);
    if ((state.position(m) - goal.position(gm)).norm() > eps) return false;
  }
  return true;
}

EntitySet PushArena::sample_configuration(const EnvConfig& cfg,
                                          const std::vector<int>& object_ids,
                                          Rng& rng) {
  const int n = int(object_ids.size()) + 1;
  EntitySet s(n, cfg.id_dim);
  s.set_identity(0, 0);
  for (size_t i = 0; i < object_ids.size(); ++i)
    s.set_identity(int(i) + 1, object_ids[i]);

  constexpr int kMaxAttempts = 1000;
  for (int m = 0; m < n; ++m) {
    float r = m == 0 ? cfg.agent_radius : cfg.object_radius;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Vec2 p(float(rng.uniform(r, 1.0 - r)), float(rng.uniform(r, 1.0 - r)));
      placed = true;
      for (int k = 0; k < m; ++k) {
        float contact = r + entity_radius(cfg, s, k);
        if ((p - s.position(k)).squaredNorm() < contact * contact) {
          placed = false;
          break;
        }
      }
      if (placed) s.set_position(m, p);
    }
    if (!placed)
      throw ConfigError("reset: arena too crowded to place entities");
  }
  return s;
}

std::pair<EntitySet, EntitySet> PushArena::reset(uint64_t seed) {
  Rng rng(seed);

  // Object identities drawn without replacement from {1..id_dim-1}.
  std::vector<int> pool;
  for (int id = 1; id < cfg_.id_dim; ++id) pool.push_back(id);
  std::vector<int> ids;
  for (int i = 0; i < cfg_.num_objects; ++i) {
    int j = int(rng.uniform_int(pool.size()));
    ids.push_back(pool[j]);
    pool.erase(pool.begin() + j);
  }

  state_ = sample_configuration(cfg_, ids, rng);
  goal_ = sample_configuration(cfg_, ids, rng);
  steps_ = 0;
  live_ = true;
  return {state_, goal_};
}

PushArena::StepResult PushArena::step(const Vec2& action) {
  if (!live_) throw InputError("step before reset");
  state_ = step_dynamics(cfg_, state_, action);
  ++steps_;
  StepResult out;
  out.state = state_;
  out.success = success(state_, goal_, cfg_.success_eps);
  out.reward = out.success ? 0.0f : -1.0f;
  return out;
}

}  // namespace diffgoal
