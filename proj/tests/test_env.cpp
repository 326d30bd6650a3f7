#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "diffgoal/env.hpp"

using namespace diffgoal;

namespace {
EnvConfig small_cfg(int objects = 2) {
  EnvConfig cfg;
  cfg.num_objects = objects;
  cfg.id_dim = 7;
  cfg.agent_radius = 0.03f;
  cfg.object_radius = 0.03f;
  cfg.action_scale = 0.1f;
  cfg.success_eps = 0.05f;
  return cfg;
}

// Reference check used by the permutation test: success holds iff some
// row permutation of the state aligns identities and positions within eps.
bool success_by_permutation_search(const EntitySet& state, const EntitySet& goal,
                                   float eps) {
  std::vector<int> perm(state.size());
  for (int i = 0; i < state.size(); ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end());
  do {
    const EntitySet p = state.permuted(perm);
    bool ok = true;
    for (int m = 0; m < state.size() && ok; ++m) {
      if (p.identity_index(m) != goal.identity_index(m)) ok = false;
      else if (p.identity_index(m) != 0 &&
               (p.position(m) - goal.position(m)).norm() > eps)
        ok = false;
    }
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}
}  // namespace

TEST_CASE("reset is deterministic and honors identity pool") {
  PushArena env(small_cfg(3));
  auto [s1, g1] = env.reset(7);
  auto [s2, g2] = env.reset(7);
  CHECK(s1 == s2);
  CHECK(g1 == g2);
  s1.validate();
  g1.validate();
  CHECK(same_identities(s1, g1));

  // three distinct object identities drawn from the 6 available
  std::vector<int> ids;
  for (int m = 0; m < s1.size(); ++m)
    if (!s1.is_agent(m)) ids.push_back(s1.identity_index(m));
  CHECK(ids.size() == 3);
  std::sort(ids.begin(), ids.end());
  CHECK(std::unique(ids.begin(), ids.end()) == ids.end());
  for (int id : ids) CHECK((id >= 1 && id <= 6));

  // over many seeds every identity in the pool appears
  std::vector<bool> seen(7, false);
  for (uint64_t seed = 0; seed < 200; ++seed) {
    auto [s, g] = env.reset(seed);
    for (int m = 0; m < s.size(); ++m) seen[s.identity_index(m)] = true;
  }
  for (int id = 0; id < 7; ++id) CHECK(seen[id]);
}

TEST_CASE("reset with zero objects yields agent-only sets") {
  PushArena env(small_cfg(0));
  auto [s, g] = env.reset(3);
  CHECK(s.size() == 1);
  CHECK(g.size() == 1);
  CHECK(s.is_agent(0));
}

TEST_CASE("crowded arena raises a configuration error") {
  EnvConfig cfg = small_cfg(5);
  cfg.object_radius = 0.45f;  // five discs of this size cannot coexist
  PushArena env(cfg);
  CHECK_THROWS_AS(env.reset(1), ConfigError);
}

TEST_CASE("identity action leaves the state unchanged") {
  PushArena env(small_cfg());
  auto [s, g] = env.reset(11);
  auto res = env.step(Vec2(0, 0));
  CHECK(res.state == s);
  CHECK(res.reward == -1.0f);
  CHECK_FALSE(res.success);
}

TEST_CASE("reward is 0 iff at goal") {
  EnvConfig cfg = small_cfg();
  PushArena env(cfg);
  env.reset(5);
  EntitySet goal = env.goal();
  CHECK(PushArena::success(goal, goal, cfg.success_eps));

  // one object displaced by 2*eps fails
  EntitySet off = goal;
  for (int m = 0; m < off.size(); ++m) {
    if (!off.is_agent(m)) {
      off.set_position(m, off.position(m) + Vec2(2.0f * cfg.success_eps, 0));
      break;
    }
  }
  CHECK_FALSE(PushArena::success(off, goal, cfg.success_eps));
}

TEST_CASE("disc separation matches the closed-form oracle") {
  EnvConfig cfg = small_cfg(1);
  cfg.action_scale = 0.1f;
  EntitySet s(2, cfg.id_dim);
  s.set_identity(0, 0);
  s.set_position(0, Vec2(0.50f, 0.50f));
  s.set_identity(1, 3);
  s.set_position(1, Vec2(0.55f, 0.50f));

  EntitySet next = PushArena::step_dynamics(cfg, s, Vec2(1.0f, 0.0f));
  CHECK(next.position(0).x() == doctest::Approx(0.60f));
  CHECK(next.position(0).y() == doctest::Approx(0.50f));
  // object pushed to contact distance: agent_x + (0.03 + 0.03) = 0.66
  CHECK(next.position(1).x() == doctest::Approx(0.66f));
  CHECK(next.position(1).y() == doctest::Approx(0.50f));
}

TEST_CASE("success matches identity even when list order differs") {
  EnvConfig cfg = small_cfg(2);
  PushArena env(cfg);
  auto [s, g] = env.reset(17);
  std::vector<int> perm = {2, 0, 1};
  EntitySet gp = g.permuted(perm);
  EntitySet state_at_goal = g;  // object positions equal to goal
  CHECK(PushArena::success(state_at_goal, gp, cfg.success_eps) ==
        success_by_permutation_search(state_at_goal, gp, cfg.success_eps));
  CHECK(PushArena::success(state_at_goal, gp, cfg.success_eps));
}

TEST_CASE("success requires identical identity multisets") {
  EnvConfig cfg = small_cfg(1);
  EntitySet a(2, cfg.id_dim), b(2, cfg.id_dim);
  a.set_identity(0, 0);
  a.set_identity(1, 2);
  b.set_identity(0, 0);
  b.set_identity(1, 3);
  CHECK_THROWS_AS(PushArena::success(a, b, 0.05f), InputError);
}

TEST_CASE("invalid actions are rejected") {
  PushArena env(small_cfg());
  env.reset(0);
  CHECK_THROWS_AS(env.step(Vec2(std::nanf(""), 0.0f)), InputError);
  CHECK_THROWS_AS(env.step(Vec2(1.5f, 0.0f)), InputError);
}

TEST_CASE("property: determinism, containment, reward dichotomy") {
  EnvConfig cfg = small_cfg(3);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    PushArena env1(cfg), env2(cfg);
    env1.reset(seed);
    env2.reset(seed);
    Rng rng(seed * 31 + 1);
    for (int t = 0; t < 50; ++t) {
      Vec2 a(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)));
      auto r1 = env1.step(a);
      auto r2 = env2.step(a);
      CHECK(r1.state == r2.state);
      CHECK(r1.state.features().leftCols(2).minCoeff() >= 0.0f);
      CHECK(r1.state.features().leftCols(2).maxCoeff() <= 1.0f);
      CHECK((r1.reward == 0.0f || r1.reward == -1.0f));
      CHECK((r1.reward == 0.0f) == r1.success);
      CHECK(r1.success ==
            PushArena::success(r1.state, env1.goal(), cfg.success_eps));
    }
  }
}

TEST_CASE("property: locality of single pushes") {
  // Objects beyond agent_radius + object_radius + action_scale from the
  // agent's pre-step position stay put. Checked on configurations whose
  // objects are mutually separated enough that one step cannot chain.
  EnvConfig cfg = small_cfg(3);
  PushArena env(cfg);
  float bound = cfg.agent_radius + cfg.object_radius + cfg.action_scale;
  int checked = 0;
  for (uint64_t seed = 100; seed < 160; ++seed) {
    auto [s, g] = env.reset(seed);
    bool separated = true;
    for (int i = 0; i < s.size(); ++i)
      for (int j = i + 1; j < s.size(); ++j)
        if (!s.is_agent(i) && !s.is_agent(j) &&
            (s.position(i) - s.position(j)).norm() <
                2 * cfg.object_radius + 2 * cfg.action_scale)
          separated = false;
    if (!separated) continue;
    ++checked;
    Vec2 agent_pre = s.position(s.agent_row());
    Rng rng(seed);
    Vec2 a(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)));
    EntitySet next = PushArena::step_dynamics(cfg, s, a);
    for (int m = 0; m < s.size(); ++m) {
      if (s.is_agent(m)) continue;
      if ((s.position(m) - agent_pre).norm() > bound)
        CHECK(next.position(m) == s.position(m));
    }
  }
  CHECK(checked > 5);
}

TEST_CASE("property: permuting the entity list permutes the next state") {
  EnvConfig cfg = small_cfg(3);
  PushArena env(cfg);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto [s, g] = env.reset(seed);
    Rng rng(seed + 5);
    Vec2 a(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)));
    std::vector<int> perm = {3, 1, 0, 2};
    EntitySet sp = s.permuted(perm);
    EntitySet n1 = PushArena::step_dynamics(cfg, s, a);
    EntitySet n2 = PushArena::step_dynamics(cfg, sp, a);
    CHECK(n2 == n1.permuted(perm));
  }
}
