#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffgoal/iql.hpp"
#include "helpers.hpp"

using namespace diffgoal;
using diffgoal::testing::ChainFixture;

namespace {

SetTransformerConfig tiny_net(int id_dim) {
  SetTransformerConfig cfg;
  cfg.attention_dim = 16;
  cfg.num_heads = 4;
  cfg.hidden_dim = 32;
  cfg.num_layers = 1;
  cfg.cond_dim = 8;
  cfg.feature_dim = 2 + id_dim;
  return cfg;
}

IQLConfig fast_iql() {
  IQLConfig cfg;
  cfg.batch_size = 64;
  cfg.learning_rate = 1e-3f;
  return cfg;
}

}  // namespace

TEST_CASE("expectile loss hand values") {
  CHECK(expectile_loss(1.0f, 0.9f) == doctest::Approx(0.9f));
  CHECK(expectile_loss(-1.0f, 0.9f) == doctest::Approx(0.1f));
  for (float u : {-2.0f, -0.3f, 0.0f, 0.7f, 1.5f})
    CHECK(expectile_loss(u, 0.5f) == doctest::Approx(0.5f * u * u));
}

TEST_CASE("value update has a fixed point where targets equal V") {
  auto agent = AgentBundle::create(tiny_net(3), fast_iql(), 5);
  Rng rng(9);
  auto fx = ChainFixture::build(6, 4, 10, 3);
  auto batch = sample_value_batch(fx.dataset, 8, rng);

  // target identical to the current V output => zero loss, zero gradients
  Tape t;
  int v = agent.v_net.forward(t, batch.state, batch.goal, -1);
  Mat target = t.val(v);
  int loss = t.expectile_to(v, target, agent.cfg.expectile);
  CHECK(t.val(loss)(0, 0) == 0.0f);
  t.backward(loss);
  for (const auto& p : agent.v_store.all()) CHECK(p->g.norm() == 0.0f);
}

TEST_CASE("single-transition dataset: V and Q converge to the relabeled 0") {
  // one transition; every sampled goal equals s', so r = 0 with done = 1 and
  // both Q and V must settle at 0
  auto fx = ChainFixture::build(6, 1, 1, 11);
  IQLConfig cfg = fast_iql();
  cfg.target_smoothing = 0.05f;
  auto agent = AgentBundle::create(tiny_net(3), cfg, 7);
  Rng rng(13);
  for (int i = 0; i < 900; ++i) {
    auto batch = sample_value_batch(fx.dataset, 16, rng);
    agent.update_q(batch);
    agent.update_value(batch);
  }
  const auto& traj = fx.dataset.trajectories[0];
  float v = agent.value1(traj.states[0], traj.states[1]);
  CHECK(std::abs(v) < 1e-2f);
}

TEST_CASE("kappa = 0.5 reproduces mean regression") {
  // alternating targets +-c around 0.4: expectile 0.5 must find the mean,
  // matching the least-squares oracle
  Rng rng(17);
  ParamStore ps;
  Param* x = ps.add("x", 1, 1, Init::Zero, rng);
  Adam opt(0.01f, 0.0f);
  for (int i = 0; i < 4000; ++i) {
    Mat target(1, 1);
    target(0, 0) = 0.4f + ((i % 2 == 0) ? 0.9f : -0.9f);
    Tape t;
    int loss = t.expectile_to(t.param(x), target, 0.5f);
    t.backward(loss);
    opt.step(ps);
  }
  CHECK(x->v(0, 0) == doctest::Approx(0.4f).epsilon(0.05));
}

TEST_CASE("tau = 1 makes targets equal online after one q update") {
  auto fx = ChainFixture::build(6, 2, 10, 19);
  IQLConfig cfg = fast_iql();
  cfg.target_smoothing = 1.0f;
  auto agent = AgentBundle::create(tiny_net(3), cfg, 3);
  Rng rng(21);
  auto batch = sample_value_batch(fx.dataset, 8, rng);
  agent.update_q(batch);
  for (size_t i = 0; i < agent.q_store.all().size(); ++i)
    CHECK(agent.q_target_store.all()[i]->v == agent.q_store.all()[i]->v);
}

TEST_CASE("huge BC coefficient clones the batch actions") {
  auto fx = ChainFixture::build(6, 3, 12, 23);
  IQLConfig cfg = fast_iql();
  cfg.bc_coefficient = 1000.0f;
  auto agent = AgentBundle::create(tiny_net(3), cfg, 29);
  Rng rng(31);
  auto batch = sample_policy_batch(fx.dataset, 16, rng);
  // chain actions are +-1 which tanh cannot reach; rescale into range
  batch.actions *= 0.6f;
  for (int i = 0; i < 1500; ++i) agent.update_policy(batch);

  Tape t;
  int out = agent.pi_net.forward(t, batch.state, batch.goal, -1);
  CHECK((t.val(out) - batch.actions).cwiseAbs().maxCoeff() < 0.05f);
}

TEST_CASE("alpha = 0 ascends the frozen Q on a fixed batch") {
  auto fx = ChainFixture::build(6, 3, 12, 37);
  IQLConfig cfg = fast_iql();
  cfg.bc_coefficient = 0.0f;
  auto agent = AgentBundle::create(tiny_net(3), cfg, 41);
  Rng rng(43);
  auto batch = sample_policy_batch(fx.dataset, 16, rng);

  auto mean_q = [&] {
    Tape t;
    int a = agent.pi_net.forward(t, batch.state, batch.goal, -1);
    int q1 = agent.q1_net.forward(t, batch.state, batch.goal, a);
    int q2 = agent.q2_net.forward(t, batch.state, batch.goal, a);
    return t.val(t.min_elem(q1, q2)).mean();
  };
  float before = mean_q();
  for (int i = 0; i < 300; ++i) agent.update_policy(batch);
  float after = mean_q();
  CHECK(after > before);
}

TEST_CASE("act is deterministic, bounded and permutation-invariant") {
  auto fx = ChainFixture::build(8, 2, 10, 47);
  auto agent = AgentBundle::create(tiny_net(3), fast_iql(), 53);
  EntitySet s = fx.make_state(2), g = fx.make_state(7);
  Vec2 a1 = agent.act(s, g);
  Vec2 a2 = agent.act(s, g);
  CHECK(a1 == a2);
  CHECK(std::abs(a1.x()) <= 1.0f);
  CHECK(std::abs(a1.y()) <= 1.0f);

  EntitySet sp = s.permuted({1, 0});
  Vec2 a3 = agent.act(sp, g);
  CHECK(std::abs(a3.x() - a1.x()) < 1e-5f);
  CHECK(std::abs(a3.y() - a1.y()) < 1e-5f);

  // goal == state stays well-defined
  Vec2 a4 = agent.act(s, s);
  CHECK(std::isfinite(a4.x()));
  CHECK(std::isfinite(a4.y()));
}

TEST_CASE("short chain: V approximates the DP oracle and orders by distance") {
  // quick regression proxy for the full 20-state acceptance check
  auto fx = ChainFixture::build(6, 60, 24, 59);
  IQLConfig cfg = fast_iql();
  cfg.batch_size = 128;
  cfg.learning_rate = 1e-3f;
  cfg.target_smoothing = 0.01f;
  auto agent = AgentBundle::create(tiny_net(3), cfg, 61);
  Rng rng(67);
  for (int i = 0; i < 2500; ++i) {
    auto batch = sample_value_batch(fx.dataset, cfg.batch_size, rng);
    agent.update_value(batch);
    agent.update_q(batch);
  }
  // d = 3: DP = -(1 - 0.99^3)/0.01 = -2.970
  float v3 = agent.value1(fx.make_state(1), fx.make_state(4));
  CHECK(v3 == doctest::Approx(ChainFixture::dp_value(3, 0.99)).epsilon(0.25));
  // ordering for a fixed start
  float v1 = agent.value1(fx.make_state(1), fx.make_state(2));
  float v4 = agent.value1(fx.make_state(1), fx.make_state(5));
  CHECK(v1 > v3);
  CHECK(v3 > v4);
}

TEST_CASE("training rejects non-finite batches loudly") {
  auto fx = ChainFixture::build(6, 2, 10, 71);
  auto agent = AgentBundle::create(tiny_net(3), fast_iql(), 73);
  Rng rng(79);
  auto batch = sample_value_batch(fx.dataset, 8, rng);
  batch.actions(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(agent.update_q(batch), NumericError);
}

TEST_CASE("short no-NaN soak over a random dataset") {
  EnvConfig env;
  env.num_objects = 2;
  CollectorConfig col;
  col.num_transitions = 3000;
  col.episode_length = 50;
  auto ds = collect(env, col, 83);
  IQLConfig cfg = fast_iql();
  auto agent = AgentBundle::create(tiny_net(env.id_dim), cfg, 89);
  Rng rng(97);
  for (int i = 0; i < 600; ++i) {
    auto vb = sample_value_batch(ds, 32, rng);
    float lv = agent.update_value(vb);
    float lq = agent.update_q(vb);
    auto pb = sample_policy_batch(ds, 32, rng);
    float lp = agent.update_policy(pb);
    CHECK(std::isfinite(lv));
    CHECK(std::isfinite(lq));
    CHECK(std::isfinite(lp));
  }
}

TEST_CASE("agent checkpoint round-trips bit-exact through save/load") {
  auto fx = ChainFixture::build(6, 2, 10, 101);
  auto agent = AgentBundle::create(tiny_net(3), fast_iql(), 103);
  Rng rng(107);
  for (int i = 0; i < 20; ++i) {
    auto batch = sample_value_batch(fx.dataset, 8, rng);
    agent.update_value(batch);
    agent.update_q(batch);
  }
  auto path = (std::filesystem::temp_directory_path() / "dg_agent.ckpt").string();
  save_agent(agent, path);
  AgentBundle loaded = load_agent(path);

  EntitySet s = fx.make_state(0), g = fx.make_state(5);
  CHECK(agent.value1(s, g) == loaded.value1(s, g));
  Vec2 a0 = agent.act(s, g), a1 = loaded.act(s, g);
  CHECK(a0 == a1);

  auto path2 = (std::filesystem::temp_directory_path() / "dg_agent2.ckpt").string();
  save_agent(loaded, path2);
  CHECK(fnv1a_file(path) == fnv1a_file(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}
