#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "diffgoal/nets.hpp"
#include "diffgoal/tensor.hpp"

using namespace diffgoal;

namespace {

Mat random_mat(int r, int c, Rng& rng, float s = 1.0f) {
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = s * float(rng.normal());
  return m;
}

// Central-difference directional-derivative check of every parameter in the
// store against the tape gradients. `build` must construct the full forward
// graph and return the scalar loss node.
void check_grads(ParamStore& ps, const std::function<int(Tape&)>& build,
                 Rng& rng, float tol = 2e-2f) {
  Tape t;
  int loss = build(t);
  t.backward(loss);

  for (const auto& p : ps.all()) {
    Mat d = random_mat(int(p->v.rows()), int(p->v.cols()), rng);
    d /= std::max(1e-12f, d.norm());
    float analytic = p->g.cwiseProduct(d).sum();

    const float h = 1e-2f;
    Mat saved = p->v;
    p->v = saved + h * d;
    Tape tp;
    float lp = [&] {
      int l = build(tp);
      return tp.val(l)(0, 0);
    }();
    p->v = saved - h * d;
    Tape tm;
    float lm = [&] {
      int l = build(tm);
      return tm.val(l)(0, 0);
    }();
    p->v = saved;
    float fd = (lp - lm) / (2.0f * h);

    INFO("param ", p->name, " analytic=", analytic, " fd=", fd);
    CHECK(std::abs(analytic - fd) <=
          tol * std::max({1.0f, std::abs(analytic), std::abs(fd)}) + 5e-4f);
  }
  ps.zero_grad();
}

}  // namespace

TEST_CASE("primitive ops match finite differences") {
  Rng rng(1234);
  ParamStore ps;
  Param* A = ps.add("A", 5, 4, Init::Xavier, rng);
  Param* B = ps.add("B", 4, 3, Init::Xavier, rng);
  Param* v = ps.add("v", 1, 3, Init::Normal02, rng);
  Mat target = random_mat(5, 3, rng);

  SUBCASE("matmul + add_rowvec + gelu + mse") {
    check_grads(ps, [&](Tape& t) {
      int x = t.matmul(t.param(A), t.param(B));
      x = t.add_rowvec(x, t.param(v));
      x = t.gelu(x);
      return t.mse_to(x, target);
    }, rng);
  }
  SUBCASE("tanh / silu / scale / add_scalar") {
    check_grads(ps, [&](Tape& t) {
      int x = t.matmul(t.param(A), t.param(B));
      int y = t.tanh_(x);
      int z = t.silu(t.scale(x, 0.7f));
      return t.mse_to(t.add_scalar(t.add(y, z), 0.3f), target);
    }, rng);
  }
  SUBCASE("mul + sub + mean") {
    check_grads(ps, [&](Tape& t) {
      int x = t.matmul(t.param(A), t.param(B));
      int y = t.mul(x, t.sub(x, t.leaf(target)));
      return t.mean_all(y);
    }, rng);
  }
  SUBCASE("node reuse accumulates") {
    Tape t;
    int x = t.param(A);
    int y = t.add(x, x);
    int loss = t.sum_all(y);
    t.backward(loss);
    CHECK(A->g.isApprox(2.0f * Mat::Ones(5, 4)));
    ps.zero_grad();
  }
}

TEST_CASE("layernorm and mul_rowvec gradients") {
  Rng rng(99);
  ParamStore ps;
  Param* A = ps.add("A", 6, 8, Init::Xavier, rng);
  Param* g = ps.add("g", 1, 8, Init::One, rng);
  Mat target = random_mat(6, 8, rng);
  check_grads(ps, [&](Tape& t) {
    int x = t.layernorm(t.param(A));
    x = t.mul_rowvec(x, t.param(g));
    return t.mse_to(x, target);
  }, rng);
}

TEST_CASE("attention gradients (multi-head, cross lengths)") {
  Rng rng(7);
  for (auto [B, Lq, Lk, H, D] :
       std::vector<std::tuple<int, int, int, int, int>>{
           {2, 3, 3, 2, 8}, {3, 1, 5, 1, 6}, {1, 4, 2, 3, 12}}) {
    ParamStore ps;
    Param* Q = ps.add("Q", B * Lq, D, Init::Xavier, rng);
    Param* K = ps.add("K", B * Lk, D, Init::Xavier, rng);
    Param* V = ps.add("V", B * Lk, D, Init::Xavier, rng);
    Mat target = random_mat(B * Lq, D, rng);
    check_grads(ps, [&, B = B, Lq = Lq, Lk = Lk, H = H](Tape& t) {
      int o = t.attention(t.param(Q), t.param(K), t.param(V), B, Lq, Lk, H);
      return t.mse_to(o, target);
    }, rng);
  }
}

TEST_CASE("group rows, table rows, gather, min, expectile, weighted rows") {
  Rng rng(21);
  ParamStore ps;
  const int B = 3, L = 4, D = 5;
  Param* X = ps.add("X", B * L, D, Init::Xavier, rng);
  Param* M = ps.add("M", B, D, Init::Xavier, rng);
  Param* T = ps.add("T", 3, D, Init::Normal02, rng);
  Param* Y = ps.add("Y", B * L, D, Init::Xavier, rng);
  std::vector<int> roles;
  for (int i = 0; i < B * L; ++i) roles.push_back(i % 3);
  std::vector<int> gather = {0, 5, 11, 5};
  Mat tgt1 = random_mat(B * L, D, rng);
  Mat tgt2 = random_mat(int(gather.size()), D, rng);
  Eigen::VectorXf w(B * L);
  for (int i = 0; i < B * L; ++i) w(i) = 0.5f + float(rng.uniform());

  check_grads(ps, [&](Tape& t) {
    int x = t.add_group_rows(t.param(X), t.param(M), L);
    x = t.mul_group_rows(x, t.param(M), L);
    x = t.add_table_rows(x, t.param(T), roles);
    int m = t.min_elem(x, t.param(Y));
    int l1 = t.expectile_to(m, tgt1, 0.9f);
    int l2 = t.mse_to(t.gather_rows(x, gather), tgt2);
    int l3 = t.weighted_sq_rows(x, tgt1, w, float(B * L));
    return t.add(t.add(l1, l2), l3);
  }, rng);
}

TEST_CASE("expectile values match hand computation") {
  Rng rng(3);
  Tape t;
  Mat a(1, 2);
  a << 0.0f, 0.0f;
  Mat target(1, 2);
  target << 1.0f, -1.0f;  // u = 1 and u = -1
  int x = t.leaf(a);
  int loss = t.expectile_to(x, target, 0.9f);
  // mean(0.9*1 + 0.1*1) = 0.5
  CHECK(t.val(loss)(0, 0) == doctest::Approx(0.5f));
}

TEST_CASE("pooled net end-to-end gradcheck") {
  Rng rng(42);
  SetTransformerConfig cfg;
  cfg.attention_dim = 8;
  cfg.num_heads = 2;
  cfg.hidden_dim = 12;
  cfg.num_layers = 2;
  cfg.cond_dim = 6;
  cfg.feature_dim = 5;

  EntityBatch s, g;
  s.batch = g.batch = 2;
  s.entities = 3;
  g.entities = 3;
  s.feat_dim = g.feat_dim = 5;
  s.features = random_mat(6, 5, rng);
  g.features = random_mat(6, 5, rng);
  Mat actions = random_mat(2, 2, rng);
  Mat target = random_mat(2, 1, rng);

  SUBCASE("unconditioned (V-style)") {
    ParamStore ps;
    auto net = PooledNet::create(ps, "v", cfg, 1, false, false, rng);
    check_grads(ps, [&](Tape& t) {
      return t.mse_to(net.forward(t, s, g, -1), target);
    }, rng);
  }
  SUBCASE("action-conditioned (Q-style), grads also flow to the action") {
    ParamStore ps;
    auto net = PooledNet::create(ps, "q", cfg, 1, true, false, rng);
    // Put a few training steps on the AdaLN heads so conditioning is live,
    // otherwise zero-init makes action grads legitimately zero.
    for (const auto& p : ps.all())
      if (p->name.find(".scale") != std::string::npos ||
          p->name.find(".shift") != std::string::npos)
        p->v = random_mat(int(p->v.rows()), int(p->v.cols()), rng, 0.3f);

    check_grads(ps, [&](Tape& t) {
      int a = t.leaf(actions);
      return t.mse_to(net.forward(t, s, g, a), target);
    }, rng);

    Tape t;
    int a = t.param(ps.find("q.cond1.W"));  // reuse as a differentiable input
    // direct check: gradient w.r.t. an action leaf is nonzero
    Tape t2;
    ParamStore tmp;
    Rng r2(5);
    Param* act = tmp.add("act", 2, 2, Init::Xavier, r2);
    int out = net.forward(t2, s, g, t2.param(act));
    t2.backward(t2.mse_to(out, target));
    CHECK(act->g.norm() > 0.0f);
    (void)a;
  }
}

TEST_CASE("denoiser net gradcheck") {
  Rng rng(77);
  SetTransformerConfig cfg;
  cfg.attention_dim = 8;
  cfg.num_heads = 2;
  cfg.hidden_dim = 12;
  cfg.num_layers = 2;
  cfg.cond_dim = 6;
  cfg.feature_dim = 4;

  ParamStore ps;
  auto net = DenoiserNet::create(ps, "d", cfg, 10, rng);
  const int B = 2, M = 3;
  Mat noisy = random_mat(B * M, 4, rng);
  Mat st = random_mat(B * M, 4, rng);
  Mat go = random_mat(B * M, 4, rng);
  Mat target = random_mat(B * M, 4, rng);
  std::vector<int> taus = {3, 7};

  check_grads(ps, [&](Tape& t) {
    return t.mse_to(net.forward(t, noisy, st, go, B, M, taus), target);
  }, rng);
}

TEST_CASE("adam minimizes a quadratic") {
  Rng rng(11);
  ParamStore ps;
  Param* x = ps.add("x", 1, 4, Init::Xavier, rng);
  Mat target(1, 4);
  target << 1.0f, -2.0f, 0.5f, 3.0f;
  Adam opt(0.05f, 0.0f);
  float last = 1e9f;
  for (int i = 0; i < 400; ++i) {
    Tape t;
    int loss = t.mse_to(t.param(x), target);
    t.backward(loss);
    last = t.val(loss)(0, 0);
    opt.step(ps);
  }
  CHECK(last < 1e-3f);
}

TEST_CASE("gradient clipping bounds the applied step") {
  Rng rng(13);
  ParamStore ps;
  Param* x = ps.add("x", 1, 1, Init::Zero, rng);
  x->g(0, 0) = 1000.0f;
  Adam opt(0.1f, 1.0f);
  float norm = opt.step(ps);
  CHECK(norm == doctest::Approx(1000.0f));
  // clipped gradient = 1.0; first adam step magnitude ~ lr
  CHECK(std::abs(x->v(0, 0)) <= 0.11f);
}
