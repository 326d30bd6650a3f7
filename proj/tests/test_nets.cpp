#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "diffgoal/nets.hpp"

using namespace diffgoal;

namespace {

SetTransformerConfig tiny_cfg(int feature_dim = 6) {
  SetTransformerConfig cfg;
  cfg.attention_dim = 16;
  cfg.num_heads = 4;
  cfg.hidden_dim = 24;
  cfg.num_layers = 2;
  cfg.cond_dim = 8;
  cfg.feature_dim = feature_dim;
  return cfg;
}

Mat random_mat(int r, int c, Rng& rng, float s = 1.0f) {
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = s * float(rng.normal());
  return m;
}

EntityBatch random_batch(int B, int M, int feat, Rng& rng) {
  EntityBatch b;
  b.batch = B;
  b.entities = M;
  b.feat_dim = feat;
  b.features = random_mat(B * M, feat, rng);
  return b;
}

EntityBatch permute_rows(const EntityBatch& in, const std::vector<int>& perm) {
  EntityBatch out = in;
  for (int b = 0; b < in.batch; ++b)
    for (int m = 0; m < in.entities; ++m)
      out.features.row(b * in.entities + m) =
          in.features.row(b * in.entities + perm[m]);
  return out;
}

std::vector<int> random_perm(int n, Rng& rng) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(p[i], p[int(rng.uniform_int(uint64_t(i + 1)))]);
  return p;
}

float rel_err(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max(1e-8f, b.norm());
}

}  // namespace

TEST_CASE("pooled head is invariant to entity permutations (random params)") {
  for (uint64_t trial = 0; trial < 25; ++trial) {
    Rng rng(1000 + trial);
    auto cfg = tiny_cfg();
    ParamStore ps;
    bool conditioned = trial % 2 == 1;
    auto net = PooledNet::create(ps, "n", cfg, 1, conditioned, false, rng);
    // make AdaLN live so conditioning is exercised too
    for (const auto& p : ps.all())
      if (p->name.find(".scale") != std::string::npos ||
          p->name.find(".shift") != std::string::npos)
        p->v = random_mat(int(p->v.rows()), int(p->v.cols()), rng, 0.2f);

    const int B = 3, Ms = 4, Mg = 4;
    EntityBatch s = random_batch(B, Ms, cfg.feature_dim, rng);
    EntityBatch g = random_batch(B, Mg, cfg.feature_dim, rng);
    Mat actions = random_mat(B, 2, rng);

    Tape t0;
    int cond0 = conditioned ? t0.leaf(actions) : -1;
    Mat base = t0.val(net.forward(t0, s, g, cond0));

    EntityBatch sp = permute_rows(s, random_perm(Ms, rng));
    EntityBatch gp = permute_rows(g, random_perm(Mg, rng));
    Tape t1;
    int cond1 = conditioned ? t1.leaf(actions) : -1;
    Mat perm = t1.val(net.forward(t1, sp, gp, cond1));

    CHECK(rel_err(perm, base) < 1e-5f);
  }
}

TEST_CASE("denoiser is equivariant in noisy tokens, invariant in clean ones") {
  for (uint64_t trial = 0; trial < 25; ++trial) {
    Rng rng(2000 + trial);
    auto cfg = tiny_cfg(5);
    ParamStore ps;
    auto net = DenoiserNet::create(ps, "d", cfg, 10, rng);
    for (const auto& p : ps.all())
      if (p->name.find(".scale") != std::string::npos ||
          p->name.find(".shift") != std::string::npos ||
          p->name.find("d.out") != std::string::npos)
        p->v = random_mat(int(p->v.rows()), int(p->v.cols()), rng, 0.2f);

    const int B = 2, M = 4;
    Mat noisy = random_mat(B * M, 5, rng);
    Mat st = random_mat(B * M, 5, rng);
    Mat go = random_mat(B * M, 5, rng);
    std::vector<int> taus = {3, 9};

    Tape t0;
    Mat base = t0.val(net.forward(t0, noisy, st, go, B, M, taus));

    // permuting noisy tokens permutes outputs identically
    auto perm = random_perm(M, rng);
    Mat noisy_p(B * M, 5), base_p(B * M, 5);
    for (int b = 0; b < B; ++b)
      for (int m = 0; m < M; ++m) {
        noisy_p.row(b * M + m) = noisy.row(b * M + perm[m]);
        base_p.row(b * M + m) = base.row(b * M + perm[m]);
      }
    Tape t1;
    Mat out_p = t1.val(net.forward(t1, noisy_p, st, go, B, M, taus));
    CHECK(rel_err(out_p, base_p) < 1e-5f);

    // permuting state tokens and goal tokens changes nothing
    auto perm_s = random_perm(M, rng);
    auto perm_g = random_perm(M, rng);
    Mat st_p(B * M, 5), go_p(B * M, 5);
    for (int b = 0; b < B; ++b)
      for (int m = 0; m < M; ++m) {
        st_p.row(b * M + m) = st.row(b * M + perm_s[m]);
        go_p.row(b * M + m) = go.row(b * M + perm_g[m]);
      }
    Tape t2;
    Mat out_c = t2.val(net.forward(t2, noisy, st_p, go_p, B, M, taus));
    CHECK(rel_err(out_c, base) < 1e-5f);
  }
}

TEST_CASE("inference is deterministic") {
  Rng rng(31);
  auto cfg = tiny_cfg();
  ParamStore ps;
  auto net = PooledNet::create(ps, "n", cfg, 2, false, true, rng);
  EntityBatch s = random_batch(2, 3, cfg.feature_dim, rng);
  EntityBatch g = random_batch(2, 3, cfg.feature_dim, rng);
  Tape t0, t1;
  Mat a = t0.val(net.forward(t0, s, g, -1));
  Mat b = t1.val(net.forward(t1, s, g, -1));
  CHECK(a == b);
}

TEST_CASE("empty goal set is rejected") {
  Rng rng(32);
  auto cfg = tiny_cfg();
  ParamStore ps;
  auto net = PooledNet::create(ps, "n", cfg, 1, false, false, rng);
  EntityBatch s = random_batch(2, 3, cfg.feature_dim, rng);
  EntityBatch g = random_batch(2, 3, cfg.feature_dim, rng);
  g.entities = 0;
  g.features.resize(0, cfg.feature_dim);
  Tape t;
  CHECK_THROWS_AS(net.forward(t, s, g, -1), InputError);
}

TEST_CASE("diffusion timestep conditioning is live") {
  Rng rng(33);
  auto cfg = tiny_cfg(5);
  ParamStore ps;
  auto net = DenoiserNet::create(ps, "d", cfg, 10, rng);
  for (const auto& p : ps.all())
    if (p->name.find(".scale") != std::string::npos ||
        p->name.find(".shift") != std::string::npos ||
        p->name.find("d.out") != std::string::npos)
      p->v = random_mat(int(p->v.rows()), int(p->v.cols()), rng, 0.3f);

  const int B = 1, M = 3;
  Mat noisy = random_mat(B * M, 5, rng);
  Mat st = random_mat(B * M, 5, rng);
  Mat go = random_mat(B * M, 5, rng);
  Tape t0, t1;
  Mat at1 = t0.val(net.forward(t0, noisy, st, go, B, M, {1}));
  Mat at10 = t1.val(net.forward(t1, noisy, st, go, B, M, {10}));
  CHECK((at1 - at10).norm() > 1e-4f);
}

TEST_CASE("set size may differ from any training-time size") {
  Rng rng(34);
  auto cfg = tiny_cfg(5);
  ParamStore ps;
  auto net = DenoiserNet::create(ps, "d", cfg, 10, rng);
  for (int M : {2, 5, 7}) {
    Mat noisy = random_mat(M, 5, rng);
    Mat st = random_mat(M, 5, rng);
    Mat go = random_mat(M, 5, rng);
    Tape t;
    Mat out = t.val(net.forward(t, noisy, st, go, 1, M, {4}));
    CHECK(out.rows() == M);
    CHECK(out.cols() == 5);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(35);
  auto cfg = tiny_cfg();
  ParamStore ps;
  auto net = PooledNet::create(ps, "n", cfg, 1, false, false, rng);
  (void)net;

  auto path = (std::filesystem::temp_directory_path() / "dg_net.ckpt").string();
  save_checkpoint(ps, {{"kind", "test"}, {"layers", "2"}}, path);

  std::vector<Mat> saved;
  for (const auto& p : ps.all()) saved.push_back(p->v);
  for (const auto& p : ps.all()) p->v.setZero();

  auto meta = read_checkpoint_meta(path);
  CHECK(meta.at("kind") == "test");
  load_checkpoint(ps, path);
  size_t i = 0;
  for (const auto& p : ps.all()) CHECK(p->v == saved[i++]);

  // same bytes when re-saved
  auto path2 = (std::filesystem::temp_directory_path() / "dg_net2.ckpt").string();
  save_checkpoint(ps, meta, path2);
  CHECK(fnv1a_file(path) == fnv1a_file(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint dimension mismatch is rejected") {
  Rng rng(36);
  auto cfg = tiny_cfg();
  ParamStore ps;
  PooledNet::create(ps, "n", cfg, 1, false, false, rng);
  auto path = (std::filesystem::temp_directory_path() / "dg_mis.ckpt").string();
  save_checkpoint(ps, {}, path);

  auto cfg2 = tiny_cfg();
  cfg2.attention_dim = 32;
  cfg2.num_heads = 4;
  ParamStore ps2;
  PooledNet::create(ps2, "n", cfg2, 1, false, false, rng);
  CHECK_THROWS_AS(load_checkpoint(ps2, path), DataError);
  std::remove(path.c_str());
}
