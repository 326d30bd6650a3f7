#include "diffgoal/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace diffgoal {

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out,
                      Init init, Rng& rng) {
  Linear l;
  l.W = ps.add(name + ".W", in, out, init, rng);
  l.b = ps.add(name + ".b", 1, out, Init::Zero, rng);
  return l;
}

int Linear::forward(Tape& t, int x) const {
  return t.add_rowvec(t.matmul(x, t.param(W)), t.param(b));
}

AdaLayerNorm AdaLayerNorm::create(ParamStore& ps, const std::string& name,
                                  int dim, int cond_dim, bool conditioned,
                                  Rng& rng) {
  AdaLayerNorm ln;
  ln.conditioned = conditioned;
  if (conditioned) {
    ln.scale_proj = Linear::create(ps, name + ".scale", cond_dim, dim,
                                   Init::Zero, rng);
    ln.shift_proj = Linear::create(ps, name + ".shift", cond_dim, dim,
                                   Init::Zero, rng);
  } else {
    ln.gamma = ps.add(name + ".gamma", 1, dim, Init::One, rng);
    ln.beta = ps.add(name + ".beta", 1, dim, Init::Zero, rng);
  }
  return ln;
}

int AdaLayerNorm::forward(Tape& t, int x, int cond, int tokens_per_set) const {
  int n = t.layernorm(x);
  if (!conditioned) {
    n = t.mul_rowvec(n, t.param(gamma));
    return t.add_rowvec(n, t.param(beta));
  }
  if (cond < 0) throw NumericError("AdaLayerNorm: missing conditioning");
  int s = t.add_scalar(scale_proj.forward(t, cond), 1.0f);
  int sh = shift_proj.forward(t, cond);
  n = t.mul_group_rows(n, s, tokens_per_set);
  return t.add_group_rows(n, sh, tokens_per_set);
}

TransformerBlock TransformerBlock::create(ParamStore& ps,
                                          const std::string& name,
                                          const SetTransformerConfig& cfg,
                                          bool conditioned, Rng& rng) {
  TransformerBlock b;
  const int d = cfg.attention_dim;
  b.ln1 = AdaLayerNorm::create(ps, name + ".ln1", d, cfg.cond_dim, conditioned, rng);
  b.ln2 = AdaLayerNorm::create(ps, name + ".ln2", d, cfg.cond_dim, conditioned, rng);
  b.wq = Linear::create(ps, name + ".wq", d, d, Init::Xavier, rng);
  b.wk = Linear::create(ps, name + ".wk", d, d, Init::Xavier, rng);
  b.wv = Linear::create(ps, name + ".wv", d, d, Init::Xavier, rng);
  b.wo = Linear::create(ps, name + ".wo", d, d, Init::Xavier, rng);
  b.ff1 = Linear::create(ps, name + ".ff1", d, cfg.hidden_dim, Init::Xavier, rng);
  b.ff2 = Linear::create(ps, name + ".ff2", cfg.hidden_dim, d, Init::Xavier, rng);
  return b;
}

int TransformerBlock::forward(Tape& t, int x, int cond, int B, int L,
                              int H) const {
  int n1 = ln1.forward(t, x, cond, L);
  int att = t.attention(wq.forward(t, n1), wk.forward(t, n1),
                        wv.forward(t, n1), B, L, L, H);
  x = t.add(x, wo.forward(t, att));
  int n2 = ln2.forward(t, x, cond, L);
  int h = ff2.forward(t, t.gelu(ff1.forward(t, n2)));
  return t.add(x, h);
}

EntityEncoder EntityEncoder::create(ParamStore& ps, const std::string& name,
                                    const SetTransformerConfig& cfg,
                                    bool conditioned, Rng& rng) {
  cfg.validate();
  EntityEncoder e;
  e.cfg = cfg;
  e.input_proj = Linear::create(ps, name + ".in", cfg.feature_dim,
                                cfg.attention_dim, Init::Xavier, rng);
  e.role_table = ps.add(name + ".roles", 3, cfg.attention_dim, Init::Normal02, rng);
  for (int i = 0; i < cfg.num_layers; ++i)
    e.blocks.push_back(TransformerBlock::create(
        ps, name + ".blk" + std::to_string(i), cfg, conditioned, rng));
  e.final_ln = AdaLayerNorm::create(ps, name + ".lnf", cfg.attention_dim,
                                    cfg.cond_dim, false, rng);
  return e;
}

int EntityEncoder::forward(Tape& t, const Mat& features,
                           const std::vector<int>& roles, int B, int L,
                           int cond) const {
  if (features.cols() != cfg.feature_dim)
    throw InputError("encoder: feature dim mismatch");
  if (int(roles.size()) != B * L || features.rows() != int64_t(B) * L)
    throw InputError("encoder: token count mismatch");
  int x = input_proj.forward(t, t.leaf(features));
  x = t.add_table_rows(x, t.param(role_table), roles);
  for (const auto& blk : blocks)
    x = blk.forward(t, x, cond, B, L, cfg.num_heads);
  return final_ln.forward(t, x, -1, L);
}

Mat concat_state_goal(const EntityBatch& state, const EntityBatch& goal) {
  if (state.batch != goal.batch || state.feat_dim != goal.feat_dim)
    throw InputError("state/goal batch mismatch");
  const int L = state.entities + goal.entities;
  Mat f(state.batch * L, state.feat_dim);
  for (int b = 0; b < state.batch; ++b) {
    f.middleRows(b * L, state.entities) =
        state.features.middleRows(b * state.entities, state.entities);
    f.middleRows(b * L + state.entities, goal.entities) =
        goal.features.middleRows(b * goal.entities, goal.entities);
  }
  return f;
}

PooledNet PooledNet::create(ParamStore& ps, const std::string& name,
                            const SetTransformerConfig& cfg, int out_dim,
                            bool conditioned, bool tanh_output, Rng& rng) {
  PooledNet n;
  n.enc = EntityEncoder::create(ps, name + ".enc", cfg, conditioned, rng);
  const int d = cfg.attention_dim;
  n.pool_query = ps.add(name + ".pool.q", 1, d, Init::Normal02, rng);
  n.pool_k = Linear::create(ps, name + ".pool.k", d, d, Init::Xavier, rng);
  n.pool_v = Linear::create(ps, name + ".pool.v", d, d, Init::Xavier, rng);
  n.head1 = Linear::create(ps, name + ".head1", d, cfg.hidden_dim, Init::Xavier, rng);
  n.head2 = Linear::create(ps, name + ".head2", cfg.hidden_dim, out_dim,
                           Init::Xavier, rng);
  n.tanh_output = tanh_output;
  n.conditioned = conditioned;
  if (conditioned) {
    n.cond1 = Linear::create(ps, name + ".cond1", 2, cfg.cond_dim, Init::Xavier, rng);
    n.cond2 = Linear::create(ps, name + ".cond2", cfg.cond_dim, cfg.cond_dim,
                             Init::Xavier, rng);
  }
  return n;
}

int PooledNet::forward(Tape& t, const EntityBatch& state,
                       const EntityBatch& goal, int cond_input) const {
  if (state.entities < 1 || goal.entities < 1)
    throw InputError("pooled net: empty entity set");
  const int B = state.batch;
  const int L = state.entities + goal.entities;

  int cond = -1;
  if (conditioned) {
    if (cond_input < 0) throw InputError("pooled net: missing conditioning");
    cond = cond2.forward(t, t.silu(cond1.forward(t, cond_input)));
  }

  std::vector<int> roles(size_t(B) * L);
  for (int b = 0; b < B; ++b) {
    for (int m = 0; m < state.entities; ++m) roles[b * L + m] = kRoleState;
    for (int m = 0; m < goal.entities; ++m)
      roles[b * L + state.entities + m] = kRoleGoal;
  }
  int x = enc.forward(t, concat_state_goal(state, goal), roles, B, L, cond);

  // single learned query per set attends over all tokens
  std::vector<int> tile(size_t(B), 0);
  int q = t.gather_rows(t.param(pool_query), tile);
  int pooled = t.attention(q, pool_k.forward(t, x), pool_v.forward(t, x), B, 1,
                           L, 1);
  int h = t.gelu(head1.forward(t, pooled));
  int out = head2.forward(t, h);
  if (tanh_output) out = t.tanh_(out);
  return out;
}

namespace {
Mat sinusoidal_table(int num_steps, int dim) {
  Mat tab = Mat::Zero(num_steps + 1, dim);
  for (int s = 0; s <= num_steps; ++s) {
    for (int i = 0; i < dim / 2; ++i) {
      float freq = std::exp(-std::log(10000.0f) * float(i) / float(dim / 2));
      tab(s, 2 * i) = std::sin(float(s) * freq);
      tab(s, 2 * i + 1) = std::cos(float(s) * freq);
    }
  }
  return tab;
}
}  // namespace

DenoiserNet DenoiserNet::create(ParamStore& ps, const std::string& name,
                                const SetTransformerConfig& cfg, int num_steps,
                                Rng& rng) {
  DenoiserNet n;
  n.enc = EntityEncoder::create(ps, name + ".enc", cfg, true, rng);
  n.time1 = Linear::create(ps, name + ".time1", cfg.cond_dim, cfg.cond_dim,
                           Init::Xavier, rng);
  n.time2 = Linear::create(ps, name + ".time2", cfg.cond_dim, cfg.cond_dim,
                           Init::Xavier, rng);
  n.out_proj = Linear::create(ps, name + ".out", cfg.attention_dim,
                              cfg.feature_dim, Init::Zero, rng);
  n.time_table = sinusoidal_table(num_steps, cfg.cond_dim);
  return n;
}

int DenoiserNet::forward(Tape& t, const Mat& noisy, const Mat& state,
                         const Mat& goal, int B, int M,
                         const std::vector<int>& taus) const {
  if (noisy.rows() != int64_t(B) * M || state.rows() != int64_t(B) * M ||
      goal.rows() != int64_t(B) * M)
    throw InputError("denoiser: set size mismatch");
  if (int(taus.size()) != B) throw InputError("denoiser: taus size");

  const int L = 3 * M;
  Mat feats(B * L, noisy.cols());
  std::vector<int> roles(size_t(B) * L);
  for (int b = 0; b < B; ++b) {
    feats.middleRows(b * L, M) = noisy.middleRows(b * M, M);
    feats.middleRows(b * L + M, M) = state.middleRows(b * M, M);
    feats.middleRows(b * L + 2 * M, M) = goal.middleRows(b * M, M);
    for (int m = 0; m < M; ++m) {
      roles[b * L + m] = kRoleNoisy;
      roles[b * L + M + m] = kRoleState;
      roles[b * L + 2 * M + m] = kRoleGoal;
    }
  }

  Mat temb(B, time_table.cols());
  for (int b = 0; b < B; ++b) {
    if (taus[b] < 0 || taus[b] >= time_table.rows())
      throw InputError("denoiser: diffusion step out of range");
    temb.row(b) = time_table.row(taus[b]);
  }
  int cond = time2.forward(t, t.silu(time1.forward(t, t.leaf(temb))));

  int x = enc.forward(t, feats, roles, B, L, cond);
  std::vector<int> noisy_rows;
  noisy_rows.reserve(size_t(B) * M);
  for (int b = 0; b < B; ++b)
    for (int m = 0; m < M; ++m) noisy_rows.push_back(b * L + m);
  return out_proj.forward(t, t.gather_rows(x, noisy_rows));
}

SetToSetNet SetToSetNet::create(ParamStore& ps, const std::string& name,
                                const SetTransformerConfig& cfg, Rng& rng) {
  SetToSetNet n;
  n.enc = EntityEncoder::create(ps, name + ".enc", cfg, false, rng);
  n.out_proj = Linear::create(ps, name + ".out", cfg.attention_dim,
                              cfg.feature_dim, Init::Xavier, rng);
  return n;
}

int SetToSetNet::forward(Tape& t, const Mat& state, const Mat& goal, int B,
                         int M) const {
  if (state.rows() != int64_t(B) * M || goal.rows() != int64_t(B) * M)
    throw InputError("set2set: size mismatch");
  const int L = 2 * M;
  Mat feats(B * L, state.cols());
  std::vector<int> roles(size_t(B) * L);
  for (int b = 0; b < B; ++b) {
    feats.middleRows(b * L, M) = state.middleRows(b * M, M);
    feats.middleRows(b * L + M, M) = goal.middleRows(b * M, M);
    for (int m = 0; m < M; ++m) {
      roles[b * L + m] = kRoleState;
      roles[b * L + M + m] = kRoleGoal;
    }
  }
  int x = enc.forward(t, feats, roles, B, L, -1);
  std::vector<int> state_rows;
  state_rows.reserve(size_t(B) * M);
  for (int b = 0; b < B; ++b)
    for (int m = 0; m < M; ++m) state_rows.push_back(b * L + m);
  return out_proj.forward(t, t.gather_rows(x, state_rows));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCkptMagic[4] = {'D', 'G', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void wpod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T rpod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint truncated");
  return v;
}
void wstr(std::ostream& os, const std::string& s) {
  wpod<uint32_t>(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}
std::string rstr(std::istream& is) {
  uint32_t n = rpod<uint32_t>(is);
  if (n > (1u << 24)) throw DataError("checkpoint corrupt: string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("checkpoint truncated");
  return s;
}
}  // namespace

void save_checkpoint(const std::vector<const ParamStore*>& stores,
                     const std::map<std::string, std::string>& config_echo,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kCkptMagic, 4);
  wpod<uint32_t>(os, kCkptVersion);
  wpod<uint32_t>(os, uint32_t(config_echo.size()));
  for (const auto& [k, v] : config_echo) {
    wstr(os, k);
    wstr(os, v);
  }
  size_t count = 0;
  for (const auto* ps : stores) count += ps->all().size();
  wpod<uint32_t>(os, uint32_t(count));
  for (const auto* ps : stores) {
    for (const auto& p : ps->all()) {
      wstr(os, p->name);
      wpod<uint32_t>(os, uint32_t(p->v.rows()));
      wpod<uint32_t>(os, uint32_t(p->v.cols()));
      // column-major, matching in-memory layout
      os.write(reinterpret_cast<const char*>(p->v.data()),
               std::streamsize(size_t(p->v.size()) * sizeof(float)));
    }
  }
  if (!os) throw DataError("write failed: " + path);
}

void save_checkpoint(const ParamStore& ps,
                     const std::map<std::string, std::string>& config_echo,
                     const std::string& path) {
  save_checkpoint(std::vector<const ParamStore*>{&ps}, config_echo, path);
}

std::map<std::string, std::string> read_checkpoint_meta(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  if (rpod<uint32_t>(is) != kCkptVersion)
    throw DataError("checkpoint version mismatch");
  std::map<std::string, std::string> kv;
  uint32_t n = rpod<uint32_t>(is);
  for (uint32_t i = 0; i < n; ++i) {
    std::string k = rstr(is);
    kv[k] = rstr(is);
  }
  return kv;
}

void load_checkpoint(const std::vector<ParamStore*>& stores,
                     const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  if (rpod<uint32_t>(is) != kCkptVersion)
    throw DataError("checkpoint version mismatch");
  uint32_t kv = rpod<uint32_t>(is);
  for (uint32_t i = 0; i < kv; ++i) {
    rstr(is);
    rstr(is);
  }
  size_t expected = 0;
  for (auto* ps : stores) expected += ps->all().size();
  uint32_t count = rpod<uint32_t>(is);
  size_t loaded = 0;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = rstr(is);
    uint32_t rows = rpod<uint32_t>(is);
    uint32_t cols = rpod<uint32_t>(is);
    Param* p = nullptr;
    for (auto* ps : stores)
      if ((p = ps->find(name))) break;
    if (!p) throw DataError("checkpoint has unknown array: " + name);
    if (p->v.rows() != int(rows) || p->v.cols() != int(cols))
      throw DataError("checkpoint shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(p->v.data()),
            std::streamsize(size_t(rows) * cols * sizeof(float)));
    if (!is) throw DataError("checkpoint truncated");
    ++loaded;
  }
  if (loaded != expected) throw DataError("checkpoint missing arrays");
}

void load_checkpoint(ParamStore& ps, const std::string& path) {
  load_checkpoint(std::vector<ParamStore*>{&ps}, path);
}

}  // namespace diffgoal
