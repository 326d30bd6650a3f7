#include "diffgoal/diffusion.hpp"

#include <cmath>

#include "diffgoal/dataset.hpp"

namespace diffgoal {

DiffusionSchedule DiffusionSchedule::cosine(int num_steps) {
  DiffusionSchedule s;
  s.num_steps = num_steps;
  s.betas.resize(num_steps + 1);
  s.alphas.resize(num_steps + 1);
  s.alpha_bars.resize(num_steps + 1);
  const float off = 0.008f;
  auto f = [&](float tau) {
    float u = (tau / float(num_steps) + off) / (1.0f + off);
    float c = std::cos(u * float(M_PI) / 2.0f);
    return c * c;
  };
  s.betas(0) = 0.0f;
  s.alphas(0) = 1.0f;
  s.alpha_bars(0) = 1.0f;
  for (int tau = 1; tau <= num_steps; ++tau) {
    float ab = f(float(tau)) / f(0.0f);
    float beta = 1.0f - ab / s.alpha_bars(tau - 1);
    beta = std::clamp(beta, 1e-5f, 0.999f);
    s.betas(tau) = beta;
    s.alphas(tau) = 1.0f - beta;
    s.alpha_bars(tau) = s.alpha_bars(tau - 1) * s.alphas(tau);
  }
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  if (num_steps < 1) throw ConfigError("schedule: num_steps must be >= 1");
  for (int tau = 1; tau <= num_steps; ++tau) {
    if (!(betas(tau) > 0.0f && betas(tau) < 1.0f))
      throw ConfigError("schedule: beta out of (0,1)");
    if (tau > 1 && betas(tau) < betas(tau - 1))
      throw ConfigError("schedule: betas must be non-decreasing");
  }
  if (num_steps > 1 && !(alpha_bars(num_steps) < alpha_bars(1)))
    throw ConfigError("schedule: alpha_bar must decay");
}

NormStats compute_norm_stats(const OfflineDataset& ds) {
  if (ds.trajectories.empty()) throw InputError("norm stats: empty dataset");
  const int feat = ds.trajectories[0].states[0].feature_dim();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(feat);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(feat);
  int64_t n = 0;
  for (const auto& traj : ds.trajectories) {
    for (const auto& s : traj.states) {
      sum += s.features().colwise().sum().cast<double>();
      sq += s.features().array().square().colwise().sum().matrix().cast<double>();
      n += s.size();
    }
  }
  NormStats st;
  st.mean = (sum / double(n)).cast<float>();
  Eigen::RowVectorXd var =
      (sq / double(n)) - (sum / double(n)).array().square().matrix();
  st.std = var.cwiseMax(1e-8).cwiseSqrt().cast<float>();
  return st;
}

Mat q_sample(const Mat& clean, int tau, const Mat& noise,
             const DiffusionSchedule& sched) {
  if (tau < 1 || tau > sched.num_steps)
    throw InputError("q_sample: diffusion step out of range");
  float ab = sched.alpha_bars(tau);
  return std::sqrt(ab) * clean + std::sqrt(1.0f - ab) * noise;
}

EntitySet snap_to_valid(const Mat& features, const EntitySet& state) {
  const int M = int(features.rows());
  const int id_dim = state.id_dim();
  if (M != state.size() || features.cols() != state.feature_dim())
    throw InputError("snap: shape mismatch");

  // greedy one-to-one assignment of state identities by identity-channel
  // distance
  std::vector<int> state_ids;
  for (int m = 0; m < M; ++m) state_ids.push_back(state.identity_index(m));
  std::vector<bool> row_done(M, false), id_done(M, false);

  EntitySet out(M, id_dim);
  for (int pick = 0; pick < M; ++pick) {
    float best = std::numeric_limits<float>::infinity();
    int bi = -1, bj = -1;
    for (int i = 0; i < M; ++i) {
      if (row_done[i]) continue;
      for (int j = 0; j < M; ++j) {
        if (id_done[j]) continue;
        Eigen::RowVectorXf onehot = Eigen::RowVectorXf::Zero(id_dim);
        onehot(state_ids[j]) = 1.0f;
        float d = (features.row(i).tail(id_dim) - onehot).squaredNorm();
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    row_done[bi] = true;
    id_done[bj] = true;
    out.set_identity(bi, state_ids[bj]);
    out.set_position(bi, Vec2(std::clamp(features(bi, 0), 0.0f, 1.0f),
                              std::clamp(features(bi, 1), 0.0f, 1.0f)));
  }
  return out;
}

DiffuserBundle DiffuserBundle::create(const SetTransformerConfig& net_cfg,
                                      int num_steps, int K,
                                      const NormStats& norm, uint64_t seed,
                                      float lr, float grad_clip) {
  if (K < 1) throw ConfigError("diffuser: K must be >= 1");
  DiffuserBundle d{.net_cfg = net_cfg,
                   .schedule = DiffusionSchedule::cosine(num_steps),
                   .subgoal_horizon = K,
                   .norm = norm,
                   .opt = Adam(lr, grad_clip)};
  Rng rng(Rng::splitmix(seed ^ 0xD1FFULL));
  d.net = DenoiserNet::create(d.store, "den", net_cfg, num_steps, rng);
  return d;
}

float DiffuserBundle::train_step(const DiffuserBatch& batch, Rng& rng) {
  const int B = batch.state.batch;
  const int M = batch.state.entities;
  Mat s = norm.normalize(batch.state.features);
  Mat g = norm.normalize(batch.goal.features);
  Mat x0 = norm.normalize(batch.subgoal.features);

  std::vector<int> taus(B);
  Mat noise(B * M, x0.cols());
  for (int b = 0; b < B; ++b)
    taus[b] = 1 + int(rng.uniform_int(uint64_t(schedule.num_steps)));
  for (int i = 0; i < noise.rows(); ++i)
    for (int j = 0; j < noise.cols(); ++j) noise(i, j) = float(rng.normal());

  Mat x_tau(B * M, x0.cols());
  for (int b = 0; b < B; ++b) {
    float ab = schedule.alpha_bars(taus[b]);
    x_tau.middleRows(b * M, M) =
        std::sqrt(ab) * x0.middleRows(b * M, M) +
        std::sqrt(1.0f - ab) * noise.middleRows(b * M, M);
  }

  Tape t;
  int pred = net.forward(t, x_tau, s, g, B, M, taus);
  int loss = t.mse_to(pred, noise);
  float L = t.val(loss)(0, 0);
  if (!std::isfinite(L))
    throw NumericError("diffuser train_step: non-finite loss at step " +
                       std::to_string(steps));
  t.backward(loss);
  opt.step(store);
  ++steps;
  return L;
}

Mat DiffuserBundle::denoise_step(const Mat& noisy_norm, const Mat& state_norm,
                                 const Mat& goal_norm, int batch, int entities,
                                 const std::vector<int>& taus) const {
  Tape t;
  int pred = net.forward(t, noisy_norm, state_norm, goal_norm, batch, entities,
                         taus);
  return t.val(pred);
}

std::vector<EntitySet> DiffuserBundle::sample(const EntitySet& state,
                                              const EntitySet& goal, int n,
                                              Rng& rng,
                                              SampleTrace* trace) const {
  if (n < 1) throw InputError("sample: n must be >= 1");
  if (state.size() != goal.size())
    throw InputError("sample: state/goal entity count mismatch");
  const int M = state.size();
  const int feat = state.feature_dim();

  // conditioning tokens are fixed for the entire reverse chain
  Mat s1 = norm.normalize(state.features());
  Mat g1 = norm.normalize(goal.features());
  Mat s(n * M, feat), g(n * M, feat);
  for (int i = 0; i < n; ++i) {
    s.middleRows(i * M, M) = s1;
    g.middleRows(i * M, M) = g1;
  }
  const uint64_t cond_hash = fnv1a_bytes(
      s.data(), size_t(s.size()) * sizeof(float),
      fnv1a_bytes(g.data(), size_t(g.size()) * sizeof(float)));

  Mat x(n * M, feat);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) x(i, j) = float(rng.normal());

  for (int tau = schedule.num_steps; tau >= 1; --tau) {
    if (trace) {
      trace->cond_hashes.push_back(cond_hash);
      trace->taus.push_back(tau);
    }
    std::vector<int> taus(n, tau);
    Mat eps = denoise_step(x, s, g, n, M, taus);
    float beta = schedule.betas(tau);
    float alpha = schedule.alphas(tau);
    float ab = schedule.alpha_bars(tau);
    float ab_prev = schedule.alpha_bars(tau - 1);
    x = (x - (beta / std::sqrt(1.0f - ab)) * eps) / std::sqrt(alpha);
    if (tau > 1) {
      float sigma = std::sqrt((1.0f - ab_prev) / (1.0f - ab) * beta);
      for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j)
          x(i, j) += sigma * float(rng.normal());
    }
  }

  std::vector<EntitySet> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Mat feats = norm.denormalize(x.middleRows(i * M, M));
    out.push_back(snap_to_valid(feats, state));
  }
  return out;
}

void save_diffuser(const DiffuserBundle& d, const std::string& path) {
  std::map<std::string, std::string> kv;
  kv["kind"] = "diffuser";
  kv["net.attention_dim"] = std::to_string(d.net_cfg.attention_dim);
  kv["net.num_heads"] = std::to_string(d.net_cfg.num_heads);
  kv["net.hidden_dim"] = std::to_string(d.net_cfg.hidden_dim);
  kv["net.num_layers"] = std::to_string(d.net_cfg.num_layers);
  kv["net.cond_dim"] = std::to_string(d.net_cfg.cond_dim);
  kv["net.feature_dim"] = std::to_string(d.net_cfg.feature_dim);
  kv["diffusion.num_steps"] = std::to_string(d.schedule.num_steps);
  kv["diffusion.K"] = std::to_string(d.subgoal_horizon);
  kv["steps"] = std::to_string(d.steps);
  std::string mean, stdv;
  for (int j = 0; j < d.norm.mean.size(); ++j) {
    mean += (j ? "," : "") + std::to_string(d.norm.mean(j));
    stdv += (j ? "," : "") + std::to_string(d.norm.std(j));
  }
  kv["norm.mean"] = mean;
  kv["norm.std"] = stdv;
  save_checkpoint(d.store, kv, path);
}

namespace {
Eigen::RowVectorXf parse_csv_row(const std::string& s) {
  std::vector<float> vals;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    vals.push_back(std::stof(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  Eigen::RowVectorXf v(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) v(int(i)) = vals[i];
  return v;
}
}  // namespace

DiffuserBundle load_diffuser(const std::string& path) {
  auto kv = read_checkpoint_meta(path);
  if (kv.count("kind") == 0 || kv["kind"] != "diffuser")
    throw DataError("not a diffuser checkpoint: " + path);
  SetTransformerConfig net;
  net.attention_dim = std::stoi(kv.at("net.attention_dim"));
  net.num_heads = std::stoi(kv.at("net.num_heads"));
  net.hidden_dim = std::stoi(kv.at("net.hidden_dim"));
  net.num_layers = std::stoi(kv.at("net.num_layers"));
  net.cond_dim = std::stoi(kv.at("net.cond_dim"));
  net.feature_dim = std::stoi(kv.at("net.feature_dim"));
  NormStats norm;
  norm.mean = parse_csv_row(kv.at("norm.mean"));
  norm.std = parse_csv_row(kv.at("norm.std"));
  DiffuserBundle d = DiffuserBundle::create(
      net, std::stoi(kv.at("diffusion.num_steps")),
      std::stoi(kv.at("diffusion.K")), norm, 0);
  d.steps = std::stoll(kv.at("steps"));
  load_checkpoint(d.store, path);
  return d;
}

}  // namespace diffgoal
