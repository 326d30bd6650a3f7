#include "diffgoal/awr.hpp"

#include <cmath>

namespace diffgoal {

float chamfer_distance(const EntitySet& a, const EntitySet& b) {
  if (a.size() < 1 || b.size() < 1)
    throw InputError("chamfer_distance: empty set");
  if (a.feature_dim() != b.feature_dim())
    throw InputError("chamfer_distance: feature dim mismatch");
  auto one_way = [](const EntitySet& x, const EntitySet& y) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      float best = std::numeric_limits<float>::infinity();
      for (int j = 0; j < y.size(); ++j)
        best = std::min(best,
                        (x.features().row(i) - y.features().row(j)).squaredNorm());
      acc += best;
    }
    return float(acc / double(x.size()));
  };
  return one_way(a, b) + one_way(b, a);
}

int count_modified_entities(const EntitySet& state, const EntitySet& subgoal,
                            float threshold) {
  if (!same_identities(state, subgoal))
    throw InputError("count_modified_entities: identity sets differ");
  int count = 0;
  for (int m = 0; m < state.size(); ++m) {
    int id = state.identity_index(m);
    if (id == 0) continue;  // agent excluded
    int n = subgoal.find_identity(id);
    if ((state.position(m) - subgoal.position(n)).norm() > threshold) ++count;
  }
  return count;
}

AWRGeneratorBundle AWRGeneratorBundle::create(
    const SetTransformerConfig& net_cfg, const AWRConfig& cfg,
    const NormStats& norm, uint64_t seed) {
  net_cfg.validate();
  cfg.validate();
  AWRGeneratorBundle a{.net_cfg = net_cfg,
                       .cfg = cfg,
                       .norm = norm,
                       .opt = Adam(cfg.learning_rate, cfg.grad_clip_norm)};
  Rng rng(Rng::splitmix(seed ^ 0xA37ULL));
  a.net = SetToSetNet::create(a.store, "awr", net_cfg, rng);
  return a;
}

float AWRGeneratorBundle::train_step(const DiffuserBatch& batch,
                                     const ValueOracle& value) {
  const int B = batch.state.batch;
  const int M = batch.state.entities;
  const int id_dim = batch.state.feat_dim - 2;

  // advantage weights from the frozen value function on raw entity sets
  std::vector<EntitySet> subs, goals, states;
  for (int b = 0; b < B; ++b) {
    subs.push_back(batch.subgoal.set(b, id_dim));
    goals.push_back(batch.goal.set(b, id_dim));
    states.push_back(batch.state.set(b, id_dim));
  }
  Eigen::VectorXf v_sub_goal = value.value_pairs(subs, goals);
  Eigen::VectorXf v_state_goal = value.value_pairs(states, goals);
  Eigen::VectorXf w(B);
  for (int b = 0; b < B; ++b) {
    float adv = v_sub_goal(b) - v_state_goal(b);
    w(b) = std::min(std::exp(cfg.temperature * adv), cfg.weight_clip);
    if (!std::isfinite(w(b)))
      throw NumericError("awr train_step: non-finite weight at step " +
                         std::to_string(steps));
  }

  Mat s = norm.normalize(batch.state.features);
  Mat g = norm.normalize(batch.goal.features);
  Mat target = norm.normalize(batch.subgoal.features);

  Tape t;
  int pred = net.forward(t, s, g, B, M);
  const Mat& P = t.val(pred);

  // Chamfer loss with gradients routed through the argmin matches.
  // term 1: each predicted entity to its nearest target entity
  Mat matched_t(B * M, P.cols());
  Eigen::VectorXf row_w(B * M);
  // term 2: each target entity to its nearest predicted entity
  std::vector<int> pred_idx(size_t(B) * M);
  for (int b = 0; b < B; ++b) {
    for (int m = 0; m < M; ++m) {
      int r = b * M + m;
      float best1 = std::numeric_limits<float>::infinity();
      int j1 = 0;
      float best2 = std::numeric_limits<float>::infinity();
      int j2 = 0;
      for (int j = 0; j < M; ++j) {
        float d1 = (P.row(r) - target.row(b * M + j)).squaredNorm();
        if (d1 < best1) {
          best1 = d1;
          j1 = j;
        }
        float d2 = (target.row(r) - P.row(b * M + j)).squaredNorm();
        if (d2 < best2) {
          best2 = d2;
          j2 = j;
        }
      }
      matched_t.row(r) = target.row(b * M + j1);
      pred_idx[r] = b * M + j2;
      row_w(r) = w(b) / float(M);
    }
  }
  const float denom = float(B);
  int term1 = t.weighted_sq_rows(pred, matched_t, row_w, denom);
  int gathered = t.gather_rows(pred, pred_idx);
  int term2 = t.weighted_sq_rows(gathered, target, row_w, denom);
  int loss = t.add(term1, term2);

  float L = t.val(loss)(0, 0);
  if (!std::isfinite(L))
    throw NumericError("awr train_step: non-finite loss at step " +
                       std::to_string(steps));
  t.backward(loss);
  opt.step(store);
  ++steps;
  return L;
}

Mat AWRGeneratorBundle::predict_features(const EntitySet& state,
                                         const EntitySet& goal) const {
  Mat s = norm.normalize(state.features());
  Mat g = norm.normalize(goal.features());
  Tape t;
  int pred = net.forward(t, s, g, 1, state.size());
  return norm.denormalize(t.val(pred));
}

EntitySet AWRGeneratorBundle::predict(const EntitySet& state,
                                      const EntitySet& goal) const {
  return snap_to_valid(predict_features(state, goal), state);
}

void save_awr(const AWRGeneratorBundle& a, const std::string& path) {
  std::map<std::string, std::string> kv;
  kv["kind"] = "awr";
  kv["net.attention_dim"] = std::to_string(a.net_cfg.attention_dim);
  kv["net.num_heads"] = std::to_string(a.net_cfg.num_heads);
  kv["net.hidden_dim"] = std::to_string(a.net_cfg.hidden_dim);
  kv["net.num_layers"] = std::to_string(a.net_cfg.num_layers);
  kv["net.cond_dim"] = std::to_string(a.net_cfg.cond_dim);
  kv["net.feature_dim"] = std::to_string(a.net_cfg.feature_dim);
  kv["awr.temperature"] = std::to_string(a.cfg.temperature);
  kv["awr.weight_clip"] = std::to_string(a.cfg.weight_clip);
  kv["steps"] = std::to_string(a.steps);
  std::string mean, stdv;
  for (int j = 0; j < a.norm.mean.size(); ++j) {
    mean += (j ? "," : "") + std::to_string(a.norm.mean(j));
    stdv += (j ? "," : "") + std::to_string(a.norm.std(j));
  }
  kv["norm.mean"] = mean;
  kv["norm.std"] = stdv;
  save_checkpoint(a.store, kv, path);
}

namespace {
Eigen::RowVectorXf parse_csv(const std::string& s) {
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

AWRGeneratorBundle load_awr(const std::string& path) {
  auto kv = read_checkpoint_meta(path);
  if (kv.count("kind") == 0 || kv["kind"] != "awr")
    throw DataError("not an awr checkpoint: " + path);
  SetTransformerConfig net;
  net.attention_dim = std::stoi(kv.at("net.attention_dim"));
  net.num_heads = std::stoi(kv.at("net.num_heads"));
  net.hidden_dim = std::stoi(kv.at("net.hidden_dim"));
  net.num_layers = std::stoi(kv.at("net.num_layers"));
  net.cond_dim = std::stoi(kv.at("net.cond_dim"));
  net.feature_dim = std::stoi(kv.at("net.feature_dim"));
  AWRConfig cfg;
  cfg.temperature = std::stof(kv.at("awr.temperature"));
  cfg.weight_clip = std::stof(kv.at("awr.weight_clip"));
  NormStats norm;
  norm.mean = parse_csv(kv.at("norm.mean"));
  norm.std = parse_csv(kv.at("norm.std"));
  AWRGeneratorBundle a = AWRGeneratorBundle::create(net, cfg, norm, 0);
  a.steps = std::stoll(kv.at("steps"));
  load_checkpoint(a.store, path);
  return a;
}

}  // namespace diffgoal
