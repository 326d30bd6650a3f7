#include "diffgoal/iql.hpp"

#include <cmath>
#include <sstream>

namespace diffgoal {

AgentBundle AgentBundle::create(const SetTransformerConfig& net_cfg,
                                const IQLConfig& cfg, uint64_t seed) {
  net_cfg.validate();
  cfg.validate();
  AgentBundle a{.net_cfg = net_cfg,
                .cfg = cfg,
                .v_opt = Adam(cfg.learning_rate, cfg.grad_clip_norm),
                .q_opt = Adam(cfg.learning_rate, cfg.grad_clip_norm),
                .pi_opt = Adam(cfg.learning_rate, cfg.grad_clip_norm)};
  Rng rng(Rng::splitmix(seed ^ 0x1905ULL));
  a.v_net = PooledNet::create(a.v_store, "v", net_cfg, 1, false, false, rng);
  a.q1_net = PooledNet::create(a.q_store, "q1", net_cfg, 1, true, false, rng);
  a.q2_net = PooledNet::create(a.q_store, "q2", net_cfg, 1, true, false, rng);
  a.q1_target =
      PooledNet::create(a.q_target_store, "tq1", net_cfg, 1, true, false, rng);
  a.q2_target =
      PooledNet::create(a.q_target_store, "tq2", net_cfg, 1, true, false, rng);
  a.pi_net = PooledNet::create(a.pi_store, "pi", net_cfg, 2, false, true, rng);
  a.q_target_store.copy_values_from(a.q_store);
  return a;
}

namespace {
void check_finite(float loss, const char* what, int64_t step) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << what << ": non-finite loss " << loss << " at step " << step;
    throw NumericError(os.str());
  }
}
}  // namespace

float AgentBundle::update_value(const ValueBatch& batch) {
  Mat target;
  {
    Tape t;
    int a = t.leaf(batch.actions);
    int q1 = q1_target.forward(t, batch.state, batch.goal, a);
    int q2 = q2_target.forward(t, batch.state, batch.goal, a);
    target = t.val(q1).cwiseMin(t.val(q2));
  }
  Tape t;
  int v = v_net.forward(t, batch.state, batch.goal, -1);
  int loss = t.expectile_to(v, target, cfg.expectile);
  float L = t.val(loss)(0, 0);
  check_finite(L, "update_value", steps);
  t.backward(loss);
  v_opt.step(v_store);
  return L;
}

float AgentBundle::update_q(const ValueBatch& batch) {
  Mat target(batch.reward.size(), 1);
  {
    Tape t;
    int vn = v_net.forward(t, batch.next, batch.goal, -1);
    const Mat& v = t.val(vn);
    for (int i = 0; i < target.rows(); ++i)
      target(i, 0) =
          batch.reward(i) + cfg.discount * (1.0f - batch.done(i)) * v(i, 0);
  }
  Tape t;
  int a = t.leaf(batch.actions);
  int q1 = q1_net.forward(t, batch.state, batch.goal, a);
  int q2 = q2_net.forward(t, batch.state, batch.goal, a);
  int loss = t.add(t.mse_to(q1, target), t.mse_to(q2, target));
  float L = t.val(loss)(0, 0);
  check_finite(L, "update_q", steps);
  t.backward(loss);
  q_opt.step(q_store);
  q_target_store.ema_from(q_store, cfg.target_smoothing);
  return L;
}

float AgentBundle::update_policy(const PolicyBatch& batch) {
  Tape t;
  int a_pi = pi_net.forward(t, batch.state, batch.goal, -1);
  int q1 = q1_net.forward(t, batch.state, batch.goal, a_pi);
  int q2 = q2_net.forward(t, batch.state, batch.goal, a_pi);
  int qmin = t.min_elem(q1, q2);
  // scale-free Q term: normalize by the batch mean |Q| (detached)
  float qscale = std::max(1e-6f, t.val(qmin).cwiseAbs().mean());
  int loss_q = t.scale(t.mean_all(qmin), -1.0f / qscale);
  int loss_bc = t.mse_to(a_pi, batch.actions);
  int loss = t.add(loss_q, t.scale(loss_bc, cfg.bc_coefficient));
  float L = t.val(loss)(0, 0);
  check_finite(L, "update_policy", steps);
  t.backward(loss);
  pi_opt.step(pi_store);
  q_store.zero_grad();  // Q participates in the graph but is frozen here
  return L;
}

Vec2 AgentBundle::act(const EntitySet& state, const EntitySet& goal) const {
  EntityBatch s = EntityBatch::from_sets({state});
  EntityBatch g = EntityBatch::from_sets({goal});
  Tape t;
  int a = pi_net.forward(t, s, g, -1);
  const Mat& out = t.val(a);
  return Vec2(std::clamp(out(0, 0), -1.0f, 1.0f),
              std::clamp(out(0, 1), -1.0f, 1.0f));
}

Eigen::VectorXf AgentBundle::value(const EntityBatch& state,
                                   const EntityBatch& goal) const {
  Tape t;
  int v = v_net.forward(t, state, goal, -1);
  return t.val(v).col(0);
}

float AgentBundle::value1(const EntitySet& state, const EntitySet& goal) const {
  return value(EntityBatch::from_sets({state}),
               EntityBatch::from_sets({goal}))(0);
}

namespace {
std::map<std::string, std::string> agent_meta(const AgentBundle& a) {
  std::map<std::string, std::string> kv;
  kv["kind"] = "agent";
  kv["net.attention_dim"] = std::to_string(a.net_cfg.attention_dim);
  kv["net.num_heads"] = std::to_string(a.net_cfg.num_heads);
  kv["net.hidden_dim"] = std::to_string(a.net_cfg.hidden_dim);
  kv["net.num_layers"] = std::to_string(a.net_cfg.num_layers);
  kv["net.cond_dim"] = std::to_string(a.net_cfg.cond_dim);
  kv["net.feature_dim"] = std::to_string(a.net_cfg.feature_dim);
  kv["iql.discount"] = std::to_string(a.cfg.discount);
  kv["iql.target_smoothing"] = std::to_string(a.cfg.target_smoothing);
  kv["iql.expectile"] = std::to_string(a.cfg.expectile);
  kv["iql.learning_rate"] = std::to_string(a.cfg.learning_rate);
  kv["iql.batch_size"] = std::to_string(a.cfg.batch_size);
  kv["iql.grad_clip_norm"] = std::to_string(a.cfg.grad_clip_norm);
  kv["iql.bc_coefficient"] = std::to_string(a.cfg.bc_coefficient);
  kv["steps"] = std::to_string(a.steps);
  return kv;
}
}  // namespace

void save_agent(const AgentBundle& a, const std::string& path) {
  save_checkpoint({&a.v_store, &a.q_store, &a.q_target_store, &a.pi_store},
                  agent_meta(a), path);
}

AgentBundle load_agent(const std::string& path) {
  auto kv = read_checkpoint_meta(path);
  if (kv.count("kind") == 0 || kv["kind"] != "agent")
    throw DataError("not an agent checkpoint: " + path);
  SetTransformerConfig net;
  net.attention_dim = std::stoi(kv.at("net.attention_dim"));
  net.num_heads = std::stoi(kv.at("net.num_heads"));
  net.hidden_dim = std::stoi(kv.at("net.hidden_dim"));
  net.num_layers = std::stoi(kv.at("net.num_layers"));
  net.cond_dim = std::stoi(kv.at("net.cond_dim"));
  net.feature_dim = std::stoi(kv.at("net.feature_dim"));
  IQLConfig cfg;
  cfg.discount = std::stof(kv.at("iql.discount"));
  cfg.target_smoothing = std::stof(kv.at("iql.target_smoothing"));
  cfg.expectile = std::stof(kv.at("iql.expectile"));
  cfg.learning_rate = std::stof(kv.at("iql.learning_rate"));
  cfg.batch_size = std::stoi(kv.at("iql.batch_size"));
  cfg.grad_clip_norm = std::stof(kv.at("iql.grad_clip_norm"));
  cfg.bc_coefficient = std::stof(kv.at("iql.bc_coefficient"));
  AgentBundle a = AgentBundle::create(net, cfg, 0);
  a.steps = std::stoll(kv.at("steps"));
  load_checkpoint({&a.v_store, &a.q_store, &a.q_target_store, &a.pi_store},
                  path);
  return a;
}

}  // namespace diffgoal
