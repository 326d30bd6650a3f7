#include "diffgoal/harness.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

namespace diffgoal {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

namespace {

// Single schema definition shared by serialization and parsing.
template <typename F>
void visit_config(RunConfig& c, F&& f) {
  f("env.num_objects", c.env.num_objects);
  f("env.id_dim", c.env.id_dim);
  f("env.agent_radius", c.env.agent_radius);
  f("env.object_radius", c.env.object_radius);
  f("env.action_scale", c.env.action_scale);
  f("env.success_eps", c.env.success_eps);
  f("env.max_episode_steps", c.env.max_episode_steps);

  f("collect.interaction_radius", c.collect.interaction_radius);
  f("collect.retarget_interval", c.collect.retarget_interval);
  f("collect.episode_length", c.collect.episode_length);
  f("collect.num_transitions", c.collect.num_transitions);

  f("net.attention_dim", c.agent_net.attention_dim);
  f("net.num_heads", c.agent_net.num_heads);
  f("net.hidden_dim", c.agent_net.hidden_dim);
  f("net.num_layers", c.agent_net.num_layers);
  f("net.cond_dim", c.agent_net.cond_dim);

  f("denoiser.attention_dim", c.denoiser_net.attention_dim);
  f("denoiser.num_heads", c.denoiser_net.num_heads);
  f("denoiser.hidden_dim", c.denoiser_net.hidden_dim);
  f("denoiser.num_layers", c.denoiser_net.num_layers);
  f("denoiser.cond_dim", c.denoiser_net.cond_dim);

  f("iql.discount", c.iql.discount);
  f("iql.target_smoothing", c.iql.target_smoothing);
  f("iql.expectile", c.iql.expectile);
  f("iql.learning_rate", c.iql.learning_rate);
  f("iql.batch_size", c.iql.batch_size);
  f("iql.grad_clip_norm", c.iql.grad_clip_norm);
  f("iql.bc_coefficient", c.iql.bc_coefficient);

  f("diffuser.num_steps", c.diffusion_steps);
  f("diffuser.K", c.subgoal_horizon);

  f("awr.temperature", c.awr.temperature);
  f("awr.weight_clip", c.awr.weight_clip);
  f("awr.learning_rate", c.awr.learning_rate);
  f("awr.grad_clip_norm", c.awr.grad_clip_norm);

  f("controller.num_candidates", c.controller.num_candidates);
  f("controller.subgoal_steps", c.controller.subgoal_steps);
  f("controller.value_threshold", c.controller.value_threshold);

  f("train.iql_steps", c.train.iql_steps);
  f("train.diffuser_steps", c.train.diffuser_steps);
  f("train.diffuser_batch", c.train.diffuser_batch);
  f("train.diffuser_lr", c.train.diffuser_lr);
  f("train.diffuser_grad_clip", c.train.diffuser_grad_clip);
  f("train.awr_steps", c.train.awr_steps);
  f("train.awr_batch", c.train.awr_batch);
  f("train.log_every", c.train.log_every);

  f("eval.num_episodes", c.eval.num_episodes);
  f("eval.max_steps", c.eval.max_steps);
  f("eval.workers", c.eval.workers);
}

std::string fmt_value(int v) { return std::to_string(v); }
std::string fmt_value(float v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

void parse_into(const std::string& key, const std::string& text, int& out) {
  size_t used = 0;
  out = std::stoi(text, &used);
  if (used != text.size())
    throw ConfigError("config key " + key + ": expected integer, got '" + text + "'");
}
void parse_into(const std::string& key, const std::string& text, float& out) {
  size_t used = 0;
  out = std::stof(text, &used);
  if (used != text.size())
    throw ConfigError("config key " + key + ": expected number, got '" + text + "'");
}

}  // namespace

std::map<std::string, std::string> RunConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  auto& self = const_cast<RunConfig&>(*this);
  visit_config(self, [&kv](const std::string& key, auto& field) {
    kv[key] = fmt_value(field);
  });
  return kv;
}

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  std::map<std::string, std::string> pending = kv;
  visit_config(c, [&pending](const std::string& key, auto& field) {
    auto it = pending.find(key);
    if (it != pending.end()) {
      parse_into(key, it->second, field);
      pending.erase(it);
    }
  });
  if (!pending.empty())
    throw ConfigError("unknown config key: " + pending.begin()->first);
  c.finalize();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    std::string body = strip(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    std::string key = strip(body.substr(0, eq));
    std::string value = strip(body.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    if (kv.count(key))
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": duplicate key " + key);
    kv[key] = value;
  }
  return from_kv(kv);
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "full") return EvalMode::Full;
  if (s == "max_value") return EvalMode::MaxValue;
  if (s == "random_sample") return EvalMode::RandomSample;
  if (s == "awr") return EvalMode::Awr;
  if (s == "flat") return EvalMode::Flat;
  throw ConfigError("unknown mode: " + s +
                    " (expected full|max_value|random_sample|awr|flat)");
}

std::string eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::Full: return "full";
    case EvalMode::MaxValue: return "max_value";
    case EvalMode::RandomSample: return "random_sample";
    case EvalMode::Awr: return "awr";
    case EvalMode::Flat: return "flat";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Training drivers

AgentBundle train_rl(const RunConfig& cfg, const OfflineDataset& ds,
                     uint64_t seed, std::ostream* metrics) {
  AgentBundle agent = AgentBundle::create(cfg.agent_net, cfg.iql, seed);
  Rng rng(Rng::splitmix(seed ^ 0x71A1ULL));
  for (int step = 1; step <= cfg.train.iql_steps; ++step) {
    ValueBatch vb = sample_value_batch(ds, cfg.iql.batch_size, rng);
    float value_loss = agent.update_value(vb);
    float q_loss = agent.update_q(vb);
    PolicyBatch pb = sample_policy_batch(ds, cfg.iql.batch_size, rng);
    float policy_loss = agent.update_policy(pb);
    agent.steps = step;
    if (metrics && (step % cfg.train.log_every == 0 || step == 1)) {
      json rec{{"step", step},
               {"value_loss", value_loss},
               {"q_loss", q_loss},
               {"policy_loss", policy_loss}};
      (*metrics) << rec.dump() << "\n";
    }
  }
  return agent;
}

DiffuserBundle train_diffuser(const RunConfig& cfg, const OfflineDataset& ds,
                              uint64_t seed, std::ostream* metrics) {
  NormStats norm = compute_norm_stats(ds);
  DiffuserBundle d = DiffuserBundle::create(
      cfg.denoiser_net, cfg.diffusion_steps, cfg.subgoal_horizon, norm, seed,
      cfg.train.diffuser_lr, cfg.train.diffuser_grad_clip);
  Rng rng(Rng::splitmix(seed ^ 0xD1F2ULL));
  for (int step = 1; step <= cfg.train.diffuser_steps; ++step) {
    DiffuserBatch b = sample_diffuser_batch(ds, cfg.subgoal_horizon,
                                            cfg.train.diffuser_batch, rng);
    float loss = d.train_step(b, rng);
    if (metrics && (step % cfg.train.log_every == 0 || step == 1)) {
      json rec{{"step", step}, {"diffusion_loss", loss}};
      (*metrics) << rec.dump() << "\n";
    }
  }
  return d;
}

AWRGeneratorBundle train_awr(const RunConfig& cfg, const OfflineDataset& ds,
                             const AgentBundle& value_agent, uint64_t seed,
                             std::ostream* metrics) {
  NormStats norm = compute_norm_stats(ds);
  AWRGeneratorBundle a =
      AWRGeneratorBundle::create(cfg.agent_net, cfg.awr, norm, seed);
  Rng rng(Rng::splitmix(seed ^ 0xA3B4ULL));
  for (int step = 1; step <= cfg.train.awr_steps; ++step) {
    DiffuserBatch b = sample_diffuser_batch(ds, cfg.subgoal_horizon,
                                            cfg.train.awr_batch, rng);
    float loss = a.train_step(b, AgentValueOracle(value_agent));
    if (metrics && (step % cfg.train.log_every == 0 || step == 1)) {
      json rec{{"step", step}, {"awr_loss", loss}};
      (*metrics) << rec.dump() << "\n";
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

/// Wraps the deterministic AWR generator as a candidate source: every
/// candidate is the single prediction.
struct AwrGenerator final : SubgoalGenerator {
  const AWRGeneratorBundle* awr;
  explicit AwrGenerator(const AWRGeneratorBundle& a) : awr(&a) {}
  std::vector<EntitySet> propose(const EntitySet& state, const EntitySet& goal,
                                 int n, Rng&) const override {
    return std::vector<EntitySet>(size_t(n), awr->predict(state, goal));
  }
};

struct EpisodeOutcome {
  EpisodeRecord record;
};

EpisodeRecord eval_episode(const RunConfig& cfg, EvalMode mode,
                           const AgentBundle& agent,
                           const DiffuserBundle* diffuser,
                           const AWRGeneratorBundle* awr, int max_steps,
                           uint64_t episode_seed) {
  PushArena env(cfg.env);
  AgentPolicy policy(agent);
  AgentValueOracle value(agent);

  ControllerConfig ctrl = cfg.controller;
  std::unique_ptr<SubgoalGenerator> gen;
  switch (mode) {
    case EvalMode::Full:
      ctrl.mode = ControllerConfig::Mode::Full;
      gen = std::make_unique<DiffuserGenerator>(*diffuser);
      break;
    case EvalMode::MaxValue:
      ctrl.mode = ControllerConfig::Mode::MaxValue;
      gen = std::make_unique<DiffuserGenerator>(*diffuser);
      break;
    case EvalMode::RandomSample:
      ctrl.mode = ControllerConfig::Mode::RandomSample;
      gen = std::make_unique<DiffuserGenerator>(*diffuser);
      break;
    case EvalMode::Awr:
      ctrl.mode = ControllerConfig::Mode::Full;
      gen = std::make_unique<AwrGenerator>(*awr);
      break;
    case EvalMode::Flat:
      break;
  }

  EpisodeResult rr =
      rollout(env, policy, value, gen.get(), ctrl, max_steps, episode_seed);

  EpisodeRecord rec;
  rec.seed = episode_seed;
  rec.success = rr.success_at_end;
  rec.episode_return = rr.episode_return;
  rec.first_success_step = rr.first_success_step;
  rec.subgoal_refreshes = int(rr.subgoal_log.size());
  // sparsity of emitted subgoals, measured against the state at emission:
  // recomputed by replaying the seeded episode is wasteful, so rollout logs it
  float mod_sum = 0.0f;
  int mod_n = 0;
  for (const auto& sg : rr.subgoal_log) {
    if (sg.modified_entities >= 0) {
      mod_sum += float(sg.modified_entities);
      ++mod_n;
    }
  }
  rec.mean_modified_entities = mod_n > 0 ? mod_sum / float(mod_n) : 0.0f;
  return rec;
}

template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double stddev(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / double(xs.size()));
}

}  // namespace

EvalReport run_eval(const RunConfig& cfg, EvalMode mode,
                    const std::vector<const AgentBundle*>& agents,
                    const std::vector<const DiffuserBundle*>& diffusers,
                    const std::vector<const AWRGeneratorBundle*>& awrs,
                    uint64_t eval_seed) {
  if (agents.empty()) throw InputError("run_eval: no agents");
  if (cfg.eval.num_episodes < 1)
    throw InputError("run_eval: num_episodes must be >= 1");
  const bool needs_diffuser = mode == EvalMode::Full ||
                              mode == EvalMode::MaxValue ||
                              mode == EvalMode::RandomSample;
  if (needs_diffuser && diffusers.size() != agents.size())
    throw InputError("run_eval: one diffuser per agent required");
  if (mode == EvalMode::Awr && awrs.size() != agents.size())
    throw InputError("run_eval: one awr generator per agent required");

  for (const auto* a : agents) {
    if (a->net_cfg.feature_dim != 2 + cfg.env.id_dim)
      throw ConfigError(
          "agent/env mismatch on net.feature_dim: checkpoint has " +
          std::to_string(a->net_cfg.feature_dim) + ", env.id_dim implies " +
          std::to_string(2 + cfg.env.id_dim));
  }

  EvalReport report;
  report.mode = eval_mode_name(mode);
  report.num_episodes = cfg.eval.num_episodes;
  report.max_steps = cfg.eval.max_steps;

  std::vector<uint64_t> episode_seeds(size_t(cfg.eval.num_episodes));
  for (size_t i = 0; i < episode_seeds.size(); ++i)
    episode_seeds[i] = Rng::splitmix(eval_seed ^ (0x9E37ULL * (i + 1)));

  std::vector<double> rates, returns, mods;
  for (size_t k = 0; k < agents.size(); ++k) {
    SeedSummary summary;
    summary.agent_seed = k;
    summary.episodes.resize(size_t(cfg.eval.num_episodes));
    parallel_for(cfg.eval.num_episodes, cfg.eval.workers, [&](int i) {
      summary.episodes[size_t(i)] = eval_episode(
          cfg, mode, *agents[k], needs_diffuser ? diffusers[k] : nullptr,
          mode == EvalMode::Awr ? awrs[k] : nullptr, cfg.eval.max_steps,
          episode_seeds[size_t(i)]);
    });
    double succ = 0.0, ret = 0.0, mod = 0.0;
    for (const auto& e : summary.episodes) {
      succ += e.success ? 1.0 : 0.0;
      ret += double(e.episode_return);
      mod += double(e.mean_modified_entities);
    }
    summary.success_rate = succ / double(cfg.eval.num_episodes);
    summary.mean_return = ret / double(cfg.eval.num_episodes);
    summary.mean_steps = -summary.mean_return;
    summary.mean_modified_entities = mod / double(cfg.eval.num_episodes);
    rates.push_back(summary.success_rate);
    returns.push_back(summary.mean_return);
    mods.push_back(summary.mean_modified_entities);
    report.per_seed.push_back(std::move(summary));
  }

  auto mean_of = [](const std::vector<double>& xs) {
    double a = 0.0;
    for (double x : xs) a += x;
    return a / double(xs.size());
  };
  report.success_rate = mean_of(rates);
  report.success_rate_std = stddev(rates, report.success_rate);
  report.mean_return = mean_of(returns);
  report.mean_return_std = stddev(returns, report.mean_return);
  report.mean_steps = -report.mean_return;
  report.mean_modified_entities = mean_of(mods);

  report.fingerprint = cfg.to_kv();
  report.fingerprint["eval.seed"] = std::to_string(eval_seed);
  report.fingerprint["eval.mode"] = report.mode;
  report.fingerprint["eval.num_agents"] = std::to_string(agents.size());
  return report;
}

std::vector<EvalReport> run_generalize(
    const RunConfig& cfg, const std::vector<const AgentBundle*>& agents,
    const std::vector<const DiffuserBundle*>& diffusers,
    const std::vector<int>& object_counts, uint64_t eval_seed) {
  std::vector<EvalReport> reports;
  const int train_objects = cfg.env.num_objects;
  for (int count : object_counts) {
    RunConfig c = cfg;
    c.env.num_objects = count;
    c.eval.max_steps = int(std::lround(double(cfg.eval.max_steps) *
                                       double(count) / double(train_objects)));
    c.eval.max_steps = std::max(c.eval.max_steps, 1);
    c.finalize();
    EvalReport r = run_eval(c, EvalMode::Full, agents, diffusers, {}, eval_seed);
    r.fingerprint["generalize.train_objects"] = std::to_string(train_objects);
    r.fingerprint["generalize.eval_objects"] = std::to_string(count);
    reports.push_back(std::move(r));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Report serialization

std::string EvalReport::to_json() const {
  json j;
  j["mode"] = mode;
  j["num_episodes"] = num_episodes;
  j["max_steps"] = max_steps;
  j["success_rate"] = success_rate;
  j["success_rate_std"] = success_rate_std;
  j["mean_return"] = mean_return;
  j["mean_return_std"] = mean_return_std;
  j["mean_steps"] = mean_steps;
  j["mean_modified_entities"] = mean_modified_entities;
  j["fingerprint"] = fingerprint;
  json seeds = json::array();
  for (const auto& s : per_seed) {
    json js;
    js["agent_index"] = s.agent_seed;
    js["success_rate"] = s.success_rate;
    js["mean_return"] = s.mean_return;
    js["mean_steps"] = s.mean_steps;
    js["mean_modified_entities"] = s.mean_modified_entities;
    json eps = json::array();
    for (const auto& e : s.episodes) {
      eps.push_back({{"seed", e.seed},
                     {"success", e.success},
                     {"return", e.episode_return},
                     {"first_success_step", e.first_success_step},
                     {"subgoal_refreshes", e.subgoal_refreshes},
                     {"mean_modified_entities", e.mean_modified_entities}});
    }
    js["episodes"] = std::move(eps);
    seeds.push_back(std::move(js));
  }
  j["per_seed"] = std::move(seeds);
  return j.dump(2);
}

void EvalReport::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << to_json() << "\n";
}

}  // namespace diffgoal
