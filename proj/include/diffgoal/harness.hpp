#pragma once

#include <iosfwd>
#include <optional>

#include "diffgoal/awr.hpp"
#include "diffgoal/controller.hpp"

namespace diffgoal {

/// Training-loop and evaluation knobs beyond the component configs.
struct TrainParams {
  int iql_steps = 30000;
  int diffuser_steps = 12000;
  int diffuser_batch = 256;
  float diffuser_lr = 3e-4f;
  float diffuser_grad_clip = 20.0f;
  int awr_steps = 10000;
  int awr_batch = 256;
  int log_every = 500;
};

struct EvalParams {
  int num_episodes = 100;
  int max_steps = 300;
  int workers = 2;
};

/// Flat key/value run configuration; files hold `key = value` lines with
/// `#` comments. Unknown keys are errors. Every run's report embeds the
/// resolved key/value form verbatim.
struct RunConfig {
  EnvConfig env;
  CollectorConfig collect;
  SetTransformerConfig agent_net{.num_layers = 4};
  SetTransformerConfig denoiser_net{.num_layers = 8};
  IQLConfig iql;
  int diffusion_steps = 10;
  int subgoal_horizon = 50;  // K
  AWRConfig awr;
  ControllerConfig controller;
  TrainParams train;
  EvalParams eval;

  static RunConfig load(const std::string& path);
  static RunConfig from_kv(const std::map<std::string, std::string>& kv);
  std::map<std::string, std::string> to_kv() const;

  /// Net feature dims follow the env identity space.
  void finalize() {
    agent_net.feature_dim = 2 + env.id_dim;
    denoiser_net.feature_dim = 2 + env.id_dim;
  }
};

/// Evaluation mode: the three controller modes plus the AWR-generator swap
/// and the flat (no subgoal) baseline.
enum class EvalMode { Full, MaxValue, RandomSample, Awr, Flat };
EvalMode parse_eval_mode(const std::string& s);
std::string eval_mode_name(EvalMode m);

struct EpisodeRecord {
  uint64_t seed = 0;
  bool success = false;
  float episode_return = 0.0f;
  int first_success_step = -1;
  int subgoal_refreshes = 0;
  float mean_modified_entities = 0.0f;
};

struct SeedSummary {
  uint64_t agent_seed = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_steps = 0.0;  // -mean_return, the timestep-count reading
  double mean_modified_entities = 0.0;
  std::vector<EpisodeRecord> episodes;
};

struct EvalReport {
  std::string mode;
  int num_episodes = 0;
  int max_steps = 0;
  double success_rate = 0.0;
  double success_rate_std = 0.0;
  double mean_return = 0.0;
  double mean_return_std = 0.0;
  double mean_steps = 0.0;
  double mean_modified_entities = 0.0;
  std::vector<SeedSummary> per_seed;
  std::map<std::string, std::string> fingerprint;  // config + hashes + seeds

  std::string to_json() const;
  void save(const std::string& path) const;
};

/// One trained stack (single seed).
struct TrainedStack {
  AgentBundle agent;
  std::optional<DiffuserBundle> diffuser;
  std::optional<AWRGeneratorBundle> awr;
};

/// Training drivers. Metrics stream is line-delimited JSON records.
AgentBundle train_rl(const RunConfig& cfg, const OfflineDataset& ds,
                     uint64_t seed, std::ostream* metrics);
DiffuserBundle train_diffuser(const RunConfig& cfg, const OfflineDataset& ds,
                              uint64_t seed, std::ostream* metrics);
AWRGeneratorBundle train_awr(const RunConfig& cfg, const OfflineDataset& ds,
                             const AgentBundle& value_agent, uint64_t seed,
                             std::ostream* metrics);

/// Seeded multi-episode evaluation of one or more trained seeds. Episode
/// seeds derive from eval_seed and are shared across seeds and modes; the
/// report aggregates mean and standard deviation across seeds.
EvalReport run_eval(const RunConfig& cfg, EvalMode mode,
                    const std::vector<const AgentBundle*>& agents,
                    const std::vector<const DiffuserBundle*>& diffusers,
                    const std::vector<const AWRGeneratorBundle*>& awrs,
                    uint64_t eval_seed);

/// Entity-count generalization sweep; max_steps scales proportionally with
/// the object count relative to the training count.
std::vector<EvalReport> run_generalize(const RunConfig& cfg,
                                       const std::vector<const AgentBundle*>& agents,
                                       const std::vector<const DiffuserBundle*>& diffusers,
                                       const std::vector<int>& object_counts,
                                       uint64_t eval_seed);

}  // namespace diffgoal
