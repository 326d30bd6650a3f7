// Command-line entry point: data collection, training, evaluation,
// generalization and hyperparameter sweeps over the pushing suite.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "diffgoal/harness.hpp"

using namespace diffgoal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 0;
  std::string out_dir = ".";
};

RunConfig load_config(const CommonOpts& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  cfg.finalize();
  return cfg;
}

void ensure_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output dir: " + dir);
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

std::vector<const AgentBundle*> ptrs(const std::vector<AgentBundle>& v) {
  std::vector<const AgentBundle*> out;
  for (const auto& a : v) out.push_back(&a);
  return out;
}
std::vector<const DiffuserBundle*> ptrs(const std::vector<DiffuserBundle>& v) {
  std::vector<const DiffuserBundle*> out;
  for (const auto& a : v) out.push_back(&a);
  return out;
}
std::vector<const AWRGeneratorBundle*> ptrs(
    const std::vector<AWRGeneratorBundle>& v) {
  std::vector<const AWRGeneratorBundle*> out;
  for (const auto& a : v) out.push_back(&a);
  return out;
}

void attach_artifact_hashes(EvalReport& report,
                            const std::vector<std::string>& agent_paths,
                            const std::vector<std::string>& diffuser_paths,
                            const std::vector<std::string>& awr_paths) {
  for (size_t i = 0; i < agent_paths.size(); ++i)
    report.fingerprint["hash.agent." + std::to_string(i)] =
        hash_hex(fnv1a_file(agent_paths[i]));
  for (size_t i = 0; i < diffuser_paths.size(); ++i)
    report.fingerprint["hash.diffuser." + std::to_string(i)] =
        hash_hex(fnv1a_file(diffuser_paths[i]));
  for (size_t i = 0; i < awr_paths.size(); ++i)
    report.fingerprint["hash.awr." + std::to_string(i)] =
        hash_hex(fnv1a_file(awr_paths[i]));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-factored subgoal diffusion over goal-conditioned RL"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string dataset_path, agent_path;
  std::vector<std::string> agent_paths, diffuser_paths, awr_paths;
  std::string mode_str = "full";
  int episodes_override = -1;
  std::vector<int> objects;
  std::string sweep_param;
  std::vector<float> sweep_values;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "Run config file");
    cmd->add_option("--seed", common.seed, "Master seed");
    cmd->add_option("--out", common.out_dir, "Output directory");
  };

  auto* c_collect = app.add_subcommand("collect", "Collect an offline dataset");
  add_common(c_collect);

  auto* c_train_rl = app.add_subcommand("train-rl", "Train the IQL agent");
  add_common(c_train_rl);
  c_train_rl->add_option("--dataset", dataset_path, "Dataset file")->required();

  auto* c_train_diff =
      app.add_subcommand("train-diffuser", "Train the subgoal diffusion model");
  add_common(c_train_diff);
  c_train_diff->add_option("--dataset", dataset_path, "Dataset file")->required();

  auto* c_train_awr =
      app.add_subcommand("train-awr", "Train the weighted-regression generator");
  add_common(c_train_awr);
  c_train_awr->add_option("--dataset", dataset_path, "Dataset file")->required();
  c_train_awr->add_option("--agent", agent_path, "Agent checkpoint (value source)")
      ->required();

  auto* c_eval = app.add_subcommand("eval", "Evaluate trained checkpoints");
  add_common(c_eval);
  c_eval->add_option("--agent", agent_paths, "Agent checkpoint(s)")->required();
  c_eval->add_option("--diffuser", diffuser_paths, "Diffuser checkpoint(s)");
  c_eval->add_option("--awr", awr_paths, "AWR generator checkpoint(s)");
  c_eval->add_option("--mode", mode_str,
                     "full|max_value|random_sample|awr|flat");
  c_eval->add_option("--episodes", episodes_override, "Episode count override");

  auto* c_gen = app.add_subcommand("generalize",
                                   "Evaluate across object counts");
  add_common(c_gen);
  c_gen->add_option("--agent", agent_paths, "Agent checkpoint(s)")->required();
  c_gen->add_option("--diffuser", diffuser_paths, "Diffuser checkpoint(s)")
      ->required();
  c_gen->add_option("--objects", objects, "Object counts to evaluate")
      ->required();
  c_gen->add_option("--episodes", episodes_override, "Episode count override");

  auto* c_sweep = app.add_subcommand("sweep", "Hyperparameter sweep");
  add_common(c_sweep);
  c_sweep->add_option("--dataset", dataset_path,
                      "Dataset file (required for K sweeps)");
  c_sweep->add_option("--agent", agent_paths, "Agent checkpoint(s)")->required();
  c_sweep->add_option("--diffuser", diffuser_paths,
                      "Diffuser checkpoint(s) (for T_sg and N sweeps)");
  c_sweep->add_option("--param", sweep_param, "K|T_sg|N")->required();
  c_sweep->add_option("--values", sweep_values, "Sweep values")->required();
  c_sweep->add_option("--episodes", episodes_override, "Episode count override");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(common);
    if (episodes_override == 0) throw InputError("episodes must be >= 1");
    if (episodes_override > 0) cfg.eval.num_episodes = episodes_override;
    ensure_out(common.out_dir);
    fs::path out(common.out_dir);

    if (*c_collect) {
      OfflineDataset ds = collect(cfg.env, cfg.collect, common.seed);
      std::string path = (out / "dataset.bin").string();
      save_dataset(ds, path);
      std::cout << "dataset: " << path << "\n"
                << "transitions: " << ds.total_transitions << "\n"
                << "hash: " << hash_hex(fnv1a_file(path)) << "\n";
    } else if (*c_train_rl) {
      OfflineDataset ds = load_dataset(dataset_path);
      std::ofstream metrics((out / "metrics_rl.jsonl").string());
      AgentBundle agent = train_rl(cfg, ds, common.seed, &metrics);
      std::string path = (out / "agent.ckpt").string();
      save_agent(agent, path);
      std::cout << "agent: " << path << "\n"
                << "hash: " << hash_hex(fnv1a_file(path)) << "\n";
    } else if (*c_train_diff) {
      OfflineDataset ds = load_dataset(dataset_path);
      std::ofstream metrics((out / "metrics_diffuser.jsonl").string());
      DiffuserBundle d = train_diffuser(cfg, ds, common.seed, &metrics);
      std::string path = (out / "diffuser.ckpt").string();
      save_diffuser(d, path);
      std::cout << "diffuser: " << path << "\n"
                << "hash: " << hash_hex(fnv1a_file(path)) << "\n";
    } else if (*c_train_awr) {
      OfflineDataset ds = load_dataset(dataset_path);
      AgentBundle agent = load_agent(agent_path);
      std::ofstream metrics((out / "metrics_awr.jsonl").string());
      AWRGeneratorBundle a = train_awr(cfg, ds, agent, common.seed, &metrics);
      std::string path = (out / "awr.ckpt").string();
      save_awr(a, path);
      std::cout << "awr: " << path << "\n"
                << "hash: " << hash_hex(fnv1a_file(path)) << "\n";
    } else if (*c_eval) {
      EvalMode mode = parse_eval_mode(mode_str);
      std::vector<AgentBundle> agents;
      for (const auto& p : agent_paths) agents.push_back(load_agent(p));
      std::vector<DiffuserBundle> diffusers;
      for (const auto& p : diffuser_paths) diffusers.push_back(load_diffuser(p));
      std::vector<AWRGeneratorBundle> awrs;
      for (const auto& p : awr_paths) awrs.push_back(load_awr(p));
      EvalReport report = run_eval(cfg, mode, ptrs(agents), ptrs(diffusers),
                                   ptrs(awrs), common.seed);
      attach_artifact_hashes(report, agent_paths, diffuser_paths, awr_paths);
      std::string path =
          (out / ("report_" + eval_mode_name(mode) + ".json")).string();
      report.save(path);
      std::cout << "report: " << path << "\n"
                << "success_rate: " << report.success_rate << " +- "
                << report.success_rate_std << "\n"
                << "mean_steps: " << report.mean_steps << "\n";
    } else if (*c_gen) {
      std::vector<AgentBundle> agents;
      for (const auto& p : agent_paths) agents.push_back(load_agent(p));
      std::vector<DiffuserBundle> diffusers;
      for (const auto& p : diffuser_paths) diffusers.push_back(load_diffuser(p));
      auto reports = run_generalize(cfg, ptrs(agents), ptrs(diffusers), objects,
                                    common.seed);
      for (size_t i = 0; i < reports.size(); ++i) {
        attach_artifact_hashes(reports[i], agent_paths, diffuser_paths, {});
        std::string path =
            (out / ("report_objects" + std::to_string(objects[i]) + ".json"))
                .string();
        reports[i].save(path);
        std::cout << "objects " << objects[i]
                  << ": success_rate=" << reports[i].success_rate << "\n";
      }
    } else if (*c_sweep) {
      std::vector<AgentBundle> agents;
      for (const auto& p : agent_paths) agents.push_back(load_agent(p));

      json series = json::array();
      for (float value : sweep_values) {
        RunConfig c = cfg;
        std::vector<DiffuserBundle> diffusers;
        bool retrained = false;
        if (sweep_param == "K") {
          if (dataset_path.empty())
            throw ConfigError("sweep K requires --dataset (retraining)");
          c.subgoal_horizon = int(value);
          OfflineDataset ds = load_dataset(dataset_path);
          for (size_t k = 0; k < agents.size(); ++k)
            diffusers.push_back(train_diffuser(c, ds, common.seed + k, nullptr));
          retrained = true;
        } else if (sweep_param == "T_sg") {
          c.controller.subgoal_steps = int(value);
          for (const auto& p : diffuser_paths)
            diffusers.push_back(load_diffuser(p));
        } else if (sweep_param == "N") {
          c.controller.num_candidates = int(value);
          for (const auto& p : diffuser_paths)
            diffusers.push_back(load_diffuser(p));
        } else {
          throw ConfigError("sweep param must be one of K|T_sg|N");
        }
        EvalReport report = run_eval(c, EvalMode::Full, ptrs(agents),
                                     ptrs(diffusers), {}, common.seed);
        attach_artifact_hashes(report, agent_paths,
                               retrained ? std::vector<std::string>{}
                                         : diffuser_paths,
                               {});
        report.fingerprint["sweep.param"] = sweep_param;
        report.fingerprint["sweep.value"] = std::to_string(value);
        report.fingerprint["sweep.diffuser_retrained"] =
            retrained ? "true" : "false";
        std::cout << sweep_param << "=" << value
                  << ": success_rate=" << report.success_rate << "\n";
        series.push_back(json::parse(report.to_json()));
      }
      std::string path = (out / ("sweep_" + sweep_param + ".json")).string();
      std::ofstream os(path);
      os << series.dump(2) << "\n";
      std::cout << "series: " << path << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
