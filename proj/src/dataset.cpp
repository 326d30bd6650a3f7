#include "diffgoal/dataset.hpp"

#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace diffgoal {

void CollectorConfig::validate(const EnvConfig& env) const {
  if (interaction_radius <= env.agent_radius)
    throw ConfigError("interaction_radius must exceed agent_radius");
  if (retarget_interval < 1) throw ConfigError("retarget_interval must be >= 1");
  if (episode_length < 1) throw ConfigError("episode_length must be >= 1");
  if (num_transitions < 1) throw ConfigError("num_transitions must be >= 1");
}

OfflineDataset collect(const EnvConfig& env_cfg, const CollectorConfig& col,
                       uint64_t seed) {
  env_cfg.validate();
  col.validate(env_cfg);
  if (env_cfg.num_objects < 1)
    throw ConfigError("collect: needs at least one object to interact with");

  OfflineDataset ds;
  ds.env_config = env_cfg;
  Rng master(seed);

  const int num_episodes =
      (col.num_transitions + col.episode_length - 1) / col.episode_length;
  constexpr int kMaxResamples = 256;

  for (int ep = 0; ep < num_episodes; ++ep) {
    Rng rng = master.derive(ep);
    uint64_t env_seed = Rng::splitmix(seed ^ (0xABCDULL + ep));
    PushArena env(env_cfg);
    auto [state, goal] = env.reset(env_seed);
    (void)goal;  // the collector is goal-agnostic

    Trajectory traj;
    traj.seed = int64_t(env_seed);
    traj.env_config = env_cfg;
    traj.states.push_back(state);

    int target_row = -1;
    for (int t = 0; t < col.episode_length; ++t) {
      if (t % col.retarget_interval == 0) {
        // uniform over object rows (row 0 may be the agent; skip it)
        std::vector<int> object_rows;
        for (int m = 0; m < state.size(); ++m)
          if (!state.is_agent(m)) object_rows.push_back(m);
        target_row = object_rows[rng.uniform_int(object_rows.size())];
      }
      const Vec2 target_pos = state.position(target_row);
      const int agent = state.agent_row();
      const Vec2 agent_pos = state.position(agent);

      Vec2 action, best_action;
      float best_dist = std::numeric_limits<float>::infinity();
      bool accepted = false;
      for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
        action = Vec2(float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0)));
        Vec2 next_pos = agent_pos + action * env_cfg.action_scale;
        next_pos.x() = std::clamp(next_pos.x(), 0.0f, 1.0f);
        next_pos.y() = std::clamp(next_pos.y(), 0.0f, 1.0f);
        float d = (next_pos - target_pos).norm();
        if (d <= col.interaction_radius) {
          accepted = true;
          break;
        }
        if (d < best_dist) {
          best_dist = d;
          best_action = action;
        }
      }
      if (!accepted) action = best_action;

      auto res = env.step(action);
      state = res.state;
      traj.actions.push_back(action);
      traj.states.push_back(state);
    }
    ds.trajectories.push_back(std::move(traj));
  }

  ds.recount();
  ds.metadata["collector.interaction_radius"] = std::to_string(col.interaction_radius);
  ds.metadata["collector.retarget_interval"] = std::to_string(col.retarget_interval);
  ds.metadata["collector.episode_length"] = std::to_string(col.episode_length);
  ds.metadata["collector.num_transitions"] = std::to_string(col.num_transitions);
  ds.metadata["collector.seed"] = std::to_string(seed);
  ds.metadata["total_transitions"] = std::to_string(ds.total_transitions);
  return ds;
}

namespace {

constexpr char kMagic[4] = {'D', 'G', 'D', 'S'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("dataset file truncated");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& is) {
  uint32_t n = read_pod<uint32_t>(is);
  if (n > (1u << 24)) throw DataError("dataset file corrupt: string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("dataset file truncated");
  return s;
}

void write_floats(std::ostream& os, const float* p, size_t n) {
  write_pod<uint64_t>(os, uint64_t(n));
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(float)));
}

void read_floats(std::istream& is, float* p, size_t expect) {
  uint64_t n = read_pod<uint64_t>(is);
  if (n != expect) throw DataError("dataset file corrupt: array length");
  is.read(reinterpret_cast<char*>(p), std::streamsize(n * sizeof(float)));
  if (!is) throw DataError("dataset file truncated");
}

std::map<std::string, std::string> env_to_kv(const EnvConfig& e) {
  std::map<std::string, std::string> kv;
  kv["env.num_objects"] = std::to_string(e.num_objects);
  kv["env.id_dim"] = std::to_string(e.id_dim);
  kv["env.agent_radius"] = std::to_string(e.agent_radius);
  kv["env.object_radius"] = std::to_string(e.object_radius);
  kv["env.action_scale"] = std::to_string(e.action_scale);
  kv["env.success_eps"] = std::to_string(e.success_eps);
  kv["env.max_episode_steps"] = std::to_string(e.max_episode_steps);
  return kv;
}

EnvConfig env_from_kv(const std::map<std::string, std::string>& kv) {
  EnvConfig e;
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError("dataset file missing key " + k);
    return it->second;
  };
  e.num_objects = std::stoi(get("env.num_objects"));
  e.id_dim = std::stoi(get("env.id_dim"));
  e.agent_radius = std::stof(get("env.agent_radius"));
  e.object_radius = std::stof(get("env.object_radius"));
  e.action_scale = std::stof(get("env.action_scale"));
  e.success_eps = std::stof(get("env.success_eps"));
  e.max_episode_steps = std::stoi(get("env.max_episode_steps"));
  return e;
}

}  // namespace

void save_dataset(const OfflineDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);

  auto kv = ds.metadata;
  for (const auto& [k, v] : env_to_kv(ds.env_config)) kv[k] = v;
  write_pod<uint32_t>(os, uint32_t(kv.size()));
  for (const auto& [k, v] : kv) {
    write_string(os, k);
    write_string(os, v);
  }

  const int entities = ds.trajectories.empty() ? ds.env_config.num_entities()
                                               : ds.trajectories[0].states[0].size();
  const int id_dim = ds.env_config.id_dim;
  write_pod<uint32_t>(os, uint32_t(entities));
  write_pod<uint32_t>(os, uint32_t(id_dim));
  write_pod<uint32_t>(os, uint32_t(2 + id_dim));

  write_pod<uint64_t>(os, uint64_t(ds.trajectories.size()));
  for (const auto& traj : ds.trajectories) {
    write_pod<int64_t>(os, traj.seed);
    write_pod<uint32_t>(os, uint32_t(traj.actions.size()));
    for (const auto& s : traj.states) {
      Eigen::MatrixXf f = s.features();  // row-major stream, row by row
      for (int m = 0; m < f.rows(); ++m)
        os.write(reinterpret_cast<const char*>(Eigen::RowVectorXf(f.row(m)).data()),
                 std::streamsize(f.cols() * sizeof(float)));
    }
    std::vector<float> acts;
    acts.reserve(traj.actions.size() * 2);
    for (const auto& a : traj.actions) {
      acts.push_back(a.x());
      acts.push_back(a.y());
    }
    write_floats(os, acts.data(), acts.size());
  }
  if (!os) throw DataError("write failed: " + path);
}

OfflineDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a dataset file: " + path);
  uint32_t version = read_pod<uint32_t>(is);
  if (version != kVersion) throw DataError("dataset version mismatch");

  OfflineDataset ds;
  uint32_t kv_count = read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < kv_count; ++i) {
    std::string k = read_string(is);
    ds.metadata[k] = read_string(is);
  }
  ds.env_config = env_from_kv(ds.metadata);

  uint32_t entities = read_pod<uint32_t>(is);
  uint32_t id_dim = read_pod<uint32_t>(is);
  uint32_t feat = read_pod<uint32_t>(is);
  if (feat != 2 + id_dim || int(id_dim) != ds.env_config.id_dim)
    throw DataError("dataset file corrupt: feature dims");

  uint64_t num_traj = read_pod<uint64_t>(is);
  int skipped = 0;
  for (uint64_t i = 0; i < num_traj; ++i) {
    Trajectory traj;
    traj.seed = read_pod<int64_t>(is);
    traj.env_config = ds.env_config;
    uint32_t T = read_pod<uint32_t>(is);
    for (uint32_t t = 0; t <= T; ++t) {
      Eigen::MatrixXf f(entities, feat);
      for (uint32_t m = 0; m < entities; ++m) {
        Eigen::RowVectorXf row(feat);
        is.read(reinterpret_cast<char*>(row.data()),
                std::streamsize(feat * sizeof(float)));
        if (!is) throw DataError("dataset file truncated");
        f.row(m) = row;
      }
      traj.states.push_back(EntitySet::from_features(f, int(id_dim)));
    }
    std::vector<float> acts(size_t(T) * 2);
    read_floats(is, acts.data(), acts.size());
    for (uint32_t t = 0; t < T; ++t)
      traj.actions.emplace_back(acts[2 * t], acts[2 * t + 1]);
    if (traj.num_transitions() < 1) {
      ++skipped;
      continue;
    }
    ds.trajectories.push_back(std::move(traj));
  }
  if (skipped > 0)
    std::cerr << "load_dataset: skipped " << skipped
              << " trajectories with < 1 transition\n";
  ds.recount();
  return ds;
}

void verify_replay(const OfflineDataset& ds) {
  for (size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& traj = ds.trajectories[i];
    EntitySet s = traj.states[0];
    for (size_t t = 0; t < traj.actions.size(); ++t) {
      s = PushArena::step_dynamics(traj.env_config, s, traj.actions[t]);
      if (!(s == traj.states[t + 1]))
        throw DataError("replay mismatch in trajectory " + std::to_string(i) +
                        " at step " + std::to_string(t));
    }
  }
}

uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a_bytes(buf, size_t(is.gcount()), h);
  }
  return h;
}

}  // namespace diffgoal
