#pragma once

#include <map>

#include "diffgoal/tensor.hpp"

namespace diffgoal {

/// Widths follow the shared-hyperparameter defaults; desk-scale runs shrink
/// them through config files.
struct SetTransformerConfig {
  int attention_dim = 64;  // token width
  int num_heads = 8;
  int hidden_dim = 256;  // feedforward width
  int num_layers = 4;    // 8 for the denoiser
  int cond_dim = 64;     // conditioning embedding width (AdaLN source)
  int feature_dim = 9;   // per-entity features: 2 + id_dim

  void validate() const {
    if (attention_dim % num_heads != 0)
      throw ConfigError("attention_dim must be divisible by num_heads");
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  }
};

/// Token roles; learned additive affiliation embeddings, one per role.
enum TokenRole : int { kRoleState = 0, kRoleGoal = 1, kRoleNoisy = 2 };

struct Linear {
  Param* W = nullptr;
  Param* b = nullptr;
  static Linear create(ParamStore& ps, const std::string& name, int in, int out,
                       Init init, Rng& rng);
  int forward(Tape& t, int x) const;
};

/// LayerNorm, either with learned affine or modulated by a conditioning
/// vector (adaptive layer normalization). Modulation heads start at zero so
/// conditioning begins as identity.
struct AdaLayerNorm {
  bool conditioned = false;
  Param* gamma = nullptr;  // unconditioned branch
  Param* beta = nullptr;
  Linear scale_proj;  // conditioned branch: cond -> dim, zero-init
  Linear shift_proj;

  static AdaLayerNorm create(ParamStore& ps, const std::string& name, int dim,
                             int cond_dim, bool conditioned, Rng& rng);
  /// cond: node of shape B x cond_dim, or -1 when unconditioned.
  int forward(Tape& t, int x, int cond, int tokens_per_set) const;
};

struct TransformerBlock {
  AdaLayerNorm ln1, ln2;
  Linear wq, wk, wv, wo, ff1, ff2;

  static TransformerBlock create(ParamStore& ps, const std::string& name,
                                 const SetTransformerConfig& cfg,
                                 bool conditioned, Rng& rng);
  int forward(Tape& t, int x, int cond, int B, int L, int H) const;
};

/// Shared token stack: per-entity input projection + additive role
/// embeddings + self-attention blocks. No positional encodings anywhere, so
/// token order carries no signal.
struct EntityEncoder {
  SetTransformerConfig cfg;
  Linear input_proj;
  Param* role_table = nullptr;  // 3 x D
  std::vector<TransformerBlock> blocks;
  AdaLayerNorm final_ln;

  static EntityEncoder create(ParamStore& ps, const std::string& name,
                              const SetTransformerConfig& cfg, bool conditioned,
                              Rng& rng);
  /// features: (B*L) x feature_dim, roles: length B*L.
  int forward(Tape& t, const Mat& features, const std::vector<int>& roles,
              int B, int L, int cond) const;
};

/// Permutation-invariant head: encoder + single-query attention pooling +
/// MLP readout. Covers V, Q (action via AdaLN) and the policy (tanh output).
struct PooledNet {
  EntityEncoder enc;
  Param* pool_query = nullptr;
  Linear pool_k, pool_v;
  Linear head1, head2;
  bool tanh_output = false;
  Linear cond1, cond2;  // present iff conditioned (Q: action embedding)
  bool conditioned = false;

  static PooledNet create(ParamStore& ps, const std::string& name,
                          const SetTransformerConfig& cfg, int out_dim,
                          bool conditioned, bool tanh_output, Rng& rng);
  /// Output: B x out_dim. cond_input: node of shape B x 2 (raw actions) or -1.
  int forward(Tape& t, const EntityBatch& state, const EntityBatch& goal,
              int cond_input) const;
};

/// Noise-prediction network: noisy subgoal entities are denoised tokens,
/// state and goal entities enter clean and are never output targets.
struct DenoiserNet {
  EntityEncoder enc;
  Linear time1, time2;
  Linear out_proj;  // zero-init; predictions start at the uncorrelated baseline
  Mat time_table;   // (num_steps+1) x cond_dim, fixed sinusoidal

  static DenoiserNet create(ParamStore& ps, const std::string& name,
                            const SetTransformerConfig& cfg, int num_steps,
                            Rng& rng);
  /// noisy: (B*M) x feature_dim (normalized), taus: length B, values in
  /// [1, num_steps]. Returns (B*M) x feature_dim per-entity noise prediction.
  int forward(Tape& t, const Mat& noisy, const Mat& state, const Mat& goal,
              int B, int M, const std::vector<int>& taus) const;
};

/// Deterministic set-to-set generator (the weighted-regression ablation):
/// reads subgoal predictions off the state-token positions.
struct SetToSetNet {
  EntityEncoder enc;
  Linear out_proj;

  static SetToSetNet create(ParamStore& ps, const std::string& name,
                            const SetTransformerConfig& cfg, Rng& rng);
  int forward(Tape& t, const Mat& state, const Mat& goal, int B, int M) const;
};

/// Named-array checkpoint container with a config-echo key/value block.
/// Round-trips bit-exact.
void save_checkpoint(const ParamStore& ps,
                     const std::map<std::string, std::string>& config_echo,
                     const std::string& path);
void save_checkpoint(const std::vector<const ParamStore*>& stores,
                     const std::map<std::string, std::string>& config_echo,
                     const std::string& path);
std::map<std::string, std::string> read_checkpoint_meta(const std::string& path);
void load_checkpoint(ParamStore& ps, const std::string& path);
void load_checkpoint(const std::vector<ParamStore*>& stores,
                     const std::string& path);

/// Assembles the (B*L) x feat token feature matrix for [state | goal] input.
Mat concat_state_goal(const EntityBatch& state, const EntityBatch& goal);

}  // namespace diffgoal
