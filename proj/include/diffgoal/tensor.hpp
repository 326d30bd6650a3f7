#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffgoal/entity.hpp"
#include "diffgoal/rng.hpp"

namespace diffgoal {

using Mat = Eigen::MatrixXf;

/// A trainable array plus its gradient and Adam state.
struct Param {
  std::string name;
  Mat v;
  Mat g;
  Mat adam_m, adam_v;

  void zero_grad() { g.setZero(); }
};

enum class Init { Zero, One, Xavier, Normal02 };

/// Owns parameters; registration order is fixed so a seed reproduces the same
/// initialisation and checkpoints map by name.
class ParamStore {
 public:
  Param* add(const std::string& name, int rows, int cols, Init init, Rng& rng);
  Param* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  void zero_grad();
  size_t num_scalars() const;

  /// Hard copy of values (used for target networks).
  void copy_values_from(const ParamStore& other);
  /// target <- (1 - tau) * target + tau * online
  void ema_from(const ParamStore& online, float tau);

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

/// Adam with optional global-norm gradient clipping.
class Adam {
 public:
  explicit Adam(float lr, float clip_norm = 0.0f) : lr_(lr), clip_(clip_norm) {}
  /// Applies one update and zeroes gradients. Returns the pre-clip grad norm.
  float step(ParamStore& store);
  void set_lr(float lr) { lr_ = lr; }

 private:
  float lr_;
  float clip_;
  float beta1_ = 0.9f, beta2_ = 0.999f, eps_ = 1e-8f;
  int64_t t_ = 0;
};

/// Reverse-mode tape over float matrices. Build a forward graph with the op
/// methods (each returns a node id), call backward(loss) once, then read
/// parameter gradients from their ParamStore. Reset and rebuild every step.
class Tape {
 public:
  int leaf(Mat v);
  int param(Param* p);

  int matmul(int a, int b);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int min_elem(int a, int b);
  int scale(int a, float s);
  int add_scalar(int a, float c);

  int add_rowvec(int a, int v);   // v: 1 x C
  int mul_rowvec(int a, int v);   // v: 1 x C
  /// Row r of `a` combines with row r/group of `m` (per-set conditioning).
  int add_group_rows(int a, int m, int group);
  int mul_group_rows(int a, int m, int group);
  /// Row r of `a` gets table.row(row_map[r]) added (role embeddings).
  int add_table_rows(int a, int table, std::vector<int> row_map);

  int gelu(int a);
  int tanh_(int a);
  int silu(int a);

  /// Per-row normalization to zero mean / unit variance (no affine).
  int layernorm(int a, float eps = 1e-5f);

  /// Fused multi-head scaled-dot-product attention over B sets; q holds
  /// B*Lq token rows, k/v hold B*Lk rows, width D split into H heads.
  int attention(int q, int k, int v, int B, int Lq, int Lk, int H);

  int gather_rows(int a, std::vector<int> rows);

  int sum_all(int a);
  int mean_all(int a);
  int mse_to(int a, Mat target);
  /// sum_r w_r * ||a_r - t_r||^2 / denom
  int weighted_sq_rows(int a, Mat target, Eigen::VectorXf row_w, float denom);
  /// mean |kappa - 1{u<0}| u^2 with u = target - a
  int expectile_to(int a, Mat target, float kappa);

  void backward(int loss_node);

  const Mat& val(int id) const { return nodes_[id].val; }
  Mat& grad(int id) { return nodes_[id].grad; }

  void reset();
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;  // lazily sized
    std::function<void(Tape&, int)> back;  // nullptr for leaves
    Param* sink = nullptr;                 // parameter leaf
  };

  int push(Mat val, std::function<void(Tape&, int)> back, Param* sink = nullptr);
  Mat& ensure_grad(int id);
  void accum(int id, const Mat& g);

  std::vector<Node> nodes_;
  // per-op scratch (softmax probabilities, layernorm rstd) kept for backward
  std::vector<std::shared_ptr<void>> stash_;
};

}  // namespace diffgoal
