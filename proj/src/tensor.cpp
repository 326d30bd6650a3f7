#include "diffgoal/tensor.hpp"

#include <cmath>

namespace diffgoal {

// ---------------------------------------------------------------------------
// ParamStore / Adam

Param* ParamStore::add(const std::string& name, int rows, int cols, Init init,
                       Rng& rng) {
  auto p = std::make_unique<Param>();
  p->name = name;
  p->v.resize(rows, cols);
  switch (init) {
    case Init::Zero:
      p->v.setZero();
      break;
    case Init::One:
      p->v.setOnes();
      break;
    case Init::Xavier: {
      float bound = std::sqrt(6.0f / float(rows + cols));
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
          p->v(i, j) = float(rng.uniform(-bound, bound));
      break;
    }
    case Init::Normal02:
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) p->v(i, j) = 0.02f * float(rng.normal());
      break;
  }
  p->g = Mat::Zero(rows, cols);
  p->adam_m = Mat::Zero(rows, cols);
  p->adam_v = Mat::Zero(rows, cols);
  params_.push_back(std::move(p));
  return params_.back().get();
}

Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

size_t ParamStore::num_scalars() const {
  size_t n = 0;
  for (const auto& p : params_) n += size_t(p->v.size());
  return n;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (params_.size() != other.params_.size())
    throw NumericError("ParamStore copy: size mismatch");
  for (size_t i = 0; i < params_.size(); ++i)
    params_[i]->v = other.params_[i]->v;
}

void ParamStore::ema_from(const ParamStore& online, float tau) {
  if (params_.size() != online.params_.size())
    throw NumericError("ParamStore ema: size mismatch");
  for (size_t i = 0; i < params_.size(); ++i)
    params_[i]->v = (1.0f - tau) * params_[i]->v + tau * online.params_[i]->v;
}

float Adam::step(ParamStore& store) {
  double sq = 0.0;
  for (const auto& p : store.all()) sq += double(p->g.squaredNorm());
  float norm = float(std::sqrt(sq));
  float scale = 1.0f;
  if (clip_ > 0.0f && norm > clip_) scale = clip_ / norm;

  ++t_;
  float bc1 = 1.0f - std::pow(beta1_, float(t_));
  float bc2 = 1.0f - std::pow(beta2_, float(t_));
  for (const auto& p : store.all()) {
    Mat g = p->g * scale;
    p->adam_m = beta1_ * p->adam_m + (1.0f - beta1_) * g;
    p->adam_v = beta2_ * p->adam_v.array().matrix() +
                (1.0f - beta2_) * g.array().square().matrix();
    Mat mhat = p->adam_m / bc1;
    Mat vhat = p->adam_v / bc2;
    p->v.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    p->g.setZero();
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Tape

int Tape::push(Mat val, std::function<void(Tape&, int)> back, Param* sink) {
  Node n;
  n.val = std::move(val);
  n.back = std::move(back);
  n.sink = sink;
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

Mat& Tape::ensure_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

void Tape::accum(int id, const Mat& g) { ensure_grad(id) += g; }

void Tape::reset() {
  nodes_.clear();
  stash_.clear();
}

int Tape::leaf(Mat v) { return push(std::move(v), nullptr); }

int Tape::param(Param* p) { return push(p->v, nullptr, p); }

#define DG_CHECK(cond, msg) \
  if (!(cond)) throw NumericError(std::string("tape: ") + msg)

int Tape::matmul(int a, int b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  DG_CHECK(A.cols() == B.rows(), "matmul shape");
  Mat C(A.rows(), B.cols());
  C.noalias() = A * B;
  return push(std::move(C), [a, b](Tape& t, int self) {
    const Mat& dC = t.nodes_[self].grad;
    t.ensure_grad(a).noalias() += dC * t.nodes_[b].val.transpose();
    t.ensure_grad(b).noalias() += t.nodes_[a].val.transpose() * dC;
  });
}

int Tape::add(int a, int b) {
  DG_CHECK(nodes_[a].val.rows() == nodes_[b].val.rows() &&
               nodes_[a].val.cols() == nodes_[b].val.cols(),
           "add shape");
  return push(nodes_[a].val + nodes_[b].val, [a, b](Tape& t, int self) {
    t.accum(a, t.nodes_[self].grad);
    t.accum(b, t.nodes_[self].grad);
  });
}

int Tape::sub(int a, int b) {
  DG_CHECK(nodes_[a].val.rows() == nodes_[b].val.rows() &&
               nodes_[a].val.cols() == nodes_[b].val.cols(),
           "sub shape");
  return push(nodes_[a].val - nodes_[b].val, [a, b](Tape& t, int self) {
    t.accum(a, t.nodes_[self].grad);
    t.ensure_grad(b) -= t.nodes_[self].grad;
  });
}

int Tape::mul(int a, int b) {
  DG_CHECK(nodes_[a].val.rows() == nodes_[b].val.rows() &&
               nodes_[a].val.cols() == nodes_[b].val.cols(),
           "mul shape");
  return push(nodes_[a].val.cwiseProduct(nodes_[b].val),
              [a, b](Tape& t, int self) {
                const Mat& dC = t.nodes_[self].grad;
                t.ensure_grad(a) += dC.cwiseProduct(t.nodes_[b].val);
                t.ensure_grad(b) += dC.cwiseProduct(t.nodes_[a].val);
              });
}

int Tape::min_elem(int a, int b) {
  DG_CHECK(nodes_[a].val.rows() == nodes_[b].val.rows() &&
               nodes_[a].val.cols() == nodes_[b].val.cols(),
           "min_elem shape");
  return push(nodes_[a].val.cwiseMin(nodes_[b].val), [a, b](Tape& t, int self) {
    const Mat& dC = t.nodes_[self].grad;
    const Mat& A = t.nodes_[a].val;
    const Mat& B = t.nodes_[b].val;
    Mat take_a = (A.array() <= B.array()).cast<float>().matrix();
    t.ensure_grad(a) += dC.cwiseProduct(take_a);
    t.ensure_grad(b) += dC.cwiseProduct(Mat::Ones(A.rows(), A.cols()) - take_a);
  });
}

int Tape::scale(int a, float s) {
  return push(nodes_[a].val * s, [a, s](Tape& t, int self) {
    t.ensure_grad(a) += t.nodes_[self].grad * s;
  });
}

int Tape::add_scalar(int a, float c) {
  return push((nodes_[a].val.array() + c).matrix(), [a](Tape& t, int self) {
    t.accum(a, t.nodes_[self].grad);
  });
}

int Tape::add_rowvec(int a, int v) {
  DG_CHECK(nodes_[v].val.rows() == 1 &&
               nodes_[v].val.cols() == nodes_[a].val.cols(),
           "add_rowvec shape");
  Mat C = nodes_[a].val;
  C.rowwise() += nodes_[v].val.row(0);
  return push(std::move(C), [a, v](Tape& t, int self) {
    const Mat& dC = t.nodes_[self].grad;
    t.accum(a, dC);
    t.ensure_grad(v).row(0) += dC.colwise().sum();
  });
}

int Tape::mul_rowvec(int a, int v) {
  DG_CHECK(nodes_[v].val.rows() == 1 &&
               nodes_[v].val.cols() == nodes_[a].val.cols(),
           "mul_rowvec shape");
  Mat C = nodes_[a].val.array().rowwise() * nodes_[v].val.row(0).array();
  return push(std::move(C), [a, v](Tape& t, int self) {
    const Mat& dC = t.nodes_[self].grad;
    t.ensure_grad(a) +=
        (dC.array().rowwise() * t.nodes_[v].val.row(0).array()).matrix();
    t.ensure_grad(v).row(0) +=
        dC.cwiseProduct(t.nodes_[a].val).colwise().sum();
  });
}

int Tape::add_group_rows(int a, int m, int group) {
  const Mat& A = nodes_[a].val;
  const Mat& M = nodes_[m].val;
  DG_CHECK(A.cols() == M.cols() && A.rows() == M.rows() * group,
           "add_group_rows shape");
  Mat C = A;
  for (int r = 0; r < A.rows(); ++r) C.row(r) += M.row(r / group);
  return push(std::move(C), [a, m, group](Tape& t, int self) {
    const Mat& dC = t.nodes_[self].grad;
    t.accum(a, dC);
    Mat& dM = t.ensure_grad(m);
    for (int r = 0; r < dC.rows(); ++r) dM.row(r / group) += dC.row(r);
  });
}

int Tape::mul_group_rows(int a, int m, int group) {
  const Mat& A = nodes_[a].val;
  const Mat& M = nodes_[m].val;
  DG_CHECK(A.cols() == M.cols() && A.rows() == M.rows() * group,
           "mul_group_rows shape");
  Mat C(A.rows(), A.cols());
  for (int r = 0; r < A.rows(); ++r)
    C.row(r) = A.row(r).cwiseProduct(M.row(r / group));
  return push(std::move(C), [a, m, group](Tape& t, int self) {
    const Mat& dC = t.nodes_[self].grad;
    const Mat& A = t.nodes_[a].val;
    const Mat& M = t.nodes_[m].val;
    Mat& dA = t.ensure_grad(a);
    Mat& dM = t.ensure_grad(m);
    for (int r = 0; r < dC.rows(); ++r) {
      dA.row(r) += dC.row(r).cwiseProduct(M.row(r / group));
      dM.row(r / group) += dC.row(r).cwiseProduct(A.row(r));
    }
  });
}

int Tape::add_table_rows(int a, int table, std::vector<int> row_map) {
  const Mat& A = nodes_[a].val;
  const Mat& T = nodes_[table].val;
  DG_CHECK(int(row_map.size()) == A.rows() && T.cols() == A.cols(),
           "add_table_rows shape");
  Mat C = A;
  for (int r = 0; r < A.rows(); ++r) C.row(r) += T.row(row_map[r]);
  return push(std::move(C),
              [a, table, row_map = std::move(row_map)](Tape& t, int self) {
                const Mat& dC = t.nodes_[self].grad;
                t.accum(a, dC);
                Mat& dT = t.ensure_grad(table);
                for (int r = 0; r < dC.rows(); ++r)
                  dT.row(row_map[r]) += dC.row(r);
              });
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
}

int Tape::gelu(int a) {
  const Mat& X = nodes_[a].val;
  Mat Y = X.unaryExpr([](float x) {
    float u = kGeluC * (x + 0.044715f * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(u));
  });
  return push(std::move(Y), [a](Tape& t, int self) {
    const Mat& X = t.nodes_[a].val;
    Mat d = X.unaryExpr([](float x) {
      float u = kGeluC * (x + 0.044715f * x * x * x);
      float th = std::tanh(u);
      float du = kGeluC * (1.0f + 3.0f * 0.044715f * x * x);
      return 0.5f * (1.0f + th) + 0.5f * x * (1.0f - th * th) * du;
    });
    t.ensure_grad(a) += t.nodes_[self].grad.cwiseProduct(d);
  });
}

int Tape::tanh_(int a) {
  Mat Y = nodes_[a].val.array().tanh().matrix();
  return push(std::move(Y), [a](Tape& t, int self) {
    const Mat& Y = t.nodes_[self].val;
    t.ensure_grad(a) += t.nodes_[self].grad.cwiseProduct(
        (1.0f - Y.array().square()).matrix());
  });
}

int Tape::silu(int a) {
  const Mat& X = nodes_[a].val;
  Mat Y = X.unaryExpr([](float x) { return x / (1.0f + std::exp(-x)); });
  return push(std::move(Y), [a](Tape& t, int self) {
    const Mat& X = t.nodes_[a].val;
    Mat d = X.unaryExpr([](float x) {
      float s = 1.0f / (1.0f + std::exp(-x));
      return s * (1.0f + x * (1.0f - s));
    });
    t.ensure_grad(a) += t.nodes_[self].grad.cwiseProduct(d);
  });
}

int Tape::layernorm(int a, float eps) {
  const Mat& X = nodes_[a].val;
  auto rstd = std::make_shared<Eigen::VectorXf>(X.rows());
  Mat Y(X.rows(), X.cols());
  for (int r = 0; r < X.rows(); ++r) {
    float mu = X.row(r).mean();
    float var = (X.row(r).array() - mu).square().mean();
    float rs = 1.0f / std::sqrt(var + eps);
    (*rstd)(r) = rs;
    Y.row(r) = ((X.row(r).array() - mu) * rs).matrix();
  }
  stash_.push_back(rstd);
  return push(std::move(Y), [a, rstd](Tape& t, int self) {
    const Mat& Y = t.nodes_[self].val;
    const Mat& dY = t.nodes_[self].grad;
    Mat& dX = t.ensure_grad(a);
    const float n = float(Y.cols());
    for (int r = 0; r < Y.rows(); ++r) {
      float mean_dy = dY.row(r).mean();
      float mean_dyy = dY.row(r).cwiseProduct(Y.row(r)).sum() / n;
      dX.row(r) += ((*rstd)(r) *
                    (dY.row(r).array() - mean_dy - Y.row(r).array() * mean_dyy))
                       .matrix();
    }
  });
}

int Tape::attention(int q, int k, int v, int B, int Lq, int Lk, int H) {
  const Mat& Q = nodes_[q].val;
  const Mat& K = nodes_[k].val;
  const Mat& V = nodes_[v].val;
  const int D = int(Q.cols());
  DG_CHECK(D % H == 0, "attention: dim not divisible by heads");
  DG_CHECK(Q.rows() == int64_t(B) * Lq && K.rows() == int64_t(B) * Lk &&
               V.rows() == int64_t(B) * Lk && K.cols() == D && V.cols() == D,
           "attention shape");
  const int hd = D / H;
  const float inv_sqrt = 1.0f / std::sqrt(float(hd));

  auto probs = std::make_shared<Mat>(B * H * Lq, Lk);
  Mat O(B * Lq, D);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      auto Qb = Q.block(b * Lq, h * hd, Lq, hd);
      auto Kb = K.block(b * Lk, h * hd, Lk, hd);
      auto Vb = V.block(b * Lk, h * hd, Lk, hd);
      Mat S(Lq, Lk);
      S.noalias() = Qb * Kb.transpose();
      S *= inv_sqrt;
      for (int r = 0; r < Lq; ++r) {
        float m = S.row(r).maxCoeff();
        Eigen::RowVectorXf e = (S.row(r).array() - m).exp();
        probs->block((b * H + h) * Lq + r, 0, 1, Lk) = e / e.sum();
      }
      O.block(b * Lq, h * hd, Lq, hd).noalias() =
          probs->block((b * H + h) * Lq, 0, Lq, Lk) * Vb;
    }
  }
  stash_.push_back(probs);
  return push(std::move(O), [q, k, v, B, Lq, Lk, H, hd, inv_sqrt, probs](
                                Tape& t, int self) {
    const Mat& dO = t.nodes_[self].grad;
    const Mat& Q = t.nodes_[q].val;
    const Mat& K = t.nodes_[k].val;
    const Mat& V = t.nodes_[v].val;
    Mat& dQ = t.ensure_grad(q);
    Mat& dK = t.ensure_grad(k);
    Mat& dV = t.ensure_grad(v);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        auto P = probs->block((b * H + h) * Lq, 0, Lq, Lk);
        auto Qb = Q.block(b * Lq, h * hd, Lq, hd);
        auto Kb = K.block(b * Lk, h * hd, Lk, hd);
        auto Vb = V.block(b * Lk, h * hd, Lk, hd);
        auto dOb = dO.block(b * Lq, h * hd, Lq, hd);
        dV.block(b * Lk, h * hd, Lk, hd).noalias() += P.transpose() * dOb;
        Mat dP(Lq, Lk);
        dP.noalias() = dOb * Vb.transpose();
        Mat dS(Lq, Lk);
        for (int r = 0; r < Lq; ++r) {
          float dot = dP.row(r).cwiseProduct(P.row(r)).sum();
          dS.row(r) =
              P.row(r).cwiseProduct((dP.row(r).array() - dot).matrix());
        }
        dS *= inv_sqrt;
        dQ.block(b * Lq, h * hd, Lq, hd).noalias() += dS * Kb;
        dK.block(b * Lk, h * hd, Lk, hd).noalias() += dS.transpose() * Qb;
      }
    }
  });
}

int Tape::gather_rows(int a, std::vector<int> rows) {
  const Mat& A = nodes_[a].val;
  Mat C(int(rows.size()), A.cols());
  for (size_t i = 0; i < rows.size(); ++i) C.row(int(i)) = A.row(rows[i]);
  return push(std::move(C), [a, rows = std::move(rows)](Tape& t, int self) {
    const Mat& dC = t.nodes_[self].grad;
    Mat& dA = t.ensure_grad(a);
    for (size_t i = 0; i < rows.size(); ++i) dA.row(rows[i]) += dC.row(int(i));
  });
}

int Tape::sum_all(int a) {
  Mat C(1, 1);
  C(0, 0) = nodes_[a].val.sum();
  return push(std::move(C), [a](Tape& t, int self) {
    float g = t.nodes_[self].grad(0, 0);
    t.ensure_grad(a).array() += g;
  });
}

int Tape::mean_all(int a) {
  const float n = float(nodes_[a].val.size());
  Mat C(1, 1);
  C(0, 0) = nodes_[a].val.sum() / n;
  return push(std::move(C), [a, n](Tape& t, int self) {
    float g = t.nodes_[self].grad(0, 0) / n;
    t.ensure_grad(a).array() += g;
  });
}

int Tape::mse_to(int a, Mat target) {
  const Mat& A = nodes_[a].val;
  DG_CHECK(A.rows() == target.rows() && A.cols() == target.cols(), "mse shape");
  const float n = float(A.size());
  Mat C(1, 1);
  C(0, 0) = (A - target).squaredNorm() / n;
  return push(std::move(C),
              [a, target = std::move(target), n](Tape& t, int self) {
                float g = t.nodes_[self].grad(0, 0);
                t.ensure_grad(a) +=
                    (2.0f * g / n) * (t.nodes_[a].val - target);
              });
}

int Tape::weighted_sq_rows(int a, Mat target, Eigen::VectorXf row_w,
                           float denom) {
  const Mat& A = nodes_[a].val;
  DG_CHECK(A.rows() == target.rows() && A.cols() == target.cols() &&
               row_w.size() == A.rows(),
           "weighted_sq_rows shape");
  double acc = 0.0;
  for (int r = 0; r < A.rows(); ++r)
    acc += double(row_w(r)) * double((A.row(r) - target.row(r)).squaredNorm());
  Mat C(1, 1);
  C(0, 0) = float(acc / denom);
  return push(std::move(C), [a, target = std::move(target),
                             row_w = std::move(row_w), denom](Tape& t, int self) {
    float g = t.nodes_[self].grad(0, 0) / denom;
    Mat& dA = t.ensure_grad(a);
    const Mat& A = t.nodes_[a].val;
    for (int r = 0; r < A.rows(); ++r)
      dA.row(r) += (2.0f * g * row_w(r)) * (A.row(r) - target.row(r));
  });
}

int Tape::expectile_to(int a, Mat target, float kappa) {
  const Mat& A = nodes_[a].val;
  DG_CHECK(A.rows() == target.rows() && A.cols() == target.cols(),
           "expectile shape");
  const float n = float(A.size());
  Mat U = target - A;
  double acc = 0.0;
  for (int j = 0; j < U.cols(); ++j)
    for (int i = 0; i < U.rows(); ++i) {
      float u = U(i, j);
      float w = std::abs(kappa - (u < 0.0f ? 1.0f : 0.0f));
      acc += double(w) * double(u) * double(u);
    }
  Mat C(1, 1);
  C(0, 0) = float(acc / n);
  return push(std::move(C),
              [a, target = std::move(target), kappa, n](Tape& t, int self) {
                float g = t.nodes_[self].grad(0, 0);
                const Mat& A = t.nodes_[a].val;
                Mat& dA = t.ensure_grad(a);
                for (int j = 0; j < A.cols(); ++j)
                  for (int i = 0; i < A.rows(); ++i) {
                    float u = target(i, j) - A(i, j);
                    float w = std::abs(kappa - (u < 0.0f ? 1.0f : 0.0f));
                    dA(i, j) += g * w * 2.0f * u * (-1.0f) / n;
                  }
              });
}

void Tape::backward(int loss_node) {
  DG_CHECK(nodes_[loss_node].val.size() == 1, "backward: loss must be scalar");
  ensure_grad(loss_node)(0, 0) = 1.0f;
  for (int i = loss_node; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;  // not on the path to the loss
    if (n.back) n.back(*this, i);
    if (n.sink) n.sink->g += n.grad;
  }
}

}  // namespace diffgoal
