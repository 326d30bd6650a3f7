#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffgoal {

using Vec2 = Eigen::Vector2f;

/// Error categories surfaced through the CLI exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An unordered collection of entities, each a feature row
/// [x, y, onehot(id_dim)]. Row order carries no semantics; every consumer is
/// permutation-invariant or -equivariant. Identity index 0 is the agent.
class EntitySet {
 public:
  EntitySet() = default;
  EntitySet(int num_entities, int id_dim)
      : id_dim_(id_dim),
        features_(Eigen::MatrixXf::Zero(num_entities, 2 + id_dim)) {}

  static constexpr int kPosDim = 2;

  int size() const { return int(features_.rows()); }
  int id_dim() const { return id_dim_; }
  int feature_dim() const { return int(features_.cols()); }

  Vec2 position(int m) const { return features_.block<1, 2>(m, 0).transpose(); }
  void set_position(int m, const Vec2& p) {
    features_(m, 0) = p.x();
    features_(m, 1) = p.y();
  }

  /// Index of the hot identity channel of entity m.
  int identity_index(int m) const {
    int best = 0;
    features_.row(m).tail(id_dim_).maxCoeff(&best);
    return best;
  }
  void set_identity(int m, int id) {
    features_.row(m).tail(id_dim_).setZero();
    features_(m, 2 + id) = 1.0f;
  }
  bool is_agent(int m) const { return identity_index(m) == 0; }

  /// Row of entity m with the given identity, or -1.
  int find_identity(int id) const {
    for (int m = 0; m < size(); ++m)
      if (identity_index(m) == id) return m;
    return -1;
  }
  int agent_row() const { return find_identity(0); }

  const Eigen::MatrixXf& features() const { return features_; }
  Eigen::MatrixXf& mutable_features() { return features_; }

  static EntitySet from_features(const Eigen::MatrixXf& f, int id_dim) {
    if (f.cols() != 2 + id_dim)
      throw InputError("EntitySet::from_features: feature dim mismatch");
    EntitySet s;
    s.id_dim_ = id_dim;
    s.features_ = f;
    return s;
  }

  EntitySet permuted(const std::vector<int>& perm) const {
    EntitySet out(size(), id_dim_);
    for (int m = 0; m < size(); ++m) out.features_.row(m) = features_.row(perm[m]);
    return out;
  }

  bool operator==(const EntitySet& o) const {
    return id_dim_ == o.id_dim_ && features_.rows() == o.features_.rows() &&
           features_ == o.features_;
  }

  /// Checks structural invariants: exactly one agent, pairwise-distinct
  /// identities, exact one-hot rows. Throws InputError on violation.
  void validate() const {
    if (size() < 1) throw InputError("EntitySet: empty");
    int agents = 0;
    std::vector<bool> seen(id_dim_, false);
    for (int m = 0; m < size(); ++m) {
      const auto row = features_.row(m).tail(id_dim_);
      int hot = -1;
      for (int k = 0; k < id_dim_; ++k) {
        if (row(k) == 1.0f) {
          if (hot >= 0) throw InputError("EntitySet: non-one-hot identity");
          hot = k;
        } else if (row(k) != 0.0f) {
          throw InputError("EntitySet: non-one-hot identity");
        }
      }
      if (hot < 0) throw InputError("EntitySet: missing identity");
      if (seen[hot]) throw InputError("EntitySet: duplicate identity");
      seen[hot] = true;
      if (hot == 0) ++agents;
    }
    if (agents != 1) throw InputError("EntitySet: expected exactly one agent");
  }

 private:
  int id_dim_ = 0;
  Eigen::MatrixXf features_;
};

/// True iff both sets contain the same multiset of identities.
inline bool same_identities(const EntitySet& a, const EntitySet& b) {
  if (a.size() != b.size() || a.id_dim() != b.id_dim()) return false;
  for (int m = 0; m < a.size(); ++m)
    if (b.find_identity(a.identity_index(m)) < 0) return false;
  return true;
}

/// A contiguous batch of B same-sized entity sets, rows grouped per set:
/// row(b*M + m) = features of entity m in set b. The layout the networks eat.
struct EntityBatch {
  int batch = 0;
  int entities = 0;
  int feat_dim = 0;
  Eigen::MatrixXf features;  // (batch*entities) x feat_dim

  static EntityBatch from_sets(const std::vector<EntitySet>& sets) {
    EntityBatch b;
    b.batch = int(sets.size());
    if (b.batch == 0) throw InputError("EntityBatch: empty");
    b.entities = sets[0].size();
    b.feat_dim = sets[0].feature_dim();
    b.features.resize(b.batch * b.entities, b.feat_dim);
    for (int i = 0; i < b.batch; ++i) {
      if (sets[i].size() != b.entities || sets[i].feature_dim() != b.feat_dim)
        throw InputError("EntityBatch: ragged sets");
      b.features.middleRows(i * b.entities, b.entities) = sets[i].features();
    }
    return b;
  }

  EntitySet set(int i, int id_dim) const {
    return EntitySet::from_features(
        features.middleRows(i * entities, entities), id_dim);
  }
};

}  // namespace diffgoal
