#pragma once

#include "diffgoal/diffusion.hpp"
#include "diffgoal/iql.hpp"

namespace diffgoal {

/// Pairwise goal-conditioned values; element i pairs s[i] with g[i].
struct ValueOracle {
  virtual ~ValueOracle() = default;
  virtual Eigen::VectorXf value_pairs(const std::vector<EntitySet>& s,
                                      const std::vector<EntitySet>& g) const = 0;
};

/// Candidate subgoal source (the diffuser, or a stub in tests).
struct SubgoalGenerator {
  virtual ~SubgoalGenerator() = default;
  virtual std::vector<EntitySet> propose(const EntitySet& state,
                                         const EntitySet& goal, int n,
                                         Rng& rng) const = 0;
};

struct PolicyFn {
  virtual ~PolicyFn() = default;
  virtual Vec2 act(const EntitySet& state, const EntitySet& goal) const = 0;
};

/// Adapters over the trained bundles.
struct AgentValueOracle final : ValueOracle {
  const AgentBundle* agent;
  explicit AgentValueOracle(const AgentBundle& a) : agent(&a) {}
  Eigen::VectorXf value_pairs(const std::vector<EntitySet>& s,
                              const std::vector<EntitySet>& g) const override {
    if (s.size() != g.size()) throw InputError("value_pairs: length mismatch");
    return agent->value(EntityBatch::from_sets(s), EntityBatch::from_sets(g));
  }
};

struct DiffuserGenerator final : SubgoalGenerator {
  const DiffuserBundle* diffuser;
  explicit DiffuserGenerator(const DiffuserBundle& d) : diffuser(&d) {}
  std::vector<EntitySet> propose(const EntitySet& state, const EntitySet& goal,
                                 int n, Rng& rng) const override {
    return diffuser->sample(state, goal, n, rng);
  }
};

struct AgentPolicy final : PolicyFn {
  const AgentBundle* agent;
  explicit AgentPolicy(const AgentBundle& a) : agent(&a) {}
  Vec2 act(const EntitySet& state, const EntitySet& goal) const override {
    return agent->act(state, goal);
  }
};

}  // namespace diffgoal
