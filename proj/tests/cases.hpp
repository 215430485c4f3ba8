#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include "oap/data.hpp"
#include "oap/env.hpp"
#include "oap/preference.hpp"
#include "oap/ranknet.hpp"
#include "oap/scheduler.hpp"

namespace oap::test {

// Small networks and a short schedule so a full run takes well under a second.
inline RunSettings tiny_settings() {
  RunSettings st = RunSettings::desk();
  st.agent.actor_hidden = {16, 16};
  st.agent.critic_hidden = {16, 16};
  st.agent.batch_size = 16;
  st.ranknet.hidden = {8};
  st.ranknet.epochs = 5;
  st.schedule = {200, 100, 40};
  st.online_budget = 100;
  st.start_steps = 20;
  st.eval_every = 50;
  st.eval_episodes = 2;
  st.final_evals = 2;
  return st;
}

struct PairSplit {
  QueryDataset train;
  QueryDataset held_out;
};

// Pairs over [-1,1]^3 states and [-1,1]^2 actions, labeled by the linear
// scorer g(s, a) = w . (s, a).
inline PairSplit synthetic_pairs(std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<double> w{0.4, -0.3, 0.8, 1.0, -0.6};
  auto g = [&](const std::vector<double>& s, const std::vector<double>& a) {
    return w[0] * s[0] + w[1] * s[1] + w[2] * s[2] + w[3] * a[0] + w[4] * a[1];
  };
  PairSplit out;
  for (std::size_t k = 0; k < n_train + n_test; ++k) {
    QueryRecord r;
    r.index = k;
    r.s = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    r.a = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    r.policy_action = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    r.preferred = g(r.s, r.policy_action) > g(r.s, r.a) ? r.policy_action : r.a;
    (k < n_train ? out.train : out.held_out).records.push_back(std::move(r));
  }
  return out;
}

inline StateNormalizer normalizer_for(const QueryDataset& dq, int state_dim) {
  OfflineDataset ds;
  ds.state_dim = state_dim;
  ds.action_dim = static_cast<int>(dq.records.front().a.size());
  for (const auto& r : dq.records) ds.transitions.push_back({r.s, r.a, r.s, 0.0, false});
  return StateNormalizer::fit(ds);
}

// Exact-oracle queries on GridMaze-10: dataset (s, a) from a medium dataset,
// policy action a uniformly random move.
inline PairSplit grid_oracle_pairs(std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  const Env env = make_env("gridmaze-10");
  const OracleQ oracle = make_oracle({}, env);
  const auto ds = generate_dataset(env, QualityTier::Medium, 5 * (n_train + n_test), seed).dataset;
  Rng rng(hash_combine(seed, 17));
  QueryBudget budget(n_train + n_test);
  PairSplit out;
  for (std::size_t k = 0; k < n_train + n_test; ++k) {
    const std::size_t i = rng.index(ds.size());
    QueryRecord r;
    r.index = i;
    r.s = ds[i].s;
    r.a = ds[i].a;
    r.policy_action = env.random_action(rng);
    r.preferred = preference_query(oracle, budget, r.s, r.a, r.policy_action);
    (k < n_train ? out.train : out.held_out).records.push_back(std::move(r));
  }
  return out;
}

// Fraction of records where the pseudo-query picks the oracle's answer.
inline double agreement(const RankNet& rn, const QueryDataset& dq) {
  std::size_t hit = 0;
  for (const auto& r : dq.records) hit += rn.pseudo_query(r.s, r.a, r.policy_action) == r.preferred;
  return static_cast<double>(hit) / static_cast<double>(dq.size());
}

}  // namespace oap::test
