#pragma once

// Blackbox Q* oracles, the pairwise preference function, the divergence
// ranking criterion and budgeted query selection.

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oap/data.hpp"
#include "oap/env.hpp"
#include "oap/errors.hpp"
#include "oap/rng.hpp"

namespace oap {

// (T Q)(s,a) = R(s,a) + gamma * sum_s' T(s'|s,a) max_a' Q(s',a')
inline Eigen::MatrixXd bellman_optimality(const TabularMdp& mdp, const Eigen::MatrixXd& q) {
  const Eigen::VectorXd v = q.rowwise().maxCoeff();
  Eigen::MatrixXd out(mdp.n_states, mdp.n_actions);
  for (int a = 0; a < mdp.n_actions; ++a)
    out.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[static_cast<std::size_t>(a)] * v);
  return out;
}

inline double bellman_residual(const TabularMdp& mdp, const Eigen::MatrixXd& q) {
  return (bellman_optimality(mdp, q) - q).cwiseAbs().maxCoeff();
}

struct ValueIterationResult {
  Eigen::MatrixXd q;
  double residual = 0.0;
  int sweeps = 0;
};

inline ValueIterationResult value_iteration(const TabularMdp& mdp, double tol = 1e-10, int max_sweeps = 10'000'000) {
  mdp.validate();
  ValueIterationResult res;
  res.q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  while (res.sweeps < max_sweeps) {
    Eigen::MatrixXd next = bellman_optimality(mdp, res.q);
    res.residual = (next - res.q).cwiseAbs().maxCoeff();
    res.q = std::move(next);
    ++res.sweeps;
    if (res.residual <= tol * (1.0 - mdp.gamma)) break;
  }
  res.residual = bellman_residual(mdp, res.q);
  return res;
}

// k Bellman sweeps from Q = 0; a deliberately under-converged critic.
inline Eigen::MatrixXd value_iteration_sweeps(const TabularMdp& mdp, int sweeps) {
  mdp.validate();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int k = 0; k < sweeps; ++k) q = bellman_optimality(mdp, q);
  return q;
}

// Lowest index wins ties.
inline std::vector<int> greedy_policy(const Eigen::MatrixXd& q) {
  std::vector<int> pi(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < q.cols(); ++a)
      if (q(s, a) > q(s, best)) best = a;
    pi[static_cast<std::size_t>(s)] = static_cast<int>(best);
  }
  return pi;
}

// ---------------------------------------------------------------------------

enum class OracleKind { ExactTabular, ExpertRollout, Perturbed };

struct OracleSpec {
  std::string kind = "auto";  // auto | exact_tabular | expert_rollout | perturbed
  double noise_amplitude = 0.0;
  int vi_sweeps = 0;  // perturbed only: base is a k-sweep value iteration (tabular envs)
  std::uint64_t seed = 0;
};

// Deterministic noise in [-1, 1] keyed by (seed, key...).
inline double hashed_unit_noise(std::uint64_t seed, std::span<const std::uint64_t> key) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : key) h = hash_combine(h, k);
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

class OracleQ {
 public:
  static OracleQ exact_tabular(const GridMazeEnv& env) {
    OracleQ o(OracleKind::ExactTabular);
    o.grid_ = env;
    o.exact_ = value_iteration(env.model().mdp).q;
    o.table_ = o.exact_;
    return o;
  }

  static OracleQ expert_rollout(const PointMassEnv& env) {
    OracleQ o(OracleKind::ExpertRollout);
    o.point_ = env;
    return o;
  }

  // Base oracle plus a seeded noise field bounded by `amplitude`. With
  // vi_sweeps > 0 the tabular base is the k-sweep critic instead of Q*.
  static OracleQ perturbed(const Env& env, double amplitude, int vi_sweeps, std::uint64_t seed) {
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ConfigError("noise amplitude must be finite and >= 0");
    if (vi_sweeps < 0) throw ConfigError("vi_sweeps must be >= 0");
    OracleQ o(OracleKind::Perturbed);
    o.noise_ = amplitude;
    o.seed_ = seed;
    if (const auto* g = env.grid()) {
      o.grid_ = *g;
      o.exact_ = value_iteration(g->model().mdp).q;
      o.table_ = vi_sweeps > 0 ? value_iteration_sweeps(g->model().mdp, vi_sweeps) : o.exact_;
      o.base_error_ = (o.table_ - o.exact_).cwiseAbs().maxCoeff();
    } else {
      if (vi_sweeps > 0) throw ConfigError("vi_sweeps needs a tabular environment");
      o.point_ = *env.point_mass();
    }
    return o;
  }

  OracleKind kind() const { return kind_; }

  // Bound on |Q_hat - Q*| over the whole domain.
  double declared_amplitude() const { return noise_ + base_error_; }

  double q(std::span<const double> s, std::span<const double> a) const {
    if (grid_) {
      const int st = grid_->state_index(s);
      const int m = GridMazeEnv::decode_move(a);
      double v = table_(st, m);
      if (kind_ == OracleKind::Perturbed && noise_ > 0.0) {
        const std::uint64_t key[] = {static_cast<std::uint64_t>(st), static_cast<std::uint64_t>(m)};
        v += noise_ * hashed_unit_noise(seed_, key);
      }
      return v;
    }
    double v = rollout(s, a);
    if (kind_ == OracleKind::Perturbed && noise_ > 0.0) {
      const std::uint64_t key[] = {std::bit_cast<std::uint64_t>(s[0]), std::bit_cast<std::uint64_t>(s[1]),
                                   std::bit_cast<std::uint64_t>(a[0]), std::bit_cast<std::uint64_t>(a[1])};
      v += noise_ * hashed_unit_noise(seed_, key);
    }
    return v;
  }

  // Unperturbed reference value; equals q() for exact oracles.
  double q_exact(std::span<const double> s, std::span<const double> a) const {
    if (grid_) return exact_(grid_->state_index(s), GridMazeEnv::decode_move(a));
    return rollout(s, a);
  }

  // Tabular only.
  const Eigen::MatrixXd& table() const {
    if (!grid_) throw StateError("oracle has no tabular Q");
    return table_;
  }
  const Eigen::MatrixXd& exact_table() const {
    if (!grid_) throw StateError("oracle has no tabular Q");
    return exact_;
  }

 private:
  explicit OracleQ(OracleKind k) : kind_(k) {}

  // r(s,a) + sum_{k=1}^{H-1} gamma^k r_k following the expert from s'.
  double rollout(std::span<const double> s, std::span<const double> a) const {
    point_->check_state(s);
    check_action(a, 2, point_->action_bound());
    Rng unused(0);
    EnvState st{{s.begin(), s.end()}, 0};
    StepResult r = point_->step(st, a, unused);
    double total = r.reward;
    double disc = 1.0;
    for (int k = 1; k < point_->horizon(); ++k) {
      disc *= point_->gamma();
      st = std::move(r.next);
      r = point_->step(st, point_->expert_action(st), unused);
      total += disc * r.reward;
    }
    return total;
  }

  OracleKind kind_;
  std::optional<GridMazeEnv> grid_;
  std::optional<PointMassEnv> point_;
  Eigen::MatrixXd exact_;
  Eigen::MatrixXd table_;
  double noise_ = 0.0;
  double base_error_ = 0.0;
  std::uint64_t seed_ = 0;
};

inline OracleQ make_oracle(const OracleSpec& spec, const Env& env) {
  if (spec.kind == "perturbed") return OracleQ::perturbed(env, spec.noise_amplitude, spec.vi_sweeps, spec.seed);
  if (spec.noise_amplitude != 0.0 || spec.vi_sweeps != 0)
    throw ConfigError("noise_amplitude and vi_sweeps only apply to the perturbed oracle");
  if (spec.kind == "auto") {
    if (const auto* g = env.grid()) return OracleQ::exact_tabular(*g);
    return OracleQ::expert_rollout(*env.point_mass());
  }
  if (spec.kind == "exact_tabular") {
    if (!env.grid()) throw ConfigError("exact_tabular oracle needs a tabular environment");
    return OracleQ::exact_tabular(*env.grid());
  }
  if (spec.kind == "expert_rollout") {
    if (!env.point_mass()) throw ConfigError("expert_rollout oracle needs the point-mass environment");
    return OracleQ::expert_rollout(*env.point_mass());
  }
  throw ConfigError("unknown oracle kind '" + spec.kind + "'");
}

// ---------------------------------------------------------------------------

class QueryBudget {
 public:
  explicit QueryBudget(std::size_t k_total) : k_total_(k_total) {}
  static QueryBudget unlimited() { return QueryBudget(std::numeric_limits<std::size_t>::max()); }

  std::size_t k_total() const { return k_total_; }
  std::size_t used() const { return used_; }
  std::size_t remaining() const { return k_total_ - used_; }
  bool exhausted() const { return used_ >= k_total_; }

  void consume() {
    if (exhausted()) throw BudgetError("query budget of " + std::to_string(k_total_) + " exhausted");
    ++used_;
  }

 private:
  std::size_t k_total_;
  std::size_t used_ = 0;
};

// argmax of the oracle over {a, policy_action}; ties keep the dataset action.
inline std::vector<double> preference_query(const OracleQ& oracle, QueryBudget& budget, std::span<const double> s,
                                            std::span<const double> a, std::span<const double> policy_action) {
  budget.consume();
  const double qa = oracle.q(s, a);
  const double qp = oracle.q(s, policy_action);
  if (qp > qa) return {policy_action.begin(), policy_action.end()};
  return {a.begin(), a.end()};
}

// l_i = ||pi(s_i) - a_i||^2, columns are samples.
inline std::vector<double> rank_divergence(const Eigen::MatrixXd& policy_actions, const Eigen::MatrixXd& dataset_actions) {
  if (policy_actions.rows() != dataset_actions.rows() || policy_actions.cols() != dataset_actions.cols())
    throw ShapeError("policy and dataset action matrices differ in shape");
  if (dataset_actions.cols() == 0) throw ConfigError("rank_divergence on an empty dataset");
  const Eigen::VectorXd l = (policy_actions - dataset_actions).colwise().squaredNorm().transpose();
  return {l.data(), l.data() + l.size()};
}

// Unqueried first, then larger score, then smaller index.
inline std::vector<std::size_t> select_query_batch(std::span<const double> scores, const PreferredActionTable& table,
                                                   std::size_t batch_size, bool unqueried_first = true) {
  if (scores.size() != table.size()) throw ShapeError("one score per dataset index");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t k = std::min(batch_size, idx.size());
  auto before = [&](std::size_t i, std::size_t j) {
    if (unqueried_first) {
      const bool qi = table.queried(i), qj = table.queried(j);
      if (qi != qj) return !qi;
    }
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return i < j;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return idx;
}

inline std::vector<std::size_t> select_query_batch(std::span<const double> scores, const PreferredActionTable& table,
                                                   std::size_t batch_size, const QueryBudget& budget,
                                                   bool unqueried_first = true) {
  return select_query_batch(scores, table, std::min(batch_size, budget.remaining()), unqueried_first);
}

}  // namespace oap
