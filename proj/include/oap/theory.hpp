#pragma once

// Exact policy evaluation and discounted visitation on tabular MDPs, and the
// checks for the performance-difference identity and for the gain from
// revising the behavior policy under exact and noisy Q*.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "oap/env.hpp"
#include "oap/errors.hpp"
#include "oap/io.hpp"
#include "oap/preference.hpp"
#include "oap/rng.hpp"

namespace oap {

using DetPolicy = std::vector<int>;

inline void check_policy(const TabularMdp& mdp, const DetPolicy& pi) {
  if (static_cast<int>(pi.size()) != mdp.n_states) throw ShapeError("policy needs one action per state");
  for (int a : pi)
    if (a < 0 || a >= mdp.n_actions) throw DomainError("policy action out of range");
}

inline Eigen::MatrixXd policy_transition(const TabularMdp& mdp, const DetPolicy& pi) {
  check_policy(mdp, pi);
  Eigen::MatrixXd t(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) t.row(s) = mdp.transition[static_cast<std::size_t>(pi[static_cast<std::size_t>(s)])].row(s);
  return t;
}

inline Eigen::VectorXd policy_reward(const TabularMdp& mdp, const DetPolicy& pi) {
  check_policy(mdp, pi);
  Eigen::VectorXd r(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) r(s) = mdp.reward(s, pi[static_cast<std::size_t>(s)]);
  return r;
}

// V solves (I - gamma T_pi) V = R_pi.
inline Eigen::VectorXd policy_value(const TabularMdp& mdp, const DetPolicy& pi) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * policy_transition(mdp, pi);
  return a.partialPivLu().solve(policy_reward(mdp, pi));
}

// Q_pi(s,a) = R(s,a) + gamma sum_s' T(s'|s,a) V(s')
inline Eigen::MatrixXd q_from_value(const TabularMdp& mdp, const Eigen::VectorXd& v) {
  Eigen::MatrixXd q(mdp.n_states, mdp.n_actions);
  for (int a = 0; a < mdp.n_actions; ++a)
    q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[static_cast<std::size_t>(a)] * v);
  return q;
}

inline double exact_return(const TabularMdp& mdp, const DetPolicy& pi) { return mdp.initial.dot(policy_value(mdp, pi)); }

// Smallest T with gamma^T < 1e-12.
inline int truncation_horizon(double gamma) { return static_cast<int>(std::ceil(std::log(1e-12) / std::log(gamma))) + 1; }

// sum_{t < T} gamma^t E[r_t] by propagating the state distribution.
inline double exact_return_truncated(const TabularMdp& mdp, const DetPolicy& pi) {
  const Eigen::MatrixXd tt = policy_transition(mdp, pi).transpose();
  const Eigen::VectorXd r = policy_reward(mdp, pi);
  Eigen::VectorXd d = mdp.initial;
  double total = 0.0, disc = 1.0;
  for (int t = 0, n = truncation_horizon(mdp.gamma); t < n; ++t) {
    total += disc * d.dot(r);
    d = tt * d;
    disc *= mdp.gamma;
  }
  return total;
}

// Unnormalized discounted visitation: rho = rho0 + gamma T_pi^T rho.
inline Eigen::VectorXd visitation(const TabularMdp& mdp, const DetPolicy& pi) {
  const Eigen::MatrixXd a =
      Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * policy_transition(mdp, pi).transpose();
  Eigen::VectorXd rho = a.partialPivLu().solve(mdp.initial);
  const double total = rho.sum(), expect = 1.0 / (1.0 - mdp.gamma);
  if (std::abs(total - expect) > 1e-9 * expect) throw NumericError("visitation does not sum to 1/(1-gamma)");
  const double bar = rho.maxCoeff();
  if (bar < expect / mdp.n_states - 1e-9 || bar > expect + 1e-9) throw NumericError("rho_bar outside its range");
  return rho;
}

inline Eigen::VectorXd visitation_truncated(const TabularMdp& mdp, const DetPolicy& pi) {
  const Eigen::MatrixXd tt = policy_transition(mdp, pi).transpose();
  Eigen::VectorXd d = mdp.initial, rho = Eigen::VectorXd::Zero(mdp.n_states);
  double disc = 1.0;
  for (int t = 0, n = truncation_horizon(mdp.gamma); t < n; ++t) {
    rho += disc * d;
    d = tt * d;
    disc *= mdp.gamma;
  }
  return rho;
}

// max_s |Q1(s, pi(s)) - Q2(s, pi(s))|
inline double dtv(const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2, const DetPolicy& pi) {
  if (q1.rows() != q2.rows() || q1.cols() != q2.cols() || static_cast<Eigen::Index>(pi.size()) != q1.rows())
    throw ShapeError("dtv operands disagree in shape");
  double m = 0.0;
  for (std::size_t s = 0; s < pi.size(); ++s) {
    const auto r = static_cast<Eigen::Index>(s);
    m = std::max(m, std::abs(q1(r, pi[s]) - q2(r, pi[s])));
  }
  return m;
}

struct IdentityResult {
  double lhs = 0.0;  // eta(pi1) - eta(pi2)
  double rhs = 0.0;  // sum_s rho_pi1(s) (Q_pi2(s, pi1(s)) - V_pi2(s))
  double residual() const { return std::abs(lhs - rhs); }
};

inline IdentityResult check_improvement_identity(const TabularMdp& mdp, const DetPolicy& pi1, const DetPolicy& pi2) {
  const Eigen::VectorXd v2 = policy_value(mdp, pi2);
  const Eigen::MatrixXd q2 = q_from_value(mdp, v2);
  const Eigen::VectorXd rho1 = visitation(mdp, pi1);
  IdentityResult r;
  r.lhs = exact_return(mdp, pi1) - mdp.initial.dot(v2);
  for (int s = 0; s < mdp.n_states; ++s) r.rhs += rho1(s) * (q2(s, pi1[static_cast<std::size_t>(s)]) - v2(s));
  return r;
}

// ---------------------------------------------------------------------------
// Behavior policy from tabular data

struct TabularSample {
  int state = 0;
  int action = 0;
};

struct BehaviorPolicy {
  DetPolicy pi;                 // majority action; unvisited states get action 0
  std::vector<char> visited;
  int conflicts = 0;            // visited states with more than one dataset action
  Eigen::VectorXd empirical;    // state frequencies in the data
};

// Majority action per visited state; count ties go to the larger Q*, then the lower index.
inline BehaviorPolicy behavior_policy(const TabularMdp& mdp, std::span<const TabularSample> data,
                                      const Eigen::MatrixXd& q_star) {
  if (data.empty()) throw ConfigError("tabular dataset is empty");
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(mdp.n_states, mdp.n_actions);
  for (const auto& d : data) {
    if (d.state < 0 || d.state >= mdp.n_states || d.action < 0 || d.action >= mdp.n_actions)
      throw DomainError("tabular sample out of range");
    ++counts(d.state, d.action);
  }
  BehaviorPolicy b;
  b.pi.assign(static_cast<std::size_t>(mdp.n_states), 0);
  b.visited.assign(static_cast<std::size_t>(mdp.n_states), 0);
  b.empirical = counts.rowwise().sum().cast<double>() / static_cast<double>(data.size());
  for (int s = 0; s < mdp.n_states; ++s) {
    if (counts.row(s).sum() == 0) continue;
    b.visited[static_cast<std::size_t>(s)] = 1;
    if ((counts.row(s).array() > 0).count() > 1) ++b.conflicts;
    int best = -1;
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (counts(s, a) == 0) continue;
      if (best < 0 || counts(s, a) > counts(s, best) || (counts(s, a) == counts(s, best) && q_star(s, a) > q_star(s, best)))
        best = a;
    }
    b.pi[static_cast<std::size_t>(s)] = best;
  }
  return b;
}

// Pointwise preference between pi_beta(s) and pi(s) under q on visited
// states; ties and unvisited states keep pi_beta.
inline DetPolicy revise_behavior(const BehaviorPolicy& beta, const DetPolicy& pi, const Eigen::MatrixXd& q) {
  if (pi.size() != beta.pi.size()) throw ShapeError("comparison policy size");
  DetPolicy out = beta.pi;
  for (std::size_t s = 0; s < out.size(); ++s) {
    if (!beta.visited[s]) continue;
    const auto r = static_cast<Eigen::Index>(s);
    if (q(r, pi[s]) > q(r, beta.pi[s])) out[s] = pi[s];
  }
  return out;
}

struct RevisionGainReport {
  double a = 0.0;            // eta(revised) - eta(beta)
  double b = 0.0;            // sum_s rho_beta(s) (Q*(s, revised) - Q*(s, beta))
  double b_empirical = 0.0;  // same gap weighted by the data's state frequencies
  double drift = 0.0;        // max_s |rho_revised(s) - rho_beta(s)|
  double residual() const { return std::abs(a - b); }
  bool pass() const { return b >= 0.0; }
};

inline RevisionGainReport check_revision_gain(const TabularMdp& mdp, const BehaviorPolicy& beta, const DetPolicy& revised,
                               const Eigen::MatrixXd& q_star) {
  RevisionGainReport r;
  const Eigen::VectorXd rho_b = visitation(mdp, beta.pi), rho_r = visitation(mdp, revised);
  r.a = exact_return(mdp, revised) - exact_return(mdp, beta.pi);
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto i = static_cast<std::size_t>(s);
    const double gap = q_star(s, revised[i]) - q_star(s, beta.pi[i]);
    r.b += rho_b(s) * gap;
    r.b_empirical += beta.empirical(s) * gap;
  }
  r.drift = (rho_r - rho_b).cwiseAbs().maxCoeff();
  return r;
}

struct NoisyRevisionReport {
  double alpha = 0.0;        // bound on |delta| along pi_beta
  double alpha_tilde = 0.0;  // bound on |delta| along the revised policy
  double lhs = 0.0;          // sum_s rho_beta (Q*(s, revised) - Q*(s, beta))
  double hat = 0.0;          // same with Q_hat
  double rho_bar = 0.0;      // max_s rho_beta(s)
  double rho_bar_lo = 0.0;   // 1/(|S|(1-gamma))
  double rho_bar_hi = 0.0;   // 1/(1-gamma)
  double changed_mass = 0.0; // rho_beta mass on states whose action was revised
  double dtv_revised = 0.0;
  double dtv_beta = 0.0;
  double eta_gap = 0.0;      // eta(revised) - eta(beta)
  double b_empirical = 0.0;

  double slack() const { return 2.0 * (alpha_tilde + alpha) * rho_bar; }
  // Sharp form: the noise only enters on revised states.
  double rigorous_slack() const { return (alpha_tilde + alpha) * changed_mass; }
  bool chain_pass() const { return lhs >= hat - slack(); }
  bool rigorous_pass() const { return lhs >= hat - rigorous_slack() - 1e-12; }
  bool dtv_pass() const { return dtv_revised <= alpha_tilde + 1e-15 && dtv_beta <= alpha + 1e-15; }
  bool rho_bar_pass() const { return rho_bar >= rho_bar_lo - 1e-9 && rho_bar <= rho_bar_hi + 1e-9; }
};

// Q_hat = Q* + delta with |delta| <= min(alpha, alpha_tilde) on pi_beta's
// action and <= alpha_tilde elsewhere, so both bounds hold whichever action
// the revision picks.
inline Eigen::MatrixXd perturb_q(const Eigen::MatrixXd& q_star, const DetPolicy& beta, double alpha, double alpha_tilde,
                                 std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd q = q_star;
  for (Eigen::Index s = 0; s < q.rows(); ++s)
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      const double amp = a == beta[static_cast<std::size_t>(s)] ? std::min(alpha, alpha_tilde) : alpha_tilde;
      q(s, a) += amp * rng.uniform(-1.0, 1.0);
    }
  return q;
}

inline NoisyRevisionReport check_noisy_revision(const TabularMdp& mdp, const BehaviorPolicy& beta, const DetPolicy& comparison,
                               const Eigen::MatrixXd& q_star, double alpha, double alpha_tilde, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha_tilde >= 0.0)) throw ConfigError("noise amplitudes must be >= 0");
  const Eigen::MatrixXd q_hat = perturb_q(q_star, beta.pi, alpha, alpha_tilde, seed);
  const DetPolicy revised = revise_behavior(beta, comparison, q_hat);
  const Eigen::VectorXd rho = visitation(mdp, beta.pi);
  NoisyRevisionReport r;
  r.alpha = alpha;
  r.alpha_tilde = alpha_tilde;
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto i = static_cast<std::size_t>(s);
    r.lhs += rho(s) * (q_star(s, revised[i]) - q_star(s, beta.pi[i]));
    r.hat += rho(s) * (q_hat(s, revised[i]) - q_hat(s, beta.pi[i]));
    r.b_empirical += beta.empirical(s) * (q_star(s, revised[i]) - q_star(s, beta.pi[i]));
    if (revised[i] != beta.pi[i]) r.changed_mass += rho(s);
  }
  r.rho_bar = rho.maxCoeff();
  r.rho_bar_hi = 1.0 / (1.0 - mdp.gamma);
  r.rho_bar_lo = r.rho_bar_hi / mdp.n_states;
  r.dtv_revised = dtv(q_hat, q_star, revised);
  r.dtv_beta = dtv(q_hat, q_star, beta.pi);
  r.eta_gap = exact_return(mdp, revised) - exact_return(mdp, beta.pi);
  return r;
}

// ---------------------------------------------------------------------------
// Random instances

// Dirichlet(1) over n outcomes.
inline Eigen::RowVectorXd dirichlet_ones(int n, Rng& rng) {
  Eigen::RowVectorXd p(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    p(i) = -std::log(u);
  }
  return p / p.sum();
}

// |S| in [5, 30], |A| in [2, 5], Dirichlet(1) rows, rewards U[-1, 1],
// gamma in {0.9, 0.95, 0.99}, Dirichlet(1) initial distribution.
inline TabularMdp random_mdp(Rng& rng, int max_states = 30) {
  TabularMdp mdp;
  mdp.n_states = 5 + static_cast<int>(rng.index(static_cast<std::size_t>(max_states - 4)));
  mdp.n_actions = 2 + static_cast<int>(rng.index(4));
  static constexpr double gammas[] = {0.9, 0.95, 0.99};
  mdp.gamma = gammas[rng.index(3)];
  for (int a = 0; a < mdp.n_actions; ++a) {
    Eigen::MatrixXd t(mdp.n_states, mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) t.row(s) = dirichlet_ones(mdp.n_states, rng);
    mdp.transition.push_back(std::move(t));
  }
  mdp.reward.resize(mdp.n_states, mdp.n_actions);
  for (Eigen::Index k = 0; k < mdp.reward.size(); ++k) mdp.reward(k) = rng.uniform(-1.0, 1.0);
  mdp.initial = dirichlet_ones(mdp.n_states, rng).transpose();
  mdp.validate();
  return mdp;
}

inline DetPolicy random_policy(const TabularMdp& mdp, Rng& rng) {
  DetPolicy pi(static_cast<std::size_t>(mdp.n_states));
  for (int& a : pi) a = static_cast<int>(rng.index(static_cast<std::size_t>(mdp.n_actions)));
  return pi;
}

inline int sample_index(const Eigen::RowVectorXd& p, Rng& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    c += p(i);
    if (u < c) return static_cast<int>(i);
  }
  return static_cast<int>(p.size() - 1);
}

// Trajectories of a noisy behavior: a fixed per-state action with
// probability 0.7, otherwise uniform.
inline std::vector<TabularSample> random_tabular_dataset(const TabularMdp& mdp, Rng& rng, int episodes = 40,
                                                         int length = 25) {
  const DetPolicy base = random_policy(mdp, rng);
  std::vector<TabularSample> data;
  for (int e = 0; e < episodes; ++e) {
    int s = sample_index(mdp.initial.transpose(), rng);
    for (int t = 0; t < length; ++t) {
      const int a = rng.bernoulli(0.7) ? base[static_cast<std::size_t>(s)]
                                       : static_cast<int>(rng.index(static_cast<std::size_t>(mdp.n_actions)));
      data.push_back({s, a});
      s = sample_index(mdp.transition[static_cast<std::size_t>(a)].row(s), rng);
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Instance sweep for verify-theory

struct TheoryRow {
  int instance = 0;
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
  double identity_residual = 0.0;
  double eval_mode_gap = 0.0;  // |linear solve - truncated sum| for eta
  RevisionGainReport gain;
  NoisyRevisionReport noisy;
  int conflicts = 0;

  bool identity_pass() const { return identity_residual < 1e-8; }
  bool eval_pass() const { return eval_mode_gap < 1e-8; }
  bool all_pass() const {
    return identity_pass() && eval_pass() && gain.pass() && noisy.chain_pass() && noisy.rigorous_pass() &&
           noisy.dtv_pass() && noisy.rho_bar_pass();
  }
};

inline TheoryRow run_theory_instance(int index, std::uint64_t seed, double alpha, double alpha_tilde) {
  Rng rng(hash_combine(seed, static_cast<std::uint64_t>(index)));
  const TabularMdp mdp = random_mdp(rng);
  TheoryRow row;
  row.instance = index;
  row.n_states = mdp.n_states;
  row.n_actions = mdp.n_actions;
  row.gamma = mdp.gamma;
  const DetPolicy pi1 = random_policy(mdp, rng), pi2 = random_policy(mdp, rng);
  row.identity_residual = check_improvement_identity(mdp, pi1, pi2).residual();
  row.eval_mode_gap = std::abs(exact_return(mdp, pi1) - exact_return_truncated(mdp, pi1));
  const Eigen::MatrixXd q_star = value_iteration(mdp, 1e-12).q;
  const auto data = random_tabular_dataset(mdp, rng);
  const BehaviorPolicy beta = behavior_policy(mdp, data, q_star);
  row.conflicts = beta.conflicts;
  const DetPolicy comparison = random_policy(mdp, rng);
  row.gain = check_revision_gain(mdp, beta, revise_behavior(beta, comparison, q_star), q_star);
  row.noisy = check_noisy_revision(mdp, beta, comparison, q_star, alpha, alpha_tilde, rng.next_u64());
  return row;
}

inline void write_theory_header(std::ostream& out) {
  out << "instance,n_states,n_actions,gamma,identity_residual,identity,eval_mode_gap,eval_modes,"
         "A,B,B_empirical,gain_residual,visitation_drift,gain,"
         "alpha,alpha_tilde,lhs,hat,slack,noisy_chain,changed_mass,rigorous_slack,noisy_rigorous,"
         "dtv_revised,dtv_beta,dtv_bounds,rho_bar,rho_bar_lo,rho_bar_hi,rho_bar_range,eta_gap,eta_residual,conflicts\n";
}

inline void write_theory_row(const TheoryRow& r, std::ostream& out) {
  auto f = [](double v) { return format_double(v); };
  auto pf = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  const auto& g = r.gain;
  const auto& n = r.noisy;
  out << r.instance << ',' << r.n_states << ',' << r.n_actions << ',' << f(r.gamma) << ',' << f(r.identity_residual)
      << ',' << pf(r.identity_pass()) << ',' << f(r.eval_mode_gap) << ',' << pf(r.eval_pass()) << ',' << f(g.a) << ','
      << f(g.b) << ',' << f(g.b_empirical) << ',' << f(g.residual()) << ',' << f(g.drift) << ',' << pf(g.pass())
      << ',' << f(n.alpha) << ',' << f(n.alpha_tilde) << ',' << f(n.lhs) << ',' << f(n.hat) << ','
      << f(n.slack()) << ',' << pf(n.chain_pass()) << ',' << f(n.changed_mass) << ',' << f(n.rigorous_slack())
      << ',' << pf(n.rigorous_pass()) << ',' << f(n.dtv_revised) << ',' << f(n.dtv_beta) << ','
      << pf(n.dtv_pass()) << ',' << f(n.rho_bar) << ',' << f(n.rho_bar_lo) << ',' << f(n.rho_bar_hi) << ','
      << pf(n.rho_bar_pass()) << ',' << f(n.eta_gap) << ',' << f(std::abs(n.eta_gap - (n.hat - n.slack())))
      << ',' << r.conflicts << '\n';
}

}  // namespace oap
