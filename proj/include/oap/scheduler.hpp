#pragma once

// The periodic query/train loop and the five-scheme harness.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "oap/agent.hpp"
#include "oap/data.hpp"
#include "oap/env.hpp"
#include "oap/errors.hpp"
#include "oap/io.hpp"
#include "oap/preference.hpp"
#include "oap/ranknet.hpp"
#include "oap/rng.hpp"

namespace oap {

struct OapSchedule {
  std::size_t n_train = 50'000;
  std::size_t m_inter = 5'000;
  std::size_t k_total = 5'000;

  std::size_t rounds() const { return n_train / m_inter; }
  std::size_t per_round_queries() const { return k_total * m_inter / n_train; }

  void validate() const {
    if (n_train == 0 || m_inter == 0) throw ConfigError("schedule.n_train and schedule.m_inter must be positive");
    if (n_train % m_inter != 0) throw ConfigError("schedule.m_inter must divide schedule.n_train");
  }
};

enum class Scheme { Offline, Online, OnlineMix, OfflineToOnline, Oap };

inline std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Offline: return "offline";
    case Scheme::Online: return "online";
    case Scheme::OnlineMix: return "online-mix";
    case Scheme::OfflineToOnline: return "o2o";
    case Scheme::Oap: return "oap";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view name) {
  for (auto s : {Scheme::Offline, Scheme::Online, Scheme::OnlineMix, Scheme::OfflineToOnline, Scheme::Oap})
    if (scheme_name(s) == name) return s;
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

struct SchemeSpec {
  Scheme scheme = Scheme::Oap;
  bool oap_ft = false;          // one query round after pretraining
  bool oap_inf = false;         // every index queried each round, no ranknet
  bool oap_no_ranknet = false;  // budgeted queries, no pseudo labels
  bool o2o_interval = false;    // env steps spread through training

  void validate() const {
    const int oap_flags = int(oap_ft) + int(oap_inf) + int(oap_no_ranknet);
    if (oap_flags > 0 && scheme != Scheme::Oap) throw ConfigError("oap variant flags need scheme oap");
    if (oap_flags > 1) throw ConfigError("oap variant flags are mutually exclusive");
    if (o2o_interval && scheme != Scheme::OfflineToOnline) throw ConfigError("o2o_interval needs scheme o2o");
  }

  std::string variant() const {
    if (oap_ft) return "ft";
    if (oap_inf) return "inf";
    if (oap_no_ranknet) return "no-rn";
    if (o2o_interval) return "interval";
    return "base";
  }

  // "oap", "oap-inf", "o2o-interval", ...
  std::string label() const {
    const std::string v = variant();
    return std::string(scheme_name(scheme)) + (v == "base" ? "" : "-" + v);
  }

  static SchemeSpec parse(std::string_view label) {
    SchemeSpec s;
    auto with = [&](std::string_view prefix) { return label.rfind(prefix, 0) == 0; };
    if (label == "oap-ft") s.oap_ft = true;
    else if (label == "oap-inf") s.oap_inf = true;
    else if (label == "oap-no-rn") s.oap_no_ranknet = true;
    else if (label == "o2o-interval") s.o2o_interval = true;
    if (with("oap")) s.scheme = Scheme::Oap;
    else if (with("o2o")) s.scheme = Scheme::OfflineToOnline;
    else s.scheme = parse_scheme(label);
    if (s.label() != label) throw ConfigError("unknown scheme '" + std::string(label) + "'");
    return s;
  }
};

struct RunSettings {
  AgentConfig agent;
  RankNetConfig ranknet;
  OapSchedule schedule;
  OracleSpec oracle;
  std::size_t online_budget = 5'000;  // env steps for online phases
  std::size_t eval_every = 1'000;
  int eval_episodes = 10;
  int final_evals = 10;
  std::size_t start_steps = 1'000;  // uniform-random warmup for Online
  double exploration_noise = 0.1;   // fraction of the action bound
  bool unqueried_first = true;

  static RunSettings desk() {
    RunSettings s;
    s.agent.actor_hidden = {64, 64};
    s.agent.critic_hidden = {64, 64};
    s.agent.batch_size = 64;
    s.ranknet.hidden = {64, 32};
    return s;
  }

  static RunSettings paper() {
    RunSettings s;
    s.schedule = {1'000'000, 100'000, 100'000};
    s.online_budget = 100'000;
    s.start_steps = 10'000;
    return s;
  }

  void validate() const {
    agent.validate();
    ranknet.validate();
    schedule.validate();
    if (eval_every == 0 || eval_episodes <= 0 || final_evals <= 0) throw ConfigError("bad evaluation settings");
    if (!(exploration_noise >= 0.0)) throw ConfigError("exploration_noise must be >= 0");
  }
};

// Resource counters for the scheme comparison. Evaluation rollouts are
// tallied separately and never count as training interaction.
struct ResourceAudit {
  std::size_t env_steps = 0;
  std::size_t reward_calls = 0;
  std::size_t oracle_queries = 0;
  std::size_t offline_samples_used = 0;
  std::size_t offline_updates = 0;   // updates with the plain constraint on D alone
  std::size_t adjusted_updates = 0;  // updates with the preference-adjusted constraint
  std::size_t online_updates = 0;
  std::size_t eval_env_steps = 0;
};

// Requirement rows: pre-collected data, training on offline data, state
// transitions, reward function, preference queries.
struct ResourcePattern {
  bool pre_collected = false;
  bool trains_offline = false;
  bool transitions = false;
  bool reward = false;
  bool queries = false;

  friend bool operator==(const ResourcePattern&, const ResourcePattern&) = default;
};

inline ResourcePattern expected_pattern(Scheme s) {
  switch (s) {
    case Scheme::Offline: return {true, true, false, false, false};
    case Scheme::Online: return {false, false, true, true, false};
    case Scheme::OnlineMix: return {true, false, true, true, false};
    case Scheme::OfflineToOnline: return {true, true, true, true, false};
    case Scheme::Oap: return {true, false, false, false, true};
  }
  return {};
}

inline ResourcePattern observed_pattern(const ResourceAudit& a) {
  return {a.offline_samples_used > 0, a.offline_updates > 0, a.env_steps > 0, a.reward_calls > 0, a.oracle_queries > 0};
}

struct ReferenceReturns {
  double random = 0.0;
  double expert = 0.0;

  double normalize(double j) const { return 100.0 * (j - random) / (expert - random); }
};

// Mean undiscounted returns of the uniform-random policy and the expert
// controller over a fixed evaluation stream.
inline ReferenceReturns reference_returns(const Env& env, int episodes = 100, std::uint64_t seed = 0x5eed) {
  ReferenceReturns ref;
  Rng rr(seed), re(seed);
  for (int e = 0; e < episodes; ++e) {
    ref.random += run_episode(env, env.reset(rr), [&](const EnvState&) { return env.random_action(rr); }, rr);
    ref.expert += run_episode(env, env.reset(re), [&](const EnvState& s) { return env.expert_action(s); }, re);
  }
  ref.random /= episodes;
  ref.expert /= episodes;
  if (!(ref.expert > ref.random)) throw ConfigError("expert does not beat the random policy on " + env.name());
  return ref;
}

struct EvalPoint {
  std::size_t step = 0;
  double return_mean = 0.0;
  double return_std = 0.0;
  double norm_score = 0.0;
  std::size_t queries_used = 0;
  std::size_t env_steps = 0;
};

struct RoundInfo {
  std::size_t step = 0;
  std::size_t queries = 0;
  std::size_t policy_preferred = 0;  // oracle answers that chose pi(s)
  double ranknet_cost = std::numeric_limits<double>::quiet_NaN();
  std::size_t pseudo_labels = 0;
  std::size_t pseudo_policy = 0;
};

struct RunReport {
  SchemeSpec spec;
  std::string env;
  std::uint64_t seed = 0;
  ReferenceReturns reference;
  std::vector<EvalPoint> evals;
  std::vector<RoundInfo> rounds;
  ResourceAudit audit;
  std::size_t k_total = 0;
  PreferredActionTable::Counts labels;
  std::optional<PreferredActionTable> table;  // OAP runs only
  QueryDataset queries;                       // OAP runs only
  std::optional<Td3bcAgent> agent;

  // Mean normalized score over the last `n` evaluations.
  double final_score(int n = 10) const { return tail_mean(n, &EvalPoint::norm_score); }
  double final_return(int n = 10) const { return tail_mean(n, &EvalPoint::return_mean); }

 private:
  double tail_mean(int n, double EvalPoint::*field) const {
    if (evals.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t k = std::min(evals.size(), static_cast<std::size_t>(n));
    double s = 0.0;
    for (std::size_t i = evals.size() - k; i < evals.size(); ++i) s += evals[i].*field;
    return s / static_cast<double>(k);
  }
};

// A budgeted OAP run with k_total = 0 cannot query.
inline ResourcePattern expected_pattern(const RunReport& r) {
  ResourcePattern p = expected_pattern(r.spec.scheme);
  if (r.spec.scheme == Scheme::Oap && !r.spec.oap_inf && r.k_total == 0) p.queries = false;
  return p;
}

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t steps = 0;
};

// Deterministic actor rollouts from a fixed stream.
inline EvalResult evaluate_policy(const Env& env, const Td3bcAgent& agent, int episodes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> rets;
  EvalResult out;
  for (int e = 0; e < episodes; ++e) {
    EnvState s = env.reset(rng);
    double total = 0.0;
    while (true) {
      StepResult r = env.step(s, agent.act(s.obs), rng);
      ++out.steps;
      total += r.reward;
      if (r.done()) break;
      s = std::move(r.next);
    }
    rets.push_back(total);
  }
  for (double r : rets) out.mean += r;
  out.mean /= episodes;
  for (double r : rets) out.stddev += (r - out.mean) * (r - out.mean);
  out.stddev = std::sqrt(out.stddev / episodes);
  return out;
}

namespace detail {

// State shared by every scheme's training loop.
class Runner {
 public:
  Runner(const Env& env, const RunSettings& st, SchemeSpec spec, const OfflineDataset* data, std::uint64_t seed,
         ReferenceReturns ref)
      : env_(env),
        st_(st),
        agent_(env.state_dim(), env.action_dim(), env.action_bound(), st.agent,
               data ? StateNormalizer::fit(*data) : StateNormalizer::identity(env.state_dim()), seed),
        buffer_(data ? ReplayBuffer(*data) : ReplayBuffer(env.state_dim(), env.action_dim())),
        sample_rng_(Rng(seed).split(1)),
        explore_rng_(Rng(seed).split(2)),
        env_rng_(Rng(seed).split(3)),
        eval_seed_(hash_combine(seed, 0xe7a1)) {
    report_.spec = spec;
    report_.env = env.name();
    report_.seed = seed;
    report_.reference = ref;
    if (data) report_.audit.offline_samples_used = data->size();
  }

  Td3bcAgent& agent() { return agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  ResourceAudit& audit() { return report_.audit; }
  RunReport& report() { return report_; }
  std::size_t step() const { return step_; }

  Batch sample() { return buffer_.gather(buffer_.sample_indices(static_cast<std::size_t>(st_.agent.batch_size), sample_rng_)); }

  void offline_update() {
    agent_.train_step(sample());
    ++report_.audit.offline_updates;
    tick();
  }

  void adjusted_update(const PreferredActionTable& table) {
    Batch b = sample();
    const Eigen::MatrixXd target = table.gather(b.indices);
    agent_.train_step(b, &target);
    ++report_.audit.adjusted_updates;
    tick();
  }

  // One exploratory env step into the buffer, optionally followed by an
  // update. Does not advance the evaluation clock.
  void online_step(bool random_action, bool update, ActorObjective obj) {
    if (!env_state_) env_state_ = env_.reset(env_rng_);
    std::vector<double> a;
    if (random_action) {
      a = env_.random_action(explore_rng_);
    } else {
      a = agent_.act(env_state_->obs);
      const double bound = env_.action_bound();
      for (double& v : a) v = std::clamp(v + explore_rng_.normal(0.0, st_.exploration_noise * bound), -bound, bound);
    }
    StepResult r = env_.step(*env_state_, a, env_rng_);
    ++report_.audit.env_steps;
    ++report_.audit.reward_calls;
    buffer_.add(env_state_->obs, a, r.next.obs, r.reward, r.terminal);
    if (r.done())
      env_state_.reset();
    else
      env_state_ = std::move(r.next);
    if (update) {
      agent_.train_step(sample(), nullptr, obj);
      ++report_.audit.online_updates;
    }
  }

  void tick() {
    ++step_;
    if (step_ % st_.eval_every == 0) evaluate();
  }

  void evaluate() {
    const EvalResult r = evaluate_policy(env_, agent_, st_.eval_episodes, eval_seed_);
    report_.audit.eval_env_steps += r.steps;
    report_.evals.push_back({step_, r.mean, r.stddev, report_.reference.normalize(r.mean), report_.audit.oracle_queries,
                             report_.audit.env_steps});
  }

  RunReport finish() {
    report_.agent = agent_;
    return std::move(report_);
  }

 private:
  const Env& env_;
  const RunSettings& st_;
  Td3bcAgent agent_;
  ReplayBuffer buffer_;
  Rng sample_rng_, explore_rng_, env_rng_;
  std::uint64_t eval_seed_;
  std::optional<EnvState> env_state_;
  std::size_t step_ = 0;
  RunReport report_;
};

// One query round: oracle labels for the selected indices, then ranknet
// training and pseudo labels for every index the oracle has not labeled.
class QueryRound {
 public:
  QueryRound(const OfflineDataset& ds, double max_action, const OracleQ& oracle, const SchemeSpec& spec,
             const RunSettings& st, std::uint64_t seed)
      : oracle_(oracle),
        spec_(spec),
        st_(st),
        states_(ReplayBuffer(ds).all_states()),
        actions_(ReplayBuffer(ds).all_actions()),
        budget_(spec.oap_inf ? QueryBudget::unlimited() : QueryBudget(st.schedule.k_total)),
        ranknet_(ds.state_dim, ds.action_dim, max_action, st.ranknet, StateNormalizer::fit(ds), seed) {}

  const QueryBudget& budget() const { return budget_; }
  const QueryDataset& dq() const { return dq_; }
  const RankNet& ranknet() const { return ranknet_; }

  RoundInfo run(std::size_t step, std::size_t n_queries, const Td3bcAgent& agent, PreferredActionTable& table,
                ResourceAudit& audit) {
    RoundInfo info;
    info.step = step;
    const Eigen::MatrixXd pi = agent.act(states_);
    const auto n = static_cast<std::size_t>(states_.cols());
    std::vector<std::size_t> chosen;
    if (spec_.oap_inf) {
      chosen.resize(n);
      std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    } else {
      const std::vector<double> scores = rank_divergence(pi, actions_);
      chosen = select_query_batch(scores, table, n_queries, budget_, st_.unqueried_first);
    }
    for (std::size_t i : chosen) {
      const auto j = static_cast<Eigen::Index>(i);
      const std::vector<double> s = column_vector(states_, j), a = column_vector(actions_, j),
                                p = column_vector(pi, j);
      std::vector<double> pref = preference_query(oracle_, budget_, s, a, p);
      ++audit.oracle_queries;
      ++info.queries;
      table.set_oracle(i, pref);
      QueryRecord rec{i, s, a, p, std::move(pref), step};
      if (rec.preferred_is_policy()) ++info.policy_preferred;
      if (!spec_.oap_inf) dq_.records.push_back(std::move(rec));
    }
    if (spec_.oap_inf || spec_.oap_no_ranknet || dq_.empty()) return info;
    info.ranknet_cost = ranknet_.train(dq_);
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (!table.queried(i)) rest.push_back(i);
    if (rest.empty()) return info;
    Eigen::MatrixXd S(states_.rows(), static_cast<Eigen::Index>(rest.size()));
    Eigen::MatrixXd A(actions_.rows(), S.cols()), P(actions_.rows(), S.cols());
    for (std::size_t k = 0; k < rest.size(); ++k) {
      const auto j = static_cast<Eigen::Index>(rest[k]), c = static_cast<Eigen::Index>(k);
      S.col(c) = states_.col(j);
      A.col(c) = actions_.col(j);
      P.col(c) = pi.col(j);
    }
    const std::vector<bool> policy_wins = ranknet_.prefers_policy(S, A, P);
    for (std::size_t k = 0; k < rest.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      const Eigen::VectorXd chosen_action = policy_wins[k] ? Eigen::VectorXd(P.col(c)) : Eigen::VectorXd(A.col(c));
      table.set_pseudo(rest[k], {chosen_action.data(), static_cast<std::size_t>(chosen_action.size())});
      ++info.pseudo_labels;
      if (policy_wins[k]) ++info.pseudo_policy;
    }
    return info;
  }

 private:
  const OracleQ& oracle_;
  const SchemeSpec& spec_;
  const RunSettings& st_;
  Eigen::MatrixXd states_;
  Eigen::MatrixXd actions_;
  QueryBudget budget_;
  RankNet ranknet_;
  QueryDataset dq_;
};

}  // namespace detail

// Adjusted-objective training with a query round whenever the 1-based update
// count is a multiple of m_inter (so no round before the first update).
inline RunReport run_oap(const Env& env, const OfflineDataset& ds, const OracleQ& oracle, const RunSettings& st,
                         const SchemeSpec& spec, std::uint64_t seed, const ReferenceReturns& ref) {
  detail::Runner run(env, st, spec, &ds, seed, ref);
  detail::QueryRound rounds(ds, env.action_bound(), oracle, spec, st, seed);
  PreferredActionTable table(ds);
  const OapSchedule& sch = st.schedule;
  auto round = [&](std::size_t n_queries) {
    run.report().rounds.push_back(rounds.run(run.step(), n_queries, run.agent(), table, run.audit()));
    if (rounds.budget().used() > rounds.budget().k_total()) throw BudgetError("query budget exceeded");
  };
  if (spec.oap_ft) {
    for (std::size_t t = 1; t <= sch.n_train; ++t) run.adjusted_update(table);
    round(sch.k_total);
    for (std::size_t t = 1; t <= sch.m_inter; ++t) run.adjusted_update(table);
  } else {
    for (std::size_t t = 1; t <= sch.n_train; ++t) {
      run.adjusted_update(table);
      if (t % sch.m_inter == 0) round(sch.per_round_queries());
    }
  }
  RunReport rep = run.finish();
  rep.k_total = spec.oap_inf ? 0 : sch.k_total;
  rep.labels = table.counts();
  rep.table = std::move(table);
  rep.queries = rounds.dq();
  return rep;
}

// Dispatch on the scheme. `data` is required by every scheme except Online;
// `oracle` by OAP.
inline RunReport run_scheme(const SchemeSpec& spec, const Env& env, const OfflineDataset* data, const OracleQ* oracle,
                            const RunSettings& st, std::uint64_t seed, const ReferenceReturns& ref) {
  spec.validate();
  st.validate();
  if (spec.scheme != Scheme::Online && data == nullptr)
    throw ConfigError(std::string(scheme_name(spec.scheme)) + " needs an offline dataset");
  if (data) {
    data->validate();
    if (data->state_dim != env.state_dim() || data->action_dim != env.action_dim())
      throw ConfigError("dataset dimensions do not match the environment");
  }
  const OapSchedule& sch = st.schedule;
  switch (spec.scheme) {
    case Scheme::Oap:
      if (oracle == nullptr) throw ConfigError("oap needs an oracle");
      return run_oap(env, *data, *oracle, st, spec, seed, ref);
    case Scheme::Offline: {
      detail::Runner run(env, st, spec, data, seed, ref);
      for (std::size_t t = 1; t <= sch.n_train; ++t) run.offline_update();
      return run.finish();
    }
    case Scheme::Online: {
      detail::Runner run(env, st, spec, nullptr, seed, ref);
      for (std::size_t t = 1; t <= st.online_budget; ++t)
      {
        run.online_step(t <= st.start_steps, t > st.start_steps, ActorObjective::Td3);
        run.tick();
      }
      return run.finish();
    }
    case Scheme::OnlineMix: {
      detail::Runner run(env, st, spec, data, seed, ref);
      for (std::size_t t = 1; t <= st.online_budget; ++t) {
        run.online_step(false, true, ActorObjective::Td3);
        run.tick();
      }
      return run.finish();
    }
    case Scheme::OfflineToOnline: {
      detail::Runner run(env, st, spec, data, seed, ref);
      if (spec.o2o_interval) {
        const std::size_t rounds = sch.rounds();
        for (std::size_t t = 1; t <= sch.n_train; ++t) {
          run.offline_update();
          if (t % sch.m_inter == 0) {
            const std::size_t r = t / sch.m_inter;
            const std::size_t steps = st.online_budget * r / rounds - st.online_budget * (r - 1) / rounds;
            for (std::size_t k = 0; k < steps; ++k) run.online_step(false, false, ActorObjective::Td3Bc);
          }
        }
      } else {
        for (std::size_t t = 1; t <= sch.n_train; ++t) run.offline_update();
        for (std::size_t t = 1; t <= st.online_budget; ++t) {
          run.online_step(false, true, ActorObjective::Td3Bc);
          run.tick();
        }
      }
      return run.finish();
    }
  }
  throw ConfigError("unhandled scheme");
}

// step,scheme,variant,env,seed,return_mean,return_std,norm_score,queries_used,env_steps
inline void write_metrics_header(std::ostream& out) {
  out << "step,scheme,variant,env,seed,return_mean,return_std,norm_score,queries_used,env_steps\n";
}

inline void write_metrics_rows(const RunReport& r, std::ostream& out) {
  for (const auto& e : r.evals)
    out << e.step << ',' << scheme_name(r.spec.scheme) << ',' << r.spec.variant() << ',' << r.env << ',' << r.seed
        << ',' << format_double(e.return_mean) << ',' << format_double(e.return_std) << ','
        << format_double(e.norm_score) << ',' << e.queries_used << ',' << e.env_steps << '\n';
}

// ---------------------------------------------------------------------------
// Action divergence vs value gain

struct DiagnosticRow {
  std::size_t index = 0;
  double divergence = 0.0;  // ||pi(s) - a||, unsquared
  double value_gain = 0.0;  // Q*(s, pi(s)) - Q*(s, a)
};

inline std::vector<DiagnosticRow> diagnostics(const Td3bcAgent& agent, const OfflineDataset& ds, const OracleQ& oracle) {
  ds.validate();
  const ReplayBuffer buf(ds);
  const Eigen::MatrixXd pi = agent.act(buf.all_states());
  std::vector<DiagnosticRow> rows(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::vector<double> p = column_vector(pi, static_cast<Eigen::Index>(i));
    const auto& t = ds[i];
    double d2 = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) d2 += (p[k] - t.a[k]) * (p[k] - t.a[k]);
    rows[i] = {i, std::sqrt(d2), oracle.q(t.s, p) - oracle.q(t.s, t.a)};
  }
  return rows;
}

// Fraction of samples that diverge more than the median and lose value.
inline double harmful_divergence_fraction(const std::vector<DiagnosticRow>& rows) {
  if (rows.empty()) return 0.0;
  std::vector<double> d;
  for (const auto& r : rows) d.push_back(r.divergence);
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  const double median = d[d.size() / 2];
  std::size_t bad = 0;
  for (const auto& r : rows)
    if (r.divergence > median && r.value_gain < 0.0) ++bad;
  return static_cast<double>(bad) / static_cast<double>(rows.size());
}

inline void write_diagnostics_csv(const std::vector<DiagnosticRow>& rows, std::ostream& out) {
  out << "# action_divergence is the unsquared distance ||pi(s)-a||; value_gain = Q(s,pi(s)) - Q(s,a)\n";
  out << "index,action_divergence,value_gain\n";
  for (const auto& r : rows) out << r.index << ',' << format_double(r.divergence) << ',' << format_double(r.value_gain) << '\n';
}

}  // namespace oap
