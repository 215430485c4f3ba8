#pragma once

// Offline dataset D, the preferred-action table, the query dataset D_q,
// quality-tier dataset generation and the OAPDS text format.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oap/env.hpp"
#include "oap/errors.hpp"
#include "oap/io.hpp"
#include "oap/rng.hpp"

namespace oap {

enum class QualityTier { Random, Medium, MediumReplay, MediumExpert, Expert };

inline std::string_view tier_name(QualityTier t) {
  switch (t) {
    case QualityTier::Random: return "random";
    case QualityTier::Medium: return "medium";
    case QualityTier::MediumReplay: return "medium-replay";
    case QualityTier::MediumExpert: return "medium-expert";
    case QualityTier::Expert: return "expert";
  }
  return "?";
}

inline QualityTier parse_tier(std::string_view name) {
  for (auto t : {QualityTier::Random, QualityTier::Medium, QualityTier::MediumReplay, QualityTier::MediumExpert,
                 QualityTier::Expert})
    if (tier_name(t) == name) return t;
  throw ConfigError("unknown dataset tier '" + std::string(name) + "'");
}

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  std::vector<double> s_next;
  double r = 0.0;
  bool done = false;  // absorbing state reached; horizon timeouts are not stored as done

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct OfflineDataset {
  std::vector<Transition> transitions;
  int state_dim = 0;
  int action_dim = 0;
  double gamma = 0.99;
  std::optional<QualityTier> quality;
  std::optional<std::uint64_t> source_seed;

  std::size_t size() const { return transitions.size(); }
  const Transition& operator[](std::size_t i) const { return transitions[i]; }

  void validate() const {
    if (transitions.empty()) throw ConfigError("offline dataset is empty");
    if (state_dim <= 0 || action_dim <= 0) throw ConfigError("dataset dimensions must be positive");
    for (const auto& t : transitions)
      if (static_cast<int>(t.s.size()) != state_dim || static_cast<int>(t.s_next.size()) != state_dim ||
          static_cast<int>(t.a.size()) != action_dim)
        throw ShapeError("transition dimensions disagree with the dataset header");
  }

  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

struct GeneratedDataset {
  OfflineDataset dataset;
  std::vector<double> episode_returns;  // completed source episodes only

  double mean_return() const {
    if (episode_returns.empty()) return 0.0;
    double s = 0.0;
    for (double r : episode_returns) s += r;
    return s / static_cast<double>(episode_returns.size());
  }
};

namespace detail {

enum class Behavior { Random, Medium, Expert };

inline std::vector<double> behavior_action(const Env& env, const EnvState& s, Behavior b, Rng& rng) {
  switch (b) {
    case Behavior::Random: return env.random_action(rng);
    case Behavior::Expert: return env.expert_action(s);
    case Behavior::Medium: {
      if (rng.bernoulli(0.2)) return env.random_action(rng);
      const double bound = env.action_bound();
      std::vector<double> a = env.expert_action(s);
      for (double& v : a) v = std::clamp(v + rng.normal(0.0, 0.3 * bound), -bound, bound);
      return a;
    }
  }
  return {};
}

inline void collect(const Env& env, Behavior b, std::size_t n, Rng& rng, GeneratedDataset& out) {
  std::size_t collected = 0;
  while (collected < n) {
    EnvState state = env.reset(rng);
    double ret = 0.0;
    while (collected < n) {
      const std::vector<double> a = behavior_action(env, state, b, rng);
      StepResult r = env.step(state, a, rng);
      out.dataset.transitions.push_back({state.obs, a, r.next.obs, r.reward, r.terminal});
      ++collected;
      ret += r.reward;
      if (r.done()) {
        out.episode_returns.push_back(ret);
        break;
      }
      state = std::move(r.next);
    }
  }
}

}  // namespace detail

// Tiers: random = uniform actions; expert = expert controller; medium =
// expert plus N(0, 0.3 a_max) action noise with 20% uniform-random actions;
// medium-expert = medium half then expert half; medium-replay = medium half
// then random half.
inline GeneratedDataset generate_dataset(const Env& env, QualityTier tier, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("n_transitions must be positive");
  GeneratedDataset out;
  out.dataset.state_dim = env.state_dim();
  out.dataset.action_dim = env.action_dim();
  out.dataset.gamma = env.gamma();
  out.dataset.quality = tier;
  out.dataset.source_seed = seed;
  out.dataset.transitions.reserve(n);
  Rng rng(seed);
  using detail::Behavior;
  switch (tier) {
    case QualityTier::Random: detail::collect(env, Behavior::Random, n, rng, out); break;
    case QualityTier::Expert: detail::collect(env, Behavior::Expert, n, rng, out); break;
    case QualityTier::Medium: detail::collect(env, Behavior::Medium, n, rng, out); break;
    case QualityTier::MediumExpert:
    case QualityTier::MediumReplay: {
      const std::size_t first = (n + 1) / 2;
      Rng rng_a = rng.split(1), rng_b = rng.split(2);
      detail::collect(env, Behavior::Medium, first, rng_a, out);
      if (n > first)
        detail::collect(env, tier == QualityTier::MediumExpert ? Behavior::Expert : Behavior::Random, n - first,
                        rng_b, out);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// OAPDS v1 text format

inline void save_dataset(const OfflineDataset& ds, std::ostream& out) {
  ds.validate();
  out << "OAPDS v1 state_dim=" << ds.state_dim << " action_dim=" << ds.action_dim << " n=" << ds.size()
      << " gamma=" << format_double(ds.gamma);
  if (ds.quality) out << " quality=" << tier_name(*ds.quality);
  if (ds.source_seed) out << " seed=" << *ds.source_seed;
  out << '\n';
  std::string row;
  for (const auto& t : ds.transitions) {
    row.clear();
    auto put = [&](double v) {
      if (!row.empty()) row += ' ';
      row += format_double(v);
    };
    for (double v : t.s) put(v);
    for (double v : t.a) put(v);
    for (double v : t.s_next) put(v);
    put(t.r);
    row += t.done ? " 1" : " 0";
    out << row << '\n';
  }
}

inline void save_dataset(const OfflineDataset& ds, const std::string& path) {
  std::ostringstream ss;
  save_dataset(ds, ss);
  write_file(path, ss.str());
}

inline OfflineDataset load_dataset(std::istream& in) {
  OfflineDataset ds;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty dataset file");
  auto head = split_whitespace(line);
  if (head.size() < 2 || head[0] != "OAPDS" || head[1] != "v1") throw ParseError(1, "expected 'OAPDS v1' header");
  std::optional<std::size_t> n;
  bool have_sd = false, have_ad = false, have_gamma = false;
  for (std::size_t i = 2; i < head.size(); ++i) {
    const auto eq = head[i].find('=');
    if (eq == std::string_view::npos) throw ParseError(1, "malformed header field '" + std::string(head[i]) + "'");
    const auto key = head[i].substr(0, eq);
    const auto val = head[i].substr(eq + 1);
    bool ok = true;
    if (key == "state_dim") {
      ok = parse_int(val, ds.state_dim) && ds.state_dim > 0;
      have_sd = true;
    } else if (key == "action_dim") {
      ok = parse_int(val, ds.action_dim) && ds.action_dim > 0;
      have_ad = true;
    } else if (key == "n") {
      std::size_t v = 0;
      ok = parse_int(val, v);
      n = v;
    } else if (key == "gamma") {
      ok = parse_double(val, ds.gamma);
      have_gamma = true;
    } else if (key == "quality") {
      try {
        ds.quality = parse_tier(val);
      } catch (const ConfigError&) {
        ok = false;
      }
    } else if (key == "seed") {
      std::uint64_t v = 0;
      ok = parse_int(val, v);
      ds.source_seed = v;
    } else {
      throw ParseError(1, "unknown header field '" + std::string(key) + "'");
    }
    if (!ok) throw ParseError(1, "bad value for header field '" + std::string(key) + "'");
  }
  if (!have_sd || !have_ad || !n || !have_gamma) throw ParseError(1, "header needs state_dim, action_dim, n, gamma");
  const std::size_t width = static_cast<std::size_t>(2 * ds.state_dim + ds.action_dim + 2);
  std::size_t line_no = 1;
  ds.transitions.reserve(*n);
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = split_whitespace(line);
    if (toks.empty()) continue;
    if (ds.transitions.size() == *n) throw ParseError(line_no, "more rows than the header's n");
    if (toks.size() != width)
      throw ParseError(line_no, "expected " + std::to_string(width) + " values, found " + std::to_string(toks.size()));
    std::vector<double> v(width);
    for (std::size_t k = 0; k < width; ++k)
      if (!parse_double(toks[k], v[k])) throw ParseError(line_no, "bad number '" + std::string(toks[k]) + "'");
    const auto sd = static_cast<std::size_t>(ds.state_dim), ad = static_cast<std::size_t>(ds.action_dim);
    Transition t;
    t.s.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(sd));
    t.a.assign(v.begin() + static_cast<std::ptrdiff_t>(sd), v.begin() + static_cast<std::ptrdiff_t>(sd + ad));
    t.s_next.assign(v.begin() + static_cast<std::ptrdiff_t>(sd + ad),
                    v.begin() + static_cast<std::ptrdiff_t>(2 * sd + ad));
    t.r = v[2 * sd + ad];
    const double done = v[2 * sd + ad + 1];
    if (done != 0.0 && done != 1.0) throw ParseError(line_no, "done flag must be 0 or 1");
    t.done = done == 1.0;
    ds.transitions.push_back(std::move(t));
  }
  if (ds.transitions.size() != *n)
    throw ParseError(line_no + 1, "header promises " + std::to_string(*n) + " rows, found " +
                                      std::to_string(ds.transitions.size()));
  if (ds.transitions.empty()) throw ParseError(1, "dataset has no transitions");
  return ds;
}

inline OfflineDataset load_dataset(const std::string& path) {
  std::istringstream ss(read_file(path));
  return load_dataset(ss);
}

// ---------------------------------------------------------------------------
// Preferred actions and the query log

enum class LabelSource : std::uint8_t { Init, Oracle, Pseudo };

class PreferredActionTable {
 public:
  PreferredActionTable() = default;

  // Every entry starts as the dataset action.
  explicit PreferredActionTable(const OfflineDataset& ds)
      : action_dim_(static_cast<std::size_t>(ds.action_dim)), source_(ds.size(), LabelSource::Init) {
    preferred_.reserve(ds.size() * action_dim_);
    for (const auto& t : ds.transitions) preferred_.insert(preferred_.end(), t.a.begin(), t.a.end());
  }

  std::size_t size() const { return source_.size(); }
  std::size_t action_dim() const { return action_dim_; }

  std::span<const double> preferred(std::size_t i) const {
    check(i);
    return {preferred_.data() + i * action_dim_, action_dim_};
  }
  LabelSource source(std::size_t i) const {
    check(i);
    return source_[i];
  }
  bool queried(std::size_t i) const { return source(i) == LabelSource::Oracle; }

  void set_oracle(std::size_t i, std::span<const double> action) { set(i, action, LabelSource::Oracle); }
  void set_pseudo(std::size_t i, std::span<const double> action) {
    if (queried(i)) throw StateError("pseudo label would overwrite an oracle label");
    set(i, action, LabelSource::Pseudo);
  }

  struct Counts {
    std::size_t init = 0, oracle = 0, pseudo = 0;
  };
  Counts counts() const {
    Counts c;
    for (auto s : source_) (s == LabelSource::Init ? c.init : s == LabelSource::Oracle ? c.oracle : c.pseudo) += 1;
    return c;
  }

  // action_dim x indices.size()
  Eigen::MatrixXd gather(std::span<const std::size_t> indices) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(action_dim_), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto p = preferred(indices[b]);
      for (std::size_t k = 0; k < action_dim_; ++k) out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b)) = p[k];
    }
    return out;
  }

  friend bool operator==(const PreferredActionTable&, const PreferredActionTable&) = default;

 private:
  void check(std::size_t i) const {
    if (i >= source_.size()) throw StateError("preferred-action table has no entry " + std::to_string(i));
  }
  void set(std::size_t i, std::span<const double> action, LabelSource src) {
    check(i);
    if (action.size() != action_dim_) throw ShapeError("preferred action has the wrong dimension");
    std::copy(action.begin(), action.end(), preferred_.begin() + static_cast<std::ptrdiff_t>(i * action_dim_));
    source_[i] = src;
  }

  std::size_t action_dim_ = 0;
  std::vector<double> preferred_;
  std::vector<LabelSource> source_;
};

struct QueryRecord {
  std::size_t index = 0;
  std::vector<double> s;
  std::vector<double> a;              // dataset action
  std::vector<double> policy_action;  // pi^k(s) at query time
  std::vector<double> preferred;      // verbatim copy of the winning candidate
  std::size_t step = 0;

  // Ties resolve to the dataset action, so a differing preferred action is the policy's.
  bool preferred_is_policy() const { return preferred != a; }
};

struct QueryDataset {
  std::vector<QueryRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

// index,s...,a_dataset...,a_policy...,preferred_is_policy,step
inline void write_query_log(const QueryDataset& dq, int state_dim, int action_dim, std::ostream& out) {
  out << "index";
  for (int k = 0; k < state_dim; ++k) out << ",s" << k;
  for (int k = 0; k < action_dim; ++k) out << ",a_dataset" << k;
  for (int k = 0; k < action_dim; ++k) out << ",a_policy" << k;
  out << ",preferred_is_policy,step\n";
  for (const auto& r : dq.records) {
    out << r.index;
    for (double v : r.s) out << ',' << format_double(v);
    for (double v : r.a) out << ',' << format_double(v);
    for (double v : r.policy_action) out << ',' << format_double(v);
    out << ',' << (r.preferred_is_policy() ? 1 : 0) << ',' << r.step << '\n';
  }
}

// ---------------------------------------------------------------------------
// Minibatches

struct Batch {
  std::vector<std::size_t> indices;
  Eigen::MatrixXd states;       // state_dim x B
  Eigen::MatrixXd actions;      // action_dim x B
  Eigen::MatrixXd next_states;  // state_dim x B
  Eigen::VectorXd rewards;
  Eigen::VectorXd dones;

  Eigen::Index size() const { return states.cols(); }
};

// Column store of transitions; the offline part keeps dataset indices.
class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim) : sd_(state_dim), ad_(action_dim) {}

  explicit ReplayBuffer(const OfflineDataset& ds) : ReplayBuffer(ds.state_dim, ds.action_dim) {
    ds.validate();
    for (const auto& t : ds.transitions) add(t.s, t.a, t.s_next, t.r, t.done);
  }

  int state_dim() const { return sd_; }
  int action_dim() const { return ad_; }
  std::size_t size() const { return r_.size(); }

  void add(std::span<const double> s, std::span<const double> a, std::span<const double> s2, double r, bool done) {
    if (static_cast<int>(s.size()) != sd_ || static_cast<int>(s2.size()) != sd_ || static_cast<int>(a.size()) != ad_)
      throw ShapeError("transition does not match the buffer dimensions");
    s_.insert(s_.end(), s.begin(), s.end());
    a_.insert(a_.end(), a.begin(), a.end());
    s2_.insert(s2_.end(), s2.begin(), s2.end());
    r_.push_back(r);
    d_.push_back(done ? 1.0 : 0.0);
  }

  // Uniform with replacement.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    if (size() == 0) throw StateError("cannot sample from an empty buffer");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.index(size());
    return idx;
  }

  Batch gather(std::vector<std::size_t> indices) const {
    Batch b;
    const auto n = static_cast<Eigen::Index>(indices.size());
    b.states.resize(sd_, n);
    b.next_states.resize(sd_, n);
    b.actions.resize(ad_, n);
    b.rewards.resize(n);
    b.dones.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::size_t i = indices[static_cast<std::size_t>(j)];
      if (i >= size()) throw StateError("batch index out of range");
      for (int k = 0; k < sd_; ++k) {
        b.states(k, j) = s_[i * static_cast<std::size_t>(sd_) + static_cast<std::size_t>(k)];
        b.next_states(k, j) = s2_[i * static_cast<std::size_t>(sd_) + static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < ad_; ++k) b.actions(k, j) = a_[i * static_cast<std::size_t>(ad_) + static_cast<std::size_t>(k)];
      b.rewards(j) = r_[i];
      b.dones(j) = d_[i];
    }
    b.indices = std::move(indices);
    return b;
  }

  // state_dim x size() matrix of all stored states.
  Eigen::MatrixXd all_states() const {
    return Eigen::Map<const Eigen::MatrixXd>(s_.data(), sd_, static_cast<Eigen::Index>(size()));
  }
  Eigen::MatrixXd all_actions() const {
    return Eigen::Map<const Eigen::MatrixXd>(a_.data(), ad_, static_cast<Eigen::Index>(size()));
  }

 private:
  int sd_;
  int ad_;
  std::vector<double> s_, a_, s2_, r_, d_;
};

// Per-dimension mean/std over the dataset states; std gets +1e-3.
struct StateNormalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static StateNormalizer identity(int dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  static StateNormalizer fit(const OfflineDataset& ds) {
    ds.validate();
    const Eigen::Index d = ds.state_dim;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
    for (const auto& t : ds.transitions)
      for (Eigen::Index k = 0; k < d; ++k) mean(k) += t.s[static_cast<std::size_t>(k)];
    mean /= static_cast<double>(ds.size());
    for (const auto& t : ds.transitions)
      for (Eigen::Index k = 0; k < d; ++k) {
        const double c = t.s[static_cast<std::size_t>(k)] - mean(k);
        sq(k) += c * c;
      }
    Eigen::VectorXd sd = (sq / static_cast<double>(ds.size())).cwiseSqrt().array() + 1e-3;
    return {mean, sd};
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& states) const {
    return (states.colwise() - mean).array().colwise() / stddev.array();
  }

  friend bool operator==(const StateNormalizer& a, const StateNormalizer& b) {
    return a.mean == b.mean && a.stddev == b.stddev;
  }
};

inline Eigen::MatrixXd columns_from(std::span<const std::vector<double>> vectors, int dim) {
  Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(vectors.size()));
  for (std::size_t j = 0; j < vectors.size(); ++j) {
    if (static_cast<int>(vectors[j].size()) != dim) throw ShapeError("vector has the wrong dimension");
    for (int k = 0; k < dim; ++k) m(k, static_cast<Eigen::Index>(j)) = vectors[j][static_cast<std::size_t>(k)];
  }
  return m;
}

inline std::vector<double> column_vector(const Eigen::MatrixXd& m, Eigen::Index j) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index k = 0; k < m.rows(); ++k) v[static_cast<std::size_t>(k)] = m(k, j);
  return v;
}

}  // namespace oap
