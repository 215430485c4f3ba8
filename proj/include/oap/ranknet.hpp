#pragma once

// Pairwise ranking network over (state, action) and its logistic pair cost.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "oap/data.hpp"
#include "oap/errors.hpp"
#include "oap/nn.hpp"
#include "oap/rng.hpp"

namespace oap {

// log(1 + e^x) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -t log P - (1-t) log(1-P) with P = sigmoid(o).
// Uses softplus(o) - o = softplus(-o) to avoid cancellation.
inline double ranknet_cost(double o, double target) {
  return target * softplus(-o) + (1.0 - target) * softplus(o);
}

inline double ranknet_cost_grad(double o, double target) { return sigmoid(o) - target; }

struct RankNetConfig {
  std::vector<int> hidden{512, 256};
  double dropout = 0.5;
  int epochs = 100;
  int batch_size = 64;
  double lr = 1e-3;

  void validate() const {
    for (int w : hidden)
      if (w <= 0) throw ConfigError("ranknet.hidden widths must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("ranknet.dropout must lie in [0, 1)");
    if (epochs < 0 || batch_size <= 0 || !(lr > 0.0)) throw ConfigError("bad ranknet training settings");
  }
};

class RankNet {
 public:
  RankNet(int state_dim, int action_dim, double max_action, RankNetConfig cfg, StateNormalizer normalizer,
          std::uint64_t seed)
      : cfg_(std::move(cfg)),
        state_dim_(state_dim),
        action_dim_(action_dim),
        action_scale_(1.0 / max_action),
        normalizer_(std::move(normalizer)),
        rng_(Rng(seed).split(20)) {
    cfg_.validate();
    if (normalizer_.mean.size() != state_dim) throw ShapeError("normalizer dimension mismatch");
    std::vector<int> w{state_dim + action_dim};
    w.insert(w.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    w.push_back(1);
    Rng init = Rng(seed).split(21);
    net_ = MlpNet({w, OutputActivation::Identity, 1.0, cfg_.dropout}, init);
    opt_ = AdamState(net_, {cfg_.lr, 0.9, 0.999, 1e-8});
  }

  const RankNetConfig& config() const { return cfg_; }
  const MlpNet& net() const { return net_; }
  MlpNet& mutable_net() { return net_; }
  bool trained() const { return rounds_ > 0; }
  int rounds() const { return rounds_; }

  // Network input: normalized state over scaled action, one pair per column.
  Eigen::MatrixXd features(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const {
    if (states.rows() != state_dim_ || actions.rows() != action_dim_ || states.cols() != actions.cols())
      throw ShapeError("ranknet inputs have the wrong shape");
    Eigen::MatrixXd x(state_dim_ + action_dim_, states.cols());
    x << normalizer_.apply(states), actions * action_scale_;
    return x;
  }

  // f_r, dropout-free.
  Eigen::RowVectorXd scores(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const {
    return net_.predict(features(states, actions));
  }

  double score(std::span<const double> s, std::span<const double> a) const {
    return scores(as_column(s), as_column(a))(0);
  }

  // o = f_r(s, a_dataset) - f_r(s, a_policy)
  double pair_logit(std::span<const double> s, std::span<const double> a_dataset, std::span<const double> a_policy) const {
    return score(s, a_dataset) - score(s, a_policy);
  }

  Eigen::RowVectorXd pair_logits(const Eigen::MatrixXd& states, const Eigen::MatrixXd& a_dataset,
                                 const Eigen::MatrixXd& a_policy) const {
    return scores(states, a_dataset) - scores(states, a_policy);
  }

  // Minibatch Adam over all pairs for cfg.epochs epochs. Target is 1 when the
  // oracle kept the dataset action. Returns the last epoch's mean cost, or
  // NaN with no training when dq is empty.
  double train(const QueryDataset& dq) {
    if (dq.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t m = dq.size();
    std::vector<std::vector<double>> s, ad, ap;
    Eigen::VectorXd target(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) {
      const auto& r = dq.records[k];
      s.push_back(r.s);
      ad.push_back(r.a);
      ap.push_back(r.policy_action);
      target(static_cast<Eigen::Index>(k)) = r.preferred_is_policy() ? 0.0 : 1.0;
    }
    const Eigen::MatrixXd S = columns_from(s, state_dim_);
    const Eigen::MatrixXd X = features(S, columns_from(ad, action_dim_));
    const Eigen::MatrixXd Y = features(S, columns_from(ap, action_dim_));
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    const Eigen::Index width = X.rows();
    double epoch_cost = 0.0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng_.index(i)]);
      double total = 0.0;
      for (std::size_t start = 0; start < m; start += bs) {
        const std::size_t end = std::min(m, start + bs);
        const auto b = static_cast<Eigen::Index>(end - start);
        Eigen::MatrixXd in(width, 2 * b);
        Eigen::VectorXd t(b);
        for (Eigen::Index j = 0; j < b; ++j) {
          const auto k = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(j)]);
          in.col(j) = X.col(k);
          in.col(b + j) = Y.col(k);
          t(j) = target(k);
        }
        const Eigen::RowVectorXd f = net_.forward(in, true, &rng_);
        Eigen::RowVectorXd dy(2 * b);
        for (Eigen::Index j = 0; j < b; ++j) {
          const double o = f(j) - f(b + j);
          total += ranknet_cost(o, t(j));
          const double g = ranknet_cost_grad(o, t(j)) / static_cast<double>(b);
          dy(j) = g;
          dy(b + j) = -g;
        }
        const Backprop bp = net_.backward(dy);
        adam_step(net_, bp.params, opt_);
      }
      epoch_cost = total / static_cast<double>(m);
    }
    net_.clear_cache();
    ++rounds_;
    if (!std::isfinite(epoch_cost)) throw NumericError("non-finite ranknet cost");
    return epoch_cost;
  }

  // argmax of f_r over {a, policy_action}; ties keep the dataset action.
  std::vector<double> pseudo_query(std::span<const double> s, std::span<const double> a,
                                   std::span<const double> policy_action) const {
    require_trained();
    if (score(s, policy_action) > score(s, a)) return {policy_action.begin(), policy_action.end()};
    return {a.begin(), a.end()};
  }

  // Batched form: true where the policy action wins.
  std::vector<bool> prefers_policy(const Eigen::MatrixXd& states, const Eigen::MatrixXd& a_dataset,
                                   const Eigen::MatrixXd& a_policy) const {
    require_trained();
    const Eigen::RowVectorXd fd = scores(states, a_dataset);
    const Eigen::RowVectorXd fp = scores(states, a_policy);
    std::vector<bool> out(static_cast<std::size_t>(states.cols()));
    for (Eigen::Index j = 0; j < states.cols(); ++j) out[static_cast<std::size_t>(j)] = fp(j) > fd(j);
    return out;
  }

 private:
  static Eigen::MatrixXd as_column(std::span<const double> v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  void require_trained() const {
    if (!trained()) throw StateError("pseudo_query before the ranknet was trained");
  }

  RankNetConfig cfg_;
  int state_dim_;
  int action_dim_;
  double action_scale_;
  StateNormalizer normalizer_;
  Rng rng_;
  MlpNet net_;
  AdamState opt_;
  int rounds_ = 0;
};

}  // namespace oap
