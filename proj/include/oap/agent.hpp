#pragma once

// TD3+BC actor-critic. The actor's behavior-cloning term pulls pi(s) toward a
// target action: the dataset action in the original objective, the preferred
// action from the table in the adjusted one.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "oap/data.hpp"
#include "oap/errors.hpp"
#include "oap/io.hpp"
#include "oap/nn.hpp"
#include "oap/rng.hpp"

namespace oap {

struct AgentConfig {
  double alpha = 2.5;
  double gamma = 0.99;
  double tau = 5e-3;
  double policy_noise = 0.2;  // fraction of the action bound
  double noise_clip = 0.5;    // fraction of the action bound, symmetric
  int policy_update_freq = 2;
  int batch_size = 256;
  double lr = 3e-4;
  bool normalize_states = true;
  bool normalize_lambda = true;
  std::vector<int> actor_hidden{256, 256};
  std::vector<int> critic_hidden{256, 256};

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("agent.alpha must be >= 0");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("agent.gamma must lie in [0, 1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("agent.tau must lie in (0, 1]");
    if (!(policy_noise >= 0.0) || !(noise_clip >= 0.0)) throw ConfigError("agent noise settings must be >= 0");
    if (policy_update_freq <= 0 || batch_size <= 0 || !(lr > 0.0)) throw ConfigError("agent step settings must be > 0");
    for (int w : actor_hidden)
      if (w <= 0) throw ConfigError("agent.actor_hidden widths must be positive");
    for (int w : critic_hidden)
      if (w <= 0) throw ConfigError("agent.critic_hidden widths must be positive");
  }
};

// Pure TD3 drops the behavior-cloning term (online schemes).
enum class ActorObjective { Td3Bc, Td3 };

struct ActorLossTerms {
  double loss = 0.0;
  double lambda = 0.0;
  double q_mean = 0.0;
  double bc_mean = 0.0;  // mean ||pi(s) - target||^2
};

class Td3bcAgent {
 public:
  Td3bcAgent(int state_dim, int action_dim, double max_action, AgentConfig cfg, StateNormalizer normalizer,
             std::uint64_t seed)
      : cfg_(std::move(cfg)),
        state_dim_(state_dim),
        action_dim_(action_dim),
        max_action_(max_action),
        normalizer_(std::move(normalizer)),
        noise_rng_(Rng(seed).split(11)) {
    cfg_.validate();
    if (state_dim <= 0 || action_dim <= 0 || !(max_action > 0.0)) throw ConfigError("bad agent dimensions");
    if (!cfg_.normalize_states) normalizer_ = StateNormalizer::identity(state_dim);
    if (normalizer_.mean.size() != state_dim) throw ShapeError("normalizer dimension mismatch");
    Rng init = Rng(seed).split(10);
    actor_ = MlpNet(actor_spec(), init);
    critic1_ = MlpNet(critic_spec(), init);
    critic2_ = MlpNet(critic_spec(), init);
    actor_target_ = actor_;
    critic1_target_ = critic1_;
    critic2_target_ = critic2_;
    const AdamConfig adam{cfg_.lr, 0.9, 0.999, 1e-8};
    actor_opt_ = AdamState(actor_, adam);
    critic1_opt_ = AdamState(critic1_, adam);
    critic2_opt_ = AdamState(critic2_, adam);
  }

  const AgentConfig& config() const { return cfg_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  double max_action() const { return max_action_; }
  const StateNormalizer& normalizer() const { return normalizer_; }
  std::uint64_t iterations() const { return total_it_; }

  const MlpNet& actor() const { return actor_; }
  const MlpNet& actor_target() const { return actor_target_; }
  const MlpNet& critic1() const { return critic1_; }
  const MlpNet& critic2() const { return critic2_; }
  const MlpNet& critic1_target() const { return critic1_target_; }
  const MlpNet& critic2_target() const { return critic2_target_; }
  MlpNet& mutable_actor() { return actor_; }
  MlpNet& mutable_critic1() { return critic1_; }
  MlpNet& mutable_critic2() { return critic2_; }

  // Columns are raw (unnormalized) states.
  Eigen::MatrixXd act(const Eigen::MatrixXd& states) const { return actor_.predict(normalizer_.apply(states)); }

  std::vector<double> act(std::span<const double> state) const {
    Eigen::MatrixXd s = Eigen::Map<const Eigen::VectorXd>(state.data(), static_cast<Eigen::Index>(state.size()));
    return column_vector(act(s), 0);
  }

  // Min over the target critics, with explicit smoothing noise (action_dim x B,
  // already clipped and scaled). Exposed so tests can supply the noise.
  Eigen::VectorXd td_targets(const Batch& b, const Eigen::MatrixXd& noise) const {
    const Eigen::MatrixXd s2 = normalizer_.apply(b.next_states);
    Eigen::MatrixXd a2 = actor_target_.predict(s2) + noise;
    a2 = a2.cwiseMax(-max_action_).cwiseMin(max_action_);
    const Eigen::MatrixXd in = stack(s2, a2);
    const Eigen::RowVectorXd q1 = critic1_target_.predict(in);
    const Eigen::RowVectorXd q2 = critic2_target_.predict(in);
    const Eigen::VectorXd qmin = q1.cwiseMin(q2).transpose();
    return b.rewards + (cfg_.gamma * (1.0 - b.dones.array()) * qmin.array()).matrix();
  }

  Eigen::MatrixXd draw_target_noise(Eigen::Index batch) {
    const double sd = cfg_.policy_noise * max_action_, clip = cfg_.noise_clip * max_action_;
    Eigen::MatrixXd n(action_dim_, batch);
    for (Eigen::Index k = 0; k < n.size(); ++k) n(k) = std::clamp(noise_rng_.normal(0.0, sd), -clip, clip);
    return n;
  }

  // One Adam step on both critics; returns the summed mean-squared TD loss.
  double critic_update(const Batch& b) {
    if (b.size() == 0) throw ConfigError("critic_update on an empty batch");
    const Eigen::VectorXd y = td_targets(b, draw_target_noise(b.size()));
    const Eigen::MatrixXd in = stack(normalizer_.apply(b.states), b.actions);
    const double n = static_cast<double>(b.size());
    double loss = 0.0;
    for (auto [net, opt] : {std::pair{&critic1_, &critic1_opt_}, std::pair{&critic2_, &critic2_opt_}}) {
      const Eigen::RowVectorXd q = net->forward(in, true);
      const Eigen::RowVectorXd diff = q - y.transpose();
      loss += diff.squaredNorm() / n;
      const Backprop bp = net->backward(2.0 * diff / n);
      adam_step(*net, bp.params, *opt);
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite critic loss at iteration " + std::to_string(total_it_));
    return loss;
  }

  // mean over the batch of -lambda Q1(s, pi(s)) + ||pi(s) - target||^2.
  ActorLossTerms actor_loss(const Batch& b, const Eigen::MatrixXd& target,
                            ActorObjective obj = ActorObjective::Td3Bc) const {
    check_target(b, target);
    const Eigen::MatrixXd sn = normalizer_.apply(b.states);
    const Eigen::MatrixXd pi = actor_.predict(sn);
    const Eigen::RowVectorXd q = critic1_.predict(stack(sn, pi));
    return loss_terms(q, pi, target, obj);
  }

  ActorLossTerms actor_loss_original(const Batch& b) const { return actor_loss(b, b.actions); }

  ActorLossTerms actor_loss_adjusted(const Batch& b, const PreferredActionTable& table) const {
    return actor_loss(b, table.gather(b.indices));
  }

  // Gradient step on the actor, then Polyak updates of all target networks.
  ActorLossTerms actor_update(const Batch& b, const Eigen::MatrixXd& target, ActorObjective obj = ActorObjective::Td3Bc) {
    check_target(b, target);
    const Eigen::MatrixXd sn = normalizer_.apply(b.states);
    const Eigen::MatrixXd pi = actor_.forward(sn, true);
    const Eigen::RowVectorXd q = critic1_.forward(stack(sn, pi), true);
    const ActorLossTerms terms = loss_terms(q, pi, target, obj);
    if (!std::isfinite(terms.loss)) throw NumericError("non-finite actor loss at iteration " + std::to_string(total_it_));
    const double n = static_cast<double>(b.size());
    const double w_q = obj == ActorObjective::Td3Bc ? terms.lambda : 1.0;
    const Eigen::MatrixXd dq = critic1_.backward(Eigen::RowVectorXd::Constant(b.size(), -w_q / n)).input;
    Eigen::MatrixXd dpi = dq.bottomRows(action_dim_);
    if (obj == ActorObjective::Td3Bc) dpi += 2.0 * (pi - target) / n;
    critic1_.clear_cache();
    const Backprop bp = actor_.backward(dpi);
    adam_step(actor_, bp.params, actor_opt_);
    soft_update_targets();
    return terms;
  }

  // Critic step every call; actor and targets every policy_update_freq calls.
  // `target` defaults to the batch's dataset actions.
  double train_step(const Batch& b, const Eigen::MatrixXd* target = nullptr,
                    ActorObjective obj = ActorObjective::Td3Bc) {
    ++total_it_;
    const double td = critic_update(b);
    if (total_it_ % static_cast<std::uint64_t>(cfg_.policy_update_freq) == 0)
      actor_update(b, target ? *target : b.actions, obj);
    return td;
  }

  void soft_update_targets() {
    actor_target_.soft_update_from(actor_, cfg_.tau);
    critic1_target_.soft_update_from(critic1_, cfg_.tau);
    critic2_target_.soft_update_from(critic2_, cfg_.tau);
  }

  // actor, actor_target, critic1, critic2 as OAPNET files plus agent.cfg.
  // Target critics are not stored; load() resets them to the live critics.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_snapshot(actor_, (dir / "actor.oapnet").string());
    save_snapshot(actor_target_, (dir / "actor_target.oapnet").string());
    save_snapshot(critic1_, (dir / "critic1.oapnet").string());
    save_snapshot(critic2_, (dir / "critic2.oapnet").string());
    std::ostringstream cfg;
    cfg << "state_dim " << state_dim_ << "\naction_dim " << action_dim_ << "\nmax_action " << format_double(max_action_)
        << "\nalpha " << format_double(cfg_.alpha) << "\ngamma " << format_double(cfg_.gamma) << "\ntau "
        << format_double(cfg_.tau) << "\npolicy_noise " << format_double(cfg_.policy_noise) << "\nnoise_clip "
        << format_double(cfg_.noise_clip) << "\npolicy_update_freq " << cfg_.policy_update_freq << "\nbatch_size "
        << cfg_.batch_size << "\nlr " << format_double(cfg_.lr) << "\nnormalize_states " << cfg_.normalize_states
        << "\nnormalize_lambda " << cfg_.normalize_lambda << "\nactor_hidden" << join(cfg_.actor_hidden)
        << "\ncritic_hidden" << join(cfg_.critic_hidden) << "\nstate_mean" << join(normalizer_.mean)
        << "\nstate_std" << join(normalizer_.stddev) << "\niterations " << total_it_ << '\n';
    write_file((dir / "agent.cfg").string(), cfg.str());
  }

  // Restores network weights into an agent constructed with the same settings.
  void load(const std::filesystem::path& dir) {
    actor_ = load_snapshot((dir / "actor.oapnet").string(), actor_spec());
    actor_target_ = load_snapshot((dir / "actor_target.oapnet").string(), actor_spec());
    critic1_ = load_snapshot((dir / "critic1.oapnet").string(), critic_spec());
    critic2_ = load_snapshot((dir / "critic2.oapnet").string(), critic_spec());
    critic1_target_ = critic1_;
    critic2_target_ = critic2_;
  }

 private:
  MlpSpec actor_spec() const {
    std::vector<int> w{state_dim_};
    w.insert(w.end(), cfg_.actor_hidden.begin(), cfg_.actor_hidden.end());
    w.push_back(action_dim_);
    return {w, OutputActivation::Tanh, max_action_, 0.0};
  }

  MlpSpec critic_spec() const {
    std::vector<int> w{state_dim_ + action_dim_};
    w.insert(w.end(), cfg_.critic_hidden.begin(), cfg_.critic_hidden.end());
    w.push_back(1);
    return {w, OutputActivation::Identity, 1.0, 0.0};
  }

  static Eigen::MatrixXd stack(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
    Eigen::MatrixXd m(top.rows() + bottom.rows(), top.cols());
    m << top, bottom;
    return m;
  }

  template <typename Vec>
  static std::string join(const Vec& v) {
    std::string s;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(v.size()); ++i) {
      s += ' ';
      if constexpr (std::is_same_v<Vec, std::vector<int>>)
        s += std::to_string(v[static_cast<std::size_t>(i)]);
      else
        s += format_double(v(i));
    }
    return s;
  }

  void check_target(const Batch& b, const Eigen::MatrixXd& target) const {
    if (b.size() == 0) throw ConfigError("actor loss on an empty batch");
    if (target.rows() != action_dim_ || target.cols() != b.size())
      throw ShapeError("target actions must be action_dim x batch");
  }

  ActorLossTerms loss_terms(const Eigen::RowVectorXd& q, const Eigen::MatrixXd& pi, const Eigen::MatrixXd& target,
                            ActorObjective obj) const {
    ActorLossTerms t;
    t.q_mean = q.mean();
    if (obj == ActorObjective::Td3) {
      t.lambda = 1.0;
      t.loss = -t.q_mean;
      return t;
    }
    t.lambda = cfg_.normalize_lambda ? cfg_.alpha / std::max(q.cwiseAbs().mean(), 1e-12) : cfg_.alpha;
    t.bc_mean = (pi - target).colwise().squaredNorm().mean();
    t.loss = -t.lambda * t.q_mean + t.bc_mean;
    return t;
  }

  AgentConfig cfg_;
  int state_dim_;
  int action_dim_;
  double max_action_;
  StateNormalizer normalizer_;
  Rng noise_rng_;
  std::uint64_t total_it_ = 0;
  MlpNet actor_, actor_target_, critic1_, critic2_, critic1_target_, critic2_target_;
  AdamState actor_opt_, critic1_opt_, critic2_opt_;
};

}  // namespace oap
