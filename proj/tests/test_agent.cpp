#include <gtest/gtest.h>

#include <functional>

#include "oap/agent.hpp"
#include "support.hpp"

namespace oap {
namespace {

using test::rel_err;

constexpr double kMax = 0.5;

AgentConfig small_config() {
  AgentConfig c;
  c.actor_hidden = {8, 8};
  c.critic_hidden = {8, 8};
  c.batch_size = 6;
  return c;
}

StateNormalizer some_normalizer() {
  return {Eigen::Vector2d(0.1, -0.2), Eigen::Vector2d(0.8, 1.5)};
}

Td3bcAgent make_agent(AgentConfig c = small_config(), std::uint64_t seed = 3) {
  return Td3bcAgent(2, 2, kMax, std::move(c), some_normalizer(), seed);
}

Batch random_batch(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.states.resize(2, n);
  b.next_states.resize(2, n);
  b.actions.resize(2, n);
  b.rewards.resize(n);
  b.dones.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int k = 0; k < 2; ++k) {
      b.states(k, j) = rng.uniform(-1, 1);
      b.next_states(k, j) = rng.uniform(-1, 1);
      b.actions(k, j) = rng.uniform(-kMax, kMax);
    }
    b.rewards(j) = rng.uniform(-1, 1);
    b.dones(j) = rng.bernoulli(0.3) ? 1.0 : 0.0;
    b.indices.push_back(static_cast<std::size_t>(j));
  }
  return b;
}

Eigen::MatrixXd stacked(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd m(a.rows() + b.rows(), a.cols());
  m << a, b;
  return m;
}

TEST(TdTarget, TerminalTransitionsRegressToReward) {
  const Td3bcAgent agent = make_agent();
  Batch b = random_batch(5, 1);
  b.dones.setOnes();
  const Eigen::VectorXd y = agent.td_targets(b, Eigen::MatrixXd::Zero(2, 5));
  EXPECT_EQ(y, b.rewards);
}

TEST(TdTarget, ZeroDiscountRegressesToReward) {
  AgentConfig c = small_config();
  c.gamma = 0.0;
  const Td3bcAgent agent = make_agent(c);
  const Batch b = random_batch(5, 2);
  EXPECT_EQ(agent.td_targets(b, Eigen::MatrixXd::Zero(2, 5)), b.rewards);
}

TEST(TdTarget, ManualFormula) {
  const Td3bcAgent agent = make_agent();
  Batch b = random_batch(1, 4);
  b.dones(0) = 0.0;
  Eigen::MatrixXd noise(2, 1);
  noise << 0.05, 0.9;  // second component pushes past the bound
  const StateNormalizer n = some_normalizer();
  const Eigen::VectorXd s2 = (b.next_states.col(0) - n.mean).cwiseQuotient(n.stddev);
  Eigen::VectorXd a2 = agent.actor_target().predict(Eigen::MatrixXd(s2)).col(0) + noise.col(0);
  for (int k = 0; k < 2; ++k) a2(k) = std::clamp(a2(k), -kMax, kMax);
  EXPECT_EQ(a2(1), kMax);
  Eigen::VectorXd in(4);
  in << s2, a2;
  const double q1 = agent.critic1_target().predict(Eigen::MatrixXd(in))(0, 0);
  const double q2 = agent.critic2_target().predict(Eigen::MatrixXd(in))(0, 0);
  const double expect = b.rewards(0) + 0.99 * std::min(q1, q2);
  EXPECT_NEAR(agent.td_targets(b, noise)(0), expect, 1e-15);
}

TEST(TdTarget, NoiseIsClippedAndScaled) {
  AgentConfig c = small_config();
  c.policy_noise = 10.0;
  Td3bcAgent agent = make_agent(c);
  const Eigen::MatrixXd n = agent.draw_target_noise(500);
  EXPECT_LE(n.cwiseAbs().maxCoeff(), 0.5 * kMax);
  EXPECT_EQ(n.cwiseAbs().maxCoeff(), 0.5 * kMax);
}

TEST(ActorLoss, ZeroLambdaAndPolicyActionsGiveZero) {
  AgentConfig c = small_config();
  c.alpha = 0.0;
  const Td3bcAgent agent = make_agent(c);
  Batch b = random_batch(4, 5);
  b.actions = agent.act(b.states);
  EXPECT_EQ(agent.actor_loss_original(b).loss, 0.0);
}

TEST(ActorLoss, ZeroLambdaIsBehaviorCloning) {
  AgentConfig c = small_config();
  c.alpha = 0.0;
  const Td3bcAgent agent = make_agent(c);
  const Batch b = random_batch(6, 6);
  const Eigen::MatrixXd pi = agent.act(b.states);
  double mse = 0.0;
  for (Eigen::Index j = 0; j < 6; ++j) mse += (pi.col(j) - b.actions.col(j)).squaredNorm();
  EXPECT_NEAR(agent.actor_loss_original(b).loss, mse / 6.0, 1e-15);
}

// Independent evaluation of the objective with per-batch lambda.
double manual_loss(const Td3bcAgent& agent, const Batch& b, const Eigen::MatrixXd& target, double alpha) {
  const StateNormalizer n = some_normalizer();
  const Eigen::Index m = b.size();
  std::vector<double> q(static_cast<std::size_t>(m));
  std::vector<double> bc(static_cast<std::size_t>(m));
  double abs_q = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::VectorXd s = (b.states.col(j) - n.mean).cwiseQuotient(n.stddev);
    const Eigen::VectorXd pi = agent.actor().predict(Eigen::MatrixXd(s)).col(0);
    Eigen::VectorXd in(4);
    in << s, pi;
    q[static_cast<std::size_t>(j)] = agent.critic1().predict(Eigen::MatrixXd(in))(0, 0);
    bc[static_cast<std::size_t>(j)] = (pi - target.col(j)).squaredNorm();
    abs_q += std::abs(q[static_cast<std::size_t>(j)]);
  }
  const double lambda = alpha / (abs_q / static_cast<double>(m));
  double loss = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) loss += -lambda * q[j] + bc[j];
  return loss / static_cast<double>(m);
}

TEST(ActorLoss, OriginalMatchesManualEvaluation) {
  const Td3bcAgent agent = make_agent();
  const Batch b = random_batch(7, 8);
  const ActorLossTerms t = agent.actor_loss_original(b);
  EXPECT_NEAR(t.loss, manual_loss(agent, b, b.actions, 2.5), 1e-13);
  EXPECT_NEAR(t.lambda * t.q_mean, -t.loss + t.bc_mean, 1e-13);
}

OfflineDataset dataset_of(const Batch& b) {
  OfflineDataset ds;
  ds.state_dim = 2;
  ds.action_dim = 2;
  for (Eigen::Index j = 0; j < b.size(); ++j)
    ds.transitions.push_back({column_vector(b.states, j), column_vector(b.actions, j), column_vector(b.next_states, j),
                              b.rewards(j), b.dones(j) > 0.5});
  return ds;
}

TEST(ActorLoss, AdjustedWithInitTableEqualsOriginal) {
  const Td3bcAgent agent = make_agent();
  const Batch b = random_batch(7, 9);
  const PreferredActionTable table(dataset_of(b));
  const ActorLossTerms a = agent.actor_loss_adjusted(b, table), o = agent.actor_loss_original(b);
  EXPECT_EQ(a.loss, o.loss);
  EXPECT_EQ(a.lambda, o.lambda);
}

TEST(ActorLoss, PolicyPreferenceRemovesConstraint) {
  AgentConfig c = small_config();
  c.alpha = 0.0;
  const Td3bcAgent agent = make_agent(c);
  Batch b = random_batch(1, 10);
  PreferredActionTable table(dataset_of(b));
  table.set_oracle(0, agent.act(column_vector(b.states, 0)));
  EXPECT_EQ(agent.actor_loss_adjusted(b, table).bc_mean, 0.0);
}

TEST(ActorLoss, MixedPreferencesMatchManualEvaluation) {
  const Td3bcAgent agent = make_agent();
  const Batch b = random_batch(8, 11);
  PreferredActionTable table(dataset_of(b));
  Eigen::MatrixXd target = b.actions;
  const Eigen::MatrixXd pi = agent.act(b.states);
  for (Eigen::Index j : {1, 4, 5}) {
    table.set_oracle(static_cast<std::size_t>(j), column_vector(pi, j));
    target.col(j) = pi.col(j);
  }
  table.set_pseudo(2, std::vector<double>{0.1, -0.1});
  target.col(2) = Eigen::Vector2d(0.1, -0.1);
  EXPECT_NEAR(agent.actor_loss_adjusted(b, table).loss, manual_loss(agent, b, target, 2.5), 1e-13);
  Batch missing = b;
  missing.indices[0] = 99;
  EXPECT_THROW(agent.actor_loss_adjusted(missing, table), StateError);
}

TEST(ActorLoss, Td3ObjectiveIsNegativeMeanQ) {
  const Td3bcAgent agent = make_agent();
  const Batch b = random_batch(5, 12);
  const ActorLossTerms t = agent.actor_loss(b, b.actions, ActorObjective::Td3);
  EXPECT_EQ(t.loss, -t.q_mean);
}

std::vector<double> flat(const MlpNet& n) { return n.parameters(); }

TEST(Update, TargetsTrackLiveNetworksAtRateTau) {
  Td3bcAgent agent = make_agent();
  const Batch b = random_batch(6, 13);
  for (int step = 1; step <= 4; ++step) {
    const auto at = flat(agent.actor_target()), c1t = flat(agent.critic1_target()), c2t = flat(agent.critic2_target());
    agent.train_step(b);
    const bool actor_step = step % 2 == 0;
    auto check = [&](const std::vector<double>& prev, const MlpNet& target, const MlpNet& live) {
      const auto now = flat(target), l = flat(live);
      for (std::size_t k = 0; k < now.size(); ++k) {
        const double expect = actor_step ? (1 - 5e-3) * prev[k] + 5e-3 * l[k] : prev[k];
        ASSERT_NEAR(now[k], expect, 1e-15);
      }
    };
    check(at, agent.actor_target(), agent.actor());
    check(c1t, agent.critic1_target(), agent.critic1());
    check(c2t, agent.critic2_target(), agent.critic2());
  }
  EXPECT_EQ(agent.iterations(), 4u);
}

// Adam's first step moves each parameter by lr * g / (|g| + eps), so the
// sign of the change exposes the gradient direction.
void expect_first_step_follows_gradient(const std::vector<double>& before, const std::vector<double>& after,
                                        const std::vector<double>& fd_grad, double lr) {
  int compared = 0;
  for (std::size_t k = 0; k < before.size(); ++k) {
    if (std::abs(fd_grad[k]) < 1e-6) continue;
    const double expect = -lr * fd_grad[k] / (std::abs(fd_grad[k]) + 1e-8);
    EXPECT_LT(rel_err(after[k] - before[k], expect), 1e-4) << "parameter " << k;
    ++compared;
  }
  EXPECT_GE(compared, 20);
}

std::vector<double> finite_difference(MlpNet& net, const std::function<double()>& loss) {
  std::vector<double> theta = net.parameters(), g(theta.size());
  const double h = 1e-6;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    auto p = theta;
    p[k] = theta[k] + h;
    net.set_parameters(p);
    const double up = loss();
    p[k] = theta[k] - h;
    net.set_parameters(p);
    g[k] = (up - loss()) / (2 * h);
  }
  net.set_parameters(theta);
  return g;
}

TEST(Update, ActorGradientMatchesFiniteDifferences) {
  AgentConfig c = small_config();
  c.normalize_lambda = false;  // fixed lambda makes the loss a plain function of the actor
  for (const auto& [obj, label] : {std::pair{ActorObjective::Td3Bc, "td3bc"}, std::pair{ActorObjective::Td3, "td3"}}) {
    Td3bcAgent agent = make_agent(c, 21);
    const Batch b = random_batch(6, 22);
    Eigen::MatrixXd target = b.actions;
    target(0, 0) = 0.2;
    Td3bcAgent probe = agent;
    const auto fd = finite_difference(probe.mutable_actor(), [&] { return probe.actor_loss(b, target, obj).loss; });
    const auto before = flat(agent.actor());
    agent.actor_update(b, target, obj);
    SCOPED_TRACE(label);
    expect_first_step_follows_gradient(before, flat(agent.actor()), fd, c.lr);
  }
}

TEST(Update, BehaviorCloningStepMovesPolicyTowardTarget) {
  AgentConfig c = small_config();
  c.alpha = 0.0;
  c.lr = 1e-3;
  Td3bcAgent agent = make_agent(c, 5);
  const Batch b = random_batch(6, 23);
  const Eigen::MatrixXd target = Eigen::MatrixXd::Constant(2, 6, 0.3);
  double prev = agent.actor_loss(b, target).bc_mean;
  for (int i = 0; i < 20; ++i) {
    agent.actor_update(b, target);
    const double now = agent.actor_loss(b, target).bc_mean;
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Update, CriticGradientMatchesFiniteDifferences) {
  Td3bcAgent agent = make_agent(small_config(), 31);
  const Batch b = random_batch(6, 32);
  // Reproduce the target noise the update will draw.
  Td3bcAgent twin = agent;
  const Eigen::VectorXd y = twin.td_targets(b, twin.draw_target_noise(b.size()));
  const StateNormalizer n = some_normalizer();
  const Eigen::MatrixXd in = stacked((b.states.colwise() - n.mean).array().colwise() / n.stddev.array(), b.actions);
  auto mse = [&](const MlpNet& net) { return (net.predict(in).transpose() - y).squaredNorm() / 6.0; };
  const auto fd1 = finite_difference(twin.mutable_critic1(), [&] { return mse(twin.critic1()); });
  const auto fd2 = finite_difference(twin.mutable_critic2(), [&] { return mse(twin.critic2()); });
  const auto c1 = flat(agent.critic1()), c2 = flat(agent.critic2());
  const double loss = agent.critic_update(b);
  EXPECT_NEAR(loss, mse(twin.critic1()) + mse(twin.critic2()), 1e-12);
  expect_first_step_follows_gradient(c1, flat(agent.critic1()), fd1, 3e-4);
  expect_first_step_follows_gradient(c2, flat(agent.critic2()), fd2, 3e-4);
}

TEST(Update, NonFiniteLossAborts) {
  Td3bcAgent agent = make_agent();
  Batch b = random_batch(4, 40);
  b.rewards(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(agent.critic_update(b), NumericError);
}

TEST(Agent, ActionsRespectBounds) {
  const Td3bcAgent agent = make_agent();
  Eigen::MatrixXd s(2, 4);
  s << 1e6, -1e6, 0, 3, -1e6, 1e6, 0, -3;
  EXPECT_LE(agent.act(s).cwiseAbs().maxCoeff(), kMax);
}

TEST(Agent, SameSeedSameTraining) {
  auto run = [] {
    Td3bcAgent agent = make_agent(small_config(), 9);
    for (std::uint64_t i = 0; i < 10; ++i) agent.train_step(random_batch(6, 50 + i));
    return flat(agent.actor());
  };
  EXPECT_EQ(run(), run());
}

TEST(Agent, SnapshotRoundTrip) {
  test::TempDir dir;
  Td3bcAgent agent = make_agent(small_config(), 1);
  for (std::uint64_t i = 0; i < 4; ++i) agent.train_step(random_batch(6, 60 + i));
  agent.save(dir.path());
  for (const char* f : {"actor.oapnet", "actor_target.oapnet", "critic1.oapnet", "critic2.oapnet", "agent.cfg"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
  Td3bcAgent fresh = make_agent(small_config(), 2);
  fresh.load(dir.path());
  EXPECT_EQ(flat(fresh.actor()), flat(agent.actor()));
  EXPECT_EQ(flat(fresh.actor_target()), flat(agent.actor_target()));
  EXPECT_EQ(flat(fresh.critic2()), flat(agent.critic2()));
  EXPECT_EQ(flat(fresh.critic1_target()), flat(agent.critic1()));
  const Eigen::MatrixXd s = random_batch(3, 70).states;
  EXPECT_EQ(fresh.act(s), agent.act(s));
}

TEST(Agent, ConfigValidation) {
  AgentConfig c;
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AgentConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Td3bcAgent(2, 2, 0.0, AgentConfig{}, StateNormalizer::identity(2), 0), ConfigError);
  EXPECT_THROW(Td3bcAgent(2, 2, 1.0, AgentConfig{}, StateNormalizer::identity(3), 0), ShapeError);
}

}  // namespace
}  // namespace oap
