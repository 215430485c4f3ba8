#pragma once

// Run configuration: profile defaults, then a JSON file, then flags.
// Unknown keys are rejected at every level.

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "oap/data.hpp"
#include "oap/errors.hpp"
#include "oap/scheduler.hpp"

namespace oap {

struct DatasetConfig {
  std::string path;  // empty: generate from tier/n
  std::string tier = "medium";
  std::size_t n = 50'000;
};

struct TheoryConfig {
  int instances = 20;
  double alpha = 0.1;
  double alpha_tilde = 0.1;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string profile = "desk";
  std::string env = "gridmaze-10";
  std::string scheme = "oap";
  std::vector<std::string> schemes{"offline", "o2o", "oap"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  DatasetConfig dataset;
  RunSettings settings = RunSettings::desk();
  std::string output_dir = "out";
  int workers = 1;
  TheoryConfig theory;

  static RunConfig defaults(const std::string& profile) {
    RunConfig c;
    c.profile = profile;
    if (profile == "desk") return c;
    if (profile == "paper") {
      c.settings = RunSettings::paper();
      c.dataset.n = 1'000'000;
      return c;
    }
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }

  void validate() const {
    settings.validate();
    SchemeSpec::parse(scheme).validate();
    for (const auto& s : schemes) SchemeSpec::parse(s).validate();
    parse_tier(dataset.tier);
    if (dataset.n == 0) throw ConfigError("dataset.n must be positive");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (workers <= 0) throw ConfigError("workers must be positive");
    if (theory.instances <= 0) throw ConfigError("theory.instances must be positive");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

}  // namespace detail

// Profile is taken from `profile_override`, else the file, else desk.
inline RunConfig load_config(const nlohmann::json& j, const std::optional<std::string>& profile_override = {}) {
  using detail::read;
  using detail::reject_unknown;
  if (j.is_null()) return RunConfig::defaults(profile_override.value_or("desk"));
  reject_unknown(j, {"profile", "env", "scheme", "schemes", "seeds", "dataset", "agent", "ranknet", "schedule", "oracle",
                     "online_budget", "eval_every", "eval_episodes", "final_evals", "start_steps", "exploration_noise",
                     "unqueried_first", "output_dir", "workers", "theory"},
                 "");
  std::string profile = "desk";
  read(j, "profile", profile, "");
  RunConfig c = RunConfig::defaults(profile_override.value_or(profile));
  read(j, "env", c.env, "");
  read(j, "scheme", c.scheme, "");
  read(j, "schemes", c.schemes, "");
  read(j, "seeds", c.seeds, "");
  read(j, "output_dir", c.output_dir, "");
  read(j, "workers", c.workers, "");
  RunSettings& s = c.settings;
  read(j, "online_budget", s.online_budget, "");
  read(j, "eval_every", s.eval_every, "");
  read(j, "eval_episodes", s.eval_episodes, "");
  read(j, "final_evals", s.final_evals, "");
  read(j, "start_steps", s.start_steps, "");
  read(j, "exploration_noise", s.exploration_noise, "");
  read(j, "unqueried_first", s.unqueried_first, "");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"path", "tier", "n"}, "dataset.");
    read(d, "path", c.dataset.path, "dataset.");
    read(d, "tier", c.dataset.tier, "dataset.");
    read(d, "n", c.dataset.n, "dataset.");
  }
  if (j.contains("agent")) {
    const auto& a = j.at("agent");
    reject_unknown(a, {"alpha", "gamma", "tau", "policy_noise", "noise_clip", "policy_update_freq", "batch_size", "lr",
                       "normalize_states", "normalize_lambda", "actor_hidden", "critic_hidden"},
                   "agent.");
    AgentConfig& g = s.agent;
    read(a, "alpha", g.alpha, "agent.");
    read(a, "gamma", g.gamma, "agent.");
    read(a, "tau", g.tau, "agent.");
    read(a, "policy_noise", g.policy_noise, "agent.");
    read(a, "noise_clip", g.noise_clip, "agent.");
    read(a, "policy_update_freq", g.policy_update_freq, "agent.");
    read(a, "batch_size", g.batch_size, "agent.");
    read(a, "lr", g.lr, "agent.");
    read(a, "normalize_states", g.normalize_states, "agent.");
    read(a, "normalize_lambda", g.normalize_lambda, "agent.");
    read(a, "actor_hidden", g.actor_hidden, "agent.");
    read(a, "critic_hidden", g.critic_hidden, "agent.");
  }
  if (j.contains("ranknet")) {
    const auto& r = j.at("ranknet");
    reject_unknown(r, {"hidden", "dropout", "epochs", "batch_size", "lr"}, "ranknet.");
    read(r, "hidden", s.ranknet.hidden, "ranknet.");
    read(r, "dropout", s.ranknet.dropout, "ranknet.");
    read(r, "epochs", s.ranknet.epochs, "ranknet.");
    read(r, "batch_size", s.ranknet.batch_size, "ranknet.");
    read(r, "lr", s.ranknet.lr, "ranknet.");
  }
  if (j.contains("schedule")) {
    const auto& r = j.at("schedule");
    reject_unknown(r, {"n_train", "m_inter", "k_total"}, "schedule.");
    read(r, "n_train", s.schedule.n_train, "schedule.");
    read(r, "m_inter", s.schedule.m_inter, "schedule.");
    read(r, "k_total", s.schedule.k_total, "schedule.");
  }
  if (j.contains("oracle")) {
    const auto& r = j.at("oracle");
    reject_unknown(r, {"kind", "noise_amplitude", "vi_sweeps", "seed"}, "oracle.");
    read(r, "kind", s.oracle.kind, "oracle.");
    read(r, "noise_amplitude", s.oracle.noise_amplitude, "oracle.");
    read(r, "vi_sweeps", s.oracle.vi_sweeps, "oracle.");
    read(r, "seed", s.oracle.seed, "oracle.");
  }
  if (j.contains("theory")) {
    const auto& r = j.at("theory");
    reject_unknown(r, {"instances", "alpha", "alpha_tilde", "seed"}, "theory.");
    read(r, "instances", c.theory.instances, "theory.");
    read(r, "alpha", c.theory.alpha, "theory.");
    read(r, "alpha_tilde", c.theory.alpha_tilde, "theory.");
    read(r, "seed", c.theory.seed, "theory.");
  }
  return c;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  const RunSettings& s = c.settings;
  const AgentConfig& g = s.agent;
  nlohmann::ordered_json j;
  j["profile"] = c.profile;
  j["env"] = c.env;
  j["scheme"] = c.scheme;
  j["schemes"] = c.schemes;
  j["seeds"] = c.seeds;
  j["dataset"] = {{"path", c.dataset.path}, {"tier", c.dataset.tier}, {"n", c.dataset.n}};
  j["agent"] = {{"alpha", g.alpha},
                {"gamma", g.gamma},
                {"tau", g.tau},
                {"policy_noise", g.policy_noise},
                {"noise_clip", g.noise_clip},
                {"policy_update_freq", g.policy_update_freq},
                {"batch_size", g.batch_size},
                {"lr", g.lr},
                {"normalize_states", g.normalize_states},
                {"normalize_lambda", g.normalize_lambda},
                {"actor_hidden", g.actor_hidden},
                {"critic_hidden", g.critic_hidden}};
  j["ranknet"] = {{"hidden", s.ranknet.hidden},
                  {"dropout", s.ranknet.dropout},
                  {"epochs", s.ranknet.epochs},
                  {"batch_size", s.ranknet.batch_size},
                  {"lr", s.ranknet.lr}};
  j["schedule"] = {{"n_train", s.schedule.n_train}, {"m_inter", s.schedule.m_inter}, {"k_total", s.schedule.k_total}};
  j["oracle"] = {{"kind", s.oracle.kind},
                 {"noise_amplitude", s.oracle.noise_amplitude},
                 {"vi_sweeps", s.oracle.vi_sweeps},
                 {"seed", s.oracle.seed}};
  j["online_budget"] = s.online_budget;
  j["eval_every"] = s.eval_every;
  j["eval_episodes"] = s.eval_episodes;
  j["final_evals"] = s.final_evals;
  j["start_steps"] = s.start_steps;
  j["exploration_noise"] = s.exploration_noise;
  j["unqueried_first"] = s.unqueried_first;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["theory"] = {{"instances", c.theory.instances},
                 {"alpha", c.theory.alpha},
                 {"alpha_tilde", c.theory.alpha_tilde},
                 {"seed", c.theory.seed}};
  return j;
}

}  // namespace oap
