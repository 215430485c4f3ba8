#pragma once

// Command-line front end: gen-data, train, compare, verify-theory, diagnose.
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime abort.

#include <CLI11.hpp>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oap/config.hpp"
#include "oap/data.hpp"
#include "oap/env.hpp"
#include "oap/errors.hpp"
#include "oap/io.hpp"
#include "oap/preference.hpp"
#include "oap/scheduler.hpp"
#include "oap/theory.hpp"

namespace oap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitAbort = 3;

namespace fs = std::filesystem;

// Flag values that override the config file.
struct Overrides {
  std::optional<std::string> env, scheme, data, tier, oracle_kind, agent_dir;
  std::optional<std::size_t> n, n_train, m_inter, k_total, online_budget;
  std::optional<double> oracle_noise, alpha, alpha_tilde;
  std::optional<int> vi_sweeps, instances, n_seeds;
  std::vector<std::string> schemes;
  std::vector<std::uint64_t> seeds;
};

struct Globals {
  std::optional<std::string> config_path, out, profile;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

struct Context {
  RunConfig cfg;
  std::string config_hash;  // hash of the --config file bytes, empty without one
  std::uint64_t seed = 1;
  fs::path out;
  std::ostream& log;
};

inline std::string hash_text(std::string_view bytes) { return hex64(fnv1a(bytes)); }

inline Context make_context(const Globals& g, const Overrides& o, std::ostream& log) {
  nlohmann::json file;
  std::string config_hash;
  if (g.config_path) {
    std::string text;
    try {
      text = read_file(*g.config_path);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    config_hash = hash_text(text);
    try {
      file = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    // A manifest carries the config under "config".
    if (file.is_object() && file.contains("config") && file.contains("command")) file = file.at("config");
  }
  RunConfig cfg = load_config(file, g.profile);
  if (o.env) cfg.env = *o.env;
  if (o.scheme) cfg.scheme = *o.scheme;
  if (!o.schemes.empty()) cfg.schemes = o.schemes;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.n_seeds) {
    if (*o.n_seeds <= 0) throw ConfigError("--n-seeds must be positive");
    cfg.seeds.clear();
    for (int k = 1; k <= *o.n_seeds; ++k) cfg.seeds.push_back(static_cast<std::uint64_t>(k));
  }
  if (o.data) cfg.dataset.path = *o.data;
  if (o.tier) cfg.dataset.tier = *o.tier;
  if (o.n) cfg.dataset.n = *o.n;
  auto& s = cfg.settings;
  if (o.n_train) s.schedule.n_train = *o.n_train;
  if (o.m_inter) s.schedule.m_inter = *o.m_inter;
  if (o.k_total) s.schedule.k_total = *o.k_total;
  if (o.online_budget) s.online_budget = *o.online_budget;
  if (o.oracle_kind) s.oracle.kind = *o.oracle_kind;
  if (o.oracle_noise) s.oracle.noise_amplitude = *o.oracle_noise;
  if (o.vi_sweeps) s.oracle.vi_sweeps = *o.vi_sweeps;
  if (o.instances) cfg.theory.instances = *o.instances;
  if (o.alpha) cfg.theory.alpha = *o.alpha;
  if (o.alpha_tilde) cfg.theory.alpha_tilde = *o.alpha_tilde;
  if (g.out) cfg.output_dir = *g.out;
  if (g.workers) cfg.workers = *g.workers;
  cfg.validate();
  Context ctx{cfg, config_hash, g.seed.value_or(cfg.seeds.front()), fs::path(cfg.output_dir), log};
  return ctx;
}

struct LoadedData {
  OfflineDataset dataset;
  std::string hash;
  std::string source;
};

inline LoadedData obtain_dataset(const RunConfig& cfg, const Env& env, std::uint64_t seed) {
  LoadedData out;
  if (!cfg.dataset.path.empty()) {
    const std::string text = read_file(cfg.dataset.path);
    std::istringstream in(text);
    out.dataset = load_dataset(in);
    out.hash = hash_text(text);
    out.source = cfg.dataset.path;
  } else {
    out.dataset = generate_dataset(env, parse_tier(cfg.dataset.tier), cfg.dataset.n, seed).dataset;
    std::ostringstream ss;
    save_dataset(out.dataset, ss);
    out.hash = hash_text(ss.str());
    out.source = "generated:" + cfg.dataset.tier + ":n=" + std::to_string(cfg.dataset.n) + ":seed=" + std::to_string(seed);
  }
  if (out.dataset.state_dim != env.state_dim() || out.dataset.action_dim != env.action_dim())
    throw ConfigError("dataset dimensions do not match environment " + env.name());
  return out;
}

// Writes `text` and records its hash for the manifest.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& text) {
    write_file((dir_ / name).string(), text);
    hashes_[name] = hash_text(text);
  }

  const fs::path& dir() const { return dir_; }

  void manifest(const std::string& command, const Context& ctx, const std::map<std::string, std::string>& inputs) {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["seed"] = ctx.seed;
    m["config_file_hash"] = ctx.config_hash;
    m["inputs"] = inputs;
    m["outputs"] = hashes_;
    m["config"] = config_to_json(ctx.cfg);
    const std::string text = m.dump(2) + "\n";
    write_file((dir_ / "manifest.json").string(), text);
  }

 private:
  fs::path dir_;
  std::map<std::string, std::string> hashes_;
};

inline std::string metrics_csv(const std::vector<const RunReport*>& reports) {
  std::ostringstream ss;
  write_metrics_header(ss);
  for (const auto* r : reports) write_metrics_rows(*r, ss);
  return ss.str();
}

inline std::string audit_text(const RunReport& r) {
  const auto& a = r.audit;
  std::ostringstream ss;
  ss << "counter,value\n"
     << "env_steps," << a.env_steps << "\nreward_calls," << a.reward_calls << "\noracle_queries," << a.oracle_queries
     << "\noffline_samples_used," << a.offline_samples_used << "\noffline_updates," << a.offline_updates
     << "\nadjusted_updates," << a.adjusted_updates << "\nonline_updates," << a.online_updates
     << "\neval_env_steps," << a.eval_env_steps << "\nlabels_init," << r.labels.init << "\nlabels_oracle,"
     << r.labels.oracle << "\nlabels_pseudo," << r.labels.pseudo << '\n';
  const ResourcePattern obs = observed_pattern(a), exp = expected_pattern(r);
  ss << "pattern_matches_scheme," << (obs == exp ? 1 : 0) << '\n';
  return ss.str();
}

inline std::string rounds_csv(const RunReport& r) {
  std::ostringstream ss;
  ss << "step,queries,policy_preferred,ranknet_cost,pseudo_labels,pseudo_policy\n";
  for (const auto& x : r.rounds)
    ss << x.step << ',' << x.queries << ',' << x.policy_preferred << ','
       << (std::isnan(x.ranknet_cost) ? std::string("") : format_double(x.ranknet_cost)) << ',' << x.pseudo_labels << ','
       << x.pseudo_policy << '\n';
  return ss.str();
}

inline std::optional<OracleQ> oracle_for(const SchemeSpec& spec, const RunConfig& cfg, const Env& env) {
  if (spec.scheme != Scheme::Oap) return std::nullopt;
  return make_oracle(cfg.settings.oracle, env);
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const Context& ctx, const Overrides& o, const Globals& g) {
  if (!o.env) throw ConfigError("gen-data needs --env");
  if (!g.out) throw ConfigError("gen-data needs --out <file>");
  const Env env = make_env(*o.env);
  const QualityTier tier = parse_tier(ctx.cfg.dataset.tier);
  const GeneratedDataset gen = generate_dataset(env, tier, ctx.cfg.dataset.n, ctx.seed);
  std::ostringstream ss;
  save_dataset(gen.dataset, ss);
  const fs::path path(*g.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path.string(), ss.str());
  ctx.log << "wrote " << path.string() << ": n=" << gen.dataset.size() << " tier=" << tier_name(tier)
          << " episodes=" << gen.episode_returns.size() << " mean_return=" << format_double(gen.mean_return()) << '\n';
  return kExitOk;
}

inline int cmd_train(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const SchemeSpec spec = SchemeSpec::parse(cfg.scheme);
  const Env env = make_env(cfg.env);
  std::optional<LoadedData> data;
  if (spec.scheme != Scheme::Online) data = obtain_dataset(cfg, env, ctx.seed);
  const std::optional<OracleQ> oracle = oracle_for(spec, cfg, env);
  const ReferenceReturns ref = reference_returns(env);
  const RunReport rep = run_scheme(spec, env, data ? &data->dataset : nullptr, oracle ? &*oracle : nullptr,
                                   cfg.settings, ctx.seed, ref);
  OutputSet outputs(ctx.out);
  outputs.write("metrics.csv", metrics_csv({&rep}));
  outputs.write("audit.csv", audit_text(rep));
  if (spec.scheme == Scheme::Oap) {
    outputs.write("rounds.csv", rounds_csv(rep));
    std::ostringstream q;
    write_query_log(rep.queries, env.state_dim(), env.action_dim(), q);
    outputs.write("query_log.csv", q.str());
  }
  rep.agent->save(ctx.out / "agent");
  std::map<std::string, std::string> inputs;
  if (data) inputs[data->source] = data->hash;
  outputs.manifest("train", ctx, inputs);
  ctx.log << spec.label() << " on " << env.name() << " seed " << ctx.seed
          << ": final_score=" << format_double(rep.final_score(cfg.settings.final_evals))
          << " final_return=" << format_double(rep.final_return(cfg.settings.final_evals))
          << " queries=" << rep.audit.oracle_queries << " env_steps=" << rep.audit.env_steps << '\n';
  return kExitOk;
}

struct CompareRow {
  std::string label;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double mean_return = 0.0;
};

inline int cmd_compare(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Env env = make_env(cfg.env);
  const ReferenceReturns ref = reference_returns(env);
  struct Job {
    SchemeSpec spec;
    std::uint64_t seed;
    std::optional<RunReport> report;
    std::string error;
  };
  std::vector<Job> jobs;
  for (const auto& label : cfg.schemes)
    for (auto seed : cfg.seeds) jobs.push_back({SchemeSpec::parse(label), seed, std::nullopt, {}});
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      Job& job = jobs[i];
      try {
        std::optional<LoadedData> data;
        if (job.spec.scheme != Scheme::Online) data = obtain_dataset(cfg, env, job.seed);
        const std::optional<OracleQ> oracle = oracle_for(job.spec, cfg, env);
        job.report = run_scheme(job.spec, env, data ? &data->dataset : nullptr, oracle ? &*oracle : nullptr,
                                cfg.settings, job.seed, ref);
        job.report->agent.reset();
        job.report->table.reset();
      } catch (const std::exception& e) {
        job.error = e.what();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> threads;
  for (int w = 1; w < n_workers; ++w) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  for (const auto& job : jobs) {
    if (!job.report) continue;
    OutputSet run_out(ctx.out / "runs" / (job.spec.label() + "_seed" + std::to_string(job.seed)));
    run_out.write("metrics.csv", metrics_csv({&*job.report}));
    run_out.write("audit.csv", audit_text(*job.report));
  }

  std::vector<const RunReport*> ok;
  std::vector<CompareRow> rows;
  for (const auto& label : cfg.schemes) {
    CompareRow row{label};
    std::vector<double> scores, returns;
    for (const auto& job : jobs) {
      if (job.spec.label() != label) continue;
      ++row.runs;
      if (!job.report) {
        ++row.failed;
        ctx.log << "run " << label << " seed " << job.seed << " failed: " << job.error << '\n';
        continue;
      }
      ok.push_back(&*job.report);
      scores.push_back(job.report->final_score(cfg.settings.final_evals));
      returns.push_back(job.report->final_return(cfg.settings.final_evals));
    }
    if (!scores.empty()) {
      for (double v : scores) row.mean += v;
      row.mean /= static_cast<double>(scores.size());
      for (double v : scores) row.stddev += (v - row.mean) * (v - row.mean);
      row.stddev = std::sqrt(row.stddev / static_cast<double>(scores.size()));
      for (double v : returns) row.mean_return += v;
      row.mean_return /= static_cast<double>(returns.size());
    }
    rows.push_back(row);
  }
  OutputSet outputs(ctx.out);
  outputs.write("metrics.csv", metrics_csv(ok));
  std::ostringstream summary, table;
  summary << "scheme,env,runs,failed,mean_norm_score,std_norm_score,mean_return\n";
  table << "scheme            " << env.name() << " (normalized score, mean +- std over seeds)\n";
  for (const auto& r : rows) {
    summary << r.label << ',' << env.name() << ',' << r.runs << ',' << r.failed << ',' << format_double(r.mean) << ','
            << format_double(r.stddev) << ',' << format_double(r.mean_return) << '\n';
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s  %7.1f +- %5.1f  (%zu runs%s)\n", r.label.c_str(), r.mean, r.stddev, r.runs,
                  r.failed ? (", " + std::to_string(r.failed) + " failed").c_str() : "");
    table << buf;
  }
  outputs.write("summary.csv", summary.str());
  outputs.write("table.txt", table.str());
  outputs.manifest("compare", ctx, {});
  ctx.log << table.str();
  for (const auto& r : rows)
    if (r.failed) return kExitAbort;
  return kExitOk;
}

inline int cmd_verify_theory(const Context& ctx) {
  const TheoryConfig& t = ctx.cfg.theory;
  std::ostringstream csv;
  write_theory_header(csv);
  int passed = 0;
  for (int i = 0; i < t.instances; ++i) {
    const TheoryRow row = run_theory_instance(i, t.seed, t.alpha, t.alpha_tilde);
    write_theory_row(row, csv);
    if (row.all_pass()) ++passed;
  }
  OutputSet outputs(ctx.out);
  outputs.write("theory.csv", csv.str());
  outputs.manifest("verify-theory", ctx, {});
  ctx.log << "verify-theory: " << passed << "/" << t.instances << " instances pass every assertable check\n";
  return passed == t.instances ? kExitOk : kExitAbort;
}

inline int cmd_diagnose(const Context& ctx, const Overrides& o) {
  const RunConfig& cfg = ctx.cfg;
  const Env env = make_env(cfg.env);
  const LoadedData data = obtain_dataset(cfg, env, ctx.seed);
  OracleSpec os = cfg.settings.oracle;
  const OracleQ oracle = make_oracle({"auto", 0.0, 0, os.seed}, env);
  std::optional<Td3bcAgent> agent;
  if (o.agent_dir) {
    agent.emplace(env.state_dim(), env.action_dim(), env.action_bound(), cfg.settings.agent,
                  StateNormalizer::fit(data.dataset), ctx.seed);
    agent->load(*o.agent_dir);
  } else {
    const SchemeSpec spec = SchemeSpec::parse(cfg.scheme);
    const std::optional<OracleQ> run_oracle = oracle_for(spec, cfg, env);
    RunReport rep = run_scheme(spec, env, &data.dataset, run_oracle ? &*run_oracle : nullptr, cfg.settings, ctx.seed,
                               reference_returns(env));
    agent = std::move(rep.agent);
  }
  const auto rows = diagnostics(*agent, data.dataset, oracle);
  std::ostringstream csv;
  write_diagnostics_csv(rows, csv);
  OutputSet outputs(ctx.out);
  outputs.write("diagnostics.csv", csv.str());
  outputs.manifest("diagnose", ctx, {{data.source, data.hash}});
  double mean_div = 0.0, mean_gain = 0.0;
  for (const auto& r : rows) {
    mean_div += r.divergence;
    mean_gain += r.value_gain;
  }
  ctx.log << "diagnose: n=" << rows.size() << " mean_divergence=" << format_double(mean_div / rows.size())
          << " mean_value_gain=" << format_double(mean_gain / rows.size())
          << " harmful_fraction=" << format_double(harmful_divergence_fraction(rows)) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline void add_run_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--env", o.env, "gridmaze-10, pointmass, or gridmaze:<layout file>");
  sub->add_option("--data", o.data, "OAPDS dataset file (default: generate from --tier/--n)");
  sub->add_option("--tier", o.tier, "random, medium, medium-replay, medium-expert, expert");
  sub->add_option("--n", o.n, "transitions to generate");
  sub->add_option("--n-train", o.n_train, "agent updates");
  sub->add_option("--m-inter", o.m_inter, "updates between query rounds");
  sub->add_option("--k-total", o.k_total, "oracle query budget");
  sub->add_option("--online-budget", o.online_budget, "env steps for online phases");
  sub->add_option("--oracle", o.oracle_kind, "auto, exact_tabular, expert_rollout, perturbed");
  sub->add_option("--oracle-noise", o.oracle_noise, "perturbed oracle noise amplitude");
  sub->add_option("--vi-sweeps", o.vi_sweeps, "perturbed oracle: truncated value-iteration sweeps");
}

inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Offline training with action-preference queries"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Overrides o;
  app.add_option("--config", g.config_path, "JSON config file (or a run manifest)");
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--out", g.out, "output directory (gen-data: output file)");
  app.add_option("--workers", g.workers, "parallel runs for compare");
  app.add_option("--profile", g.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));

  auto* gen = app.add_subcommand("gen-data", "generate an offline dataset");
  gen->add_option("--env", o.env, "environment")->required();
  gen->add_option("--tier", o.tier, "dataset quality tier");
  gen->add_option("--n", o.n, "number of transitions");

  auto* train = app.add_subcommand("train", "run one scheme");
  train->add_option("--scheme", o.scheme, "offline, online, online-mix, o2o, o2o-interval, oap, oap-ft, oap-inf, oap-no-rn");
  add_run_flags(train, o);

  auto* compare = app.add_subcommand("compare", "scheme x seed grid with an aggregate table");
  compare->add_option("--schemes", o.schemes, "schemes to compare")->delimiter(',');
  compare->add_option("--seeds", o.seeds, "seed list")->delimiter(',');
  compare->add_option("--n-seeds", o.n_seeds, "use seeds 1..n");
  add_run_flags(compare, o);

  auto* theory = app.add_subcommand("verify-theory", "exact checks on random tabular MDPs");
  theory->add_option("--instances", o.instances, "number of random instances");
  theory->add_option("--alpha", o.alpha, "noise bound along the behavior policy");
  theory->add_option("--alpha-tilde", o.alpha_tilde, "noise bound along the revised policy");

  auto* diagnose = app.add_subcommand("diagnose", "action divergence vs value gain per sample");
  diagnose->add_option("--agent", o.agent_dir, "agent snapshot directory from train (default: train --scheme first)");
  diagnose->add_option("--scheme", o.scheme, "scheme to train when no --agent is given");
  add_run_flags(diagnose, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    const Context ctx = make_context(g, o, log);
    if (*gen) return cmd_gen_data(ctx, o, g);
    if (*train) return cmd_train(ctx);
    if (*compare) return cmd_compare(ctx);
    if (*theory) return cmd_verify_theory(ctx);
    if (*diagnose) return cmd_diagnose(ctx, o);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "run aborted: " << e.what() << '\n';
    return kExitAbort;
  }
  return kExitUsage;
}

}  // namespace oap::cli
