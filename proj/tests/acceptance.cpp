// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "cases.hpp"
#include "oap/cli.hpp"
#include "oap/theory.hpp"
#include "support.hpp"

namespace oap {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;
bool desk_rerun_identical = false;

void report(int id, std::string name, bool pass, std::string detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << " (" << detail << ")" << std::endl;
  verdicts.push_back({id, std::move(name), pass, std::move(detail)});
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// Desk-profile runs, shared between criteria 6 to 11.

constexpr std::size_t kDeskN = 50'000;
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

struct DeskLab {
  std::map<std::string, Env> envs;
  std::map<std::pair<std::string, std::uint64_t>, OfflineDataset> data;
  std::map<std::string, ReferenceReturns> refs;
  std::vector<RunReport> audited;  // every run, for criterion 7

  const Env& env(const std::string& name) {
    auto it = envs.find(name);
    if (it == envs.end()) {
      it = envs.emplace(name, make_env(name)).first;
      refs.emplace(name, reference_returns(it->second));
    }
    return it->second;
  }

  // Same generation stream as the CLI: medium tier, n = 5e4, seeded by the run seed.
  const OfflineDataset& dataset(const std::string& name, std::uint64_t seed) {
    const auto key = std::make_pair(name, seed);
    auto it = data.find(key);
    if (it == data.end()) it = data.emplace(key, generate_dataset(env(name), QualityTier::Medium, kDeskN, seed).dataset).first;
    return it->second;
  }

  RunReport run(const std::string& env_name, const std::string& label, std::uint64_t seed,
                RunSettings st = RunSettings::desk()) {
    const Env& e = env(env_name);
    const SchemeSpec spec = SchemeSpec::parse(label);
    std::optional<OracleQ> oracle;
    if (spec.scheme == Scheme::Oap) oracle = make_oracle(st.oracle, e);
    const OfflineDataset* d = spec.scheme == Scheme::Online ? nullptr : &dataset(env_name, seed);
    const auto t0 = Clock::now();
    RunReport r = run_scheme(spec, e, d, oracle ? &*oracle : nullptr, st, seed, refs.at(env_name));
    note(label + " " + env_name + " seed " + std::to_string(seed) + ": score " + fmt(r.final_score(st.final_evals)) +
         " (" + fmt(seconds_since(t0), 3) + " s)");
    r.table.reset();
    r.queries.records.clear();
    audited.push_back(r);
    r.agent.reset();
    return r;
  }
};

double mean_score(const std::vector<RunReport>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.final_score();
  return s / static_cast<double>(runs.size());
}

std::string metrics_text(const RunReport& r, bool numeric_only = false) {
  std::ostringstream out;
  for (const auto& e : r.evals) {
    out << e.step << ',';
    if (!numeric_only) out << scheme_name(r.spec.scheme) << ',' << r.spec.variant() << ',';
    out << format_double(e.return_mean) << ',' << format_double(e.return_std) << ',' << format_double(e.norm_score)
        << ',' << e.queries_used << ',' << e.env_steps << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

void theory_criteria() {
  const auto t0 = Clock::now();
  std::vector<TheoryRow> rows;
  for (int i = 0; i < 20; ++i) rows.push_back(run_theory_instance(i, 0, 0.1, 0.1));
  const double secs = seconds_since(t0);

  double worst_identity = 0.0, worst_a = 0.0, min_b = 1e300, min_margin = 1e300;
  int gain_ok = 0, chain = 0, rho = 0, rigorous = 0, dtv_ok = 0, max_states = 0;
  for (const auto& r : rows) {
    worst_identity = std::max(worst_identity, r.identity_residual);
    max_states = std::max(max_states, r.n_states);
    worst_a = std::max(worst_a, r.gain.residual());
    min_b = std::min(min_b, r.gain.b);
    gain_ok += r.gain.pass();
    chain += r.noisy.chain_pass();
    rho += r.noisy.rho_bar_pass();
    rigorous += r.noisy.rigorous_pass();
    dtv_ok += r.noisy.dtv_pass();
    min_margin = std::min(min_margin, r.noisy.lhs - (r.noisy.hat - r.noisy.slack()));
  }
  report(1, "performance-difference identity on 20 random MDPs", worst_identity < 1e-8 && max_states <= 30 && secs < 5.0,
         "max |LHS-RHS| " + fmt(worst_identity) + ", max |S| " + std::to_string(max_states) + ", sweep " + fmt(secs, 3) + " s");
  report(2, "revision gain B >= 0", gain_ok == 20 && secs < 5.0,
         std::to_string(gain_ok) + "/20, min B " + fmt(min_b) + ", max |A-B| " + fmt(worst_a) + " (reported only)");
  report(3, "noisy-Q revision chain with alpha = alpha~ = 0.1", chain == 20 && rho == 20 && secs < 10.0,
         "chain " + std::to_string(chain) + "/20, rho_bar range " + std::to_string(rho) + "/20, min margin " +
             fmt(min_margin) + "; sharp form " + std::to_string(rigorous) + "/20, dtv bounds " + std::to_string(dtv_ok) +
             "/20");
}

void gradient_criterion() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst_mlp = 0.0;
  int nets = 0;
  const std::vector<std::vector<int>> shapes{{2, 8, 1}, {4, 16, 16, 2}, {3, 32, 1}, {6, 12, 8, 4}};
  for (int k = 0; k < 12; ++k) {
    const auto& w = shapes[static_cast<std::size_t>(k) % shapes.size()];
    Rng init(rng.next_u64());
    const bool tanh_out = k % 2 == 0;
    const MlpNet net({w, tanh_out ? OutputActivation::Tanh : OutputActivation::Identity, tanh_out ? 1.5 : 1.0, 0.0}, init);
    worst_mlp = std::max(worst_mlp, test::max_fd_error(net, test::random_matrix(w.front(), 4, rng),
                                                       test::random_matrix(w.back(), 4, rng)));
    ++nets;
  }
  double worst_rn = 0.0;
  for (int k = 0; k < 20; ++k) {
    const double o = rng.uniform(-8.0, 8.0), t = k < 8 ? double(k % 2) : rng.uniform();
    const double h = 1e-6;
    const double fd = (ranknet_cost(o + h, t) - ranknet_cost(o - h, t)) / (2.0 * h);
    worst_rn = std::max(worst_rn, test::rel_err(ranknet_cost_grad(o, t), fd));
  }
  const double secs = seconds_since(t0);
  report(4, "gradient integrity", worst_mlp < 1e-5 && worst_rn < 1e-5 && secs < 10.0,
         "MLP max rel err " + fmt(worst_mlp) + " over " + std::to_string(nets) + " nets, dC/do max rel err " +
             fmt(worst_rn) + " over 20, " + fmt(secs, 3) + " s");
}

void learnability_criterion() {
  const auto t0 = Clock::now();
  const auto syn = test::synthetic_pairs(500, 1000, 101);
  RankNet rs(3, 2, 1.0, RankNetConfig{}, test::normalizer_for(syn.train, 3), 1);
  rs.train(syn.train);
  const double syn_acc = test::agreement(rs, syn.held_out);
  const auto grid = test::grid_oracle_pairs(500, 1000, 202);
  const Env env = make_env("gridmaze-10");
  RankNet rg(env.state_dim(), env.action_dim(), env.action_bound(), RankNetConfig{}, test::normalizer_for(grid.train, 2), 2);
  rg.train(grid.train);
  const double grid_acc = test::agreement(rg, grid.held_out);
  const double secs = seconds_since(t0);
  report(5, "RankNet learnability", syn_acc >= 0.95 && grid_acc >= 0.90 && secs < 60.0,
         "synthetic held-out " + fmt(syn_acc) + ", gridmaze oracle agreement " + fmt(grid_acc) + ", " + fmt(secs, 3) +
             " s");
}

// ---------------------------------------------------------------------------

struct Comparison {
  std::map<std::string, std::map<std::string, std::vector<RunReport>>> runs;  // env -> label -> seeds
};

void scheme_criteria(DeskLab& lab) {
  Comparison cmp;
  const auto t0 = Clock::now();
  for (const char* env : {"gridmaze-10", "pointmass"})
    for (const char* label : {"offline", "o2o", "oap"})
      for (auto seed : kSeeds) cmp.runs[env][label].push_back(lab.run(env, label, seed));
  const double secs8 = seconds_since(t0);

  // 6: zero budget against the offline run of the same seed.
  {
    RunSettings st = RunSettings::desk();
    st.schedule.k_total = 0;
    const RunReport zero = lab.run("gridmaze-10", "oap", 1, st);
    const RunReport& off = cmp.runs["gridmaze-10"]["offline"][0];
    const bool same = metrics_text(zero, true) == metrics_text(off, true) && zero.audit.oracle_queries == 0;
    report(6, "k_total = 0 OAP equals Offline bit for bit", same,
           std::to_string(zero.evals.size()) + " metric rows compared on numeric columns, gridmaze-10 seed 1");
  }

  // 8
  {
    bool oap_ge_offline = true, oap_ge_o2o_somewhere = false;
    std::string detail;
    for (const char* env : {"gridmaze-10", "pointmass"}) {
      const double off = mean_score(cmp.runs[env]["offline"]), o2o = mean_score(cmp.runs[env]["o2o"]),
                   oap = mean_score(cmp.runs[env]["oap"]);
      oap_ge_offline = oap_ge_offline && oap >= off;
      oap_ge_o2o_somewhere = oap_ge_o2o_somewhere || oap >= o2o;
      detail += std::string(env) + ": offline " + fmt(off) + ", o2o " + fmt(o2o) + ", oap " + fmt(oap) + "; ";
    }
    report(8, "OAP >= Offline on both envs and >= O2O on one", oap_ge_offline && oap_ge_o2o_somewhere && secs8 < 1800.0,
           detail + "30 runs in " + fmt(secs8, 4) + " s");
  }

  // 9: perturbed oracle, noise 0.25 x reward scale (|r| = 1 per step).
  {
    RunSettings st = RunSettings::desk();
    st.oracle = {"perturbed", 0.25, 0, 0};
    std::vector<RunReport> noisy;
    for (auto seed : kSeeds) noisy.push_back(lab.run("gridmaze-10", "oap", seed, st));
    const double off = mean_score(cmp.runs["gridmaze-10"]["offline"]), oap = mean_score(noisy);
    report(9, "perturbed-oracle OAP >= Offline on gridmaze-10", oap >= off,
           "offline " + fmt(off) + ", oap(noise 0.25) " + fmt(oap));
  }

  // 10
  {
    std::vector<RunReport> inf, norn;
    for (auto seed : kSeeds) {
      inf.push_back(lab.run("gridmaze-10", "oap-inf", seed));
      norn.push_back(lab.run("gridmaze-10", "oap-no-rn", seed));
    }
    // Budget covering every index each round, on a smaller dataset.
    const Env& env = lab.env("gridmaze-10");
    const OfflineDataset small = generate_dataset(env, QualityTier::Medium, 2000, 9).dataset;
    const OracleQ oracle = make_oracle({}, env);
    RunSettings st = RunSettings::desk();
    st.schedule = {10'000, 1'000, 2000 * 10};
    const ReferenceReturns& ref = lab.refs.at("gridmaze-10");
    const RunReport a = run_scheme(SchemeSpec::parse("oap-inf"), env, &small, &oracle, st, 9, ref);
    const RunReport b = run_scheme(SchemeSpec::parse("oap-no-rn"), env, &small, &oracle, st, 9, ref);
    bool labels_equal = a.table && b.table && b.labels.oracle == small.size();
    for (std::size_t i = 0; labels_equal && i < small.size(); ++i) {
      const auto x = a.table->preferred(i), y = b.table->preferred(i);
      labels_equal = std::equal(x.begin(), x.end(), y.begin(), y.end());
    }
    lab.audited.push_back(a);
    lab.audited.push_back(b);
    const double mi = mean_score(inf), mn = mean_score(norn);
    report(10, "OAP(inf) >= OAP(no ranknet), labels equal under full budget", mi >= mn && labels_equal,
           "inf " + fmt(mi) + ", no-rn " + fmt(mn) + ", labels " + (labels_equal ? "identical" : "differ") + " on " +
               std::to_string(small.size()) + " indices");
  }

  // 7: every run so far plus the remaining schemes and variants.
  {
    for (const char* label : {"online", "online-mix", "o2o-interval", "oap-ft"}) lab.run("gridmaze-10", label, 1);
    lab.run("pointmass", "online", 1);
    int ok = 0, zero_env = 0, zero_env_needed = 0;
    std::map<std::string, int> seen;
    for (const auto& r : lab.audited) {
      const bool match = observed_pattern(r.audit) == expected_pattern(r);
      if (!match) note("audit mismatch: " + r.spec.label() + " " + r.env + " seed " + std::to_string(r.seed));
      ok += match;
      ++seen[r.spec.label()];
      if (r.spec.scheme == Scheme::Offline || r.spec.scheme == Scheme::Oap) {
        ++zero_env_needed;
        zero_env += r.audit.env_steps == 0 && r.audit.reward_calls == 0;
      }
    }
    const auto n = static_cast<int>(lab.audited.size());
    report(7, "scheme audit matches the requirement matrix", ok == n && zero_env == zero_env_needed && seen.size() == 9,
           std::to_string(ok) + "/" + std::to_string(n) + " runs over " + std::to_string(seen.size()) +
               " scheme labels, zero env steps on " + std::to_string(zero_env) + "/" + std::to_string(zero_env_needed) +
               " offline/oap runs");
  }

  // Desk rerun for criterion 11.
  const RunReport again = lab.run("gridmaze-10", "oap", 1);
  lab.audited.pop_back();
  desk_rerun_identical = metrics_text(again) == metrics_text(cmp.runs["gridmaze-10"]["oap"][0]);

  std::cout << "\n  scheme            gridmaze-10      pointmass   (final normalized score, mean over 5 seeds)\n";
  for (const char* label : {"offline", "o2o", "oap"})
    std::printf("  %-16s  %9.1f  %13.1f\n", label, mean_score(cmp.runs["gridmaze-10"][label]),
                mean_score(cmp.runs["pointmass"][label]));
  std::cout << std::endl;
}

// ---------------------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "oap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != cli::kExitOk) note("command failed (" + std::to_string(code) + "): " + err.str());
  return code;
}

std::map<std::string, std::string> csv_files(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext != ".csv" && ext != ".oapds" && ext != ".txt") continue;
    out[std::filesystem::relative(e.path(), root).string()] = read_file(e.path().string());
  }
  return out;
}

void reproducibility_criterion(bool desk_identical) {
  test::TempDir dir;
  const std::string cfg = dir.file("small.json");
  std::ofstream(cfg) << R"({"dataset": {"n": 5000}, "schedule": {"n_train": 5000, "m_inter": 1000, "k_total": 500}})";
  int failed_commands = 0;
  for (const char* pass : {"a", "b"}) {
    const std::string root = dir.file(pass);
    const std::vector<std::vector<std::string>> commands{
        {"--seed", "3", "--out", root + "/data.oapds", "gen-data", "--env", "pointmass", "--n", "5000"},
        {"--config", cfg, "--seed", "2", "--out", root + "/train", "train", "--scheme", "oap"},
        {"--config", cfg, "--out", root + "/train_pm", "train", "--scheme", "oap", "--env", "pointmass", "--data",
         root + "/data.oapds"},
        {"--config", cfg, "--out", root + "/compare", "compare", "--schemes", "offline,o2o,oap", "--seeds", "1,2"},
        {"--out", root + "/theory", "verify-theory"},
        {"--config", cfg, "--out", root + "/diagnose", "diagnose", "--scheme", "oap"}};
    for (const auto& c : commands) failed_commands += cli(c) != cli::kExitOk;
  }
  const auto a = csv_files(dir.file("a")), b = csv_files(dir.file("b"));
  std::size_t differing = 0;
  for (const auto& [name, text] : a)
    if (!b.count(name) || b.at(name) != text) {
      ++differing;
      note("differs: " + name);
    }
  report(11, "byte-identical reruns", failed_commands == 0 && differing == 0 && a.size() == b.size() && desk_identical,
         std::to_string(a.size()) + " output files from 6 commands compared, " + std::to_string(differing) +
             " differ; desk oap rerun " + (desk_identical ? "identical" : "differs"));
}

}  // namespace
}  // namespace oap

int main() {
  using namespace oap;
  const auto t0 = Clock::now();
  try {
    theory_criteria();
    gradient_criterion();
    learnability_criterion();
    DeskLab lab;
    scheme_criteria(lab);
    reproducibility_criterion(desk_rerun_identical);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  int passed = 0;
  for (const auto& v : verdicts) passed += v.pass;
  std::cout << passed << "/" << verdicts.size() << " criteria passed in " << fmt(seconds_since(t0), 4) << " s\n";
  return passed == static_cast<int>(verdicts.size()) && verdicts.size() == 11 ? 0 : 1;
}
