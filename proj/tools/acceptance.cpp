// Acceptance checks on the canonical instance: l(x) = cos(2 pi x) / 2,
// F(m) = 1/2 double integral of cos(2 pi (x - y)) m(dx) m(dy) + offset, n = 256.
// One PASS/FAIL line per criterion. Every threshold is a named constant below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mflimits/experiment.hpp"
#include "mflimits/serialize.hpp"

using namespace mfl;

namespace {

// criterion 1
constexpr double kLambdaAgreement = 1e-8;
constexpr double kGibbsL1 = 1e-8;
constexpr double kRuntime1 = 5.0;
// criterion 2
constexpr int kMdpCells = 128;
constexpr double kMdpActionCap = 8.0;
constexpr double kDualityGap = 0.02;
constexpr double kRuntime2 = 60.0;
// criterion 3
constexpr double kBandGap = 1e-3;
constexpr double kRuntime3 = 30.0;
// criterion 4
constexpr double kPlannerOracle = 1e-4;
constexpr double kRuntime4 = 60.0;
// criterion 5
constexpr double kLadderTop = 64.0;
constexpr double kMaxFDistance = 0.05;
constexpr double kMonotoneSlack = 1e-6;
constexpr double kRuntime5 = 120.0;
// criterion 6
constexpr double kTargetValue = 1e-5;
constexpr double kDriftReproduction = 1e-6;
constexpr double kRuntime6 = 60.0;
// criterion 7
constexpr int kPlayers = 32;
constexpr double kTriggerTime = 200.0;
constexpr double kEpsilon = 0.05;
constexpr double kHorizon = 2000.0;
constexpr int kRuns = 64;
constexpr double kDiscretizationBudget = 0.02;
constexpr double kMaxTriggerRate = 0.05;
constexpr double kRuntime7 = 600.0;
// criterion 8
constexpr int kDeviationRuns = 32;
constexpr double kDeviationEpsilon = 0.05;
constexpr double kMinTriggerRate = 0.95;
constexpr double kRuntime8 = 600.0;
// criterion 9
constexpr double kBiasTolerance = 0.10;
constexpr double kRuntime9 = 300.0;
// criterion 10
constexpr double kDeterminismHorizon = 300.0;
constexpr double kDeterminismBurnIn = 100.0;
constexpr int kDeterminismRuns = 2;

ExperimentConfig canonical() {
  auto c = ExperimentConfig::preset_config("paper-instance");
  c.N = kPlayers;
  c.T = kTriggerTime;
  c.epsilon = kEpsilon;
  c.horizon = kHorizon;
  c.n_runs = kRuns;
  c.deviation_runs = kDeviationRuns;
  return c;
}

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

std::string f(double v, const char* fmt = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

struct Line {
  bool pass = false;
  std::string detail;
};

// Shared state so that running every criterion in one process reuses stages.
struct Context {
  std::optional<Experiment> ex;
  Experiment& experiment() {
    if (!ex) ex.emplace(canonical());
    return *ex;
  }
};

Line criterion1(Context& ctx) {
  const auto& L = ctx.experiment().lagrangian();
  const auto sol = solve_ergodic_hjb(L, GridField(L.grid()));
  const auto eig = principal_eigen_oracle(L);
  const double dl = std::abs(sol.lambda - eig.lambda);
  const auto mu = solve_invariant_measure(GridDrift::minus_gradient(sol.u)).mu;
  std::vector<double> w(mu.size());
  for (int i = 0; i < mu.size(); ++i) w[i] = std::exp(-2.0 * sol.u[i]);
  const double l1 = l1_distance(mu, ProbabilityGrid::normalized(L.grid(), w));
  return {dl <= kLambdaAgreement && l1 <= kGibbsL1,
          "|lambda_hjb - lambda_eig| = " + f(dl, "%.2e") + " (<= " + f(kLambdaAgreement, "%.0e") +
              "), L1(mu0, exp(-2u0)/Z) = " + f(l1, "%.2e") + " (<= " + f(kGibbsL1, "%.0e") + ")"};
}

Line criterion2(Context& ctx) {
  auto cfg = ctx.experiment().config();
  cfg.n_cells = kMdpCells;
  const Experiment ex(cfg);
  const auto& L = ex.lagrangian();
  const double lam = solve_ergodic_hjb(L, GridField(L.grid())).lambda;
  const double v41 = closed_measure_min_oracle(L, action_grid(kMdpActionCap, 41)).value;
  const double v81 = closed_measure_min_oracle(L, action_grid(kMdpActionCap, 81)).value;
  const double v161 = closed_measure_min_oracle(L, action_grid(kMdpActionCap, 161)).value;
  const double g41 = std::abs(v41 + lam), g81 = std::abs(v81 + lam), g161 = std::abs(v161 + lam);
  const bool monotone = g81 <= g41 && g161 <= g81;
  return {g41 <= kDualityGap && monotone, "|mdp + lambda0| at 41/81/161 actions = " + f(g41, "%.3e") + " / " +
                                              f(g81, "%.3e") + " / " + f(g161, "%.3e") + " (41-action limit " +
                                              f(kDualityGap) + ", nonincreasing: " + (monotone ? "yes" : "no") + ")"};
}

Line criterion3(Context& ctx) {
  auto& ex = ctx.experiment();
  const auto& m = ex.mfg();
  const double e_min = ex.planner().value();
  const double gap = m.e_mfg - e_min;
  const bool ok = e_min < m.e_mfg && m.e_mfg <= m.e_max && gap >= kBandGap && m.e_max_certified;
  return {ok, "e_min = " + f(e_min, "%.10f") + ", e_mfg = " + f(m.e_mfg, "%.10f") + ", e_max = " +
                  f(m.e_max, "%.10f") + (m.e_max_certified ? " (certified)" : " (not certified)") +
                  ", e_mfg - e_min = " + f(gap, "%.3e") + " (>= " + f(kBandGap, "%.0e") + ")"};
}

Line criterion4(Context& ctx) {
  auto& ex = ctx.experiment();
  const double e_min = ex.planner().value();
  const auto o = primal_oracle(ex.lagrangian(), ex.coupling());
  const double gap = std::abs(e_min - o.value);
  return {o.applicable && gap <= kPlannerOracle, "solve_planner = " + f(e_min, "%.10f") + ", primal oracle = " +
                                                     f(o.value, "%.10f") + ", |diff| = " + f(gap, "%.2e") + " (<= " +
                                                     f(kPlannerOracle, "%.0e") + ")"};
}

Line criterion5(Context& ctx) {
  auto& ex = ctx.experiment();
  const auto ladder = penalized_ladder(ex.lagrangian(), ex.coupling(), kLadderTop);
  const auto rows = ladder_rows(ladder);
  const double maxF = max_F(ex.coupling()).value;
  bool monotone = true;
  std::string seq;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (k && rows[k].F_value < rows[k - 1].F_value - kMonotoneSlack) monotone = false;
    seq += (k ? " " : "") + f(rows[k].F_value, "%.4g");
  }
  const double dist = maxF - rows.back().F_value;
  return {std::abs(dist) <= kMaxFDistance && monotone,
          "F(m^n), n = 1..64: " + seq + "; max F = " + f(maxF, "%.4g") + ", max F - F(m^64) = " + f(dist, "%.4g") +
              " (<= " + f(kMaxFDistance) + "), nondecreasing: " + (monotone ? "yes" : "no") +
              ", max drift at n = 64: " + f(ladder.back().alpha.max_abs(), "%.3g")};
}

Line criterion6(Context& ctx) {
  auto& ex = ctx.experiment();
  const auto& t = ex.target();
  const auto check = homotopy_at(ex.lagrangian(), ex.coupling(), ex.planner(), ex.penalized(), t.lambda_star);
  const double verr = std::abs(check.value() - t.e);
  const auto od = optimal_stationary_drift(t.m_hat, ex.lagrangian());
  double rep = 0.0;
  for (int i = 0; i < t.alpha_hat.size(); ++i) rep = std::max(rep, std::abs(od.alpha[i] - t.alpha_hat[i]));
  const bool inside = t.lambda_star > 0.0 && t.lambda_star < 1.0;
  return {verr <= kTargetValue && rep <= kDriftReproduction && inside,
          "e = " + f(t.e, "%.8f") + ", lambda* = " + f(t.lambda_star, "%.6f") + " (n = " + f(t.penalization) +
              "), |value(lambda*) - e| = " + f(verr, "%.2e") + " (<= " + f(kTargetValue, "%.0e") +
              "), |alpha_opt(m_hat) - alpha_hat| = " + f(rep, "%.2e") + " (<= " + f(kDriftReproduction, "%.0e") +
              ")"};
}

// Per-run mean over players, then mean and standard error over runs.
std::pair<double, double> pooled(const SimReport& r) {
  double s = 0.0, s2 = 0.0;
  for (const auto& run : r.runs) {
    double m = 0.0;
    for (const auto& p : run.players) m += p.payoff;
    m /= static_cast<double>(run.players.size());
    s += m;
    s2 += m * m;
  }
  const double n = static_cast<double>(r.runs.size());
  const double mean = s / n;
  const double var = n > 1 ? std::max(0.0, (s2 - n * mean * mean) / (n - 1)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

Line criterion7(Context& ctx) {
  auto& ex = ctx.experiment();
  const double eN = ex.eN().eN;
  const auto& r = ex.simulate();
  const auto [mean, se] = pooled(r);
  const double err = std::abs(mean - eN);
  const double budget = 3.0 * se + kDiscretizationBudget;
  return {err <= budget && r.p_trigger <= kMaxTriggerRate,
          "delta = " + f(ex.delta(), "%.4g") + ", e^N = " + f(eN, "%.6f") + ", simulated = " + f(mean, "%.6f") +
              " +- " + f(se, "%.2e") + ", |diff| = " + f(err, "%.3e") + " (<= " + f(budget, "%.3e") +
              "), p_trigger = " + f(r.p_trigger, "%.3f") + " (<= " + f(kMaxTriggerRate) + ")"};
}

Line criterion8(Context& ctx) {
  auto& ex = ctx.experiment();
  const double eN = ex.eN().eN;
  const auto params = TriggerParams{ex.config().T,         ex.delta(),          ex.target().alpha_hat,
                                    ex.penalized().alpha, ex.target().m_hat, ex.config().check_interval};
  const auto cfg = ex.config().sim_config(ex.config().N, kDeviationRuns);
  bool ok = true;
  std::string detail;
  for (const auto& dev : {DeviationPolicy::selfish(GridDrift::minus_gradient(ex.mfg().u0)),
                          DeviationPolicy::lazy(ex.lagrangian().grid())}) {
    const auto r = estimate_payoffs(cfg, ex.lagrangian(), ex.coupling(), params, dev, ex.penalized().m);
    const double j1 = r.players[0].mean, se = r.players[0].stderr_;
    const double bound = eN - kDeviationEpsilon - 3.0 * se;
    const bool pass = j1 >= bound && r.p_trigger >= kMinTriggerRate;
    ok = ok && pass;
    detail += (detail.empty() ? "" : "; ") + dev.name + ": J1 = " + f(j1, "%.5f") + " +- " + f(se, "%.1e") +
              " (>= " + f(bound, "%.5f") + "), p_trigger = " + f(r.p_trigger, "%.3f") + " (>= " +
              f(kMinTriggerRate) + ")";
  }
  return {ok, detail};
}

Line criterion9(Context& ctx) {
  auto& ex = ctx.experiment();
  const auto& t = ex.target();
  const double e = ex.target_payoff();
  const auto& rows = ex.sweep();
  bool decreasing = true, consistent = true;
  std::string detail;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    if (k && !(r.gap < rows[k - 1].gap)) decreasing = false;
    // Monte Carlo bias against the closed-form 1/(N - 1) law
    const double mc_bias = r.mc_eN - t.value;
    const double rel = std::abs(mc_bias - r.predicted_bias) / std::abs(r.predicted_bias);
    if (!(rel <= kBiasTolerance)) consistent = false;
    detail += (k ? "; " : "") + std::string("N = ") + std::to_string(r.N) + ": |e^N - e| = " + f(r.gap, "%.4e") +
              ", MC bias / predicted = " + f(mc_bias / r.predicted_bias, "%.4f");
  }
  (void)e;
  return {decreasing && consistent, detail + " (decreasing: " + (decreasing ? "yes" : "no") +
                                        ", within " + f(100 * kBiasTolerance, "%.0f") + "%: " +
                                        (consistent ? "yes" : "no") + ")"};
}

Line criterion10(Context& ctx) {
  auto cfg = ctx.experiment().config();
  cfg.horizon = kDeterminismHorizon;
  cfg.burn_in = kDeterminismBurnIn;
  cfg.n_runs = kDeterminismRuns;
  cfg.deviation_runs = kDeterminismRuns;
  const auto dir = std::filesystem::temp_directory_path() / "mflimits-acceptance-determinism";
  std::filesystem::remove_all(dir);
  cfg.output_dir = dir.string();
  const auto a = run_pipeline(cfg);
  const auto bad_a = verify_manifest(dir);
  const auto b = run_pipeline(cfg);
  const auto bad_b = verify_manifest(dir);
  int differing = 0;
  bool same_files = a.artifacts.size() == b.artifacts.size();
  for (std::size_t k = 0; same_files && k < a.artifacts.size(); ++k) {
    if (a.artifacts[k].file != b.artifacts[k].file) same_files = false;
    else if (a.artifacts[k].sha256 != b.artifacts[k].sha256) ++differing;
  }
  const bool ok = same_files && differing == 0 && bad_a.empty() && bad_b.empty() && a.status == "complete";
  return {ok, std::to_string(a.artifacts.size()) + " artifacts, " + std::to_string(differing) +
                  " differing hashes, manifest mismatches " + std::to_string(bad_a.size() + bad_b.size()) +
                  ", status " + a.status};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks on the canonical instance"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    const char* name;
    double limit;
    std::function<Line(Context&)> fn;
  };
  const Criterion all[] = {
      {"lambda0 cross-validation", kRuntime1, criterion1},
      {"closed-measure duality", kRuntime2, criterion2},
      {"payoff band", kRuntime3, criterion3},
      {"planner oracle equivalence", kRuntime4, criterion4},
      {"penalized convergence", kRuntime5, criterion5},
      {"target construction", kRuntime6, criterion6},
      {"equilibrium payoff", kRuntime7, criterion7},
      {"deviation resistance", kRuntime8, criterion8},
      {"convergence of e^N", kRuntime9, criterion9},
      {"determinism", 0.0, criterion10},
  };
  Context ctx;
  bool ok = true;
  for (int k = 1; k <= 10; ++k) {
    if (only && k != only) continue;
    const auto& c = all[k - 1];
    Clock clock;
    Line line;
    try {
      line = c.fn(ctx);
    } catch (const std::exception& e) {
      line = {false, std::string("threw: ") + e.what()};
    }
    const double secs = clock.seconds();
    const bool in_time = c.limit <= 0.0 || secs <= c.limit;
    const bool pass = line.pass && in_time;
    ok = ok && pass;
    std::printf("criterion %d (%s): %s  %s; runtime %.1f s%s\n", k, c.name, pass ? "PASS" : "FAIL",
                line.detail.c_str(), secs, c.limit > 0.0 ? (" (< " + f(c.limit, "%.0f") + " s)").c_str() : "");
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
