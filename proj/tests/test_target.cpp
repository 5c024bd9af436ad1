#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mflimits/errors.hpp"
#include "mflimits/mfg.hpp"
#include "mflimits/target.hpp"

using namespace mfl;

namespace {

constexpr double kPi = std::numbers::pi;

GridField cosine(const TorusGrid& g, double amp) {
  GridField f(g);
  for (int i = 0; i < g.size(); ++i) f[i] = amp * std::cos(2 * kPi * g.node(i));
  return f;
}

CouplingFunctional cos_coupling(const TorusGrid& g) {
  TrigSeries k;
  k.cos_coeffs = {1.0};
  return CouplingFunctional::convolution(g, k, 0.5);
}

double max_diff(const GridDrift& a, const GridDrift& b) {
  double d = 0.0;
  for (int i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Shared small instance: planner and one penalised solution on 64 cells.
struct Instance {
  TorusGrid g{64};
  Lagrangian L{cosine(g, 0.5)};
  CouplingFunctional F = cos_coupling(g);
  MfgEquilibrium mfg = solve_mfg(L, F);
  PlannerSolution planner = solve_planner(L, F);
  PenalizedSolution pen = solve_penalized(8.0, L, F);
};

const Instance& instance() {
  static const Instance inst;
  return inst;
}

// E[F(empirical of M cell-centre draws)] for F = 1/2 double integral of
// cos(2 pi (x - y)) + offset, sampled by brute force.
double brute_force_EF(const ProbabilityGrid& m, double offset, int M, int draws, std::uint64_t seed,
                      double* stderr_out) {
  const TorusGrid& g = m.grid();
  std::vector<double> w(g.size());
  for (int i = 0; i < g.size(); ++i) w[i] = m.mass(i);
  std::discrete_distribution<int> cell(w.begin(), w.end());
  std::mt19937_64 rng(seed);
  double s = 0.0, s2 = 0.0;
  std::vector<double> x(M);
  for (int d = 0; d < draws; ++d) {
    for (auto& xi : x) xi = g.node(cell(rng));
    double c = 0.0, sn = 0.0;
    for (double xi : x) {
      c += std::cos(2 * kPi * xi);
      sn += std::sin(2 * kPi * xi);
    }
    const double v = offset + 0.5 * (c * c + sn * sn) / (double(M) * M);
    s += v;
    s2 += v * v;
  }
  const double mean = s / draws;
  *stderr_out = std::sqrt(std::max(0.0, s2 / draws - mean * mean) / (draws - 1));
  return mean;
}

}  // namespace

TEST_CASE("homotopy endpoints") {
  const auto& I = instance();
  const auto a = homotopy_at(I.L, I.F, I.planner, I.pen, 0.0);
  const auto b = homotopy_at(I.L, I.F, I.planner, I.pen, 1.0);
  CHECK(std::abs(a.value() - I.planner.value()) <= 1e-6);
  CHECK(std::abs(b.value() - I.pen.value()) <= 1e-6);
  CHECK(I.pen.value() > I.planner.value());
  CHECK(b.value() <= I.mfg.e_max + 1e-12);
}

TEST_CASE("homotopy curve is continuous and positive") {
  const auto& I = instance();
  const auto curve = homotopy_curve(I.L, I.F, I.planner, I.pen, 41);
  REQUIRE(curve.size() == 41);
  double jump = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) jump = std::max(jump, std::abs(curve[k].value - curve[k - 1].value));
  const double range = std::abs(curve.back().value - curve.front().value);
  CHECK(jump <= 0.25 * range);
  for (const auto& p : curve) CHECK(p.min_density > 0.0);
  CHECK(curve_csv(curve).rfind("lambda,value,kinetic,F_value,max_drift,min_density\n", 0) == 0);
}

TEST_CASE("every homotopy drift is optimal for its own measure") {
  const auto& I = instance();
  for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto st = homotopy_at(I.L, I.F, I.planner, I.pen, s);
    CHECK(max_diff(optimal_stationary_drift(st.m, I.L).alpha, st.alpha) <= 1e-6);
    CHECK(st.m.min() > 0.0);
  }
}

TEST_CASE("build_target") {
  const auto& I = instance();

  SUBCASE("e = e_min returns the planner pair") {
    const auto t = build_target(I.planner.value(), I.L, I.F, I.planner, I.pen);
    CHECK(t.lambda_star == 0.0);
    CHECK(l1_distance(t.m_hat, I.planner.m) <= 1e-8);
    CHECK(t.bisections == 0);
  }
  SUBCASE("midpoint") {
    const double e = 0.5 * (I.planner.value() + I.pen.value());
    const auto t = build_target(e, I.L, I.F, I.planner, I.pen);
    CHECK(std::abs(t.value - e) <= 1e-5);
    CHECK(t.lambda_star > 0.0);
    CHECK(t.lambda_star < 1.0);
    CHECK(t.value == doctest::Approx(t.kinetic + t.F_value).epsilon(1e-14));
    CHECK(max_diff(optimal_stationary_drift(t.m_hat, I.L).alpha, t.alpha_hat) <= 1e-6);
    // recompute the payoff from the pair alone
    CHECK(std::abs(stationary_cost(t.m_hat, t.alpha_hat, I.L) + I.F.value(t.m_hat) - e) <= 1e-5);
    CHECK(t.penalization == doctest::Approx(8.0));
    CHECK(t.trace.size() == static_cast<std::size_t>(t.bisections));
  }
  SUBCASE("out of range targets") {
    CHECK_THROWS_AS(build_target(I.planner.value() - 0.01, I.L, I.F, I.planner, I.pen), ConfigError);
    CHECK_THROWS_AS(build_target(I.pen.value() + 0.01, I.L, I.F, I.planner, I.pen), ConfigError);
  }
}

TEST_CASE("expected F of an empirical measure") {
  const auto& I = instance();
  const double e = 0.5 * (I.planner.value() + I.pen.value());
  const auto t = build_target(e, I.L, I.F, I.planner, I.pen);

  SUBCASE("closed form against brute force sampling") {
    for (int M : {1, 4, 32}) {
      double se = 0.0;
      const double bf = brute_force_EF(t.m_hat, I.F.offset(), M, 40000, 17 + M, &se);
      CHECK(std::abs(expected_empirical_F(I.F, t.m_hat, M) - bf) <= 3.0 * se + 1e-12);
    }
  }
  SUBCASE("library Monte Carlo agrees with the closed form") {
    const auto mc = monte_carlo_empirical_F(I.F, t.m_hat, 32, 20000, 5);
    CHECK(std::abs(mc.mean - expected_empirical_F(I.F, t.m_hat, 32)) <= 3.0 * mc.stderr_);
  }
  SUBCASE("one draw sees K(0)") {
    CHECK(expected_empirical_F(I.F, t.m_hat, 1) == doctest::Approx(0.5 + I.F.offset()).epsilon(1e-12));
  }
  SUBCASE("bias decays like 1/(N - 1)") {
    const double b8 = compute_eN(9, t, I.F, EnMethod::ClosedForm).eN - t.value;
    const double b16 = compute_eN(17, t, I.F, EnMethod::ClosedForm).eN - t.value;
    CHECK(b8 > 0.0);
    CHECK(b8 / b16 == doctest::Approx(2.0).epsilon(1e-9));
  }
  SUBCASE("e^N, closed form vs Monte Carlo at N = 33") {
    const auto cf = compute_eN(33, t, I.F, EnMethod::ClosedForm);
    const auto mc = compute_eN(33, t, I.F, EnMethod::MonteCarlo, 20000, 3);
    CHECK(cf.stderr_ == 0.0);
    CHECK(std::abs(cf.eN - mc.eN) <= 3.0 * mc.stderr_);
    CHECK(cf.eN >= I.planner.value());
    CHECK(cf.kinetic == doctest::Approx(t.kinetic).epsilon(1e-12));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(expected_empirical_F(I.F, t.m_hat, 0), ConfigError);
    CHECK_THROWS_AS(compute_eN(1, t, I.F), ConfigError);
  }
}

TEST_CASE("linear coupling: e^N equals the target value") {
  const TorusGrid g(64);
  const Lagrangian L(cosine(g, 0.5));
  const auto F = CouplingFunctional::linear(cosine(g, 0.3));
  const auto planner = solve_planner(L, F);
  // F linear: the penalised direction is -g, pushing mass to the peak of g
  const auto pen = solve_penalized(4.0, L, F);
  const double e = 0.5 * (planner.value() + pen.value());
  const auto t = build_target(e, L, F, planner, pen);
  for (int N : {2, 5, 33}) CHECK(compute_eN(N, t, F).eN == doctest::Approx(t.value).epsilon(1e-12));
}

TEST_CASE("select_penalization") {
  const auto& I = instance();
  const double e = 0.5 * (I.planner.value() + I.mfg.e_max);

  const auto sel = select_penalization(e, 32, I.mfg.lambda0, I.mfg.e_max, I.L, I.F, I.planner);
  REQUIRE_FALSE(sel.rows.empty());
  const auto& last = sel.rows.back();
  CHECK(last.satisfied);
  CHECK(last.n == doctest::Approx(sel.penalized.penalization()));
  for (std::size_t k = 0; k + 1 < sel.rows.size(); ++k) CHECK_FALSE(sel.rows[k].satisfied);
  CHECK(std::abs(sel.target.value - e) <= 1e-5);
  CHECK(sel.eN.eN <= last.bound);
  // the bound recomputed from its definition
  CHECK(last.bound == doctest::Approx(-I.mfg.lambda0 + expected_empirical_F(I.F, sel.penalized.m, 31) - 0.01)
                          .epsilon(1e-12));

  SUBCASE("targets at or above e_max are rejected") {
    CHECK_THROWS_AS(select_penalization(I.mfg.e_max, 32, I.mfg.lambda0, I.mfg.e_max, I.L, I.F, I.planner),
                    ConfigError);
  }
}

TEST_CASE("calibrate_delta") {
  const auto& I = instance();
  const double e = 0.5 * (I.planner.value() + I.pen.value());
  const auto t = build_target(e, I.L, I.F, I.planner, I.pen);

  SUBCASE("a huge epsilon lets the cap through") {
    const auto cal = calibrate_delta(100.0, t, I.L);
    CHECK(cal.delta == doctest::Approx(0.1));
  }
  SUBCASE("the returned delta is admissible on its samples") {
    CalibrationOptions o;
    o.samples = 80;
    o.holdout = 20;
    const double eps = 0.05;
    const auto cal = calibrate_delta(eps, t, I.L, o);
    CHECK(cal.delta > 0.0);
    CHECK(cal.delta <= 0.1);
    CHECK(cal.base_cost == doctest::Approx(optimal_stationary_drift(t.m_hat, I.L).cost).epsilon(1e-12));
    for (const auto& s : cal.samples) {
      if (s.w1 <= cal.delta) CHECK(s.cost >= cal.base_cost - eps / 3.0);
    }
    CHECK(cal.samples.size() == 80);
    CHECK(cal.holdout.size() == 20);
    CHECK(cal.holdout_violations <= cal.holdout_checked);
    // the unperturbed measure is trivially admissible
    CHECK(optimal_stationary_drift(t.m_hat, I.L).cost >= cal.base_cost - eps / 3.0);
  }
  SUBCASE("deterministic in the seed") {
    CalibrationOptions o;
    o.samples = 30;
    o.holdout = 5;
    CHECK(calibrate_delta(0.05, t, I.L, o).delta == calibrate_delta(0.05, t, I.L, o).delta);
  }
  SUBCASE("epsilon must be positive") { CHECK_THROWS_AS(calibrate_delta(0.0, t, I.L), ConfigError); }
}
