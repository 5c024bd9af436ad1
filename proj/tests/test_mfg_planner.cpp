#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mflimits/errors.hpp"
#include "mflimits/mfg.hpp"
#include "mflimits/planner.hpp"

using namespace mfl;

namespace {

constexpr double kPi = std::numbers::pi;

GridField cosine(const TorusGrid& g, double amp, int k = 1) {
  GridField f(g);
  for (int i = 0; i < g.size(); ++i) f[i] = amp * std::cos(2 * kPi * k * g.node(i));
  return f;
}

CouplingFunctional cos_coupling(const TorusGrid& g, double weight = 0.5) {
  TrigSeries k;
  k.cos_coeffs = {1.0};
  return CouplingFunctional::convolution(g, k, weight);
}

double max_diff(const GridDrift& a, const GridDrift& b) {
  double d = 0.0;
  for (int i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("MFG equilibrium, flat instance") {
  const TorusGrid g(32);
  const Lagrangian L{GridField(g)};
  const auto F = CouplingFunctional::linear(GridField(g));
  const auto m = solve_mfg(L, F);
  CHECK(std::abs(m.lambda0) < 1e-12);
  CHECK(l1_distance(m.mu0, ProbabilityGrid::uniform(g)) < 1e-12);
  for (int i = 0; i < g.size(); ++i) CHECK(std::abs(m.u0[i]) < 1e-12);
  CHECK(m.e_mfg == doctest::Approx(m.e_max).epsilon(1e-12));
}

TEST_CASE("MFG equilibrium, cosine instance") {
  const TorusGrid g(128);
  const Lagrangian L(cosine(g, 0.5));
  const auto F = cos_coupling(g);
  const auto m = solve_mfg(L, F);
  // the coupled constant is lambda0 - F(mu0)
  const auto r = mfg_system_residual(L, F, m.u0, m.lambda0 - m.F_mu0, m.mu0);
  CHECK(r.hjb <= 1e-8);
  CHECK(r.fp <= 1e-8);
  CHECK(m.hjb_residual == r.hjb);
  CHECK(m.e_mfg == doctest::Approx(-m.lambda0 + F.value(m.mu0)).epsilon(1e-14));
  CHECK(m.e_max_certified);
  CHECK(m.e_mfg <= m.e_max);
  // F = 1/2 |m_hat_1|^2 is maximised by a point mass: 1/2 K(0) = 1/2
  CHECK(m.e_max == doctest::Approx(-m.lambda0 + 0.5 + F.offset()).epsilon(1e-12));

  SUBCASE("uniqueness probe") {
    const auto p = mfg_uniqueness_probe(L, F, 4, 11);
    CHECK(p.starts == 4);
    CHECK(p.max_lambda_spread <= 1e-8);
    CHECK(p.max_w1_spread <= 1e-8);
  }
}

TEST_CASE("planner with constant F is pure ergodic control") {
  const TorusGrid g(64);
  const Lagrangian L(cosine(g, 0.5));
  GridField c(g);
  for (int i = 0; i < g.size(); ++i) c[i] = 0.3;
  const auto F = CouplingFunctional::linear(c, 0.0);
  const auto m = solve_mfg(L, F);
  const auto p = solve_planner(L, F);
  CHECK(p.value() == doctest::Approx(-m.lambda0 + 0.3).epsilon(1e-10));
  CHECK(l1_distance(p.m, m.mu0) <= 1e-8);
}

TEST_CASE("planner with linear F matches the eigen oracle for l + g") {
  const TorusGrid g(64);
  const Lagrangian L(cosine(g, 0.5));
  GridField lin = cosine(g, 0.4, 2);
  for (int i = 0; i < g.size(); ++i) lin[i] += 0.7 * std::sin(2 * kPi * g.node(i));
  const auto F = CouplingFunctional::linear(lin);
  const auto p = solve_planner(L, F);
  // the decoupled control problem with state cost l + c0 + g
  const auto eig = principal_eigen_oracle(L, &lin);
  CHECK(std::abs(p.value() - (-eig.lambda + F.offset())) <= 1e-8);
  const auto o = primal_oracle(L, F);
  REQUIRE(o.applicable);
  CHECK(std::abs(o.value - p.value()) <= 1e-4);
}

TEST_CASE("planner on the cosine instance") {
  const TorusGrid g(128);
  const Lagrangian L(cosine(g, 0.5));
  const auto F = cos_coupling(g);
  const auto m = solve_mfg(L, F);
  const auto p = solve_planner(L, F);

  CHECK(p.hjb_residual <= 1e-7);
  CHECK(p.fp_residual <= 1e-7);
  CHECK(p.value() >= -m.lambda0);
  CHECK(p.value() < m.e_mfg);
  CHECK(p.value() == doctest::Approx(p.kinetic + p.F_value).epsilon(1e-14));
  // the planner drift is optimal for its own measure
  CHECK(max_diff(optimal_stationary_drift(p.m, L).alpha, p.alpha) <= 1e-6);
  // the planner beats the MFG profile and the uniform measure
  CHECK(p.value() <= m.e_mfg);
  const auto uni = ProbabilityGrid::uniform(g);
  CHECK(p.value() <= optimal_stationary_drift(uni, L).cost + F.value(uni));

  int converged = 0;
  for (const auto& fp : p.fixed_points) converged += fp.converged ? 1 : 0;
  CHECK(converged >= 1);

  const auto o = primal_oracle(L, F);
  REQUIRE(o.applicable);
  CHECK(std::abs(o.value - p.value()) <= 1e-4);
}

TEST_CASE("primal oracle basics") {
  SUBCASE("flat potential, constant F") {
    const TorusGrid g(32);
    const Lagrangian L(GridField(g), 0.0);
    GridField c(g);
    for (int i = 0; i < g.size(); ++i) c[i] = 0.25;
    const auto o = primal_oracle(L, CouplingFunctional::linear(c, 0.0));
    REQUIRE(o.applicable);
    CHECK(o.value == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(l1_distance(o.m, ProbabilityGrid::uniform(g)) <= 1e-6);
  }
  SUBCASE("shifting l shifts the value") {
    const TorusGrid g(32);
    const auto F = cos_coupling(g);
    GridField l = cosine(g, 0.5);
    const auto a = primal_oracle(Lagrangian(l, 0.5), F);
    const auto b = primal_oracle(Lagrangian(l, 0.8), F);
    CHECK(b.value - a.value == doctest::Approx(0.3).epsilon(1e-7));
  }
  SUBCASE("nonconvex F is flagged") {
    const TorusGrid g(32);
    const auto o = primal_oracle(Lagrangian(cosine(g, 0.5)), cos_coupling(g, -0.5));
    CHECK_FALSE(o.applicable);
    CHECK_FALSE(o.note.empty());
  }
}

TEST_CASE("penalised problems") {
  const TorusGrid g(64);
  const Lagrangian L(cosine(g, 0.5));
  const auto F = cos_coupling(g);
  const auto m = solve_mfg(L, F);
  const auto ladder = penalized_ladder(L, F, 8.0);
  REQUIRE(ladder.size() == 4);
  for (std::size_t k = 0; k < ladder.size(); ++k) {
    const auto& p = ladder[k];
    CHECK(p.penalization() == doctest::Approx(std::pow(2.0, static_cast<double>(k))));
    CHECK(p.kinetic >= -m.lambda0 - 1e-12);
    CHECK(p.hjb_residual <= 1e-7);
    CHECK(p.fp_residual <= 1e-7);
    if (k) CHECK(p.F_value >= ladder[k - 1].F_value - 1e-6);
    // minimality of the penalised objective against the decoupled profile
    CHECK(p.objective <= -m.lambda0 - p.penalization() * F.value(m.mu0) + 1e-9);
    CHECK(max_diff(optimal_stationary_drift(p.m, L).alpha, p.alpha) <= 1e-6);
  }
  const auto rows = ladder_rows(ladder);
  const auto csv = ladder_csv(rows);
  CHECK(csv.rfind("n,F_value,kinetic,objective,max_drift\n", 0) == 0);

  SUBCASE("vanishing penalisation tends to the decoupled solution") {
    const auto p = solve_penalized(1e-6, L, F);
    CHECK(l1_distance(p.m, m.mu0) <= 1e-5);
  }
  SUBCASE("nonpositive n is rejected") { CHECK_THROWS_AS(solve_penalized(0.0, L, F), ConfigError); }
}
