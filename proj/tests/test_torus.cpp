#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mflimits/coupling.hpp"
#include "mflimits/errors.hpp"
#include "mflimits/lagrangian.hpp"
#include "mflimits/serialize.hpp"
#include "mflimits/torus.hpp"

using namespace mfl;

namespace {

constexpr double kPi = std::numbers::pi;

ProbabilityGrid random_measure(const TorusGrid& g, std::mt19937_64& rng, double floor = 0.0) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> w(g.size());
  for (double& v : w) v = floor + U(rng);
  return ProbabilityGrid::normalized(g, std::move(w));
}

TrigSeries cosine1() {
  TrigSeries k;
  k.cos_coeffs = {1.0};
  return k;
}

// weight * sum_ij K(x_i - x_j) m_i m_j h^2, straight from the definition.
double direct_convolution(const ProbabilityGrid& m, double weight, const TrigSeries& K) {
  const auto& g = m.grid();
  double s = 0.0;
  for (int i = 0; i < g.size(); ++i)
    for (int j = 0; j < g.size(); ++j) s += K(g.node(i) - g.node(j)) * m.mass(i) * m.mass(j);
  return weight * s;
}

}  // namespace

TEST_CASE("project_to_torus") {
  CHECK(project_to_torus(0.25) == 0.25);
  CHECK(project_to_torus(-0.25) == 0.75);
  CHECK(project_to_torus(3.5) == 0.5);
  CHECK(project_to_torus(-1e-18) < 1.0);
}

TEST_CASE("grid needs at least eight cells") {
  CHECK_THROWS_AS(TorusGrid(7), ConfigError);
  const TorusGrid g(8);
  CHECK(g.wrap(-1) == 7);
  CHECK(g.wrap(8) == 0);
  CHECK(g.wrap(-17) == 7);
}

TEST_CASE("nearest cell binning") {
  const TorusGrid g(8);
  CHECK(g.nearest_cell(0.5) == 3);  // midpoint between cells 3 and 4 goes low
  CHECK(g.nearest_cell(0.0) == 0);
  CHECK(g.nearest_cell(0.999) == 7);
  CHECK(g.nearest_cell(0.0625) == 0);
  CHECK(g.nearest_cell(0.07) == 0);
  CHECK(g.nearest_cell(0.13) == 1);
}

TEST_CASE("probability grid validation") {
  const TorusGrid g(8);
  CHECK_THROWS_AS(ProbabilityGrid(g, std::vector<double>(8, 0.5)), InvariantError);
  std::vector<double> neg(8, 1.0);
  neg[0] = -0.1;
  neg[1] = 1.1;
  CHECK_THROWS_AS(ProbabilityGrid(g, neg), InvariantError);
  CHECK_NOTHROW(ProbabilityGrid::uniform(g));
}

TEST_CASE("empirical measure") {
  const TorusGrid g(8);
  const std::vector<double> one = {0.5};
  const auto m1 = empirical_measure(g, one);
  CHECK(m1.mass(3) == doctest::Approx(1.0));
  const std::vector<double> same = {0.3, 0.31, 0.32, 0.33};
  const auto m2 = empirical_measure(g, same);
  CHECK(m2.mass(g.nearest_cell(0.3)) == doctest::Approx(1.0));
  CHECK_THROWS(empirical_measure(g, std::span<const double>{}));
}

TEST_CASE("empirical measure of iid samples approaches the law") {
  const TorusGrid g(64);
  std::vector<double> dens(64);
  for (int i = 0; i < 64; ++i) dens[i] = 1.0 + 0.6 * std::cos(2 * kPi * g.node(i));
  const auto target = ProbabilityGrid::normalized(g, dens);
  std::discrete_distribution<int> pick(dens.begin(), dens.end());
  std::mt19937_64 rng(11);
  auto w1_at = [&](int N) {
    double acc = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> pts(N);
      for (double& p : pts) p = g.node(pick(rng));
      acc += wasserstein1_circle(empirical_measure(g, pts), target);
    }
    return acc / 20;
  };
  const double a = w1_at(100);
  const double b = w1_at(10000);
  CHECK(b < a);
  // N^{-1/2} scaling: ratio about 10 for a 100x sample size
  CHECK(a / b > 5.0);
  CHECK(a / b < 20.0);
}

TEST_CASE("wasserstein on the circle") {
  const TorusGrid g(64);
  const auto at0 = ProbabilityGrid::point_mass(g, g.nearest_cell(0.0 + 0.5 / 64));
  const auto at_half = ProbabilityGrid::point_mass(g, g.nearest_cell(0.5 + 0.5 / 64));
  CHECK(wasserstein1_circle(at0, at0) == 0.0);
  CHECK(wasserstein1_circle(at0, at_half) == doctest::Approx(0.5).epsilon(1e-12));

  const TorusGrid g10(10);
  const auto a = ProbabilityGrid::point_mass(g10, 0);  // x = 0.05
  const auto b = ProbabilityGrid::point_mass(g10, 8);  // x = 0.85
  CHECK(wasserstein1_circle(a, b) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(wasserstein1_circle(a, at0), ConfigError);
}

TEST_CASE("wasserstein is a metric on random triples") {
  const TorusGrid g(48);
  std::mt19937_64 rng(3);
  std::vector<double> scratch;
  for (int t = 0; t < 200; ++t) {
    const auto x = random_measure(g, rng);
    const auto y = random_measure(g, rng);
    const auto z = random_measure(g, rng);
    const double xy = wasserstein1_circle(x, y);
    const double yx = wasserstein1_circle(y, x);
    CHECK(xy >= 0.0);
    CHECK(std::abs(xy - yx) <= 1e-12);
    CHECK(wasserstein1_circle(x, x) <= 1e-12);
    CHECK(xy <= wasserstein1_circle(x, z) + wasserstein1_circle(z, y) + 1e-12);
    CHECK(std::abs(wasserstein1_circle_weights(x.density(), y, scratch) - xy) <= 1e-12);
  }
}

TEST_CASE("wasserstein agrees with a brute-force transport over cuts") {
  // On the circle the optimal plan cuts the circle at some point; try all cuts
  // and solve each line problem by the CDF formula.
  const TorusGrid g(16);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_measure(g, rng);
    const auto b = random_measure(g, rng);
    double best = 1e300;
    for (int cut = 0; cut < g.size(); ++cut) {
      double ca = 0.0, cb = 0.0, cost = 0.0;
      for (int k = 0; k < g.size(); ++k) {
        const int i = g.wrap(cut + k);
        ca += a.mass(i);
        cb += b.mass(i);
        cost += std::abs(ca - cb) * g.h();
      }
      best = std::min(best, cost);
    }
    CHECK(wasserstein1_circle(a, b) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("linear coupling") {
  const TorusGrid g(32);
  TrigSeries gs;
  gs.constant = 1.0;
  gs.cos_coeffs = {1.0};
  const auto F = CouplingFunctional::linear(gs.sample(g), 0.0);
  CHECK(F.value(ProbabilityGrid::uniform(g)) == doctest::Approx(1.0).epsilon(1e-14));
  std::mt19937_64 rng(1);
  const auto m = random_measure(g, rng);
  const auto d = F.flat_derivative(m);
  for (int i = 0; i < g.size(); ++i) CHECK(d[i] == doctest::Approx(1.0 + std::cos(2 * kPi * g.node(i))));
  const auto mx = max_F(F);
  CHECK(mx.certified);
  CHECK(mx.value == doctest::Approx(1.0 + std::cos(2 * kPi * g.node(0))));

  const auto c = CouplingFunctional::linear(GridField(g, std::vector<double>(32, 0.7)), 0.0);
  CHECK(max_F(c).value == doctest::Approx(0.7));
  CHECK(c.is_constant());
}

TEST_CASE("cosine convolution coupling") {
  const TorusGrid g(128);
  const auto F = CouplingFunctional::convolution(g, cosine1(), 0.5, 0.0);
  CHECK(std::abs(F.value(ProbabilityGrid::uniform(g))) < 1e-14);

  // narrow bump, compared against the direct double sum
  std::vector<double> bump(128, 0.0);
  bump[10] = 1.0;
  bump[11] = 0.5;
  bump[9] = 0.5;
  const auto m = ProbabilityGrid::normalized(g, bump);
  CHECK(F.value(m) == doctest::Approx(direct_convolution(m, 0.5, cosine1())).epsilon(1e-12));
  CHECK(F.value(m) == doctest::Approx(0.5).epsilon(1e-3));

  // uniform measure: flat derivative 2 * w * (K * 1) = 0 for the cosine
  const auto d = F.flat_derivative(ProbabilityGrid::uniform(g));
  for (int i = 0; i < g.size(); ++i) CHECK(std::abs(d[i]) < 1e-12);

  const auto mx = max_F(F);
  CHECK(mx.certified);
  CHECK(mx.value == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("default offsets make F nonnegative") {
  const TorusGrid g(64);
  TrigSeries k;
  k.cos_coeffs = {-1.0, 0.4};
  const auto F = CouplingFunctional::convolution(g, k, 0.5);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) CHECK(F.value(random_measure(g, rng)) >= -1e-13);
  for (int i = 0; i < g.size(); ++i) CHECK(F.value(ProbabilityGrid::point_mass(g, i)) >= -1e-13);
  CHECK(max_F(F).certified == false);
}

TEST_CASE("flat derivative matches finite differences") {
  const TorusGrid g(64);
  std::mt19937_64 rng(21);
  TrigSeries k;
  k.cos_coeffs = {1.0, -0.3};
  k.constant = 0.2;
  TrigSeries gl;
  gl.sin_coeffs = {0.5};
  const std::vector<CouplingFunctional> variants = {
      CouplingFunctional::linear(gl.sample(g)),
      CouplingFunctional::convolution(g, k, 0.5),
      CouplingFunctional::sum({CouplingFunctional::linear(gl.sample(g)), CouplingFunctional::convolution(g, k, 0.5)}),
  };
  for (const auto& F : variants) {
    const auto m = random_measure(g, rng, 0.2);
    const auto d = F.flat_derivative(m);
    for (int y : {0, 17, 40}) {
      const auto bump = ProbabilityGrid::point_mass(g, y);
      const double t = 1e-6;
      const double fd = (F.value(m.mix(bump, t)) - F.value(m)) / t;
      // d/dt F(m + t(delta_y - m)) = dF/dm(y) - <dF/dm, m>
      double avg = 0.0;
      for (int i = 0; i < g.size(); ++i) avg += d[i] * m.mass(i);
      CHECK(fd == doctest::Approx(d[y] - avg).epsilon(1e-5));
    }
  }
}

TEST_CASE("C1 identity along segments") {
  const TorusGrid g(64);
  std::mt19937_64 rng(8);
  TrigSeries k;
  k.cos_coeffs = {1.0, 0.5, -0.25};
  TrigSeries gl;
  gl.cos_coeffs = {0.0, 1.0};
  const std::vector<CouplingFunctional> variants = {
      CouplingFunctional::linear(gl.sample(g)),
      CouplingFunctional::convolution(g, k, 0.5),
      CouplingFunctional::sum({CouplingFunctional::linear(gl.sample(g)), CouplingFunctional::convolution(g, k, 0.5)}),
  };
  for (const auto& F : variants) {
    for (int t = 0; t < 10; ++t) {
      const auto m = random_measure(g, rng);
      const auto mp = random_measure(g, rng);
      // Gauss-Legendre, 5 nodes: exact for the quadratic integrands here
      const double xs[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                            0.9061798459386640};
      const double ws[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                            0.2369268850561891};
      double integral = 0.0;
      for (int q = 0; q < 5; ++q) {
        const double s = 0.5 * (xs[q] + 1.0);
        const auto ms = m.mix(mp, s);
        const auto d = F.flat_derivative(ms);
        double inner = 0.0;
        for (int i = 0; i < g.size(); ++i) inner += d[i] * (mp.mass(i) - m.mass(i));
        integral += 0.5 * ws[q] * inner;
      }
      CHECK(std::abs(F.value(mp) - F.value(m) - integral) <= 1e-8);
    }
  }
}

TEST_CASE("point cloud coupling matches the grid value on cell centres") {
  const TorusGrid g(32);
  TrigSeries k;
  k.cos_coeffs = {1.0, 0.3};
  TrigSeries gl;
  gl.cos_coeffs = {0.5};
  const auto F = CouplingFunctional::sum(
      {CouplingFunctional::linear(gl.sample(g)), CouplingFunctional::convolution(g, k, 0.5)});
  const PointCloudCoupling pc(F);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cell(0, 31);
  std::vector<double> pts(20);
  for (double& p : pts) p = g.node(cell(rng));
  CHECK(pc.value(pts) == doctest::Approx(F.value(empirical_measure(g, pts))).epsilon(1e-12));

  std::vector<double> loo(pts.size());
  std::vector<std::complex<double>> ws;
  pc.leave_one_out(pts, loo, ws);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> others;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (j != i) others.push_back(pts[j]);
    CHECK(loo[i] == doctest::Approx(F.value(empirical_measure(g, others))).epsilon(1e-12));
  }
}

TEST_CASE("Lagrangian and Legendre consistency") {
  const TorusGrid g(32);
  TrigSeries l;
  l.cos_coeffs = {0.5};
  const Lagrangian L(l.sample(g));
  CHECK(L.offset() == doctest::Approx(-l.sample(g).min()));
  for (int i = 0; i < g.size(); ++i) CHECK(L.running_cost(0.0, i) >= 0.0);

  const double a_max = 8.0;
  for (double p : {-3.0, -0.5, 0.0, 1.2, 4.0}) {
    for (int i : {0, 9, 25}) {
      double best = -1e300, arg = 0.0;
      for (int k = 0; k <= 160000; ++k) {
        const double a = -a_max + 2 * a_max * k / 160000.0;
        const double v = -a * p - L.running_cost(a, i);
        if (v > best) {
          best = v;
          arg = a;
        }
      }
      CHECK(arg == doctest::Approx(-p).epsilon(1e-4));
      CHECK(best == doctest::Approx(L.hamiltonian(p, i)).epsilon(1e-8));
      CHECK(Lagrangian::hamiltonian_p(p) == p);
    }
  }
}

TEST_CASE("kinetic face weight reduces to the density on flat faces") {
  CHECK(kinetic_face_weight(2.0, 2.0) == doctest::Approx(2.0));
  CHECK(kinetic_face_weight(1.0, 1.0 + 1e-9) == doctest::Approx(1.0 + 0.5e-9));
  const double a = 1.0, b = 4.0;
  const double lm = (2.0 - 1.0) / std::log(2.0);
  CHECK(kinetic_face_weight(a, b) == doctest::Approx(lm * lm).epsilon(1e-14));
}

TEST_CASE("CSV and JSON round trips are bit exact") {
  const TorusGrid g(16);
  std::mt19937_64 rng(4);
  const auto m = random_measure(g, rng);
  const auto m2 = probability_grid_from_csv(to_csv(m));
  const auto m3 = probability_grid_from_json(nlohmann::json::parse(to_json(m).dump()));
  for (int i = 0; i < g.size(); ++i) {
    CHECK(m2[i] == m[i]);
    CHECK(m3[i] == m[i]);
  }
  GridField f(g);
  for (int i = 0; i < g.size(); ++i) f[i] = std::sin(1.0 + i) * 1e-3 / 7.0;
  const auto f2 = grid_field_from_csv(to_csv(f));
  const auto f3 = grid_field_from_json(nlohmann::json::parse(to_json(f).dump()));
  for (int i = 0; i < g.size(); ++i) {
    CHECK(f2[i] == f[i]);
    CHECK(f3[i] == f[i]);
  }
  CHECK_THROWS_AS(grid_field_from_csv("x,y\n1,2\n"), ConfigError);
}
