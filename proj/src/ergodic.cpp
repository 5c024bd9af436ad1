#include "mflimits/ergodic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <boost/math/tools/toms748_solve.hpp>

#include "mflimits/errors.hpp"

namespace mfl {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// B(z) = z / (e^z - 1)
double bernoulli(double z) noexcept {
  if (std::abs(z) < 1e-8) return 1.0 - 0.5 * z;
  const double d = std::expm1(z);
  if (std::isinf(d)) return 0.0;
  return z / d;
}

GridField source_field(const Lagrangian& L, const GridField& f) {
  if (!(f.grid() == L.grid())) throw ConfigError("HJB: source term and Lagrangian use different grids");
  GridField s(L.grid());
  for (int i = 0; i < s.size(); ++i) s[i] = L.state_cost(i) + f[i];
  return s;
}

void residual_into(const GridField& s, std::span<const double> u, double lambda, std::vector<double>& r) {
  const TorusGrid& g = s.grid();
  const int n = g.size();
  const double c = 0.5 / (g.h() * g.h());
  r.resize(n);
  for (int i = 0; i < n; ++i) {
    const double ui = u[i];
    const double ep = std::exp(ui - u[g.wrap(i + 1)]);
    const double em = std::exp(ui - u[g.wrap(i - 1)]);
    r[i] = c * (ep + em - 2.0) - s[i] - lambda;
  }
}

double sup_of(const std::vector<double>& r) {
  double m = 0.0;
  for (double v : r) {
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    m = std::max(m, std::abs(v));
  }
  return m;
}

void center(std::vector<double>& u, double h) {
  const double mean = std::accumulate(u.begin(), u.end(), 0.0) * h;
  for (double& v : u) v -= mean;
}

struct NewtonOutcome {
  bool converged = false;
  int iterations = 0;
};

NewtonOutcome newton(const GridField& s, std::vector<double>& u, double& lambda, const HjbOptions& opts,
                     std::vector<double>& history, int max_iter) {
  const TorusGrid& g = s.grid();
  const int n = g.size();
  const double h = g.h();
  const double c = 0.5 / (h * h);

  std::vector<double> r;
  std::vector<double> trial(n);
  std::vector<double> rt;
  residual_into(s, u, lambda, r);
  double res = sup_of(r);

  Eigen::SparseLU<SpMat> lu;
  std::vector<Triplet> trips;
  trips.reserve(5 * n);
  Eigen::VectorXd rhs(n + 1);

  for (int it = 1; it <= max_iter; ++it) {
    if (res <= opts.tolerance) return {true, it - 1};

    trips.clear();
    for (int i = 0; i < n; ++i) {
      const int ip = g.wrap(i + 1);
      const int im = g.wrap(i - 1);
      const double ep = c * std::exp(u[i] - u[ip]);
      const double em = c * std::exp(u[i] - u[im]);
      trips.emplace_back(i, i, ep + em);
      trips.emplace_back(i, ip, -ep);
      trips.emplace_back(i, im, -em);
      trips.emplace_back(i, n, -1.0);
      trips.emplace_back(n, i, h);
      rhs[i] = -r[i];
    }
    rhs[n] = -std::accumulate(u.begin(), u.end(), 0.0) * h;
    SpMat J(n + 1, n + 1);
    J.setFromTriplets(trips.begin(), trips.end());
    lu.compute(J);
    if (lu.info() != Eigen::Success) return {false, it};
    const Eigen::VectorXd d = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !d.allFinite()) return {false, it};

    // Backtracking on the sup-norm residual.
    double t = 1.0;
    bool accepted = false;
    double res_t = res;
    for (int k = 0; k < 40; ++k, t *= 0.5) {
      for (int i = 0; i < n; ++i) trial[i] = u[i] + t * d[i];
      const double lam_t = lambda + t * d[n];
      residual_into(s, trial, lam_t, rt);
      res_t = sup_of(rt);
      if (res_t < (1.0 - 1e-4 * t) * res) {
        u.swap(trial);
        lambda = lam_t;
        r.swap(rt);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // At roundoff level the residual can no longer decrease.
      return {res <= opts.tolerance, it};
    }
    res = res_t;
    history.push_back(res);
    if (opts.observer) opts.observer({it, res, lambda, "newton"});
  }
  return {res <= opts.tolerance, max_iter};
}

// Implicit steps of w_t = (1/2 Δ_h - s) w, w = e^{-u}, renormalised.
bool evolve(const GridField& s, std::vector<double>& u, double& lambda, const HjbOptions& opts,
            std::vector<double>& history, int& steps_taken) {
  const TorusGrid& g = s.grid();
  const int n = g.size();
  const double h = g.h();
  const double c = 0.5 / (h * h);
  const double dt = opts.evolution_dt;
  const double shift = std::max(0.0, -s.min());

  std::vector<Triplet> trips;
  trips.reserve(3 * n);
  for (int i = 0; i < n; ++i) {
    trips.emplace_back(i, i, 1.0 + dt * (2.0 * c + s[i] + shift));
    trips.emplace_back(i, g.wrap(i + 1), -dt * c);
    trips.emplace_back(i, g.wrap(i - 1), -dt * c);
  }
  SpMat M(n, n);
  M.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<SpMat> solver(M);
  if (solver.info() != Eigen::Success) return false;

  Eigen::VectorXd w(n);
  const double umin = *std::min_element(u.begin(), u.end());
  for (int i = 0; i < n; ++i) w[i] = std::exp(-(u[i] - umin));
  w /= w.norm();

  std::vector<double> r;
  double res = std::numeric_limits<double>::infinity();
  double prev = res;
  int stall = 0;
  for (int k = 1; k <= opts.max_evolution_steps; ++k) {
    w = solver.solve(w);
    w /= w.norm();
    // Rayleigh quotient of 1/2 Δ_h - s.
    double rq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double lap = c * (w[g.wrap(i + 1)] + w[g.wrap(i - 1)] - 2.0 * w[i]);
      rq += w[i] * (lap - s[i] * w[i]);
    }
    lambda = rq;
    for (int i = 0; i < n; ++i) u[i] = -std::log(std::max(w[i], std::numeric_limits<double>::min()));
    center(u, h);
    residual_into(s, u, lambda, r);
    res = sup_of(r);
    history.push_back(res);
    if (opts.observer) opts.observer({k, res, lambda, "evolution"});
    steps_taken = k;
    if (res <= opts.tolerance) return true;
    stall = (res >= prev * (1.0 - 1e-12)) ? stall + 1 : 0;
    if (stall >= 20) return false;
    prev = res;
  }
  return false;
}

}  // namespace

FaceRates scharfetter_gummel_rates(double b, double h) noexcept {
  const double z = 2.0 * b * h;
  const double c = 0.5 / (h * h);
  return {c * bernoulli(-z), c * bernoulli(z)};
}

GridField hjb_residual(const Lagrangian& L, const GridField& f, const GridField& u, double lambda) {
  const GridField s = source_field(L, f);
  std::vector<double> r;
  residual_into(s, u.values(), lambda, r);
  return GridField(L.grid(), std::move(r));
}

double sup_norm(const GridField& r) {
  double m = 0.0;
  for (double v : r.values()) m = std::max(m, std::abs(v));
  return m;
}

ErgodicSolution solve_ergodic_hjb(const Lagrangian& L, const GridField& f, const HjbOptions& opts) {
  const GridField s = source_field(L, f);
  const TorusGrid& g = s.grid();
  const int n = g.size();

  std::vector<double> u(n, 0.0);
  if (opts.initial_guess) {
    if (!(opts.initial_guess->grid() == g)) throw ConfigError("HJB: initial guess on a different grid");
    u.assign(opts.initial_guess->values().begin(), opts.initial_guess->values().end());
    center(u, g.h());
  }
  double lambda = 0.0;
  {
    // lambda consistent with u: average of the residual.
    std::vector<double> r;
    residual_into(s, u, 0.0, r);
    lambda = std::accumulate(r.begin(), r.end(), 0.0) / n;
    if (!std::isfinite(lambda)) lambda = 0.0;
  }

  ErgodicSolution out{GridField(g), 0.0, 0.0, 0, "", {}};
  std::vector<double>& hist = out.residual_history;

  if (!opts.evolution_only) {
    std::vector<double> u0 = u;
    double l0 = lambda;
    const auto nr = newton(s, u0, l0, opts, hist, opts.max_newton_iterations);
    out.iterations = nr.iterations;
    if (nr.converged) {
      std::vector<double> r;
      residual_into(s, u0, l0, r);
      out.u = GridField(g, std::move(u0));
      out.lambda = l0;
      out.residual = sup_of(r);
      out.method = "newton";
      return out;
    }
  }

  int steps = 0;
  const bool ok = evolve(s, u, lambda, opts, hist, steps);
  out.iterations += steps;
  // Polish: the evolution limit is a good Newton start.
  const auto nr = newton(s, u, lambda, opts, hist, 50);
  out.iterations += nr.iterations;
  std::vector<double> r;
  residual_into(s, u, lambda, r);
  const double res = sup_of(r);
  if (!(ok || nr.converged) || res > opts.tolerance) {
    throw SolverError("ergodic HJB did not reach residual " + std::to_string(opts.tolerance) +
                          " (last residual " + std::to_string(res) + ")",
                      hist);
  }
  out.u = GridField(g, std::move(u));
  out.lambda = lambda;
  out.residual = res;
  out.method = "evolution";
  return out;
}

namespace {

SpMat fp_generator(const GridDrift& drift) {
  const TorusGrid& g = drift.grid();
  const int n = g.size();
  std::vector<Triplet> trips;
  trips.reserve(4 * n);
  for (int i = 0; i < n; ++i) {
    const int ip = g.wrap(i + 1);
    const auto [right, left] = scharfetter_gummel_rates(drift[i], g.h());
    // flux across face i: right * p_i - left * p_{i+1}
    trips.emplace_back(i, i, -right);
    trips.emplace_back(ip, i, right);
    trips.emplace_back(ip, ip, -left);
    trips.emplace_back(i, ip, left);
  }
  SpMat G(n, n);
  G.setFromTriplets(trips.begin(), trips.end());
  return G;
}

}  // namespace

GridField fokker_planck_residual(const ProbabilityGrid& mu, const GridDrift& drift) {
  if (!(mu.grid() == drift.grid())) throw ConfigError("Fokker-Planck: measure and drift on different grids");
  const SpMat G = fp_generator(drift);
  Eigen::Map<const Eigen::VectorXd> m(mu.density().data(), mu.size());
  const Eigen::VectorXd r = -(G * m);
  return GridField(mu.grid(), std::vector<double>(r.data(), r.data() + r.size()));
}

StationaryMeasure solve_invariant_measure(const GridDrift& drift, const FpOptions& opts) {
  const TorusGrid& g = drift.grid();
  const int n = g.size();
  for (double b : drift.values()) {
    if (!std::isfinite(b)) throw ConfigError("Fokker-Planck: non-finite drift");
  }
  const SpMat G = fp_generator(drift);
  const double scale = 0.5 / (g.h() * g.h()) + drift.max_abs() / g.h();
  SpMat S(n, n);
  S.setIdentity();
  const SpMat A = G - (1e-9 * scale) * S;

  Eigen::SparseLU<SpMat> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw SolverError("Fokker-Planck: factorisation failed");

  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0);
  std::vector<double> hist;
  double rel = std::numeric_limits<double>::infinity();
  int it = 0;
  for (it = 1; it <= opts.max_iterations; ++it) {
    x = lu.solve(x);
    if (!x.allFinite()) throw SolverError("Fokker-Planck: inverse iteration produced non-finite values", hist);
    const double s = x.sum();
    x /= s;
    rel = (G * x).lpNorm<Eigen::Infinity>() / (scale * x.lpNorm<Eigen::Infinity>());
    hist.push_back(rel);
    if (rel <= opts.tolerance) break;
  }
  if (rel > opts.tolerance) {
    double ratio = hist.size() >= 2 ? hist.back() / hist[hist.size() - 2] : 1.0;
    throw SolverError("Fokker-Planck: inverse iteration stagnated (relative residual " + std::to_string(rel) +
                          ", contraction " + std::to_string(ratio) + ")",
                      hist);
  }
  const double xmax = x.maxCoeff();
  std::vector<double> dens(n);
  for (int i = 0; i < n; ++i) {
    if (x[i] < -1e-13 * xmax) throw InvariantError("Fokker-Planck: invariant vector is not positive");
    dens[i] = std::max(x[i], 0.0);
  }
  StationaryMeasure out{ProbabilityGrid::normalized(g, std::move(dens)), 0.0, std::min(it, opts.max_iterations)};
  out.residual = sup_norm(fokker_planck_residual(out.mu, drift));
  return out;
}

GridField EigenOracle::potential() const {
  GridField u(w.grid());
  for (int i = 0; i < u.size(); ++i) u[i] = -std::log(w[i]);
  return u.centered();
}

ProbabilityGrid EigenOracle::squared_density() const {
  std::vector<double> d(w.size());
  for (int i = 0; i < w.size(); ++i) d[i] = w[i] * w[i];
  return ProbabilityGrid::normalized(w.grid(), std::move(d));
}

EigenOracle principal_eigen_oracle(const Lagrangian& L, const GridField* f) {
  const TorusGrid& g = L.grid();
  const int n = g.size();
  const double c = 0.5 / (g.h() * g.h());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = -2.0 * c - L.state_cost(i) - (f ? (*f)[i] : 0.0);
    A(i, g.wrap(i + 1)) += c;
    A(i, g.wrap(i - 1)) += c;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success) throw SolverError("eigen oracle: eigensolver failed");
  Eigen::VectorXd v = es.eigenvectors().col(n - 1);
  if (v.sum() < 0) v = -v;
  v /= v.maxCoeff();
  EigenOracle out{es.eigenvalues()[n - 1], GridField(g)};
  for (int i = 0; i < n; ++i) {
    if (!(v[i] > 0.0)) throw InvariantError("eigen oracle: principal eigenvector is not positive");
    out.w[i] = v[i];
  }
  return out;
}

std::vector<double> action_grid(double a_max, int count) {
  if (count < 2 || !(a_max > 0.0)) throw ConfigError("action grid needs a_max > 0 and at least two actions");
  std::vector<double> a(count);
  for (int k = 0; k < count; ++k) a[k] = -a_max + 2.0 * a_max * k / (count - 1);
  return a;
}

MdpResult closed_measure_min_oracle(const Lagrangian& L, std::span<const double> actions, const MdpOptions& opts) {
  if (actions.empty()) throw ConfigError("closed-measure oracle: empty action set");
  const TorusGrid& g = L.grid();
  const int n = g.size();
  const double h = g.h();
  const double d = 0.5 / (h * h);
  const int na = static_cast<int>(actions.size());

  // Central rates where they are nonnegative, upwind otherwise.
  std::vector<double> rp(na), rm(na), ca(na);
  double rate_max = 0.0;
  for (int k = 0; k < na; ++k) {
    const double a = actions[k];
    if (std::abs(a) <= 1.0 / h) {
      rp[k] = d + 0.5 * a / h;
      rm[k] = d - 0.5 * a / h;
    } else {
      rp[k] = d + std::max(a, 0.0) / h;
      rm[k] = d + std::max(-a, 0.0) / h;
    }
    rate_max = std::max(rate_max, rp[k] + rm[k]);
  }
  const double Lam = 1.05 * rate_max;
  for (int k = 0; k < na; ++k) {
    ca[k] = 0.5 * actions[k] * actions[k] / Lam;
    rp[k] /= Lam;
    rm[k] /= Lam;
  }
  std::vector<double> V(n);
  for (int i = 0; i < n; ++i) V[i] = L.state_cost(i) / Lam;

  std::vector<double> v(n, 0.0), tv(n);
  std::vector<int> best(n, 0);
  MdpResult out;
  for (long it = 1; it <= opts.max_iterations; ++it) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int i = 0; i < n; ++i) {
      const double dp = v[g.wrap(i + 1)] - v[i];
      const double dm = v[g.wrap(i - 1)] - v[i];
      double m = std::numeric_limits<double>::infinity();
      int bk = 0;
      for (int k = 0; k < na; ++k) {
        const double q = ca[k] + rp[k] * dp + rm[k] * dm;
        if (q < m) {
          m = q;
          bk = k;
        }
      }
      const double diff = V[i] + m;  // (T v - v)_i
      tv[i] = v[i] + diff;
      best[i] = bk;
      lo = std::min(lo, diff);
      hi = std::max(hi, diff);
    }
    const double ref = tv[0];
    for (int i = 0; i < n; ++i) v[i] = tv[i] - ref;
    out.iterations = it;
    out.lower = lo * Lam;
    out.upper = hi * Lam;
    if (out.upper - out.lower <= opts.tolerance) {
      out.value = 0.5 * (out.lower + out.upper);
      out.policy.resize(n);
      for (int i = 0; i < n; ++i) out.policy[i] = actions[best[i]];
      return out;
    }
  }
  throw SolverError("closed-measure oracle: value iteration did not converge (gap " +
                    std::to_string(out.upper - out.lower) + ")");
}

OptimalDrift optimal_stationary_drift(const ProbabilityGrid& m, const Lagrangian& L) {
  if (!(m.grid() == L.grid())) throw ConfigError("optimal drift: measure and Lagrangian on different grids");
  const TorusGrid& g = m.grid();
  const int n = g.size();
  const double h = g.h();
  if (!(m.min() > 0.0)) throw ConfigError("optimal drift: measure vanishes on some cell; no finite-cost drift");

  // Face flux (cell probability per unit time) as a function of the face drift.
  auto face_flux = [&](int i, double b) {
    const auto [right, left] = scharfetter_gummel_rates(b, h);
    return h * (right * m[i] - left * m[g.wrap(i + 1)]);
  };
  // Zero-flux drift is explicit.
  auto zero_flux_drift = [&](int i) { return std::log(m[g.wrap(i + 1)] / m[i]) / (2.0 * h); };

  boost::math::tools::eps_tolerance<double> tol(50);
  auto drift_for_flux = [&](int i, double J) {
    const double b0 = zero_flux_drift(i);
    if (J == 0.0) return b0;
    double step = 1.0;
    double lo = b0, hi = b0;
    if (J > 0.0) {
      while (face_flux(i, hi) < J) hi = b0 + (step *= 2.0);
    } else {
      while (face_flux(i, lo) > J) lo = b0 - (step *= 2.0);
    }
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve([&](double b) { return face_flux(i, b) - J; }, lo, hi, tol,
                                                     iters);
    return 0.5 * (r.first + r.second);
  };
  auto total_drift = [&](double J) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += drift_for_flux(i, J);
    return s * h;
  };

  double J = 0.0;
  double abs_sum = 0.0;
  for (int i = 0; i < n; ++i) abs_sum += std::abs(zero_flux_drift(i)) * h;
  const double s0 = total_drift(0.0);
  if (std::abs(s0) > 1e-12 * (1.0 + abs_sum)) {
    double lo = -1.0, hi = 1.0;
    while (total_drift(hi) < 0.0) hi *= 2.0;
    while (total_drift(lo) > 0.0) lo *= 2.0;
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(total_drift, lo, hi, tol, iters);
    J = 0.5 * (r.first + r.second);
  }

  std::vector<double> b(n);
  for (int i = 0; i < n; ++i) b[i] = drift_for_flux(i, J);
  // Remove the roundoff-level mean so alpha is exactly a discrete gradient.
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  for (double& v : b) v -= mean_b;

  GridField psi(g);
  for (int i = 0; i + 1 < n; ++i) psi[i + 1] = psi[i] + b[i] * h;
  OptimalDrift out{GridDrift(g, std::move(b)), psi.centered(), 0.0, J};
  out.cost = stationary_cost(m, out.alpha, L);
  return out;
}

}  // namespace mfl
