#include "mflimits/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "mflimits/errors.hpp"
#include "mflimits/serialize.hpp"

namespace mfl {

namespace {

GridField scaled(GridField f, double c) {
  for (int i = 0; i < f.size(); ++i) f[i] *= c;
  return f;
}

std::vector<ProbabilityGrid> generated_starts(const Lagrangian& L, int count, std::uint64_t seed) {
  const TorusGrid& g = L.grid();
  std::vector<ProbabilityGrid> out;
  if (count <= 0) return out;
  out.push_back(ProbabilityGrid::uniform(g));
  if (count >= 2) {
    // invariant measure of the uncoupled optimal control
    const auto sol = solve_ergodic_hjb(L, GridField(g));
    out.push_back(solve_invariant_measure(GridDrift::minus_gradient(sol.u)).mu);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  while (static_cast<int>(out.size()) < count) {
    std::vector<double> w(g.size(), 0.0);
    for (int k = 1; k <= 3; ++k) {
      const double a = N(rng), b = N(rng);
      for (int i = 0; i < g.size(); ++i) {
        const double x = 2.0 * std::numbers::pi * k * g.node(i);
        w[i] += (a * std::cos(x) + b * std::sin(x)) / k;
      }
    }
    for (double& v : w) v = std::exp(v);
    out.push_back(ProbabilityGrid::normalized(g, std::move(w)));
  }
  return out;
}

struct Evaluated {
  CoupledSolution sol;
  double w1_gap = 0.0;
};

// One step of the map m -> invariant measure of the source c dF/dm(m), plus
// the bookkeeping for a candidate fixed point.
Evaluated finalize(const Lagrangian& L, const CouplingFunctional& F, double c, const ProbabilityGrid& m,
                   const HjbOptions& hopts, const std::optional<GridField>& guess) {
  HjbOptions ho = hopts;
  if (guess) ho.initial_guess = guess;
  const GridField f = scaled(F.flat_derivative(m), c);
  const auto hjb = solve_ergodic_hjb(L, f, ho);
  const auto alpha = GridDrift::minus_gradient(hjb.u);
  const auto sm = solve_invariant_measure(alpha);

  Evaluated e{CoupledSolution{c, hjb.u, hjb.lambda, sm.mu, alpha, 0.0, 0.0, 0.0, 0.0, 0.0, {}}};
  e.w1_gap = wasserstein1_circle(m, sm.mu);
  auto& s = e.sol;
  s.F_value = F.value(s.m);
  s.kinetic = stationary_cost(s.m, s.alpha, L);
  s.objective = s.kinetic + c * s.F_value;
  s.hjb_residual = sup_norm(hjb_residual(L, scaled(F.flat_derivative(s.m), c), s.u, s.lambda));
  s.fp_residual = sm.residual;
  return e;
}

// Newton on the nonlinear eigenproblem
//   (-1/2 Δ_h + V + c dF/dm(psi^2)) psi = mu psi,  sum psi^2 h = 1,
// whose positive solutions are exactly the fixed points (m = psi^2).
std::optional<ProbabilityGrid> newton_polish(const Lagrangian& L, const CouplingFunctional& F, double c,
                                             const ProbabilityGrid& m0) {
  const TorusGrid& g = L.grid();
  const int n = g.size();
  const double h = g.h();
  const double d = 0.5 / (h * h);
  const auto kernel = F.combined_kernel();

  Eigen::VectorXd psi(n);
  for (int i = 0; i < n; ++i) psi[i] = std::sqrt(m0[i]);
  if (psi.minCoeff() <= 0.0) return std::nullopt;

  auto source = [&](const Eigen::VectorXd& p) {
    std::vector<double> dens(n);
    for (int i = 0; i < n; ++i) dens[i] = p[i] * p[i];
    return scaled(F.flat_derivative(ProbabilityGrid::normalized(g, std::move(dens))), c);
  };
  auto residual = [&](const Eigen::VectorXd& p, double mu, const GridField& f) {
    Eigen::VectorXd r(n + 1);
    for (int i = 0; i < n; ++i) {
      r[i] = d * (2.0 * p[i] - p[g.wrap(i + 1)] - p[g.wrap(i - 1)]) + (L.state_cost(i) + f[i] - mu) * p[i];
    }
    r[n] = p.squaredNorm() * h - 1.0;
    return r;
  };

  GridField f = source(psi);
  double mu = 0.0;
  {
    const Eigen::VectorXd r0 = residual(psi, 0.0, f);
    mu = psi.dot(r0.head(n)) / psi.squaredNorm();
  }
  Eigen::VectorXd r = residual(psi, mu, f);
  const double scale = 4.0 * d;
  Eigen::MatrixXd J(n + 1, n + 1);
  for (int it = 0; it < 40; ++it) {
    const double res = r.head(n).lpNorm<Eigen::Infinity>() / (scale * psi.lpNorm<Eigen::Infinity>()) +
                       std::abs(r[n]);
    if (res < 1e-15) break;
    J.setZero();
    for (int i = 0; i < n; ++i) {
      J(i, i) += 2.0 * d + L.state_cost(i) + f[i] - mu;
      J(i, g.wrap(i + 1)) -= d;
      J(i, g.wrap(i - 1)) -= d;
      J(i, n) = -psi[i];
      J(n, i) = 2.0 * psi[i] * h;
      if (!kernel.empty()) {
        for (int j = 0; j < n; ++j) {
          const int lag = g.wrap(i - j);
          J(i, j) += psi[i] * c * 2.0 * kernel[lag] * h * 2.0 * psi[j];
        }
      }
    }
    const Eigen::VectorXd step = J.partialPivLu().solve(-r);
    if (!step.allFinite()) return std::nullopt;
    double t = 1.0;
    bool ok = false;
    const double base = r.lpNorm<Eigen::Infinity>();
    for (int k = 0; k < 30; ++k, t *= 0.5) {
      Eigen::VectorXd p = psi + t * step.head(n);
      if (p.minCoeff() <= 0.0) continue;
      const double mu_t = mu + t * step[n];
      const GridField ft = source(p);
      const Eigen::VectorXd rt = residual(p, mu_t, ft);
      if (rt.lpNorm<Eigen::Infinity>() < (1.0 - 1e-4 * t) * base) {
        psi = p;
        mu = mu_t;
        f = ft;
        r = rt;
        ok = true;
        break;
      }
    }
    if (!ok) break;
  }
  const double res = r.head(n).lpNorm<Eigen::Infinity>() / (scale * psi.lpNorm<Eigen::Infinity>());
  if (!(res < 1e-11) || psi.minCoeff() <= 0.0) return std::nullopt;
  std::vector<double> dens(n);
  for (int i = 0; i < n; ++i) dens[i] = psi[i] * psi[i];
  return ProbabilityGrid::normalized(g, std::move(dens));
}

}  // namespace

CoupledSolution solve_coupled(const Lagrangian& L, const CouplingFunctional& F, double coefficient,
                              const FixedPointOptions& opts) {
  if (!(L.grid() == F.grid())) throw ConfigError("coupled system: Lagrangian and coupling on different grids");
  if (!(opts.tau > 0.0 && opts.tau <= 1.0)) throw ConfigError("coupled system: damping tau must be in (0, 1]");

  std::vector<ProbabilityGrid> starts = opts.extra_starts;
  for (auto& s : generated_starts(L, opts.starts, opts.seed)) starts.push_back(std::move(s));

  std::optional<CoupledSolution> best;
  std::vector<FixedPointRecord> records;
  std::vector<double> history;

  for (std::size_t s = 0; s < starts.size(); ++s) {
    ProbabilityGrid m = starts[s];
    std::optional<GridField> guess;
    FixedPointRecord rec;
    rec.start = static_cast<int>(s);
    double polish_at = opts.polish_below;
    std::optional<CoupledSolution> found;

    for (int it = 1; it <= opts.max_iterations; ++it) {
      Evaluated ev = finalize(L, F, coefficient, m, opts.hjb, guess);
      guess = ev.sol.u;
      rec.iterations = it;
      rec.w1_gap = ev.w1_gap;
      if (ev.w1_gap <= opts.w1_tolerance) {
        found = std::move(ev.sol);
        break;
      }
      if (opts.polish && ev.w1_gap <= polish_at) {
        polish_at = ev.w1_gap * 0.1;
        if (auto p = newton_polish(L, F, coefficient, ev.sol.m)) {
          if (wasserstein1_circle(*p, ev.sol.m) <= 1e-3) {
            Evaluated pe = finalize(L, F, coefficient, *p, opts.hjb, guess);
            if (pe.w1_gap <= opts.w1_tolerance) {
              rec.polished = true;
              rec.w1_gap = pe.w1_gap;
              found = std::move(pe.sol);
              break;
            }
          }
        }
      }
      m = m.mix(ev.sol.m, opts.tau);
    }
    history.push_back(rec.w1_gap);
    if (found) {
      rec.converged = true;
      rec.objective = found->objective;
      rec.F_value = found->F_value;
      if (!best || found->objective < best->objective) best = std::move(found);
    }
    records.push_back(rec);
  }
  if (!best) {
    throw SolverError("coupled system: no start reached W1(m, m+) <= " + std::to_string(opts.w1_tolerance),
                      history);
  }
  best->fixed_points = std::move(records);
  return std::move(*best);
}

PlannerSolution solve_planner(const Lagrangian& L, const CouplingFunctional& F, const FixedPointOptions& opts) {
  return solve_coupled(L, F, 1.0, opts);
}

PenalizedSolution solve_penalized(double n, const Lagrangian& L, const CouplingFunctional& F,
                                  const FixedPointOptions& opts) {
  if (!(n > 0.0) || !std::isfinite(n)) throw ConfigError("penalized problem needs n > 0");
  return solve_coupled(L, F, -n, opts);
}

namespace {

struct BBEval {
  double value;
  double flux;
};

// Benamou-Brenier objective (J eliminated in closed form) and its gradient
// with respect to the density.
BBEval bb_objective(const Lagrangian& L, const CouplingFunctional& F, const std::vector<double>& m,
                    std::vector<double>* grad) {
  const TorusGrid& g = L.grid();
  const int n = g.size();
  const double h = g.h();
  std::vector<double> a(n), r(n);
  double sar = 0.0, sr = 0.0;
  for (int i = 0; i < n; ++i) {
    const int ip = g.wrap(i + 1);
    const double mbar = 0.5 * (m[i] + m[ip]);
    if (!(mbar > 0.0)) return {std::numeric_limits<double>::infinity(), 0.0};
    a[i] = 0.5 * (m[ip] - m[i]) / h;
    r[i] = 1.0 / mbar;
    sar += a[i] * r[i];
    sr += r[i];
  }
  const double J = -sar / sr;
  double val = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = a[i] + J;
    val += 0.5 * h * w * w * r[i] + h * L.state_cost(i) * m[i];
  }
  const auto pm = ProbabilityGrid::normalized(g, m);
  val += F.value(pm);
  if (grad) {
    const auto dF = F.flat_derivative(pm);
    grad->assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const int ip = g.wrap(i + 1);
      const double w = a[i] + J;
      const double dw = h * w * r[i];                // dT/dw_i
      const double dr = -0.25 * h * w * w * r[i] * r[i];  // dT/dm via mbar_i, per endpoint
      (*grad)[i] += -0.5 / h * dw + dr;
      (*grad)[ip] += 0.5 / h * dw + dr;
    }
    for (int i = 0; i < n; ++i) (*grad)[i] += h * (L.state_cost(i) + dF[i]);
  }
  return {val, J};
}

std::vector<double> simplex_projection(std::vector<double> v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    css += u[j];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(0.0, x - theta);
  return v;
}

}  // namespace

PrimalOracleResult primal_oracle(const Lagrangian& L, const CouplingFunctional& F, long max_iterations) {
  if (!(L.grid() == F.grid())) throw ConfigError("primal oracle: Lagrangian and coupling on different grids");
  const TorusGrid& g = L.grid();
  const int n = g.size();
  const double h = g.h();
  PrimalOracleResult out{false, "", 0.0, ProbabilityGrid::uniform(g)};
  if (!F.is_convex()) {
    out.note = "oracle inapplicable: coupling is not convex";
    return out;
  }
  out.applicable = true;

  // Work with cell probabilities q = m h on the unit simplex.
  auto to_density = [&](const std::vector<double>& q) {
    std::vector<double> m(n);
    for (int i = 0; i < n; ++i) m[i] = q[i] / h;
    return m;
  };
  std::vector<double> x(n, h), y = x, xn(n), grad(n), gq(n);
  double Lip = 1.0;
  double t = 1.0;
  double fx = bb_objective(L, F, to_density(x), nullptr).value;
  double anchor = fx;
  long since = 0;
  long it = 0;
  for (it = 1; it <= max_iterations; ++it) {
    const double fy = bb_objective(L, F, to_density(y), &grad).value;
    for (int i = 0; i < n; ++i) gq[i] = grad[i] / h;
    double fxn = 0.0;
    for (int bt = 0; bt < 200; ++bt) {
      for (int i = 0; i < n; ++i) xn[i] = y[i] - gq[i] / Lip;
      xn = simplex_projection(std::move(xn));
      fxn = bb_objective(L, F, to_density(xn), nullptr).value;
      double lin = 0.0, sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double dlt = xn[i] - y[i];
        lin += gq[i] * dlt;
        sq += dlt * dlt;
      }
      if (std::isfinite(fxn) && fxn <= fy + lin + 0.5 * Lip * sq + 1e-15 * std::abs(fy)) break;
      Lip *= 2.0;
    }
    // adaptive restart when the objective goes up
    double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double mom = (t - 1.0) / tn;
    if (fxn > fx) {
      tn = 1.0;
      mom = 0.0;
    }
    for (int i = 0; i < n; ++i) y[i] = xn[i] + mom * (xn[i] - x[i]);
    if (fxn <= fx) {
      x.swap(xn);
      fx = fxn;
    } else {
      y = x;
    }
    t = tn;
    // stop once 500 iterations gain less than 1e-14
    if (anchor - fx > 1e-14 * (1.0 + std::abs(fx))) {
      anchor = fx;
      since = 0;
    } else if (++since >= 500) {
      break;
    }
  }
  const auto m = to_density(x);
  const auto ev = bb_objective(L, F, m, nullptr);
  out.value = ev.value;
  out.flux = ev.flux;
  out.m = ProbabilityGrid::normalized(g, m);
  out.iterations = std::min(it, max_iterations);
  return out;
}

std::vector<PenalizedSolution> penalized_ladder(const Lagrangian& L, const CouplingFunctional& F, double n_max,
                                                const FixedPointOptions& opts) {
  std::vector<PenalizedSolution> out;
  for (double n = 1.0; n <= n_max; n *= 2.0) {
    FixedPointOptions o = opts;
    if (!out.empty()) o.extra_starts.insert(o.extra_starts.begin(), out.back().m);
    out.push_back(solve_penalized(n, L, F, o));
  }
  return out;
}

std::vector<LadderRow> ladder_rows(const std::vector<PenalizedSolution>& ladder) {
  std::vector<LadderRow> rows;
  for (const auto& s : ladder) {
    rows.push_back({s.penalization(), s.F_value, s.kinetic, s.objective, s.alpha.max_abs()});
  }
  return rows;
}

std::string ladder_csv(const std::vector<LadderRow>& rows) {
  std::string out = "n,F_value,kinetic,objective,max_drift\n";
  for (const auto& r : rows) {
    out += format_double(r.n) + ',' + format_double(r.F_value) + ',' + format_double(r.kinetic) + ',' +
           format_double(r.objective) + ',' + format_double(r.max_drift) + '\n';
  }
  return out;
}

}  // namespace mfl
