#include "mflimits/target.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mflimits/errors.hpp"
#include "mflimits/serialize.hpp"

namespace mfl {

HomotopyState homotopy_at(const Lagrangian& L, const CouplingFunctional& F, const PlannerSolution& planner,
                          const PenalizedSolution& penalized, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("homotopy parameter must lie in [0, 1]");
  const TorusGrid& g = L.grid();
  GridField phi(g);
  for (int i = 0; i < g.size(); ++i) phi[i] = (1.0 - s) * planner.u[i] + s * penalized.u[i];
  auto alpha = GridDrift::minus_gradient(phi);
  auto m = solve_invariant_measure(alpha).mu;
  HomotopyState st{s, std::move(phi), std::move(alpha), std::move(m)};
  st.kinetic = stationary_cost(st.m, st.alpha, L);
  st.F_value = F.value(st.m);
  return st;
}

namespace {

CurvePoint to_point(const HomotopyState& st) {
  return {st.s, st.value(), st.kinetic, st.F_value, st.alpha.max_abs(), st.m.min()};
}

}  // namespace

std::vector<CurvePoint> homotopy_curve(const Lagrangian& L, const CouplingFunctional& F,
                                       const PlannerSolution& planner, const PenalizedSolution& penalized,
                                       int points) {
  if (points < 2) throw ConfigError("homotopy curve needs at least two points");
  std::vector<CurvePoint> out;
  for (int k = 0; k < points; ++k) {
    const double s = static_cast<double>(k) / (points - 1);
    out.push_back(to_point(homotopy_at(L, F, planner, penalized, s)));
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "lambda,value,kinetic,F_value,max_drift,min_density\n";
  for (const auto& p : curve) {
    out += format_double(p.s) + ',' + format_double(p.value) + ',' + format_double(p.kinetic) + ',' +
           format_double(p.F_value) + ',' + format_double(p.max_drift) + ',' + format_double(p.min_density) + '\n';
  }
  return out;
}

TargetPair build_target(double e, const Lagrangian& L, const CouplingFunctional& F, const PlannerSolution& planner,
                        const PenalizedSolution& penalized, const TargetOptions& opts) {
  auto lo = homotopy_at(L, F, planner, penalized, 0.0);
  if (lo.value() > e + opts.tolerance) {
    throw ConfigError("target payoff " + format_double(e) + " is below the social cost " + format_double(lo.value()));
  }
  auto pack = [&](HomotopyState st, int bisections, std::vector<CurvePoint> trace) {
    TargetPair t{e, st.s, std::move(st.m), std::move(st.alpha), std::move(st.phi),
                 st.kinetic + st.F_value, st.kinetic, st.F_value, 0, 0.0, {}};
    t.bisections = bisections;
    t.penalization = penalized.penalization();
    t.trace = std::move(trace);
    return t;
  };
  if (std::abs(lo.value() - e) <= opts.tolerance) return pack(std::move(lo), 0, {});

  auto hi = homotopy_at(L, F, planner, penalized, 1.0);
  if (!(hi.value() > e)) {
    throw ConfigError("penalised value " + format_double(hi.value()) + " does not exceed the target " +
                      format_double(e) + "; increase n");
  }
  double a = 0.0, b = 1.0;
  std::vector<CurvePoint> trace;
  for (int k = 1; k <= opts.max_bisections; ++k) {
    const double mid = 0.5 * (a + b);
    auto st = homotopy_at(L, F, planner, penalized, mid);
    trace.push_back(to_point(st));
    const double gap = st.value() - e;
    if (std::abs(gap) <= opts.tolerance) return pack(std::move(st), k, std::move(trace));
    (gap < 0.0 ? a : b) = mid;
  }
  throw SolverError("target bisection did not reach |value - e| <= " + format_double(opts.tolerance));
}

namespace {

ProbabilityGrid smooth_density(const TorusGrid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<double> w(g.size(), 0.0);
  for (int k = 1; k <= 4; ++k) {
    const double a = N(rng) / k, b = N(rng) / k;
    for (int i = 0; i < g.size(); ++i) {
      const double x = 2.0 * std::numbers::pi * k * g.node(i);
      w[i] += a * std::cos(x) + b * std::sin(x);
    }
  }
  for (double& v : w) v = std::exp(v);
  return ProbabilityGrid::normalized(g, std::move(w));
}

std::vector<CalibrationSample> perturbations(const TargetPair& target, const Lagrangian& L, int count,
                                             const CalibrationOptions& opts, std::mt19937_64& rng) {
  const TorusGrid& g = L.grid();
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::uniform_int_distribution<int> cell(0, g.size() - 1);
  std::vector<CalibrationSample> out;
  out.reserve(count);
  const double span = std::log(opts.s_max / opts.s_min);
  for (int k = 0; k < count; ++k) {
    CalibrationSample smp;
    smp.spike = (k % 2 == 1);
    smp.s = opts.s_min * std::exp(span * U(rng));
    const ProbabilityGrid q = smp.spike ? ProbabilityGrid::point_mass(g, cell(rng)) : smooth_density(g, rng);
    const ProbabilityGrid mp = target.m_hat.mix(q, smp.s);
    smp.w1 = wasserstein1_circle(mp, target.m_hat);
    smp.cost = optimal_stationary_drift(mp, L).cost;
    out.push_back(smp);
  }
  return out;
}

}  // namespace

Calibration calibrate_delta(double epsilon, const TargetPair& target, const Lagrangian& L,
                            const CalibrationOptions& opts) {
  if (!(epsilon > 0.0)) throw ConfigError("calibrate_delta: epsilon must be positive");
  if (!(opts.s_min > 0.0 && opts.s_min <= opts.s_max && opts.s_max <= 1.0)) {
    throw ConfigError("calibrate_delta: need 0 < s_min <= s_max <= 1");
  }
  Calibration cal;
  cal.epsilon = epsilon;
  cal.base_cost = optimal_stationary_drift(target.m_hat, L).cost;
  std::mt19937_64 rng(opts.seed);
  cal.samples = perturbations(target, L, opts.samples, opts, rng);

  const double bound = cal.base_cost - epsilon / 3.0;
  auto admissible = [&](double delta) {
    for (const auto& s : cal.samples) {
      if (s.w1 <= delta && s.cost < bound) return false;
    }
    return true;
  };
  double delta = 0.0;
  for (double d = opts.cap; d >= opts.floor; d *= 0.5) {
    if (admissible(d)) {
      delta = d;
      break;
    }
  }
  if (delta == 0.0) {
    throw SolverError("calibrate_delta: no admissible delta above " + format_double(opts.floor));
  }
  cal.delta = delta;
  cal.holdout = perturbations(target, L, opts.holdout, opts, rng);
  for (const auto& s : cal.holdout) {
    if (s.w1 <= delta) {
      ++cal.holdout_checked;
      if (s.cost < bound) ++cal.holdout_violations;
    }
  }
  return cal;
}

double expected_empirical_F(const CouplingFunctional& F, const ProbabilityGrid& m, int M) {
  if (M < 1) throw ConfigError("expected_empirical_F: need at least one draw");
  double diag = F.offset();
  const double h = m.grid().h();
  for (const auto& term : F.terms()) {
    if (const auto* lin = std::get_if<LinearTerm>(&term)) {
      double s = 0.0;
      for (int i = 0; i < m.size(); ++i) s += lin->g[i] * m[i];
      diag += s * h;
    } else if (const auto* conv = std::get_if<ConvolutionTerm>(&term)) {
      diag += conv->weight * conv->kernel[0];
    }
  }
  const double inv = 1.0 / M;
  return (1.0 - inv) * F.value(m) + inv * diag;
}

MonteCarloF monte_carlo_empirical_F(const CouplingFunctional& F, const ProbabilityGrid& m, int M, int draws,
                                    std::uint64_t seed) {
  if (M < 1 || draws < 2) throw ConfigError("Monte Carlo for E[F]: need M >= 1 and at least two draws");
  const TorusGrid& g = m.grid();
  const PointCloudCoupling pc(F);
  std::vector<double> w(m.density().begin(), m.density().end());
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::mt19937_64 rng(seed);
  std::vector<double> pts(M);
  double sum = 0.0, sum2 = 0.0;
  for (int d = 0; d < draws; ++d) {
    for (double& p : pts) p = g.node(pick(rng));
    const double v = pc.value(pts);
    sum += v;
    sum2 += v * v;
  }
  MonteCarloF out;
  out.draws = draws;
  out.mean = sum / draws;
  const double var = std::max(0.0, (sum2 - draws * out.mean * out.mean) / (draws - 1));
  out.stderr_ = std::sqrt(var / draws);
  return out;
}

EnResult compute_eN(int N, const TargetPair& target, const CouplingFunctional& F, EnMethod method, int draws,
                    std::uint64_t seed) {
  if (N < 2) throw ConfigError("compute_eN: N must be at least 2");
  EnResult r;
  r.N = N;
  r.kinetic = target.kinetic;
  if (method == EnMethod::MonteCarlo) {
    const auto mc = monte_carlo_empirical_F(F, target.m_hat, N - 1, draws, seed);
    r.expected_F = mc.mean;
    r.stderr_ = mc.stderr_;
    r.method = "monte-carlo";
  } else {
    // Every supported coupling is a sum of linear and convolution terms, for
    // which the expectation is available in closed form.
    r.expected_F = expected_empirical_F(F, target.m_hat, N - 1);
    r.method = "closed-form";
  }
  r.eN = r.kinetic + r.expected_F;
  return r;
}

Selection select_penalization(double e_target, int N, double lambda0, double e_max, const Lagrangian& L,
                              const CouplingFunctional& F, const PlannerSolution& planner,
                              const SelectionOptions& opts) {
  if (!(e_target < e_max)) {
    throw ConfigError("target payoff " + format_double(e_target) + " is not below e_max " + format_double(e_max) +
                      " (empty payoff band)");
  }
  std::vector<SelectionRow> rows;
  std::optional<PenalizedSolution> prev;
  for (double n = 1.0; n <= opts.n_max; n *= 2.0) {
    FixedPointOptions fo = opts.fixed_point;
    if (prev) fo.extra_starts.insert(fo.extra_starts.begin(), prev->m);
    auto pen = solve_penalized(n, L, F, fo);
    SelectionRow row;
    row.n = n;
    row.penalized_value = pen.value();
    row.bracketed = pen.value() > e_target;
    if (row.bracketed) {
      auto target = build_target(e_target, L, F, planner, pen, opts.target);
      auto eN = compute_eN(N, target, F);
      row.eN = eN.eN;
      row.bound = -lambda0 + expected_empirical_F(F, pen.m, N - 1) - opts.margin;
      row.satisfied = row.eN <= row.bound;
      rows.push_back(row);
      if (row.satisfied) return Selection{std::move(pen), std::move(target), eN, std::move(rows)};
    } else {
      rows.push_back(row);
    }
    prev = std::move(pen);
  }
  throw SolverError("penalization ladder exhausted up to n = " + format_double(opts.n_max) +
                    "; the target is too close to e_max for N = " + std::to_string(N));
}

}  // namespace mfl
