#include <cmath>
#include <cstdio>
#include <functional>

#include "mflimits/errors.hpp"
#include "mflimits/experiment.hpp"
#include "mflimits/serialize.hpp"

namespace mfl {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

Lagrangian cosine_lagrangian(int n) {
  TrigSeries l;
  l.cos_coeffs = {0.5};
  return Lagrangian(l.sample(TorusGrid(n)));
}

CouplingFunctional cosine_coupling(int n) {
  TrigSeries k;
  k.cos_coeffs = {1.0};
  return CouplingFunctional::convolution(TorusGrid(n), k, 0.5);
}

void run_check(std::vector<SelftestCheck>& out, const std::string& name, const std::function<SelftestCheck()>& fn) {
  SelftestCheck c;
  try {
    c = fn();
  } catch (const std::exception& e) {
    c.pass = false;
    c.detail = std::string("threw: ") + e.what();
  }
  c.name = name;
  out.push_back(std::move(c));
}

}  // namespace

bool SelftestReport::pass() const noexcept {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return !checks.empty();
}

std::string SelftestReport::summary() const {
  std::string out;
  int failed = 0;
  for (const auto& c : checks) {
    out += (c.pass ? "PASS " : "FAIL ") + c.name + ": " + c.detail + '\n';
    failed += c.pass ? 0 : 1;
  }
  out += "selftest: " + std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) + " passed\n";
  return out;
}

SelftestReport selftest(const SelftestOptions& opts) {
  SelftestReport rep;
  auto& out = rep.checks;

  run_check(out, "torus-projection", [] {
    const double a = project_to_torus(0.25), b = project_to_torus(-0.25), c = project_to_torus(3.5);
    return SelftestCheck{"", a == 0.25 && b == 0.75 && c == 0.5,
                         format_double(a) + ", " + format_double(b) + ", " + format_double(c)};
  });

  run_check(out, "w1-point-masses", [] {
    const TorusGrid g(20);
    const double d1 = wasserstein1_circle(ProbabilityGrid::point_mass(g, 2), ProbabilityGrid::point_mass(g, 8));
    const double d2 = wasserstein1_circle(ProbabilityGrid::point_mass(g, 1), ProbabilityGrid::point_mass(g, 19));
    return SelftestCheck{"", std::abs(d1 - 0.3) < 1e-12 && std::abs(d2 - 0.1) < 1e-12,
                         "W1 = " + format_double(d1) + " and " + format_double(d2) + " (expected 0.3, 0.1)"};
  });

  run_check(out, "coupling-uniform", [] {
    const auto F = cosine_coupling(64);
    const double v = F.value(ProbabilityGrid::uniform(F.grid())) - F.offset();
    return SelftestCheck{"", std::abs(v) < 1e-12, "F(uniform) - offset = " + sci(v)};
  });

  run_check(out, "hjb-eigen-agreement", [&] {
    const auto L = cosine_lagrangian(128);
    HjbOptions ho;
    ho.tolerance = opts.hjb_tolerance;
    const auto sol = solve_ergodic_hjb(L, GridField(L.grid()), ho);
    const auto eig = principal_eigen_oracle(L);
    const double gap = std::abs(sol.lambda - eig.lambda);
    return SelftestCheck{"", gap <= 1e-8, "|lambda_hjb - lambda_eig| = " + sci(gap) + " (limit 1e-8)"};
  });

  run_check(out, "hjb-residual", [&] {
    const auto L = cosine_lagrangian(128);
    HjbOptions ho;
    ho.tolerance = opts.hjb_tolerance;
    const GridField zero(L.grid());
    const auto sol = solve_ergodic_hjb(L, zero, ho);
    const double r = sup_norm(hjb_residual(L, zero, sol.u, sol.lambda));
    return SelftestCheck{"", r <= 1e-8, "sup residual = " + sci(r) + " (limit 1e-8)"};
  });

  run_check(out, "gibbs-invariant-measure", [&] {
    const auto L = cosine_lagrangian(128);
    HjbOptions ho;
    ho.tolerance = opts.hjb_tolerance;
    const auto sol = solve_ergodic_hjb(L, GridField(L.grid()), ho);
    const auto mu = solve_invariant_measure(GridDrift::minus_gradient(sol.u)).mu;
    std::vector<double> w(mu.size());
    for (int i = 0; i < mu.size(); ++i) w[i] = std::exp(-2.0 * sol.u[i]);
    const auto gibbs = ProbabilityGrid::normalized(L.grid(), std::move(w));
    const double d = l1_distance(mu, gibbs);
    return SelftestCheck{"", d <= 1e-8, "L1(mu0, exp(-2 u0) / Z) = " + sci(d) + " (limit 1e-8)"};
  });

  run_check(out, "mfg-flat", [] {
    const TorusGrid g(32);
    const Lagrangian L{GridField(g)};
    const auto F = CouplingFunctional::linear(GridField(g));
    const auto m = solve_mfg(L, F);
    const double d = l1_distance(m.mu0, ProbabilityGrid::uniform(g));
    return SelftestCheck{"", std::abs(m.lambda0) < 1e-12 && d < 1e-12,
                         "lambda0 = " + sci(m.lambda0) + ", L1(mu0, uniform) = " + sci(d)};
  });

  run_check(out, "planner-primal-oracle", [] {
    const auto L = cosine_lagrangian(64);
    const auto F = cosine_coupling(64);
    const auto p = solve_planner(L, F);
    const auto o = primal_oracle(L, F);
    const double gap = std::abs(p.value() - o.value);
    return SelftestCheck{"", o.applicable && gap <= 1e-4, "|e_min - primal| = " + sci(gap) + " (limit 1e-4)"};
  });

  run_check(out, "payoff-band-order", [] {
    const auto L = cosine_lagrangian(64);
    const auto F = cosine_coupling(64);
    const auto m = solve_mfg(L, F);
    const auto p = solve_planner(L, F);
    const bool ok = p.value() < m.e_mfg && m.e_mfg <= m.e_max && p.value() >= -m.lambda0;
    return SelftestCheck{"", ok,
                         "e_min = " + format_double(p.value()) + ", e_mfg = " + format_double(m.e_mfg) +
                             ", e_max = " + format_double(m.e_max)};
  });

  run_check(out, "eN-linear-coupling", [] {
    const TorusGrid g(32);
    TrigSeries s;
    s.constant = 1.0;
    s.cos_coeffs = {0.5};
    const auto F = CouplingFunctional::linear(s.sample(g));
    TrigSeries d;
    d.cos_coeffs = {0.3};
    std::vector<double> w;
    for (int i = 0; i < g.size(); ++i) w.push_back(std::exp(d(g.node(i))));
    const auto m = ProbabilityGrid::normalized(g, w);
    double worst = 0.0;
    for (int M : {1, 7, 31}) worst = std::max(worst, std::abs(expected_empirical_F(F, m, M) - F.value(m)));
    return SelftestCheck{"", worst <= 1e-12, "max |E[F(emp)] - F(m)| = " + sci(worst)};
  });

  run_check(out, "flat-preset-guard", [] {
    auto cfg = ExperimentConfig::preset_config("flat");
    cfg.n_cells = 32;
    Experiment ex(cfg);
    try {
      ex.target_payoff();
    } catch (const PipelineStop& stop) {
      return SelftestCheck{"", true, "stopped after planner: empty payoff band"};
    }
    return SelftestCheck{"", false, "flat instance produced a nonempty payoff band"};
  });

  run_check(out, "config-round-trip", [] {
    auto a = ExperimentConfig::preset_config("paper-instance");
    a.e = 0.7;
    a.sweep_N = {4, 9};
    const auto b = ExperimentConfig::parse(a.to_text());
    return SelftestCheck{"", a == b && b.to_text() == a.to_text(), "resolved config re-parses to the same plan"};
  });

  run_check(out, "brownian-increments", [] {
    const TorusGrid g(16);
    const auto u = ProbabilityGrid::uniform(g);
    const TriggerParams p{1e9, 1.0, GridDrift(g), GridDrift(g), u, 1.0};
    auto s = initial_state(2, u, 1e-3, 5, 0);
    std::vector<double> scratch;
    const auto lazy = DeviationPolicy::lazy(g);
    double sum2 = 0.0;
    const int steps = 100000;
    for (int k = 0; k < steps; ++k) {
      const double x = s.positions[0];
      step(s, p, lazy, scratch);
      const double d = torus_displacement(x, s.positions[0]);
      sum2 += d * d;
    }
    const double ratio = sum2 / steps / 1e-3;
    return SelftestCheck{"", std::abs(ratio - 1.0) <= 0.05, "variance / dt = " + format_double(ratio)};
  });

  run_check(out, "trigger-replay", [] {
    const auto L = cosine_lagrangian(64);
    const auto sol = solve_ergodic_hjb(L, GridField(L.grid()));
    const auto conform = GridDrift::minus_gradient(sol.u);
    const auto m_hat = solve_invariant_measure(conform).mu;
    const TriggerParams p{0.5, 0.05, conform, GridDrift(L.grid()), m_hat, 0.25};
    SimConfig c;
    c.N = 4;
    c.horizon = 3.0;
    c.burn_in = 1.0;
    c.n_runs = 1;
    c.record_stride = 1;
    const auto F = cosine_coupling(64);
    const auto rep = estimate_payoffs(c, L, F, p, DeviationPolicy::lazy(L.grid()), m_hat);
    const auto back = recording_from_csv(recording_csv(rep.recording));
    const double theta = replay_theta(back, c.N, c.dt, p);
    const double orig = rep.runs[0].theta;
    const bool ok = (theta == orig) && (orig >= p.T);
    return SelftestCheck{"", ok, "theta = " + format_double(orig) + ", replayed " + format_double(theta)};
  });

  return rep;
}

}  // namespace mfl
