#include "mflimits/mfg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mflimits/errors.hpp"

namespace mfl {

MfgEquilibrium solve_mfg(const Lagrangian& L, const CouplingFunctional& F, const HjbOptions& opts) {
  if (!(L.grid() == F.grid())) throw ConfigError("MFG: Lagrangian and coupling on different grids");
  const TorusGrid& g = L.grid();
  const auto sol = solve_ergodic_hjb(L, GridField(g), opts);
  const auto alpha = GridDrift::minus_gradient(sol.u);
  auto sm = solve_invariant_measure(alpha);

  MfgEquilibrium eq{sol.lambda, sol.u, sm.mu, 0.0, 0.0, 0.0, false, "", 0.0, 0.0, 0};
  eq.F_mu0 = F.value(eq.mu0);
  eq.e_mfg = -eq.lambda0 + eq.F_mu0;
  const auto mx = max_F(F);
  eq.e_max = -eq.lambda0 + mx.value;
  eq.e_max_certified = mx.certified;
  eq.e_max_method = mx.method;
  eq.hjb_iterations = sol.iterations;

  // lambda in the coupled system is lambda0 - F(mu0).
  const auto r = mfg_system_residual(L, F, eq.u0, eq.lambda0 - eq.F_mu0, eq.mu0);
  eq.hjb_residual = r.hjb;
  eq.fp_residual = r.fp;
  if (eq.e_mfg > eq.e_max + 1e-12) {
    throw InvariantError("MFG: e_mfg exceeds e_max (max F not attained by the search)");
  }
  return eq;
}

MfgResidual mfg_system_residual(const Lagrangian& L, const CouplingFunctional& F, const GridField& u,
                                double lambda, const ProbabilityGrid& mu) {
  const double Fm = F.value(mu);
  const GridField f(L.grid(), std::vector<double>(L.grid().size(), Fm));
  MfgResidual r;
  r.hjb = sup_norm(hjb_residual(L, f, u, lambda));
  r.fp = sup_norm(fokker_planck_residual(mu, GridDrift::minus_gradient(u)));
  return r;
}

UniquenessProbe mfg_uniqueness_probe(const Lagrangian& L, const CouplingFunctional& F, int starts,
                                     std::uint64_t seed, int max_iterations) {
  const TorusGrid& g = L.grid();
  const auto ref = solve_mfg(L, F);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  UniquenessProbe probe;
  probe.starts = starts;
  for (int s = 0; s < starts; ++s) {
    std::vector<double> w(g.size());
    for (double& v : w) v = U(rng);
    ProbabilityGrid mu = ProbabilityGrid::normalized(g, std::move(w));
    double lambda = 0.0;
    for (int it = 0; it < max_iterations; ++it) {
      const double Fm = F.value(mu);
      const GridField f(g, std::vector<double>(g.size(), Fm));
      const auto sol = solve_ergodic_hjb(L, f);
      const auto next = solve_invariant_measure(GridDrift::minus_gradient(sol.u)).mu;
      // report lambda0 = lambda + F(mu) so that runs are comparable
      lambda = sol.lambda + Fm;
      const double d = wasserstein1_circle(mu, next);
      mu = next;
      if (d <= 1e-14) break;
    }
    probe.max_lambda_spread = std::max(probe.max_lambda_spread, std::abs(lambda - ref.lambda0));
    probe.max_w1_spread = std::max(probe.max_w1_spread, wasserstein1_circle(mu, ref.mu0));
  }
  return probe;
}

}  // namespace mfl
