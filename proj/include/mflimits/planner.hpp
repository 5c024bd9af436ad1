#pragma once

// Stationary systems with a measure-dependent source:
//   -1/2 Δu + H(Du, x) = lambda + c dF/dm(m, x),   m invariant for -Du,
// with c = 1 for the social planner and c = -n for the penalised problems.
// Their solutions are the critical points of
//   E_c(m) = min over stationary drifts of int L(alpha, x) dm + c F(m).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mflimits/coupling.hpp"
#include "mflimits/ergodic.hpp"

namespace mfl {

struct FixedPointOptions {
  double tau = 0.1;
  double w1_tolerance = 1e-9;
  int max_iterations = 4000;
  /// Newton refinement of the stationarity system once W1(m, m+) drops below
  /// this; the W1 tolerance is then checked on the refined point.
  double polish_below = 1e-5;
  bool polish = true;
  int starts = 5;
  std::uint64_t seed = 20240611;
  /// Tried before the generated starts (e.g. a neighbouring ladder solution).
  std::vector<ProbabilityGrid> extra_starts;
  HjbOptions hjb;
};

struct FixedPointRecord {
  int start = 0;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  double w1_gap = 0.0;
  double objective = 0.0;
  double F_value = 0.0;
};

struct CoupledSolution {
  double coefficient = 1.0;  ///< c in the source term c dF/dm
  GridField u;
  double lambda = 0.0;
  ProbabilityGrid m;
  GridDrift alpha;
  double kinetic = 0.0;  ///< int L(alpha, x) dm, state cost included
  double F_value = 0.0;
  double objective = 0.0;  ///< kinetic + coefficient * F_value
  double hjb_residual = 0.0;
  double fp_residual = 0.0;
  std::vector<FixedPointRecord> fixed_points;

  /// Payoff int L(alpha) dm + F(m).
  double value() const noexcept { return kinetic + F_value; }
  double penalization() const noexcept { return -coefficient; }
};

using PlannerSolution = CoupledSolution;
using PenalizedSolution = CoupledSolution;

/// Damped fixed-point iteration with multistart; returns the lowest-objective
/// fixed point found. Throws SolverError if no start converges.
CoupledSolution solve_coupled(const Lagrangian& L, const CouplingFunctional& F, double coefficient,
                              const FixedPointOptions& opts = {});

/// Social planner: e_min = solution.value().
PlannerSolution solve_planner(const Lagrangian& L, const CouplingFunctional& F, const FixedPointOptions& opts = {});

/// Penalised problem with source -n dF/dm.
PenalizedSolution solve_penalized(double n, const Lagrangian& L, const CouplingFunctional& F,
                                  const FixedPointOptions& opts = {});

struct PrimalOracleResult {
  bool applicable = false;
  std::string note;
  double value = 0.0;
  ProbabilityGrid m;
  double flux = 0.0;
  long iterations = 0;
};

/// e_min from the convex (m, w) formulation with w = m alpha:
///   min sum_i h [ w_i^2 / (2 mbar_i) + (l_i + c0) m_i ] + F(m)
/// subject to w = 1/2 D^+ m + J (discrete 1/2 Δm = div w), mbar the
/// arithmetic face mean, by accelerated projected gradient on the simplex.
/// Flags itself inapplicable when F is not convex.
PrimalOracleResult primal_oracle(const Lagrangian& L, const CouplingFunctional& F, long max_iterations = 200000);

struct LadderRow {
  double n = 0.0;
  double F_value = 0.0;
  double kinetic = 0.0;
  double objective = 0.0;
  double max_drift = 0.0;
};

/// Penalised solutions along n = 1, 2, 4, ..., n_max, each warm-started from
/// the previous one.
std::vector<PenalizedSolution> penalized_ladder(const Lagrangian& L, const CouplingFunctional& F, double n_max,
                                                const FixedPointOptions& opts = {});
std::vector<LadderRow> ladder_rows(const std::vector<PenalizedSolution>& ladder);
std::string ladder_csv(const std::vector<LadderRow>& rows);

}  // namespace mfl
