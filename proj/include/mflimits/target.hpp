#pragma once

// Stationary pairs (m_hat, alpha_hat) with a prescribed payoff, the trigger
// tolerance delta, and the N-player payoff e^N of the conforming profile.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mflimits/coupling.hpp"
#include "mflimits/ergodic.hpp"
#include "mflimits/planner.hpp"

namespace mfl {

/// Point of the homotopy phi = (1 - s) u_tilde + s u_n between the planner
/// and a penalised solution.
struct HomotopyState {
  double s = 0.0;
  GridField phi;
  GridDrift alpha;  ///< -D phi
  ProbabilityGrid m;  ///< invariant measure of alpha
  double kinetic = 0.0;
  double F_value = 0.0;
  double value() const noexcept { return kinetic + F_value; }
};

HomotopyState homotopy_at(const Lagrangian& L, const CouplingFunctional& F, const PlannerSolution& planner,
                          const PenalizedSolution& penalized, double s);

struct CurvePoint {
  double s = 0.0;
  double value = 0.0;
  double kinetic = 0.0;
  double F_value = 0.0;
  double max_drift = 0.0;
  double min_density = 0.0;
};

/// value(s) on `points` equally spaced s in [0, 1].
std::vector<CurvePoint> homotopy_curve(const Lagrangian& L, const CouplingFunctional& F,
                                       const PlannerSolution& planner, const PenalizedSolution& penalized,
                                       int points = 21);
std::string curve_csv(const std::vector<CurvePoint>& curve);

struct TargetOptions {
  double tolerance = 1e-5;
  int max_bisections = 60;
};

struct TargetPair {
  double e = 0.0;
  double lambda_star = 0.0;
  ProbabilityGrid m_hat;
  GridDrift alpha_hat;
  GridField phi;
  double value = 0.0;
  double kinetic = 0.0;  ///< int L(alpha_hat) dm_hat
  double F_value = 0.0;
  int bisections = 0;
  double penalization = 0.0;  ///< n of the penalised endpoint
  std::vector<CurvePoint> trace;  ///< bisection iterates
};

/// Bisection on s for value(s) = e. Requires value(0) <= e < value(1);
/// throws ConfigError naming the violated end otherwise.
TargetPair build_target(double e, const Lagrangian& L, const CouplingFunctional& F, const PlannerSolution& planner,
                        const PenalizedSolution& penalized, const TargetOptions& opts = {});

struct CalibrationOptions {
  int samples = 200;
  int holdout = 50;
  double s_max = 1.0;
  double s_min = 1e-4;
  double cap = 0.1;
  double floor = 1e-4;
  std::uint64_t seed = 7;
};

struct CalibrationSample {
  double s = 0.0;
  bool spike = false;
  double w1 = 0.0;
  double cost = 0.0;
};

struct Calibration {
  double delta = 0.0;
  double epsilon = 0.0;
  double base_cost = 0.0;  ///< c(m_hat)
  std::vector<CalibrationSample> samples;
  std::vector<CalibrationSample> holdout;
  int holdout_checked = 0;     ///< holdout samples within delta
  int holdout_violations = 0;  ///< of those, how many break the bound
  bool heuristic = true;
};

/// Largest delta in {cap, cap/2, ...} >= floor such that every sampled
/// perturbation m' of m_hat with W1(m', m_hat) <= delta has
/// c(m') >= c(m_hat) - epsilon / 3, where c is the optimal stationary cost.
/// Perturbations mix m_hat with random smooth densities and single-cell
/// spikes. Throws SolverError when no ladder value qualifies.
Calibration calibrate_delta(double epsilon, const TargetPair& target, const Lagrangian& L,
                            const CalibrationOptions& opts = {});

/// E[F(empirical measure of M iid draws from m)] for draws at cell centres.
/// Exact for linear and convolution parts:
///   (1 - 1/M) F(m) + (1/M) [offset + linear(m) + sum w K(0)].
double expected_empirical_F(const CouplingFunctional& F, const ProbabilityGrid& m, int M);

struct MonteCarloF {
  double mean = 0.0;
  double stderr_ = 0.0;
  int draws = 0;
};
MonteCarloF monte_carlo_empirical_F(const CouplingFunctional& F, const ProbabilityGrid& m, int M, int draws,
                                    std::uint64_t seed);

enum class EnMethod { Auto, ClosedForm, MonteCarlo };

struct EnResult {
  int N = 0;
  double kinetic = 0.0;
  double expected_F = 0.0;
  double eN = 0.0;
  double stderr_ = 0.0;  ///< zero for the closed form
  std::string method;
};

/// e^N = int L(alpha_hat) dm_hat + E[F(empirical of N - 1 iid m_hat draws)].
EnResult compute_eN(int N, const TargetPair& target, const CouplingFunctional& F, EnMethod method = EnMethod::Auto,
                    int draws = 10000, std::uint64_t seed = 99);

struct SelectionRow {
  double n = 0.0;
  double penalized_value = 0.0;
  bool bracketed = false;
  double eN = 0.0;
  double bound = 0.0;  ///< -lambda0 + E[F(emp of N - 1 iid m_n)] - margin
  bool satisfied = false;
};

struct Selection {
  PenalizedSolution penalized;
  TargetPair target;
  EnResult eN;
  std::vector<SelectionRow> rows;
};

struct SelectionOptions {
  double margin = 0.01;
  double n_max = 16384.0;
  FixedPointOptions fixed_point;
  TargetOptions target;
};

/// Walks n = 1, 2, 4, ... and returns the first n whose target satisfies
///   e^N <= -lambda0 + E[F(empirical of N - 1 iid m_n)] - margin.
/// Throws ConfigError if e_target >= e_max and SolverError if the ladder is
/// exhausted.
Selection select_penalization(double e_target, int N, double lambda0, double e_max, const Lagrangian& L,
                              const CouplingFunctional& F, const PlannerSolution& planner,
                              const SelectionOptions& opts = {});

}  // namespace mfl
