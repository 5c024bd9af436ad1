#pragma once

// Stationary solvers on the 1-D torus and their independent oracles.
//
// Discretisation used throughout:
//  * HJB: -1/2 Δu + 1/2 |Du|^2 is discretised in Cole-Hopf form
//      (e^{-(u_{i+1}-u_i)} + e^{-(u_{i-1}-u_i)} - 2) / (2 h^2),
//    the exact image of the centred Laplacian under w = e^{-u}. The scheme is
//    monotone and second-order consistent.
//  * Fokker-Planck: conservative Scharfetter-Gummel (exponential fitting)
//    fluxes with the drift on faces. For a face drift -D^+u the discrete
//    invariant measure is exactly proportional to e^{-2u}.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mflimits/lagrangian.hpp"
#include "mflimits/torus.hpp"

namespace mfl {

struct IterationRecord {
  int iteration = 0;
  double residual = 0.0;
  double lambda = 0.0;
  const char* method = "";
};

using IterationObserver = std::function<void(const IterationRecord&)>;

struct HjbOptions {
  double tolerance = 1e-10;
  int max_newton_iterations = 200;
  /// Long-time fallback: implicit steps of the evolution problem.
  int max_evolution_steps = 20000;
  double evolution_dt = 0.25;
  /// Skip Newton and go straight to the evolution fallback.
  bool evolution_only = false;
  std::optional<GridField> initial_guess;
  IterationObserver observer;
};

struct ErgodicSolution {
  GridField u;  ///< sum(u) h == 0
  double lambda = 0.0;
  double residual = 0.0;  ///< sup norm of the discrete HJB residual
  int iterations = 0;
  std::string method;
  std::vector<double> residual_history;
};

/// Solves -1/2 Δu + H(Du, x) = lambda + f, i.e.
/// -1/2 Δu + 1/2 |Du|^2 - l - c0 = lambda + f, normalised to zero mean.
///
/// Damped Newton on (u, lambda); if Newton stalls, falls back to the
/// long-time evolution u_t = 1/2 Δu - H(Du, x) + f, whose growth rate is
/// -lambda. Throws SolverError with the residual history if both fail.
ErgodicSolution solve_ergodic_hjb(const Lagrangian& L, const GridField& f, const HjbOptions& opts = {});

/// Residual of the discrete HJB at (u, lambda), evaluated directly.
GridField hjb_residual(const Lagrangian& L, const GridField& f, const GridField& u, double lambda);
double sup_norm(const GridField& r);

struct FpOptions {
  double tolerance = 1e-12;  ///< relative to the rate scale 1 / h^2
  int max_iterations = 50;
};

struct StationaryMeasure {
  ProbabilityGrid mu;
  double residual = 0.0;  ///< sup norm of the discrete Fokker-Planck residual
  int iterations = 0;
};

/// Invariant measure of dX = drift(X) dt + dB: the positive null vector of
/// the Scharfetter-Gummel generator, by shifted inverse power iteration.
StationaryMeasure solve_invariant_measure(const GridDrift& drift, const FpOptions& opts = {});

/// Discrete -1/2 Δmu + div(mu drift) in flux form.
GridField fokker_planck_residual(const ProbabilityGrid& mu, const GridDrift& drift);

/// Jump rates across face i (cell i -> i+1 and cell i+1 -> i) for a face
/// drift b under unit noise.
struct FaceRates {
  double right;
  double left;
};
FaceRates scharfetter_gummel_rates(double b, double h) noexcept;

struct EigenOracle {
  double lambda = 0.0;
  GridField w;  ///< positive, max w == 1
  /// -log w, recentred to zero mean.
  GridField potential() const;
  /// w^2, normalised: the invariant measure of the optimal drift.
  ProbabilityGrid squared_density() const;
};

/// Principal eigenpair of the symmetric matrix 1/2 Δ_h - (l + c0 + f).
///
/// Independent of solve_ergodic_hjb: a dense symmetric eigensolve instead of
/// a nonlinear iteration. The largest eigenvalue equals the ergodic constant.
EigenOracle principal_eigen_oracle(const Lagrangian& L, const GridField* f = nullptr);

struct MdpOptions {
  double tolerance = 1e-9;
  long max_iterations = 5'000'000;
};

struct MdpResult {
  double value = 0.0;  ///< optimal long-run average cost
  double lower = 0.0;  ///< Odoni bounds at termination
  double upper = 0.0;
  long iterations = 0;
  std::vector<double> policy;  ///< optimal action per cell
};

/// `count` equally spaced actions on [-a_max, a_max].
std::vector<double> action_grid(double a_max, int count);

/// Minimum of the average Lagrangian over discrete closed measures.
///
/// Closed measures on (action, state) are the occupation measures of
/// stationary controlled chains whose generator approximates 1/2 Δ + a D.
/// The minimum is found as an average-cost MDP by relative value iteration
/// on the uniformised chain. Throws SolverError if it does not converge.
MdpResult closed_measure_min_oracle(const Lagrangian& L, std::span<const double> actions,
                                    const MdpOptions& opts = {});

struct OptimalDrift {
  GridDrift alpha;
  GridField psi;  ///< alpha = D^+ psi, zero mean
  double cost = 0.0;
  double flux = 0.0;  ///< constant probability flux of the solution (0 up to roundoff)
};

/// Minimal-energy drift keeping m stationary.
///
/// Solves the discrete version of div(m Dpsi) = 1/2 Δm for a periodic psi:
/// in 1-D the flux through every face is a common constant J; each face
/// drift is recovered from J by inverting the Scharfetter-Gummel flux, and J
/// is fixed by requiring sum(alpha) h == 0 so that alpha is a gradient.
/// Throws ConfigError if m vanishes somewhere.
OptimalDrift optimal_stationary_drift(const ProbabilityGrid& m, const Lagrangian& L);

}  // namespace mfl
