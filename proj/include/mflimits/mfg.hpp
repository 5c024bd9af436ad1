#pragma once

#include <cstdint>
#include <string>

#include "mflimits/coupling.hpp"
#include "mflimits/ergodic.hpp"

namespace mfl {

struct MfgEquilibrium {
  double lambda0 = 0.0;
  GridField u0;
  ProbabilityGrid mu0;
  double F_mu0 = 0.0;
  double e_mfg = 0.0;  ///< -lambda0 + F(mu0)
  double e_max = 0.0;  ///< -lambda0 + max F
  bool e_max_certified = false;
  std::string e_max_method;
  double hjb_residual = 0.0;
  double fp_residual = 0.0;
  int hjb_iterations = 0;
};

/// The ergodic MFG equilibrium. Since F(mu) does not depend on x the system
/// decouples: u0 solves the HJB with zero source and mu0 is invariant for -Du0.
MfgEquilibrium solve_mfg(const Lagrangian& L, const CouplingFunctional& F, const HjbOptions& opts = {});

struct MfgResidual {
  double hjb = 0.0;
  double fp = 0.0;
};

/// Residuals of the coupled system
///   -1/2 Δu + H(Du, x) = lambda + F(mu),   -1/2 Δmu - div(mu H_p(Du, x)) = 0
/// at a given triple.
MfgResidual mfg_system_residual(const Lagrangian& L, const CouplingFunctional& F, const GridField& u,
                                double lambda, const ProbabilityGrid& mu);

struct UniquenessProbe {
  int starts = 0;
  double max_lambda_spread = 0.0;
  double max_w1_spread = 0.0;  ///< max over starts of W1(mu, mu0)
};

/// Fixed-point iteration on the coupled system from `starts` random initial
/// measures; reports how far the limits are from each other.
UniquenessProbe mfg_uniqueness_probe(const Lagrangian& L, const CouplingFunctional& F, int starts,
                                     std::uint64_t seed, int max_iterations = 50);

}  // namespace mfl
