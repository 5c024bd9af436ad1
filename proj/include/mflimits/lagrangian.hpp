#pragma once

#include <optional>

#include "mflimits/torus.hpp"

namespace mfl {

/// Quadratic Lagrangian L(a, x) = a^2 / 2 + l(x) + c0 with l + c0 >= 0.
///
/// The conjugate is H(p, x) = sup_a (-a p - L(a, x)) = p^2 / 2 - l(x) - c0 and
/// H_p(p, x) = p, so optimal feedback drifts are a = -p.
class Lagrangian {
 public:
  /// offset == nullopt picks the smallest c0 >= 0 with l + c0 >= 0 on the grid.
  explicit Lagrangian(GridField potential, std::optional<double> offset = std::nullopt);

  const TorusGrid& grid() const noexcept { return potential_.grid(); }
  const GridField& potential() const noexcept { return potential_; }
  double offset() const noexcept { return offset_; }

  /// l(x_i) + c0.
  double state_cost(int i) const noexcept { return potential_[i] + offset_; }
  double state_cost_at(double x) const noexcept { return potential_.interpolate(x) + offset_; }
  double running_cost(double a, int i) const noexcept { return 0.5 * a * a + state_cost(i); }
  double running_cost_at(double a, double x) const noexcept { return 0.5 * a * a + state_cost_at(x); }
  double hamiltonian(double p, int i) const noexcept { return 0.5 * p * p - state_cost(i); }
  static double hamiltonian_p(double p) noexcept { return p; }

  /// l + c0 as a field.
  GridField state_cost_field() const;

 private:
  GridField potential_;
  double offset_;
};

/// Discrete stationary cost sum_i h [ a_i^2 M(m_i, m_{i+1}) / 2 + (l_i + c0) m_i ].
///
/// M is the face weight (logmean(sqrt a, sqrt b))^2. With it, the cost of the
/// gradient drift D^+ log(m) / 2 is exactly the discrete Fisher information
/// sum_i h (D^+ sqrt m)_i^2 / 2, which makes the discrete problem inherit the
/// duality with the ergodic constant.
double stationary_cost(const ProbabilityGrid& m, const GridDrift& drift, const Lagrangian& L);

/// Kinetic part only.
double kinetic_energy(const ProbabilityGrid& m, const GridDrift& drift);

/// (logmean(sqrt a, sqrt b))^2, the kinetic face weight.
double kinetic_face_weight(double a, double b) noexcept;

}  // namespace mfl
