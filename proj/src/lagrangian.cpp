#include "mflimits/lagrangian.hpp"

#include <algorithm>
#include <cmath>

#include "mflimits/errors.hpp"

namespace mfl {

Lagrangian::Lagrangian(GridField potential, std::optional<double> offset)
    : potential_(std::move(potential)), offset_(0.0) {
  const double lo = potential_.min();
  offset_ = offset.value_or(std::max(0.0, -lo));
  if (offset_ < 0.0) throw ConfigError("Lagrangian offset must be nonnegative");
  if (lo + offset_ < -1e-12) {
    throw ConfigError("Lagrangian offset too small: l + c0 must be nonnegative");
  }
}

GridField Lagrangian::state_cost_field() const {
  GridField out = potential_;
  for (int i = 0; i < out.size(); ++i) out[i] += offset_;
  return out;
}

double kinetic_face_weight(double a, double b) noexcept {
  const double ra = std::sqrt(a);
  const double rb = std::sqrt(b);
  if (ra == 0.0 || rb == 0.0) return 0.0;
  const double t = std::log(rb / ra);
  if (std::abs(t) < 1e-6) {
    // logmean(x, y) = sqrt(xy) (1 + t^2 / 24 + ...), t = log(y / x).
    const double g = std::sqrt(ra * rb);
    const double lm = g * (1.0 + t * t / 24.0);
    return lm * lm;
  }
  const double lm = (rb - ra) / t;
  return lm * lm;
}

double kinetic_energy(const ProbabilityGrid& m, const GridDrift& drift) {
  if (!(m.grid() == drift.grid())) throw ConfigError("kinetic_energy: grid mismatch");
  const TorusGrid& g = m.grid();
  double s = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    s += 0.5 * drift[i] * drift[i] * kinetic_face_weight(m[i], m[g.wrap(i + 1)]);
  }
  return s * g.h();
}

double stationary_cost(const ProbabilityGrid& m, const GridDrift& drift, const Lagrangian& L) {
  if (!(m.grid() == L.grid())) throw ConfigError("stationary_cost: grid mismatch");
  double s = 0.0;
  for (int i = 0; i < m.size(); ++i) s += L.state_cost(i) * m[i];
  return kinetic_energy(m, drift) + s * m.grid().h();
}

}  // namespace mfl
