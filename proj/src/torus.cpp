#include "mflimits/torus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mflimits/errors.hpp"

namespace mfl {

TorusGrid::TorusGrid(int n_cells) : n_(n_cells), h_(0.0) {
  if (n_cells < kMinCells) {
    throw ConfigError("TorusGrid needs at least " + std::to_string(kMinCells) + " cells, got " +
                      std::to_string(n_cells));
  }
  h_ = 1.0 / n_cells;
}

int TorusGrid::nearest_cell(double x) const noexcept {
  const double t = project_to_torus(x) * n_ - 0.5;
  // ceil(t - 1/2) picks the lower neighbour on exact ties; x == 0 lands on -1.
  int i = static_cast<int>(std::ceil(t - 0.5));
  if (i < 0) i = 0;
  if (i >= n_) i = n_ - 1;
  return i;
}

double project_to_torus(double x) noexcept {
  double r = x - std::floor(x);
  if (r >= 1.0) r = 0.0;
  return r;
}

double torus_displacement(double a, double b) noexcept {
  double d = project_to_torus(b - a);
  if (d >= 0.5) d -= 1.0;
  return d;
}

namespace {

void require_size(const TorusGrid& grid, std::size_t n, const char* what) {
  if (n != static_cast<std::size_t>(grid.size())) {
    throw ConfigError(std::string(what) + ": expected " + std::to_string(grid.size()) +
                      " values, got " + std::to_string(n));
  }
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvariantError(std::string(what) + " contains a non-finite value");
  }
}

double periodic_lerp(std::span<const double> v, double s) noexcept {
  // s is a fractional index; v is periodic with period v.size().
  const int n = static_cast<int>(v.size());
  const double fl = std::floor(s);
  const double w = s - fl;
  int i = static_cast<int>(fl) % n;
  if (i < 0) i += n;
  const int j = (i + 1 == n) ? 0 : i + 1;
  return (1.0 - w) * v[i] + w * v[j];
}

}  // namespace

GridField::GridField(TorusGrid grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  require_size(grid_, values_.size(), "GridField");
  require_finite(values_, "GridField");
}

double GridField::mean() const noexcept {
  return std::accumulate(values_.begin(), values_.end(), 0.0) / values_.size();
}

double GridField::min() const noexcept { return *std::min_element(values_.begin(), values_.end()); }
double GridField::max() const noexcept { return *std::max_element(values_.begin(), values_.end()); }

GridField GridField::centered() const {
  GridField out = *this;
  const double m = mean();
  for (double& v : out.values_) v -= m;
  return out;
}

double GridField::interpolate(double x) const noexcept {
  return periodic_lerp(values_, project_to_torus(x) * grid_.size() - 0.5);
}

GridDrift::GridDrift(TorusGrid grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  require_size(grid_, values_.size(), "GridDrift");
  require_finite(values_, "GridDrift");
}

GridDrift GridDrift::constant(TorusGrid grid, double c) {
  return GridDrift(grid, std::vector<double>(grid.size(), c));
}

GridDrift GridDrift::minus_gradient(const GridField& u) {
  const TorusGrid& g = u.grid();
  std::vector<double> v(g.size());
  for (int i = 0; i < g.size(); ++i) v[i] = -(u[g.wrap(i + 1)] - u[i]) / g.h();
  return GridDrift(g, std::move(v));
}

double GridDrift::max_abs() const noexcept {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double GridDrift::interpolate(double x) const noexcept {
  return periodic_lerp(values_, project_to_torus(x) * grid_.size() - 1.0);
}

ProbabilityGrid::ProbabilityGrid(TorusGrid grid, std::vector<double> density)
    : grid_(grid), density_(std::move(density)) {
  require_size(grid_, density_.size(), "ProbabilityGrid");
  require_finite(density_, "ProbabilityGrid");
  double mass = 0.0;
  for (double d : density_) {
    if (d < 0.0) throw InvariantError("ProbabilityGrid has a negative density value");
    mass += d;
  }
  mass *= grid_.h();
  if (std::abs(mass - 1.0) > kMassTolerance) {
    throw InvariantError("ProbabilityGrid mass is " + std::to_string(mass) + ", expected 1");
  }
}

ProbabilityGrid ProbabilityGrid::normalized(TorusGrid grid, std::vector<double> weights) {
  require_size(grid, weights.size(), "ProbabilityGrid::normalized");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvariantError("ProbabilityGrid::normalized needs finite nonnegative weights");
    }
    total += w;
  }
  if (total <= 0.0) throw InvariantError("ProbabilityGrid::normalized got zero total weight");
  const double scale = 1.0 / (total * grid.h());
  for (double& w : weights) w *= scale;
  return ProbabilityGrid(grid, std::move(weights));
}

ProbabilityGrid ProbabilityGrid::uniform(TorusGrid grid) {
  return ProbabilityGrid(grid, std::vector<double>(grid.size(), 1.0));
}

ProbabilityGrid ProbabilityGrid::point_mass(TorusGrid grid, int cell) {
  std::vector<double> d(grid.size(), 0.0);
  d[grid.wrap(cell)] = static_cast<double>(grid.size());
  return ProbabilityGrid(grid, std::move(d));
}

double ProbabilityGrid::min() const noexcept {
  return *std::min_element(density_.begin(), density_.end());
}

ProbabilityGrid ProbabilityGrid::mix(const ProbabilityGrid& other, double s) const {
  if (!(grid_ == other.grid_)) throw ConfigError("ProbabilityGrid::mix: grid mismatch");
  std::vector<double> d(density_.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (1.0 - s) * density_[i] + s * other.density_[i];
  return normalized(grid_, std::move(d));
}

double l1_distance(const ProbabilityGrid& a, const ProbabilityGrid& b) {
  if (!(a.grid() == b.grid())) throw ConfigError("l1_distance: grid mismatch");
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s * a.grid().h();
}

namespace {

double w1_from_cdf_difference(const std::vector<double>& diff, double h) {
  std::vector<double> sorted = diff;
  const std::size_t mid = sorted.size() / 2;
  std::nth_element(sorted.begin(), sorted.begin() + mid, sorted.end());
  const double c = sorted[mid];
  double s = 0.0;
  for (double d : diff) s += std::abs(d - c);
  return s * h;
}

}  // namespace

double wasserstein1_circle(const ProbabilityGrid& mu, const ProbabilityGrid& nu) {
  if (!(mu.grid() == nu.grid())) throw ConfigError("wasserstein1_circle: grid mismatch");
  const double h = mu.grid().h();
  std::vector<double> diff(mu.size());
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    acc += (mu[i] - nu[i]) * h;
    diff[i] = acc;
  }
  return w1_from_cdf_difference(diff, h);
}

double wasserstein1_circle_weights(std::span<const double> weights, const ProbabilityGrid& nu,
                                   std::vector<double>& scratch) {
  const int n = nu.size();
  const double h = nu.grid().h();
  double total = 0.0;
  for (double w : weights) total += w;
  // First half holds the CDF difference, second half a copy for the median.
  scratch.resize(2 * static_cast<std::size_t>(n));
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += weights[i] / total - nu[i] * h;
    scratch[i] = acc;
    scratch[n + i] = acc;
  }
  auto sel = scratch.begin() + n;
  std::nth_element(sel, sel + n / 2, scratch.end());
  const double c = sel[n / 2];
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::abs(scratch[i] - c);
  return s * h;
}

ProbabilityGrid empirical_measure(const TorusGrid& grid, std::span<const double> points) {
  if (points.empty()) throw ConfigError("empirical_measure: empty point list");
  std::vector<double> w(grid.size(), 0.0);
  for (double x : points) w[grid.nearest_cell(x)] += 1.0;
  return ProbabilityGrid::normalized(grid, std::move(w));
}

double TrigSeries::operator()(double x) const noexcept {
  double v = constant;
  const double t = 2.0 * std::numbers::pi * x;
  for (std::size_t k = 0; k < cos_coeffs.size(); ++k) v += cos_coeffs[k] * std::cos((k + 1) * t);
  for (std::size_t k = 0; k < sin_coeffs.size(); ++k) v += sin_coeffs[k] * std::sin((k + 1) * t);
  return v;
}

GridField TrigSeries::sample(const TorusGrid& grid) const {
  std::vector<double> v(grid.size());
  for (int i = 0; i < grid.size(); ++i) v[i] = (*this)(grid.node(i));
  return GridField(grid, std::move(v));
}

bool TrigSeries::is_constant() const noexcept {
  auto zero = [](double c) { return c == 0.0; };
  return std::all_of(cos_coeffs.begin(), cos_coeffs.end(), zero) &&
         std::all_of(sin_coeffs.begin(), sin_coeffs.end(), zero);
}

}  // namespace mfl
