#pragma once

// Uniform cell-centred discretisation of the unit circle T = R/Z.
//
// Scalar quantities (value functions, potentials, densities) live at the cell
// centres x_i = (i + 1/2) h. Drift fields live on the staggered faces
// y_i = (i + 1) h between cell i and cell i + 1, which is where the
// conservative Fokker-Planck fluxes are evaluated.

#include <cstddef>
#include <span>
#include <vector>

namespace mfl {

class TorusGrid {
 public:
  static constexpr int kMinCells = 8;

  explicit TorusGrid(int n_cells);

  int size() const noexcept { return n_; }
  double h() const noexcept { return h_; }
  double node(int i) const noexcept { return (wrap(i) + 0.5) * h_; }
  double face(int i) const noexcept { return (wrap(i) + 1) * h_; }

  int wrap(int i) const noexcept {
    const int r = i % n_;
    return r < 0 ? r + n_ : r;
  }

  /// Cell whose centre is nearest to the torus point x; exact midpoints go to
  /// the lower index.
  int nearest_cell(double x) const noexcept;

  friend bool operator==(const TorusGrid& a, const TorusGrid& b) noexcept { return a.n_ == b.n_; }

 private:
  int n_;
  double h_;
};

/// x mod 1, in [0, 1).
double project_to_torus(double x) noexcept;

/// Signed shortest displacement from a to b on the circle, in [-1/2, 1/2).
double torus_displacement(double a, double b) noexcept;

class GridField {
 public:
  explicit GridField(TorusGrid grid) : grid_(grid), values_(grid.size(), 0.0) {}
  GridField(TorusGrid grid, std::vector<double> values);

  const TorusGrid& grid() const noexcept { return grid_; }
  int size() const noexcept { return grid_.size(); }
  double operator[](int i) const noexcept { return values_[i]; }
  double& operator[](int i) noexcept { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double mean() const noexcept;
  double min() const noexcept;
  double max() const noexcept;
  /// Copy shifted so that sum(values) * h == 0.
  GridField centered() const;
  /// Periodic linear interpolation between cell centres.
  double interpolate(double x) const noexcept;

 private:
  TorusGrid grid_;
  std::vector<double> values_;
};

/// Drift cap A_max. Constructed drifts above it are flagged, not clipped.
constexpr double kDriftCap = 8.0;

/// Velocity field sampled on the faces. values[i] is the drift at (i + 1) h.
class GridDrift {
 public:
  explicit GridDrift(TorusGrid grid) : grid_(grid), values_(grid.size(), 0.0) {}
  GridDrift(TorusGrid grid, std::vector<double> values);

  /// Constant drift c.
  static GridDrift constant(TorusGrid grid, double c);
  /// Face drift -D^+ u = -(u_{i+1} - u_i) / h.
  static GridDrift minus_gradient(const GridField& u);

  const TorusGrid& grid() const noexcept { return grid_; }
  int size() const noexcept { return grid_.size(); }
  double operator[](int i) const noexcept { return values_[i]; }
  double& operator[](int i) noexcept { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }

  double max_abs() const noexcept;
  bool within_cap(double cap) const noexcept { return max_abs() <= cap; }
  /// Periodic linear interpolation between faces.
  double interpolate(double x) const noexcept;

 private:
  TorusGrid grid_;
  std::vector<double> values_;
};

/// Nonnegative density with sum(density) * h == 1.
class ProbabilityGrid {
 public:
  static constexpr double kMassTolerance = 1e-12;

  /// Validates nonnegativity and unit mass; throws InvariantError otherwise.
  ProbabilityGrid(TorusGrid grid, std::vector<double> density);

  /// Rescales any nonnegative, not identically zero vector to unit mass.
  static ProbabilityGrid normalized(TorusGrid grid, std::vector<double> weights);
  static ProbabilityGrid uniform(TorusGrid grid);
  /// All mass in one cell (density 1/h there).
  static ProbabilityGrid point_mass(TorusGrid grid, int cell);

  const TorusGrid& grid() const noexcept { return grid_; }
  int size() const noexcept { return grid_.size(); }
  double operator[](int i) const noexcept { return density_[i]; }
  std::span<const double> density() const noexcept { return density_; }
  /// Cell probability density[i] * h.
  double mass(int i) const noexcept { return density_[i] * grid_.h(); }
  double min() const noexcept;

  /// (1 - s) * this + s * other.
  ProbabilityGrid mix(const ProbabilityGrid& other, double s) const;

 private:
  TorusGrid grid_;
  std::vector<double> density_;
};

double l1_distance(const ProbabilityGrid& a, const ProbabilityGrid& b);

/// 1-Wasserstein distance on the circle between two grid measures.
///
/// With D the cumulative difference of cell masses, W1 = min_c sum |D - c| h,
/// attained at c = median(D). Throws ConfigError on grid mismatch.
double wasserstein1_circle(const ProbabilityGrid& mu, const ProbabilityGrid& nu);

/// Same distance with mu given as raw cell weights (any positive total).
/// Used on hot paths where building a ProbabilityGrid per call is wasteful.
double wasserstein1_circle_weights(std::span<const double> weights, const ProbabilityGrid& nu,
                                   std::vector<double>& scratch);

/// Empirical measure of torus points, each binned to its nearest cell.
ProbabilityGrid empirical_measure(const TorusGrid& grid, std::span<const double> points);

/// c + sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x), k = 1, 2, ...
struct TrigSeries {
  double constant = 0.0;
  std::vector<double> cos_coeffs;
  std::vector<double> sin_coeffs;

  double operator()(double x) const noexcept;
  GridField sample(const TorusGrid& grid) const;
  bool is_constant() const noexcept;
};

}  // namespace mfl
