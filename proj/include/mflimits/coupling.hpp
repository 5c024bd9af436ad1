#pragma once

// Mean-field coupling functionals F : P(T) -> R and their flat derivatives.

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mflimits/torus.hpp"

namespace mfl {

/// F(m) = integral of g dm.
struct LinearTerm {
  GridField g;
};

/// F(m) = weight * double integral of K(x - y) m(dx) m(dy), K even.
///
/// The kernel is stored by lag: kernel[k] = K(k h). Its discrete cosine
/// spectrum spectrum[k] = (1/n) sum_j K(j h) cos(2 pi k j / n) is cached.
struct ConvolutionTerm {
  std::vector<double> kernel;
  double weight = 1.0;
  std::vector<double> spectrum;
};

using CouplingTerm = std::variant<LinearTerm, ConvolutionTerm>;

class CouplingFunctional {
 public:
  /// offset == nullopt chooses the smallest offset >= 0 that makes F >= 0.
  static CouplingFunctional linear(GridField g, std::optional<double> offset = std::nullopt);
  static CouplingFunctional convolution(TorusGrid grid, std::vector<double> kernel, double weight,
                                        std::optional<double> offset = std::nullopt);
  /// Kernel given by its values K(x) on [0, 1); sampled at the grid lags.
  static CouplingFunctional convolution(TorusGrid grid, const TrigSeries& kernel, double weight,
                                        std::optional<double> offset = std::nullopt);
  static CouplingFunctional sum(std::vector<CouplingFunctional> parts,
                                std::optional<double> offset = std::nullopt);

  const TorusGrid& grid() const noexcept { return grid_; }
  std::span<const CouplingTerm> terms() const noexcept { return terms_; }
  double offset() const noexcept { return offset_; }

  double value(const ProbabilityGrid& m) const;
  /// y -> dF/dm(m, y) at every cell.
  GridField flat_derivative(const ProbabilityGrid& m) const;
  double flat_derivative_at(const ProbabilityGrid& m, int cell) const;

  /// Guaranteed lower bound of F - offset over all probability measures.
  double lower_bound() const noexcept;
  /// Convex along segments of P(T): linear parts plus kernels with a
  /// nonnegative nontrivial spectrum.
  bool is_convex() const noexcept;
  /// Constant on P(T) (up to roundoff).
  bool is_constant() const noexcept;

  /// Sum of weight * kernel over all convolution terms, by lag, and its
  /// spectrum. Empty when there is no convolution part.
  std::vector<double> combined_kernel() const;
  std::vector<double> combined_spectrum() const;

 private:
  CouplingFunctional(TorusGrid grid, std::vector<CouplingTerm> terms, std::optional<double> offset);

  TorusGrid grid_;
  std::vector<CouplingTerm> terms_;
  double offset_ = 0.0;
};

struct MaxFResult {
  double value = 0.0;
  bool certified = false;
  std::string method;
  std::vector<double> argmax;  // density of the maximiser found
};

/// max over P(T) of F. Certified for linear couplings and for sign-definite
/// kernels; otherwise projected gradient ascent with multistart.
MaxFResult max_F(const CouplingFunctional& F);

/// Evaluates F on empirical measures of torus points without binning.
///
/// Linear parts use periodic interpolation of g; convolution parts use the
/// trigonometric interpolant of the kernel through its grid spectrum, so on
/// cell-centre points this agrees with value() exactly.
class PointCloudCoupling {
 public:
  explicit PointCloudCoupling(const CouplingFunctional& F);

  /// F(empirical measure of points).
  double value(std::span<const double> points) const;

  /// out[i] = F(empirical measure of all points except i). O(N * modes).
  /// workspace is resized as needed and may be reused across calls.
  void leave_one_out(std::span<const double> points, std::span<double> out,
                     std::vector<std::complex<double>>& workspace) const;

  std::size_t mode_count() const noexcept { return modes_.size(); }

 private:
  struct Mode {
    int k;
    double coeff;  // weight * Khat_k * multiplicity
  };
  std::vector<GridField> linear_;
  std::vector<Mode> modes_;
  double constant_ = 0.0;  // offset plus zero-mode contributions
  int max_k_ = 0;
};

}  // namespace mfl
