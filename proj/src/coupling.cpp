#include "mflimits/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "mflimits/errors.hpp"

namespace mfl {

namespace {

constexpr double kSpectrumTol = 1e-13;

std::vector<double> cosine_spectrum(std::span<const double> kernel) {
  const int n = static_cast<int>(kernel.size());
  std::vector<double> out(n, 0.0);
  for (int k = 0; k < n; ++k) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      // (k * j) mod n keeps the argument small for large grids.
      const int r = static_cast<int>((static_cast<long long>(k) * j) % n);
      s += kernel[j] * std::cos(2.0 * std::numbers::pi * r / n);
    }
    out[k] = s / n;
  }
  return out;
}

double spectrum_scale(std::span<const double> spec) {
  double m = 0.0;
  for (double s : spec) m = std::max(m, std::abs(s));
  return std::max(m, 1.0);
}

// p_i = m_i h, (K p)_i = sum_j K((i - j) h) p_j.
std::vector<double> kernel_apply(std::span<const double> kernel, const ProbabilityGrid& m) {
  const int n = m.size();
  const double h = m.grid().h();
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      int lag = i - j;
      if (lag < 0) lag += n;
      s += kernel[lag] * m[j];
    }
    out[i] = s * h;
  }
  return out;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::vector<double> project_to_simplex(std::vector<double> v) {
  // Euclidean projection onto {p >= 0, sum p = 1}.
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    css += u[j];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(0.0, x - theta);
  return v;
}

}  // namespace

CouplingFunctional::CouplingFunctional(TorusGrid grid, std::vector<CouplingTerm> terms,
                                       std::optional<double> offset)
    : grid_(grid), terms_(std::move(terms)) {
  if (offset) {
    if (*offset + lower_bound() < -1e-12) throw ConfigError("coupling offset too small for F >= 0");
    offset_ = *offset;
  } else {
    offset_ = std::max(0.0, -lower_bound());
  }
}

CouplingFunctional CouplingFunctional::linear(GridField g, std::optional<double> offset) {
  const TorusGrid grid = g.grid();
  return CouplingFunctional(grid, {LinearTerm{std::move(g)}}, offset);
}

CouplingFunctional CouplingFunctional::convolution(TorusGrid grid, std::vector<double> kernel,
                                                   double weight, std::optional<double> offset) {
  if (kernel.size() != static_cast<std::size_t>(grid.size())) {
    throw ConfigError("convolution kernel must have one value per grid lag");
  }
  const int n = grid.size();
  for (int k = 1; k < n; ++k) {
    if (std::abs(kernel[k] - kernel[n - k]) > 1e-12 * (1.0 + std::abs(kernel[k]))) {
      throw ConfigError("convolution kernel must be even: K(kh) == K(-kh)");
    }
  }
  if (!std::isfinite(weight)) throw ConfigError("convolution weight must be finite");
  ConvolutionTerm t{std::move(kernel), weight, {}};
  t.spectrum = cosine_spectrum(t.kernel);
  return CouplingFunctional(grid, {std::move(t)}, offset);
}

CouplingFunctional CouplingFunctional::convolution(TorusGrid grid, const TrigSeries& kernel,
                                                   double weight, std::optional<double> offset) {
  std::vector<double> lags(grid.size());
  for (int k = 0; k < grid.size(); ++k) lags[k] = kernel(k * grid.h());
  // Sampling an even series at lags k h and (n - k) h gives equal values only
  // up to roundoff; symmetrise explicitly.
  for (int k = 1; k < grid.size(); ++k) {
    const double a = 0.5 * (lags[k] + lags[grid.size() - k]);
    lags[k] = a;
    lags[grid.size() - k] = a;
  }
  return convolution(grid, std::move(lags), weight, offset);
}

CouplingFunctional CouplingFunctional::sum(std::vector<CouplingFunctional> parts,
                                           std::optional<double> offset) {
  if (parts.empty()) throw ConfigError("CouplingFunctional::sum needs at least one part");
  const TorusGrid grid = parts.front().grid();
  std::vector<CouplingTerm> terms;
  for (auto& p : parts) {
    if (!(p.grid() == grid)) throw ConfigError("CouplingFunctional::sum: grid mismatch");
    for (auto& t : p.terms_) terms.push_back(std::move(t));
  }
  return CouplingFunctional(grid, std::move(terms), offset);
}

double CouplingFunctional::value(const ProbabilityGrid& m) const {
  if (!(m.grid() == grid_)) throw ConfigError("CouplingFunctional::value: grid mismatch");
  const double h = grid_.h();
  double v = offset_;
  for (const auto& term : terms_) {
    v += std::visit(Overloaded{
                        [&](const LinearTerm& t) {
                          double s = 0.0;
                          for (int i = 0; i < m.size(); ++i) s += t.g[i] * m[i];
                          return s * h;
                        },
                        [&](const ConvolutionTerm& t) {
                          const auto kp = kernel_apply(t.kernel, m);
                          double s = 0.0;
                          for (int i = 0; i < m.size(); ++i) s += kp[i] * m[i];
                          return t.weight * s * h;
                        }},
                    term);
  }
  return v;
}

GridField CouplingFunctional::flat_derivative(const ProbabilityGrid& m) const {
  if (!(m.grid() == grid_)) throw ConfigError("CouplingFunctional::flat_derivative: grid mismatch");
  GridField out(grid_);
  for (const auto& term : terms_) {
    std::visit(Overloaded{[&](const LinearTerm& t) {
                            for (int i = 0; i < out.size(); ++i) out[i] += t.g[i];
                          },
                          [&](const ConvolutionTerm& t) {
                            const auto kp = kernel_apply(t.kernel, m);
                            for (int i = 0; i < out.size(); ++i) out[i] += 2.0 * t.weight * kp[i];
                          }},
               term);
  }
  return out;
}

double CouplingFunctional::flat_derivative_at(const ProbabilityGrid& m, int cell) const {
  return flat_derivative(m)[grid_.wrap(cell)];
}

double CouplingFunctional::lower_bound() const noexcept {
  double lb = 0.0;
  for (const auto& term : terms_) {
    if (const auto* lin = std::get_if<LinearTerm>(&term)) lb += lin->g.min();
  }
  const auto spec = combined_spectrum();
  if (!spec.empty()) {
    // F_conv = sum_k Khat_k |P_k|^2 with |P_0| = 1 and |P_k| <= 1.
    lb += spec[0];
    for (std::size_t k = 1; k < spec.size(); ++k) lb += std::min(0.0, spec[k]);
  }
  return lb;
}

std::vector<double> CouplingFunctional::combined_kernel() const {
  std::vector<double> k;
  for (const auto& term : terms_) {
    if (const auto* c = std::get_if<ConvolutionTerm>(&term)) {
      if (k.empty()) k.assign(c->kernel.size(), 0.0);
      for (std::size_t i = 0; i < k.size(); ++i) k[i] += c->weight * c->kernel[i];
    }
  }
  return k;
}

std::vector<double> CouplingFunctional::combined_spectrum() const {
  std::vector<double> s;
  for (const auto& term : terms_) {
    if (const auto* c = std::get_if<ConvolutionTerm>(&term)) {
      if (s.empty()) s.assign(c->spectrum.size(), 0.0);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += c->weight * c->spectrum[i];
    }
  }
  return s;
}

bool CouplingFunctional::is_convex() const noexcept {
  const auto spec = combined_spectrum();
  const double tol = kSpectrumTol * spectrum_scale(spec);
  for (std::size_t k = 1; k < spec.size(); ++k) {
    if (spec[k] < -tol) return false;
  }
  return true;
}

bool CouplingFunctional::is_constant() const noexcept {
  for (const auto& term : terms_) {
    if (const auto* lin = std::get_if<LinearTerm>(&term)) {
      if (lin->g.max() - lin->g.min() > 1e-14 * (1.0 + std::abs(lin->g.max()))) return false;
    }
  }
  const auto spec = combined_spectrum();
  const double tol = kSpectrumTol * spectrum_scale(spec);
  for (std::size_t k = 1; k < spec.size(); ++k) {
    if (std::abs(spec[k]) > tol) return false;
  }
  return true;
}

MaxFResult max_F(const CouplingFunctional& F) {
  const TorusGrid& grid = F.grid();
  const int n = grid.size();
  bool linear_constant = true;
  bool has_linear = false;
  std::vector<double> g(n, 0.0);
  for (const auto& term : F.terms()) {
    if (const auto* lin = std::get_if<LinearTerm>(&term)) {
      has_linear = true;
      for (int i = 0; i < n; ++i) g[i] += lin->g[i];
    }
  }
  if (has_linear) {
    const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
    linear_constant = (*hi - *lo) <= 1e-14 * (1.0 + std::abs(*hi));
  }
  const auto spec = F.combined_spectrum();
  const double tol = kSpectrumTol * spectrum_scale(spec);

  if (spec.empty()) {
    // Purely linear: a point mass at the largest g.
    const int at = static_cast<int>(std::max_element(g.begin(), g.end()) - g.begin());
    auto pm = ProbabilityGrid::point_mass(grid, at);
    return {F.value(pm), true, "linear: point mass at argmax g",
            std::vector<double>(pm.density().begin(), pm.density().end())};
  }
  if (linear_constant) {
    bool nonneg = true;
    bool nonpos = true;
    for (std::size_t k = 1; k < spec.size(); ++k) {
      nonneg = nonneg && spec[k] >= -tol;
      nonpos = nonpos && spec[k] <= tol;
    }
    if (nonneg) {
      auto pm = ProbabilityGrid::point_mass(grid, 0);
      return {F.value(pm), true, "nonnegative kernel spectrum: single-cell mass",
              std::vector<double>(pm.density().begin(), pm.density().end())};
    }
    if (nonpos) {
      auto u = ProbabilityGrid::uniform(grid);
      return {F.value(u), true, "nonpositive kernel spectrum: uniform",
              std::vector<double>(u.density().begin(), u.density().end())};
    }
  }

  // Mixed signs: projected gradient ascent on cell masses, several starts.
  const double h = grid.h();
  auto eval = [&](const std::vector<double>& p) {
    std::vector<double> d(n);
    for (int i = 0; i < n; ++i) d[i] = p[i] / h;
    return F.value(ProbabilityGrid::normalized(grid, std::move(d)));
  };
  std::vector<std::vector<double>> starts;
  starts.emplace_back(n, 1.0 / n);
  for (int c = 0; c < n; c += std::max(1, n / 8)) {
    std::vector<double> p(n, 0.0);
    p[c] = 1.0;
    starts.push_back(p);
  }
  std::mt19937_64 rng(0x6d61785fULL);
  std::gamma_distribution<double> gam(0.5, 1.0);
  for (int r = 0; r < 4; ++r) {
    std::vector<double> p(n);
    double s = 0.0;
    for (double& x : p) s += (x = gam(rng));
    for (double& x : p) x /= s;
    starts.push_back(p);
  }
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> best_p;
  double lip = 0.0;
  for (double s : spec) lip += std::abs(s);
  const double step = 0.5 / std::max(2.0 * n * lip, 1e-12);
  for (auto p : starts) {
    for (int it = 0; it < 2000; ++it) {
      std::vector<double> d(n);
      for (int i = 0; i < n; ++i) d[i] = std::max(p[i], 0.0) / h;
      double tot = std::accumulate(d.begin(), d.end(), 0.0);
      if (tot <= 0.0) break;
      const auto grad = F.flat_derivative(ProbabilityGrid::normalized(grid, d));
      std::vector<double> q(n);
      for (int i = 0; i < n; ++i) q[i] = p[i] + step * grad[i];
      p = project_to_simplex(std::move(q));
    }
    const double v = eval(p);
    if (v > best) {
      best = v;
      best_p = p;
    }
  }
  for (int c = 0; c < n; ++c) {
    auto pm = ProbabilityGrid::point_mass(grid, c);
    const double v = F.value(pm);
    if (v > best) {
      best = v;
      best_p.assign(n, 0.0);
      best_p[c] = 1.0;
    }
  }
  std::vector<double> dens(n);
  for (int i = 0; i < n; ++i) dens[i] = best_p[i] / h;
  return {best, false, "projected gradient ascent (heuristic, not certified)", dens};
}

PointCloudCoupling::PointCloudCoupling(const CouplingFunctional& F) : constant_(F.offset()) {
  for (const auto& term : F.terms()) {
    if (const auto* lin = std::get_if<LinearTerm>(&term)) linear_.push_back(lin->g);
  }
  const auto spec = F.combined_spectrum();
  if (!spec.empty()) {
    const int n = static_cast<int>(spec.size());
    const double tol = kSpectrumTol * spectrum_scale(spec);
    constant_ += spec[0];
    for (int k = 1; k <= n / 2; ++k) {
      if (std::abs(spec[k]) <= tol) continue;
      const double mult = (2 * k == n) ? 1.0 : 2.0;
      modes_.push_back({k, spec[k] * mult});
      max_k_ = k;
    }
  }
}

double PointCloudCoupling::value(std::span<const double> points) const {
  if (points.empty()) throw ConfigError("PointCloudCoupling::value: empty point list");
  const double inv = 1.0 / static_cast<double>(points.size());
  double v = constant_;
  for (const auto& g : linear_) {
    double s = 0.0;
    for (double x : points) s += g.interpolate(x);
    v += s * inv;
  }
  for (const auto& md : modes_) {
    std::complex<double> s{0.0, 0.0};
    for (double x : points) s += std::polar(1.0, 2.0 * std::numbers::pi * md.k * x);
    v += md.coeff * std::norm(s * inv);
  }
  return v;
}

void PointCloudCoupling::leave_one_out(std::span<const double> points, std::span<double> out,
                                       std::vector<std::complex<double>>& workspace) const {
  const std::size_t N = points.size();
  if (N < 2) throw ConfigError("leave_one_out needs at least two points");
  const double inv = 1.0 / static_cast<double>(N - 1);
  std::fill(out.begin(), out.end(), constant_);
  for (const auto& g : linear_) {
    double total = 0.0;
    thread_local std::vector<double> gv;
    gv.resize(N);
    for (std::size_t j = 0; j < N; ++j) total += (gv[j] = g.interpolate(points[j]));
    for (std::size_t j = 0; j < N; ++j) out[j] += (total - gv[j]) * inv;
  }
  if (modes_.empty()) return;
  // workspace[j * max_k + (k - 1)] = exp(2 pi i k x_j).
  const std::size_t K = static_cast<std::size_t>(max_k_);
  workspace.resize(N * K);
  for (std::size_t j = 0; j < N; ++j) {
    const std::complex<double> base = std::polar(1.0, 2.0 * std::numbers::pi * points[j]);
    std::complex<double> z = base;
    for (std::size_t k = 0; k < K; ++k) {
      workspace[j * K + k] = z;
      z *= base;
    }
  }
  for (const auto& md : modes_) {
    const std::size_t k = static_cast<std::size_t>(md.k - 1);
    std::complex<double> total{0.0, 0.0};
    for (std::size_t j = 0; j < N; ++j) total += workspace[j * K + k];
    for (std::size_t j = 0; j < N; ++j) out[j] += md.coeff * std::norm((total - workspace[j * K + k]) * inv);
  }
}

}  // namespace mfl
