#pragma once

// Pointwise Weyl-law diagnostics for the spectral function Z(q, p; X):
//   remainder  R(X)      = Z(q, q; X) - vol(B^d) X^d / (2pi)^d
//   window     W(X, γ)   = sum_{X < lambda <= X + γ} Z_lambda^q(p)
//   defect     W(X, γ) - d vol(B^d) γ X^{d-1} / (2pi)^d   (diagonal only)
// Window sums are piecewise constant in X with jumps at lambda and lambda - γ, so sups, infs
// and means over X intervals are computed exactly from the pieces rather than by sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pointpert/errors.hpp"
#include "pointpert/green.hpp"
#include "pointpert/lattice.hpp"
#include "pointpert/spectra.hpp"
#include "pointpert/types.hpp"

namespace pointpert::weyl {

using spectra::KernelTable;
using spectra::Manifold;
using spectra::PointSet;

/// vol(B^d) X^d / (2pi)^d.
inline double main_term(const Manifold& m, double x) {
  return m.ball_volume() * std::pow(x, m.dimension()) * m.weyl_normalisation();
}

/// d vol(B^d) γ X^{d-1} / (2pi)^d.
inline double window_main_term(const Manifold& m, double x, double gamma) {
  const int d = m.dimension();
  return d * m.ball_volume() * gamma * std::pow(x, d - 1) * m.weyl_normalisation();
}

namespace detail {

inline void check_window(double x, double gamma) {
  if (!(x >= 0.0) || !std::isfinite(x)) throw PreconditionError("window start X must be finite and >= 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw PreconditionError("window width gamma must be > 0");
}

/// sum_{X < lambda <= X + γ} Z_lambda^q(p), summed directly over the window's shells.
inline double window_sum(const Manifold& m, const Point& q, const Point& p, double x, double gamma) {
  check_window(x, gamma);
  if (!m.is_torus()) {
    const double c = Manifold::sphere_cos_distance(q, p);
    double sum = 0.0;
    for (std::int64_t l = 0;; ++l) {
      const double lam = std::sqrt(static_cast<double>(l * (l + 1)));
      if (lam > x + gamma) break;
      if (lam > x) sum += spectra::sphere_kernel(static_cast<int>(l), c);
    }
    return sum;
  }
  const std::int64_t lo = lattice::max_norm_sq(x) + 1;
  const std::int64_t hi = lattice::max_norm_sq(x + gamma);
  if (hi < lo) return 0.0;
  const Point d = m.displacement(q, p);
  double sum = 0.0;
  for (const auto& k : lattice::enumerate_annulus(m.dimension(), lo, hi))
    sum += std::cos(k[0] * d.x[0] + k[1] * d.x[1] + k[2] * d.x[2]);
  return sum * m.weyl_normalisation();
}

}  // namespace detail

/// Z(q, q; X) - vol(B^d) X^d / (2pi)^d.  Accepts every X >= 0.
inline double diagonal_remainder(const Manifold& m, const Point& q, double x) {
  return spectra::spectral_function(m, q, q, x) - main_term(m, x);
}

inline double window_diagonal(const Manifold& m, const Point& q, double x, double gamma) {
  return detail::window_sum(m, q, q, x, gamma) - window_main_term(m, x, gamma);
}

inline double off_diagonal_window(const Manifold& m, const Point& q, const Point& p, double x, double gamma) {
  const PointSet distinct(m, {q, p});  // rejects q = p
  return detail::window_sum(m, distinct[0], distinct[1], x, gamma);
}

struct DensityRatios {
  double lower_ratio = 0.0;  ///< S / ([sum |beta|^2] X^{d-1})
  double upper_ratio = 0.0;  ///< S / (γ [sum |beta|^2] X^{d-1})
};

/// S = sum_{X < lambda <= X + γ} ||sum_q beta_q Z_lambda^q||^2, normalised.
inline DensityRatios shell_density_bounds(const Manifold& m, const PointSet& q, const ComplexVector& beta,
                                          double x, double gamma) {
  detail::check_window(x, gamma);
  if (!(x > 0.0)) throw PreconditionError("density ratios need X > 0");
  if (static_cast<std::size_t>(beta.size()) != q.size()) throw PreconditionError("beta length differs from the point count");
  const double b2 = beta.squaredNorm();
  if (!(b2 > 0.0)) throw PreconditionError("beta must be nonzero");
  const KernelTable table(m, q, x + gamma);
  double s = 0.0;
  for (std::size_t i = 0; i < table.shell_count(); ++i)
    if (table.lambda(i) > x) s += green::shell_coefficient(table, i, beta);
  const double scale = b2 * std::pow(x, m.dimension() - 1);
  return {s / scale, s / (gamma * scale)};
}

/// Window sum constant on [a, b).
struct WindowPiece {
  double a = 0.0;
  double b = 0.0;
  double sum = 0.0;
};

struct SupResult {
  double value = 0.0;
  double at = 0.0;
};

struct ZeroMassWindow {
  double from = 0.0;  ///< window (X, X + γ] is empty for X in [from, to)
  double to = 0.0;
};

/// Kernel table up to `x_max` with prefix sums, for scans over X.
class SpectralProfile {
 public:
  SpectralProfile(const Manifold& m, const PointSet& q, double x_max)
      : manifold_(m), table_(m, q, x_max), n_(q.size()) {
    for (std::size_t s = 0; s < table_.shell_count(); ++s) lambda_.push_back(table_.lambda(s));
    prefix_.assign((table_.shell_count() + 1) * n_ * n_, 0.0);
    for (std::size_t s = 0; s < table_.shell_count(); ++s)
      for (std::size_t ij = 0; ij < n_ * n_; ++ij)
        prefix_[(s + 1) * n_ * n_ + ij] = prefix_[s * n_ * n_ + ij] + table_.value(s, ij / n_, ij % n_);
  }

  const Manifold& manifold() const { return manifold_; }
  const KernelTable& table() const { return table_; }
  double x_max() const { return table_.cutoff(); }
  const std::vector<double>& lambdas() const { return lambda_; }

  double spectral_function(std::size_t i, std::size_t j, double x) const {
    return prefix_[count(x) * n_ * n_ + i * n_ + j];
  }
  double remainder(std::size_t i, double x) const { return spectral_function(i, i, x) - main_term(manifold_, x); }
  double window(std::size_t i, std::size_t j, double x, double gamma) const {
    detail::check_window(x, gamma);
    return spectral_function(i, j, x + gamma) - spectral_function(i, j, x);
  }
  double window_defect(std::size_t i, double x, double gamma) const {
    return window(i, i, x, gamma) - window_main_term(manifold_, x, gamma);
  }
  double normalized_defect(std::size_t i, double x, double gamma) const {
    return window_defect(i, x, gamma) / (gamma * std::pow(x, manifold_.dimension() - 1));
  }

  /// sup |R(X)| / X^{d-1} over [x_lo, x_hi], exhaustive: R jumps up at each lambda and
  /// decreases in between, so the candidates are the endpoints and both sides of every jump.
  SupResult remainder_sup(std::size_t i, double x_lo, double x_hi) const {
    check_range(x_lo, x_hi);
    const double e = manifold_.dimension() - 1.0;
    SupResult best;
    auto consider = [&](double x, double z) {
      const double r = std::fabs(z - main_term(manifold_, x)) / std::pow(x, e);
      if (r > best.value) best = {r, x};
    };
    consider(x_lo, spectral_function(i, i, x_lo));
    consider(x_hi, spectral_function(i, i, x_hi));
    for (std::size_t s = 0; s < lambda_.size(); ++s) {
      if (lambda_[s] <= x_lo || lambda_[s] > x_hi) continue;
      consider(lambda_[s], prefix_[(s + 1) * n_ * n_ + i * n_ + i]);
      consider(lambda_[s], prefix_[s * n_ * n_ + i * n_ + i]);
    }
    return best;
  }

  /// Pieces of the diagonal (i, i) window sum over [x_lo, x_hi).
  std::vector<WindowPiece> pieces(std::size_t i, double gamma, double x_lo, double x_hi) const {
    std::vector<double> w(lambda_.size());
    for (std::size_t s = 0; s < w.size(); ++s) w[s] = table_.value(s, i, i);
    return pieces_for(w, gamma, x_lo, x_hi);
  }

  /// Pieces of the beta-weighted shell-coefficient window sum.
  std::vector<WindowPiece> pieces(const ComplexVector& beta, double gamma, double x_lo, double x_hi) const {
    std::vector<double> w(lambda_.size());
    for (std::size_t s = 0; s < w.size(); ++s) w[s] = green::shell_coefficient(table_, s, beta);
    return pieces_for(w, gamma, x_lo, x_hi);
  }

  /// sup over X in [x_lo, x_hi] of |normalized window defect|.
  SupResult defect_sup(std::size_t i, double gamma, double x_lo, double x_hi) const {
    SupResult best;
    const double c = window_main_term(manifold_, 1.0, gamma) / gamma;
    for (const auto& p : pieces(i, gamma, x_lo, x_hi)) {
      for (double x : {p.a, p.b}) {
        const double r = std::fabs(p.sum / (gamma * std::pow(x, manifold_.dimension() - 1)) - c);
        if (r > best.value) best = {r, x};
      }
    }
    return best;
  }

  /// Exact mean over [x_lo, x_hi] of |normalized window defect|.
  double defect_mean(std::size_t i, double gamma, double x_lo, double x_hi) const {
    const int d = manifold_.dimension();
    const double c = window_main_term(manifold_, 1.0, gamma) / gamma;
    // Primitive of S/γ X^{1-d} - c.
    auto prim = [&](double s, double x) {
      return (d == 2 ? s / gamma * std::log(x) : -s / (gamma * x)) - c * x;
    };
    double total = 0.0;
    for (const auto& p : pieces(i, gamma, x_lo, x_hi)) {
      // f(X) = S/γ X^{1-d} - c is decreasing; it changes sign at X0 = (S/(γc))^{1/(d-1)}.
      const double x0 = p.sum > 0.0 ? std::pow(p.sum / (gamma * c), 1.0 / (d - 1)) : 0.0;
      const double mid = std::clamp(x0, p.a, p.b);
      total += (prim(p.sum, mid) - prim(p.sum, p.a)) - (prim(p.sum, p.b) - prim(p.sum, mid));
    }
    return total / (x_hi - x_lo);
  }

  /// sup_{X in [L, x_hi]} |normalized defect| for each L.
  std::vector<double> epsilon_profile(std::size_t i, double gamma, const std::vector<double>& starts,
                                      double x_hi) const {
    std::vector<double> out;
    for (double l : starts) out.push_back(defect_sup(i, gamma, l, x_hi).value);
    return out;
  }

  /// Exact inf of the lower and sup of the upper density ratio over X in [x_lo, x_hi].
  DensityRatios density_range(const ComplexVector& beta, double gamma, double x_lo, double x_hi) const {
    if (static_cast<std::size_t>(beta.size()) != n_) throw PreconditionError("beta length differs from the point count");
    const double b2 = beta.squaredNorm();
    if (!(b2 > 0.0)) throw PreconditionError("beta must be nonzero");
    if (!(x_lo > 0.0)) throw PreconditionError("density ratios need X > 0");
    const double e = manifold_.dimension() - 1.0;
    DensityRatios r{std::numeric_limits<double>::infinity(), 0.0};
    for (const auto& p : pieces(beta, gamma, x_lo, x_hi)) {
      r.lower_ratio = std::min(r.lower_ratio, p.sum / (b2 * std::pow(p.b, e)));
      r.upper_ratio = std::max(r.upper_ratio, p.sum / (gamma * b2 * std::pow(p.a, e)));
    }
    return r;
  }

  /// Maximal X intervals inside [x_lo, x_hi) whose window (X, X + γ] holds no eigenvalue.
  std::vector<ZeroMassWindow> zero_mass_windows(double gamma, double x_lo, double x_hi) const {
    check_range(x_lo, x_hi);
    if (x_hi + gamma > x_max()) throw PreconditionError("zero-mass search runs past the profile cutoff");
    std::vector<ZeroMassWindow> out;
    for (std::size_t s = 0; s + 1 <= lambda_.size(); ++s) {
      const double from = std::max(lambda_[s], x_lo);
      const double next = s + 1 < lambda_.size() ? lambda_[s + 1] : x_max();
      const double to = std::min(next - gamma, x_hi);
      if (to > from) out.push_back({from, to});
    }
    return out;
  }

 private:
  std::size_t count(double x) const {
    return static_cast<std::size_t>(std::upper_bound(lambda_.begin(), lambda_.end(), x) - lambda_.begin());
  }

  void check_range(double x_lo, double x_hi) const {
    if (!(x_lo > 0.0) || !(x_hi > x_lo)) throw PreconditionError("X range must satisfy 0 < x_lo < x_hi");
    if (x_hi > x_max()) throw PreconditionError("X range exceeds the profile cutoff");
  }

  std::vector<WindowPiece> pieces_for(const std::vector<double>& w, double gamma, double x_lo, double x_hi) const {
    check_range(x_lo, x_hi);
    if (!(gamma > 0.0)) throw PreconditionError("window width gamma must be > 0");
    if (x_hi + gamma > x_max()) throw PreconditionError("window scan runs past the profile cutoff");
    std::vector<double> cuts{x_lo, x_hi};
    for (double lam : lambda_) {
      if (lam > x_lo && lam < x_hi) cuts.push_back(lam);
      if (lam - gamma > x_lo && lam - gamma < x_hi) cuts.push_back(lam - gamma);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<double> prefix(w.size() + 1, 0.0);
    for (std::size_t t = 0; t < w.size(); ++t) prefix[t + 1] = prefix[t] + w[t];
    std::vector<WindowPiece> out;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const double a = cuts[k], b = cuts[k + 1];
      const double x = 0.5 * (a + b);
      out.push_back({a, b, prefix[count(x + gamma)] - prefix[count(x)]});
    }
    return out;
  }

  Manifold manifold_;
  KernelTable table_;
  std::size_t n_;
  std::vector<double> lambda_;
  std::vector<double> prefix_;
};

}  // namespace pointpert::weyl
