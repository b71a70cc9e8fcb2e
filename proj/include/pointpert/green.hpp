#pragma once

// Green combinations G_h^{Q,beta} = sum_q beta_q G_{h^-2}^q through their eigen-expansion
//   ||G||^2 = sum_lambda ||sum_q beta_q Z_lambda^q||^2 / (lambda^2 - h^-2)^2,
// spectral windows 1_I(sqrt Delta) and quasimode residuals.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pointpert/errors.hpp"
#include "pointpert/extension.hpp"
#include "pointpert/spectra.hpp"
#include "pointpert/types.hpp"

namespace pointpert::green {

using spectra::EigenShell;
using spectra::KernelTable;
using spectra::Manifold;
using spectra::PointSet;

/// ||sum_q beta_q Z_lambda^q||^2 = sum_{q,p} conj(beta_p) beta_q Z_lambda^q(p).
inline double shell_coefficient(const KernelTable& table, std::size_t s, const ComplexVector& beta) {
  const std::size_t n = table.point_count();
  if (static_cast<std::size_t>(beta.size()) != n) throw PreconditionError("beta length differs from the point count");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += std::norm(beta(static_cast<Eigen::Index>(i))) * table.value(s, i, i);
    for (std::size_t j = i + 1; j < n; ++j)
      sum += 2.0 * (std::conj(beta(static_cast<Eigen::Index>(j))) * beta(static_cast<Eigen::Index>(i))).real() *
             table.value(s, i, j);
  }
  return std::max(sum, 0.0);
}

inline double shell_coefficient(const Manifold& m, const PointSet& q, const ComplexVector& beta,
                                const EigenShell& shell) {
  if (static_cast<std::size_t>(beta.size()) != q.size()) throw PreconditionError("beta length differs from the point count");
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j)
      sum += (std::conj(beta(static_cast<Eigen::Index>(j))) * beta(static_cast<Eigen::Index>(i))).real() *
             spectra::kernel(m, shell, q[i], q[j]);
  return std::max(sum, 0.0);
}

/// Open window (center - r, center + r) in the sqrt(Delta) variable.
struct SpectralWindow {
  double center = 0.0;
  double half_width = 0.0;

  SpectralWindow() = default;
  SpectralWindow(double c, double r) : center(c), half_width(r) {
    if (!(r > 0.0)) throw PreconditionError("window half-width must be positive");
  }
  bool contains(double lambda) const { return std::fabs(lambda - center) < half_width; }
  double upper() const { return center + half_width; }
};

/// True iff n is an eigenvalue of Delta: a sum of d squares (tori) or l(l+1) (sphere).
inline bool is_eigenvalue_square(const Manifold& m, std::int64_t n) {
  if (n < 0) return false;
  if (!m.is_torus()) {
    const auto l = static_cast<std::int64_t>(std::floor(0.5 * (std::sqrt(4.0 * static_cast<double>(n) + 1.0) - 1.0)));
    for (auto c : {l - 1, l, l + 1})
      if (c >= 0 && c * (c + 1) == n) return true;
    return false;
  }
  for (std::int64_t a = 0; a * a <= n; ++a) {
    const std::int64_t rest = n - a * a;
    if (m.dimension() == 2) {
      const auto b = lattice::isqrt(rest);
      if (b * b == rest) return true;
      continue;
    }
    for (std::int64_t b = 0; b * b <= rest; ++b) {
      const auto c = lattice::isqrt(rest - b * b);
      if (c * c == rest - b * b) return true;
    }
  }
  return false;
}

/// Midpoint of the gap of Spec(Delta) that contains x^2, or of the next gap when x^2 is an
/// eigenvalue.  Choosing h^-2 there keeps h^-1 at distance ~ gap/2 from the spectrum.
inline double mid_gap_eta(const Manifold& m, double x) {
  if (!(x >= 0.0)) throw PreconditionError("mid_gap_eta needs x >= 0");
  auto lo = static_cast<std::int64_t>(std::floor(x * x));
  while (!is_eigenvalue_square(m, lo)) --lo;
  auto hi = lo + 1;
  while (!is_eigenvalue_square(m, hi)) ++hi;
  return 0.5 * static_cast<double>(lo + hi);
}

/// max(4 h^-1, h^-1 + 50).
inline double default_cutoff(double h) { return std::max(4.0 / h, 1.0 / h + 50.0); }

namespace detail {

/// Leading term vol(B^d) X^d / (2pi)^d of Z(q, q; X).
inline double weyl_main(const Manifold& m, double x) {
  return m.ball_volume() * std::pow(x, m.dimension()) * m.weyl_normalisation();
}

/// Upper bound for Z(q, q; X).  Tori: unit cubes around lattice points of the ball of radius X
/// lie in the ball of radius X + sqrt(d)/2.  Sphere: l(l+1) <= X^2 forces l <= X.
inline double spectral_upper(const Manifold& m, double x) {
  if (!m.is_torus()) return (x + 1.0) * (x + 1.0) / (4.0 * kPi);
  return weyl_main(m, x + 0.5 * std::sqrt(static_cast<double>(m.dimension())));
}

/// int_a^inf f.
template <class F>
double half_line(F&& f, double a) {
  using boost::math::quadrature::gauss_kronrod;
  return gauss_kronrod<double, 61>::integrate(std::forward<F>(f), a, std::numeric_limits<double>::infinity(), 15, 1e-13);
}

}  // namespace detail

struct NormSq {
  double value = 0.0;          ///< explicit shells plus tail estimate
  double partial = 0.0;        ///< explicit shells lambda <= cutoff
  double tail_estimate = 0.0;  ///< Weyl-density estimate of the shells beyond the cutoff
  double tail_bound = 0.0;     ///< bound on |value - exact|
};

/// Spectral content of a function: the mass ||1_{lambda}(sqrt Delta) u||^2 on each explicit
/// shell plus the (estimated) mass beyond the explicit cutoff.
struct ShellSpectrum {
  double h = 1.0;
  double cutoff = 0.0;
  std::vector<std::int64_t> lambda_sq;
  std::vector<double> mass;
  double tail = 0.0;
  double tail_bound = 0.0;

  /// A single eigenfunction of Delta with eigenvalue lambda_sq, unit norm.
  static ShellSpectrum eigenfunction(double h, std::int64_t lam_sq) {
    ShellSpectrum s;
    s.h = h;
    s.cutoff = std::sqrt(static_cast<double>(lam_sq));
    s.lambda_sq = {lam_sq};
    s.mass = {1.0};
    return s;
  }

  double total() const {
    double t = tail;
    for (double m : mass) t += m;
    return t;
  }
};

/// Sum over shells inside / outside a window.  A window reaching past the cutoff counts the
/// tail as inside.
inline double mass_inside(const ShellSpectrum& s, const SpectralWindow& w) {
  double in = 0.0;
  for (std::size_t i = 0; i < s.mass.size(); ++i)
    if (w.contains(std::sqrt(static_cast<double>(s.lambda_sq[i])))) in += s.mass[i];
  if (w.upper() > s.cutoff) in += s.tail;
  return in;
}

inline double mass_outside(const ShellSpectrum& s, const SpectralWindow& w) {
  double out = 0.0;
  for (std::size_t i = 0; i < s.mass.size(); ++i)
    if (!w.contains(std::sqrt(static_cast<double>(s.lambda_sq[i])))) out += s.mass[i];
  if (w.upper() <= s.cutoff) out += s.tail;
  return out;
}

/// Pi_I u for I the window: the shells of I, the tail only if I reaches past the cutoff.
inline ShellSpectrum project_window(const ShellSpectrum& s, const SpectralWindow& w) {
  ShellSpectrum out;
  out.h = s.h;
  out.cutoff = s.cutoff;
  for (std::size_t i = 0; i < s.mass.size(); ++i) {
    if (!w.contains(std::sqrt(static_cast<double>(s.lambda_sq[i])))) continue;
    out.lambda_sq.push_back(s.lambda_sq[i]);
    out.mass.push_back(s.mass[i]);
  }
  if (w.upper() > s.cutoff) {
    out.tail = s.tail;
    out.tail_bound = s.tail_bound;
  }
  return out;
}

/// ||(h^2 Delta - 1) Pi u|| / ||Pi u||.
inline double quasimode_residual(const ShellSpectrum& s, const SpectralWindow& w) {
  if (w.upper() > s.cutoff && s.tail > 0.0)
    throw PreconditionError("window reaches past the explicit cutoff; residual is not resolved");
  const auto p = project_window(s, w);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) {
    const double f = s.h * s.h * static_cast<double>(p.lambda_sq[i]) - 1.0;
    num += p.mass[i] * f * f;
    den += p.mass[i];
  }
  if (!(den > 0.0)) throw PreconditionError("projected mass is zero; residual ratio undefined");
  return std::sqrt(num / den);
}

/// G_h^{Q,beta} with h^-2 = eta.  The explicit shells run to `cutoff`; the rest is estimated
/// by the Weyl density (diagonal terms, the off-diagonal ones oscillate) and bounded by
/// (sum |beta_q|)^2 int Z_upper d(-(t - eta)^-2).
class GreenCombination {
 public:
  GreenCombination(const Manifold& m, const PointSet& q, ComplexVector beta, double h, double cutoff = 0.0)
      : manifold_(m), points_(q), beta_(std::move(beta)), h_(h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw PreconditionError("h must be positive");
    if (static_cast<std::size_t>(beta_.size()) != q.size()) throw PreconditionError("beta length differs from the point count");
    beta_sq_ = beta_.squaredNorm();
    if (!(beta_sq_ > 0.0)) throw PreconditionError("beta must be nonzero");
    cutoff_ = cutoff > 0.0 ? cutoff : default_cutoff(h);
    if (cutoff_ < 2.0 / h) throw InsufficientCutoff(cutoff_, 2.0 / h);
    eta_ = 1.0 / (h * h);

    const KernelTable table(m, q, cutoff_);
    double diag_scale = 0.0;
    for (std::size_t s = 0; s < table.shell_count(); ++s) {
      const double w = shell_coefficient(table, s, beta_);
      const auto n = table.lambda_sq(s);
      const double gap = static_cast<double>(n) - eta_;
      if (std::fabs(gap) < extension::kPoleGuard) {
        for (std::size_t i = 0; i < q.size(); ++i) diag_scale = std::max(diag_scale, table.value(s, i, i));
        if (w > 1e-12 * beta_sq_ * diag_scale * static_cast<double>(q.size()))
          throw PoleError(eta_, n);
        excluded_ = n;
        continue;
      }
      lambda_sq_.push_back(n);
      weight_.push_back(w);
      term_.push_back(w / (gap * gap));
    }

    PartialSum acc;
    for (double t : term_) acc.add(t);
    norm_.partial = acc.value();

    const double x = cutoff_;
    const double eta = eta_;
    const double x_sq = static_cast<double>(lattice::max_norm_sq(x) + 1);  // first excluded lambda^2
    // d/dX of the Weyl main term: d vol(B) X^{d-1} (2pi)^{-d}.
    const double dm = m.dimension() * m.ball_volume() * m.weyl_normalisation();
    const int d = m.dimension();
    const double est = detail::half_line(
        [&](double l) {
          const double g = l * l - eta;
          return dm * std::pow(l, d - 1) / (g * g);
        },
        std::sqrt(x_sq));
    norm_.tail_estimate = beta_sq_ * est;
    double l1 = 0.0;
    for (const auto& b : beta_) l1 += std::abs(b);
    const double env = detail::half_line(
        [&](double t) {
          const double g = t - eta;
          return detail::spectral_upper(m, std::sqrt(t)) * 2.0 / (g * g * g);
        },
        x_sq);
    const double bound = l1 * l1 * env;
    norm_.tail_bound = std::max(norm_.tail_estimate, bound - norm_.tail_estimate);
    norm_.value = norm_.partial + norm_.tail_estimate;
  }

  const Manifold& manifold() const { return manifold_; }
  const PointSet& points() const { return points_; }
  const ComplexVector& beta() const { return beta_; }
  double h() const { return h_; }
  double eta() const { return eta_; }
  double cutoff() const { return cutoff_; }
  /// lambda^2 = h^-2 shell dropped because beta annihilates it.
  std::optional<std::int64_t> excluded_shell() const { return excluded_; }

  std::size_t shell_count() const { return lambda_sq_.size(); }
  std::int64_t lambda_sq(std::size_t i) const { return lambda_sq_[i]; }
  double weight(std::size_t i) const { return weight_[i]; }
  double term(std::size_t i) const { return term_[i]; }

  NormSq l2_norm_sq() const { return norm_; }
  double l2_norm() const { return std::sqrt(norm_.value); }

  /// Spectral content of g = G / ||G|| (unit total mass).
  ShellSpectrum normalized_spectrum() const {
    ShellSpectrum s;
    s.h = h_;
    s.cutoff = cutoff_;
    s.lambda_sq = lambda_sq_;
    const double inv = 1.0 / norm_.value;
    for (double t : term_) s.mass.push_back(t * inv);
    s.tail = norm_.tail_estimate * inv;
    s.tail_bound = norm_.tail_bound * inv;
    return s;
  }

  /// Unnormalised content ||Pi_lambda G||^2.
  ShellSpectrum spectrum() const {
    ShellSpectrum s;
    s.h = h_;
    s.cutoff = cutoff_;
    s.lambda_sq = lambda_sq_;
    s.mass = term_;
    s.tail = norm_.tail_estimate;
    s.tail_bound = norm_.tail_bound;
    return s;
  }

  /// Window centred at h^-1.
  SpectralWindow window(double r) const { return {1.0 / h_, r}; }

  /// ||Pi_I g||^2 for I = (h^-1 - r, h^-1 + r).
  double window_mass(double r) const {
    const auto w = window(r);
    PartialSum acc;
    for (std::size_t i = 0; i < term_.size(); ++i)
      if (w.contains(std::sqrt(static_cast<double>(lambda_sq_[i])))) acc.add(term_[i]);
    if (w.upper() > cutoff_) acc.add(norm_.tail_estimate);
    return std::min(1.0, acc.value() / norm_.value);
  }

  /// ||g - Pi_I g||^2, summed directly over the shells outside I (not as 1 - mass).
  double complement_mass(double r) const {
    const auto w = window(r);
    PartialSum acc;
    for (std::size_t i = 0; i < term_.size(); ++i)
      if (!w.contains(std::sqrt(static_cast<double>(lambda_sq_[i])))) acc.add(term_[i]);
    if (w.upper() <= cutoff_) acc.add(norm_.tail_estimate);
    return acc.value() / norm_.value;
  }

 private:
  // Neumaier-compensated sum; the terms span many orders of magnitude.
  class PartialSum {
   public:
    void add(double x) {
      const double t = sum_ + x;
      comp_ += std::fabs(sum_) >= std::fabs(x) ? (sum_ - t) + x : (x - t) + sum_;
      sum_ = t;
    }
    double value() const { return sum_ + comp_; }

   private:
    double sum_ = 0.0, comp_ = 0.0;
  };

  Manifold manifold_;
  PointSet points_;
  ComplexVector beta_;
  double h_;
  double beta_sq_ = 0.0;
  double cutoff_ = 0.0;
  double eta_ = 0.0;
  std::optional<std::int64_t> excluded_;
  std::vector<std::int64_t> lambda_sq_;
  std::vector<double> weight_;
  std::vector<double> term_;
  NormSq norm_;
};

inline NormSq l2_norm_sq(const GreenCombination& g) { return g.l2_norm_sq(); }

inline ShellSpectrum project_window(const GreenCombination& g, const SpectralWindow& w) {
  return project_window(g.normalized_spectrum(), w);
}

inline double quasimode_residual(const GreenCombination& g, const SpectralWindow& w) {
  return quasimode_residual(g.normalized_spectrum(), w);
}

struct WindowMass {
  double r = 0.0;
  double mass = 0.0;        ///< ||Pi g||^2 / ||g||^2
  double tail_bound = 0.0;  ///< relative uncertainty from the beyond-cutoff tail
};

inline std::vector<WindowMass> window_mass_profile(const Manifold& m, const PointSet& q, const ComplexVector& beta,
                                                   double h, const std::vector<double>& radii, double cutoff = 0.0) {
  const GreenCombination g(m, q, beta, h, cutoff);
  const double rel = g.l2_norm_sq().tail_bound / g.l2_norm_sq().value;
  std::vector<WindowMass> out;
  for (double r : radii) out.push_back({r, g.window_mass(r), rel});
  return out;
}

/// The eigenfunction of Delta_L at a secular root: beta = S v / ||S v|| with v spanning
/// ker(C - G S), and the boundary coordinates (G beta, beta) of G^{Q,beta}.
struct SecularEigenfunction {
  double eta_star = 0.0;
  ComplexVector beta;
  extension::BoundaryCoordinates coordinates;
  double membership_residual = 0.0;

  double h() const { return 1.0 / std::sqrt(eta_star); }
};

inline SecularEigenfunction secular_eigenfunction(const extension::LagrangianFrame& f,
                                                  const extension::GreenEvaluator& ev, double eta_star) {
  if (!(eta_star > 0.0)) throw PreconditionError("secular eigenfunctions need eta_star > 0 to define h");
  const auto g = ev(eta_star);
  const ComplexVector v = extension::secular_null_vector(f, g);
  ComplexVector beta = f.s() * v;
  const double nb = beta.norm();
  if (!(nb > 0.0)) throw PreconditionError("S v vanishes: no Green part at this root");
  beta /= nb;
  SecularEigenfunction out;
  out.eta_star = eta_star;
  out.beta = beta;
  out.coordinates = {g.entries.cast<Complex>() * beta, beta};
  out.membership_residual = extension::frame_membership_residual(f, out.coordinates);
  return out;
}

}  // namespace pointpert::green
