#pragma once

// Point perturbations Delta_L of the torus Laplacian: Lagrangian frames (C, S), the
// regularised Green matrix, the coupling matrix S (C - G S)^{-1}, the secular determinant
// and its roots, and the resolvent P_{L,eta} = (Delta_L - eta)^{-1} (Delta - eta).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>

#include "pointpert/errors.hpp"
#include "pointpert/lattice.hpp"
#include "pointpert/modes.hpp"
#include "pointpert/spectra.hpp"
#include "pointpert/types.hpp"

namespace pointpert::extension {

using spectra::Manifold;
using spectra::PointSet;

inline constexpr double kFrameTolerance = 1e-10;
inline constexpr double kPoleGuard = 1e-8;

// ---------------------------------------------------------------------------------------
// Frames

struct FrameResiduals {
  double unitarity = 0.0;  ///< ||C*C + S*S - Id||_F
  double symmetry = 0.0;   ///< ||C*S - S*C||_F
};

inline FrameResiduals frame_residuals(const ComplexMatrix& c, const ComplexMatrix& s) {
  const auto n = c.rows();
  const ComplexMatrix id = ComplexMatrix::Identity(n, n);
  return {(c.adjoint() * c + s.adjoint() * s - id).norm(), (c.adjoint() * s - s.adjoint() * c).norm()};
}

class LagrangianFrame {
 public:
  /// Throws FrameValidationError unless both Lagrangian identities hold to `tol`.
  static LagrangianFrame validate(ComplexMatrix c, ComplexMatrix s, double tol = kFrameTolerance) {
    if (c.rows() == 0 || c.rows() != c.cols() || s.rows() != c.rows() || s.cols() != c.cols())
      throw PreconditionError("frame matrices must be square, nonempty and of equal size");
    const auto r = frame_residuals(c, s);
    if (!(r.unitarity <= tol) || !(r.symmetry <= tol)) throw FrameValidationError(r.unitarity, r.symmetry, tol);
    return LagrangianFrame(std::move(c), std::move(s));
  }

  /// (Id, 0): the unperturbed Laplacian.
  static LagrangianFrame trivial(Eigen::Index n) {
    return LagrangianFrame(ComplexMatrix::Identity(n, n), ComplexMatrix::Zero(n, n));
  }

  /// N = 1 frame (cos theta, sin theta).
  static LagrangianFrame angle(double theta) {
    ComplexMatrix c(1, 1), s(1, 1);
    c(0, 0) = std::cos(theta);
    s(0, 0) = std::sin(theta);
    return LagrangianFrame(std::move(c), std::move(s));
  }

  /// Real frame O diag(cos theta) O^T, O diag(sin theta) O^T.
  static LagrangianFrame real_rotation(const RealMatrix& o, const std::vector<double>& thetas) {
    const auto n = static_cast<Eigen::Index>(thetas.size());
    if (o.rows() != n || o.cols() != n) throw PreconditionError("rotation size must match angle count");
    Eigen::VectorXd cs(n), sn(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      cs(i) = std::cos(thetas[static_cast<std::size_t>(i)]);
      sn(i) = std::sin(thetas[static_cast<std::size_t>(i)]);
    }
    const RealMatrix c = o * cs.asDiagonal() * o.transpose();
    const RealMatrix s = o * sn.asDiagonal() * o.transpose();
    return validate(c.cast<Complex>(), s.cast<Complex>(), 1e-9);
  }

  /// U diag(cos theta) U*, U diag(sin theta) U* for unitary U: coupling U tan(theta) U*.
  static LagrangianFrame unitary_rotation(const ComplexMatrix& u, const std::vector<double>& thetas) {
    const auto n = static_cast<Eigen::Index>(thetas.size());
    if (u.rows() != n || u.cols() != n) throw PreconditionError("rotation size must match angle count");
    if ((u.adjoint() * u - ComplexMatrix::Identity(n, n)).norm() > 1e-10) throw PreconditionError("rotation is not unitary");
    Eigen::VectorXcd cs(n), sn(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      cs(i) = std::cos(thetas[static_cast<std::size_t>(i)]);
      sn(i) = std::sin(thetas[static_cast<std::size_t>(i)]);
    }
    return validate(u * cs.asDiagonal() * u.adjoint(), u * sn.asDiagonal() * u.adjoint(), 1e-9);
  }

  const ComplexMatrix& c() const { return c_; }
  const ComplexMatrix& s() const { return s_; }
  Eigen::Index size() const { return c_.rows(); }

  bool is_real(double tol = 0.0) const {
    return c_.imag().cwiseAbs().maxCoeff() <= tol && s_.imag().cwiseAbs().maxCoeff() <= tol;
  }

  /// Stacked 2N x N matrix [C; S]; its columns are orthonormal.
  ComplexMatrix stacked() const {
    ComplexMatrix f(2 * size(), size());
    f << c_, s_;
    return f;
  }

  /// (C U, S U) for unitary U: another frame of the same subspace.
  LagrangianFrame times(const ComplexMatrix& u) const {
    if (u.rows() != size() || u.cols() != size()) throw PreconditionError("unitary size mismatch");
    const double defect = (u.adjoint() * u - ComplexMatrix::Identity(size(), size())).norm();
    if (defect > 1e-10) throw PreconditionError("right factor is not unitary");
    return LagrangianFrame(c_ * u, s_ * u);
  }

 private:
  LagrangianFrame(ComplexMatrix c, ComplexMatrix s) : c_(std::move(c)), s_(std::move(s)) {}

  ComplexMatrix c_;
  ComplexMatrix s_;
};

inline LagrangianFrame validate_frame(ComplexMatrix c, ComplexMatrix s, double tol = kFrameTolerance) {
  return LagrangianFrame::validate(std::move(c), std::move(s), tol);
}

/// True iff C1 = C2 U and S1 = S2 U for a unitary U.  Because [C2; S2] has orthonormal
/// columns, the only candidate is U = [C2; S2]* [C1; S1].
inline bool frames_equivalent(const LagrangianFrame& f1, const LagrangianFrame& f2, double tol = 1e-8) {
  if (f1.size() != f2.size()) return false;
  const ComplexMatrix a = f1.stacked();
  const ComplexMatrix b = f2.stacked();
  const ComplexMatrix u = b.adjoint() * a;
  const double fit = (a - b * u).norm();
  const double unit = (u.adjoint() * u - ComplexMatrix::Identity(f1.size(), f1.size())).norm();
  return fit <= tol && unit <= tol;
}

/// Haar-distributed unitary (QR of a complex Ginibre matrix, diagonal phases fixed).
template <class Rng>
ComplexMatrix random_unitary(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> gauss;
  ComplexMatrix z(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) z(i, j) = Complex(gauss(rng), gauss(rng));
  Eigen::HouseholderQR<ComplexMatrix> qr(z);
  ComplexMatrix q = qr.householderQ();
  const ComplexMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    const Complex d = r(j, j);
    if (std::abs(d) > 0.0) q.col(j) *= d / std::abs(d);
  }
  return q;
}

template <class Rng>
RealMatrix random_orthogonal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> gauss;
  RealMatrix z(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) z(i, j) = gauss(rng);
  Eigen::HouseholderQR<RealMatrix> qr(z);
  RealMatrix q = qr.householderQ();
  for (Eigen::Index j = 0; j < n; ++j)
    if (qr.matrixQR()(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

/// Random complex frame: ((I + V)/2, (I - V)/2i) for Haar V, times a Haar right factor.
template <class Rng>
LagrangianFrame random_frame(Eigen::Index n, Rng& rng) {
  const ComplexMatrix v = random_unitary(n, rng);
  const ComplexMatrix id = ComplexMatrix::Identity(n, n);
  const ComplexMatrix c = 0.5 * (id + v);
  const ComplexMatrix s = (id - v) / Complex(0.0, 2.0);
  return LagrangianFrame::validate(c, s, 1e-9).times(random_unitary(n, rng));
}

template <class Rng>
LagrangianFrame random_real_frame(Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> angle(0.0, kPi);
  std::vector<double> thetas(static_cast<std::size_t>(n));
  for (auto& t : thetas) t = angle(rng);
  return LagrangianFrame::real_rotation(random_orthogonal(n, rng), thetas);
}

/// Omega((a+, a-), (b+, b-)) = <a+, b-> - <a-, b+>.
struct BoundaryCoordinates {
  ComplexVector a_plus;
  ComplexVector a_minus;
};

inline Complex symplectic_form(const BoundaryCoordinates& a, const BoundaryCoordinates& b) {
  return a.a_plus.dot(b.a_minus) - a.a_minus.dot(b.a_plus);
}

/// ||x - P x|| / ||x|| with P the orthogonal projector onto the column space of [C; S].
inline double frame_membership_residual(const LagrangianFrame& f, const BoundaryCoordinates& x) {
  ComplexVector v(2 * f.size());
  v << x.a_plus, x.a_minus;
  const double nv = v.norm();
  if (nv == 0.0) return 0.0;
  const ComplexMatrix b = f.stacked();
  return (v - b * (b.adjoint() * v)).norm() / nv;
}

// ---------------------------------------------------------------------------------------
// Green matrix

struct GreenMatrix {
  double eta = 0.0;
  RealMatrix entries;
  double cutoff = 0.0;      ///< largest lambda^2 summed explicitly
  double tail_bound = 0.0;  ///< estimated absolute error per entry
};

struct GreenOptions {
  double tol = 1e-11;            ///< target absolute accuracy of every entry
  int moments = 44;              ///< Taylor terms of exp(s eta) in the short-time integral
  double split = 3.0;            ///< tau * eta_max for the heat-kernel split
  double spectral_decay = 39.0;  ///< tau * (n_cut - eta_max): exp(-39) ~ 1e-17
  std::uint64_t point_budget = 150'000'000;  ///< orthant lattice points per sweep
  bool cross_check = true;       ///< rebuild with tau/2 and compare on probe values
};

namespace detail {

/// theta(s, x) = sum_k e^{ikx} e^{-s k^2}, and theta - 1 when `minus_one` (x = 0 only).
inline double theta1(double s, double x, bool minus_one = false) {
  x = std::remainder(x, kTwoPi);
  if (s < 2.0) {
    double img = 0.0;
    for (int m = -5; m <= 5; ++m) {
      const double y = x + kTwoPi * m;
      img += std::exp(-y * y / (4.0 * s));
    }
    const double v = std::sqrt(kPi / s) * img;
    return minus_one ? v - 1.0 : v;
  }
  double tail = 0.0;
  for (int k = 1; k <= 12; ++k) tail += 2.0 * std::cos(k * x) * std::exp(-s * k * k);
  return minus_one ? tail : 1.0 + tail;
}

/// Theta(s) - 1 = sum_{k != 0} e^{-s |k|^2}, computed without cancellation for large s.
inline double theta_minus_one(int dim, double s) {
  const double e = theta1(s, 0.0, true);
  return dim == 2 ? e * (2.0 + e) : e * (3.0 + e * (3.0 + e));
}

/// Composite 20-point Gauss-Legendre rule on [0, tau], geometrically graded towards 0.
inline std::vector<std::pair<double, double>> graded_rule(double tau, int levels = 64) {
  using boost::math::quadrature::gauss;
  const auto& x = gauss<double, 20>::abscissa();
  const auto& w = gauss<double, 20>::weights();
  std::vector<std::pair<double, double>> rule;
  auto add = [&](double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] == 0.0) {
        rule.emplace_back(c, h * w[i]);
      } else {
        rule.emplace_back(c - h * x[i], h * w[i]);
        rule.emplace_back(c + h * x[i], h * w[i]);
      }
    }
  };
  double b = tau;
  for (int l = 0; l < levels; ++l, b *= 0.5) add(0.5 * b, b);
  add(0.0, b);
  return rule;
}

}  // namespace detail

/// Evaluates the regularised Green matrix at any real eta with |eta| <= eta_max.
///
/// Entry (q, p) is (2pi)^{-d} sum_k e^{ik.(p-q)} f(|k|^2, eta) with f(t) = 1/(t - eta) off the
/// diagonal and 1/(t - eta) - t/(t^2 + 1) on it.  Each term is split at heat time tau,
///   1/(t - eta) = e^{-tau (t - eta)}/(t - eta) + int_0^tau e^{-s (t - eta)} ds,
/// so the lattice sum becomes a Gaussian-damped shell sum plus a short-time integral of the
/// torus theta function, which factorises into one-dimensional theta functions.  The integral
/// is expanded in powers of eta, giving moments that are computed once.  The diagonal
/// renormaliser t/(t^2 + 1) is written as int_0^inf e^{-st} cos s ds and handled the same way.
class GreenEvaluator {
 public:
  GreenEvaluator(const Manifold& m, const PointSet& points, double eta_max, GreenOptions opt = {})
      : manifold_(m), points_(points), eta_max_(std::max(1.0, std::fabs(eta_max))), opt_(opt) {
    if (!m.is_torus()) throw UnsupportedError("Green matrices are implemented for flat tori only");
    if (!(opt.tol > 0.0)) throw PreconditionError("green tolerance must be positive");
    dim_ = m.dimension();
    const std::size_t n = points.size();
    displacements_.push_back(Point{});
    pair_index_.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        pair_index_[i * n + j] = pair_index_[j * n + i] = displacements_.size();
        displacements_.push_back(m.displacement(points[i], points[j]));
      }
    }
    tables_ = build(opt_.split / eta_max_);
    tail_bound_ = tables_.truncation;
    if (opt_.cross_check) {
      const auto alt = build(0.5 * opt_.split / eta_max_);
      double worst = 0.0;
      for (double t : {-0.93, -0.31, 0.17, 0.58, 0.97}) {
        double eta = t * eta_max_;
        const auto nearest = static_cast<double>(nearest_eigenvalue_square(eta));
        if (std::fabs(eta - nearest) < 0.25) eta = nearest + (eta >= nearest ? 0.25 : -0.25);
        if (std::fabs(eta) > eta_max_) continue;
        for (std::size_t s = 0; s < displacements_.size(); ++s)
          worst = std::max(worst, std::fabs(entry_with(tables_, s, eta) - entry_with(alt, s, eta)));
      }
      tail_bound_ = std::max(tail_bound_, worst);
    }
  }

  const Manifold& manifold() const { return manifold_; }
  const PointSet& points() const { return points_; }
  double eta_max() const { return eta_max_; }
  /// Largest lambda^2 in the explicit (damped) shell sum.
  std::int64_t spectral_cutoff() const { return tables_.cutoff; }
  double split_time() const { return tables_.tau; }
  double tail_bound() const { return tail_bound_; }
  bool converged() const { return tail_bound_ < opt_.tol; }

  /// Representable lambda^2 in [lo, hi] (hi <= spectral cutoff).
  std::vector<std::int64_t> eigenvalue_squares(double lo, double hi) const {
    if (hi > static_cast<double>(tables_.cutoff))
      throw PreconditionError("spectral range exceeds the evaluator's explicit cutoff");
    std::vector<std::int64_t> out;
    for (const auto& [n, r] : tables_.counts)
      if (static_cast<double>(n) >= lo && static_cast<double>(n) <= hi) out.push_back(n);
    return out;
  }

  /// r_d(n) for n <= spectral cutoff.
  double multiplicity(std::int64_t n) const {
    const auto& c = tables_.counts;
    auto it = std::lower_bound(c.begin(), c.end(), n, [](const auto& e, std::int64_t v) { return e.first < v; });
    return (it != c.end() && it->first == n) ? it->second : 0.0;
  }

  std::int64_t nearest_eigenvalue_square(double eta) const {
    const auto& rep = tables_.counts;
    auto it = std::lower_bound(rep.begin(), rep.end(), eta,
                               [](const auto& e, double v) { return static_cast<double>(e.first) < v; });
    std::int64_t best = rep.front().first;
    double dist = std::numeric_limits<double>::infinity();
    for (auto c : {it, it == rep.begin() ? it : std::prev(it)}) {
      if (c == rep.end()) continue;
      const double d = std::fabs(static_cast<double>(c->first) - eta);
      if (d < dist) {
        dist = d;
        best = c->first;
      }
    }
    return best;
  }

  void check_eta(double eta) const {
    if (!std::isfinite(eta) || std::fabs(eta) > eta_max_ * (1.0 + 1e-12))
      throw PreconditionError("eta = " + std::to_string(eta) + " outside the evaluator range |eta| <= " +
                              std::to_string(eta_max_));
    const auto n = nearest_eigenvalue_square(eta);
    if (std::fabs(static_cast<double>(n) - eta) < kPoleGuard) throw PoleError(eta, n);
  }

  /// Entry for displacement slot `slot` (0 = diagonal); no pole check.
  double entry(std::size_t slot, double eta) const { return entry_with(tables_, slot, eta); }

  GreenMatrix operator()(double eta) const {
    check_eta(eta);
    const auto n = static_cast<Eigen::Index>(points_.size());
    std::vector<double> slot_values(displacements_.size());
    for (std::size_t s = 0; s < displacements_.size(); ++s) slot_values[s] = entry(s, eta);
    GreenMatrix g;
    g.eta = eta;
    g.cutoff = static_cast<double>(tables_.cutoff);
    g.tail_bound = tail_bound_;
    g.entries.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        g.entries(i, j) = i == j ? slot_values[0]
                                 : slot_values[pair_index_[static_cast<std::size_t>(i * n + j)]];
    return g;
  }

  /// d/deta of the Green matrix: [(2pi)^{-d} sum_k e^{ik.(p-q)} / (|k|^2 - eta)^2], the same on
  /// and off the diagonal since the renormaliser does not depend on eta.  For a Green
  /// combination, beta* G' beta = ||sum_q beta_q G_eta^q||^2.
  RealMatrix derivative(double eta) const {
    check_eta(eta);
    const auto n = static_cast<Eigen::Index>(points_.size());
    std::vector<double> slot_values(displacements_.size());
    for (std::size_t s = 0; s < displacements_.size(); ++s) slot_values[s] = derivative_with(tables_, s, eta);
    RealMatrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        d(i, j) = i == j ? slot_values[0] : slot_values[pair_index_[static_cast<std::size_t>(i * n + j)]];
    return d;
  }

  /// ||G_eta^q||^2 = (2pi)^{-d} sum_n r(n) / (n - eta)^2 (explicit shells plus Weyl tail).
  double green_function_norm_sq(double eta) const {
    check_eta(eta);
    double s = 0.0;
    for (const auto& [n, r] : tables_.counts) {
      const double d = static_cast<double>(n) - eta;
      s += r / (d * d);
    }
    const double k = static_cast<double>(tables_.cutoff);
    const double a = k - eta;
    double tail;
    if (dim_ == 2) {
      tail = kPi / a;
    } else if (eta > 0) {
      const double sk = std::sqrt(k), se = std::sqrt(eta);
      tail = kTwoPi * sk / a + kPi / se * std::log((sk + se) / (sk - se));
    } else if (eta < 0) {
      const double b = std::sqrt(-eta);
      tail = kTwoPi * std::sqrt(k) / a + kTwoPi / b * (kPi / 2.0 - std::atan(std::sqrt(k) / b));
    } else {
      tail = 2.0 * kTwoPi / std::sqrt(k);
    }
    return (s + tail) * manifold_.weyl_normalisation();
  }

 private:
  struct Tables {
    double tau = 0.0;
    std::int64_t cutoff = 0;
    std::vector<std::pair<std::int64_t, double>> counts;                  // (n, r(n)), r > 0
    std::vector<std::vector<std::pair<std::int64_t, double>>> damped;     // (n, S(n) e^{-tau n})
    std::vector<std::vector<double>> moments;                            // int_0^tau Theta s^j/j!
    double diag_constant = 0.0;
    double truncation = 0.0;
  };

  Tables build(double tau) const {
    Tables t;
    t.tau = tau;
    t.cutoff = static_cast<std::int64_t>(std::ceil(eta_max_ + opt_.spectral_decay / tau));
    const double orthant_points =
        lattice::count_upper_bound(dim_, static_cast<double>(t.cutoff)) / (dim_ == 2 ? 4.0 : 8.0);
    if (orthant_points > static_cast<double>(opt_.point_budget))
      throw ResourceError("Green matrix lattice sweep", static_cast<std::uint64_t>(orthant_points),
                          opt_.point_budget);
    const std::size_t nd = displacements_.size();
    const auto sums = lattice::cosine_shell_sums(dim_, t.cutoff, displacements_);
    t.damped.assign(nd, {});
    for (std::int64_t n = 0; n <= t.cutoff; ++n) {
      const double r = sums[0][static_cast<std::size_t>(n)];
      if (r == 0.0) continue;
      t.counts.emplace_back(n, r);
      const double damp = std::exp(-tau * static_cast<double>(n));
      for (std::size_t d = 0; d < nd; ++d) t.damped[d].emplace_back(n, sums[d][static_cast<std::size_t>(n)] * damp);
    }

    // Short-time moments on a graded rule.
    const int jmax = opt_.moments;
    const auto rule = detail::graded_rule(tau);
    t.moments.assign(nd, std::vector<double>(static_cast<std::size_t>(jmax) + 1, 0.0));
    for (const auto& [s, w] : rule) {
      for (std::size_t d = 0; d < nd; ++d) {
        double theta;
        double base;
        if (d == 0) {
          theta = detail::theta_minus_one(dim_, s);
          base = theta * -std::expm1(-s);  // (Theta - 1)(1 - e^{-s})
        } else {
          theta = 1.0;
          for (int i = 0; i < dim_; ++i) theta *= detail::theta1(s, displacements_[d].x[static_cast<std::size_t>(i)]);
          base = theta;
        }
        auto& mu = t.moments[d];
        mu[0] += w * base;
        double p = 1.0;
        for (int j = 1; j <= jmax; ++j) {
          p *= s / j;
          mu[static_cast<std::size_t>(j)] += w * theta * p;
        }
      }
    }

    // Diagonal constants: the e^{-tau (n+1)}/(n+1) shell sum and
    // int_0^inf (Theta - 1)(e^{-s} - cos s) ds = sum_{k != 0} [1/(|k|^2+1) - |k|^2/(|k|^4+1)].
    double shell_const = 0.0;
    for (const auto& [n, r] : t.counts) {
      if (n == 0) continue;
      const double x = static_cast<double>(n) + 1.0;
      shell_const += r * std::exp(-tau * x) / x;
    }
    double renorm = 0.0;
    for (const auto& [s, w] : detail::graded_rule(1.0)) {
      const double h = std::sin(0.5 * s);
      renorm += w * detail::theta_minus_one(dim_, s) * (std::expm1(-s) + 2.0 * h * h);  // e^{-s} - cos s
    }
    {
      using boost::math::quadrature::gauss;
      const auto& x = gauss<double, 20>::abscissa();
      const auto& wt = gauss<double, 20>::weights();
      for (int seg = 1; seg < 48; ++seg) {
        const double c = seg + 0.5;
        for (std::size_t i = 0; i < x.size(); ++i) {
          for (double sgn : {-1.0, 1.0}) {
            if (x[i] == 0.0 && sgn > 0) continue;
            const double s = c + sgn * 0.5 * x[i];
            renorm += 0.5 * wt[i] * detail::theta_minus_one(dim_, s) * (std::exp(-s) - std::cos(s));
          }
        }
      }
    }
    t.diag_constant = renorm - shell_const;

    // Dropped shells (n > cutoff, Weyl envelope doubled) and the Taylor remainder.
    const double gap = static_cast<double>(t.cutoff) - eta_max_;
    const double dens = dim_ == 2 ? kPi : kTwoPi * std::sqrt(static_cast<double>(t.cutoff));
    const double x = tau * eta_max_;
    double taylor = std::exp(x);
    {
      double term = 1.0;
      for (int j = 1; j <= jmax; ++j) term *= x / j;
      taylor = term * x / (jmax + 1) * std::exp(x) * tau;
    }
    double theta_scale = 0.0;
    for (const auto& mu : t.moments) theta_scale = std::max(theta_scale, std::fabs(mu[0]) / tau + 1.0);
    t.truncation = (2.0 * dens * std::exp(-tau * gap) / (tau * gap) + taylor * theta_scale) *
                   manifold_.weyl_normalisation();
    return t;
  }

  double entry_with(const Tables& t, std::size_t slot, double eta) const {
    double spectral = 0.0;
    const bool diag = slot == 0;
    for (const auto& [n, v] : t.damped[slot]) {
      if (diag && n == 0) continue;
      spectral += v / (static_cast<double>(n) - eta);
    }
    spectral *= std::exp(t.tau * eta);
    const auto& mu = t.moments[slot];
    double series = 0.0;
    for (std::size_t j = mu.size() - 1; j >= 1; --j) series = (series + mu[j]) * eta;
    double value = spectral + series + mu[0];
    if (diag) value += -1.0 / eta + t.diag_constant;
    return value * manifold_.weyl_normalisation();
  }

  double derivative_with(const Tables& t, std::size_t slot, double eta) const {
    double spectral = 0.0;
    const bool diag = slot == 0;
    for (const auto& [n, v] : t.damped[slot]) {
      if (diag && n == 0) continue;
      const double a = 1.0 / (static_cast<double>(n) - eta);
      spectral += v * a * (t.tau + a);
    }
    spectral *= std::exp(t.tau * eta);
    const auto& mu = t.moments[slot];
    double series = 0.0;
    for (std::size_t j = mu.size() - 1; j >= 1; --j) series = series * eta + static_cast<double>(j) * mu[j];
    double value = spectral + series;
    if (diag) value += 1.0 / (eta * eta);
    return value * manifold_.weyl_normalisation();
  }

  Manifold manifold_;
  PointSet points_;
  double eta_max_;
  GreenOptions opt_;
  int dim_ = 2;
  std::vector<Point> displacements_;
  std::vector<std::size_t> pair_index_;
  Tables tables_;
  double tail_bound_ = 0.0;
};

/// One-shot Green matrix at eta.
inline GreenMatrix green_matrix(const Manifold& m, const PointSet& q, double eta, double tol = 1e-11) {
  GreenOptions opt;
  opt.tol = tol;
  return GreenEvaluator(m, q, eta, opt)(eta);
}

// ---------------------------------------------------------------------------------------
// Coupling matrix and secular determinant

struct CouplingMatrix {
  double eta = 0.0;
  ComplexMatrix a;
};

inline ComplexMatrix secular_matrix(const LagrangianFrame& f, const GreenMatrix& g) {
  if (g.entries.rows() != f.size()) throw PreconditionError("frame and Green matrix sizes differ");
  return f.c() - g.entries.cast<Complex>() * f.s();
}

inline double condition_number(const ComplexMatrix& m) {
  Eigen::JacobiSVD<ComplexMatrix> svd(m);
  const auto& sv = svd.singularValues();
  const double lo = sv(sv.size() - 1);
  return lo == 0.0 ? std::numeric_limits<double>::infinity() : sv(0) / lo;
}

/// (||C|| + ||G|| ||S||) / sigma_min(C - G S).  Unlike the plain condition number this also
/// detects singularity for N = 1.
inline double secular_condition(const LagrangianFrame& f, const GreenMatrix& g) {
  const ComplexMatrix m = secular_matrix(f, g);
  auto spectral_norm = [](const auto& a) { return Eigen::JacobiSVD<std::decay_t<decltype(a)>>(a).singularValues()(0); };
  const double scale = spectral_norm(f.c()) + spectral_norm(g.entries) * spectral_norm(f.s());
  const Eigen::JacobiSVD<ComplexMatrix> svd(m);
  const double lo = svd.singularValues()(m.rows() - 1);
  return lo == 0.0 ? std::numeric_limits<double>::infinity() : scale / lo;
}

/// A(L, eta) = S (C - G S)^{-1}.  Throws SingularSecularMatrix when eta is (numerically) an
/// eigenvalue of Delta_L.
inline CouplingMatrix coupling_matrix(const LagrangianFrame& f, const GreenMatrix& g, double max_condition = 1e12) {
  const ComplexMatrix m = secular_matrix(f, g);
  const double cond = secular_condition(f, g);
  if (!(cond < max_condition)) throw SingularSecularMatrix(g.eta, cond);
  return {g.eta, f.s() * m.partialPivLu().inverse()};
}

inline Complex secular_det(const LagrangianFrame& f, const GreenMatrix& g) {
  return secular_matrix(f, g).determinant();
}

inline Complex secular_det(const LagrangianFrame& f, const GreenEvaluator& ev, double eta) {
  return secular_det(f, ev(eta));
}

/// Constant phase of the secular determinant.  For real symmetric G,
/// det(C - G S) = D * sqrt(det(C + iS) det(C - iS)) with D real, so
/// exp(-i phi) det(C - G S) is real for phi = arg(det(C + iS) det(C - iS)) / 2.
inline double secular_phase(const LagrangianFrame& f) {
  const Complex i(0.0, 1.0);
  const Complex w = (f.c() + i * f.s()).determinant() * (f.c() - i * f.s()).determinant();
  return 0.5 * std::arg(w);
}

struct SecularRoot {
  double eta_star = 0.0;
  double residual = 0.0;  ///< |det(C - G S)| at eta_star
  double gap_left = 0.0;
  double gap_right = 0.0;

  double sqrt_eta_star() const { return std::sqrt(std::max(eta_star, 0.0)); }
};

struct RootScan {
  std::vector<SecularRoot> roots;
  std::vector<std::string> warnings;
  std::size_t gaps = 0;
};

namespace detail {

struct GapScan {
  std::vector<SecularRoot> roots;
  std::size_t sign_changes = 0;
};

template <class F>
double bisect(F&& fn, double a, double b, double fa) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    if (mid <= a || mid >= b) break;
    const double fm = fn(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (fa < 0.0)) {
      a = mid;
      fa = fm;
    } else {
      b = mid;
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Roots of det(C - G_eta S) in [lo, hi] away from Spec(Delta).  Each gap between
/// consecutive eigenvalues of Delta (endpoints of [lo, hi] count as gap boundaries, open if
/// they are eigenvalues) is sampled on a Chebyshev grid of `grid` + 1 points, sign changes
/// of the phase-rotated real determinant are bisected to machine precision, and a grid twice
/// as fine is used to flag gaps whose sign-change count is unstable or exceeds N.
inline RootScan find_new_eigenvalues(const LagrangianFrame& f, const GreenEvaluator& ev, double lo, double hi,
                                     int grid = 24) {
  if (!(lo < hi)) throw PreconditionError("root interval must satisfy lo < hi");
  if (grid < 2) throw PreconditionError("root grid must have at least 2 intervals");
  if (f.size() != static_cast<Eigen::Index>(ev.points().size()))
    throw PreconditionError("frame size differs from the number of points");
  RootScan scan;
  const auto phase = std::polar(1.0, -secular_phase(f));
  auto d_real = [&](double eta) { return (phase * secular_det(f, ev, eta)).real(); };

  std::vector<double> breaks{lo};
  for (auto n : ev.eigenvalue_squares(lo, hi)) breaks.push_back(static_cast<double>(n));
  breaks.push_back(hi);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  auto is_eigen = [&](double x) {
    return std::fabs(static_cast<double>(ev.nearest_eigenvalue_square(x)) - x) < kPoleGuard;
  };
  auto scan_gap = [&](double l, double r, int pts) {
    detail::GapScan out;
    const double w = r - l;
    const double off = std::max(1e-6 * w, 2.0 * kPoleGuard);
    const bool open_l = is_eigen(l), open_r = is_eigen(r);
    std::vector<double> xs;
    for (int i = 0; i <= pts; ++i) xs.push_back(l + 0.5 * w * (1.0 - std::cos(kPi * i / pts)));
    if (open_l) xs.front() = l + off;
    if (open_r) xs.back() = r - off;
    if (open_l) xs.insert(xs.begin() + 1, l + 1e-3 * w);
    if (open_r) xs.insert(xs.end() - 1, r - 1e-3 * w);
    std::vector<double> ys;
    for (double x : xs) ys.push_back(d_real(x));
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      double root;
      if (ys[i] == 0.0) {
        root = xs[i];
      } else if ((ys[i] < 0.0) != (ys[i + 1] < 0.0) && ys[i + 1] != 0.0) {
        root = detail::bisect(d_real, xs[i], xs[i + 1], ys[i]);
      } else {
        continue;
      }
      ++out.sign_changes;
      out.roots.push_back({root, std::abs(secular_det(f, ev, root)), l, r});
    }
    if (ys.back() == 0.0) {
      ++out.sign_changes;
      out.roots.push_back({xs.back(), std::abs(secular_det(f, ev, xs.back())), l, r});
    }
    return out;
  };

  for (std::size_t g = 0; g + 1 < breaks.size(); ++g) {
    const double l = breaks[g], r = breaks[g + 1];
    ++scan.gaps;
    auto coarse = scan_gap(l, r, grid);
    const auto fine = scan_gap(l, r, 2 * grid);
    if (fine.sign_changes != coarse.sign_changes)
      scan.warnings.push_back("gap (" + std::to_string(l) + ", " + std::to_string(r) + "): " +
                              std::to_string(coarse.sign_changes) + " sign changes on the coarse grid, " +
                              std::to_string(fine.sign_changes) + " on refinement");
    if (fine.sign_changes > static_cast<std::size_t>(f.size()))
      scan.warnings.push_back("gap (" + std::to_string(l) + ", " + std::to_string(r) + "): " +
                              std::to_string(fine.sign_changes) + " sign changes exceed N = " +
                              std::to_string(f.size()));
    auto& chosen = fine.sign_changes > coarse.sign_changes ? fine.roots : coarse.roots;
    for (const auto& root : chosen) {
      if (!scan.roots.empty() &&
          std::fabs(scan.roots.back().eta_star - root.eta_star) <= 1e-9 * std::max(1.0, std::fabs(root.eta_star)))
        continue;
      scan.roots.push_back(root);
    }
  }
  return scan;
}

/// Unit vector spanning (numerically) ker(C - G S) at a secular root.
inline ComplexVector secular_null_vector(const LagrangianFrame& f, const GreenMatrix& g) {
  Eigen::JacobiSVD<ComplexMatrix> svd(secular_matrix(f, g), Eigen::ComputeFullV);
  return svd.matrixV().col(f.size() - 1);
}

// ---------------------------------------------------------------------------------------
// Resolvent

/// Coefficients of G_eta^q in the basis e_k: conj(e_k(q)) / (|k|^2 - eta).
inline Complex green_coefficient(int dim, const LatticeVector& k, const Point& q, double eta) {
  return std::conj(basis_value(dim, k, q)) / (static_cast<double>(norm_sq(k)) - eta);
}

struct ResolventResult {
  double eta = 0.0;
  ModeExpansion regular;    ///< the unchanged mode part u
  ComplexVector beta;       ///< P u = u + sum_q beta_q G_eta^q
  ComplexVector u_at_points;
  GreenMatrix green;
};

inline ComplexVector values_at(const ModeExpansion& u, const PointSet& q) {
  ComplexVector v(static_cast<Eigen::Index>(q.size()));
  for (std::size_t i = 0; i < q.size(); ++i) v(static_cast<Eigen::Index>(i)) = u(q[i]);
  return v;
}

inline void check_modes(const GreenEvaluator& ev, const ModeExpansion& u, double eta) {
  if (u.dim() != ev.manifold().dimension()) throw PreconditionError("mode expansion dimension mismatch");
  for (const auto& m : u.modes())
    if (std::fabs(static_cast<double>(norm_sq(m.k)) - eta) < kPoleGuard) throw PoleError(eta, norm_sq(m.k));
}

/// P_{L,eta} u = u + sum_{q,p} A_{qp} u(p) G_eta^q.
inline ResolventResult resolvent_apply(const LagrangianFrame& f, const GreenEvaluator& ev, double eta,
                                       const ModeExpansion& u) {
  check_modes(ev, u, eta);
  ResolventResult res;
  res.eta = eta;
  res.regular = u;
  res.green = ev(eta);
  res.u_at_points = values_at(u, ev.points());
  res.beta = coupling_matrix(f, res.green).a * res.u_at_points;
  return res;
}

/// (a+, a-) = (u_Q + G beta, beta).
inline BoundaryCoordinates boundary_coordinates(const ResolventResult& r) {
  return {r.u_at_points + r.green.entries.cast<Complex>() * r.beta, r.beta};
}

/// Mode coefficients of P u restricted to a finite list of frequencies.
inline ModeExpansion resolvent_modes(const ResolventResult& r, const PointSet& q, const std::vector<LatticeVector>& ks) {
  const int dim = r.regular.dim();
  const auto map = r.regular.coefficient_map();
  ModeExpansion out(dim);
  for (const auto& k : ks) {
    Complex c{};
    if (auto it = map.find(k); it != map.end()) c = it->second;
    for (std::size_t i = 0; i < q.size(); ++i) c += r.beta(static_cast<Eigen::Index>(i)) * green_coefficient(dim, k, q[i], r.eta);
    out.add(k, c);
  }
  return out;
}

/// (Delta - eta) u, mode by mode.
inline ModeExpansion shifted_laplacian(const ModeExpansion& u, double eta) {
  ModeExpansion out(u.dim());
  for (const auto& m : u.compressed().modes()) out.add(m.k, m.c * (static_cast<double>(norm_sq(m.k)) - eta));
  return out;
}

/// beta' = A <G_eta^p, f>_p for f = (Delta - eta) u: the finite-rank part of the resolvent
/// of Delta_L applied to f, evaluated through the mode coefficients of f.
inline ComplexVector krein_beta(const LagrangianFrame& f, const GreenEvaluator& ev, double eta, const ModeExpansion& rhs) {
  const auto& q = ev.points();
  ComplexVector pairing = ComplexVector::Zero(static_cast<Eigen::Index>(q.size()));
  for (const auto& m : rhs.compressed().modes())
    for (std::size_t i = 0; i < q.size(); ++i)
      pairing(static_cast<Eigen::Index>(i)) +=
          std::conj(green_coefficient(rhs.dim(), m.k, q[i], eta)) * m.c;
  return coupling_matrix(f, ev(eta)).a * pairing;
}

/// ||P u - (Delta_L - eta)^{-1} (Delta - eta) u|| / ||u||, where the right side is built from
/// the free resolvent acting on the modes of (Delta - eta) u plus the Krein correction.
inline double resolvent_identity_defect(const LagrangianFrame& f, const GreenEvaluator& ev, double eta,
                                        const ModeExpansion& u) {
  const auto res = resolvent_apply(f, ev, eta, u);
  const auto rhs = shifted_laplacian(u, eta);
  double regular_sq = 0.0;
  const auto map = u.coefficient_map();
  for (const auto& m : rhs.modes()) {
    const Complex back = m.c / (static_cast<double>(norm_sq(m.k)) - eta);
    regular_sq += std::norm(back - map.at(m.k));
  }
  const ComplexVector db = res.beta - krein_beta(f, ev, eta, rhs);
  const double gnorm = std::sqrt(ev.green_function_norm_sq(eta));
  const double nu = std::sqrt(u.norm_sq());
  if (nu == 0.0) return 0.0;
  return (std::sqrt(regular_sq) + db.cwiseAbs().sum() * gnorm) / nu;
}

/// <u, (Delta - eta) u> + sum_{q,p} conj(A_{qp} u(p)) u(q).
inline Complex energy_pairing(const LagrangianFrame& f, const GreenEvaluator& ev, double eta, const ModeExpansion& u) {
  check_modes(ev, u, eta);
  const auto g = ev(eta);
  const ComplexVector uq = values_at(u, ev.points());
  const ComplexVector beta = coupling_matrix(f, g).a * uq;
  Complex s{};
  for (const auto& m : u.compressed().modes()) s += std::norm(m.c) * (static_cast<double>(norm_sq(m.k)) - eta);
  return s + beta.dot(uq);
}

/// <P u, (Delta_L - eta) P u> = <P u, (Delta - eta) u>, from the mode expansion of P u.
inline Complex energy_pairing_expansion(const ResolventResult& r, const PointSet& q) {
  const auto rhs = shifted_laplacian(r.regular, r.eta);
  std::vector<LatticeVector> ks;
  for (const auto& m : rhs.modes()) ks.push_back(m.k);
  return inner(resolvent_modes(r, q, ks), rhs);
}

}  // namespace pointpert::extension
