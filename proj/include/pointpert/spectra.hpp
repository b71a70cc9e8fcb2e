#pragma once

// Closed-form spectral backends: flat tori R^d / 2pi Z^d (d = 2, 3) and the round unit sphere.
//
// Eigenvalues of sqrt(Delta) are handled through their exact integer squares:
// lambda^2 = |k|^2 on tori and lambda^2 = l(l+1) on the sphere.  Shells with the same
// integer are never merged by floating comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pointpert/errors.hpp"
#include "pointpert/lattice.hpp"
#include "pointpert/types.hpp"

namespace pointpert::spectra {

inline std::string_view to_string(ManifoldKind kind) {
  switch (kind) {
    case ManifoldKind::torus2: return "torus2";
    case ManifoldKind::torus3: return "torus3";
    case ManifoldKind::sphere2: return "sphere2";
  }
  return "unknown";
}

inline ManifoldKind parse_manifold_kind(std::string_view name) {
  if (name == "torus2") return ManifoldKind::torus2;
  if (name == "torus3") return ManifoldKind::torus3;
  if (name == "sphere2") return ManifoldKind::sphere2;
  throw PreconditionError("unknown manifold kind '" + std::string(name) + "'");
}

/// Looping-direction flag used to route diagnostics: on flat tori only rational directions
/// loop (measure zero); on the round sphere every geodesic from q returns to q.
enum class LoopingSet { measure_zero, full };

/// Immutable description of a backend manifold.
class Manifold {
 public:
  constexpr explicit Manifold(ManifoldKind kind) : kind_(kind) {}

  constexpr ManifoldKind kind() const { return kind_; }
  constexpr bool is_torus() const { return kind_ != ManifoldKind::sphere2; }
  constexpr int dimension() const { return kind_ == ManifoldKind::torus3 ? 3 : 2; }
  std::string_view name() const { return to_string(kind_); }

  double volume() const {
    switch (kind_) {
      case ManifoldKind::torus2: return kTwoPi * kTwoPi;
      case ManifoldKind::torus3: return kTwoPi * kTwoPi * kTwoPi;
      case ManifoldKind::sphere2: return 4.0 * kPi;
    }
    return 0.0;
  }

  /// vol(B^d), the Euclidean unit ball.
  double ball_volume() const { return dimension() == 2 ? kPi : 4.0 / 3.0 * kPi; }

  /// (2pi)^{-d}: the local Weyl density normalisation and the torus kernel prefactor.
  double weyl_normalisation() const { return 1.0 / std::pow(kTwoPi, dimension()); }

  LoopingSet looping_set() const { return is_torus() ? LoopingSet::measure_zero : LoopingSet::full; }

  /// Torus displacement p - q (any representative; kernels are 2pi-periodic).
  Point displacement(const Point& q, const Point& p) const {
    return {{p.x[0] - q.x[0], p.x[1] - q.x[1], p.x[2] - q.x[2]}};
  }

  /// Sphere: cosine of the geodesic distance between (theta, phi) points.
  static double sphere_cos_distance(const Point& q, const Point& p) {
    const double c = std::cos(q.x[0]) * std::cos(p.x[0]) +
                     std::sin(q.x[0]) * std::sin(p.x[0]) * std::cos(p.x[1] - q.x[1]);
    return std::clamp(c, -1.0, 1.0);
  }

  friend bool operator==(const Manifold&, const Manifold&) = default;

 private:
  ManifoldKind kind_;
};

/// Finite set of pairwise distinct points of one manifold.
class PointSet {
 public:
  PointSet(const Manifold& m, std::vector<Point> points) : points_(std::move(points)) {
    if (points_.empty()) throw PreconditionError("point set must contain at least one point");
    for (auto& p : points_) {
      if (m.is_torus()) {
        for (int i = 0; i < 3; ++i) {
          auto& c = p.x[static_cast<std::size_t>(i)];
          if (i >= m.dimension()) {
            c = 0.0;
            continue;
          }
          if (!std::isfinite(c)) throw PreconditionError("point coordinates must be finite");
          c = std::fmod(c, kTwoPi);
          if (c < 0.0) c += kTwoPi;
        }
      } else {
        if (!std::isfinite(p.x[0]) || !std::isfinite(p.x[1]))
          throw PreconditionError("point coordinates must be finite");
        if (p.x[0] < 0.0 || p.x[0] > kPi) throw PreconditionError("sphere theta must lie in [0, pi]");
        p.x[2] = 0.0;
      }
    }
    for (std::size_t i = 0; i < points_.size(); ++i) {
      for (std::size_t j = i + 1; j < points_.size(); ++j) {
        if (coincide(m, points_[i], points_[j]))
          throw PreconditionError("points " + std::to_string(i) + " and " + std::to_string(j) +
                                  " coincide");
      }
    }
  }

  std::size_t size() const { return points_.size(); }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Point> points() const { return points_; }
  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

 private:
  static bool coincide(const Manifold& m, const Point& a, const Point& b) {
    constexpr double tol = 1e-12;
    if (!m.is_torus()) return Manifold::sphere_cos_distance(a, b) > 1.0 - tol;
    for (int i = 0; i < m.dimension(); ++i) {
      double d = std::fabs(a.x[static_cast<std::size_t>(i)] - b.x[static_cast<std::size_t>(i)]);
      d = std::min(d, kTwoPi - d);
      if (d > tol) return false;
    }
    return true;
  }

  std::vector<Point> points_;
};

/// One distinct eigenvalue lambda of sqrt(Delta) with its eigenspace labels.
struct EigenShell {
  std::int64_t lambda_sq = 0;      ///< exact integer lambda^2
  std::int64_t multiplicity = 0;
  int degree = -1;                 ///< sphere: l with lambda^2 = l(l+1); -1 on tori
  std::vector<LatticeVector> modes;  ///< tori: all k with |k|^2 = lambda_sq

  double lambda() const { return std::sqrt(static_cast<double>(lambda_sq)); }
};

inline constexpr std::uint64_t kDefaultModeBudget = 20'000'000;

/// All shells with lambda <= x, sorted by lambda.  Tori enumerate every lattice vector, so
/// the request is rejected when the estimated vector count exceeds `mode_budget`.
inline std::vector<EigenShell> enumerate_shells(const Manifold& m, double x,
                                                std::uint64_t mode_budget = kDefaultModeBudget) {
  if (!(x >= 0.0)) throw PreconditionError("shell cutoff X must be >= 0");
  std::vector<EigenShell> shells;
  if (!m.is_torus()) {
    for (std::int64_t l = 0; std::sqrt(static_cast<double>(l * (l + 1))) <= x; ++l) {
      shells.push_back({l * (l + 1), 2 * l + 1, static_cast<int>(l), {}});
    }
    return shells;
  }
  const std::int64_t n_max = lattice::max_norm_sq(x);
  const auto estimate =
      static_cast<std::uint64_t>(lattice::count_upper_bound(m.dimension(), static_cast<double>(n_max)));
  if (estimate > mode_budget)
    throw ResourceError("shell enumeration up to X = " + std::to_string(x) + " on " +
                            std::string(m.name()),
                        estimate, mode_budget);
  auto vectors = lattice::enumerate_vectors(m.dimension(), n_max);
  for (const auto& k : vectors) {
    const auto n = norm_sq(k);
    if (shells.empty() || shells.back().lambda_sq != n) shells.push_back({n, 0, -1, {}});
    shells.back().modes.push_back(k);
    ++shells.back().multiplicity;
  }
  return shells;
}

/// Sphere kernel value ((2l+1)/4pi) P_l(cos d(q,p)).
inline double sphere_kernel(int degree, double cos_distance) {
  return (2.0 * degree + 1.0) / (4.0 * kPi) * std::legendre(static_cast<unsigned>(degree), cos_distance);
}

/// Z_lambda^q(p), the reproducing kernel of the shell's eigenspace.
inline double kernel(const Manifold& m, const EigenShell& shell, const Point& q, const Point& p) {
  if (!m.is_torus()) {
    if (shell.degree < 0) throw PreconditionError("sphere shell without degree");
    return sphere_kernel(shell.degree, Manifold::sphere_cos_distance(q, p));
  }
  if (static_cast<std::int64_t>(shell.modes.size()) != shell.multiplicity)
    throw PreconditionError("torus shell must carry its mode list");
  const Point d = m.displacement(q, p);
  double sum = 0.0;
  for (const auto& k : shell.modes) {
    sum += std::cos(k[0] * d.x[0] + k[1] * d.x[1] + k[2] * d.x[2]);
  }
  return sum * m.weyl_normalisation();
}

/// Z(q, p; X) = sum_{lambda <= X} Z_lambda^q(p).
inline double spectral_function(const Manifold& m, const Point& q, const Point& p, double x) {
  if (!(x >= 0.0)) throw PreconditionError("spectral function requires X >= 0");
  if (!m.is_torus()) {
    const double c = Manifold::sphere_cos_distance(q, p);
    double sum = 0.0;
    for (std::int64_t l = 0; std::sqrt(static_cast<double>(l * (l + 1))) <= x; ++l) {
      sum += sphere_kernel(static_cast<int>(l), c);
    }
    return sum;
  }
  const std::int64_t n_max = lattice::max_norm_sq(x);
  const Point d = m.displacement(q, p);
  const auto sums = lattice::cosine_shell_sums(m.dimension(), n_max, std::span<const Point>(&d, 1));
  double total = 0.0;
  for (double s : sums[0]) total += s;
  return total * m.weyl_normalisation();
}

/// Shell-resolved kernel matrices [Z_lambda^{q_i}(q_j)] for a point set and every shell
/// lambda <= cutoff.  Tori only keep shells with nonzero multiplicity.
class KernelTable {
 public:
  KernelTable(const Manifold& m, const PointSet& points, double cutoff)
      : n_points_(points.size()), cutoff_(cutoff) {
    if (!(cutoff >= 0.0)) throw PreconditionError("kernel table cutoff must be >= 0");
    const std::size_t n = n_points_;
    if (!m.is_torus()) {
      std::vector<double> cosines(n * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          cosines[i * n + j] = Manifold::sphere_cos_distance(points[i], points[j]);
      for (std::int64_t l = 0; std::sqrt(static_cast<double>(l * (l + 1))) <= cutoff; ++l) {
        lambda_sq_.push_back(l * (l + 1));
        multiplicity_.push_back(static_cast<double>(2 * l + 1));
        for (double c : cosines) values_.push_back(sphere_kernel(static_cast<int>(l), c));
      }
      return;
    }
    const std::int64_t n_max = lattice::max_norm_sq(cutoff);
    std::vector<Point> displacements{Point{}};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) displacements.push_back(m.displacement(points[i], points[j]));
    const auto sums = lattice::cosine_shell_sums(m.dimension(), n_max, displacements);
    const double norm = m.weyl_normalisation();
    for (std::int64_t s = 0; s <= n_max; ++s) {
      const double count = sums[0][static_cast<std::size_t>(s)];
      if (count == 0.0) continue;
      lambda_sq_.push_back(s);
      multiplicity_.push_back(count);
      const std::size_t base = values_.size();
      values_.resize(base + n * n);
      std::size_t pair = 1;
      for (std::size_t i = 0; i < n; ++i) {
        values_[base + i * n + i] = count * norm;
        for (std::size_t j = i + 1; j < n; ++j, ++pair) {
          const double v = sums[pair][static_cast<std::size_t>(s)] * norm;
          values_[base + i * n + j] = v;
          values_[base + j * n + i] = v;
        }
      }
    }
  }

  std::size_t shell_count() const { return lambda_sq_.size(); }
  std::size_t point_count() const { return n_points_; }
  double cutoff() const { return cutoff_; }
  std::int64_t lambda_sq(std::size_t s) const { return lambda_sq_[s]; }
  double lambda(std::size_t s) const { return std::sqrt(static_cast<double>(lambda_sq_[s])); }
  double multiplicity(std::size_t s) const { return multiplicity_[s]; }

  /// Z_{lambda_s}^{q_i}(q_j).
  double value(std::size_t s, std::size_t i, std::size_t j) const {
    return values_[s * n_points_ * n_points_ + i * n_points_ + j];
  }

  RealMatrix matrix(std::size_t s) const {
    RealMatrix z(static_cast<Eigen::Index>(n_points_), static_cast<Eigen::Index>(n_points_));
    for (std::size_t i = 0; i < n_points_; ++i)
      for (std::size_t j = 0; j < n_points_; ++j)
        z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value(s, i, j);
    return z;
  }

 private:
  std::size_t n_points_;
  double cutoff_;
  std::vector<std::int64_t> lambda_sq_;
  std::vector<double> multiplicity_;
  std::vector<double> values_;
};

}  // namespace pointpert::spectra
