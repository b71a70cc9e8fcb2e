#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace pointpert {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class ManifoldKind { torus2, torus3, sphere2 };

/// A point on a backend manifold.  Tori use coordinates in [0, 2pi)^d (unused trailing
/// components are zero); the sphere uses (theta, phi) in the first two slots.
struct Point {
  std::array<double, 3> x{};

  friend bool operator==(const Point&, const Point&) = default;
};

/// Integer frequency vector k in Z^d; trailing components are zero for d = 2.
using LatticeVector = std::array<int, 3>;

inline std::int64_t norm_sq(const LatticeVector& k) {
  return std::int64_t{k[0]} * k[0] + std::int64_t{k[1]} * k[1] + std::int64_t{k[2]} * k[2];
}

inline LatticeVector operator+(const LatticeVector& a, const LatticeVector& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

inline LatticeVector operator-(const LatticeVector& a) { return {-a[0], -a[1], -a[2]}; }

}  // namespace pointpert
