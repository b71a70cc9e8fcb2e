#pragma once

// Lattice-point sums over Z^d (d = 2, 3) grouped by squared norm.
//
// All enumerations walk the closed positive orthant and fold the sign group in through
// weights: a coordinate a > 0 stands for {a, -a}, so sum_{signs} cos(k . delta) becomes
// prod_i w(a_i) cos(a_i delta_i) with w(0) = 1, w(a > 0) = 2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pointpert/errors.hpp"
#include "pointpert/types.hpp"

namespace pointpert::lattice {

/// Largest integer n with sqrt(n) <= x (x >= 0).
inline std::int64_t max_norm_sq(double x) {
  if (x < 0.0) throw PreconditionError("cutoff must be nonnegative");
  auto n = static_cast<std::int64_t>(std::floor(x * x));
  while (n > 0 && std::sqrt(static_cast<double>(n)) > x) --n;
  while (std::sqrt(static_cast<double>(n + 1)) <= x) ++n;
  return n;
}

inline std::int64_t isqrt(std::int64_t n) {
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(n)));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r;
}

/// Upper bound on #{k in Z^d : |k|^2 <= t}: unit cubes centred at those points lie in the
/// ball of radius sqrt(t) + sqrt(d)/2.
inline double count_upper_bound(int dim, double t) {
  const double r = std::sqrt(std::max(t, 0.0)) + 0.5 * std::sqrt(static_cast<double>(dim));
  return dim == 2 ? kPi * r * r : 4.0 / 3.0 * kPi * r * r * r;
}

/// Visit every orthant point (a, b, c) with a^2 + b^2 + c^2 <= n_max.  The visitor receives
/// (n, weight, a, b, c); for d = 2 the third coordinate is always 0.
template <class Visitor>
void for_each_orthant_point(int dim, std::int64_t n_max, Visitor&& visit) {
  const std::int64_t r = isqrt(n_max);
  for (std::int64_t a = 0; a <= r; ++a) {
    const double wa = a == 0 ? 1.0 : 2.0;
    const std::int64_t rem_a = n_max - a * a;
    const std::int64_t rb = isqrt(rem_a);
    for (std::int64_t b = 0; b <= rb; ++b) {
      const double wab = wa * (b == 0 ? 1.0 : 2.0);
      const std::int64_t nab = a * a + b * b;
      if (dim == 2) {
        visit(nab, wab, a, b, std::int64_t{0});
        continue;
      }
      const std::int64_t rc = isqrt(n_max - nab);
      for (std::int64_t c = 0; c <= rc; ++c) {
        visit(nab + c * c, wab * (c == 0 ? 1.0 : 2.0), a, b, c);
      }
    }
  }
}

/// r_d(n) = #{k in Z^d : |k|^2 = n} for 0 <= n <= n_max.
inline std::vector<double> representation_counts(int dim, std::int64_t n_max) {
  std::vector<double> counts(static_cast<std::size_t>(n_max) + 1, 0.0);
  for_each_orthant_point(dim, n_max, [&](std::int64_t n, double w, auto, auto, auto) {
    counts[static_cast<std::size_t>(n)] += w;
  });
  return counts;
}

/// For each displacement delta_j, S_j(n) = sum_{|k|^2 = n} cos(k . delta_j), 0 <= n <= n_max.
/// One orthant sweep serves every displacement; the zero displacement yields r_d(n).
inline std::vector<std::vector<double>> cosine_shell_sums(int dim, std::int64_t n_max,
                                                          std::span<const Point> displacements) {
  const std::size_t nd = displacements.size();
  const std::int64_t r = isqrt(n_max);
  std::vector<std::vector<double>> sums(nd,
                                        std::vector<double>(static_cast<std::size_t>(n_max) + 1, 0.0));
  // cos(a * delta_i) tables, one per displacement and axis.
  std::vector<std::array<std::vector<double>, 3>> tables(nd);
  for (std::size_t j = 0; j < nd; ++j) {
    for (int axis = 0; axis < dim; ++axis) {
      auto& t = tables[j][static_cast<std::size_t>(axis)];
      t.resize(static_cast<std::size_t>(r) + 1);
      for (std::int64_t a = 0; a <= r; ++a) {
        t[static_cast<std::size_t>(a)] =
            std::cos(static_cast<double>(a) * displacements[j].x[static_cast<std::size_t>(axis)]);
      }
    }
  }
  for (std::int64_t a = 0; a <= r; ++a) {
    const double wa = a == 0 ? 1.0 : 2.0;
    const std::int64_t rb = isqrt(n_max - a * a);
    for (std::int64_t b = 0; b <= rb; ++b) {
      const double wab = wa * (b == 0 ? 1.0 : 2.0);
      const std::int64_t nab = a * a + b * b;
      for (std::size_t j = 0; j < nd; ++j) {
        const double fab = wab * tables[j][0][static_cast<std::size_t>(a)] *
                           tables[j][1][static_cast<std::size_t>(b)];
        auto& s = sums[j];
        if (dim == 2) {
          s[static_cast<std::size_t>(nab)] += fab;
          continue;
        }
        const auto& tz = tables[j][2];
        const std::int64_t rc = isqrt(n_max - nab);
        s[static_cast<std::size_t>(nab)] += fab;
        for (std::int64_t c = 1; c <= rc; ++c) {
          s[static_cast<std::size_t>(nab + c * c)] += 2.0 * fab * tz[static_cast<std::size_t>(c)];
        }
      }
    }
  }
  return sums;
}

/// Explicit enumeration of all k with |k|^2 <= n_max, ordered by (|k|^2, k) lexicographically.
inline std::vector<LatticeVector> enumerate_vectors(int dim, std::int64_t n_max) {
  const auto r = static_cast<int>(isqrt(n_max));
  std::vector<LatticeVector> out;
  const int rz = dim == 3 ? r : 0;
  for (int a = -r; a <= r; ++a) {
    for (int b = -r; b <= r; ++b) {
      const std::int64_t nab = std::int64_t{a} * a + std::int64_t{b} * b;
      if (nab > n_max) continue;
      for (int c = -rz; c <= rz; ++c) {
        if (nab + std::int64_t{c} * c <= n_max) out.push_back({a, b, c});
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const LatticeVector& u, const LatticeVector& v) {
    const auto nu = norm_sq(u);
    const auto nv = norm_sq(v);
    return nu != nv ? nu < nv : u < v;
  });
  return out;
}

/// Explicit enumeration of k with n_lo <= |k|^2 <= n_hi (annulus), lexicographic order.
inline std::vector<LatticeVector> enumerate_annulus(int dim, std::int64_t n_lo, std::int64_t n_hi) {
  const auto r = static_cast<int>(isqrt(n_hi));
  std::vector<LatticeVector> out;
  const int rz = dim == 3 ? r : 0;
  for (int a = -r; a <= r; ++a) {
    for (int b = -r; b <= r; ++b) {
      const std::int64_t nab = std::int64_t{a} * a + std::int64_t{b} * b;
      if (nab > n_hi) continue;
      for (int c = -rz; c <= rz; ++c) {
        const std::int64_t n = nab + std::int64_t{c} * c;
        if (n >= n_lo && n <= n_hi) out.push_back({a, b, c});
      }
    }
  }
  return out;
}

}  // namespace pointpert::lattice
