#pragma once

// Finite Fourier expansions on tori in the orthonormal basis e_k(x) = e^{ik.x} / (2pi)^{d/2}.

#include <cmath>
#include <complex>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pointpert/errors.hpp"
#include "pointpert/types.hpp"

namespace pointpert {

struct LatticeHash {
  std::size_t operator()(const LatticeVector& k) const noexcept {
    auto h = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k[0]));
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(k[1]);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(k[2]);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

inline double basis_normalisation(int dim) { return 1.0 / std::pow(kTwoPi, 0.5 * dim); }

/// e_k(p).
inline Complex basis_value(int dim, const LatticeVector& k, const Point& p) {
  const double phase = k[0] * p.x[0] + k[1] * p.x[1] + k[2] * p.x[2];
  return std::polar(basis_normalisation(dim), phase);
}

struct Mode {
  LatticeVector k{};
  Complex c{};
};

/// u = sum_k c_k e_k with finitely many k, kept in insertion order.  Repeated k are allowed on
/// input and summed by `compressed()`.
class ModeExpansion {
 public:
  explicit ModeExpansion(int dim = 2) : dim_(dim) {
    if (dim != 2 && dim != 3) throw PreconditionError("mode expansions live on T^2 or T^3");
  }
  ModeExpansion(int dim, std::vector<Mode> modes) : ModeExpansion(dim) {
    for (const auto& m : modes) add(m.k, m.c);
  }

  int dim() const { return dim_; }
  const std::vector<Mode>& modes() const& { return modes_; }
  std::vector<Mode> modes() && { return std::move(modes_); }
  std::size_t size() const { return modes_.size(); }
  bool empty() const { return modes_.empty(); }

  void add(const LatticeVector& k, Complex c) {
    if (dim_ == 2 && k[2] != 0) throw PreconditionError("third frequency component must vanish on T^2");
    modes_.push_back({k, c});
  }

  Complex operator()(const Point& p) const {
    Complex s{};
    for (const auto& m : modes_) s += m.c * basis_value(dim_, m.k, p);
    return s;
  }

  double norm_sq() const {
    double s = 0.0;
    for (const auto& m : compressed().modes_) s += std::norm(m.c);
    return s;
  }

  /// Same function with each k listed once (first-occurrence order).
  ModeExpansion compressed() const {
    ModeExpansion out(dim_);
    std::unordered_map<LatticeVector, std::size_t, LatticeHash> index;
    for (const auto& m : modes_) {
      auto [it, fresh] = index.try_emplace(m.k, out.modes_.size());
      if (fresh) {
        out.modes_.push_back(m);
      } else {
        out.modes_[it->second].c += m.c;
      }
    }
    return out;
  }

  std::unordered_map<LatticeVector, Complex, LatticeHash> coefficient_map() const {
    std::unordered_map<LatticeVector, Complex, LatticeHash> map;
    for (const auto& m : modes_) map[m.k] += m.c;
    return map;
  }

  /// <u, v> (antilinear in u).
  friend Complex inner(const ModeExpansion& u, const ModeExpansion& v) {
    const auto map = v.coefficient_map();
    Complex s{};
    for (const auto& m : u.compressed().modes_) {
      if (auto it = map.find(m.k); it != map.end()) s += std::conj(m.c) * it->second;
    }
    return s;
  }

 private:
  int dim_;
  std::vector<Mode> modes_;
};

}  // namespace pointpert
