#pragma once

// Finite-h Wigner pairings on flat tori.  A symbol a(x, xi) = e^{i m.x} chi(|xi|) has the exact
// Weyl quantisation
//   Op_h(a) e_k = chi(h |k + m/2|) e_{k+m},
// and for H = |xi|^2 the derived symbols act by
//   a (H - 1):  chi(|xi|) (|xi|^2 - 1),       {a, H}:  -2i (m . xi) chi(|xi|),   xi = h (k + m/2),
// so (i/h)[Op_h(a), h^2 Delta] = Op_h({a, H}) holds mode by mode.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pointpert/errors.hpp"
#include "pointpert/extension.hpp"
#include "pointpert/green.hpp"
#include "pointpert/modes.hpp"
#include "pointpert/spectra.hpp"
#include "pointpert/types.hpp"

namespace pointpert::measures {

using extension::GreenEvaluator;
using extension::LagrangianFrame;
using spectra::Manifold;
using spectra::PointSet;

inline void require_torus(const Manifold& m) {
  if (!m.is_torus()) throw UnsupportedError("Wigner pairings are implemented on flat tori only");
}

/// Radial momentum profile chi(rho), values in [0, 1].
struct Cutoff {
  enum class Kind { bump, plateau, unit };
  Kind kind = Kind::bump;
  double center = 1.0;
  double width = 0.5;  ///< support (center - width, center + width)
  double flat = 0.5;   ///< plateau: chi = 1 for |rho - center| <= flat * width

  static Cutoff bump(double center, double width) { return {Kind::bump, center, width, 0.0}; }
  static Cutoff plateau(double center, double width, double flat) { return {Kind::plateau, center, width, flat}; }
  static Cutoff unit() { return {Kind::unit, 0.0, 0.0, 0.0}; }

  void validate() const {
    if (kind == Kind::unit) return;
    if (!(width > 0.0) || !std::isfinite(center) || !std::isfinite(width)) throw PreconditionError("cutoff width must be positive");
    if (kind == Kind::plateau && !(flat >= 0.0 && flat < 1.0)) throw PreconditionError("plateau fraction must lie in [0, 1)");
  }

  double operator()(double rho) const {
    if (kind == Kind::unit) return 1.0;
    double t = std::fabs(rho - center) / width;
    if (t >= 1.0) return 0.0;
    if (kind == Kind::plateau) {
      if (t <= flat) return 1.0;
      t = (t - flat) / (1.0 - flat);
      const double f0 = std::exp(-1.0 / (1.0 - t)), f1 = t > 0.0 ? std::exp(-1.0 / t) : 0.0;
      return f0 / (f0 + f1);
    }
    return std::exp(1.0 - 1.0 / (1.0 - t * t));
  }

  /// Largest rho with chi(rho) != 0 (infinite for the unit profile).
  double reach() const { return kind == Kind::unit ? std::numeric_limits<double>::infinity() : center + width; }

  std::string id() const {
    switch (kind) {
      case Kind::bump: return "bump(" + fmt(center) + "," + fmt(width) + ")";
      case Kind::plateau: return "plateau(" + fmt(center) + "," + fmt(width) + "," + fmt(flat) + ")";
      case Kind::unit: return "unit";
    }
    return "";
  }

 private:
  static std::string fmt(double x) {
    std::string s = std::to_string(x);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

struct Symbol {
  enum class Derived { none, energy, bracket };
  LatticeVector m{};
  Cutoff chi{};
  Derived derived = Derived::none;

  /// a (H - 1).
  Symbol energy() const { return with(Derived::energy); }
  /// {a, H}.
  Symbol bracket() const { return with(Derived::bracket); }
  /// Complex conjugate symbol.
  Symbol conj() const { return {-m, chi, derived}; }

  std::string id() const {
    std::string s = "m=(" + std::to_string(m[0]) + "," + std::to_string(m[1]) + "," + std::to_string(m[2]) + ");" + chi.id();
    if (derived == Derived::energy) s += ";H-1";
    if (derived == Derived::bracket) s += ";{a,H}";
    return s;
  }

  /// Multiplier carrying e_k to e_{k+m}.
  Complex multiplier(double h, const LatticeVector& k) const {
    const double x0 = h * (k[0] + 0.5 * m[0]), x1 = h * (k[1] + 0.5 * m[1]), x2 = h * (k[2] + 0.5 * m[2]);
    const double r2 = x0 * x0 + x1 * x1 + x2 * x2;
    const double c = chi(std::sqrt(r2));
    if (c == 0.0) return 0.0;
    switch (derived) {
      case Derived::none: return c;
      case Derived::energy: return c * (r2 - 1.0);
      case Derived::bracket: return Complex(0.0, -2.0 * (m[0] * x0 + m[1] * x1 + m[2] * x2) * c);
    }
    return 0.0;
  }

 private:
  Symbol with(Derived d) const {
    if (derived != Derived::none) throw PreconditionError("derived symbols are formed from base symbols only");
    return {m, chi, d};
  }
};

/// Base symbols e^{i m.x} chi(|xi|) for all m with |m| <= radius (m = 0 included).
inline std::vector<Symbol> symbol_family(int dim, int radius, const Cutoff& chi = Cutoff::bump(1.0, 0.5)) {
  if (dim != 2 && dim != 3) throw PreconditionError("symbol families live on T^2 or T^3");
  if (radius < 0) throw PreconditionError("symbol family radius must be >= 0");
  chi.validate();
  std::vector<Symbol> out;
  const int rz = dim == 3 ? radius : 0;
  for (int a = -radius; a <= radius; ++a)
    for (int b = -radius; b <= radius; ++b)
      for (int c = -rz; c <= rz; ++c)
        if (a * a + b * b + c * c <= radius * radius) out.push_back({{a, b, c}, chi, Symbol::Derived::none});
  return out;
}

/// Coefficients of a mode expansion on the bounding box [-K, K]^d, for O(1) lookups.
class ModeTable {
 public:
  static constexpr std::size_t kBudget = 60'000'000;

  explicit ModeTable(const ModeExpansion& u) : dim_(u.dim()) {
    for (const auto& m : u.modes())
      for (int i = 0; i < dim_; ++i) k_ = std::max(k_, std::abs(m.k[static_cast<std::size_t>(i)]));
    const std::size_t w = 2 * static_cast<std::size_t>(k_) + 1;
    const std::size_t size = dim_ == 2 ? w * w : w * w * w;
    if (size > kBudget) throw ResourceError("dense mode table", size, kBudget);
    data_.assign(size, Complex{});
    std::vector<char> seen(size, 0);
    for (const auto& m : u.modes()) {
      const std::size_t i = index(m.k);
      if (!seen[i]) support_.push_back(m.k);
      seen[i] = 1;
      data_[i] += m.c;
    }
  }

  int dim() const { return dim_; }
  const std::vector<LatticeVector>& support() const { return support_; }

  Complex operator()(const LatticeVector& k) const {
    for (int i = 0; i < dim_; ++i)
      if (std::abs(k[static_cast<std::size_t>(i)]) > k_) return 0.0;
    return data_[index(k)];
  }

 private:
  std::size_t index(const LatticeVector& k) const {
    const std::size_t w = 2 * static_cast<std::size_t>(k_) + 1;
    std::size_t i = static_cast<std::size_t>(k[0] + k_) * w + static_cast<std::size_t>(k[1] + k_);
    if (dim_ == 3) i = i * w + static_cast<std::size_t>(k[2] + k_);
    return i;
  }

  int dim_;
  int k_ = 0;
  std::vector<Complex> data_;
  std::vector<LatticeVector> support_;
};

inline void check_h(double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw PreconditionError("h must be positive");
}

inline ModeExpansion weyl_quantize_apply(double h, const Symbol& a, const ModeExpansion& u) {
  check_h(h);
  a.chi.validate();
  ModeExpansion out(u.dim());
  for (const auto& mode : u.compressed().modes()) {
    const Complex f = a.multiplier(h, mode.k);
    if (f != Complex{}) out.add(mode.k + a.m, f * mode.c);
  }
  return out;
}

inline ModeExpansion weyl_quantize_apply(const Manifold& m, double h, const Symbol& a, const ModeExpansion& u) {
  require_torus(m);
  if (u.dim() != m.dimension()) throw PreconditionError("mode expansion dimension differs from the torus");
  return weyl_quantize_apply(h, a, u);
}

/// <u, Op_h(a) v>.
inline Complex pairing(double h, const Symbol& a, const ModeTable& u, const ModeTable& v) {
  Complex s{};
  for (const auto& k : v.support()) {
    const Complex f = a.multiplier(h, k);
    if (f != Complex{}) s += std::conj(u(k + a.m)) * f * v(k);
  }
  return s;
}

inline Complex pairing(double h, const Symbol& a, const ModeExpansion& u, const ModeExpansion& v) {
  check_h(h);
  const ModeTable tu(u), tv(v);
  return pairing(h, a, tu, tv);
}

inline Complex pairing(double h, const Symbol& a, const ModeExpansion& u) { return pairing(h, a, u, u); }

/// ||(i/h)[Op_h(a), h^2 Delta] u - Op_h({a, H}) u||, composed from separate applications.
inline double commutator_defect(double h, const Symbol& a, const ModeExpansion& u) {
  auto lap = [&](const ModeExpansion& v) {
    ModeExpansion out(v.dim());
    for (const auto& m : v.compressed().modes()) out.add(m.k, h * h * static_cast<double>(norm_sq(m.k)) * m.c);
    return out;
  };
  const ModeExpansion left = weyl_quantize_apply(h, a, lap(u));
  const ModeExpansion right = lap(weyl_quantize_apply(h, a, u));
  const ModeExpansion bracket = weyl_quantize_apply(h, a.bracket(), u);
  ModeExpansion diff(u.dim());
  const Complex ih(0.0, 1.0 / h);
  for (const auto& m : left.modes()) diff.add(m.k, ih * m.c);
  for (const auto& m : right.modes()) diff.add(m.k, -ih * m.c);
  for (const auto& m : bracket.modes()) diff.add(m.k, -m.c);
  return std::sqrt(diff.norm_sq());
}

namespace detail {

inline double reference_norm_sq(const ModeExpansion& u, double reference) {
  const double r = reference > 0.0 ? reference : u.norm_sq();
  if (!(r > 0.0)) throw PreconditionError("u must be nonzero");
  return r;
}

}  // namespace detail

/// For each delta: 1 - (mass with |h|k| - 1| <= delta) / reference, where `reference`
/// defaults to ||u||^2 (pass the exact norm when u is a truncation).
inline std::vector<std::pair<double, double>> support_defect(double h, const ModeExpansion& u,
                                                             const std::vector<double>& deltas,
                                                             double reference = 0.0) {
  check_h(h);
  const double ref = detail::reference_norm_sq(u, reference);
  std::vector<double> rho, mass;
  for (const auto& m : u.compressed().modes()) {
    rho.push_back(std::fabs(h * std::sqrt(static_cast<double>(norm_sq(m.k))) - 1.0));
    mass.push_back(std::norm(m.c));
  }
  std::vector<std::pair<double, double>> out;
  for (double d : deltas) {
    if (!(d >= 0.0)) throw PreconditionError("support radii must be >= 0");
    double in = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i)
      if (rho[i] <= d) in += mass[i];
    out.emplace_back(d, std::clamp(1.0 - in / ref, 0.0, 1.0));
  }
  return out;
}

struct InvarianceDefect {
  double value = 0.0;
  std::string symbol_id;
};

inline InvarianceDefect invariance_defect(double h, const ModeTable& u, const std::vector<Symbol>& family,
                                          double reference) {
  InvarianceDefect best;
  for (const auto& a : family) {
    const double v = std::abs(pairing(h, a.bracket(), u, u)) / reference;
    if (best.symbol_id.empty() || v > best.value) best = {v, a.bracket().id()};
  }
  return best;
}

/// max over the family of |<u, Op_h({a, H}) u>| / reference.
inline InvarianceDefect invariance_defect(double h, const ModeExpansion& u, const std::vector<Symbol>& family,
                                          double reference = 0.0) {
  check_h(h);
  if (family.empty()) throw PreconditionError("symbol family is empty");
  return invariance_defect(h, ModeTable(u), family, detail::reference_norm_sq(u, reference));
}

struct WignerReport {
  double h = 0.0;
  double reference_norm_sq = 0.0;
  std::vector<std::pair<std::string, Complex>> pairings;  ///< base symbols, then a (H - 1)
  std::vector<double> deltas;
  std::vector<double> shell_concentration;  ///< 1 - support defect
  double invariance_defect = 0.0;
  std::string invariance_symbol;
};

inline WignerReport wigner_report(double h, const ModeExpansion& u, const std::vector<Symbol>& family,
                                  const std::vector<double>& deltas, double reference = 0.0) {
  check_h(h);
  if (family.empty()) throw PreconditionError("symbol family is empty");
  WignerReport r;
  r.h = h;
  r.reference_norm_sq = detail::reference_norm_sq(u, reference);
  const ModeTable t(u);
  // One pass per base symbol serves a, a (H - 1) and {a, H}: they share chi(|xi|).
  std::vector<std::pair<std::string, Complex>> energy;
  bool first = true;
  for (const auto& a : family) {
    Complex base{}, en{}, br{};
    for (const auto& k : t.support()) {
      const Complex f = a.multiplier(h, k);
      if (f == Complex{}) continue;
      const double x0 = h * (k[0] + 0.5 * a.m[0]), x1 = h * (k[1] + 0.5 * a.m[1]), x2 = h * (k[2] + 0.5 * a.m[2]);
      const Complex w = std::conj(t(k + a.m)) * t(k) * f;
      base += w;
      en += w * (x0 * x0 + x1 * x1 + x2 * x2 - 1.0);
      br += w * Complex(0.0, -2.0 * (a.m[0] * x0 + a.m[1] * x1 + a.m[2] * x2));
    }
    r.pairings.emplace_back(a.id(), base / r.reference_norm_sq);
    energy.emplace_back(a.energy().id(), en / r.reference_norm_sq);
    const double v = std::abs(br) / r.reference_norm_sq;
    if (first || v > r.invariance_defect) {
      r.invariance_defect = v;
      r.invariance_symbol = a.bracket().id();
    }
    first = false;
  }
  r.pairings.insert(r.pairings.end(), energy.begin(), energy.end());
  for (const auto& [d, defect] : support_defect(h, u, deltas, r.reference_norm_sq)) {
    r.deltas.push_back(d);
    r.shell_concentration.push_back(1.0 - defect);
  }
  return r;
}

/// Modes |k| <= k_max of sum_q beta_q G_eta^q, G_eta^q = sum_k conj(e_k(q)) e_k / (|k|^2 - eta).
/// A shell |k|^2 = eta is skipped; callers must know beta annihilates it.
inline ModeExpansion green_modes(const Manifold& m, const PointSet& q, const ComplexVector& beta, double eta,
                                 double k_max) {
  require_torus(m);
  if (static_cast<std::size_t>(beta.size()) != q.size()) throw PreconditionError("beta length differs from the point count");
  const int d = m.dimension();
  ModeExpansion out(d);
  for (const auto& k : lattice::enumerate_vectors(d, lattice::max_norm_sq(k_max))) {
    const double gap = static_cast<double>(norm_sq(k)) - eta;
    if (std::fabs(gap) < extension::kPoleGuard) continue;
    Complex c{};
    for (std::size_t i = 0; i < q.size(); ++i)
      c += beta(static_cast<Eigen::Index>(i)) * std::conj(basis_value(d, k, q[i]));
    out.add(k, c / gap);
  }
  return out;
}

struct MeasureOptions {
  std::vector<double> deltas{0.05, 0.1, 0.2, 0.4};
  int grid = 24;      ///< root-finding grid per gap
  unsigned threads = 1;
};

struct MeasureRow {
  extension::SecularRoot root;
  double h = 0.0;
  double membership_residual = 0.0;
  std::optional<WignerReport> report;
  std::string error;  ///< nonempty when this root's pipeline failed
};

struct MeasureScan {
  std::vector<MeasureRow> rows;
  std::vector<std::string> warnings;
  std::size_t failures = 0;
};

/// Wigner report of the normalised Green eigenfunction at one secular root.  The truncation
/// keeps every mode the family and the support radii can see; the reference norm is the
/// exact ||G||^2 = beta* (dG/deta) beta.
inline MeasureRow measure_root(const LagrangianFrame& f, const GreenEvaluator& ev, const extension::SecularRoot& root,
                               const std::vector<Symbol>& family, const MeasureOptions& opt) {
  MeasureRow row;
  row.root = root;
  try {
    const auto ef = green::secular_eigenfunction(f, ev, root.eta_star);
    row.h = ef.h();
    row.membership_residual = ef.membership_residual;
    double reach = 1.0;
    for (double d : opt.deltas) reach = std::max(reach, 1.0 + d);
    for (const auto& a : family) reach = std::max(reach, a.chi.reach());
    if (!std::isfinite(reach)) throw PreconditionError("measure scans need compactly supported symbols");
    const double k_max = reach / row.h + 4.0;
    const auto u = green_modes(ev.manifold(), ev.points(), ef.beta, root.eta_star, k_max);
    const ComplexMatrix b = ef.beta;
    const double norm = (b.adjoint() * ev.derivative(root.eta_star).cast<Complex>() * b)(0, 0).real();
    if (!(norm > 0.0)) throw PreconditionError("nonpositive Green norm");
    row.report = wigner_report(row.h, u, family, opt.deltas, norm);
  } catch (const Error& e) {
    row.error = e.what();
  }
  return row;
}

/// Secular roots with sqrt(eta*) in [x_lo, x_hi], each with its Wigner report, ordered by eta*.
inline MeasureScan measure_scan(const LagrangianFrame& f, const GreenEvaluator& ev, double x_lo, double x_hi,
                                const std::vector<Symbol>& family, const MeasureOptions& opt = {}) {
  require_torus(ev.manifold());
  if (!(x_lo > 0.0) || !(x_hi > x_lo)) throw PreconditionError("measure scan range must satisfy 0 < x_lo < x_hi");
  if (family.empty()) throw PreconditionError("symbol family is empty");
  for (const auto& a : family) a.chi.validate();
  MeasureScan out;
  const auto scan = extension::find_new_eigenvalues(f, ev, x_lo * x_lo, x_hi * x_hi, opt.grid);
  out.warnings = scan.warnings;
  out.rows.resize(scan.roots.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < scan.roots.size(); i = next++) out.rows[i] = measure_root(f, ev, scan.roots[i], family, opt);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(scan.roots.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& r : out.rows)
    if (!r.error.empty()) ++out.failures;
  return out;
}

}  // namespace pointpert::measures
