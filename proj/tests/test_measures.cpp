#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pointpert/fit.hpp"
#include "pointpert/measures.hpp"

using namespace pointpert;
using measures::Cutoff;
using measures::Symbol;
using spectra::Manifold;
using spectra::PointSet;

namespace {

const Manifold T2(ManifoldKind::torus2);
const Manifold T3(ManifoldKind::torus3);
const Manifold S2(ManifoldKind::sphere2);

ModeExpansion random_modes(int dim, int count, int radius, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ui(-radius, radius);
  std::normal_distribution<double> nd;
  ModeExpansion u(dim);
  for (int i = 0; i < count; ++i) u.add({ui(rng), ui(rng), dim == 3 ? ui(rng) : 0}, Complex(nd(rng), nd(rng)));
  return u;
}

ModeExpansion normalized(ModeExpansion u) {
  const double n = std::sqrt(u.norm_sq());
  ModeExpansion out(u.dim());
  for (const auto& m : u.compressed().modes()) out.add(m.k, m.c / n);
  return out;
}

/// Independent reading of the quantisation: <u, Op v> from coefficient maps.
Complex pairing_by_map(double h, const LatticeVector& m, const Cutoff& chi, const ModeExpansion& u,
                       const ModeExpansion& v) {
  const auto cu = u.coefficient_map();
  Complex s{};
  for (const auto& [k, c] : v.coefficient_map()) {
    const double x = k[0] + 0.5 * m[0], y = k[1] + 0.5 * m[1], z = k[2] + 0.5 * m[2];
    auto it = cu.find(k + m);
    if (it != cu.end()) s += std::conj(it->second) * chi(h * std::sqrt(x * x + y * y + z * z)) * c;
  }
  return s;
}

}  // namespace

TEST(Cutoff, ProfilesAndIds) {
  const auto b = Cutoff::bump(1.0, 0.5);
  EXPECT_DOUBLE_EQ(b(1.0), 1.0);
  EXPECT_EQ(b(0.5), 0.0);
  EXPECT_EQ(b(1.5), 0.0);
  EXPECT_GT(b(1.3), 0.0);
  EXPECT_LT(b(1.3), 1.0);
  EXPECT_NEAR(b(0.8), b(1.2), 1e-15);
  const auto p = Cutoff::plateau(1.0, 0.5, 0.4);
  EXPECT_EQ(p(1.19), 1.0);
  EXPECT_EQ(p(1.5), 0.0);
  EXPECT_GT(p(1.4), 0.0);
  for (double r = 0.0; r < 2.0; r += 0.01) {
    EXPECT_GE(b(r), 0.0);
    EXPECT_LE(b(r), 1.0);
    EXPECT_GE(p(r), 0.0);
    EXPECT_LE(p(r), 1.0);
  }
  EXPECT_EQ(b.id(), "bump(1,0.5)");
  EXPECT_THROW(Cutoff::bump(1.0, 0.0).validate(), PreconditionError);
  EXPECT_EQ(measures::symbol_family(2, 3).size(), 29u);
  EXPECT_EQ(measures::symbol_family(3, 1).size(), 7u);
  EXPECT_THROW(Symbol{}.bracket().energy(), PreconditionError);
}

TEST(Quantize, SingleModeExamples) {
  const double h = 0.05;
  const auto chi = Cutoff::bump(1.0, 0.5);
  ModeExpansion u(2);
  u.add({17, 9, 0}, 1.0);
  const double r = h * std::sqrt(17.0 * 17 + 9 * 9);
  EXPECT_NEAR(measures::pairing(h, Symbol{{0, 0, 0}, chi}, u).real(), chi(r), 1e-15);
  EXPECT_EQ(measures::pairing(h, Symbol{{1, -2, 0}, chi}, u), Complex{});
  // m = 0 acts diagonally.
  const auto v = measures::weyl_quantize_apply(h, Symbol{{0, 0, 0}, chi}, u);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v.modes()[0].k, (LatticeVector{17, 9, 0}));
  EXPECT_NEAR(v.modes()[0].c.real(), chi(r), 1e-15);
  // m shifts by m with chi at the midpoint k + m/2.
  const auto w = measures::weyl_quantize_apply(h, Symbol{{2, 1, 0}, chi}, u);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w.modes()[0].k, (LatticeVector{19, 10, 0}));
  EXPECT_NEAR(w.modes()[0].c.real(), chi(h * std::sqrt(18.0 * 18 + 9.5 * 9.5)), 1e-15);
}

TEST(Quantize, MatchesIndependentPairingAndIsLinear) {
  std::mt19937_64 rng(3);
  const double h = 0.04;
  for (const auto& a : measures::symbol_family(2, 3)) {
    const auto u = random_modes(2, 300, 30, rng), v = random_modes(2, 300, 30, rng);
    const Complex p = measures::pairing(h, a, u, v);
    EXPECT_LT(std::abs(p - pairing_by_map(h, a.m, a.chi, u, v)), 1e-12 * (1.0 + std::abs(p)));
    // Op(2u + i v) = 2 Op u + i Op v
    ModeExpansion s(2);
    for (const auto& m : u.modes()) s.add(m.k, 2.0 * m.c);
    for (const auto& m : v.modes()) s.add(m.k, Complex(0, 1) * m.c);
    const Complex lhs = measures::pairing(h, a, u, s);
    const Complex rhs = 2.0 * measures::pairing(h, a, u, u) + Complex(0, 1) * measures::pairing(h, a, u, v);
    EXPECT_LT(std::abs(lhs - rhs), 1e-11 * (1.0 + std::abs(lhs)));
  }
}

TEST(Quantize, SelfAdjointness) {
  std::mt19937_64 rng(4);
  const double h = 0.05;
  for (const auto& base : measures::symbol_family(2, 2)) {
    for (const auto& a : {base, base.energy(), base.bracket()}) {
      const auto u = random_modes(2, 200, 25, rng), v = random_modes(2, 200, 25, rng);
      const Complex l = measures::pairing(h, a, u, v);
      const Complex r = std::conj(measures::pairing(h, a.conj(), v, u));
      EXPECT_LT(std::abs(l - r), 1e-12 * (1.0 + std::abs(l))) << a.id();
    }
  }
  // Real symbols (m = 0) give real expectations.
  const auto u = random_modes(2, 200, 25, rng);
  EXPECT_NEAR(measures::pairing(h, Symbol{{0, 0, 0}, Cutoff::bump(1.0, 0.5)}, u).imag(), 0.0, 1e-13);
}

TEST(Quantize, CommutatorIdentityExact) {
  std::mt19937_64 rng(6);
  for (int dim : {2, 3}) {
    for (double h : {0.1, 0.03}) {
      for (const auto& a : measures::symbol_family(dim, dim == 2 ? 3 : 1)) {
        const auto u = normalized(random_modes(dim, 150, static_cast<int>(1.6 / h), rng));
        EXPECT_LE(measures::commutator_defect(h, a, u), 1e-10) << a.id();
      }
    }
  }
  // Also with a plateau profile.
  const auto u = normalized(random_modes(2, 150, 40, rng));
  EXPECT_LE(measures::commutator_defect(0.03, Symbol{{1, 2, 0}, Cutoff::plateau(1.0, 0.4, 0.3)}, u), 1e-10);
}

TEST(Quantize, UnitNormalizationAndSphereRejection) {
  std::mt19937_64 rng(8);
  const auto u = normalized(random_modes(3, 100, 10, rng));
  EXPECT_NEAR(measures::pairing(0.1, Symbol{{0, 0, 0}, Cutoff::unit()}, u).real(), 1.0, 1e-10);
  // A plateau covering every |h k| of the support is as good as the unit profile.
  EXPECT_NEAR(measures::pairing(0.01, Symbol{{0, 0, 0}, Cutoff::plateau(0.0, 1.0, 0.5)}, u).real(), 1.0, 1e-10);
  EXPECT_THROW(measures::weyl_quantize_apply(S2, 0.1, Symbol{}, ModeExpansion(2)), UnsupportedError);
  EXPECT_THROW(measures::green_modes(S2, PointSet(S2, {Point{}}), ComplexVector::Ones(1), 10.5, 5.0), UnsupportedError);
}

TEST(Support, AnchorsAndMonotonicity) {
  const double h = 0.1;
  const std::vector<double> deltas{0.01, 0.05, 0.1, 0.3, 0.6, 0.99};
  ModeExpansion on(2), twice(2);
  on.add({6, 8, 0}, 1.0);     // |k| = 10 = 1/h
  twice.add({12, 16, 0}, 1.0);  // |k| = 2/h
  for (const auto& [d, v] : measures::support_defect(h, on, deltas)) EXPECT_EQ(v, 0.0) << d;
  for (const auto& [d, v] : measures::support_defect(h, twice, deltas)) EXPECT_EQ(v, 1.0) << d;
  std::mt19937_64 rng(9);
  const auto u = normalized(random_modes(2, 400, 20, rng));
  const auto s = measures::support_defect(h, u, deltas);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LE(s[i].second, s[i - 1].second);
  for (const auto& [d, v] : s) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Invariance, ExactEigenfunctionAndTwoModeControl) {
  const auto family = measures::symbol_family(2, 3);
  // |k|^2 = 625 = 5^4 has r_2 = 20 representations.
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  ModeExpansion u(2);
  for (int a = -25; a <= 25; ++a)
    for (int b = -25; b <= 25; ++b)
      if (a * a + b * b == 625) u.add({a, b, 0}, Complex(nd(rng), nd(rng)));
  EXPECT_EQ(u.size(), 20u);
  u = normalized(u);
  EXPECT_LT(measures::invariance_defect(1.0 / 25.0, u, family).value, 1e-10);
  // Two modes at different energies, both inside the bump, connected by m = (0, 2).
  ModeExpansion c(2);
  c.add({20, 0, 0}, std::sqrt(0.5));
  c.add({20, 2, 0}, std::sqrt(0.5));
  const auto d = measures::invariance_defect(1.0 / 20.0, c, family);
  EXPECT_GT(d.value, 1e-2);
  EXPECT_NEAR(d.value, 0.5 * 2.0 * (1.0 / 20.0) * 2.0 * Cutoff::bump(1.0, 0.5)(std::hypot(20.0, 1.0) / 20.0), 1e-12);
}

TEST(Report, MatchesSeparatePairings) {
  std::mt19937_64 rng(12);
  const double h = 0.05;
  ModeExpansion u(2);
  std::normal_distribution<double> nd;
  for (int a = -24; a <= 24; ++a)
    for (int b = -24; b <= 24; ++b)
      if (std::fabs(h * std::hypot(a, b) - 1.0) < 0.3) u.add({a, b, 0}, Complex(nd(rng), nd(rng)));
  const auto family = measures::symbol_family(2, 2);
  const auto r = measures::wigner_report(h, u, family, {0.1, 0.2});
  ASSERT_EQ(r.pairings.size(), 2 * family.size());
  for (std::size_t i = 0; i < family.size(); ++i) {
    EXPECT_EQ(r.pairings[i].first, family[i].id());
    EXPECT_LT(std::abs(r.pairings[i].second - measures::pairing(h, family[i], u) / u.norm_sq()), 1e-13);
    const auto e = family[i].energy();
    EXPECT_EQ(r.pairings[family.size() + i].first, e.id());
    EXPECT_LT(std::abs(r.pairings[family.size() + i].second - measures::pairing(h, e, u) / u.norm_sq()), 1e-13);
  }
  const auto inv = measures::invariance_defect(h, u, family);
  EXPECT_NEAR(r.invariance_defect, inv.value, 1e-14);
  // m and -m tie in magnitude, so only the value is compared.
  EXPECT_NE(r.invariance_symbol.find("{a,H}"), std::string::npos);
  const auto sd = measures::support_defect(h, u, {0.1, 0.2});
  EXPECT_NEAR(r.shell_concentration[0], 1.0 - sd[0].second, 1e-15);
  EXPECT_NEAR(r.shell_concentration[1], 1.0 - sd[1].second, 1e-15);
}

TEST(GreenModes, CoefficientsAndNorm) {
  const PointSet q(T2, {Point{{0.3, 1.1, 0}}, Point{{2.0, 4.9, 0}}});
  ComplexVector beta(2);
  beta << Complex(0.8, 0.0), Complex(0.36, -0.48);
  const double eta = green::mid_gap_eta(T2, 12.0);
  const auto u = measures::green_modes(T2, q, beta, eta, 600.0);
  for (const auto& m : u.modes()) {
    if (m.k != LatticeVector{3, -2, 0}) continue;
    const Complex want = 0.8 * extension::green_coefficient(2, m.k, q[0], eta) +
                         Complex(0.36, -0.48) * extension::green_coefficient(2, m.k, q[1], eta);
    EXPECT_LT(std::abs(m.c - want), 1e-15);
  }
  const extension::GreenEvaluator ev(T2, q, 200.0);
  const ComplexMatrix b = beta;
  const double exact = (b.adjoint() * ev.derivative(eta).cast<Complex>() * b)(0, 0).real();
  // Truncation tail ~ pi |beta|^2 / (4 pi^2 K^2).
  EXPECT_NEAR(u.norm_sq(), exact, 2e-6 * exact);
  EXPECT_LT(u.norm_sq(), exact);
}

TEST(Scan, TrivialFrameAndEmptyRange) {
  const PointSet q(T2, {Point{{0.3, 1.1, 0}}});
  const extension::GreenEvaluator ev(T2, q, 1000.0);
  const auto family = measures::symbol_family(2, 1);
  EXPECT_TRUE(measures::measure_scan(extension::LagrangianFrame::trivial(1), ev, 10.0, 30.0, family).rows.empty());
  // (sqrt 101, sqrt 101.5) lies inside one gap and holds no root for this coupling.
  const auto f = extension::LagrangianFrame::angle(1.0);
  const auto s = measures::measure_scan(f, ev, std::sqrt(100.2), std::sqrt(100.25), family);
  EXPECT_TRUE(s.rows.empty());
  EXPECT_THROW(measures::measure_scan(f, ev, 20.0, 10.0, family), PreconditionError);
}

TEST(Scan, RowsMatchRootsAndAreDeterministic) {
  const PointSet q(T2, {Point{{0.3, 1.1, 0}}});
  const extension::GreenEvaluator ev(T2, q, 3600.0);
  const auto f = extension::LagrangianFrame::angle(1.0);
  const auto family = measures::symbol_family(2, 3);
  measures::MeasureOptions opt;
  const auto roots = extension::find_new_eigenvalues(f, ev, 900.0, 3600.0, opt.grid);
  const auto one = measures::measure_scan(f, ev, 30.0, 60.0, family, opt);
  ASSERT_EQ(one.rows.size(), roots.roots.size());
  EXPECT_GT(one.rows.size(), 100u);
  EXPECT_EQ(one.failures, 0u);
  for (std::size_t i = 0; i < one.rows.size(); ++i) {
    EXPECT_EQ(one.rows[i].root.eta_star, roots.roots[i].eta_star);
    if (i > 0) {
      EXPECT_GT(one.rows[i].root.eta_star, one.rows[i - 1].root.eta_star);
    }
    ASSERT_TRUE(one.rows[i].report);
    // A single Green function: the k -> -k - m symmetry cancels every bracket pairing.
    EXPECT_LT(one.rows[i].report->invariance_defect, 1e-12);
    for (std::size_t j = 1; j < one.rows[i].report->shell_concentration.size(); ++j)
      EXPECT_GE(one.rows[i].report->shell_concentration[j], one.rows[i].report->shell_concentration[j - 1]);
  }
  opt.threads = 3;
  const auto many = measures::measure_scan(f, ev, 30.0, 36.0, family, opt);
  ASSERT_FALSE(many.rows.empty());
  for (std::size_t i = 0; i < many.rows.size(); ++i) {
    ASSERT_TRUE(many.rows[i].report);
    EXPECT_EQ(one.rows[i].root.eta_star, many.rows[i].root.eta_star);
    EXPECT_EQ(one.rows[i].report->shell_concentration, many.rows[i].report->shell_concentration);
    EXPECT_EQ(one.rows[i].report->invariance_defect, many.rows[i].report->invariance_defect);
  }
}

TEST(Scan, RealCouplingsHaveNoInvarianceDefect) {
  // Real beta makes c_{-k} = conj(c_k), and the bracket weight is odd under k -> -k - m.
  const PointSet q(T2, {Point{{0.3, 1.1, 0}}, Point{{2.0, 4.9, 0}}});
  const extension::GreenEvaluator ev(T2, q, 2000.0);
  const auto f = extension::LagrangianFrame::real_rotation(RealMatrix::Identity(2, 2), {1.0, 0.6});
  const auto s = measures::measure_scan(f, ev, 40.0, 40.2, measures::symbol_family(2, 3));
  ASSERT_FALSE(s.rows.empty());
  for (const auto& r : s.rows) {
    ASSERT_TRUE(r.report) << r.error;
    EXPECT_LT(r.report->invariance_defect, 1e-12);
  }
}

TEST(Scan, ComplexCouplingDefectsDecay) {
  const PointSet q(T2, {Point{{0.3, 1.1, 0}}, Point{{2.0, 4.9, 0}}});
  extension::GreenOptions go;
  go.split = 8;
  const extension::GreenEvaluator ev(T2, q, 170.0 * 170.0, go);
  ComplexMatrix u(2, 2);
  u << 1.0, Complex(0, 1), Complex(0, 1), 1.0;
  const auto f = extension::LagrangianFrame::unitary_rotation(u / std::sqrt(2.0), {1.0, 0.6});
  const auto family = measures::symbol_family(2, 3);
  std::vector<double> hinv, support, inv;
  for (double x : {20.0, 40.0, 80.0, 160.0}) {
    const auto roots = extension::find_new_eigenvalues(f, ev, x * x, (x + 0.1) * (x + 0.1));
    ASSERT_FALSE(roots.roots.empty());
    const auto r = measures::measure_root(f, ev, roots.roots.front(), family, {});
    ASSERT_TRUE(r.report) << r.error;
    EXPECT_LT(r.membership_residual, 1e-6);
    EXPECT_GT(r.report->invariance_defect, 1e-8);
    hinv.push_back(1.0 / r.h);
    support.push_back(1.0 - r.report->shell_concentration[1]);
    inv.push_back(r.report->invariance_defect);
  }
  EXPECT_LT(loglog_fit(hinv, support).slope, 0.0);
  EXPECT_LT(loglog_fit(hinv, inv).slope, 0.0);
}
