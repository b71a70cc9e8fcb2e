#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pointpert/extension.hpp"

using namespace pointpert;
using namespace pointpert::extension;

namespace {

const Manifold T2{ManifoldKind::torus2};
const Manifold T3{ManifoldKind::torus3};

ComplexMatrix id(Eigen::Index n) { return ComplexMatrix::Identity(n, n); }

PointSet random_points(const Manifold& m, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  std::vector<Point> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(Point{{u(rng), u(rng), m.dimension() == 3 ? u(rng) : 0.0}});
  return PointSet(m, pts);
}

ModeExpansion random_modes(int dim, int count, int radius, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> k(-radius, radius);
  std::normal_distribution<double> g;
  ModeExpansion u(dim);
  for (int i = 0; i < count; ++i) u.add({k(rng), k(rng), dim == 3 ? k(rng) : 0}, Complex(g(rng), g(rng)));
  return u;
}

}  // namespace

TEST(Frame, ValidationExamples) {
  EXPECT_NO_THROW(validate_frame(id(3), ComplexMatrix::Zero(3, 3)));
  for (double th : {0.0, 0.3, 1.7, 3.0, -2.2}) EXPECT_NO_THROW(LagrangianFrame::angle(th));
  try {
    validate_frame(id(2), id(2));
    FAIL();
  } catch (const FrameValidationError& e) {
    EXPECT_NEAR(e.unitarity_residual(), std::sqrt(2.0), 1e-14);
    EXPECT_NEAR(e.symmetry_residual(), 0.0, 1e-14);
  }
  ComplexMatrix c = id(2), s = ComplexMatrix::Zero(2, 2);
  c(0, 1) = 0.2;
  EXPECT_THROW(validate_frame(c, s), FrameValidationError);
  EXPECT_THROW(validate_frame(id(2), ComplexMatrix::Zero(3, 3)), PreconditionError);
}

TEST(Frame, RandomFramesAndEquivalence) {
  std::mt19937_64 rng(21);
  for (int n = 1; n <= 3; ++n) {
    for (int t = 0; t < 10; ++t) {
      const auto f = random_frame(n, rng);
      const auto r = frame_residuals(f.c(), f.s());
      EXPECT_LT(r.unitarity, 1e-12);
      EXPECT_LT(r.symmetry, 1e-12);
      const auto u = random_unitary(n, rng);
      EXPECT_TRUE(frames_equivalent(f, f.times(u)));
      EXPECT_TRUE(frames_equivalent(f.times(u), f));
      EXPECT_TRUE(frames_equivalent(f, f.times(std::polar(1.0, 0.7) * id(n))));
      EXPECT_FALSE(frames_equivalent(f, random_frame(n, rng)));
      const auto fr = random_real_frame(n, rng);
      EXPECT_TRUE(fr.is_real());
      EXPECT_LT(frame_residuals(fr.c(), fr.s()).symmetry, 1e-12);
    }
  }
  EXPECT_FALSE(frames_equivalent(LagrangianFrame::trivial(2), validate_frame(ComplexMatrix::Zero(2, 2), id(2))));
  EXPECT_FALSE(frames_equivalent(LagrangianFrame::trivial(2), LagrangianFrame::trivial(3)));
}

TEST(Frame, SymplecticFormVanishesOnFrame) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const auto f = random_frame(3, rng);
  auto member = [&] {
    ComplexVector e(3);
    for (auto& x : e) x = Complex(g(rng), g(rng));
    return BoundaryCoordinates{f.c() * e, f.s() * e};
  };
  const auto a = member(), b = member();
  EXPECT_LT(std::abs(symplectic_form(a, b)), 1e-12);
  EXPECT_LT(frame_membership_residual(f, a), 1e-12);
  BoundaryCoordinates off{a.a_plus, a.a_minus + ComplexVector::Constant(3, 1.0)};
  EXPECT_GT(frame_membership_residual(f, off), 1e-3);
}

TEST(Green, MatchesOracle) {
  for (const auto& m : {T2, T3}) {
    const int d = m.dimension();
    const PointSet q(m, {Point{{0.3, 0.5, 0.7}}, Point{{2.0, 4.1, 1.3}}, Point{{2.05, 4.0, 1.3}}});
    const GreenEvaluator ev(m, q, 400.0);
    EXPECT_TRUE(ev.converged());
    for (double eta : {-37.3, 0.5, 150.5, 399.1}) {
      const auto g = ev(eta);
      double d01[3], d12[3];
      for (int i = 0; i < 3; ++i) {
        d01[i] = q[1].x[static_cast<std::size_t>(i)] - q[0].x[static_cast<std::size_t>(i)];
        d12[i] = q[2].x[static_cast<std::size_t>(i)] - q[1].x[static_cast<std::size_t>(i)];
      }
      EXPECT_NEAR(g.entries(0, 0), oracle::green_diag(d, eta), d == 2 ? 1e-12 : 2e-11) << m.name() << " " << eta;
      EXPECT_NEAR(g.entries(0, 1), oracle::green_offdiag(d, d01, eta), 1e-12) << m.name() << " " << eta;
      EXPECT_NEAR(g.entries(1, 2), oracle::green_offdiag(d, d12, eta), 1e-12) << m.name() << " " << eta;
      EXPECT_EQ(g.entries(1, 1), g.entries(0, 0));
      EXPECT_LT(g.tail_bound, 1e-11);
    }
  }
}

TEST(Green, DifferenceSeriesInOneGap) {
  // (2pi)^{-2} sum_n r(n) (eta - eta') / ((n - eta)(n - eta')), with the tail beyond n_max
  // replaced by its Weyl mean pi (eta - eta') / n_max.
  const PointSet q(T2, {Point{{1.0, 2.0, 0.0}}});
  const GreenEvaluator ev(T2, q, 60.0);
  const double eta = 50.2, eta2 = 51.7;  // both in the gap (50, 52)
  const long nmax = 1'000'000;
  const auto r = oracle::counts(2, nmax);
  double s = 0.0;
  for (long n = nmax; n >= 0; --n) s += r[static_cast<std::size_t>(n)] / ((n - eta) * (n - eta2));
  s = (eta - eta2) * (s + kPi / static_cast<double>(nmax));
  EXPECT_NEAR(ev(eta).entries(0, 0) - ev(eta2).entries(0, 0), s / (4 * kPi * kPi), 1e-9);
}

TEST(Green, DiagonalDecreasesTowardsMinusInfinity) {
  for (const auto& m : {T2, T3}) {
    const PointSet q(m, {Point{{0.1, 0.2, 0.3}}});
    const GreenEvaluator ev(m, q, 1000.0);
    const double a = ev(-10.0).entries(0, 0), b = ev(-100.0).entries(0, 0), c = ev(-1000.0).entries(0, 0);
    EXPECT_GT(a, b);
    EXPECT_GT(b, c);
  }
}

TEST(Green, PoleAndRangeErrors) {
  const PointSet q(T2, {Point{{1.0, 2.0, 0.0}}});
  const GreenEvaluator ev(T2, q, 30.0);
  try {
    ev(25.0 + 1e-10);
    FAIL();
  } catch (const PoleError& e) {
    EXPECT_EQ(e.lambda_sq(), 25);
  }
  EXPECT_NO_THROW(ev(25.0 + 1e-6));
  EXPECT_THROW(ev(31.0), PreconditionError);
  EXPECT_THROW(GreenEvaluator(Manifold(ManifoldKind::sphere2), PointSet(Manifold(ManifoldKind::sphere2), {Point{}}), 10.0),
               UnsupportedError);
}

TEST(Green, SymmetricAndOrderIndependent) {
  std::mt19937_64 rng(9);
  for (const auto& m : {T2, T3}) {
    const auto q = random_points(m, 4, rng);
    const PointSet rev(m, {q[3], q[2], q[1], q[0]});
    const GreenEvaluator ev(m, q, 200.0), evr(m, rev, 200.0);
    for (double eta : {-50.0, 12.5, 133.3}) {
      const auto g = ev(eta), gr = evr(eta);
      EXPECT_LT((g.entries - g.entries.transpose()).norm(), 1e-14);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_NEAR(g.entries(i, j), gr.entries(3 - i, 3 - j), 1e-12);
    }
  }
}

TEST(Green, IncreasingInGap) {
  const PointSet q(T2, {Point{{0.4, 1.9, 0.0}}});
  const GreenEvaluator ev(T2, q, 200.0);
  double prev = ev(100.0 + 1e-4).entries(0, 0);
  EXPECT_LT(prev, -10.0);
  for (int i = 1; i < 20; ++i) {
    const double g = ev(100.0 + 0.05 * i).entries(0, 0);
    EXPECT_GT(g, prev);
    prev = g;
  }
  EXPECT_GT(ev(101.0 - 1e-4).entries(0, 0), 10.0);
}

TEST(Coupling, TrivialScalarHermitianInvariant) {
  std::mt19937_64 rng(13);
  const auto q1 = random_points(T2, 1, rng);
  const GreenEvaluator e1(T2, q1, 100.0);
  const auto g1 = e1(47.5);
  EXPECT_EQ(coupling_matrix(LagrangianFrame::trivial(1), g1).a.norm(), 0.0);
  const double th = 0.8;
  const auto a = coupling_matrix(LagrangianFrame::angle(th), g1).a(0, 0);
  EXPECT_NEAR(std::abs(a - std::sin(th) / (std::cos(th) - g1.entries(0, 0) * std::sin(th))), 0.0, 1e-14);

  const auto q2 = random_points(T3, 2, rng);
  const GreenEvaluator e2(T3, q2, 100.0);
  for (int t = 0; t < 10; ++t) {
    const auto f = random_frame(2, rng);
    const auto g = e2(-20.0 + 11.3 * t);
    const auto c = coupling_matrix(f, g).a;
    EXPECT_LT((c - c.adjoint()).norm(), 1e-8 * std::max(1.0, c.norm()));
    const auto cu = coupling_matrix(f.times(random_unitary(2, rng)), g).a;
    EXPECT_LT((c - cu).norm(), 1e-8 * std::max(1.0, c.norm()));
  }
}

TEST(Coupling, SingularAtSecularRoot) {
  const PointSet q(T2, {Point{{0.0, 0.0, 0.0}}});
  const GreenEvaluator ev(T2, q, 60.0);
  const auto f = LagrangianFrame::angle(0.5);
  const auto scan = find_new_eigenvalues(f, ev, 30.0, 40.0);
  ASSERT_FALSE(scan.roots.empty());
  EXPECT_THROW(coupling_matrix(f, ev(scan.roots[0].eta_star)), SingularSecularMatrix);
}

TEST(Secular, TrivialFrameHasNoRoots) {
  std::mt19937_64 rng(17);
  const auto q = random_points(T2, 2, rng);
  const GreenEvaluator ev(T2, q, 120.0);
  for (double eta : {-5.0, 3.3, 77.7}) EXPECT_EQ(secular_det(LagrangianFrame::trivial(2), ev, eta), Complex(1.0, 0.0));
  const auto scan = find_new_eigenvalues(LagrangianFrame::trivial(2), ev, 10.0, 110.0);
  EXPECT_TRUE(scan.roots.empty());
  EXPECT_TRUE(scan.warnings.empty());
}

TEST(Secular, ScalarRootIsCouplingCondition) {
  const PointSet q(T2, {Point{{0.7, 2.9, 0.0}}});
  const GreenEvaluator ev(T2, q, 200.0);
  const double th = 1.0, c = std::cos(th), s = std::sin(th);
  const auto scan = find_new_eigenvalues(LagrangianFrame::angle(th), ev, 100.5, 200.0);
  ASSERT_FALSE(scan.roots.empty());
  for (const auto& r : scan.roots) {
    // independent bisection of G - c/s over the same gap
    auto fn = [&](double eta) { return ev.entry(0, eta) - c / s; };
    double lo = r.gap_left + 1e-9, hi = r.gap_right - 1e-9;
    for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
      const double mid = 0.5 * (lo + hi);
      (fn(mid) < 0.0 ? lo : hi) = mid;
    }
    EXPECT_NEAR(r.eta_star, 0.5 * (lo + hi), 1e-10 * r.eta_star);
    EXPECT_LT(r.residual, 1e-9);
  }
}

TEST(Secular, PhaseRotatedDeterminantIsReal) {
  std::mt19937_64 rng(23);
  const auto q = random_points(T3, 3, rng);
  const GreenEvaluator ev(T3, q, 50.0);
  for (int t = 0; t < 5; ++t) {
    const auto f = random_frame(3, rng);
    const auto rot = std::polar(1.0, -secular_phase(f));
    for (double eta : {-7.0, 4.5, 33.1}) {
      const auto d = rot * secular_det(f, ev, eta);
      EXPECT_LT(std::fabs(d.imag()), 1e-12 * std::max(1.0, std::abs(d)));
    }
  }
}

TEST(Secular, OneRootPerGapWeakCoupling) {
  const PointSet q(T2, {Point{{1.3, 0.4, 0.0}}});
  const GreenEvaluator ev(T2, q, 400.0);
  const auto scan = find_new_eigenvalues(LagrangianFrame::angle(0.1), ev, 100.0, 400.0);
  const auto ns = ev.eigenvalue_squares(100.0, 400.0);
  EXPECT_EQ(scan.gaps, ns.size() - 1);
  ASSERT_EQ(scan.roots.size(), ns.size() - 1);
  for (std::size_t i = 0; i < scan.roots.size(); ++i) {
    EXPECT_GT(scan.roots[i].eta_star, static_cast<double>(ns[i]));
    EXPECT_LT(scan.roots[i].eta_star, static_cast<double>(ns[i + 1]));
  }
  EXPECT_TRUE(scan.warnings.empty());
}

TEST(Secular, RootsFrameInvariant) {
  std::mt19937_64 rng(29);
  const auto q = random_points(T2, 2, rng);
  const GreenEvaluator ev(T2, q, 120.0);
  const auto f = random_frame(2, rng);
  const auto a = find_new_eigenvalues(f, ev, 50.5, 100.5);
  const auto b = find_new_eigenvalues(f.times(random_unitary(2, rng)), ev, 50.5, 100.5);
  ASSERT_EQ(a.roots.size(), b.roots.size());
  ASSERT_FALSE(a.roots.empty());
  for (std::size_t i = 0; i < a.roots.size(); ++i)
    EXPECT_NEAR(a.roots[i].eta_star, b.roots[i].eta_star, 1e-8 * a.roots[i].eta_star);
  EXPECT_THROW(find_new_eigenvalues(f, ev, 10.0, 5.0), PreconditionError);
}

TEST(Resolvent, VanishingAndTrivialCases) {
  const PointSet q(T2, {Point{{0.0, 0.0, 0.0}}});
  const GreenEvaluator ev(T2, q, 50.0);
  ModeExpansion u(2, {{{1, 0, 0}, 1.0}, {{0, 1, 0}, -1.0}});
  const auto f = LagrangianFrame::angle(0.9);
  EXPECT_LT(resolvent_apply(f, ev, 7.5, u).beta.norm(), 1e-15);
  std::mt19937_64 rng(31);
  const auto v = random_modes(2, 6, 4, rng);
  EXPECT_EQ(resolvent_apply(LagrangianFrame::trivial(1), ev, 7.5, v).beta.norm(), 0.0);
  Complex plain{};
  for (const auto& m : v.compressed().modes()) plain += std::norm(m.c) * (static_cast<double>(norm_sq(m.k)) - 7.5);
  EXPECT_NEAR(std::abs(energy_pairing(LagrangianFrame::trivial(1), ev, 7.5, v) - plain), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(energy_pairing(f, ev, 7.5, u) - Complex(2.0 * (1.0 - 7.5), 0.0)), 0.0, 1e-12);
  ModeExpansion on_shell(2, {{{2, 1, 0}, 1.0}});
  EXPECT_THROW(resolvent_apply(f, ev, 5.0, on_shell), PoleError);
}

TEST(Resolvent, BoundaryMembershipAndIdentity) {
  std::mt19937_64 rng(37);
  for (const auto& m : {T2, T3}) {
    const int d = m.dimension();
    for (std::size_t n = 1; n <= 3; ++n) {
      const auto q = random_points(m, n, rng);
      const GreenEvaluator ev(m, q, 80.0);
      const auto f = random_frame(static_cast<Eigen::Index>(n), rng);
      for (double eta : {-12.3, 20.5, 60.5}) {
        const auto u = random_modes(d, 8, 5, rng);
        const auto v = random_modes(d, 8, 5, rng);
        const auto ru = resolvent_apply(f, ev, eta, u), rv = resolvent_apply(f, ev, eta, v);
        const auto xu = boundary_coordinates(ru), xv = boundary_coordinates(rv);
        EXPECT_LT(frame_membership_residual(f, xu), 1e-8);
        EXPECT_LT(std::abs(symplectic_form(xu, xv)), 1e-8 * xu.a_plus.norm() * xv.a_plus.norm() + 1e-12);
        EXPECT_LT(resolvent_identity_defect(f, ev, eta, u), 1e-6);
        const auto direct = energy_pairing(f, ev, eta, u);
        const auto expanded = energy_pairing_expansion(ru, q);
        EXPECT_LT(std::abs(direct - expanded), 1e-8 * std::max(1.0, std::abs(direct)));
        // A is Hermitian, so the pairing is real
        EXPECT_LT(std::fabs(direct.imag()), 1e-8 * std::max(1.0, std::abs(direct)));
      }
    }
  }
}
