#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace qlandscape;
using qt::max_abs;

namespace {

StatePreparationProblem random_problem(const ControlSystem& sys, std::uint64_t seed) {
  RandomStream rng(seed);
  const auto target = haar_state(sys.dim(), rng);
  return {sys, PureState::basis(sys.dim(), 0), target};
}

// Oracle: central differences of J through Padé-exponential propagation.
RVector pade_fd_gradient(const StatePreparationProblem& p, const RVector& f, double dt, double h) {
  auto j_of = [&](const RVector& g) {
    CVector psi = p.initial().amplitudes();
    for (int k = 0; k < g.size(); ++k) {
      psi = qt::pade_expm(p.system().drift().matrix() + g(k) * p.system().control().matrix(), dt) * psi;
    }
    return std::norm(p.target().amplitudes().dot(psi));
  };
  RVector out(f.size());
  RVector g = f;
  for (int j = 0; j < f.size(); ++j) {
    g(j) = f(j) + h;
    const double up = j_of(g);
    g(j) = f(j) - h;
    const double down = j_of(g);
    g(j) = f(j);
    out(j) = (up - down) / (2.0 * h);
  }
  return out;
}

TEST(Fidelity, PerfectOrthogonalAndPhase) {
  const auto sys = ising_chain_preset(2, 1.0, 1.0);
  RandomStream rng(1);
  const auto field = ControlField::random(10, 0.2, 1.0, rng);
  const auto traj = propagate(sys, field);
  const PureState phi = PureState::basis(4, 0);
  const CVector end = traj.endpoint().matrix() * phi.amplitudes();
  EXPECT_NEAR(fidelity({sys, phi, PureState::normalized(end)}, field), 1.0, 1e-12);
  CVector orth = CVector::Zero(4);
  orth(0) = -std::conj(end(1));
  orth(1) = std::conj(end(0));
  EXPECT_NEAR(fidelity({sys, phi, PureState::normalized(orth)}, field), 0.0, 1e-12);
  const PureState g = haar_state(4, rng);
  const PureState g_phase(g.amplitudes() * std::polar(1.0, 0.77));
  EXPECT_NEAR(fidelity({sys, phi, g}, field), fidelity({sys, phi, g_phase}, field), 1e-14);
}

TEST(AnalyticGradient, MatchesFiniteDifferences) {
  for (const auto& sys : {qt::qubit_system(), ising_chain_preset(2, 1.0, 1.0)}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = random_problem(sys, seed);
      RandomStream rng(100 + seed);
      const auto field = ControlField::random(15, 0.2, 1.0, rng);
      const auto exact = analytic_gradient(p, field);
      const RVector oracle = pade_fd_gradient(p, field.amplitudes(), field.dt(), 1e-6);
      EXPECT_LT((exact.gradient - oracle).norm() / oracle.norm(), 1e-6);
      EXPECT_NEAR(exact.value, fidelity(p, field), 1e-14);
      const auto fd = finite_difference_gradient(p, field, 1e-6);
      EXPECT_LT((exact.gradient - fd.gradient).norm() / fd.gradient.norm(), 1e-6);
    }
  }
}

TEST(AnalyticGradient, VanishesAtStationaryPoints) {
  const auto sys = ising_chain_preset(2, 1.0, 1.0);
  RandomStream rng(3);
  const auto field = ControlField::random(12, 0.2, 1.0, rng);
  const PureState phi = PureState::basis(4, 0);
  const CVector end = propagate(sys, field).endpoint().matrix() * phi.amplitudes();
  const StatePreparationProblem at_one(sys, phi, PureState(end * std::polar(1.0, 1.3)));
  EXPECT_LT(analytic_gradient(at_one, field).gradient.norm(), 1e-8);
  // continuous integrand 2 Im⟨ψ0|U_t† Hc U_t|ψ0⟩ is zero too
  EXPECT_LT(continuous_gradient(at_one, field).gradient.norm(), 1e-12);
  CVector orth = CVector::Zero(4);
  orth(0) = -std::conj(end(1));
  orth(1) = std::conj(end(0));
  const StatePreparationProblem at_zero(sys, phi, PureState::normalized(orth));
  EXPECT_LT(analytic_gradient(at_zero, field).gradient.norm(), 1e-8);
}

TEST(ContinuousGradient, ConvergesLinearlyInDt) {
  // Smooth field sampled at interval midpoints; compare g_exact/Δt with the
  // integrand at the left grid point in the time-weighted L² norm.
  const auto sys = ising_chain_preset(2, 1.0, 1.0);
  const auto p = random_problem(sys, 9);
  const double total = 2.0;
  auto weighted_gap = [&](int n) {
    const double dt = total / n;
    RVector f(n);
    for (int k = 0; k < n; ++k) {
      const double t = (k + 0.5) * dt;
      f(k) = 0.8 * std::sin(2.1 * t) + 0.3 * std::cos(0.7 * t);
    }
    const ControlField field(f, dt);
    const RVector g = analytic_gradient(p, field).gradient;
    const RVector h = continuous_gradient(p, field).gradient;
    return std::sqrt(((g - h) / dt).squaredNorm() * dt);
  };
  const double e1 = weighted_gap(40);
  const double e2 = weighted_gap(80);
  const double e3 = weighted_gap(160);
  EXPECT_NEAR(e1 / e2, 2.0, 0.4);
  EXPECT_NEAR(e2 / e3, 2.0, 0.4);
}

TEST(FiniteDifference, RejectsBadStep) {
  const auto p = random_problem(qt::qubit_system(), 1);
  EXPECT_THROW(finite_difference_gradient(p, ControlField::constant(3, 0.1), 0.0), Error);
}

TEST(GradientAscent, QubitReachesHighFidelity) {
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_problem(qt::qubit_system(), 200 + seed);
    RandomStream rng(300 + seed);
    const auto f0 = ControlField::random(20, 0.15, 1.0, rng);
    OptimizerConfig cfg;
    const auto res = gradient_ascent(p, f0, cfg);
    const double final_j = fidelity(p, ControlField(res.field, 0.15));
    EXPECT_NEAR(final_j, res.trace.back().value, 1e-12);
    if (final_j > 0.999 && res.trace.back().iteration <= 200) ++successes;
    for (std::size_t k = 1; k < res.trace.size(); ++k) EXPECT_GT(res.trace[k].value, res.trace[k - 1].value);
  }
  EXPECT_GE(successes, 9);
}

TEST(GradientAscent, FiniteDifferenceSourceAgrees) {
  const auto p = random_problem(qt::qubit_system(), 7);
  RandomStream rng(8);
  const auto f0 = ControlField::random(20, 0.15, 1.0, rng);
  OptimizerConfig a;
  a.max_iters = 15;
  a.threshold = 1.1;
  OptimizerConfig b = a;
  b.gradient = GradientSource::ModelFiniteDifference;
  const auto ra = gradient_ascent(p, f0, a);
  const auto rb = gradient_ascent(p, f0, b);
  ASSERT_EQ(ra.trace.size(), rb.trace.size());
  for (std::size_t k = 0; k < ra.trace.size(); ++k) EXPECT_NEAR(ra.trace[k].value, rb.trace[k].value, 1e-6);
}

TEST(GradientAscent, StartingAtOptimumStaysPut) {
  const auto sys = qt::qubit_system();
  RandomStream rng(4);
  const auto f0 = ControlField::random(20, 0.15, 1.0, rng);
  const PureState phi = PureState::basis(2, 0);
  const StatePreparationProblem p(sys, phi, PureState::normalized(propagate(sys, f0).endpoint().matrix() * phi.amplitudes()));
  OptimizerConfig cfg;
  cfg.threshold = 1.1;  // never converge, force update attempts
  cfg.max_iters = 5;
  cfg.adaptation = StepAdaptation::Fixed;
  const auto res = gradient_ascent(p, f0, cfg);
  for (const auto& e : res.trace) EXPECT_NEAR(e.value, 1.0, 1e-8);
}

TEST(GradientAscent, FixedStepAndTraceShape) {
  const auto p = random_problem(qt::qubit_system(), 5);
  OptimizerConfig cfg;
  cfg.adaptation = StepAdaptation::Fixed;
  cfg.alpha = 0.5;
  cfg.max_iters = 4;
  cfg.threshold = 1.1;
  const auto res = gradient_ascent(p, ControlField::constant(10, 0.2, 0.1), cfg);
  ASSERT_EQ(res.trace.size(), 5u);
  for (std::size_t k = 0; k < res.trace.size(); ++k) {
    EXPECT_EQ(res.trace[k].iteration, int(k));
    EXPECT_DOUBLE_EQ(res.trace[k].alpha, 0.5);
  }
  EXPECT_EQ(res.stop, StopReason::MaxIterations);
}

TEST(OptimizerConfig, Validation) {
  const auto p = random_problem(qt::qubit_system(), 5);
  OptimizerConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(gradient_ascent(p, ControlField::constant(3, 0.1), cfg), Error);
  cfg.alpha = 1.0;
  cfg.max_iters = 0;
  EXPECT_THROW(gradient_ascent(p, ControlField::constant(3, 0.1), cfg), Error);
  cfg.max_iters = 5;
  cfg.gradient = GradientSource::Measured;
  EXPECT_THROW(gradient_ascent(p, ControlField::constant(3, 0.1), cfg), Error);
}

TEST(Ascend, SourceFailureCarriesIteration) {
  Objective obj;
  int calls = 0;
  obj.value = [&](const RVector& f) { return 0.1 + 0.01 * f.sum(); };
  obj.gradient = [&](const RVector& f) -> RVector {
    if (++calls == 4) throw Error(ErrorKind::ProbeFailure, "probe went singular");
    return RVector::Ones(f.size());
  };
  OptimizerConfig cfg;
  cfg.threshold = 1.1;
  try {
    ascend(obj, RVector::Zero(2), cfg);
    FAIL();
  } catch (const GradientSourceError& e) {
    EXPECT_EQ(e.iteration(), 3);
    EXPECT_EQ(e.cause(), ErrorKind::ProbeFailure);
  }
  calls = 0;
  const auto res = ascend(obj, RVector::Zero(2), cfg, {}, true);
  EXPECT_EQ(res.stop, StopReason::SourceFailure);
  EXPECT_EQ(res.trace.size(), 3u);
}

TEST(Singular, CommutingQubit) {
  RandomStream rng(1);
  const auto basis = gell_mann_basis(2);
  const auto rep = detect_singular_control(qt::commuting_qubit(), ControlField::random(20, 0.1, 1.0, rng), basis);
  EXPECT_TRUE(rep.is_singular);
  ASSERT_TRUE(rep.null_direction.has_value());
  EXPECT_LT(std::abs(hs_inner(pauli::z(), rep.null_direction->matrix())), 1e-12);
  EXPECT_NEAR(hs_inner(rep.null_direction->matrix(), rep.null_direction->matrix()).real(), 1.0, 1e-12);
  EXPECT_LE(rep.max_overlap, 1e-8 * pauli::z().norm());
  // null space contains both σx and σy: the orbit matrix annihilates them
  const auto traj = propagate(qt::commuting_qubit(), ControlField::random(20, 0.1, 1.0, rng));
  const RMatrix r = orbit_matrix(traj, basis);
  EXPECT_LT((r * RVector::Unit(3, 0)).norm(), 1e-14);
  EXPECT_LT((r * RVector::Unit(3, 1)).norm(), 1e-14);
}

TEST(Singular, DriftOnlyQubitNullIsSigmaZ) {
  const auto rep = detect_singular_control(qt::qubit_system(), ControlField::constant(40, 0.1), gell_mann_basis(2));
  EXPECT_TRUE(rep.is_singular);
  ASSERT_TRUE(rep.null_direction.has_value());
  EXPECT_LT(max_abs(rep.null_direction->matrix() - pauli::z() / std::sqrt(2.0)), 1e-10);
  EXPECT_GT(rep.null_coefficients.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Singular, RandomFieldsAreRegular) {
  int regular = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RandomStream rng(seed);
    const auto rep = detect_singular_control(qt::qubit_system(), ControlField::random(50, 0.1, 1.0, rng),
                                             gell_mann_basis(2));
    if (!rep.is_singular) ++regular;
    EXPECT_FALSE(rep.warning.has_value());
  }
  EXPECT_GE(regular, 99);
}

TEST(Singular, ShortGridWarns) {
  RandomStream rng(2);
  const auto rep = detect_singular_control(ising_chain_preset(2, 1.0, 1.0), ControlField::random(5, 0.1, 1.0, rng),
                                           gell_mann_basis(4));
  EXPECT_TRUE(rep.warning.has_value());
  EXPECT_TRUE(rep.is_singular);
}

// A singular control makes the map with M = H_c incomplete, and conversely.
TEST(Singular, LinkToInformationCompleteness) {
  const auto basis = gell_mann_basis(2);
  struct Case {
    ControlSystem sys;
    ControlField field;
  };
  RandomStream rng(5);
  const std::vector<Case> cases{{qt::commuting_qubit(), ControlField::random(30, 0.1, 1.0, rng)},
                                {qt::qubit_system(), ControlField::constant(30, 0.1)}};
  for (const auto& c : cases) {
    const auto rep = detect_singular_control(c.sys, c.field, basis);
    ASSERT_TRUE(rep.is_singular);
    const auto traj = propagate(c.sys.with_observable(c.sys.control()), c.field);
    for (const auto& times : {std::vector<int>{1, 2, 3}, std::vector<int>{5, 17, 29}, std::vector<int>{0, 10, 20, 30}}) {
      const auto map = build_measurement_map(traj, SampleSchedule(times), basis);
      EXPECT_LE((map.matrix() * rep.null_coefficients).norm(), 1e-8 * map.matrix().norm());
      EXPECT_LE(map.smallest_singular_value(), 1e-8 * map.largest_singular_value());
    }
  }
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RandomStream r(seed + 50);
    const auto field = ControlField::random(30, 0.1, 1.0, r);
    const auto sys = qt::qubit_system();
    const auto map = build_measurement_map(propagate(sys, field), SampleSchedule::multiples(10, 3), basis);
    if (map.smallest_singular_value() > 1e-4 * map.largest_singular_value()) {
      EXPECT_FALSE(detect_singular_control(sys, field, basis).is_singular);
    }
  }
}

}  // namespace
