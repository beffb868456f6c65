#pragma once

// Controlled time evolution under H(t) = H0 + f(t) Hc with piecewise-constant
// f, cached prefix propagators, and the dynamical Lie algebra rank test.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "qlandscape/operators.hpp"

namespace qlandscape {

class ControlSystem {
 public:
  ControlSystem() = default;

  ControlSystem(HermitianMatrix drift, HermitianMatrix control, HermitianMatrix observable)
      : drift_(std::move(drift)), control_(std::move(control)), observable_(std::move(observable)) {
    detail::require_same_dim(drift_.dim(), control_.dim(), "ControlSystem control");
    detail::require_same_dim(drift_.dim(), observable_.dim(), "ControlSystem observable");
    if (drift_.dim() < 2) throw Error(ErrorKind::InvalidDimension, "ControlSystem requires d >= 2");
    if (!drift_.is_traceless()) throw Error(ErrorKind::InvalidArgument, "drift Hamiltonian must be traceless");
    if (!control_.is_traceless()) throw Error(ErrorKind::InvalidArgument, "control Hamiltonian must be traceless");
    if (!observable_.is_traceless()) throw Error(ErrorKind::InvalidArgument, "observable must be traceless");
  }

  int dim() const noexcept { return drift_.dim(); }
  const HermitianMatrix& drift() const noexcept { return drift_; }
  const HermitianMatrix& control() const noexcept { return control_; }
  const HermitianMatrix& observable() const noexcept { return observable_; }

  ControlSystem with_observable(HermitianMatrix m) const { return {drift_, control_, std::move(m)}; }

  HermitianMatrix hamiltonian(double amplitude) const {
    return HermitianMatrix::hermitian_part(drift_.matrix() + amplitude * control_.matrix());
  }

 private:
  HermitianMatrix drift_;
  HermitianMatrix control_;
  HermitianMatrix observable_;
};

/// Piecewise-constant field: amplitude f_k on [(k-1)Δt, kΔt), k = 1..N.
class ControlField {
 public:
  ControlField() = default;

  ControlField(RVector amplitudes, double dt) : f_(std::move(amplitudes)), dt_(dt) {
    if (f_.size() < 1) throw Error(ErrorKind::InvalidArgument, "ControlField needs at least one step");
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw Error(ErrorKind::InvalidArgument, "ControlField needs dt > 0");
    if (!f_.allFinite()) throw Error(ErrorKind::InvalidArgument, "ControlField amplitudes must be finite");
  }

  static ControlField constant(int n_steps, double dt, double value = 0.0) {
    return {RVector::Constant(n_steps, value), dt};
  }

  static ControlField random(int n_steps, double dt, double scale, RandomStream& rng) {
    RVector f(n_steps);
    for (int k = 0; k < n_steps; ++k) f(k) = scale * rng.normal();
    return {std::move(f), dt};
  }

  int n_steps() const noexcept { return static_cast<int>(f_.size()); }
  double dt() const noexcept { return dt_; }
  double total_time() const noexcept { return dt_ * static_cast<double>(f_.size()); }
  const RVector& amplitudes() const noexcept { return f_; }
  double operator[](int k) const { return f_(k); }

  /// This field followed by `next` (same Δt required).
  ControlField concat(const ControlField& next) const {
    if (std::abs(next.dt_ - dt_) > 1e-15 * std::max(1.0, dt_)) {
      throw Error(ErrorKind::InvalidArgument, "cannot concatenate fields with different dt");
    }
    RVector f(f_.size() + next.f_.size());
    f << f_, next.f_;
    return {std::move(f), dt_};
  }

 private:
  RVector f_;
  double dt_ = 1.0;
};

/// Step and prefix propagators; prefix(k) = U_{kΔt}, prefix(0) = 1.
class Trajectory {
 public:
  Trajectory(ControlSystem system, ControlField field, std::vector<UnitaryMatrix> steps,
             std::vector<UnitaryMatrix> prefixes)
      : system_(std::move(system)), field_(std::move(field)), steps_(std::move(steps)), prefixes_(std::move(prefixes)) {}

  const ControlSystem& system() const noexcept { return system_; }
  const ControlField& field() const noexcept { return field_; }
  int n_steps() const noexcept { return field_.n_steps(); }
  double dt() const noexcept { return field_.dt(); }

  /// Step k = 1..N.
  const UnitaryMatrix& step(int k) const {
    check_index(k, 1, n_steps());
    return steps_[static_cast<std::size_t>(k - 1)];
  }
  /// k = 0..N.
  const UnitaryMatrix& prefix(int k) const {
    check_index(k, 0, n_steps());
    return prefixes_[static_cast<std::size_t>(k)];
  }
  const UnitaryMatrix& endpoint() const { return prefixes_.back(); }

  const std::vector<UnitaryMatrix>& step_unitaries() const noexcept { return steps_; }
  const std::vector<UnitaryMatrix>& prefix_unitaries() const noexcept { return prefixes_; }

 private:
  static void check_index(int k, int lo, int hi) {
    if (k < lo || k > hi) {
      throw Error(ErrorKind::IndexOutOfRange,
                  "step index " + std::to_string(k) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }

  ControlSystem system_;
  ControlField field_;
  std::vector<UnitaryMatrix> steps_;
  std::vector<UnitaryMatrix> prefixes_;
};

inline Trajectory propagate(const ControlSystem& system, const ControlField& field) {
  const int n = field.n_steps();
  std::vector<UnitaryMatrix> steps;
  std::vector<UnitaryMatrix> prefixes;
  steps.reserve(static_cast<std::size_t>(n));
  prefixes.reserve(static_cast<std::size_t>(n) + 1);
  prefixes.push_back(UnitaryMatrix::identity(system.dim()));
  for (int k = 0; k < n; ++k) {
    steps.push_back(expm_hermitian(system.hamiltonian(field[k]), field.dt()));
    prefixes.push_back(steps.back() * prefixes.back());
  }
  return {system, field, std::move(steps), std::move(prefixes)};
}

/// prefix(k) ψ0.
inline PureState evolve_state(const Trajectory& traj, const PureState& psi0, int k) {
  detail::require_same_dim(psi0.dim(), traj.system().dim(), "evolve_state");
  return PureState::normalized(traj.prefix(k).matrix() * psi0.amplitudes());
}

/// U_{t_k}^† M U_{t_k}.
inline HermitianMatrix conjugated(const UnitaryMatrix& u, const HermitianMatrix& m) {
  return HermitianMatrix::hermitian_part(u.matrix().adjoint() * m.matrix() * u.matrix());
}

inline HermitianMatrix conjugated_observable(const Trajectory& traj, int k) {
  return conjugated(traj.prefix(k), traj.system().observable());
}

struct LieClosureReport {
  int dimension_found = 0;
  bool is_fully_controllable = false;
  /// False when max_depth rounds ran out before the algebra stopped growing.
  bool closed = false;
  int rounds = 0;
  /// Orthonormal (Re Tr{A^† B}) anti-Hermitian basis of the generated algebra.
  std::vector<CMatrix> basis;
};

namespace detail {

/// Real Gram-Schmidt on anti-Hermitian matrices viewed as vectors in R^{2d²}.
class AntiHermitianSpan {
 public:
  explicit AntiHermitianSpan(double scale) : scale_(scale) {}

  /// Adds the component of x orthogonal to the span; returns true if kept.
  bool try_add(const CMatrix& x) {
    const double norm0 = x.norm();
    if (!(norm0 > kRankTol * scale_)) return false;
    CMatrix r = x;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis_) r -= hs_inner(b, r).real() * b;
    }
    const double norm1 = r.norm();
    if (!(norm1 > kRankTol * norm0)) return false;
    basis_.push_back(r / norm1);
    return true;
  }

  std::size_t size() const noexcept { return basis_.size(); }
  const std::vector<CMatrix>& basis() const noexcept { return basis_; }
  std::vector<CMatrix> take() && { return std::move(basis_); }

  static constexpr double kRankTol = 1e-10;

 private:
  double scale_;
  std::vector<CMatrix> basis_;
};

}  // namespace detail

/// Span of {iH0, iHc} closed under commutators, grown breadth-first for at
/// most max_depth rounds.
inline LieClosureReport lie_closure(const ControlSystem& system, int max_depth) {
  if (max_depth < 1) throw Error(ErrorKind::InvalidArgument, "lie_closure requires max_depth >= 1");
  const int d = system.dim();
  const int full = d * d - 1;
  const Complex i(0.0, 1.0);
  const CMatrix g0 = i * system.drift().matrix();
  const CMatrix g1 = i * system.control().matrix();
  const double scale = std::max(g0.norm(), g1.norm());

  LieClosureReport report;
  if (!(scale > 0.0)) {
    report.closed = true;
    return report;
  }
  detail::AntiHermitianSpan span(scale);
  span.try_add(g0);
  span.try_add(g1);

  std::size_t frontier_begin = 0;
  bool closed = false;
  int round = 0;
  while (round < max_depth && static_cast<int>(span.size()) < full) {
    ++round;
    const std::size_t frontier_end = span.size();
    for (std::size_t a = frontier_begin; a < frontier_end && static_cast<int>(span.size()) < full; ++a) {
      for (std::size_t b = 0; b < frontier_end && static_cast<int>(span.size()) < full; ++b) {
        if (b >= frontier_begin && b <= a) continue;
        const CMatrix& x = span.basis()[a];
        const CMatrix& y = span.basis()[b];
        span.try_add(x * y - y * x);
      }
    }
    if (span.size() == frontier_end) {
      closed = true;
      break;
    }
    frontier_begin = frontier_end;
  }
  report.dimension_found = static_cast<int>(span.size());
  report.closed = closed || report.dimension_found == full;
  report.is_fully_controllable = report.dimension_found == full;
  report.rounds = round;
  report.basis = std::move(span).take();
  return report;
}

}  // namespace qlandscape
