#pragma once

// Single-observable time-trace tomography: the measurement map
// M_{n,m} = ⟨B_m, U_{t_n}^† M U_{t_n}⟩, simulated records, Bloch vector
// reconstruction, and an empirical Haar-time estimator.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qlandscape/dynamics.hpp"

namespace qlandscape {

inline constexpr double kInvertibleRelTol = 1e-10;

/// Grid-aligned, strictly increasing sample step indices.
class SampleSchedule {
 public:
  SampleSchedule() = default;

  explicit SampleSchedule(std::vector<int> times) : times_(std::move(times)) {
    if (times_.empty()) throw Error(ErrorKind::InvalidArgument, "sample schedule is empty");
    if (times_.front() < 0) throw Error(ErrorKind::InvalidArgument, "sample times must be non-negative");
    for (std::size_t k = 1; k < times_.size(); ++k) {
      if (times_[k] <= times_[k - 1]) throw Error(ErrorKind::InvalidArgument, "sample times must be strictly increasing");
    }
  }

  /// {spacing, 2 spacing, ..., count spacing}.
  static SampleSchedule multiples(int spacing, int count) {
    if (spacing < 1 || count < 1) throw Error(ErrorKind::InvalidArgument, "schedule spacing and count must be positive");
    std::vector<int> t(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) t[static_cast<std::size_t>(n)] = (n + 1) * spacing;
    return SampleSchedule(std::move(t));
  }

  int size() const noexcept { return static_cast<int>(times_.size()); }
  const std::vector<int>& times() const noexcept { return times_; }
  int operator[](int n) const { return times_.at(static_cast<std::size_t>(n)); }
  int last() const { return times_.back(); }

 private:
  std::vector<int> times_;
};

struct SingularValueSummary {
  double s_min = 0.0;
  double s_max = 0.0;
  /// Right singular vector of s_min (columns space), when requested.
  RVector min_right_vector;
};

namespace detail {

/// Singular values of a K x n real matrix. If K < n the missing singular
/// values are zero and the reported minimum is 0.
inline SingularValueSummary singular_summary(const RMatrix& a, bool want_vector = false) {
  SingularValueSummary out;
  if (a.size() == 0) return out;
  Eigen::JacobiSVD<RMatrix> svd(a, want_vector ? Eigen::ComputeFullV : 0);
  const RVector& s = svd.singularValues();
  out.s_max = s(0);
  out.s_min = a.rows() < a.cols() ? 0.0 : s(s.size() - 1);
  if (want_vector) out.min_right_vector = svd.matrixV().col(a.cols() - 1);
  return out;
}

}  // namespace detail

class MeasurementMap {
 public:
  MeasurementMap() = default;

  MeasurementMap(int d, RMatrix matrix, std::vector<int> schedule = {})
      : d_(d), m_(std::move(matrix)), schedule_(std::move(schedule)) {
    if (d_ < 2) throw Error(ErrorKind::InvalidDimension, "measurement map requires d >= 2");
    detail::require_same_dim(m_.cols(), static_cast<long>(d_) * d_ - 1, "measurement map columns");
    const auto sv = detail::singular_summary(m_);
    s_min_ = sv.s_min;
    s_max_ = sv.s_max;
    cond_ = s_min_ > 0.0 ? s_max_ / s_min_ : std::numeric_limits<double>::infinity();
  }

  int dim() const noexcept { return d_; }
  int rows() const noexcept { return static_cast<int>(m_.rows()); }
  int cols() const noexcept { return static_cast<int>(m_.cols()); }
  const RMatrix& matrix() const noexcept { return m_; }
  const std::vector<int>& schedule() const noexcept { return schedule_; }
  double smallest_singular_value() const noexcept { return s_min_; }
  double largest_singular_value() const noexcept { return s_max_; }
  double condition_number() const noexcept { return cond_; }

  bool is_informationally_complete(double rel_tol = kInvertibleRelTol) const {
    return rows() >= cols() && s_min_ > rel_tol * s_max_;
  }

 private:
  int d_ = 0;
  RMatrix m_;
  std::vector<int> schedule_;
  double s_min_ = 0.0;
  double s_max_ = 0.0;
  double cond_ = std::numeric_limits<double>::infinity();
};

struct NoiseModel {
  enum class Kind { None, Gaussian, Shot };

  Kind kind = Kind::None;
  double sigma = 0.0;
  int shots = 1;

  static NoiseModel none() { return {}; }
  static NoiseModel gaussian(double sigma) {
    if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "gaussian noise needs sigma >= 0");
    return {Kind::Gaussian, sigma, 1};
  }
  static NoiseModel shot(int n_shots) {
    if (n_shots < 1) throw Error(ErrorKind::InvalidArgument, "shot noise needs n_shots >= 1");
    return {Kind::Shot, 0.0, n_shots};
  }

  std::string describe() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::Gaussian: return "gaussian(sigma=" + std::to_string(sigma) + ")";
      case Kind::Shot: return "shot(n_shots=" + std::to_string(shots) + ")";
    }
    return "unknown";
  }
};

struct MeasurementRecord {
  RVector y;
  NoiseModel noise;
  /// Realized noise ỹ - y; empty for noiseless records.
  RVector epsilon;
};

/// Coefficients x_ρ of ρ = 1/d + Σ x_m B_m.
class BlochVector {
 public:
  BlochVector() = default;

  BlochVector(int d, RVector coeffs) : d_(d), x_(std::move(coeffs)) {
    if (d_ < 2) throw Error(ErrorKind::InvalidDimension, "Bloch vector requires d >= 2");
    detail::require_same_dim(x_.size(), static_cast<long>(d_) * d_ - 1, "Bloch vector length");
  }

  static BlochVector of(const CMatrix& rho, const OperatorBasis& basis) {
    return {basis.dim(), basis.coefficients(rho)};
  }

  int dim() const noexcept { return d_; }
  const RVector& coeffs() const noexcept { return x_; }

  /// 1/d + Σ x_m B_m; Hermitian with unit trace, not necessarily positive.
  HermitianMatrix to_operator(const OperatorBasis& basis) const {
    detail::require_same_dim(basis.dim(), d_, "Bloch vector basis");
    return HermitianMatrix::hermitian_part(CMatrix::Identity(d_, d_) / static_cast<double>(d_) + basis.resum(x_));
  }

  bool is_positive(const OperatorBasis& basis, double tol = 1e-10) const {
    return to_operator(basis).eigenvalues().minCoeff() >= -tol;
  }

  /// Nearest-by-clipping density matrix: negative eigenvalues set to zero,
  /// trace renormalized. The coefficients themselves are left untouched.
  DensityMatrix to_density_matrix(const OperatorBasis& basis) const {
    const auto es = detail::eigensystem(to_operator(basis));
    RVector w = es.values.cwiseMax(0.0);
    const double total = w.sum();
    if (!(total > 0.0)) throw Error(ErrorKind::Numerical, "positivity repair produced a zero matrix");
    w /= total;
    CMatrix rho = es.vectors * w.cast<Complex>().asDiagonal() * es.vectors.adjoint();
    rho = 0.5 * (rho + rho.adjoint()).eval();
    rho /= rho.trace().real();
    return DensityMatrix(std::move(rho));
  }

 private:
  int d_ = 0;
  RVector x_;
};

struct ReconstructionMethod {
  enum class Kind { DirectInverse, LeastSquares };
  Kind kind = Kind::DirectInverse;
  double ridge = 0.0;

  static ReconstructionMethod direct_inverse() { return {}; }
  static ReconstructionMethod least_squares(double ridge = 0.0) {
    if (!(ridge >= 0.0)) throw Error(ErrorKind::InvalidArgument, "ridge parameter must be >= 0");
    return {Kind::LeastSquares, ridge};
  }
};

inline MeasurementMap build_measurement_map(const Trajectory& traj, const SampleSchedule& schedule,
                                            const OperatorBasis& basis) {
  const int d = traj.system().dim();
  detail::require_same_dim(basis.dim(), d, "measurement map basis");
  if (schedule.size() < basis.size()) {
    throw Error(ErrorKind::InvalidArgument, "schedule has " + std::to_string(schedule.size()) +
                                                " samples, need at least d^2-1 = " + std::to_string(basis.size()));
  }
  if (schedule.last() > traj.n_steps()) {
    throw Error(ErrorKind::IndexOutOfRange, "schedule sample " + std::to_string(schedule.last()) +
                                                " beyond trajectory length " + std::to_string(traj.n_steps()));
  }
  RMatrix m(schedule.size(), basis.size());
  for (int n = 0; n < schedule.size(); ++n) {
    m.row(n) = basis.coefficients(conjugated_observable(traj, schedule[n]).matrix()).transpose();
  }
  return {d, std::move(m), schedule.times()};
}

namespace detail {

inline void check_state_operator(const HermitianMatrix& rho, int d) {
  require_same_dim(rho.dim(), d, "state dimension");
  if (!(std::abs(rho.matrix().trace() - Complex(1.0)) <= 1e-10)) {
    throw Error(ErrorKind::InvalidArgument, "state operator must have unit trace");
  }
}

}  // namespace detail

/// y_n = Tr{ρ U_{t_n}^† M U_{t_n}} plus noise. `rho` may be a non-positive
/// unit-trace operator except under shot noise.
inline MeasurementRecord simulate_record(const Trajectory& traj, const SampleSchedule& schedule,
                                         const HermitianMatrix& rho, const NoiseModel& noise, RandomStream& rng) {
  const int d = traj.system().dim();
  detail::check_state_operator(rho, d);
  if (schedule.last() > traj.n_steps()) throw Error(ErrorKind::IndexOutOfRange, "schedule beyond trajectory");
  const int k = schedule.size();
  const CMatrix& m = traj.system().observable().matrix();

  RVector exact(k);
  for (int n = 0; n < k; ++n) {
    const CMatrix& u = traj.prefix(schedule[n]).matrix();
    exact(n) = (u * rho.matrix() * u.adjoint() * m).trace().real();
  }

  MeasurementRecord rec;
  rec.noise = noise;
  switch (noise.kind) {
    case NoiseModel::Kind::None:
      rec.y = exact;
      break;
    case NoiseModel::Kind::Gaussian: {
      rec.epsilon.resize(k);
      for (int n = 0; n < k; ++n) rec.epsilon(n) = noise.sigma * rng.normal();
      rec.y = exact + rec.epsilon;
      break;
    }
    case NoiseModel::Kind::Shot: {
      if (rho.eigenvalues().minCoeff() < -1e-10) {
        throw Error(ErrorKind::InvalidArgument, "shot noise needs a positive semidefinite state");
      }
      const auto es = detail::eigensystem(traj.system().observable());
      rec.y.resize(k);
      for (int n = 0; n < k; ++n) {
        const CMatrix& u = traj.prefix(schedule[n]).matrix();
        const CMatrix rho_t = u * rho.matrix() * u.adjoint();
        // Multinomial draw over the eigenbasis of M as a chain of binomials.
        int remaining = noise.shots;
        double mass_left = 1.0;
        double sum = 0.0;
        for (Eigen::Index a = 0; a < es.values.size(); ++a) {
          const double p = std::max(0.0, (es.vectors.col(a).adjoint() * rho_t * es.vectors.col(a))(0, 0).real());
          int count = 0;
          if (a + 1 == es.values.size()) {
            count = remaining;
          } else if (remaining > 0 && mass_left > 0.0) {
            const double q = std::clamp(p / mass_left, 0.0, 1.0);
            count = std::binomial_distribution<int>(remaining, q)(rng.engine());
          }
          sum += count * es.values(a);
          remaining -= count;
          mass_left -= p;
        }
        rec.y(n) = sum / noise.shots;
      }
      rec.epsilon = rec.y - exact;
      break;
    }
  }
  return rec;
}

inline MeasurementRecord simulate_record(const Trajectory& traj, const SampleSchedule& schedule,
                                         const DensityMatrix& rho, const NoiseModel& noise, RandomStream& rng) {
  return simulate_record(traj, schedule, HermitianMatrix::hermitian_part(rho.matrix()), noise, rng);
}

inline BlochVector reconstruct(const MeasurementMap& map, const MeasurementRecord& record,
                               const ReconstructionMethod& method) {
  detail::require_same_dim(record.y.size(), map.rows(), "record length vs map rows");
  const RMatrix& m = map.matrix();
  RVector x;
  if (method.kind == ReconstructionMethod::Kind::DirectInverse) {
    if (map.rows() != map.cols()) {
      throw Error(ErrorKind::InvalidArgument, "direct inverse needs exactly d^2-1 samples");
    }
    if (!map.is_informationally_complete()) {
      throw NotInformationallyCompleteError(map.smallest_singular_value(), map.largest_singular_value());
    }
    x = Eigen::FullPivLU<RMatrix>(m).solve(record.y);
  } else {
    if (map.rows() < map.cols()) {
      throw Error(ErrorKind::InvalidArgument, "least squares needs at least d^2-1 samples");
    }
    if (method.ridge == 0.0) {
      x = Eigen::CompleteOrthogonalDecomposition<RMatrix>(m).solve(record.y);
    } else {
      RMatrix stacked(m.rows() + m.cols(), m.cols());
      stacked << m, std::sqrt(method.ridge) * RMatrix::Identity(m.cols(), m.cols());
      RVector rhs = RVector::Zero(stacked.rows());
      rhs.head(m.rows()) = record.y;
      x = Eigen::ColPivHouseholderQR<RMatrix>(stacked).solve(rhs);
    }
  }
  return {map.dim(), std::move(x)};
}

inline double reconstruction_error(const BlochVector& truth, const BlochVector& estimate) {
  detail::require_same_dim(truth.coeffs().size(), estimate.coeffs().size(), "reconstruction_error");
  return (truth.coeffs() - estimate.coeffs()).norm();
}

/// Random probe/test field: i.i.d. N(0, amplitude_scale²) amplitudes,
/// steps_per_segment grid steps per candidate Haar time.
struct RandomFieldSpec {
  double amplitude_scale = 1.0;
  int steps_per_segment = 10;
};

struct HaarTimeEstimate {
  double t_star = 0.0;
  double dt = 0.0;
  double pass_rate = 0.0;
  int doublings = 0;
};

inline constexpr int kHaarTimeTrials = 50;
inline constexpr int kHaarTimeMaxDoublings = 20;

/// Fraction of `trials` random fields of length (d²-1)T, sampled at
/// multiples of T, whose map satisfies s_min > rel_tol * s_max.
inline double invertible_fraction(const ControlSystem& system, double t, const RandomFieldSpec& spec,
                                  const OperatorBasis& basis, int trials, RandomStream& rng,
                                  double rel_tol = 1e-8) {
  const int n = basis.size();
  const int s = spec.steps_per_segment;
  const double dt = t / s;
  const auto schedule = SampleSchedule::multiples(s, n);
  int passed = 0;
  for (int trial = 0; trial < trials; ++trial) {
    auto sub = rng.substream(static_cast<std::uint64_t>(trial));
    const auto field = ControlField::random(n * s, dt, spec.amplitude_scale, sub);
    const auto map = build_measurement_map(propagate(system, field), schedule, basis);
    if (map.is_informationally_complete(rel_tol)) ++passed;
  }
  return static_cast<double>(passed) / trials;
}

inline HaarTimeEstimate estimate_haar_time(const ControlSystem& system, const RandomFieldSpec& spec,
                                           RandomStream& rng, double target_rate) {
  if (!(target_rate > 0.0 && target_rate < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "target_rate must lie in (0, 1)");
  }
  if (spec.steps_per_segment < 1) throw Error(ErrorKind::InvalidArgument, "steps_per_segment must be >= 1");
  const int d = system.dim();
  if (!lie_closure(system, d * d).is_fully_controllable) {
    throw Error(ErrorKind::NotControllable, "Haar time estimation needs a fully controllable system");
  }
  const auto basis = gell_mann_basis(d);
  const double drift_norm = system.drift().spectral_norm();
  double t = drift_norm > 0.0 ? 1.0 / drift_norm : 1.0;
  for (int doubling = 0; doubling <= kHaarTimeMaxDoublings; ++doubling) {
    auto sub = rng.substream(static_cast<std::uint64_t>(doubling));
    const double rate = invertible_fraction(system, t, spec, basis, kHaarTimeTrials, sub);
    if (rate >= target_rate) return {t, t / spec.steps_per_segment, rate, doubling};
    t *= 2.0;
  }
  throw Error(ErrorKind::EstimationFailed,
              "no candidate time reached the target invertibility rate within " +
                  std::to_string(kHaarTimeMaxDoublings) + " doublings");
}

}  // namespace qlandscape
