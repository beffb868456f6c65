#pragma once

// State-preparation fidelity landscape: cost, exact discrete gradient,
// gradient ascent, and singular-control detection.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qlandscape/dynamics.hpp"
#include "qlandscape/tomography.hpp"

namespace qlandscape {

class StatePreparationProblem {
 public:
  StatePreparationProblem() = default;

  StatePreparationProblem(ControlSystem system, PureState initial, PureState target)
      : system_(std::move(system)), initial_(std::move(initial)), target_(std::move(target)) {
    detail::require_same_dim(initial_.dim(), system_.dim(), "initial state");
    detail::require_same_dim(target_.dim(), system_.dim(), "target state");
  }

  const ControlSystem& system() const noexcept { return system_; }
  const PureState& initial() const noexcept { return initial_; }
  const PureState& target() const noexcept { return target_; }
  int dim() const noexcept { return system_.dim(); }

 private:
  ControlSystem system_;
  PureState initial_;
  PureState target_;
};

enum class GradientMethod { Analytic, FiniteDifference, ContinuousTime };

struct GradientReport {
  double value = 0.0;
  RVector gradient;
  GradientMethod method = GradientMethod::Analytic;
};

/// |⟨ψ_g| U_T |φ⟩|².
inline double fidelity(const StatePreparationProblem& problem, const Trajectory& traj) {
  const Complex overlap = problem.target().amplitudes().dot(traj.endpoint().matrix() * problem.initial().amplitudes());
  return std::norm(overlap);
}

inline double fidelity(const StatePreparationProblem& problem, const ControlField& field) {
  return fidelity(problem, propagate(problem.system(), field));
}

namespace detail {

struct Sweep {
  std::vector<CVector> forward;   // ψ_k = U_{kΔt} φ, k = 0..N
  std::vector<CVector> backward;  // χ_k = U_{k+1}^† ... U_N^† ψ_g, k = 0..N
  Complex overlap;                // ⟨ψ_g| U_T |φ⟩
};

inline Sweep sweep(const StatePreparationProblem& problem, const Trajectory& traj) {
  const int n = traj.n_steps();
  Sweep s;
  s.forward.resize(static_cast<std::size_t>(n) + 1);
  s.backward.resize(static_cast<std::size_t>(n) + 1);
  s.forward[0] = problem.initial().amplitudes();
  for (int k = 1; k <= n; ++k) {
    s.forward[static_cast<std::size_t>(k)] = traj.step(k).matrix() * s.forward[static_cast<std::size_t>(k - 1)];
  }
  s.backward[static_cast<std::size_t>(n)] = problem.target().amplitudes();
  for (int k = n; k >= 1; --k) {
    s.backward[static_cast<std::size_t>(k - 1)] = traj.step(k).matrix().adjoint() * s.backward[static_cast<std::size_t>(k)];
  }
  s.overlap = s.backward[static_cast<std::size_t>(n)].dot(s.forward[static_cast<std::size_t>(n)]);
  return s;
}

}  // namespace detail

/// Exact ∂J/∂f_j of the discrete propagator U_T = U_N ... U_1: the step
/// derivative is inserted into the chain, so there is no O(Δt) bias.
inline GradientReport analytic_gradient(const StatePreparationProblem& problem, const ControlField& field) {
  const auto traj = propagate(problem.system(), field);
  const auto s = detail::sweep(problem, traj);
  const int n = field.n_steps();
  GradientReport out;
  out.value = std::norm(s.overlap);
  out.gradient.resize(n);
  const auto& hc = problem.system().control();
  for (int j = 1; j <= n; ++j) {
    const CMatrix dstep = expm_directional_derivative(problem.system().hamiltonian(field[j - 1]), hc, field.dt());
    const Complex b = s.backward[static_cast<std::size_t>(j)].dot(dstep * s.forward[static_cast<std::size_t>(j - 1)]);
    out.gradient(j - 1) = 2.0 * (std::conj(s.overlap) * b).real();
  }
  out.method = GradientMethod::Analytic;
  return out;
}

/// Continuous-time functional derivative
/// 2 Im[⟨ψ_g|U_T U_t^† H_c U_t|ψ0⟩⟨ψ0|U_T^†|ψ_g⟩] at the left grid point of
/// each interval, scaled by Δt. First-order accurate in Δt.
inline GradientReport continuous_gradient(const StatePreparationProblem& problem, const ControlField& field) {
  const auto traj = propagate(problem.system(), field);
  const auto s = detail::sweep(problem, traj);
  const int n = field.n_steps();
  const CMatrix& hc = problem.system().control().matrix();
  GradientReport out;
  out.value = std::norm(s.overlap);
  out.gradient.resize(n);
  for (int j = 1; j <= n; ++j) {
    const auto k = static_cast<std::size_t>(j - 1);
    const Complex term = s.backward[k].dot(hc * s.forward[k]) * std::conj(s.overlap);
    out.gradient(j - 1) = field.dt() * 2.0 * term.imag();
  }
  out.method = GradientMethod::ContinuousTime;
  return out;
}

inline GradientReport finite_difference_gradient(const StatePreparationProblem& problem, const ControlField& field,
                                                 double step = 1e-6) {
  if (!(step > 0.0)) throw Error(ErrorKind::InvalidArgument, "finite-difference step must be positive");
  GradientReport out;
  out.value = fidelity(problem, field);
  out.gradient.resize(field.n_steps());
  RVector f = field.amplitudes();
  for (int j = 0; j < field.n_steps(); ++j) {
    const double f0 = f(j);
    f(j) = f0 + step;
    const double up = fidelity(problem, ControlField(f, field.dt()));
    f(j) = f0 - step;
    const double down = fidelity(problem, ControlField(f, field.dt()));
    f(j) = f0;
    out.gradient(j) = (up - down) / (2.0 * step);
  }
  out.method = GradientMethod::FiniteDifference;
  return out;
}

// ---------------------------------------------------------------------------
// Gradient ascent

enum class StepAdaptation { Fixed, DoublingHalving };
enum class GradientSource { ModelAnalytic, ModelFiniteDifference, Measured };

struct OptimizerConfig {
  double alpha = 1.0;
  StepAdaptation adaptation = StepAdaptation::DoublingHalving;
  int max_iters = 200;
  double threshold = 0.999;
  GradientSource gradient = GradientSource::ModelAnalytic;
  double fd_step = 1e-6;
  int max_halvings = 30;

  void validate() const {
    if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidArgument, "optimizer step alpha must be > 0");
    if (max_iters < 1) throw Error(ErrorKind::InvalidArgument, "optimizer max_iters must be >= 1");
    if (!(fd_step > 0.0)) throw Error(ErrorKind::InvalidArgument, "optimizer fd_step must be > 0");
    if (max_halvings < 0) throw Error(ErrorKind::InvalidArgument, "optimizer max_halvings must be >= 0");
  }
};

struct TraceEntry {
  int iteration = 0;
  double value = 0.0;
  double grad_norm = 0.0;
  /// Step size that produced this iterate (initial alpha for iteration 0).
  double alpha = 0.0;
};

enum class StopReason { Converged, MaxIterations, Stalled, SourceFailure };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::Converged: return "converged";
    case StopReason::MaxIterations: return "max-iterations";
    case StopReason::Stalled: return "stalled";
    case StopReason::SourceFailure: return "source-failure";
  }
  return "unknown";
}

struct AscentResult {
  std::vector<TraceEntry> trace;
  RVector field;
  StopReason stop = StopReason::MaxIterations;
  std::string failure;
};

/// Cost/gradient oracle for `ascend`. `begin_iteration` is called once per
/// iterate before its gradient is requested.
struct Objective {
  std::function<double(const RVector&)> value;
  std::function<RVector(const RVector&)> gradient;
  std::function<void(int)> begin_iteration;
};

/// Called after each iterate is recorded.
using AscentObserver = std::function<void(const TraceEntry&, const RVector& field, const RVector& gradient)>;

/// f ← f + α ∇J. With doubling-halving, a step is accepted only if it
/// increases J (clamped to [0,1]); α doubles after acceptance and halves on
/// each rejection, up to max_halvings retries.
inline AscentResult ascend(const Objective& objective, RVector f, const OptimizerConfig& config,
                           const AscentObserver& observe = {}, bool graceful_failures = false) {
  config.validate();
  AscentResult result;
  int iteration = 0;
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };

  try {
    auto guarded = [&](auto&& fn) -> decltype(auto) {
      try {
        return fn();
      } catch (const GradientSourceError&) {
        throw;
      } catch (const Error& e) {
        throw GradientSourceError(iteration, e.kind(), e.what());
      }
    };

    double alpha = config.alpha;
    double accepted_alpha = config.alpha;
    if (objective.begin_iteration) guarded([&] { objective.begin_iteration(0); });
    double value = guarded([&] { return objective.value(f); });

    for (;;) {
      const RVector grad = guarded([&] { return objective.gradient(f); });
      const TraceEntry entry{iteration, value, grad.norm(), accepted_alpha};
      result.trace.push_back(entry);
      if (observe) observe(entry, f, grad);

      if (value >= config.threshold) {
        result.stop = StopReason::Converged;
        break;
      }
      if (iteration >= config.max_iters) {
        result.stop = StopReason::MaxIterations;
        break;
      }

      if (config.adaptation == StepAdaptation::Fixed) {
        f += alpha * grad;
        accepted_alpha = alpha;
        value = guarded([&] { return objective.value(f); });
      } else {
        bool accepted = false;
        for (int attempt = 0; attempt <= config.max_halvings; ++attempt) {
          RVector trial = f + alpha * grad;
          const double trial_value = guarded([&] { return objective.value(trial); });
          if (clamp01(trial_value) > clamp01(value)) {
            f = std::move(trial);
            value = trial_value;
            accepted_alpha = alpha;
            alpha *= 2.0;
            accepted = true;
            break;
          }
          alpha *= 0.5;
        }
        if (!accepted) {
          result.stop = StopReason::Stalled;
          break;
        }
      }
      ++iteration;
      if (objective.begin_iteration) guarded([&] { objective.begin_iteration(iteration); });
    }
  } catch (const GradientSourceError& e) {
    if (!graceful_failures) throw;
    result.stop = StopReason::SourceFailure;
    result.failure = e.what();
  }
  result.field = std::move(f);
  return result;
}

inline Objective model_objective(const StatePreparationProblem& problem, double dt, const OptimizerConfig& config) {
  Objective obj;
  obj.value = [&problem, dt](const RVector& f) { return fidelity(problem, ControlField(f, dt)); };
  switch (config.gradient) {
    case GradientSource::ModelAnalytic:
      obj.gradient = [&problem, dt](const RVector& f) { return analytic_gradient(problem, ControlField(f, dt)).gradient; };
      break;
    case GradientSource::ModelFiniteDifference: {
      const double step = config.fd_step;
      obj.gradient = [&problem, dt, step](const RVector& f) {
        return finite_difference_gradient(problem, ControlField(f, dt), step).gradient;
      };
      break;
    }
    case GradientSource::Measured:
      throw Error(ErrorKind::InvalidArgument, "measured gradients are provided by the learning loop");
  }
  return obj;
}

inline AscentResult gradient_ascent(const StatePreparationProblem& problem, const ControlField& field0,
                                    const OptimizerConfig& config) {
  const auto obj = model_objective(problem, field0.dt(), config);
  return ascend(obj, field0.amplitudes(), config);
}

// ---------------------------------------------------------------------------
// Singular controls

inline constexpr double kSingularRelTol = 1e-8;

struct SingularityReport {
  double smallest_singular_value = 0.0;
  double largest_singular_value = 0.0;
  bool is_singular = false;
  /// Σ v_m B_m, unit HS norm; set when singular.
  std::optional<HermitianMatrix> null_direction;
  RVector null_coefficients;
  /// max_k |⟨v, U_{t_k}^† H_c U_{t_k}⟩| over the grid.
  double max_overlap = 0.0;
  int grid_points = 0;
  /// Set when N+1 < d²-1: the grid can certify singularity but never rule it out.
  std::optional<std::string> warning;
};

/// Rows ⟨B_m, U_{t_k}^† H_c U_{t_k}⟩ for every grid time k = 0..N.
inline RMatrix orbit_matrix(const Trajectory& traj, const OperatorBasis& basis) {
  const int n = traj.n_steps();
  RMatrix r(n + 1, basis.size());
  for (int k = 0; k <= n; ++k) {
    r.row(k) = basis.coefficients(conjugated(traj.prefix(k), traj.system().control()).matrix()).transpose();
  }
  return r;
}

inline SingularityReport detect_singular_control(const ControlSystem& system, const ControlField& field,
                                                 const OperatorBasis& basis) {
  detail::require_same_dim(basis.dim(), system.dim(), "singularity basis");
  const auto traj = propagate(system, field);
  const RMatrix r = orbit_matrix(traj, basis);
  const auto sv = detail::singular_summary(r, true);

  SingularityReport rep;
  rep.smallest_singular_value = sv.s_min;
  rep.largest_singular_value = sv.s_max;
  rep.grid_points = static_cast<int>(r.rows());
  rep.is_singular = sv.s_min <= kSingularRelTol * sv.s_max;
  if (r.rows() < r.cols()) {
    rep.warning = "insufficient grid: " + std::to_string(r.rows()) + " grid times < d^2-1 = " +
                  std::to_string(r.cols()) + "; singularity is implied by rank, completeness cannot be certified";
  }
  if (rep.is_singular) {
    RVector v = sv.min_right_vector;
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0.0) v = -v;
    rep.null_direction = HermitianMatrix::hermitian_part(basis.resum(v));
    rep.max_overlap = (r * v).cwiseAbs().maxCoeff();
    rep.null_coefficients = std::move(v);
  }
  return rep;
}

}  // namespace qlandscape
