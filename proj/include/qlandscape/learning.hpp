#pragma once

// Measurement-driven learning control: the state prepared by the control
// field is followed by a random probe field, the time trace of a single
// observable is recorded, the state is reconstructed, and J and ∇J are
// estimated from reconstructed quantities only.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qlandscape/landscape.hpp"
#include "qlandscape/tomography.hpp"

namespace qlandscape {

struct LearningProtocol {
  StatePreparationProblem problem;
  /// Grid step shared by control and probe segments.
  double dt = 0.1;
  /// Number of control amplitudes N_c.
  int control_steps = 0;
  /// Probe amplitudes and Haar time T* = steps_per_segment * dt.
  RandomFieldSpec probe;
  /// Schedule length K (samples at multiples of T*); 0 means d²-1.
  int samples = 0;
  NoiseModel noise;
  double fd_step = 1e-5;
  bool probe_reuse = true;
  /// Direct inverse when K = d²-1, otherwise least squares with this ridge.
  double ridge = 0.0;
  int max_probe_redraws = 5;

  int schedule_length() const {
    const int n = problem.dim() * problem.dim() - 1;
    return samples == 0 ? n : samples;
  }

  void validate() const {
    const int n = problem.dim() * problem.dim() - 1;
    if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning protocol needs dt > 0");
    if (control_steps < 0) throw Error(ErrorKind::InvalidArgument, "learning protocol needs control_steps >= 0");
    if (!(fd_step > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning protocol needs fd_step > 0");
    if (probe.steps_per_segment < 1) throw Error(ErrorKind::InvalidArgument, "probe segment must span >= 1 grid step");
    if (schedule_length() < n) throw Error(ErrorKind::InvalidArgument, "schedule length must be >= d^2-1");
    if (max_probe_redraws < 0) throw Error(ErrorKind::InvalidArgument, "max_probe_redraws must be >= 0");
  }
};

/// A drawn probe field together with its model propagators and map.
struct Probe {
  ControlField field;
  Trajectory trajectory;
  SampleSchedule schedule;
  MeasurementMap map;
  std::uint64_t seed = 0;
  int redraws = 0;
};

inline constexpr double kProbeRelTol = 1e-8;

inline Probe draw_probe(const LearningProtocol& protocol, RandomStream& rng) {
  const auto& system = protocol.problem.system();
  const auto basis = gell_mann_basis(system.dim());
  const int k = protocol.schedule_length();
  const int s = protocol.probe.steps_per_segment;
  const auto schedule = SampleSchedule::multiples(s, k);
  double last_s_min = 0.0;
  for (int attempt = 0; attempt <= protocol.max_probe_redraws; ++attempt) {
    auto sub = rng.substream(static_cast<std::uint64_t>(attempt));
    auto field = ControlField::random(k * s, protocol.dt, protocol.probe.amplitude_scale, sub);
    auto traj = propagate(system, field);
    auto map = build_measurement_map(traj, schedule, basis);
    if (map.is_informationally_complete(kProbeRelTol)) {
      return Probe{std::move(field), std::move(traj), schedule, std::move(map), sub.key(), attempt};
    }
    last_s_min = map.smallest_singular_value();
  }
  throw Error(ErrorKind::ProbeFailure, "probe map singular after " + std::to_string(protocol.max_probe_redraws) +
                                           " redraws (last s_min=" + std::to_string(last_s_min) + ")");
}

struct FidelityMeasurement {
  double j_est = 0.0;
  BlochVector x_est;
  MeasurementRecord record;
  double s_min = 0.0;
  std::uint64_t probe_seed = 0;
};

/// Coefficients c_m = ⟨ψ_g|B_m|ψ_g⟩ so that ⟨ψ_g|ρ|ψ_g⟩ = 1/d + c·x_ρ.
inline RVector target_coefficients(const PureState& target, const OperatorBasis& basis) {
  return basis.coefficients(target.projector());
}

/// State operator the device holds at the end of the control segment.
inline HermitianMatrix prepared_state(const LearningProtocol& protocol, const RVector& amplitudes) {
  const auto& problem = protocol.problem;
  detail::require_same_dim(amplitudes.size(), protocol.control_steps, "control amplitudes");
  if (amplitudes.size() == 0) return HermitianMatrix::hermitian_part(problem.initial().projector());
  const auto traj = propagate(problem.system(), ControlField(amplitudes, protocol.dt));
  const CVector psi = traj.endpoint().matrix() * problem.initial().amplitudes();
  return HermitianMatrix::hermitian_part(psi * psi.adjoint());
}

/// Records ⟨M⟩ along the probe for the given state and reconstructs it.
inline FidelityMeasurement measure_state(const LearningProtocol& protocol, const Probe& probe,
                                         const HermitianMatrix& rho, RandomStream& rng) {
  const auto basis = gell_mann_basis(protocol.problem.dim());
  FidelityMeasurement out;
  out.record = simulate_record(probe.trajectory, probe.schedule, rho, protocol.noise, rng);
  const auto method = probe.map.rows() == probe.map.cols() ? ReconstructionMethod::direct_inverse()
                                                           : ReconstructionMethod::least_squares(protocol.ridge);
  out.x_est = reconstruct(probe.map, out.record, method);
  const RVector c = target_coefficients(protocol.problem.target(), basis);
  out.j_est = 1.0 / protocol.problem.dim() + c.dot(out.x_est.coeffs());
  out.s_min = probe.map.smallest_singular_value();
  out.probe_seed = probe.seed;
  return out;
}

inline FidelityMeasurement measure_fidelity(const LearningProtocol& protocol, const RVector& amplitudes,
                                            const Probe& probe, RandomStream& rng) {
  return measure_state(protocol, probe, prepared_state(protocol, amplitudes), rng);
}

/// Draws a probe from substream 0 and the measurement noise from substream 1.
inline FidelityMeasurement measure_fidelity(const LearningProtocol& protocol, const RVector& amplitudes,
                                            RandomStream& rng) {
  protocol.validate();
  auto probe_rng = rng.substream(0);
  auto noise_rng = rng.substream(1);
  const auto probe = draw_probe(protocol, probe_rng);
  return measure_fidelity(protocol, amplitudes, probe, noise_rng);
}

/// Central differences of J_est. With probe reuse every evaluation uses
/// `probe`; otherwise each evaluation draws its own. Noise for evaluation
/// e comes from rng.substream(e).
inline RVector measured_gradient(const LearningProtocol& protocol, const RVector& amplitudes, const Probe& probe,
                                 RandomStream& rng) {
  const int n = protocol.control_steps;
  detail::require_same_dim(amplitudes.size(), n, "control amplitudes");
  RVector grad(n);
  RVector f = amplitudes;
  auto evaluate = [&](std::uint64_t e) {
    auto sub = rng.substream(e);
    if (protocol.probe_reuse) return measure_fidelity(protocol, f, probe, sub).j_est;
    auto probe_rng = sub.substream(0);
    auto noise_rng = sub.substream(1);
    const auto own = draw_probe(protocol, probe_rng);
    return measure_fidelity(protocol, f, own, noise_rng).j_est;
  };
  for (int j = 0; j < n; ++j) {
    const double f0 = f(j);
    f(j) = f0 + protocol.fd_step;
    const double up = evaluate(2 * static_cast<std::uint64_t>(j));
    f(j) = f0 - protocol.fd_step;
    const double down = evaluate(2 * static_cast<std::uint64_t>(j) + 1);
    f(j) = f0;
    grad(j) = (up - down) / (2.0 * protocol.fd_step);
  }
  return grad;
}

inline RVector measured_gradient(const LearningProtocol& protocol, const RVector& amplitudes, RandomStream& rng) {
  protocol.validate();
  if (protocol.control_steps == 0) return RVector(0);
  auto probe_rng = rng.substream(0);
  auto eval_rng = rng.substream(1);
  const auto probe = draw_probe(protocol, probe_rng);
  return measured_gradient(protocol, amplitudes, probe, eval_rng);
}

struct LearningRecord {
  int iteration = 0;
  double j_est = 0.0;
  /// Simulator ground truth; NaN when diagnostics are disabled.
  double j_true = std::numeric_limits<double>::quiet_NaN();
  double recon_err = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  double alpha = 0.0;
  std::uint64_t probe_seed = 0;
};

struct LearningTrace {
  std::vector<LearningRecord> records;
  RVector field;
  StopReason stop = StopReason::MaxIterations;
  std::string failure;

  double final_true_fidelity() const { return records.empty() ? 0.0 : records.back().j_true; }
};

/// Gradient ascent driven by measured J and ∇J. A fresh probe is drawn per
/// iteration (per evaluation when probe reuse is off). Ground-truth columns
/// are computed after the fact from the simulator and never feed back into
/// the update.
inline LearningTrace run_learning_control(const LearningProtocol& protocol, const RVector& field0,
                                          OptimizerConfig config, RandomStream& rng,
                                          bool ground_truth_diagnostics = true) {
  protocol.validate();
  config.gradient = GradientSource::Measured;
  detail::require_same_dim(field0.size(), protocol.control_steps, "initial field");

  struct State {
    RandomStream iter_rng{0};
    std::optional<Probe> probe;
    std::uint64_t evaluations = 0;
    std::optional<FidelityMeasurement> last_value;
  } state;

  Objective obj;
  obj.begin_iteration = [&](int i) {
    state.iter_rng = rng.substream(static_cast<std::uint64_t>(i));
    state.evaluations = 0;
    if (protocol.probe_reuse) {
      auto probe_rng = state.iter_rng.substream(0);
      state.probe = draw_probe(protocol, probe_rng);
    }
  };
  obj.value = [&](const RVector& f) {
    auto eval_rng = state.iter_rng.substream(1).substream(state.evaluations++);
    if (protocol.probe_reuse) {
      auto noise_rng = eval_rng.substream(1);
      state.last_value = measure_fidelity(protocol, f, *state.probe, noise_rng);
    } else {
      auto probe_rng = eval_rng.substream(0);
      auto noise_rng = eval_rng.substream(1);
      const auto own = draw_probe(protocol, probe_rng);
      state.last_value = measure_fidelity(protocol, f, own, noise_rng);
    }
    return state.last_value->j_est;
  };
  obj.gradient = [&](const RVector& f) -> RVector {
    if (protocol.control_steps == 0) return RVector(0);
    auto grad_rng = state.iter_rng.substream(2);
    if (protocol.probe_reuse) return measured_gradient(protocol, f, *state.probe, grad_rng);
    auto probe_rng = grad_rng.substream(0);
    auto eval_rng = grad_rng.substream(1);
    const auto own = draw_probe(protocol, probe_rng);
    return measured_gradient(protocol, f, own, eval_rng);
  };

  LearningTrace trace;
  const auto basis = gell_mann_basis(protocol.problem.dim());
  const AscentObserver observe = [&](const TraceEntry& e, const RVector& f, const RVector&) {
    LearningRecord rec;
    rec.iteration = e.iteration;
    rec.j_est = e.value;
    rec.grad_norm = e.grad_norm;
    rec.alpha = e.alpha;
    rec.probe_seed = state.probe ? state.probe->seed : (state.last_value ? state.last_value->probe_seed : 0);
    if (ground_truth_diagnostics) {
      const auto rho = prepared_state(protocol, f);
      const BlochVector truth = BlochVector::of(rho.matrix(), basis);
      rec.j_true = protocol.problem.target().amplitudes().dot(rho.matrix() * protocol.problem.target().amplitudes()).real();
      if (state.last_value) rec.recon_err = reconstruction_error(truth, state.last_value->x_est);
    }
    trace.records.push_back(rec);
  };

  auto result = ascend(obj, field0, config, observe, true);
  trace.field = std::move(result.field);
  trace.stop = result.stop;
  trace.failure = std::move(result.failure);
  return trace;
}

}  // namespace qlandscape
