#pragma once

// Monte Carlo experiments for the Haar moments of measurement-map entries,
// the smallest-singular-value scaling of random maps, the gradient tail
// bound over Haar-random targets, landscape flattening, and noise
// sensitivity of reconstruction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qlandscape/landscape.hpp"
#include "qlandscape/presets.hpp"
#include "qlandscape/tomography.hpp"

namespace qlandscape {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index must
/// write only to its own slot so results do not depend on scheduling.
template <class Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&fn, n, w, workers] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Linear-interpolated quantile of a copy of `values` (q in [0,1]).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

struct Quantiles {
  double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;

  static Quantiles of(const std::vector<double>& v) {
    return {quantile(v, 0.05), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 0.95)};
  }
};

/// Row ⟨B_m, U^† M U⟩ for a Haar-random U.
inline RVector haar_row(const HermitianMatrix& m, const OperatorBasis& basis, RandomStream& rng) {
  const auto u = haar_unitary(m.dim(), rng);
  return basis.coefficients(conjugated(u, m).matrix());
}

// ---------------------------------------------------------------------------
// Moments of M_{n,m} under Haar conjugation

struct MomentsResult {
  int d = 0;
  int n_samples = 0;
  RVector mean;
  RVector variance;
  RVector mean_stderr;
  /// E[M_{n,m} M_{n',m'}] for rows from independent unitaries (n ≠ n').
  RMatrix cross_correlation;
  RMatrix cross_stderr;
  /// E[M_{n,m} M_{n,m'}] within one row.
  RMatrix row_correlation;
  /// Tr{M²}/(d²-1).
  double predicted_variance = 0.0;
  /// Mean entry variance after rescaling by 1/σ (gives 1/σ) and by 1/√σ (gives 1).
  double rescaled_variance_inv_sigma = 0.0;
  double rescaled_variance_inv_sqrt_sigma = 0.0;
};

inline MomentsResult run_moments_experiment(int d, const HermitianMatrix& m, int n_samples, RandomStream& rng,
                                            int workers = 1) {
  if (n_samples < 1000) throw Error(ErrorKind::InvalidArgument, "moments experiment needs n_samples >= 1000");
  detail::require_same_dim(m.dim(), d, "moments observable");
  if (!m.is_traceless()) throw Error(ErrorKind::InvalidArgument, "moments experiment needs a traceless observable");
  const auto basis = gell_mann_basis(d);
  const int n = basis.size();

  RMatrix rows(n, n_samples);
  parallel_for(n_samples, workers, [&](int s) {
    auto sub = rng.substream(static_cast<std::uint64_t>(s));
    rows.col(s) = haar_row(m, basis, sub);
  });

  MomentsResult r;
  r.d = d;
  r.n_samples = n_samples;
  r.mean = rows.rowwise().mean();
  const RMatrix centered = rows.colwise() - r.mean;
  r.variance = centered.rowwise().squaredNorm() / static_cast<double>(n_samples - 1);
  r.mean_stderr = (r.variance / static_cast<double>(n_samples)).cwiseSqrt();
  r.row_correlation = rows * rows.transpose() / static_cast<double>(n_samples);

  const int pairs = n_samples / 2;
  r.cross_correlation = RMatrix::Zero(n, n);
  RMatrix second = RMatrix::Zero(n, n);
  for (int p = 0; p < pairs; ++p) {
    const RMatrix prod = rows.col(2 * p) * rows.col(2 * p + 1).transpose();
    r.cross_correlation += prod;
    second += prod.cwiseProduct(prod);
  }
  r.cross_correlation /= pairs;
  second /= pairs;
  const RMatrix var_prod = (second - r.cross_correlation.cwiseProduct(r.cross_correlation)) *
                           (static_cast<double>(pairs) / (pairs - 1));
  r.cross_stderr = (var_prod / static_cast<double>(pairs)).cwiseSqrt();

  const double tr_m2 = (m.matrix() * m.matrix()).trace().real();
  r.predicted_variance = tr_m2 / n;
  const double sigma = r.predicted_variance;
  r.rescaled_variance_inv_sigma = r.variance.mean() / (sigma * sigma);
  r.rescaled_variance_inv_sqrt_sigma = r.variance.mean() / sigma;
  return r;
}

// ---------------------------------------------------------------------------
// Smallest singular value of random maps

struct RowSource {
  enum class Kind { IdealHaar, RandomField };
  Kind kind = Kind::IdealHaar;
  /// Used for RandomField: rows sampled every `steps_per_segment` steps of
  /// a random field with grid step dt.
  ControlSystem system;
  RandomFieldSpec field;
  double dt = 0.1;

  static RowSource ideal_haar() { return {}; }
  static RowSource random_field(ControlSystem system, RandomFieldSpec spec, double dt) {
    return {Kind::RandomField, std::move(system), spec, dt};
  }
};

struct Eq4Trial {
  double s_min = 0.0;
  double inv_norm = 0.0;
  /// s_min (d²-1)^{3/2} / |Tr{M²}|; NaN for singular trials.
  double l_hat = std::numeric_limits<double>::quiet_NaN();
  bool singular = false;
};

struct Eq4Result {
  int d = 0;
  int n_trials = 0;
  double tr_m2 = 0.0;
  std::vector<Eq4Trial> trials;
  int singular_trials = 0;
  Quantiles l_hat;
  Quantiles s_min;
  double l_hat_max = 0.0;
};

/// L̂ = 1 / (‖M⁻¹‖ |Tr{M²}| / (d²-1)^{3/2}); every trial satisfies the
/// lower bound on ‖M⁻¹‖ with L = max L̂.
inline double empirical_constant(double s_min, int d, double tr_m2) {
  const double n = static_cast<double>(d) * d - 1.0;
  return s_min * std::pow(n, 1.5) / std::abs(tr_m2);
}

inline RMatrix random_map(const HermitianMatrix& m, const RowSource& source, const OperatorBasis& basis,
                          RandomStream& rng) {
  const int n = basis.size();
  RMatrix map(n, n);
  if (source.kind == RowSource::Kind::IdealHaar) {
    for (int r = 0; r < n; ++r) map.row(r) = haar_row(m, basis, rng).transpose();
  } else {
    const int s = source.field.steps_per_segment;
    const auto field = ControlField::random(n * s, source.dt, source.field.amplitude_scale, rng);
    const auto traj = propagate(source.system.with_observable(m), field);
    map = build_measurement_map(traj, SampleSchedule::multiples(s, n), basis).matrix();
  }
  return map;
}

inline Eq4Result run_eq4_experiment(int d, const HermitianMatrix& m, int n_trials, const RowSource& source,
                                    RandomStream& rng, int workers = 1) {
  if (n_trials < 100) throw Error(ErrorKind::InvalidArgument, "eq4 experiment needs n_trials >= 100");
  detail::require_same_dim(m.dim(), d, "eq4 observable");
  if (source.kind == RowSource::Kind::RandomField) detail::require_same_dim(source.system.dim(), d, "eq4 system");
  const auto basis = gell_mann_basis(d);
  const int n = basis.size();
  Eq4Result res;
  res.d = d;
  res.n_trials = n_trials;
  res.tr_m2 = (m.matrix() * m.matrix()).trace().real();
  res.trials.resize(static_cast<std::size_t>(n_trials));

  parallel_for(n_trials, workers, [&](int t) {
    auto sub = rng.substream(static_cast<std::uint64_t>(t));
    const RMatrix map = random_map(m, source, basis, sub);
    const auto sv = detail::singular_summary(map);
    Eq4Trial& trial = res.trials[static_cast<std::size_t>(t)];
    trial.s_min = sv.s_min;
    trial.singular = !(sv.s_min > n * std::numeric_limits<double>::epsilon() * sv.s_max);
    trial.inv_norm = trial.singular ? std::numeric_limits<double>::infinity() : 1.0 / sv.s_min;
    if (!trial.singular) trial.l_hat = empirical_constant(sv.s_min, d, res.tr_m2);
  });

  std::vector<double> l_hats;
  std::vector<double> s_mins;
  for (const auto& t : res.trials) {
    s_mins.push_back(t.s_min);
    if (t.singular) {
      ++res.singular_trials;
    } else {
      l_hats.push_back(t.l_hat);
    }
  }
  res.l_hat = Quantiles::of(l_hats);
  res.s_min = Quantiles::of(s_mins);
  res.l_hat_max = l_hats.empty() ? 0.0 : *std::max_element(l_hats.begin(), l_hats.end());
  return res;
}

// ---------------------------------------------------------------------------
// Gradient tail over Haar-random targets

/// Bound 2 exp(-κ² d / (81 π³ E_max²)).
inline double eq5_bound(double kappa, int d, double e_max) {
  constexpr double pi = std::numbers::pi;
  return 2.0 * std::exp(-kappa * kappa * d / (81.0 * pi * pi * pi * e_max * e_max));
}

/// Variant from Levy's lemma with N = 2d, λ = 4 E_max:
/// 2 exp(-κ² d / (72 π² E_max²)).
inline double eq5_bound_levy(double kappa, int d, double e_max) {
  constexpr double pi = std::numbers::pi;
  return 2.0 * std::exp(-kappa * kappa * d / (72.0 * pi * pi * e_max * e_max));
}

/// 20 log-spaced points in [0.01 E_max, 2 E_max].
inline std::vector<double> default_kappa_grid(double e_max, int points = 20) {
  std::vector<double> grid(static_cast<std::size_t>(points));
  const double lo = std::log(0.01 * e_max);
  const double hi = std::log(2.0 * e_max);
  for (int k = 0; k < points; ++k) {
    grid[static_cast<std::size_t>(k)] = std::exp(lo + (hi - lo) * k / (points - 1));
  }
  return grid;
}

struct TailPoint {
  double kappa = 0.0;
  double empirical = 0.0;
  double bound = 0.0;
  double bound_levy = 0.0;
  /// bound + 3 sqrt(bound (1 - bound) / n); unbounded when bound >= 1.
  double band = 0.0;
  bool trivially_satisfied = false;
  bool satisfied = false;
};

struct Eq5Result {
  int d = 0;
  double e_max = 0.0;
  int n_samples = 0;
  int t_index = 0;
  std::vector<double> samples;
  double mean = 0.0;
  double stderr_mean = 0.0;
  double max_abs = 0.0;
  double median_abs = 0.0;
  std::vector<TailPoint> tail;
};

/// Precomputed vectors for h(ψ_g) = 2 Im[⟨ψ_g|a⟩⟨b|ψ_g⟩] with
/// a = U_T U_t^† H_c U_t ψ0 and b = U_T ψ0.
struct GradientIntegrand {
  CVector a;
  CVector b;

  GradientIntegrand(const Trajectory& traj, int t_index, const PureState& psi0) {
    const CMatrix& ut = traj.prefix(t_index).matrix();
    const CMatrix& ute = traj.endpoint().matrix();
    a = ute * (ut.adjoint() * (traj.system().control().matrix() * (ut * psi0.amplitudes())));
    b = ute * psi0.amplitudes();
  }

  double operator()(const CVector& target) const {
    return 2.0 * (target.dot(a) * b.dot(target)).imag();
  }
};

inline Eq5Result run_eq5_experiment(const ControlSystem& system, const ControlField& field, int t_index,
                                    int n_samples, const std::vector<double>& kappa_grid, RandomStream& rng,
                                    const PureState& psi0, int workers = 1) {
  if (n_samples < 1000) throw Error(ErrorKind::InvalidArgument, "eq5 experiment needs n_samples >= 1000");
  for (std::size_t k = 0; k < kappa_grid.size(); ++k) {
    if (!(kappa_grid[k] > 0.0) || (k > 0 && !(kappa_grid[k] > kappa_grid[k - 1]))) {
      throw Error(ErrorKind::InvalidArgument, "kappa grid must be positive and ascending");
    }
  }
  const int d = system.dim();
  const auto traj = propagate(system, field);
  const GradientIntegrand h(traj, t_index, psi0);

  Eq5Result res;
  res.d = d;
  res.e_max = system.control().spectral_norm();
  res.n_samples = n_samples;
  res.t_index = t_index;
  res.samples.resize(static_cast<std::size_t>(n_samples));
  parallel_for(n_samples, workers, [&](int s) {
    auto sub = rng.substream(static_cast<std::uint64_t>(s));
    res.samples[static_cast<std::size_t>(s)] = h(haar_state(d, sub).amplitudes());
  });

  std::vector<double> abs_g(res.samples.size());
  double sum = 0.0;
  for (std::size_t s = 0; s < res.samples.size(); ++s) {
    sum += res.samples[s];
    abs_g[s] = std::abs(res.samples[s]);
  }
  res.mean = sum / n_samples;
  double ss = 0.0;
  for (double g : res.samples) ss += (g - res.mean) * (g - res.mean);
  res.stderr_mean = std::sqrt(ss / (n_samples - 1) / n_samples);
  res.max_abs = *std::max_element(abs_g.begin(), abs_g.end());
  res.median_abs = median(abs_g);

  for (double kappa : kappa_grid) {
    TailPoint p;
    p.kappa = kappa;
    p.empirical = static_cast<double>(std::count_if(abs_g.begin(), abs_g.end(), [kappa](double g) { return g > kappa; })) /
                  n_samples;
    p.bound = eq5_bound(kappa, d, res.e_max);
    p.bound_levy = eq5_bound_levy(kappa, d, res.e_max);
    p.trivially_satisfied = p.bound >= 1.0;
    p.band = p.trivially_satisfied ? std::numeric_limits<double>::infinity()
                                   : p.bound + 3.0 * std::sqrt(p.bound * (1.0 - p.bound) / n_samples);
    p.satisfied = p.trivially_satisfied || p.empirical <= p.band;
    res.tail.push_back(p);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Landscape flattening

struct FlatteningRow {
  int qubits = 0;
  int d = 0;
  double e_max = 0.0;
  double median_abs = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double max_abs = 0.0;
  /// median at the first qubit count scaled by sqrt(d_first / d).
  double inv_sqrt_d_reference = 0.0;
};

struct FlatteningOptions {
  int n_steps = 20;
  double dt = 0.25;
  double amplitude_scale = 1.0;
};

/// For each qubit count: a random-gue system, a random field, and Haar
/// targets; gradient integrand at the middle of the field.
inline std::vector<FlatteningRow> run_flattening_experiment(const std::vector<int>& qubit_counts, int n_samples,
                                                            RandomStream& rng, const FlatteningOptions& opt = {},
                                                            int workers = 1) {
  if (n_samples < 1) throw Error(ErrorKind::InvalidArgument, "flattening needs n_samples >= 1");
  std::vector<FlatteningRow> rows;
  for (int q : qubit_counts) {
    if (q < 1 || q > 7) throw Error(ErrorKind::InvalidArgument, "flattening qubit counts must lie in 1..7");
    const int d = 1 << q;
    auto sub = rng.substream(static_cast<std::uint64_t>(q));
    auto sys_rng = sub.substream(0);
    auto field_rng = sub.substream(1);
    auto sample_rng = sub.substream(2);
    const auto system = random_gue_preset(d, sys_rng.next_u64());
    const auto field = ControlField::random(opt.n_steps, opt.dt, opt.amplitude_scale, field_rng);
    const auto traj = propagate(system, field);
    const GradientIntegrand h(traj, opt.n_steps / 2, PureState::basis(d, 0));
    std::vector<double> g(static_cast<std::size_t>(n_samples));
    parallel_for(n_samples, workers, [&](int s) {
      auto ss = sample_rng.substream(static_cast<std::uint64_t>(s));
      g[static_cast<std::size_t>(s)] = std::abs(h(haar_state(d, ss).amplitudes()));
    });
    FlatteningRow row;
    row.qubits = q;
    row.d = d;
    row.e_max = system.control().spectral_norm();
    row.median_abs = quantile(g, 0.5);
    row.q25 = quantile(g, 0.25);
    row.q75 = quantile(g, 0.75);
    row.max_abs = *std::max_element(g.begin(), g.end());
    rows.push_back(row);
  }
  if (!rows.empty()) {
    for (auto& r : rows) r.inv_sqrt_d_reference = rows.front().median_abs * std::sqrt(double(rows.front().d) / r.d);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Noise sensitivity of reconstruction

struct NoiseSensitivityRow {
  int d = 0;
  double sigma_noise = 0.0;
  double mean_error = 0.0;
  Quantiles error;
  double median_l_hat = 0.0;
  /// σ (d²-1)^{3/2} / (median L̂ |Tr{M²}|).
  double bound_curve = 0.0;
};

/// Ideal-haar maps with M = diag(1,-1,0,...), gaussian ε, error ‖M⁻¹ε‖.
inline std::vector<NoiseSensitivityRow> run_noise_sensitivity_experiment(const std::vector<int>& dims,
                                                                         double sigma_noise, int n_trials,
                                                                         RandomStream& rng, int workers = 1) {
  if (!(sigma_noise > 0.0)) throw Error(ErrorKind::InvalidArgument, "noise sensitivity needs sigma_noise > 0");
  if (n_trials < 1) throw Error(ErrorKind::InvalidArgument, "noise sensitivity needs n_trials >= 1");
  std::vector<NoiseSensitivityRow> rows;
  for (int d : dims) {
    const auto m = sigma_z_type(d);
    const auto basis = gell_mann_basis(d);
    const int n = basis.size();
    const double tr_m2 = 2.0;
    auto sub = rng.substream(static_cast<std::uint64_t>(d));
    std::vector<double> errors(static_cast<std::size_t>(n_trials));
    std::vector<double> l_hats(static_cast<std::size_t>(n_trials));
    parallel_for(n_trials, workers, [&](int t) {
      auto tr = sub.substream(static_cast<std::uint64_t>(t));
      const RMatrix map = random_map(m, RowSource::ideal_haar(), basis, tr);
      RVector eps(n);
      for (int k = 0; k < n; ++k) eps(k) = sigma_noise * tr.normal();
      const RVector delta = Eigen::FullPivLU<RMatrix>(map).solve(eps);
      errors[static_cast<std::size_t>(t)] = delta.norm();
      l_hats[static_cast<std::size_t>(t)] = empirical_constant(detail::singular_summary(map).s_min, d, tr_m2);
    });
    NoiseSensitivityRow row;
    row.d = d;
    row.sigma_noise = sigma_noise;
    double sum = 0.0;
    for (double e : errors) sum += e;
    row.mean_error = sum / n_trials;
    row.error = Quantiles::of(errors);
    row.median_l_hat = median(l_hats);
    row.bound_curve = sigma_noise * std::pow(double(n), 1.5) / (row.median_l_hat * tr_m2);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace qlandscape
