#pragma once

// Experiment front end: JSON configuration with dotted-key overrides,
// subcommand dispatch, deterministic seeding, and CSV/JSON artifacts with a
// checksummed run manifest.

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qlandscape/qlandscape.hpp"

namespace qlandscape::experiment {

using nlohmann::json;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"evolve",  "tomo",      "singular-check", "learn",
                                              "optimize", "moments",  "bound-eq4",      "bound-eq5",
                                              "flattening", "noise-sensitivity"};
  return names;
}

/// Configuration errors map to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SystemSpec {
  std::string preset = "qubit";
  int qubits = 2;
  double coupling = 1.0;
  double field = 1.0;
  double longitudinal = 0.5;
  int dim = 4;
  std::uint64_t preset_seed = 1;
  /// Each either null, a path to a matrix JSON file, or an inline matrix object.
  json drift;
  json control;
  json observable;
};

struct FieldSpec {
  /// 0: as many steps as the schedule needs (tomo) or 20.
  int n_steps = 0;
  double dt = 0.1;
  std::vector<double> amplitudes;
  double random_scale = 1.0;
};

struct NoiseSpec {
  std::string kind = "none";
  double sigma = 0.0;
  int shots = 1000;
};

struct ScheduleSpec {
  int spacing = 10;
  /// 0 means d²-1.
  int count = 0;
  std::vector<int> times;
};

struct OptimizerSpec {
  double alpha = 1.0;
  std::string adaptation = "doubling-halving";
  int max_iters = 200;
  double threshold = 0.999;
  std::string gradient = "model-analytic";
  double fd_step = 1e-6;
};

struct ExperimentSpec {
  int d = 2;
  int n_samples = 100000;
  int n_trials = 1000;
  std::vector<int> dims{2, 3, 4, 5};
  std::vector<int> qubit_counts{2, 3, 4, 5, 6};
  double sigma_noise = 0.01;
  int kappa_points = 20;
  /// -1: middle of the field.
  int t_index = -1;
  std::string row_source = "ideal-haar";
  std::string method = "direct-inverse";
  double ridge = 0.0;
  double delta_f = 1e-5;
  double probe_scale = 1.0;
  int probe_steps = 10;
  bool probe_reuse = true;
  int max_depth = 0;
};

struct ExperimentConfig {
  std::string subcommand;
  std::uint64_t seed = 1;
  std::string out = "runs";
  int workers = 1;
  SystemSpec system;
  FieldSpec field;
  NoiseSpec noise;
  ScheduleSpec schedule;
  OptimizerSpec optimizer;
  ExperimentSpec experiment;
};

// ---------------------------------------------------------------------------
// JSON <-> config

namespace detail {

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key) || obj.at(key).is_null()) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
  }
}

inline const json& section(const json& root, const char* key) {
  static const json empty = json::object();
  if (!root.contains(key)) return empty;
  const auto& s = root.at(key);
  if (!s.is_object()) throw ConfigError(std::string("config section \"") + key + "\" must be an object");
  return s;
}

inline void check_matrix_ref(const json& ref, const char* what) {
  if (ref.is_null() || ref.is_object()) return;
  if (!ref.is_string()) throw ConfigError(std::string("system.") + what + " must be a path or a matrix object");
  if (!std::filesystem::exists(ref.get<std::string>())) {
    throw ConfigError(std::string("system.") + what + ": file not found: " + ref.get<std::string>());
  }
}

inline void check_known_keys(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError("unknown config key: " + where + k);
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& root) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  detail::check_known_keys(root, {"subcommand", "seed", "out", "workers", "system", "field", "noise", "schedule",
                                  "optimizer", "experiment"},
                           "");
  ExperimentConfig c;
  detail::read(root, "subcommand", c.subcommand);
  if (root.contains("seed") && (!root.at("seed").is_number_integer() ||
                                 (!root.at("seed").is_number_unsigned() && root.at("seed").get<std::int64_t>() < 0))) {
    throw ConfigError("seed must be an unsigned 64-bit integer");
  }
  detail::read(root, "seed", c.seed);
  detail::read(root, "out", c.out);
  detail::read(root, "workers", c.workers);

  const auto& sys = detail::section(root, "system");
  detail::check_known_keys(sys, {"preset", "qubits", "coupling", "field", "longitudinal", "dim", "preset_seed", "drift", "control",
                                 "observable"},
                           "system.");
  detail::read(sys, "preset", c.system.preset);
  detail::read(sys, "qubits", c.system.qubits);
  detail::read(sys, "coupling", c.system.coupling);
  detail::read(sys, "field", c.system.field);
  detail::read(sys, "longitudinal", c.system.longitudinal);
  detail::read(sys, "dim", c.system.dim);
  detail::read(sys, "preset_seed", c.system.preset_seed);
  if (sys.contains("drift")) c.system.drift = sys.at("drift");
  if (sys.contains("control")) c.system.control = sys.at("control");
  if (sys.contains("observable")) c.system.observable = sys.at("observable");
  detail::check_matrix_ref(c.system.drift, "drift");
  detail::check_matrix_ref(c.system.control, "control");
  detail::check_matrix_ref(c.system.observable, "observable");

  const auto& fld = detail::section(root, "field");
  detail::check_known_keys(fld, {"n_steps", "dt", "amplitudes", "random_scale"}, "field.");
  detail::read(fld, "n_steps", c.field.n_steps);
  detail::read(fld, "dt", c.field.dt);
  detail::read(fld, "amplitudes", c.field.amplitudes);
  detail::read(fld, "random_scale", c.field.random_scale);

  const auto& noise = detail::section(root, "noise");
  detail::check_known_keys(noise, {"kind", "sigma", "shots"}, "noise.");
  detail::read(noise, "kind", c.noise.kind);
  detail::read(noise, "sigma", c.noise.sigma);
  detail::read(noise, "shots", c.noise.shots);

  const auto& sch = detail::section(root, "schedule");
  detail::check_known_keys(sch, {"spacing", "count", "times"}, "schedule.");
  detail::read(sch, "spacing", c.schedule.spacing);
  detail::read(sch, "count", c.schedule.count);
  detail::read(sch, "times", c.schedule.times);

  const auto& opt = detail::section(root, "optimizer");
  detail::check_known_keys(opt, {"alpha", "adaptation", "max_iters", "threshold", "gradient", "fd_step"},
                           "optimizer.");
  detail::read(opt, "alpha", c.optimizer.alpha);
  detail::read(opt, "adaptation", c.optimizer.adaptation);
  detail::read(opt, "max_iters", c.optimizer.max_iters);
  detail::read(opt, "threshold", c.optimizer.threshold);
  detail::read(opt, "gradient", c.optimizer.gradient);
  detail::read(opt, "fd_step", c.optimizer.fd_step);

  const auto& ex = detail::section(root, "experiment");
  detail::check_known_keys(ex, {"d", "n_samples", "n_trials", "dims", "qubit_counts", "sigma_noise", "kappa_points",
                                "t_index", "row_source", "method", "ridge", "delta_f", "probe_scale", "probe_steps",
                                "probe_reuse", "max_depth"},
                           "experiment.");
  auto& e = c.experiment;
  detail::read(ex, "d", e.d);
  detail::read(ex, "n_samples", e.n_samples);
  detail::read(ex, "n_trials", e.n_trials);
  detail::read(ex, "dims", e.dims);
  detail::read(ex, "qubit_counts", e.qubit_counts);
  detail::read(ex, "sigma_noise", e.sigma_noise);
  detail::read(ex, "kappa_points", e.kappa_points);
  detail::read(ex, "t_index", e.t_index);
  detail::read(ex, "row_source", e.row_source);
  detail::read(ex, "method", e.method);
  detail::read(ex, "ridge", e.ridge);
  detail::read(ex, "delta_f", e.delta_f);
  detail::read(ex, "probe_scale", e.probe_scale);
  detail::read(ex, "probe_steps", e.probe_steps);
  detail::read(ex, "probe_reuse", e.probe_reuse);
  detail::read(ex, "max_depth", e.max_depth);

  // Range checks.
  auto fail_if = [](bool bad, const std::string& what) {
    if (bad) throw ConfigError(what);
  };
  if (!c.subcommand.empty()) {
    bool known = false;
    for (const auto& s : subcommands()) known = known || s == c.subcommand;
    fail_if(!known, "unknown subcommand: " + c.subcommand);
  }
  fail_if(c.workers < 1, "workers must be >= 1");
  fail_if(c.field.n_steps < 0, "field.n_steps must be >= 0");
  fail_if(!(c.field.dt > 0.0), "field.dt must be > 0");
  fail_if(!(c.field.random_scale >= 0.0), "field.random_scale must be >= 0");
  fail_if(c.noise.kind != "none" && c.noise.kind != "gaussian" && c.noise.kind != "shot",
          "noise.kind must be none, gaussian or shot");
  fail_if(!(c.noise.sigma >= 0.0), "noise.sigma must be >= 0");
  fail_if(c.noise.shots < 1, "noise.shots must be >= 1");
  fail_if(c.schedule.spacing < 1, "schedule.spacing must be >= 1");
  fail_if(c.schedule.count < 0, "schedule.count must be >= 0");
  fail_if(!(c.optimizer.alpha > 0.0), "optimizer.alpha must be > 0");
  fail_if(c.optimizer.adaptation != "fixed" && c.optimizer.adaptation != "doubling-halving",
          "optimizer.adaptation must be fixed or doubling-halving");
  fail_if(c.optimizer.max_iters < 1, "optimizer.max_iters must be >= 1");
  fail_if(c.optimizer.gradient != "model-analytic" && c.optimizer.gradient != "model-finite-difference",
          "optimizer.gradient must be model-analytic or model-finite-difference");
  fail_if(!(c.optimizer.fd_step > 0.0), "optimizer.fd_step must be > 0");
  fail_if(e.d < 2, "experiment.d must be >= 2");
  fail_if(e.n_samples < 1, "experiment.n_samples must be >= 1");
  fail_if(e.n_trials < 1, "experiment.n_trials must be >= 1");
  fail_if(e.kappa_points < 2, "experiment.kappa_points must be >= 2");
  fail_if(e.row_source != "ideal-haar" && e.row_source != "random-field",
          "experiment.row_source must be ideal-haar or random-field");
  fail_if(e.method != "direct-inverse" && e.method != "least-squares",
          "experiment.method must be direct-inverse or least-squares");
  fail_if(!(e.ridge >= 0.0), "experiment.ridge must be >= 0");
  fail_if(!(e.delta_f > 0.0), "experiment.delta_f must be > 0");
  fail_if(e.probe_steps < 1, "experiment.probe_steps must be >= 1");
  fail_if(e.max_depth < 0, "experiment.max_depth must be >= 0");
  for (int d : e.dims) fail_if(d < 2, "experiment.dims entries must be >= 2");
  for (int q : e.qubit_counts) fail_if(q < 1 || q > 7, "experiment.qubit_counts entries must lie in 1..7");
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  const auto& e = c.experiment;
  return json{
      {"subcommand", c.subcommand},
      {"seed", c.seed},
      {"out", c.out},
      {"workers", c.workers},
      {"system",
       {{"preset", c.system.preset},
        {"qubits", c.system.qubits},
        {"coupling", c.system.coupling},
        {"field", c.system.field},
        {"longitudinal", c.system.longitudinal},
        {"dim", c.system.dim},
        {"preset_seed", c.system.preset_seed},
        {"drift", c.system.drift},
        {"control", c.system.control},
        {"observable", c.system.observable}}},
      {"field",
       {{"n_steps", c.field.n_steps},
        {"dt", c.field.dt},
        {"amplitudes", c.field.amplitudes},
        {"random_scale", c.field.random_scale}}},
      {"noise", {{"kind", c.noise.kind}, {"sigma", c.noise.sigma}, {"shots", c.noise.shots}}},
      {"schedule", {{"spacing", c.schedule.spacing}, {"count", c.schedule.count}, {"times", c.schedule.times}}},
      {"optimizer",
       {{"alpha", c.optimizer.alpha},
        {"adaptation", c.optimizer.adaptation},
        {"max_iters", c.optimizer.max_iters},
        {"threshold", c.optimizer.threshold},
        {"gradient", c.optimizer.gradient},
        {"fd_step", c.optimizer.fd_step}}},
      {"experiment",
       {{"d", e.d},
        {"n_samples", e.n_samples},
        {"n_trials", e.n_trials},
        {"dims", e.dims},
        {"qubit_counts", e.qubit_counts},
        {"sigma_noise", e.sigma_noise},
        {"kappa_points", e.kappa_points},
        {"t_index", e.t_index},
        {"row_source", e.row_source},
        {"method", e.method},
        {"ridge", e.ridge},
        {"delta_f", e.delta_f},
        {"probe_scale", e.probe_scale},
        {"probe_steps", e.probe_steps},
        {"probe_reuse", e.probe_reuse},
        {"max_depth", e.max_depth}}},
  };
}

/// Applies `key=value` with a dotted key path. The value is parsed as JSON
/// when possible and taken as a string otherwise.
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key has an empty component: " + key);
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// Reads a config file; a run manifest is accepted too (its "config" is used).
inline json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  if (j.is_object() && j.contains("config") && j.contains("artifacts")) return j.at("config");
  return j;
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::Io, "sha256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

/// Shortest round-trip decimal for doubles, "nan"/"inf" spelled out.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV table with the versioned schema comment line.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  template <class... Cells>
  void row(const Cells&... cells) {
    std::vector<std::string> r;
    (r.push_back(cell(cells)), ...);
    if (r.size() != header_.size()) throw Error(ErrorKind::InvalidArgument, "CSV row width mismatch");
    rows_.push_back(std::move(r));
  }

  std::string str() const {
    std::ostringstream os;
    os << "# qlandscape-csv v1\n";
    write_line(os, header_);
    for (const auto& r : rows_) write_line(os, r);
    return os.str();
  }

 private:
  static std::string cell(double v) { return fmt(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(std::uint64_t v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "true" : "false"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct Artifacts {
  json summary = json::object();
  std::map<std::string, std::string> files;

  void add(const std::string& name, std::string content) { files[name] = std::move(content); }
  void add(const std::string& name, const CsvTable& t) { files[name] = t.str(); }
};

// ---------------------------------------------------------------------------
// Resolution helpers

inline HermitianMatrix resolve_matrix(const json& ref, const char* what) {
  CMatrix m = ref.is_string() ? load_matrix_json(ref.get<std::string>()) : matrix_from_json(ref);
  try {
    return HermitianMatrix(std::move(m));
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("system.") + what + ": " + e.what());
  }
}

inline ControlSystem resolve_system(const SystemSpec& s) {
  PresetSpec p;
  p.name = s.preset;
  p.qubits = s.qubits;
  p.coupling = s.coupling;
  p.field = s.field;
  p.longitudinal = s.longitudinal;
  p.dim = s.dim;
  p.seed = s.preset_seed;
  ControlSystem base = make_preset(p);
  HermitianMatrix drift = s.drift.is_null() ? base.drift() : resolve_matrix(s.drift, "drift");
  HermitianMatrix control = s.control.is_null() ? base.control() : resolve_matrix(s.control, "control");
  HermitianMatrix observable = s.observable.is_null() ? base.observable() : resolve_matrix(s.observable, "observable");
  return {std::move(drift), std::move(control), std::move(observable)};
}

inline NoiseModel resolve_noise(const NoiseSpec& n) {
  if (n.kind == "gaussian") return NoiseModel::gaussian(n.sigma);
  if (n.kind == "shot") return NoiseModel::shot(n.shots);
  return NoiseModel::none();
}

inline ControlField resolve_field(const FieldSpec& f, int default_steps, RandomStream& rng) {
  if (!f.amplitudes.empty()) {
    return {Eigen::Map<const RVector>(f.amplitudes.data(), static_cast<Eigen::Index>(f.amplitudes.size())), f.dt};
  }
  const int n = f.n_steps > 0 ? f.n_steps : default_steps;
  if (f.random_scale > 0.0) return ControlField::random(n, f.dt, f.random_scale, rng);
  return ControlField::constant(n, f.dt, 0.0);
}

inline OptimizerConfig resolve_optimizer(const OptimizerSpec& o) {
  OptimizerConfig c;
  c.alpha = o.alpha;
  c.adaptation = o.adaptation == "fixed" ? StepAdaptation::Fixed : StepAdaptation::DoublingHalving;
  c.max_iters = o.max_iters;
  c.threshold = o.threshold;
  c.gradient = o.gradient == "model-finite-difference" ? GradientSource::ModelFiniteDifference
                                                       : GradientSource::ModelAnalytic;
  c.fd_step = o.fd_step;
  return c;
}

inline json vector_json(const RVector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json matrix_rows_json(const RMatrix& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vector_json(m.row(r).transpose()));
  return a;
}

/// Finite-or-null, since JSON has no NaN/inf.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json quantiles_json(const Quantiles& q) {
  return {{"q05", num(q.q05)}, {"q25", num(q.q25)}, {"q50", num(q.q50)}, {"q75", num(q.q75)}, {"q95", num(q.q95)}};
}

// Substream layout, shared by all subcommands.
enum Stream : std::uint64_t { kSystemStream = 0, kFieldStream = 1, kTargetStream = 2, kStateStream = 3,
                              kNoiseStream = 4, kExperimentStream = 5 };

// ---------------------------------------------------------------------------
// Subcommands

inline Artifacts run_evolve(const ExperimentConfig& c, const RandomStream& root) {
  const auto system = resolve_system(c.system);
  auto field_rng = root.substream(kFieldStream);
  const auto field = resolve_field(c.field, 20, field_rng);
  const auto traj = propagate(system, field);
  const auto psi0 = PureState::basis(system.dim(), 0);
  CsvTable t({"k", "t", "expect_M", "population_0"});
  for (int k = 0; k <= traj.n_steps(); ++k) {
    const CVector psi = traj.prefix(k).matrix() * psi0.amplitudes();
    const double m = psi.dot(system.observable().matrix() * psi).real();
    t.row(k, k * field.dt(), m, std::norm(psi(0)));
  }
  Artifacts a;
  a.add("trajectory.csv", t);
  a.summary = {{"dim", system.dim()},
               {"n_steps", field.n_steps()},
               {"dt", field.dt()},
               {"total_time", field.total_time()},
               {"unitarity_defect", UnitaryMatrix::unitarity_defect(traj.endpoint().matrix())},
               {"endpoint", matrix_to_json(traj.endpoint().matrix())}};
  return a;
}

inline Artifacts run_tomo(const ExperimentConfig& c, const RandomStream& root) {
  const auto system = resolve_system(c.system);
  const int d = system.dim();
  const auto basis = gell_mann_basis(d);
  const SampleSchedule schedule = c.schedule.times.empty()
                                      ? SampleSchedule::multiples(c.schedule.spacing,
                                                                  c.schedule.count > 0 ? c.schedule.count : basis.size())
                                      : SampleSchedule(c.schedule.times);
  auto field_rng = root.substream(kFieldStream);
  const auto field = resolve_field(c.field, schedule.last(), field_rng);
  const auto traj = propagate(system, field);
  const auto map = build_measurement_map(traj, schedule, basis);

  auto state_rng = root.substream(kStateStream);
  const auto psi = haar_state(d, state_rng);
  const auto rho = DensityMatrix::from_pure(psi);
  const auto truth = BlochVector::of(rho.matrix(), basis);
  auto noise_rng = root.substream(kNoiseStream);
  const auto record = simulate_record(traj, schedule, rho, resolve_noise(c.noise), noise_rng);
  const auto method = c.experiment.method == "least-squares" ? ReconstructionMethod::least_squares(c.experiment.ridge)
                                                             : ReconstructionMethod::direct_inverse();
  const auto estimate = reconstruct(map, record, method);
  const double err = reconstruction_error(truth, estimate);

  CsvTable t({"n", "t_index", "y", "x_true", "x_est"});
  for (int n = 0; n < schedule.size(); ++n) {
    const bool in_range = n < basis.size();
    t.row(n, schedule[n], record.y(n), in_range ? truth.coeffs()(n) : std::nan(""),
          in_range ? estimate.coeffs()(n) : std::nan(""));
  }
  Artifacts a;
  a.add("record.csv", t);
  const json map_json = {{"schedule", schedule.times()},
                         {"y", vector_json(record.y)},
                         {"map", matrix_rows_json(map.matrix())},
                         {"s_min", map.smallest_singular_value()},
                         {"cond", num(map.condition_number())}};
  a.add("map.json", map_json.dump(2) + "\n");
  a.summary = {{"dim", d},
               {"samples", schedule.size()},
               {"noise", record.noise.describe()},
               {"method", c.experiment.method},
               {"s_min", map.smallest_singular_value()},
               {"s_max", map.largest_singular_value()},
               {"cond", num(map.condition_number())},
               {"informationally_complete", map.is_informationally_complete()},
               {"reconstruction_error", err},
               {"estimate_positive", estimate.is_positive(basis)}};
  return a;
}

inline Artifacts run_singular_check(const ExperimentConfig& c, const RandomStream& root) {
  const auto system = resolve_system(c.system);
  const auto basis = gell_mann_basis(system.dim());
  auto field_rng = root.substream(kFieldStream);
  const auto field = resolve_field(c.field, 50, field_rng);
  const auto rep = detect_singular_control(system, field, basis);
  const RMatrix orbit = orbit_matrix(propagate(system, field), basis);
  const RVector sv = Eigen::JacobiSVD<RMatrix>(orbit).singularValues();
  CsvTable t({"index", "singular_value"});
  for (Eigen::Index i = 0; i < sv.size(); ++i) t.row(static_cast<int>(i), sv(i));
  Artifacts a;
  a.add("orbit_singular_values.csv", t);
  a.summary = {{"dim", system.dim()},
               {"grid_points", rep.grid_points},
               {"is_singular", rep.is_singular},
               {"s_min", rep.smallest_singular_value},
               {"s_max", rep.largest_singular_value},
               {"max_overlap", rep.max_overlap},
               {"warning", rep.warning ? json(*rep.warning) : json(nullptr)},
               {"null_coefficients", rep.is_singular ? vector_json(rep.null_coefficients) : json(nullptr)}};
  return a;
}

inline StatePreparationProblem resolve_problem(const ControlSystem& system, const RandomStream& root) {
  auto target_rng = root.substream(kTargetStream);
  return {system, PureState::basis(system.dim(), 0), haar_state(system.dim(), target_rng)};
}

inline Artifacts run_optimize(const ExperimentConfig& c, const RandomStream& root) {
  const auto system = resolve_system(c.system);
  const auto problem = resolve_problem(system, root);
  auto field_rng = root.substream(kFieldStream);
  const auto field0 = resolve_field(c.field, 20, field_rng);
  const auto result = gradient_ascent(problem, field0, resolve_optimizer(c.optimizer));
  CsvTable t({"iteration", "J", "grad_norm", "alpha"});
  for (const auto& e : result.trace) t.row(e.iteration, e.value, e.grad_norm, e.alpha);
  Artifacts a;
  a.add("trace.csv", t);
  a.summary = {{"dim", system.dim()},
               {"iterations", result.trace.back().iteration},
               {"final_J", result.trace.back().value},
               {"stop", to_string(result.stop)},
               {"final_field", vector_json(result.field)}};
  return a;
}

inline Artifacts run_learn(const ExperimentConfig& c, const RandomStream& root) {
  const auto system = resolve_system(c.system);
  LearningProtocol protocol;
  protocol.problem = resolve_problem(system, root);
  auto field_rng = root.substream(kFieldStream);
  const auto field0 = resolve_field(c.field, 20, field_rng);
  protocol.dt = field0.dt();
  protocol.control_steps = field0.n_steps();
  protocol.probe = {c.experiment.probe_scale, c.experiment.probe_steps};
  protocol.noise = resolve_noise(c.noise);
  protocol.fd_step = c.experiment.delta_f;
  protocol.probe_reuse = c.experiment.probe_reuse;
  protocol.ridge = c.experiment.ridge;
  auto rng = root.substream(kExperimentStream);
  const auto trace = run_learning_control(protocol, field0.amplitudes(), resolve_optimizer(c.optimizer), rng);
  CsvTable t({"iter", "J_est", "J_true", "recon_err", "grad_norm", "alpha", "probe_seed"});
  for (const auto& r : trace.records) {
    t.row(r.iteration, r.j_est, r.j_true, r.recon_err, r.grad_norm, r.alpha, r.probe_seed);
  }
  Artifacts a;
  a.add("learning_trace.csv", t);
  a.summary = {{"dim", system.dim()},
               {"iterations", trace.records.empty() ? 0 : trace.records.back().iteration},
               {"final_J_est", trace.records.empty() ? json(nullptr) : json(trace.records.back().j_est)},
               {"final_J_true", trace.records.empty() ? json(nullptr) : num(trace.records.back().j_true)},
               {"stop", to_string(trace.stop)},
               {"failure", trace.failure},
               {"noise", protocol.noise.describe()},
               {"fd_step", protocol.fd_step},
               {"probe_reuse", protocol.probe_reuse}};
  return a;
}

inline HermitianMatrix experiment_observable(int d) { return sigma_z_type(d); }

inline Artifacts run_moments(const ExperimentConfig& c, const RandomStream& root) {
  const int d = c.experiment.d;
  auto rng = root.substream(kExperimentStream);
  const auto r = run_moments_experiment(d, experiment_observable(d), c.experiment.n_samples, rng, c.workers);
  CsvTable t({"m", "mean", "mean_stderr", "variance", "predicted_variance"});
  for (Eigen::Index m = 0; m < r.mean.size(); ++m) {
    t.row(static_cast<int>(m), r.mean(m), r.mean_stderr(m), r.variance(m), r.predicted_variance);
  }
  CsvTable x({"m", "m_prime", "cross_correlation", "cross_stderr"});
  for (Eigen::Index m = 0; m < r.cross_correlation.rows(); ++m) {
    for (Eigen::Index mp = 0; mp < r.cross_correlation.cols(); ++mp) {
      x.row(static_cast<int>(m), static_cast<int>(mp), r.cross_correlation(m, mp), r.cross_stderr(m, mp));
    }
  }
  Artifacts a;
  a.add("moments.csv", t);
  a.add("cross_correlation.csv", x);
  a.summary = {{"d", d},
               {"n_samples", r.n_samples},
               {"predicted_variance", r.predicted_variance},
               {"mean_variance", r.variance.mean()},
               {"relative_variance_error", std::abs(r.variance.mean() - r.predicted_variance) / r.predicted_variance},
               {"rescaled_variance_inv_sigma", r.rescaled_variance_inv_sigma},
               {"rescaled_variance_inv_sqrt_sigma", r.rescaled_variance_inv_sqrt_sigma}};
  return a;
}

inline Artifacts run_bound_eq4(const ExperimentConfig& c, const RandomStream& root) {
  CsvTable t({"d", "trial", "s_min", "inv_norm", "L_hat", "singular"});
  json per_d = json::array();
  for (int d : c.experiment.dims) {
    auto rng = root.substream(kExperimentStream).substream(static_cast<std::uint64_t>(d));
    RowSource source = RowSource::ideal_haar();
    HermitianMatrix m = experiment_observable(d);
    if (c.experiment.row_source == "random-field") {
      SystemSpec spec = c.system;
      const auto system = resolve_system(spec);
      if (system.dim() != d) continue;
      m = system.observable();
      source = RowSource::random_field(system, {c.field.random_scale, c.schedule.spacing}, c.field.dt);
    }
    const auto r = run_eq4_experiment(d, m, c.experiment.n_trials, source, rng, c.workers);
    for (std::size_t k = 0; k < r.trials.size(); ++k) {
      const auto& tr = r.trials[k];
      t.row(d, static_cast<int>(k), tr.s_min, tr.inv_norm, tr.l_hat, tr.singular);
    }
    per_d.push_back({{"d", d},
                     {"n_trials", r.n_trials},
                     {"tr_m2", r.tr_m2},
                     {"singular_trials", r.singular_trials},
                     {"L_hat", quantiles_json(r.l_hat)},
                     {"L_hat_max", r.l_hat_max},
                     {"s_min", quantiles_json(r.s_min)}});
  }
  Artifacts a;
  a.add("eq4_trials.csv", t);
  a.summary = {{"row_source", c.experiment.row_source}, {"results", per_d}};
  return a;
}

inline Artifacts run_bound_eq5(const ExperimentConfig& c, const RandomStream& root) {
  CsvTable t({"qubits", "d", "kappa", "empirical", "bound", "bound_levy", "band", "trivially_satisfied", "satisfied"});
  json per_n = json::array();
  for (int q : c.experiment.qubit_counts) {
    const auto system = ising_chain_preset(q, c.system.coupling, c.system.field, c.system.longitudinal);
    auto rng = root.substream(kExperimentStream).substream(static_cast<std::uint64_t>(q));
    auto field_rng = rng.substream(0);
    auto sample_rng = rng.substream(1);
    const int steps = c.field.n_steps > 0 ? c.field.n_steps : 20;
    const auto field = ControlField::random(steps, c.field.dt, c.field.random_scale, field_rng);
    const int t_index = c.experiment.t_index >= 0 ? std::min(c.experiment.t_index, steps) : steps / 2;
    const double e_max = system.control().spectral_norm();
    const auto r = run_eq5_experiment(system, field, t_index, c.experiment.n_samples,
                                      default_kappa_grid(e_max, c.experiment.kappa_points), sample_rng,
                                      PureState::basis(system.dim(), 0), c.workers);
    bool all_ok = true;
    for (const auto& p : r.tail) {
      t.row(q, r.d, p.kappa, p.empirical, p.bound, p.bound_levy, p.band, p.trivially_satisfied, p.satisfied);
      all_ok = all_ok && p.satisfied;
    }
    per_n.push_back({{"qubits", q},
                     {"d", r.d},
                     {"e_max", r.e_max},
                     {"mean", r.mean},
                     {"stderr", r.stderr_mean},
                     {"median_abs", r.median_abs},
                     {"max_abs", r.max_abs},
                     {"bound_satisfied", all_ok}});
  }
  Artifacts a;
  a.add("eq5_tail.csv", t);
  a.summary = {{"results", per_n}};
  return a;
}

inline Artifacts run_flattening(const ExperimentConfig& c, const RandomStream& root) {
  auto rng = root.substream(kExperimentStream);
  FlatteningOptions opt;
  opt.n_steps = c.field.n_steps > 0 ? c.field.n_steps : opt.n_steps;
  opt.dt = c.field.dt;
  opt.amplitude_scale = c.field.random_scale;
  const auto rows = run_flattening_experiment(c.experiment.qubit_counts, c.experiment.n_samples, rng, opt, c.workers);
  CsvTable t({"qubits", "d", "e_max", "median_abs_g", "q25", "q75", "max_abs_g", "inv_sqrt_d_reference"});
  for (const auto& r : rows) t.row(r.qubits, r.d, r.e_max, r.median_abs, r.q25, r.q75, r.max_abs, r.inv_sqrt_d_reference);
  Artifacts a;
  a.add("flattening.csv", t);
  json medians = json::array();
  for (const auto& r : rows) medians.push_back({{"qubits", r.qubits}, {"median_abs_g", r.median_abs}});
  a.summary = {{"medians", medians}};
  return a;
}

inline Artifacts run_noise_sensitivity(const ExperimentConfig& c, const RandomStream& root) {
  auto rng = root.substream(kExperimentStream);
  const auto rows =
      run_noise_sensitivity_experiment(c.experiment.dims, c.experiment.sigma_noise, c.experiment.n_trials, rng, c.workers);
  CsvTable t({"d", "sigma_noise", "mean_error", "q25", "median", "q75", "median_L_hat", "bound_curve"});
  for (const auto& r : rows) {
    t.row(r.d, r.sigma_noise, r.mean_error, r.error.q25, r.error.q50, r.error.q75, r.median_l_hat, r.bound_curve);
  }
  Artifacts a;
  a.add("noise_sensitivity.csv", t);
  json means = json::array();
  for (const auto& r : rows) means.push_back({{"d", r.d}, {"mean_error", r.mean_error}});
  a.summary = {{"sigma_noise", c.experiment.sigma_noise}, {"means", means}};
  return a;
}

inline Artifacts dispatch(const ExperimentConfig& c) {
  const RandomStream root(c.seed);
  const std::string& s = c.subcommand;
  if (s == "evolve") return run_evolve(c, root);
  if (s == "tomo") return run_tomo(c, root);
  if (s == "singular-check") return run_singular_check(c, root);
  if (s == "optimize") return run_optimize(c, root);
  if (s == "learn") return run_learn(c, root);
  if (s == "moments") return run_moments(c, root);
  if (s == "bound-eq4") return run_bound_eq4(c, root);
  if (s == "bound-eq5") return run_bound_eq5(c, root);
  if (s == "flattening") return run_flattening(c, root);
  if (s == "noise-sensitivity") return run_noise_sensitivity(c, root);
  throw ConfigError("unknown subcommand: " + s);
}

// ---------------------------------------------------------------------------
// Run

struct RunOutcome {
  int exit_code = 0;
  std::filesystem::path output_dir;
  json manifest;
  json error;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

inline std::filesystem::path fresh_run_dir(const std::filesystem::path& base) {
  const std::string stamp = utc_timestamp();
  std::filesystem::path dir = base / stamp;
  for (int k = 1; std::filesystem::exists(dir); ++k) dir = base / (stamp + "-" + std::to_string(k));
  std::filesystem::create_directories(dir);
  return dir;
}

inline json error_json(std::string_view kind, const std::string& message) {
  return {{"error", {{"kind", kind}, {"message", message}}}};
}

/// Runs the configured subcommand and writes
/// <out>/<subcommand>/<timestamp>/{summary.json, *.csv, manifest.json}.
/// Exit code 1 with an error JSON on module errors.
inline RunOutcome run(const ExperimentConfig& config) {
  RunOutcome outcome;
  Artifacts artifacts;
  try {
    artifacts = dispatch(config);
  } catch (const Error& e) {
    outcome.exit_code = 1;
    outcome.error = error_json(to_string(e.kind()), e.what());
    return outcome;
  } catch (const std::exception& e) {
    outcome.exit_code = 1;
    outcome.error = error_json("internal", e.what());
    return outcome;
  }
  artifacts.add("summary.json", artifacts.summary.dump(2) + "\n");

  try {
    outcome.output_dir = fresh_run_dir(std::filesystem::path(config.out) / config.subcommand);
    json listed = json::array();
    for (const auto& [name, content] : artifacts.files) {
      std::ofstream f(outcome.output_dir / name, std::ios::binary);
      if (!f) throw Error(ErrorKind::Io, "cannot write " + (outcome.output_dir / name).string());
      f << content;
      listed.push_back({{"file", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }
    outcome.manifest = {{"tool", "qlandscape"},
                        {"csv_schema", "qlandscape-csv v1"},
                        {"seed", config.seed},
                        {"substreams", {{"system", 0}, {"field", 1}, {"target", 2}, {"state", 3}, {"noise", 4},
                                        {"experiment", 5}}},
                        {"config", config_to_json(config)},
                        {"artifacts", listed}};
    std::ofstream m(outcome.output_dir / "manifest.json");
    m << outcome.manifest.dump(2) << "\n";
  } catch (const std::exception& e) {
    outcome.exit_code = 1;
    outcome.error = error_json("io", e.what());
  }
  return outcome;
}

}  // namespace qlandscape::experiment
