#pragma once

// Concrete control systems: a driven qubit, transverse-field Ising chains
// probed on the first spin, and random traceless GUE pairs.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "qlandscape/dynamics.hpp"

namespace qlandscape {

struct PresetSpec {
  std::string name = "qubit";
  int qubits = 2;          // ising-chain
  double coupling = 1.0;   // ising-chain J_c
  double field = 1.0;      // ising-chain h
  double longitudinal = 0.5;  // ising-chain g
  int dim = 4;             // random-gue
  std::uint64_t seed = 1;  // random-gue
};

/// σ_a acting on `site` (0 = first tensor factor) of an n-qubit register.
inline CMatrix site_operator(const CMatrix& op, int site, int n) {
  CMatrix out = CMatrix::Identity(1, 1);
  for (int k = 0; k < n; ++k) out = kron(out, k == site ? op : pauli::id());
  return out;
}

inline ControlSystem qubit_preset() {
  return {HermitianMatrix(pauli::z()), HermitianMatrix(pauli::x()), HermitianMatrix(pauli::x())};
}

/// J_c Σ σz⊗σz (nearest neighbours) + h Σ σx + g Σ σz; control σx on
/// spin 1, observable σz on spin 1. With g = 0 the global parity Π σx
/// commutes with drift and control, so the chain is not controllable.
inline ControlSystem ising_chain_preset(int n, double coupling, double field, double longitudinal = 0.5) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "ising-chain needs at least one spin");
  const int d = 1 << n;
  CMatrix drift = CMatrix::Zero(d, d);
  for (int k = 0; k + 1 < n; ++k) {
    drift += coupling * site_operator(pauli::z(), k, n) * site_operator(pauli::z(), k + 1, n);
  }
  for (int k = 0; k < n; ++k) {
    drift += field * site_operator(pauli::x(), k, n) + longitudinal * site_operator(pauli::z(), k, n);
  }
  return {HermitianMatrix(drift), HermitianMatrix(site_operator(pauli::x(), 0, n)),
          HermitianMatrix(site_operator(pauli::z(), 0, n))};
}

/// (A + A^†)/2 with E|A_ij|² = 1, trace removed.
inline HermitianMatrix random_traceless_gue(int d, RandomStream& rng) {
  CMatrix a(d, d);
  for (int c = 0; c < d; ++c) {
    for (int r = 0; r < d; ++r) a(r, c) = rng.complex_normal();
  }
  CMatrix h = 0.5 * (a + a.adjoint());
  h -= (h.trace() / static_cast<double>(d)) * CMatrix::Identity(d, d);
  return HermitianMatrix::hermitian_part(h);
}

/// Sufficient condition for full controllability: drift with non-degenerate
/// spectrum and distinct transition frequencies, and a control whose
/// couplings in the drift eigenbasis form a connected graph.
inline bool spectral_controllability_test(const ControlSystem& system, double tol = 1e-8) {
  const auto es = detail::eigensystem(system.drift());
  const int d = system.dim();
  const double scale = std::max(1.0, es.values.cwiseAbs().maxCoeff());
  std::vector<double> gaps;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) gaps.push_back(es.values(j) - es.values(i));
  }
  std::sort(gaps.begin(), gaps.end());
  if (gaps.empty() || gaps.front() <= tol * scale) return false;
  for (std::size_t k = 1; k < gaps.size(); ++k) {
    if (gaps[k] - gaps[k - 1] <= tol * scale) return false;
  }
  const CMatrix c = es.vectors.adjoint() * system.control().matrix() * es.vectors;
  const double cscale = std::max(1e-300, c.cwiseAbs().maxCoeff());
  std::vector<int> seen(static_cast<std::size_t>(d), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int reached = 1;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int j = 0; j < d; ++j) {
      if (!seen[static_cast<std::size_t>(j)] && std::abs(c(i, j)) > tol * cscale) {
        seen[static_cast<std::size_t>(j)] = 1;
        ++reached;
        stack.push_back(j);
      }
    }
  }
  return reached == d;
}

inline constexpr int kLieClosureMaxDim = 8;

/// Full Lie-closure rank test for d <= 8, the spectral sufficient test above that.
inline bool is_fully_controllable(const ControlSystem& system) {
  if (system.dim() <= kLieClosureMaxDim) return lie_closure(system, system.dim() * system.dim()).is_fully_controllable;
  return spectral_controllability_test(system);
}

inline ControlSystem random_gue_preset(int d, std::uint64_t seed) {
  if (d < 2) throw Error(ErrorKind::InvalidDimension, "random-gue needs d >= 2");
  RandomStream root(seed);
  for (int draw = 0; draw <= 5; ++draw) {
    auto rng = root.substream(static_cast<std::uint64_t>(draw));
    auto drift = random_traceless_gue(d, rng);
    auto control = random_traceless_gue(d, rng);
    ControlSystem system(drift, control, control);
    if (is_fully_controllable(system)) return system;
  }
  throw Error(ErrorKind::NotControllable, "random-gue: no controllable draw after 5 redraws");
}

inline ControlSystem make_preset(const PresetSpec& spec) {
  if (spec.name == "qubit") return qubit_preset();
  if (spec.name == "ising-chain") return ising_chain_preset(spec.qubits, spec.coupling, spec.field, spec.longitudinal);
  if (spec.name == "random-gue") return random_gue_preset(spec.dim, spec.seed);
  throw Error(ErrorKind::UnknownPreset, "unknown preset: " + spec.name);
}

/// diag(1, -1, 0, ..., 0): traceless, Tr{M²} = 2.
inline HermitianMatrix sigma_z_type(int d) {
  if (d < 2) throw Error(ErrorKind::InvalidDimension, "sigma_z_type needs d >= 2");
  CMatrix m = CMatrix::Zero(d, d);
  m(0, 0) = 1.0;
  m(1, 1) = -1.0;
  return HermitianMatrix(m);
}

}  // namespace qlandscape
