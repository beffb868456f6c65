#pragma once

// Complex matrix algebra foundation: Hermitian/unitary value types,
// orthonormal traceless operator bases, Haar sampling, and the matrix
// exponential together with its exact directional derivative.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "qlandscape/error.hpp"
#include "qlandscape/random.hpp"

namespace qlandscape {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// Shape-only complex matrix (e.g. the operator A = U_T U_t^† H_c U_t |ψ0⟩⟨ψ0| U_T^†).
using GeneralMatrix = CMatrix;

inline constexpr double kHermitianTol = 1e-12;
inline constexpr double kTracelessTol = 1e-12;
inline constexpr double kUnitaryTol = 1e-10;
inline constexpr double kNormTol = 1e-12;
inline constexpr double kDegenerateGap = 1e-10;

namespace detail {

inline double hermiticity_defect(const CMatrix& m) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

inline void require_square(const CMatrix& m, std::string_view what) {
  if (m.rows() != m.cols() || m.rows() < 1) {
    throw Error(ErrorKind::InvalidDimension,
                std::string(what) + ": expected a non-empty square matrix, got " +
                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

}  // namespace detail

class HermitianMatrix {
 public:
  HermitianMatrix() = default;

  /// Validates Hermiticity (entrywise, absolute 1e-12).
  explicit HermitianMatrix(CMatrix m) : m_(std::move(m)) {
    detail::require_square(m_, "HermitianMatrix");
    const double defect = detail::hermiticity_defect(m_);
    if (!(defect <= kHermitianTol)) {
      throw Error(ErrorKind::InvalidArgument,
                  "matrix is not Hermitian (max |A - A^†| = " + std::to_string(defect) + ")");
    }
  }

  /// Hermitian part (A + A^†)/2 of a computed matrix; no validation.
  static HermitianMatrix hermitian_part(const CMatrix& m) {
    detail::require_square(m, "HermitianMatrix");
    HermitianMatrix h;
    h.m_ = 0.5 * (m + m.adjoint());
    return h;
  }

  /// Like the validating constructor, and additionally requires |Tr| <= 1e-12.
  static HermitianMatrix traceless(CMatrix m) {
    HermitianMatrix h(std::move(m));
    if (!h.is_traceless()) {
      throw Error(ErrorKind::InvalidArgument,
                  "matrix is not traceless (|Tr| = " + std::to_string(std::abs(h.m_.trace())) + ")");
    }
    return h;
  }

  static HermitianMatrix zero(int d) { return hermitian_part(CMatrix::Zero(d, d)); }

  int dim() const noexcept { return static_cast<int>(m_.rows()); }
  const CMatrix& matrix() const noexcept { return m_; }
  bool is_traceless(double tol = kTracelessTol) const { return std::abs(m_.trace()) <= tol; }

  RVector eigenvalues() const {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(m_, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
      throw Error(ErrorKind::Numerical, "eigenvalue computation failed");
    }
    return es.eigenvalues();
  }

  /// max_i |E_i|.
  double spectral_norm() const { return eigenvalues().cwiseAbs().maxCoeff(); }

  friend HermitianMatrix operator+(const HermitianMatrix& a, const HermitianMatrix& b) {
    detail::require_same_dim(a.dim(), b.dim(), "HermitianMatrix +");
    return hermitian_part(a.m_ + b.m_);
  }
  friend HermitianMatrix operator-(const HermitianMatrix& a, const HermitianMatrix& b) {
    detail::require_same_dim(a.dim(), b.dim(), "HermitianMatrix -");
    return hermitian_part(a.m_ - b.m_);
  }
  friend HermitianMatrix operator*(double s, const HermitianMatrix& a) {
    return hermitian_part(s * a.m_);
  }

 private:
  CMatrix m_;
};

class UnitaryMatrix {
 public:
  UnitaryMatrix() = default;

  /// Validates U^†U = 1 within 1e-10 in operator norm.
  explicit UnitaryMatrix(CMatrix u) : u_(std::move(u)) {
    detail::require_square(u_, "UnitaryMatrix");
    const double defect = unitarity_defect(u_);
    if (!(defect <= kUnitaryTol)) {
      throw Error(ErrorKind::InvalidArgument,
                  "matrix is not unitary (||U^†U - 1|| = " + std::to_string(defect) + ")");
    }
  }

  /// Wraps a matrix produced by a unitary-preserving computation.
  static UnitaryMatrix from_trusted(CMatrix u) {
    UnitaryMatrix out;
    out.u_ = std::move(u);
    return out;
  }

  static UnitaryMatrix identity(int d) { return from_trusted(CMatrix::Identity(d, d)); }

  static double unitarity_defect(const CMatrix& u) {
    const CMatrix e = u.adjoint() * u - CMatrix::Identity(u.rows(), u.cols());
    return Eigen::JacobiSVD<CMatrix>(e).singularValues()(0);
  }

  int dim() const noexcept { return static_cast<int>(u_.rows()); }
  const CMatrix& matrix() const noexcept { return u_; }
  UnitaryMatrix adjoint() const { return from_trusted(u_.adjoint()); }

  friend UnitaryMatrix operator*(const UnitaryMatrix& a, const UnitaryMatrix& b) {
    detail::require_same_dim(a.dim(), b.dim(), "UnitaryMatrix *");
    return from_trusted(a.u_ * b.u_);
  }

 private:
  CMatrix u_;
};

class PureState {
 public:
  PureState() = default;

  /// Validates unit l2 norm within 1e-12.
  explicit PureState(CVector amplitudes) : psi_(std::move(amplitudes)) {
    if (psi_.size() < 1) throw Error(ErrorKind::InvalidDimension, "empty state vector");
    const double n = psi_.norm();
    if (!(std::abs(n - 1.0) <= kNormTol)) {
      throw Error(ErrorKind::InvalidArgument, "state is not normalized (norm = " + std::to_string(n) + ")");
    }
  }

  static PureState normalized(const CVector& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorKind::InvalidArgument, "cannot normalize zero vector");
    PureState s;
    s.psi_ = v / n;
    return s;
  }

  static PureState basis(int d, int k) {
    if (d < 1 || k < 0 || k >= d) throw Error(ErrorKind::IndexOutOfRange, "basis state index out of range");
    PureState s;
    s.psi_ = CVector::Zero(d);
    s.psi_(k) = 1.0;
    return s;
  }

  int dim() const noexcept { return static_cast<int>(psi_.size()); }
  const CVector& amplitudes() const noexcept { return psi_; }
  CMatrix projector() const { return psi_ * psi_.adjoint(); }

 private:
  CVector psi_;
};

class DensityMatrix {
 public:
  DensityMatrix() = default;

  /// Validates Hermitian, unit trace, eigenvalues >= -1e-10.
  explicit DensityMatrix(CMatrix rho) : rho_(std::move(rho)) {
    detail::require_square(rho_, "DensityMatrix");
    const double defect = detail::hermiticity_defect(rho_);
    if (!(defect <= kHermitianTol)) {
      throw Error(ErrorKind::InvalidArgument, "density matrix is not Hermitian");
    }
    if (!(std::abs(rho_.trace() - Complex(1.0)) <= 1e-12)) {
      throw Error(ErrorKind::InvalidArgument, "density matrix trace differs from 1");
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es(rho_, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -1e-10) {
      throw Error(ErrorKind::InvalidArgument, "density matrix is not positive semidefinite");
    }
  }

  static DensityMatrix from_pure(const PureState& psi) {
    DensityMatrix out;
    out.rho_ = psi.projector();
    return out;
  }

  static DensityMatrix maximally_mixed(int d) {
    DensityMatrix out;
    out.rho_ = CMatrix::Identity(d, d) / static_cast<double>(d);
    return out;
  }

  int dim() const noexcept { return static_cast<int>(rho_.rows()); }
  const CMatrix& matrix() const noexcept { return rho_; }

 private:
  CMatrix rho_;
};

/// Orthonormal basis {B_m} of traceless Hermitian operators, m = 1..d²-1.
class OperatorBasis {
 public:
  OperatorBasis() = default;

  /// Validates tracelessness and orthonormality (1e-12).
  OperatorBasis(int d, std::vector<HermitianMatrix> elements) : d_(d), elements_(std::move(elements)) {
    if (d < 2) throw Error(ErrorKind::InvalidDimension, "operator basis requires d >= 2");
    const std::size_t n = static_cast<std::size_t>(d) * d - 1;
    if (elements_.size() != n) {
      throw Error(ErrorKind::InvalidDimension, "operator basis must have d^2-1 elements");
    }
    for (const auto& b : elements_) {
      detail::require_same_dim(b.dim(), d, "basis element dimension");
      if (!b.is_traceless()) throw Error(ErrorKind::InvalidArgument, "basis element is not traceless");
    }
    build_flat();
    const CMatrix gram = flat_ * flat_.adjoint();
    const double defect = (gram - CMatrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
    if (!(defect <= 1e-12)) throw Error(ErrorKind::InvalidArgument, "basis is not orthonormal");
  }

  int dim() const noexcept { return d_; }
  int size() const noexcept { return static_cast<int>(elements_.size()); }
  const std::vector<HermitianMatrix>& elements() const noexcept { return elements_; }
  const HermitianMatrix& operator[](int m) const { return elements_.at(static_cast<std::size_t>(m)); }

  /// Complex coefficients ⟨B_m, X⟩ for every m.
  CVector inner_products(const CMatrix& x) const {
    detail::require_same_dim(x.rows(), d_, "basis expansion");
    detail::require_same_dim(x.cols(), d_, "basis expansion");
    const Eigen::Map<const CVector> vx(x.data(), x.size());
    return flat_ * vx;
  }

  /// Real coefficients Re⟨B_m, X⟩ (exact for Hermitian X).
  RVector coefficients(const CMatrix& x) const { return inner_products(x).real(); }

  /// Σ_m c_m B_m.
  CMatrix resum(const RVector& c) const {
    detail::require_same_dim(c.size(), size(), "basis resummation");
    const CVector v = flat_.adjoint() * c.cast<Complex>();
    return Eigen::Map<const CMatrix>(v.data(), d_, d_);
  }

 private:
  // Row m holds conj(vec(B_m)) so that flat_ * vec(X) = (Tr{B_m^† X})_m.
  void build_flat() {
    flat_.resize(static_cast<Eigen::Index>(elements_.size()), static_cast<Eigen::Index>(d_) * d_);
    for (std::size_t m = 0; m < elements_.size(); ++m) {
      const CMatrix& b = elements_[m].matrix();
      flat_.row(static_cast<Eigen::Index>(m)) =
          Eigen::Map<const CVector>(b.data(), b.size()).conjugate().transpose();
    }
  }

  int d_ = 0;
  std::vector<HermitianMatrix> elements_;
  CMatrix flat_;
};

/// Tr{A^† B}.
inline Complex hs_inner(const GeneralMatrix& a, const GeneralMatrix& b) {
  detail::require_same_dim(a.rows(), b.rows(), "hs_inner rows");
  detail::require_same_dim(a.cols(), b.cols(), "hs_inner cols");
  return a.conjugate().cwiseProduct(b).sum();
}

/// Generalized Gell-Mann basis, normalized to ⟨B_m,B_n⟩ = δ_mn.
/// Ordering: symmetric pairs (j<k, row-major), antisymmetric pairs
/// (j<k, row-major), then the d-1 diagonal elements.
inline OperatorBasis gell_mann_basis(int d) {
  if (d < 2) throw Error(ErrorKind::InvalidDimension, "gell_mann_basis requires d >= 2, got " + std::to_string(d));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  std::vector<HermitianMatrix> out;
  out.reserve(static_cast<std::size_t>(d) * d - 1);
  for (int j = 0; j < d; ++j) {
    for (int k = j + 1; k < d; ++k) {
      CMatrix b = CMatrix::Zero(d, d);
      b(j, k) = inv_sqrt2;
      b(k, j) = inv_sqrt2;
      out.push_back(HermitianMatrix::hermitian_part(b));
    }
  }
  for (int j = 0; j < d; ++j) {
    for (int k = j + 1; k < d; ++k) {
      CMatrix b = CMatrix::Zero(d, d);
      b(j, k) = Complex(0.0, -inv_sqrt2);
      b(k, j) = Complex(0.0, inv_sqrt2);
      out.push_back(HermitianMatrix::hermitian_part(b));
    }
  }
  for (int l = 1; l < d; ++l) {
    const double norm = 1.0 / std::sqrt(static_cast<double>(l) * (l + 1));
    CMatrix b = CMatrix::Zero(d, d);
    for (int j = 0; j < l; ++j) b(j, j) = norm;
    b(l, l) = -static_cast<double>(l) * norm;
    out.push_back(HermitianMatrix::hermitian_part(b));
  }
  return OperatorBasis(d, std::move(out));
}

namespace detail {

struct Eigensystem {
  RVector values;
  CMatrix vectors;
};

inline Eigensystem eigensystem(const HermitianMatrix& h) {
  const CMatrix& m = h.matrix();
  if (!m.allFinite()) throw Error(ErrorKind::Numerical, "eigendecomposition: non-finite matrix entries");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(m);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorKind::Numerical,
                "eigendecomposition did not converge (dim=" + std::to_string(m.rows()) +
                    ", max|h_ij|=" + std::to_string(m.cwiseAbs().maxCoeff()) + ")");
  }
  return {es.eigenvalues(), es.eigenvectors()};
}

inline Complex phase(double angle) { return {std::cos(angle), std::sin(angle)}; }

}  // namespace detail

/// exp(-i s h) via h = V Λ V^†.
inline UnitaryMatrix expm_hermitian(const HermitianMatrix& h, double s) {
  const auto es = detail::eigensystem(h);
  CVector phases(es.values.size());
  for (Eigen::Index k = 0; k < es.values.size(); ++k) phases(k) = detail::phase(-s * es.values(k));
  return UnitaryMatrix::from_trusted(es.vectors * phases.asDiagonal() * es.vectors.adjoint());
}

/// d/dε exp(-i s (h + ε e)) at ε = 0, evaluated in the eigenbasis of h with
/// the divided differences Φ_kl = (e^{-isλ_k} - e^{-isλ_l}) / (λ_k - λ_l),
/// and Φ_kl = -is e^{-isλ_k} when |λ_k - λ_l| < 1e-10.
inline GeneralMatrix expm_directional_derivative(const HermitianMatrix& h, const HermitianMatrix& e, double s) {
  detail::require_same_dim(h.dim(), e.dim(), "expm_directional_derivative");
  const auto es = detail::eigensystem(h);
  const Eigen::Index d = es.values.size();
  const CMatrix rotated = es.vectors.adjoint() * e.matrix() * es.vectors;
  CMatrix phi(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index l = 0; l < d; ++l) {
      const double lk = es.values(k);
      const double ll = es.values(l);
      const double gap = lk - ll;
      if (std::abs(gap) < kDegenerateGap) {
        phi(k, l) = Complex(0.0, -s) * detail::phase(-s * lk);
      } else {
        // (e^{-isλk} - e^{-isλl}) written as e^{-is(λk+λl)/2} (-2i sin(s gap/2))
        // to avoid cancellation for small gaps.
        phi(k, l) = detail::phase(-0.5 * s * (lk + ll)) * Complex(0.0, -2.0 * std::sin(0.5 * s * gap)) / gap;
      }
    }
  }
  return es.vectors * phi.cwiseProduct(rotated) * es.vectors.adjoint();
}

/// Haar-distributed unitary via QR of a complex Ginibre matrix with the
/// R-diagonal phase correction.
inline UnitaryMatrix haar_unitary(int d, RandomStream& rng) {
  if (d < 2) throw Error(ErrorKind::InvalidDimension, "haar_unitary requires d >= 2");
  CMatrix z(d, d);
  for (int c = 0; c < d; ++c) {
    for (int r = 0; r < d; ++r) z(r, c) = rng.complex_normal();
  }
  Eigen::HouseholderQR<CMatrix> qr(z);
  CMatrix q = qr.householderQ();
  const CMatrix& packed = qr.matrixQR();
  for (int k = 0; k < d; ++k) {
    const Complex r = packed(k, k);
    const double mag = std::abs(r);
    if (mag > 0.0) q.col(k) *= r / mag;
  }
  return UnitaryMatrix::from_trusted(std::move(q));
}

/// Uniform random point on the unit sphere of C^d.
inline PureState haar_state(int d, RandomStream& rng) {
  if (d < 2) throw Error(ErrorKind::InvalidDimension, "haar_state requires d >= 2");
  CVector v(d);
  for (int k = 0; k < d; ++k) v(k) = rng.complex_normal();
  return PureState::normalized(v);
}

/// Pauli matrices, handy for presets and tests.
namespace pauli {
inline CMatrix x() { CMatrix m(2, 2); m << 0, 1, 1, 0; return m; }
inline CMatrix y() { CMatrix m(2, 2); m << 0, Complex(0, -1), Complex(0, 1), 0; return m; }
inline CMatrix z() { CMatrix m(2, 2); m << 1, 0, 0, -1; return m; }
inline CMatrix id() { return CMatrix::Identity(2, 2); }
}  // namespace pauli

/// Kronecker product of two dense complex matrices.
inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

}  // namespace qlandscape
