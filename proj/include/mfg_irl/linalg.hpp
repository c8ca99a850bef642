// Small dense linear-algebra helpers: vectorization, half-vectorization,
// symmetric square roots, spectral checks and an ordered complex Schur form.
#pragma once

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mfg_irl/core.hpp"

namespace mfg_irl {

inline Matrix symmetric_part(const Matrix& X) { return 0.5 * (X + X.transpose()); }

/// Frobenius norm of X - X^T relative to max(||X||_F, 1e-300).
inline double relative_asymmetry(const Matrix& X) {
  const double scale = std::max(X.norm(), 1e-300);
  return (X - X.transpose()).norm() / scale;
}

inline bool is_symmetric(const Matrix& X, double rel_tol = 1e-9) {
  return X.rows() == X.cols() && relative_asymmetry(X) <= rel_tol;
}

inline Matrix kron(const Matrix& A, const Matrix& B) {
  return Eigen::kroneckerProduct(A, B).eval();
}

/// Column-stacking vectorization.
inline Vector vec(const Matrix& M) {
  return Eigen::Map<const Vector>(M.data(), M.size());
}

inline Matrix unvec(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols) throw DimensionError("unvec: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

constexpr Index half_vec_size(Index n) { return n * (n + 1) / 2; }

// Ordering for both hat maps: (0,0), (0,1), ..., (0,n-1), (1,1), ..., (n-1,n-1).

/// Data-side hat vector: products x_i x_j for i <= j. Paired with
/// hat_parameters(P) it reproduces x^T P x exactly.
inline Vector hat_products(const Vector& x) {
  const Index n = x.size();
  Vector out(half_vec_size(n));
  Index k = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) out(k++) = x(i) * x(j);
  return out;
}

/// Same as hat_products but applied to a (symmetric) second-moment matrix:
/// entries S_ij for i <= j.
inline Vector hat_products(const Matrix& S) {
  const Index n = S.rows();
  Vector out(half_vec_size(n));
  Index k = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) out(k++) = S(i, j);
  return out;
}

/// Rebuilds x kron x (column-major vec of x x^T) from hat_products(x).
inline Vector kron_from_hat_products(const Vector& hat, Index n) {
  if (hat.size() != half_vec_size(n)) throw DimensionError("kron_from_hat_products: size mismatch");
  Matrix S(n, n);
  Index k = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) {
      S(i, j) = hat(k++);
      S(j, i) = S(i, j);
    }
  return Eigen::Map<const Vector>(S.data(), S.size());
}

/// Parameter-side hat vector: [P_11, 2P_12, ..., 2P_1n, P_22, ..., P_nn].
inline Vector hat_parameters(const Matrix& P) {
  const Index n = P.rows();
  Vector out(half_vec_size(n));
  Index k = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) out(k++) = (i == j) ? P(i, j) : 2.0 * P(i, j);
  return out;
}

/// Inverse of hat_parameters. Off-diagonal hat entries hold 2P_ij.
inline Matrix from_hat_parameters(const Vector& p, Index n) {
  if (p.size() != half_vec_size(n)) throw DimensionError("from_hat_parameters: size mismatch");
  Matrix P(n, n);
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    P(i, i) = p(k++);
    for (Index j = i + 1; j < n; ++j) {
      P(i, j) = 0.5 * p(k++);
      P(j, i) = P(i, j);
    }
  }
  return P;
}

/// Symmetric square root via eigendecomposition; eigenvalues below `clip`
/// are set to zero.
inline Matrix symmetric_sqrt(const Matrix& X, double clip = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric_part(X));
  Vector ev = es.eigenvalues();
  for (Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) < clip ? 0.0 : std::sqrt(ev(i));
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double min_symmetric_eigenvalue(const Matrix& X) {
  if (X.size() == 0) return 0.0;
  return Eigen::SelfAdjointEigenSolver<Matrix>(symmetric_part(X), Eigen::EigenvaluesOnly)
      .eigenvalues()
      .minCoeff();
}

inline ComplexVector eigenvalues(const Matrix& F) {
  if (F.size() == 0) return ComplexVector();
  return Eigen::EigenSolver<Matrix>(F, false).eigenvalues();
}

/// Largest real part of the spectrum.
inline double spectral_abscissa(const Matrix& F) {
  const ComplexVector ev = eigenvalues(F);
  double out = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < ev.size(); ++i) out = std::max(out, ev(i).real());
  return out;
}

inline bool is_hurwitz(const Matrix& F) { return spectral_abscissa(F) < 0.0; }

/// Number of singular values above `threshold`.
inline Index count_above(const Vector& singular_values, double threshold) {
  Index r = 0;
  for (Index i = 0; i < singular_values.size(); ++i)
    if (singular_values(i) > threshold) ++r;
  return r;
}

/// Greedy nearest-neighbour pairing of two spectra; returns the largest
/// distance among matched pairs (infinity if the sizes differ).
inline double matched_spectrum_distance(const ComplexVector& a, const ComplexVector& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  std::vector<bool> used(static_cast<std::size_t>(b.size()), false);
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < b.size(); ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double d = std::abs(a(i) - b(j));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    worst = std::max(worst, best_d);
  }
  return worst;
}

inline Matrix block_diagonal(std::span<const Matrix> blocks) {
  Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Matrix out = Matrix::Zero(rows, cols);
  Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

/// Complex Schur form H = U T U^H with the eigenvalues satisfying
/// Re(lambda) < 0 moved to the leading diagonal positions.
struct OrderedSchur {
  ComplexMatrix T;
  ComplexMatrix U;
  Index leading = 0;  // number of eigenvalues with Re < -axis_tol
  Index trailing = 0; // number with Re > axis_tol
  Index on_axis = 0;
};

inline OrderedSchur ordered_schur_stable_first(const Matrix& H, double axis_tol = 1e-9) {
  Eigen::ComplexSchur<ComplexMatrix> schur(H.cast<Complex>());
  if (schur.info() != Eigen::Success) throw ConvergenceError("complex Schur decomposition failed");
  OrderedSchur out{schur.matrixT(), schur.matrixU()};
  ComplexMatrix& T = out.T;
  ComplexMatrix& U = out.U;
  const Index n = T.rows();

  // Swap diagonal entries k and k+1 with a unitary rotation whose first
  // column is the eigenvector of the 2x2 block belonging to T(k+1,k+1).
  auto swap_adjacent = [&](Index k) {
    const Complex a = T(k, k), b = T(k + 1, k + 1), t = T(k, k + 1);
    Eigen::Vector2cd v(t, b - a);
    const double len = v.norm();
    if (len == 0.0) return;  // identical eigenvalues, nothing to reorder
    v /= len;
    Eigen::Matrix2cd G;
    G << v(0), -std::conj(v(1)), v(1), std::conj(v(0));
    T.middleRows(k, 2) = G.adjoint() * T.middleRows(k, 2);
    T.middleCols(k, 2) = T.middleCols(k, 2) * G;
    U.middleCols(k, 2) = U.middleCols(k, 2) * G;
    T(k + 1, k) = Complex(0.0, 0.0);
  };

  Index placed = 0;
  for (Index i = 0; i < n; ++i) {
    if (T(i, i).real() < -axis_tol) {
      for (Index k = i - 1; k >= placed; --k) swap_adjacent(k);
      ++placed;
    }
  }
  out.leading = placed;
  for (Index i = 0; i < n; ++i) {
    const double re = T(i, i).real();
    if (re > axis_tol) ++out.trailing;
    else if (re >= -axis_tol) ++out.on_axis;
  }
  return out;
}

}  // namespace mfg_irl
