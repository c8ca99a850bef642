// Model-based ground truth: Lyapunov solves, Kleinman policy iteration, the
// Hamiltonian stable-subspace ARE solver and the H_Omega ~ H_Pi diagnostic.
//
// All discounted equations  rho X = Q + X A + A^T X - X B R^{-1} B^T X  are
// handled in shifted form with Abar = A - (rho/2) I:
//   0 = Abar^T X + X Abar - X B R^{-1} B^T X + Q.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mfg_irl/core.hpp"
#include "mfg_irl/linalg.hpp"
#include "mfg_irl/model.hpp"

namespace mfg_irl {

/// Unique X with F^T X + X F + W = 0, via the Kronecker system
/// (I kron F^T + F^T kron I) vec(X) = -vec(W).
inline Matrix solve_lyapunov(const Matrix& F, const Matrix& W, double degeneracy_tol = 1e-12) {
  const Index n = F.rows();
  if (F.cols() != n || W.rows() != n || W.cols() != n)
    throw DimensionError("solve_lyapunov: F and W must be n x n");
  if (n == 0) return Matrix(0, 0);

  const ComplexVector ev = eigenvalues(F);
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j)
      if (std::abs(ev(i) + ev(j)) <= degeneracy_tol * scale)
        throw DegenerateLyapunovError("solve_lyapunov: eigenvalues of F sum to zero");

  const Matrix I = Matrix::Identity(n, n);
  const Matrix Ft = F.transpose();
  const Matrix K = kron(I, Ft) + kron(Ft, I);
  const Vector x = K.partialPivLu().solve(-vec(W));
  Matrix X = unvec(x, n, n);

  if (relative_asymmetry(W) <= 1e-12) {
    if (relative_asymmetry(X) > 1e-8)
      throw DegenerateLyapunovError("solve_lyapunov: solution is not symmetric");
    X = symmetric_part(X);
  }
  return X;
}

/// Relative residual of 0 = Abar^T X + X Abar - X M X + Q, scaled by the sum
/// of the term norms.
inline double are_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                           double rho, const Matrix& X) {
  const Index n = A.rows();
  const Matrix Abar = A - 0.5 * rho * Matrix::Identity(n, n);
  const Matrix M = B * R.llt().solve(B.transpose());
  const Matrix t1 = Abar.transpose() * X, t2 = X * Abar, t3 = X * M * X;
  const Matrix res = t1 + t2 - t3 + Q;
  const double scale = t1.norm() + t2.norm() + t3.norm() + Q.norm();
  return scale > 0.0 ? res.norm() / scale : res.norm();
}

// --- Kleinman iteration -------------------------------------------------------

struct KleinmanStep {
  Matrix iterate;             // X^(l)
  Matrix gain;                // L^(l) = R^{-1} B^T X^(l)
  double spectral_abscissa;   // of A - rho/2 I - B L^(l)
  double step;                // ||X^(l) - X^(l-1)||_F (infinity for l = 1)
  double monotonicity;        // lambda_min(X^(l-1) - X^(l)) (infinity for l = 1)
};

struct KleinmanTrace {
  std::vector<KleinmanStep> steps;
  double initial_abscissa = 0.0;  // of A - rho/2 I - B L0
  bool converged = false;
};

struct KleinmanResult {
  Matrix solution;
  Matrix gain;
  KleinmanTrace trace;
};

struct KleinmanOptions {
  double eps = 1e-9;
  int max_iters = 100;
  double monotonicity_tol = 1e-8;
};

/// Policy iteration: for l = 1, 2, ...
///   (Abar - B L)^T X + X (Abar - B L) + L^T R L + Q = 0,  L <- R^{-1} B^T X.
/// Q may be indefinite (the Omega equation); L0 must be stabilizing.
inline KleinmanResult kleinman_iterate(const Matrix& A, const Matrix& B, const Matrix& Q,
                                       const Matrix& R, double rho, const Matrix& L0,
                                       const KleinmanOptions& opt = {}) {
  const Index n = A.rows(), m = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != m ||
      R.cols() != m || L0.rows() != m || L0.cols() != n)
    throw DimensionError("kleinman_iterate: inconsistent dimensions");
  const Matrix Abar = A - 0.5 * rho * Matrix::Identity(n, n);
  const auto R_llt = R.llt();
  if (R_llt.info() != Eigen::Success)
    throw InvalidArgument("kleinman_iterate: R is not positive definite");

  KleinmanResult out;
  out.trace.initial_abscissa = spectral_abscissa(Abar - B * L0);
  if (!(out.trace.initial_abscissa < 0.0))
    throw NotStabilizingError("kleinman_iterate: initial gain is not stabilizing");

  Matrix L = L0;
  Matrix X_prev;
  for (int iter = 1; iter <= opt.max_iters; ++iter) {
    const Matrix F = Abar - B * L;
    const Matrix X = solve_lyapunov(F, L.transpose() * R * L + Q);
    const Matrix L_next = R_llt.solve(B.transpose() * X);

    KleinmanStep s;
    s.iterate = X;
    s.gain = L_next;
    s.spectral_abscissa = spectral_abscissa(Abar - B * L_next);
    s.step = std::numeric_limits<double>::infinity();
    s.monotonicity = std::numeric_limits<double>::infinity();
    if (iter > 1) {
      s.step = (X - X_prev).norm();
      s.monotonicity = min_symmetric_eigenvalue(X_prev - X);
    }
    out.trace.steps.push_back(s);

    if (!(s.spectral_abscissa < 0.0))
      throw NotStabilizingError("kleinman_iterate: iterate " + std::to_string(iter) +
                                " produced a non-stabilizing gain");
    if (s.monotonicity < -opt.monotonicity_tol)
      throw ConvergenceError("kleinman_iterate: monotonicity violated at iterate " +
                             std::to_string(iter));

    L = L_next;
    X_prev = X;
    if (s.step <= opt.eps) {
      out.trace.converged = true;
      out.solution = X;
      out.gain = L;
      return out;
    }
  }
  throw ConvergenceError("kleinman_iterate: no convergence in " + std::to_string(opt.max_iters) +
                         " iterations");
}

// --- Hamiltonian solver ------------------------------------------------------

struct HamiltonianSolution {
  Matrix X;
  double graph_condition_number = 0.0;
  double closed_loop_abscissa = 0.0;  // of Abar - B R^{-1} B^T X
};

inline Matrix hamiltonian_matrix(const Matrix& A, const Matrix& B, const Matrix& Q,
                                 const Matrix& R, double rho) {
  const Index n = A.rows();
  const Matrix Abar = A - 0.5 * rho * Matrix::Identity(n, n);
  Matrix Hm(2 * n, 2 * n);
  Hm << Abar, -B * R.llt().solve(B.transpose()), -Q, -Abar.transpose();
  return Hm;
}

/// Stabilizing solution X = V2 V1^{-1} from the stable invariant subspace
/// [V1; V2] of the Hamiltonian (ordered complex Schur form).
inline HamiltonianSolution solve_are_hamiltonian(const Matrix& A, const Matrix& B,
                                                 const Matrix& Q, const Matrix& R, double rho,
                                                 double axis_tol = 1e-9,
                                                 double max_condition = 1e12) {
  const Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols())
    throw DimensionError("solve_are_hamiltonian: inconsistent dimensions");
  if (!is_symmetric(Q, 1e-9)) throw InvalidArgument("solve_are_hamiltonian: Q is not symmetric");

  const OrderedSchur schur =
      ordered_schur_stable_first(hamiltonian_matrix(A, B, symmetric_part(Q), R, rho), axis_tol);
  if (schur.leading != n || schur.trailing != n)
    throw SplittingError("solve_are_hamiltonian: Hamiltonian is not strong (" +
                         std::to_string(n) + "," + std::to_string(n) + ") c-splitting (" +
                         std::to_string(schur.leading) + " stable, " +
                         std::to_string(schur.on_axis) + " on axis)");

  const ComplexMatrix V1 = schur.U.topLeftCorner(n, n);
  const ComplexMatrix V2 = schur.U.bottomLeftCorner(n, n);
  const Vector sv = Eigen::JacobiSVD<ComplexMatrix>(V1).singularValues();
  HamiltonianSolution out;
  out.graph_condition_number =
      sv(n - 1) > 0.0 ? sv(0) / sv(n - 1) : std::numeric_limits<double>::infinity();
  if (!(out.graph_condition_number <= max_condition))
    throw SplittingError("solve_are_hamiltonian: stable subspace is not a graph subspace");

  // X = V2 V1^{-1}  <=>  V1^T X^T = V2^T
  const ComplexMatrix Xc = V1.transpose().partialPivLu().solve(V2.transpose()).transpose();
  const double scale = std::max(Xc.norm(), 1e-300);
  if (Xc.imag().norm() > 1e-8 * scale)
    throw SplittingError("solve_are_hamiltonian: stable subspace produced a complex solution");
  Matrix X = Xc.real();
  if (relative_asymmetry(X) > 1e-8)
    throw SplittingError("solve_are_hamiltonian: solution is not symmetric");
  out.X = symmetric_part(X);

  const Matrix Abar = A - 0.5 * rho * Matrix::Identity(n, n);
  out.closed_loop_abscissa = spectral_abscissa(Abar - B * R.llt().solve(B.transpose() * out.X));
  if (!(out.closed_loop_abscissa < 0.0))
    throw NotStabilizingError("solve_are_hamiltonian: solution is not stabilizing");
  return out;
}

/// Utility outside the learning algorithm: an LQR gain for identity weights,
/// used only to seed Kleinman when the shifted open loop is not Hurwitz.
inline Matrix stabilizing_gain(const Matrix& A, const Matrix& B, double rho) {
  const Index n = A.rows(), m = B.cols();
  const Matrix Abar = A - 0.5 * rho * Matrix::Identity(n, n);
  if (is_hurwitz(Abar)) return Matrix::Zero(m, n);
  const auto sol =
      solve_are_hamiltonian(A, B, Matrix::Identity(n, n), Matrix::Identity(m, m), rho);
  return B.transpose() * sol.X;
}

// --- H_Omega ~ H_Pi ------------------------------------------------------------

/// H_Pi = [[Abar - M P, -M], [Q H, -Abar^T + P M]] with M = B R^{-1} B^T.
inline Matrix hamiltonian_pi(const PopulationModel& pop, const Matrix& P) {
  const Index N = pop.N();
  const Matrix Abar = pop.shifted_drift();
  const Matrix M = pop.input_gramian();
  Matrix Hm(2 * N, 2 * N);
  Hm << Abar - M * P, -M, pop.Q * pop.H, -Abar.transpose() + P * M;
  return Hm;
}

struct SimilarityReport {
  ComplexVector omega_spectrum;
  ComplexVector pi_spectrum;
  double max_matched_distance = 0.0;
  double p_residual = 0.0;  // ARE residual of the supplied P
};

inline SimilarityReport hamiltonian_similarity_check(const PopulationModel& pop, const Matrix& P) {
  SimilarityReport rep;
  rep.p_residual = are_residual(pop.A, pop.B, pop.Q, pop.R, pop.rho, P);
  rep.omega_spectrum = eigenvalues(hamiltonian_omega(pop));
  rep.pi_spectrum = eigenvalues(hamiltonian_pi(pop, P));
  rep.max_matched_distance = matched_spectrum_distance(rep.omega_spectrum, rep.pi_spectrum);
  return rep;
}

// --- MFG ground truth ------------------------------------------------------------

/// Feedback gains of the MFG strategy u_k = -L_{P,k} x_k - L_{Pi,k} Xbar.
struct GainSet {
  std::vector<Matrix> class_gains;  // L_{P,k}, m_k x n_k
  Matrix global_gain;               // L_Omega, M x N
  Matrix mean_field_gain;           // L_Pi = L_Omega - diag(L_{P,k}), M x N

  Matrix local_gain_aggregate() const { return block_diagonal(class_gains); }
  /// k-th block row of L_Pi.
  Matrix mean_field_gain_row(const std::vector<Index>& input_offsets, Index k) const {
    return mean_field_gain.middleRows(input_offsets[k], input_offsets[k + 1] - input_offsets[k]);
  }
};

inline GainSet make_gain_set(std::vector<Matrix> class_gains, Matrix global_gain) {
  GainSet g;
  g.class_gains = std::move(class_gains);
  const Matrix LP = block_diagonal(g.class_gains);
  if (LP.rows() != global_gain.rows() || LP.cols() != global_gain.cols())
    throw DimensionError("make_gain_set: class gains do not tile the global gain");
  g.global_gain = std::move(global_gain);
  g.mean_field_gain = g.global_gain - LP;
  return g;
}

struct RiccatiSolution {
  std::vector<Matrix> class_P;  // P_k
  Matrix P;                     // diag(P_k)
  Matrix Omega;
  Matrix Pi;                    // Omega - P
  GainSet gains;
  std::vector<double> class_residuals;  // ARE residual per class
  double omega_residual = 0.0;
  double pi_residual = 0.0;            // residual of the rho Pi equation
  double class_solver_gap = 0.0;       // max ||P_kleinman - P_hamiltonian||_F
  double omega_solver_gap = 0.0;
  double graph_condition_number = 0.0;
  int iterations = 0;                  // max Kleinman iterations used
};

/// Residual of
///   rho Pi = -Q H + Pi (A - M (P + Pi)) + (A^T - P M) Pi,
/// relative to the term norms plus ||Q|| (Pi vanishes without coupling).
inline double pi_equation_residual(const PopulationModel& pop, const Matrix& P, const Matrix& Pi) {
  const Matrix M = pop.input_gramian();
  const Matrix t0 = pop.rho * Pi;
  const Matrix t1 = -pop.Q * pop.H;
  const Matrix t2 = Pi * (pop.A - M * (P + Pi));
  const Matrix t3 = (pop.A.transpose() - P * M) * Pi;
  const double scale = t0.norm() + t1.norm() + t2.norm() + t3.norm() + pop.Q.norm();
  const double res = (t1 + t2 + t3 - t0).norm();
  return scale > 0.0 ? res / scale : res;
}

/// Generator of the mean-field ODE, A - B R^{-1} B^T Omega. Omega = P + Pi by
/// construction of RiccatiSolution, so this is the same matrix.
inline Matrix mean_field_generator(const PopulationModel& pop, const Matrix& global_gain) {
  return pop.A - pop.B * global_gain;
}

struct GroundTruthOptions {
  double eps = 1e-9;
  double solver_agreement = 1e-8;
  double residual_tol = 1e-8;
  double pi_residual_tol = 1e-7;
};

inline RiccatiSolution mfg_ground_truth(const PopulationModel& pop,
                                        const GroundTruthOptions& opt = {}) {
  RiccatiSolution sol;
  KleinmanOptions kopt;
  kopt.eps = opt.eps;
  std::vector<Matrix> class_gains, initial_gains;

  for (Index k = 0; k < pop.num_classes(); ++k) {
    const ClassModel& c = pop.classes[static_cast<std::size_t>(k)];
    const Matrix L0 = stabilizing_gain(c.A, c.B, c.rho);
    initial_gains.push_back(L0);
    const KleinmanResult kl = kleinman_iterate(c.A, c.B, c.Q, c.R, c.rho, L0, kopt);
    const HamiltonianSolution hs = solve_are_hamiltonian(c.A, c.B, c.Q, c.R, c.rho);
    const double gap = (kl.solution - hs.X).norm();
    sol.class_solver_gap = std::max(sol.class_solver_gap, gap);
    if (gap > opt.solver_agreement * std::max(1.0, hs.X.norm()))
      throw ConvergenceError("mfg_ground_truth: Kleinman and Hamiltonian solutions disagree for class " +
                             std::to_string(k));
    const double res = are_residual(c.A, c.B, c.Q, c.R, c.rho, hs.X);
    if (res > opt.residual_tol)
      throw ConvergenceError("mfg_ground_truth: class ARE residual too large");
    sol.class_residuals.push_back(res);
    sol.class_P.push_back(hs.X);
    class_gains.push_back(c.R.llt().solve(c.B.transpose() * hs.X));
    sol.iterations = std::max(sol.iterations, static_cast<int>(kl.trace.steps.size()));
  }
  sol.P = block_diagonal(sol.class_P);

  const Matrix Qeff = pop.coupled_state_weight();
  const HamiltonianSolution hs = solve_are_hamiltonian(pop.A, pop.B, Qeff, pop.R, pop.rho);
  sol.graph_condition_number = hs.graph_condition_number;
  const KleinmanResult kl =
      kleinman_iterate(pop.A, pop.B, Qeff, pop.R, pop.rho, block_diagonal(initial_gains), kopt);
  sol.omega_solver_gap = (kl.solution - hs.X).norm();
  if (sol.omega_solver_gap > opt.solver_agreement * std::max(1.0, hs.X.norm()))
    throw ConvergenceError("mfg_ground_truth: Kleinman and Hamiltonian solutions disagree for Omega");
  sol.iterations = std::max(sol.iterations, static_cast<int>(kl.trace.steps.size()));

  sol.Omega = hs.X;
  sol.omega_residual = are_residual(pop.A, pop.B, Qeff, pop.R, pop.rho, sol.Omega);
  if (sol.omega_residual > opt.residual_tol)
    throw ConvergenceError("mfg_ground_truth: Omega ARE residual too large");
  sol.Pi = sol.Omega - sol.P;
  sol.pi_residual = pi_equation_residual(pop, sol.P, sol.Pi);
  if (sol.pi_residual > opt.pi_residual_tol)
    throw ConvergenceError("mfg_ground_truth: Pi = Omega - P does not satisfy the Pi equation");

  sol.gains = make_gain_set(std::move(class_gains), pop.R.llt().solve(pop.B.transpose() * sol.Omega));
  return sol;
}

}  // namespace mfg_irl
