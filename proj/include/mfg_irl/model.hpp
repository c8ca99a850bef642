// Agent classes, the coupled population and the standing-assumption checks.
#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mfg_irl/core.hpp"
#include "mfg_irl/linalg.hpp"

namespace mfg_irl {

/// One agent class: dx = (A x + B u) dt + D dw with discounted cost weights
/// Q (state tracking) and R (control).
struct ClassModel {
  Matrix A, B, D, Q, R;
  double rho = 0.0;

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }
  Index d() const { return D.cols(); }
};

/// Ordered classes plus the network coupling matrix H and the block
/// diagonal aggregates.
struct PopulationModel {
  std::vector<ClassModel> classes;
  Matrix H;
  Matrix A, B, Q, R, D;
  std::vector<Index> state_offsets;  // size K+1, state_offsets[K] == N
  std::vector<Index> input_offsets;  // size K+1
  std::vector<Index> noise_offsets;  // size K+1
  double rho = 0.0;

  Index num_classes() const { return static_cast<Index>(classes.size()); }
  Index N() const { return state_offsets.back(); }
  Index M() const { return input_offsets.back(); }

  Index state_dim(Index k) const { return state_offsets[k + 1] - state_offsets[k]; }
  Index input_dim(Index k) const { return input_offsets[k + 1] - input_offsets[k]; }

  std::vector<Index> state_dims() const {
    std::vector<Index> out;
    for (Index k = 0; k < num_classes(); ++k) out.push_back(state_dim(k));
    return out;
  }
  std::vector<Index> input_dims() const {
    std::vector<Index> out;
    for (Index k = 0; k < num_classes(); ++k) out.push_back(input_dim(k));
    return out;
  }

  /// Q (I - H) as stored, without symmetrization.
  Matrix coupled_state_weight_raw() const {
    return Q * (Matrix::Identity(N(), N()) - H);
  }
  /// Symmetric part of Q (I - H); the weight used by the Omega equation.
  Matrix coupled_state_weight() const { return symmetric_part(coupled_state_weight_raw()); }

  /// B R^{-1} B^T.
  Matrix input_gramian() const { return B * R.llt().solve(B.transpose()); }

  /// A - (rho/2) I.
  Matrix shifted_drift() const { return A - 0.5 * rho * Matrix::Identity(N(), N()); }
};

/// The cost-side data a model-free learner is allowed to see.
struct CostModel {
  double rho = 0.0;
  std::vector<Index> state_dims;
  std::vector<Index> input_dims;
  std::vector<Matrix> Q;  // per class
  std::vector<Matrix> R;  // per class
  Matrix coupled_Q;       // symmetric Q(I - H), N x N
  Matrix R_aggregate;     // M x M

  Index num_classes() const { return static_cast<Index>(Q.size()); }
  Index N() const { return coupled_Q.rows(); }
  Index M() const { return R_aggregate.rows(); }
};

inline CostModel cost_model(const PopulationModel& pop) {
  CostModel c;
  c.rho = pop.rho;
  c.state_dims = pop.state_dims();
  c.input_dims = pop.input_dims();
  for (const auto& cls : pop.classes) {
    c.Q.push_back(cls.Q);
    c.R.push_back(cls.R);
  }
  c.coupled_Q = pop.coupled_state_weight();
  c.R_aggregate = pop.R;
  return c;
}

namespace detail {

inline void check_class_shapes(const ClassModel& c, std::size_t k) {
  const auto fail = [&](const std::string& what) {
    throw DimensionError("class " + std::to_string(k) + ": " + what);
  };
  const Index n = c.A.rows();
  if (n == 0 || c.A.cols() != n) fail("A must be square and non-empty");
  if (c.B.rows() != n || c.B.cols() == 0) fail("B must have n rows and at least one column");
  if (c.D.rows() != n) fail("D must have n rows");
  if (c.Q.rows() != n || c.Q.cols() != n) fail("Q must be n x n");
  if (c.R.rows() != c.B.cols() || c.R.cols() != c.B.cols()) fail("R must be m x m");
}

}  // namespace detail

/// Builds the aggregates. Performs shape checks only; assumptions are
/// checked by validate_assumptions().
inline PopulationModel assemble_population(std::vector<ClassModel> classes, const Matrix& H) {
  if (classes.empty()) throw DimensionError("assemble_population: no classes");
  PopulationModel pop;
  pop.rho = classes.front().rho;
  pop.state_offsets = {0};
  pop.input_offsets = {0};
  pop.noise_offsets = {0};
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& c = classes[k];
    detail::check_class_shapes(c, k);
    if (c.rho != pop.rho)
      throw InvalidArgument("assemble_population: class " + std::to_string(k) +
                            " has a different discount rate");
    pop.state_offsets.push_back(pop.state_offsets.back() + c.n());
    pop.input_offsets.push_back(pop.input_offsets.back() + c.m());
    pop.noise_offsets.push_back(pop.noise_offsets.back() + c.d());
  }
  const Index N = pop.state_offsets.back();
  if (H.rows() != N || H.cols() != N)
    throw DimensionError("assemble_population: H is " + std::to_string(H.rows()) + "x" +
                         std::to_string(H.cols()) + " but the classes need " +
                         std::to_string(N) + "x" + std::to_string(N));

  std::vector<Matrix> As, Bs, Qs, Rs, Ds;
  for (const auto& c : classes) {
    As.push_back(c.A);
    Bs.push_back(c.B);
    Qs.push_back(c.Q);
    Rs.push_back(c.R);
    Ds.push_back(c.D);
  }
  pop.A = block_diagonal(As);
  pop.B = block_diagonal(Bs);
  pop.Q = block_diagonal(Qs);
  pop.R = block_diagonal(Rs);
  pop.D = block_diagonal(Ds);
  pop.H = H;
  pop.classes = std::move(classes);
  return pop;
}

/// Coupling matrix H = (U L^{-1/2} U^T) (Htilde / lambda_max) (U L^{1/2} U^T)
/// from the eigendecomposition Q = U L U^T. Q(I - H) is symmetric by
/// construction. `block_sizes` is the class partition used to check that the
/// diagonal blocks of Htilde vanish.
inline Matrix build_coupling_matrix(const Matrix& Q, const Matrix& Htilde,
                                    std::span<const Index> block_sizes, double tol = 1e-9) {
  const Index N = Q.rows();
  if (Q.cols() != N || Htilde.rows() != N || Htilde.cols() != N)
    throw DimensionError("build_coupling_matrix: Q and Htilde must both be N x N");
  Index total = 0;
  for (Index s : block_sizes) total += s;
  if (total != N) throw DimensionError("build_coupling_matrix: block sizes do not sum to N");
  if (!is_symmetric(Q, tol)) throw InvalidArgument("build_coupling_matrix: Q is not symmetric");
  if (!is_symmetric(Htilde, tol))
    throw InvalidArgument("build_coupling_matrix: Htilde is not symmetric");

  Index off = 0;
  for (Index s : block_sizes) {
    if (Htilde.block(off, off, s, s).cwiseAbs().maxCoeff() > 0.0)
      throw InvalidArgument("build_coupling_matrix: Htilde has a nonzero diagonal block");
    off += s;
  }

  if (Htilde.cwiseAbs().maxCoeff() == 0.0) return Matrix::Zero(N, N);

  Eigen::SelfAdjointEigenSolver<Matrix> qe(symmetric_part(Q));
  const Vector lam = qe.eigenvalues();
  if (lam.minCoeff() <= tol * std::max(1.0, lam.maxCoeff()))
    throw InvalidArgument("build_coupling_matrix: Q is singular or indefinite");

  const double lambda_max =
      Eigen::SelfAdjointEigenSolver<Matrix>(symmetric_part(Htilde), Eigen::EigenvaluesOnly)
          .eigenvalues()
          .maxCoeff();
  if (lambda_max <= 0.0)
    throw InvalidArgument("build_coupling_matrix: largest eigenvalue of Htilde is not positive");

  const Matrix& U = qe.eigenvectors();
  const Matrix inv_sqrt = U * lam.cwiseSqrt().cwiseInverse().asDiagonal() * U.transpose();
  const Matrix sqrt = U * lam.cwiseSqrt().asDiagonal() * U.transpose();
  return inv_sqrt * (Htilde / lambda_max) * sqrt;
}

// --- assumption checks ------------------------------------------------------

namespace detail {

inline bool full_rank(const ComplexMatrix& M, double rel_tol) {
  const Index need = std::min(M.rows(), M.cols());
  Eigen::JacobiSVD<ComplexMatrix> svd(M);
  const auto& s = svd.singularValues();
  if (s.size() < need || s.size() == 0) return false;
  return s(need - 1) > rel_tol * s(0);
}

}  // namespace detail

/// PBH test: rank [F - lambda I, G] = n for every eigenvalue with Re >= 0.
inline bool is_stabilizable(const Matrix& F, const Matrix& G, double rel_tol = 1e-9) {
  const Index n = F.rows();
  const ComplexVector ev = eigenvalues(F);
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev(i).real() < -rel_tol * std::max(1.0, std::abs(ev(i)))) continue;
    ComplexMatrix pbh(n, n + G.cols());
    pbh << F.cast<Complex>() - ev(i) * ComplexMatrix::Identity(n, n), G.cast<Complex>();
    if (!detail::full_rank(pbh, rel_tol)) return false;
  }
  return true;
}

/// PBH test: rank [F - lambda I; C] = n for every eigenvalue of F.
inline bool is_observable(const Matrix& F, const Matrix& C, double rel_tol = 1e-9) {
  const Index n = F.rows();
  const ComplexVector ev = eigenvalues(F);
  for (Index i = 0; i < ev.size(); ++i) {
    ComplexMatrix pbh(n + C.rows(), n);
    pbh << F.cast<Complex>() - ev(i) * ComplexMatrix::Identity(n, n), C.cast<Complex>();
    if (!detail::full_rank(pbh, rel_tol)) return false;
  }
  return true;
}

/// H_Omega = [[A - rho/2 I, -B R^{-1} B^T], [-Q(I - H), -A^T + rho/2 I]].
inline Matrix hamiltonian_omega(const PopulationModel& pop) {
  const Index N = pop.N();
  const Matrix Abar = pop.shifted_drift();
  Matrix Hm(2 * N, 2 * N);
  Hm << Abar, -pop.input_gramian(), -pop.coupled_state_weight(), -Abar.transpose();
  return Hm;
}

struct ClassAssumptions {
  bool q_psd = false;
  bool r_pd = false;
  bool stabilizable = false;
  bool observable = false;
};

struct AssumptionReport {
  std::vector<ClassAssumptions> classes;
  bool aggregate_stabilizable = false;
  bool aggregate_observable = false;
  double coupled_q_asymmetry = 0.0;  // ||Q(I-H) - (Q(I-H))^T||_F / ||Q||_F
  bool coupled_q_symmetric = false;
  Index stable_count = 0;     // Re < -axis_tol
  Index unstable_count = 0;   // Re > axis_tol
  Index on_axis_count = 0;    // |Re| <= axis_tol
  double graph_condition_number = 0.0;  // cond of the top block of the stable basis
  bool graph_subspace = false;

  bool c_splitting(Index N) const {
    return stable_count == N && unstable_count == N && on_axis_count == 0;
  }

  bool passed(Index N) const {
    for (const auto& c : classes)
      if (!(c.q_psd && c.r_pd && c.stabilizable && c.observable)) return false;
    return aggregate_stabilizable && aggregate_observable && coupled_q_symmetric &&
           c_splitting(N) && graph_subspace;
  }

  std::vector<std::string> failures(Index N) const {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      const auto tag = "class " + std::to_string(k) + ": ";
      if (!classes[k].q_psd) out.push_back(tag + "Q is not symmetric positive semidefinite");
      if (!classes[k].r_pd) out.push_back(tag + "R is not symmetric positive definite");
      if (!classes[k].stabilizable) out.push_back(tag + "(A - rho/2 I, B) is not stabilizable");
      if (!classes[k].observable) out.push_back(tag + "(A - rho/2 I, Q^1/2) is not observable");
    }
    if (!aggregate_stabilizable) out.push_back("aggregate pair is not stabilizable");
    if (!aggregate_observable) out.push_back("aggregate pair is not observable");
    if (!coupled_q_symmetric) out.push_back("Q(I - H) is not symmetric");
    if (!c_splitting(N)) {
      std::ostringstream os;
      os << "H_Omega is not strong (" << N << "," << N << ") c-splitting: " << stable_count
         << " stable, " << unstable_count << " unstable, " << on_axis_count << " on axis";
      out.push_back(os.str());
    }
    if (c_splitting(N) && !graph_subspace)
      out.push_back("stable invariant subspace of H_Omega is not a graph subspace");
    return out;
  }
};

struct ValidationTolerances {
  double symmetry = 1e-9;          // relative Frobenius
  double rank = 1e-9;              // sigma_min > rank * sigma_max
  double axis = 1e-9;              // |Re lambda| <= axis counts as on the axis
  double max_graph_condition = 1e12;
};

inline AssumptionReport validate_assumptions(const PopulationModel& pop,
                                             const ValidationTolerances& tol = {}) {
  AssumptionReport rep;
  for (const auto& c : pop.classes) {
    ClassAssumptions ca;
    const Matrix shifted = c.A - 0.5 * c.rho * Matrix::Identity(c.n(), c.n());
    ca.q_psd = is_symmetric(c.Q, tol.symmetry) &&
               min_symmetric_eigenvalue(c.Q) >= -tol.symmetry * std::max(1.0, c.Q.norm());
    ca.r_pd = is_symmetric(c.R, tol.symmetry) &&
              min_symmetric_eigenvalue(c.R) > tol.symmetry * std::max(1.0, c.R.norm());
    ca.stabilizable = is_stabilizable(shifted, c.B, tol.rank);
    ca.observable = is_observable(shifted, symmetric_sqrt(c.Q), tol.rank);
    rep.classes.push_back(ca);
  }
  const Matrix Abar = pop.shifted_drift();
  rep.aggregate_stabilizable = is_stabilizable(Abar, pop.B, tol.rank);
  rep.aggregate_observable = is_observable(Abar, symmetric_sqrt(pop.Q), tol.rank);

  const Matrix qh = pop.coupled_state_weight_raw();
  rep.coupled_q_asymmetry = (qh - qh.transpose()).norm() / std::max(pop.Q.norm(), 1e-300);
  rep.coupled_q_symmetric = rep.coupled_q_asymmetry <= tol.symmetry;

  const Index N = pop.N();
  const OrderedSchur schur = ordered_schur_stable_first(hamiltonian_omega(pop), tol.axis);
  rep.stable_count = schur.leading;
  rep.unstable_count = schur.trailing;
  rep.on_axis_count = schur.on_axis;
  if (rep.c_splitting(N)) {
    const ComplexMatrix V1 = schur.U.topLeftCorner(N, N);
    const Vector s = Eigen::JacobiSVD<ComplexMatrix>(V1).singularValues();
    rep.graph_condition_number =
        s(N - 1) > 0.0 ? s(0) / s(N - 1) : std::numeric_limits<double>::infinity();
    rep.graph_subspace = rep.graph_condition_number <= tol.max_graph_condition;
  } else {
    rep.graph_condition_number = std::numeric_limits<double>::infinity();
  }
  return rep;
}

}  // namespace mfg_irl
