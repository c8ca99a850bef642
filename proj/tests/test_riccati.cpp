#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mfg_irl/config.hpp"
#include "mfg_irl/riccati.hpp"
#include "support/random_systems.hpp"

namespace {

using namespace mfg_irl;

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

const RiccatiSolution& table1_truth() {
  static const RiccatiSolution t = mfg_ground_truth(build_population(table1_population()));
  return t;
}

TEST(Lyapunov, ScalarAndDiagonal) {
  EXPECT_NEAR(solve_lyapunov(scalar(-1), scalar(2))(0, 0), 1.0, 1e-15);
  const Matrix X = solve_lyapunov((Matrix(2, 2) << -1, 0, 0, -2).finished(), Matrix::Identity(2, 2));
  EXPECT_LT((X - (Matrix(2, 2) << 0.5, 0, 0, 0.25).finished()).norm(), 1e-15);
}

TEST(Lyapunov, RandomStableResidual) {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix F = oracle::randn(g, 4, 4);
    F -= (spectral_abscissa(F) + 0.5) * Matrix::Identity(4, 4);
    const Matrix W = symmetric_part(oracle::randn(g, 4, 4));
    const Matrix X = solve_lyapunov(F, W);
    EXPECT_LT((F.transpose() * X + X * F + W).norm(), 1e-10);
    EXPECT_TRUE(X == X.transpose());
  }
}

TEST(Lyapunov, DegenerateSpectrumThrows) {
  EXPECT_THROW(solve_lyapunov((Matrix(2, 2) << 1, 0, 0, -1).finished(), Matrix::Identity(2, 2)),
               DegenerateLyapunovError);
  EXPECT_THROW(solve_lyapunov(scalar(0), scalar(1)), DegenerateLyapunovError);
}

TEST(Kleinman, ScalarHandIteration) {
  // a=-1, b=q=r=1, rho=0: X1 = 1/2, X2 = 5/12, limit sqrt(2) - 1.
  const auto res = kleinman_iterate(scalar(-1), scalar(1), scalar(1), scalar(1), 0.0, scalar(0));
  ASSERT_GE(res.trace.steps.size(), 3u);
  EXPECT_NEAR(res.trace.steps[0].iterate(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(res.trace.steps[1].iterate(0, 0), 5.0 / 12.0, 1e-15);
  EXPECT_NEAR(res.solution(0, 0), std::sqrt(2.0) - 1.0, 1e-12);
  EXPECT_TRUE(res.trace.converged);
}

TEST(Kleinman, Table1Class1) {
  const auto c = table1_population().classes[0];
  const auto res = kleinman_iterate(c.A, c.B, c.Q, c.R, c.rho, Matrix::Zero(1, 2));
  const Matrix expected = (Matrix(2, 2) << 2.8102, 0.3584, 0.3584, 1.8316).finished();
  EXPECT_LT((res.solution - expected).cwiseAbs().maxCoeff(), 5e-4);
}

TEST(Kleinman, ZeroCostGivesZero) {
  const auto res = kleinman_iterate(scalar(-1), scalar(1), scalar(0), scalar(1), 0.1, scalar(0));
  EXPECT_EQ(res.solution(0, 0), 0.0);
}

TEST(Kleinman, RejectsNonStabilizingStart) {
  EXPECT_THROW(kleinman_iterate(scalar(1), scalar(1), scalar(1), scalar(1), 0.0, scalar(0)),
               NotStabilizingError);
}

TEST(Kleinman, IterationCapIsAnError) {
  KleinmanOptions opt;
  opt.max_iters = 2;
  opt.eps = 0.0;
  EXPECT_THROW(kleinman_iterate(scalar(-1), scalar(1), scalar(1), scalar(1), 0.0, scalar(0), opt),
               ConvergenceError);
}

TEST(Kleinman, PropertyMonotoneAndStabilizing) {
  std::mt19937_64 g(29);
  for (int trial = 0; trial < 20; ++trial) {
    const PopulationModel pop = oracle::random_population(g);
    for (const auto& c : pop.classes) {
      const auto res = kleinman_iterate(c.A, c.B, c.Q, c.R, c.rho, stabilizing_gain(c.A, c.B, c.rho));
      for (std::size_t l = 0; l < res.trace.steps.size(); ++l) {
        EXPECT_LT(res.trace.steps[l].spectral_abscissa, 0.0);
        if (l > 0) {
          EXPECT_GE(res.trace.steps[l].monotonicity, -1e-8);
        }
      }
    }
  }
}

TEST(Hamiltonian, ScalarQuadraticRoot) {
  const auto sol = solve_are_hamiltonian(scalar(-1), scalar(1), scalar(1), scalar(1), 0.0);
  EXPECT_NEAR(sol.X(0, 0), std::sqrt(2.0) - 1.0, 1e-14);
  EXPECT_LT(sol.closed_loop_abscissa, 0.0);
}

TEST(Hamiltonian, AgreesWithKleinmanOnSameEquation) {
  std::mt19937_64 g(31);
  for (int trial = 0; trial < 20; ++trial) {
    oracle::RandomPopulationOptions opt;
    opt.max_classes = 1;
    opt.max_state = 5;
    opt.max_input = 3;
    const ClassModel c = oracle::random_population(g, opt).classes.front();
    const auto h = solve_are_hamiltonian(c.A, c.B, c.Q, c.R, c.rho);
    const auto k = kleinman_iterate(c.A, c.B, c.Q, c.R, c.rho, stabilizing_gain(c.A, c.B, c.rho));
    EXPECT_LT((h.X - k.solution).norm(), 1e-9);
    EXPECT_LT(are_residual(c.A, c.B, c.Q, c.R, c.rho, h.X), 1e-12);
  }
}

TEST(Hamiltonian, RejectsNoSplitting) {
  // Uncontrollable, unobservable axis mode.
  EXPECT_THROW(solve_are_hamiltonian(scalar(0.05), scalar(0), scalar(0), scalar(1), 0.1), SplittingError);
}

TEST(GroundTruth, Table1Values) {
  const auto& t = table1_truth();
  const Matrix P1 = (Matrix(2, 2) << 2.8102, 0.3584, 0.3584, 1.8316).finished();
  const Matrix LP2 =
      (Matrix(2, 3) << -0.4233, -0.6794, 2.9314, 3.6677, 5.5738, 0.5616).finished();
  EXPECT_LT((t.class_P[0] - P1).cwiseAbs().maxCoeff(), 5e-4);
  EXPECT_LT((t.gains.class_gains[1] - LP2).cwiseAbs().maxCoeff(), 5e-4);
  EXPECT_LT((t.gains.class_gains[2] - (Matrix(1, 2) << -3.6908, 6.0446).finished()).cwiseAbs().maxCoeff(), 5e-4);
  EXPECT_NEAR(t.Omega(0, 0), 2.7111, 5e-4);
  EXPECT_NEAR(2.0 * t.Omega(0, 1), 0.7514, 5e-4);
  EXPECT_NEAR(2.0 * t.Omega(0, 2), -1.2599, 5e-4);
  EXPECT_NEAR(t.Omega(5, 5), 9.5677, 5e-4);
  EXPECT_NEAR(t.gains.global_gain(0, 0), 3.8585, 5e-4);
  EXPECT_NEAR(t.gains.global_gain(0, 1), 2.7032, 5e-4);
  EXPECT_NEAR(t.gains.global_gain(1, 2), -0.4515, 5e-4);
  EXPECT_NEAR(t.gains.global_gain(2, 5), -1.3572, 5e-4);
}

TEST(GroundTruth, Table1Invariants) {
  const PopulationModel pop = build_population(table1_population());
  const auto& t = table1_truth();
  for (const auto& P : t.class_P) {
    EXPECT_TRUE(P == P.transpose());
    EXPECT_GT(min_symmetric_eigenvalue(P), 0.0);
  }
  EXPECT_TRUE(t.Pi == t.Omega - t.P);
  for (double r : t.class_residuals) EXPECT_LT(r, 1e-8);
  EXPECT_LT(t.omega_residual, 1e-8);
  EXPECT_LT(t.pi_residual, 1e-7);
  EXPECT_LT(t.class_solver_gap, 1e-8);
  EXPECT_LT(spectral_abscissa(pop.shifted_drift() - pop.input_gramian() * t.Omega), 0.0);
}

TEST(GroundTruth, GeneratorIdentity) {
  // A - M (P + Pi) against A - M Omega; Pi = Omega - P is floating point so
  // the two agree to rounding, not bit for bit.
  const PopulationModel pop = build_population(table1_population());
  const auto& t = table1_truth();
  const Matrix M = pop.input_gramian();
  const Matrix a = pop.A - M * (t.P + t.Pi), b = pop.A - M * t.Omega;
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 8 * std::numeric_limits<double>::epsilon() * b.cwiseAbs().maxCoeff());
  EXPECT_TRUE(mean_field_generator(pop, t.gains.global_gain) == pop.A - pop.B * t.gains.global_gain);
}

TEST(GroundTruth, GainAlgebra) {
  const auto& g = table1_truth().gains;
  const Matrix sum = g.mean_field_gain + g.local_gain_aggregate();
  const double ulp = std::numeric_limits<double>::epsilon() * g.global_gain.cwiseAbs().maxCoeff();
  EXPECT_LE((sum - g.global_gain).cwiseAbs().maxCoeff(), 2 * ulp);
  // Off the block diagonal L_Pi is L_Omega exactly.
  const Matrix off = g.global_gain - g.local_gain_aggregate();
  EXPECT_TRUE(g.mean_field_gain == off);
  EXPECT_TRUE(g.mean_field_gain.block(0, 2, 1, 5) == g.global_gain.block(0, 2, 1, 5));
}

TEST(GroundTruth, UncoupledPopulationHasZeroPi) {
  PopulationSpec spec = table1_population();
  spec.Htilde = Matrix::Zero(7, 7);
  const auto t = mfg_ground_truth(build_population(spec));
  EXPECT_LT(t.Pi.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((t.Omega - t.P).norm(), 1e-9);
}

TEST(GroundTruth, ClassSwapSymmetry) {
  ClassModel c;
  c.A = scalar(-0.5);
  c.B = scalar(1);
  c.Q = scalar(2);
  c.R = scalar(1);
  c.D = scalar(0.1);
  c.rho = 0.1;
  const Matrix Ht = (Matrix(2, 2) << 0, 1, 1, 0).finished();
  const std::vector<Index> dims{1, 1};
  const Matrix H = 0.6 * build_coupling_matrix(2.0 * Matrix::Identity(2, 2), Ht, dims);
  const auto t = mfg_ground_truth(assemble_population({c, c}, H));
  Matrix S(2, 2);
  S << 0, 1, 1, 0;
  EXPECT_LT((S * t.Omega * S - t.Omega).norm(), 1e-12);
}

TEST(Similarity, Table1SpectraMatch) {
  const PopulationModel pop = build_population(table1_population());
  const auto rep = hamiltonian_similarity_check(pop, table1_truth().P);
  EXPECT_LT(rep.max_matched_distance, 1e-8);
  EXPECT_EQ(rep.omega_spectrum.size(), 14);
}

TEST(Similarity, UncoupledIsBlockTriangular) {
  PopulationSpec spec = table1_population();
  spec.Htilde = Matrix::Zero(7, 7);
  const PopulationModel pop = build_population(spec);
  const auto t = mfg_ground_truth(pop);
  const Matrix HPi = hamiltonian_pi(pop, t.P);
  EXPECT_EQ(HPi.bottomLeftCorner(7, 7).cwiseAbs().maxCoeff(), 0.0);
  const Matrix M = pop.input_gramian(), Abar = pop.shifted_drift();
  ComplexVector expected(14);
  expected << eigenvalues(Abar - M * t.P), eigenvalues(-Abar.transpose() + t.P * M);
  EXPECT_LT(matched_spectrum_distance(eigenvalues(HPi), expected), 1e-9);
}

TEST(Similarity, ScalarCase) {
  ClassModel c;
  c.A = scalar(-1);
  c.B = c.Q = c.R = scalar(1);
  c.D = scalar(0);
  c.rho = 0.0;
  const PopulationModel pop = assemble_population({c}, Matrix::Zero(1, 1));
  const Matrix P = scalar(std::sqrt(2.0) - 1.0);
  const auto rep = hamiltonian_similarity_check(pop, P);
  ComplexVector expected(2);
  expected << Complex(-std::sqrt(2.0), 0), Complex(std::sqrt(2.0), 0);
  EXPECT_LT(matched_spectrum_distance(rep.omega_spectrum, expected), 1e-12);
  EXPECT_LT(matched_spectrum_distance(rep.pi_spectrum, expected), 1e-12);
}

TEST(Similarity, RandomSystems) {
  std::mt19937_64 g(37);
  for (int trial = 0; trial < 20; ++trial) {
    const PopulationModel pop = oracle::random_population(g);
    const auto t = mfg_ground_truth(pop);
    EXPECT_LT(hamiltonian_similarity_check(pop, t.P).max_matched_distance, 1e-8);
    EXPECT_LT(t.pi_residual, 1e-7);
  }
}

TEST(StabilizingGain, FallbackStabilizes) {
  std::mt19937_64 g(41);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = oracle::random_class(g, 3, 1, 0.1);
    if (!is_stabilizable(c.A - 0.05 * Matrix::Identity(3, 3), c.B)) continue;
    const Matrix L = stabilizing_gain(c.A, c.B, c.rho);
    EXPECT_LT(spectral_abscissa(c.A - 0.05 * Matrix::Identity(3, 3) - c.B * L), 0.0);
  }
}

TEST(OrderedSchur, StableBlockLeads) {
  std::mt19937_64 g(43);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix Hm = oracle::randn(g, 6, 6);
    const auto s = ordered_schur_stable_first(Hm);
    EXPECT_LT((s.U * s.T * s.U.adjoint() - Hm.cast<Complex>()).norm(), 1e-10 * Hm.norm());
    for (Index i = 0; i < 6; ++i) {
      if (i < s.leading) EXPECT_LT(s.T(i, i).real(), 0.0);
      else EXPECT_GE(s.T(i, i).real(), -1e-9);
      for (Index j = 0; j < i; ++j) EXPECT_EQ(std::abs(s.T(i, j)), 0.0);
    }
  }
}

}  // namespace
