// Model-free learner. Everything here consumes trajectory data and cost
// weights only; A, B and D never enter.
//
// For a window [t, t+dt] the Ito identity of e^{-rho t} x^T P x under the
// Kleinman step with gain L gives, in Kronecker form,
//
//   delta_hat^T p_hat - 2 [I_xa^T (I kron R) + I_xx^T (I kron L^T R)] vec(K)
//     + delta_rho theta = -I_xx^T vec(L^T R L + Q)
//
// with p_hat = hat_parameters(P), K = R^{-1} B^T P and theta = Tr(D D^T P)/rho.
// Stacking l windows yields Xi [p_hat; vec(K); theta] = target.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mfg_irl/core.hpp"
#include "mfg_irl/linalg.hpp"
#include "mfg_irl/model.hpp"
#include "mfg_irl/riccati.hpp"
#include "mfg_irl/simulator.hpp"

namespace mfg_irl {

struct WindowSet {
  std::vector<double> starts;
  double length = 0.0;

  Index count() const { return static_cast<Index>(starts.size()); }
  double end() const { return starts.empty() ? 0.0 : starts.back() + length; }
};

/// Back-to-back windows t_{j+1} = t_j + dt starting at t0.
inline WindowSet contiguous_windows(double t0, double dt, Index count) {
  if (!(dt > 0.0)) throw InvalidArgument("contiguous_windows: window length must be positive");
  if (count <= 0) throw InvalidArgument("contiguous_windows: need at least one window");
  WindowSet w;
  w.length = dt;
  for (Index j = 0; j < count; ++j) w.starts.push_back(t0 + static_cast<double>(j) * dt);
  return w;
}

enum class Quadrature {
  kLeftPoint,    // Ito-consistent rectangle rule (default)
  kTrapezoidal,
};

/// Raw, iteration-independent regression data for one class or for the
/// augmented system.
struct RawStacks {
  Matrix delta_hat;  // l x n(n+1)/2, rows are e^{-rho(t+dt)} xhat(t+dt) - e^{-rho t} xhat(t)
  Matrix xx;         // l x n^2, rows are the discounted integrals of x kron x
  Matrix xalpha;     // l x n m, rows are the discounted integrals of x kron alpha
};

struct DataMatrices {
  double rho = 0.0;
  std::vector<Index> state_dims;
  std::vector<Index> input_dims;
  WindowSet windows;
  Index runs = 0;
  std::vector<RawStacks> classes;
  RawStacks global;
  Vector delta_rho;     // e^{-rho(t+dt)} - e^{-rho t}
  Matrix global_xx_stderr;  // Monte Carlo standard error of global.xx (zero if runs == 1)

  Index N() const {
    Index n = 0;
    for (Index d : state_dims) n += d;
    return n;
  }
};

namespace detail {

/// Expectation-level window quantities for the augmented state.
struct WindowMoments {
  Matrix xx;     // N x N, integral of e^{-rho tau} x x^T
  Matrix ax;     // M x N, integral of e^{-rho tau} alpha x^T
  Matrix ends;   // N x N, e^{-rho(t+dt)} x x^T(t+dt) - e^{-rho t} x x^T(t)
};

inline std::vector<Index> offsets_of(const std::vector<Index>& dims) {
  std::vector<Index> off{0};
  for (Index d : dims) off.push_back(off.back() + d);
  return off;
}

inline RawStacks stack_block(const std::vector<WindowMoments>& mom, Index s0, Index n, Index a0,
                             Index m) {
  const auto l = static_cast<Index>(mom.size());
  RawStacks out;
  out.delta_hat.resize(l, half_vec_size(n));
  out.xx.resize(l, n * n);
  out.xalpha.resize(l, n * m);
  for (Index j = 0; j < l; ++j) {
    const auto& w = mom[static_cast<std::size_t>(j)];
    out.delta_hat.row(j) = hat_products(Matrix(w.ends.block(s0, s0, n, n))).transpose();
    out.xx.row(j) = vec(w.xx.block(s0, s0, n, n)).transpose();
    // vec of the m x n block alpha x^T is x kron alpha.
    out.xalpha.row(j) = vec(w.ax.block(a0, s0, m, n)).transpose();
  }
  return out;
}

inline DataMatrices to_data_matrices(const std::vector<WindowMoments>& mom, double rho,
                                     const std::vector<Index>& state_dims,
                                     const std::vector<Index>& input_dims,
                                     const WindowSet& windows, Index runs) {
  DataMatrices d;
  d.rho = rho;
  d.state_dims = state_dims;
  d.input_dims = input_dims;
  d.windows = windows;
  d.runs = runs;
  const auto so = offsets_of(state_dims);
  const auto io = offsets_of(input_dims);
  for (std::size_t k = 0; k < state_dims.size(); ++k)
    d.classes.push_back(stack_block(mom, so[k], state_dims[k], io[k], input_dims[k]));
  d.global = stack_block(mom, 0, so.back(), 0, io.back());
  d.delta_rho.resize(windows.count());
  for (Index j = 0; j < windows.count(); ++j) {
    const double t = windows.starts[static_cast<std::size_t>(j)];
    d.delta_rho(j) = std::exp(-rho * (t + windows.length)) - std::exp(-rho * t);
  }
  return d;
}

inline Index aligned_index(double t, double h, const char* what) {
  const double ratio = t / h;
  const auto idx = static_cast<Index>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(idx)) > 1e-6)
    throw InvalidArgument(std::string("window ") + what + " is not aligned with the time grid");
  return idx;
}

}  // namespace detail

/// Monte Carlo estimates of the discounted data integrals over each window:
/// per-run quadrature of the products, then the mean across runs.
inline DataMatrices compute_data_integrals(const TrajectoryEnsemble& ens, const WindowSet& windows,
                                           Quadrature rule = Quadrature::kLeftPoint) {
  if (ens.runs() == 0) throw InvalidArgument("compute_data_integrals: empty ensemble");
  if (windows.count() == 0) throw InvalidArgument("compute_data_integrals: no windows");
  const Index N = ens.N(), M = ens.M(), l = windows.count();
  const Index w = detail::aligned_index(windows.length, ens.h, "length");
  if (w < 1) throw InvalidArgument("compute_data_integrals: windows need at least two grid points");

  std::vector<Index> first(static_cast<std::size_t>(l));
  for (Index j = 0; j < l; ++j) {
    const double t = windows.starts[static_cast<std::size_t>(j)];
    if (j > 0 && !(t > windows.starts[static_cast<std::size_t>(j - 1)]))
      throw InvalidArgument("compute_data_integrals: window starts must increase");
    if (t < 0.0) throw InvalidArgument("compute_data_integrals: window starts before t = 0");
    first[static_cast<std::size_t>(j)] = detail::aligned_index(t, ens.h, "start");
    if (first[static_cast<std::size_t>(j)] + w > ens.steps)
      throw InvalidArgument("compute_data_integrals: window extends past the ensemble horizon");
  }

  std::vector<double> disc(static_cast<std::size_t>(ens.grid_points()));
  for (Index j = 0; j < ens.grid_points(); ++j)
    disc[static_cast<std::size_t>(j)] = std::exp(-ens.rho * ens.time(j));

  std::vector<detail::WindowMoments> mom(static_cast<std::size_t>(l),
                                         {Matrix::Zero(N, N), Matrix::Zero(M, N), Matrix::Zero(N, N)});
  Matrix xx_sum_sq = Matrix::Zero(l, N * N);
  Matrix xx_run(N, N), ax_run(M, N);

  for (Index r = 0; r < ens.runs(); ++r) {
    const Matrix& X = ens.states[static_cast<std::size_t>(r)];
    const Matrix& U = ens.inputs[static_cast<std::size_t>(r)];
    for (Index j = 0; j < l; ++j) {
      const Index s = first[static_cast<std::size_t>(j)];
      xx_run.setZero();
      ax_run.setZero();
      const Index last = rule == Quadrature::kLeftPoint ? s + w - 1 : s + w;
      for (Index i = s; i <= last; ++i) {
        double wt = ens.h * disc[static_cast<std::size_t>(i)];
        if (rule == Quadrature::kTrapezoidal && (i == s || i == s + w)) wt *= 0.5;
        xx_run.noalias() += (wt * X.col(i)) * X.col(i).transpose();
        ax_run.noalias() += (wt * U.col(i)) * X.col(i).transpose();
      }
      auto& m = mom[static_cast<std::size_t>(j)];
      m.xx += xx_run;
      m.ax += ax_run;
      m.ends.noalias() += (disc[static_cast<std::size_t>(s + w)] * X.col(s + w)) * X.col(s + w).transpose();
      m.ends.noalias() -= (disc[static_cast<std::size_t>(s)] * X.col(s)) * X.col(s).transpose();
      xx_sum_sq.row(j) += vec(xx_run).cwiseAbs2().transpose();
    }
  }

  const double inv_runs = 1.0 / static_cast<double>(ens.runs());
  for (auto& m : mom) {
    m.xx *= inv_runs;
    m.ax *= inv_runs;
    m.ends *= inv_runs;
  }
  DataMatrices d = detail::to_data_matrices(mom, ens.rho, ens.state_dims, ens.input_dims, windows,
                                            ens.runs());
  d.global_xx_stderr = Matrix::Zero(l, N * N);
  if (ens.runs() > 1) {
    const double R = static_cast<double>(ens.runs());
    for (Index j = 0; j < l; ++j) {
      const Vector mean = d.global.xx.row(j).transpose();
      const Vector var =
          ((xx_sum_sq.row(j).transpose() * inv_runs - mean.cwiseAbs2()) * (R / (R - 1.0)))
              .cwiseMax(0.0);
      d.global_xx_stderr.row(j) = (var / R).cwiseSqrt().transpose();
    }
  }
  return d;
}

// --- regression ---------------------------------------------------------------------

struct RegressionSystem {
  Matrix design;  // Xi = [Delta_1 | Delta_2 | Delta_6]
  Vector target;  // Delta_4 (or Delta_5 for the global system)
  Index n = 0;
  Index m = 0;

  Index unknowns() const { return half_vec_size(n) + n * m + 1; }
};

/// Xi = [delta_hat, -2 I_xx (I kron L^T R) - 2 I_xa (I kron R), delta_rho],
/// target = -I_xx vec(L^T R L + Q).
inline RegressionSystem assemble_system(const RawStacks& raw, const Vector& delta_rho,
                                        const Matrix& Q, const Matrix& R, const Matrix& L) {
  const Index n = Q.rows(), m = R.rows(), l = raw.xx.rows();
  if (L.rows() != m || L.cols() != n || raw.xx.cols() != n * n || raw.xalpha.cols() != n * m ||
      raw.delta_hat.cols() != half_vec_size(n) || delta_rho.size() != l)
    throw DimensionError("assemble_system: inconsistent dimensions");
  const Matrix In = Matrix::Identity(n, n);
  RegressionSystem sys;
  sys.n = n;
  sys.m = m;
  sys.design.resize(l, sys.unknowns());
  sys.design.leftCols(half_vec_size(n)) = raw.delta_hat;
  sys.design.middleCols(half_vec_size(n), n * m) =
      -2.0 * raw.xx * kron(In, L.transpose() * R) - 2.0 * raw.xalpha * kron(In, R);
  sys.design.rightCols(1) = delta_rho;
  sys.target = -raw.xx * vec(L.transpose() * R * L + Q);
  return sys;
}

struct AssembledRegression {
  std::vector<RegressionSystem> classes;
  RegressionSystem global;
};

inline AssembledRegression assemble_regression(const DataMatrices& data, const CostModel& costs,
                                               const std::vector<Matrix>& class_gains,
                                               const Matrix& global_gain) {
  if (data.classes.size() != costs.Q.size() || class_gains.size() != costs.Q.size())
    throw DimensionError("assemble_regression: class count mismatch");
  AssembledRegression out;
  for (std::size_t k = 0; k < costs.Q.size(); ++k)
    out.classes.push_back(
        assemble_system(data.classes[k], data.delta_rho, costs.Q[k], costs.R[k], class_gains[k]));
  out.global = assemble_system(data.global, data.delta_rho, costs.coupled_Q, costs.R_aggregate,
                               global_gain);
  return out;
}

// --- persistency of excitation ------------------------------------------------------

struct RankCheck {
  Index required = 0;  // n(n+1)/2 + n m + 1
  Index rank = 0;
  Index rows = 0;
  double sigma_max = 0.0;
  double margin = 0.0;  // the required-th singular value (0 if unavailable)

  bool passed() const { return rank >= required; }
};

struct ExcitationReport {
  std::vector<RankCheck> classes;
  RankCheck global;

  bool passed() const {
    for (const auto& c : classes)
      if (!c.passed()) return false;
    return global.passed();
  }
};

inline RankCheck rank_check(const RegressionSystem& sys) {
  RankCheck c;
  c.required = sys.unknowns();
  c.rows = sys.design.rows();
  if (sys.design.size() == 0) return c;
  const Vector s = Eigen::JacobiSVD<Matrix>(sys.design).singularValues();
  c.sigma_max = s(0);
  const double threshold = static_cast<double>(std::max(sys.design.rows(), sys.design.cols())) *
                           c.sigma_max * 1e-12;
  c.rank = count_above(s, threshold);
  c.margin = s.size() >= c.required ? s(c.required - 1) : 0.0;
  return c;
}

inline ExcitationReport check_excitation(const AssembledRegression& reg) {
  ExcitationReport rep;
  for (const auto& c : reg.classes) rep.classes.push_back(rank_check(c));
  rep.global = rank_check(reg.global);
  return rep;
}

// --- policy iteration ------------------------------------------------------------------

struct LearnedIterate {
  std::vector<Matrix> class_P;
  std::vector<Matrix> class_gains;
  std::vector<double> class_theta;
  std::vector<double> class_steps;  // ||P^(l) - P^(l-1)||_F, infinity at l = 1
  Matrix Omega;
  Matrix global_gain;
  double theta_omega = 0.0;
  double global_step = 0.0;
};

struct LearnedSolution {
  std::vector<Matrix> class_P;
  std::vector<Matrix> class_gains;
  std::vector<double> class_theta;
  Matrix Omega;
  Matrix global_gain;
  double theta_omega = 0.0;
  std::vector<LearnedIterate> history;
  bool converged = false;

  int iterations() const { return static_cast<int>(history.size()); }
  Matrix P() const { return block_diagonal(class_P); }
  Matrix Pi() const { return Omega - P(); }
  GainSet gains() const { return make_gain_set(class_gains, global_gain); }
};

struct PolicyIterationOptions {
  double eps = 1e-9;
  int max_iters = 50;
  bool throw_on_nonconvergence = true;
};

namespace detail {

struct SolvedSystem {
  Matrix P;
  Matrix gain;
  double theta;
};

inline SolvedSystem solve_system(const RegressionSystem& sys, const char* what) {
  Eigen::ColPivHouseholderQR<Matrix> qr(sys.design);
  if (qr.rank() < sys.unknowns())
    throw ExcitationError(std::string("policy_iteration: ") + what +
                          " design matrix is rank deficient (" + std::to_string(qr.rank()) +
                          " < " + std::to_string(sys.unknowns()) + ")");
  const Vector z = qr.solve(sys.target);
  if (!z.allFinite())
    throw ConvergenceError(std::string("policy_iteration: non-finite ") + what + " iterate");
  const Index h = half_vec_size(sys.n);
  return {from_hat_parameters(z.head(h), sys.n), unvec(z.segment(h, sys.n * sys.m), sys.m, sys.n),
          z(z.size() - 1)};
}

}  // namespace detail

/// Least-squares policy iteration on data collected once under L0. Class
/// initial gains are the diagonal blocks of the global initial gain.
inline LearnedSolution policy_iteration(const DataMatrices& data, const CostModel& costs,
                                        const Matrix& initial_global_gain,
                                        const PolicyIterationOptions& opt = {}) {
  const Index K = costs.num_classes();
  if (static_cast<Index>(data.classes.size()) != K)
    throw DimensionError("policy_iteration: data and costs disagree on class count");
  if (initial_global_gain.rows() != costs.M() || initial_global_gain.cols() != costs.N())
    throw DimensionError("policy_iteration: L0 must be M x N");

  const auto so = detail::offsets_of(costs.state_dims);
  const auto io = detail::offsets_of(costs.input_dims);
  std::vector<Matrix> gains;
  for (Index k = 0; k < K; ++k)
    gains.push_back(initial_global_gain.block(io[static_cast<std::size_t>(k)],
                                              so[static_cast<std::size_t>(k)],
                                              costs.input_dims[static_cast<std::size_t>(k)],
                                              costs.state_dims[static_cast<std::size_t>(k)]));
  Matrix global_gain = initial_global_gain;

  LearnedSolution out;
  for (int iter = 1; iter <= opt.max_iters; ++iter) {
    const AssembledRegression reg = assemble_regression(data, costs, gains, global_gain);
    LearnedIterate it;
    bool done = iter > 1;
    for (Index k = 0; k < K; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const auto s = detail::solve_system(reg.classes[ks], ("class " + std::to_string(k)).c_str());
      const double step = iter > 1 ? (s.P - out.history.back().class_P[ks]).norm()
                                   : std::numeric_limits<double>::infinity();
      done = done && step <= opt.eps;
      it.class_P.push_back(s.P);
      it.class_gains.push_back(s.gain);
      it.class_theta.push_back(s.theta);
      it.class_steps.push_back(step);
    }
    const auto g = detail::solve_system(reg.global, "global");
    it.global_step = iter > 1 ? (g.P - out.history.back().Omega).norm()
                              : std::numeric_limits<double>::infinity();
    done = done && it.global_step <= opt.eps;
    it.Omega = g.P;
    it.global_gain = g.gain;
    it.theta_omega = g.theta;

    gains = it.class_gains;
    global_gain = it.global_gain;
    out.history.push_back(std::move(it));
    if (done) {
      out.converged = true;
      break;
    }
  }

  const LearnedIterate& last = out.history.back();
  out.class_P = last.class_P;
  out.class_gains = last.class_gains;
  out.class_theta = last.class_theta;
  out.Omega = last.Omega;
  out.global_gain = last.global_gain;
  out.theta_omega = last.theta_omega;
  if (!out.converged && opt.throw_on_nonconvergence)
    throw ConvergenceError("policy_iteration: no convergence in " + std::to_string(opt.max_iters) +
                           " iterations");
  return out;
}

}  // namespace mfg_irl
