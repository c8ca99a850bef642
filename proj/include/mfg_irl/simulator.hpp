// Representative-agent SDE ensembles under exploration input, the mean-field
// ODE, and finite-population closed-loop simulation.
#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "mfg_irl/core.hpp"
#include "mfg_irl/model.hpp"
#include "mfg_irl/riccati.hpp"

namespace mfg_irl {

// --- seeds ---------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t {
  kFrequencies = 1,
  kWiener = 2,
  kInitialState = 3,
};

/// Seed for one (stream, run, class, channel) tuple. The packed key is
/// injective for run < 2^24, class < 2^16, channel < 2^16, and both mixing
/// steps are bijections of the 64-bit key, so distinct tuples never share a
/// seed under the same master seed.
inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t run,
                                 std::uint64_t cls, std::uint64_t channel) {
  if (run >= (1ull << 24) || cls >= (1ull << 16) || channel >= (1ull << 16))
    throw InvalidArgument("derive_seed: index out of range");
  const std::uint64_t key =
      (static_cast<std::uint64_t>(stream) << 56) | (run << 32) | (cls << 16) | channel;
  return splitmix64(master ^ splitmix64(key));
}

// --- exploration ---------------------------------------------------------------

struct NoiseSpec {
  int sinusoids = 500;
  double amplitude = 25.0;
  double omega_min = -100.0;
  double omega_max = 100.0;
  bool redraw_per_run = false;
};

/// alpha(t) = -L0 X(t) + l(t), where each input channel of l is a frozen bank
/// of sinusoids l_i(t) = sum_j A_e sin(omega_ij t).
class ExplorationPolicy {
 public:
  ExplorationPolicy(Matrix initial_gain, std::vector<Index> input_dims, NoiseSpec spec,
                    std::uint64_t seed)
      : gain_(std::move(initial_gain)), input_dims_(std::move(input_dims)), spec_(spec),
        seed_(seed) {
    Index M = 0;
    for (Index m : input_dims_) M += m;
    if (gain_.rows() != M) throw DimensionError("ExplorationPolicy: L0 rows must equal M");
    if (spec_.sinusoids < 0) throw InvalidArgument("ExplorationPolicy: negative sinusoid count");
    frequencies_ = draw_bank(0);
  }

  /// Explicit frequency bank (one row per input channel), mainly for tests.
  ExplorationPolicy(Matrix initial_gain, Matrix frequencies, double amplitude)
      : gain_(std::move(initial_gain)), frequencies_(std::move(frequencies)) {
    spec_.sinusoids = static_cast<int>(frequencies_.cols());
    spec_.amplitude = amplitude;
    input_dims_ = {frequencies_.rows()};
    if (gain_.rows() != frequencies_.rows())
      throw DimensionError("ExplorationPolicy: L0 rows must equal the number of channels");
  }

  const Matrix& initial_gain() const { return gain_; }
  const NoiseSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  Index channels() const { return gain_.rows(); }
  const Matrix& frequencies() const { return frequencies_; }
  const std::vector<Index>& input_dims() const { return input_dims_; }

  /// Frequency bank for a run; identical to frequencies() unless
  /// redraw_per_run is set.
  Matrix bank_for_run(Index run) const {
    return spec_.redraw_per_run ? draw_bank(run) : frequencies_;
  }

  Vector sample(double t) const { return evaluate(frequencies_, t); }

  Vector evaluate(const Matrix& bank, double t) const {
    Vector l = Vector::Zero(bank.rows());
    for (Index i = 0; i < bank.rows(); ++i) {
      double s = 0.0;
      for (Index j = 0; j < bank.cols(); ++j) s += std::sin(bank(i, j) * t);
      l(i) = spec_.amplitude * s;
    }
    return l;
  }

 private:
  Matrix draw_bank(Index run) const {
    Matrix bank(gain_.rows(), spec_.sinusoids);
    Index ch = 0;
    for (std::size_t k = 0; k < input_dims_.size(); ++k) {
      for (Index i = 0; i < input_dims_[k]; ++i, ++ch) {
        std::mt19937_64 gen(derive_seed(seed_, Stream::kFrequencies,
                                        static_cast<std::uint64_t>(run), k,
                                        static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> dist(spec_.omega_min, spec_.omega_max);
        for (Index j = 0; j < spec_.sinusoids; ++j) bank(ch, j) = dist(gen);
      }
    }
    return bank;
  }

  Matrix gain_;
  std::vector<Index> input_dims_;
  NoiseSpec spec_;
  std::uint64_t seed_ = 0;
  Matrix frequencies_;
};

inline Vector sample_noise(const ExplorationPolicy& policy, double t) { return policy.sample(t); }

// --- ensembles --------------------------------------------------------------------

/// Grid-sampled representative-agent paths. Column j of a path is time j*h;
/// class k occupies rows [state_offsets[k], state_offsets[k+1]).
struct TrajectoryEnsemble {
  double h = 0.0;
  Index steps = 0;  // grid has steps + 1 points
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::vector<Index> state_dims;
  std::vector<Index> input_dims;
  std::vector<Matrix> states;  // per run, N x (steps + 1)
  std::vector<Matrix> inputs;  // per run, M x (steps + 1)

  Index runs() const { return static_cast<Index>(states.size()); }
  Index grid_points() const { return steps + 1; }
  double time(Index j) const { return static_cast<double>(j) * h; }
  double t_total() const { return time(steps); }
  Index N() const { return states.empty() ? 0 : states.front().rows(); }
  Index M() const { return inputs.empty() ? 0 : inputs.front().rows(); }
};

struct EnsembleOptions {
  double t_total = 20.0;
  double h = 1e-3;
  Index runs = 100;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

namespace detail {

inline Index grid_steps(double t_total, double h) {
  if (!(h > 0.0)) throw InvalidArgument("step size must be positive");
  if (!(t_total > 0.0)) throw InvalidArgument("horizon must be positive");
  const double ratio = t_total / h;
  const auto steps = static_cast<Index>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-6 * std::max(1.0, ratio))
    throw InvalidArgument("horizon is not an integer multiple of the step size");
  return steps;
}

template <typename Body>
void for_each_run(Index runs, unsigned threads, Body body) {
  if (threads <= 1 || runs <= 1) {
    for (Index r = 0; r < runs; ++r) body(r);
    return;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (Index r = t; r < runs; r += threads) body(r);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string divergence_message(const std::string& what, Index run, double t) {
  return what + ": non-finite state in run " + std::to_string(run) + " at t = " +
         std::to_string(t);
}

}  // namespace detail

/// Euler-Maruyama on dX = (A X + B alpha) dt + D dW with
/// alpha = -L0 X + l(t). Wiener increments are independent per run and
/// per class (one stream each).
inline TrajectoryEnsemble simulate_ensemble(const PopulationModel& pop,
                                            const ExplorationPolicy& policy, const Vector& x0,
                                            const EnsembleOptions& opt) {
  const Index N = pop.N(), M = pop.M(), K = pop.num_classes();
  if (x0.size() != N) throw DimensionError("simulate_ensemble: x0 must have N entries");
  if (policy.initial_gain().rows() != M || policy.initial_gain().cols() != N)
    throw DimensionError("simulate_ensemble: L0 must be M x N");
  if (opt.runs <= 0) throw InvalidArgument("simulate_ensemble: need at least one run");

  TrajectoryEnsemble ens;
  ens.h = opt.h;
  ens.steps = detail::grid_steps(opt.t_total, opt.h);
  ens.rho = pop.rho;
  ens.seed = opt.seed;
  ens.state_dims = pop.state_dims();
  ens.input_dims = pop.input_dims();
  ens.states.assign(static_cast<std::size_t>(opt.runs), Matrix());
  ens.inputs.assign(static_cast<std::size_t>(opt.runs), Matrix());

  const Index J = ens.steps + 1;
  Matrix shared_noise;
  if (!policy.spec().redraw_per_run) {
    shared_noise.resize(M, J);
    for (Index j = 0; j < J; ++j) shared_noise.col(j) = policy.sample(ens.time(j));
  }

  const Matrix& L0 = policy.initial_gain();
  const double sqrt_h = std::sqrt(opt.h);

  detail::for_each_run(opt.runs, opt.threads, [&](Index r) {
    Matrix noise;
    if (policy.spec().redraw_per_run) {
      const Matrix bank = policy.bank_for_run(r);
      noise.resize(M, J);
      for (Index j = 0; j < J; ++j) noise.col(j) = policy.evaluate(bank, ens.time(j));
    }
    const Matrix& l = policy.spec().redraw_per_run ? noise : shared_noise;

    std::vector<std::mt19937_64> gens;
    std::vector<std::normal_distribution<double>> normals(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k)
      gens.emplace_back(derive_seed(opt.seed, Stream::kWiener, static_cast<std::uint64_t>(r),
                                    static_cast<std::uint64_t>(k), 0));

    Matrix X(N, J), U(M, J);
    Vector x = x0, xi(pop.D.cols());
    for (Index j = 0; j < J; ++j) {
      X.col(j) = x;
      U.col(j).noalias() = -L0 * x + l.col(j);
      if (j + 1 == J) break;
      for (Index k = 0; k < K; ++k)
        for (Index c = pop.noise_offsets[k]; c < pop.noise_offsets[k + 1]; ++c)
          xi(c) = normals[static_cast<std::size_t>(k)](gens[static_cast<std::size_t>(k)]);
      x += opt.h * (pop.A * x + pop.B * U.col(j)) + sqrt_h * (pop.D * xi);
      if (!x.allFinite())
        throw DivergenceError(detail::divergence_message("simulate_ensemble", r, ens.time(j + 1)));
    }
    ens.states[static_cast<std::size_t>(r)] = std::move(X);
    ens.inputs[static_cast<std::size_t>(r)] = std::move(U);
  });
  return ens;
}

// --- mean-field ODE ---------------------------------------------------------------

struct MeanFieldPath {
  double h = 0.0;
  Matrix path;  // N x (steps + 1)
  double time(Index j) const { return static_cast<double>(j) * h; }
};

/// RK4 integration of d Xbar / dt = G Xbar.
inline MeanFieldPath simulate_mean_field(const Matrix& generator, const Vector& xbar0,
                                         double t_total, double h) {
  if (generator.rows() != xbar0.size() || generator.cols() != xbar0.size())
    throw DimensionError("simulate_mean_field: generator and initial state disagree");
  const Index steps = detail::grid_steps(t_total, h);
  MeanFieldPath out;
  out.h = h;
  out.path.resize(xbar0.size(), steps + 1);
  Vector x = xbar0;
  out.path.col(0) = x;
  for (Index j = 0; j < steps; ++j) {
    const Vector k1 = generator * x;
    const Vector k2 = generator * (x + 0.5 * h * k1);
    const Vector k3 = generator * (x + 0.5 * h * k2);
    const Vector k4 = generator * (x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite())
      throw DivergenceError("simulate_mean_field: non-finite state at t = " +
                            std::to_string(out.time(j + 1)));
    out.path.col(j + 1) = x;
  }
  return out;
}

/// Mean-field ODE under a gain set: generator A - B L_Omega.
inline MeanFieldPath simulate_mean_field(const PopulationModel& pop, const GainSet& gains,
                                         const Vector& xbar0, double t_total, double h) {
  return simulate_mean_field(mean_field_generator(pop, gains.global_gain), xbar0, t_total, h);
}

// --- finite population --------------------------------------------------------------

/// Draws an n-vector initial state for one agent.
using InitialStateSampler = std::function<Vector(Index n, std::mt19937_64& gen)>;

inline InitialStateSampler uniform_box_sampler(double lo, double hi) {
  return [lo, hi](Index n, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Vector x(n);
    for (Index i = 0; i < n; ++i) x(i) = dist(gen);
    return x;
  };
}

inline InitialStateSampler constant_sampler(double value) {
  return [value](Index n, std::mt19937_64&) { return Vector::Constant(n, value); };
}

struct PopulationSimulation {
  double h = 0.0;
  std::vector<std::vector<Matrix>> agent_paths;  // [class][agent] -> n_k x (steps+1)
  std::vector<Matrix> class_means;               // [class] -> n_k x (steps+1)
  std::vector<Matrix> class_stddev;              // population std across agents
  Matrix empirical_mean_stack;                   // N x (steps+1)

  double time(Index j) const { return static_cast<double>(j) * h; }
  Matrix lower_envelope(Index k) const {
    return class_means[static_cast<std::size_t>(k)] - 2.0 * class_stddev[static_cast<std::size_t>(k)];
  }
  Matrix upper_envelope(Index k) const {
    return class_means[static_cast<std::size_t>(k)] + 2.0 * class_stddev[static_cast<std::size_t>(k)];
  }
};

struct PopulationOptions {
  Index agents_per_class = 50;
  double t_total = 10.0;
  double h = 1e-3;
  std::uint64_t seed = 1;
};

/// Every agent i of class k follows its own SDE with
///   u = -L_{P,k} x_{k,i} - L_{Pi,k} Xbar_pop(t),
/// Xbar_pop being the running stack of empirical class means.
inline PopulationSimulation simulate_finite_population(const PopulationModel& pop,
                                                       const GainSet& gains,
                                                       const InitialStateSampler& x0_sampler,
                                                       const PopulationOptions& opt) {
  const Index K = pop.num_classes(), N = pop.N();
  if (static_cast<Index>(gains.class_gains.size()) != K)
    throw DimensionError("simulate_finite_population: need one local gain per class");
  if (gains.mean_field_gain.rows() != pop.M() || gains.mean_field_gain.cols() != N)
    throw DimensionError("simulate_finite_population: L_Pi must be M x N");
  if (opt.agents_per_class <= 0)
    throw InvalidArgument("simulate_finite_population: need at least one agent per class");

  const Index steps = detail::grid_steps(opt.t_total, opt.h);
  const Index J = steps + 1;
  const Index A_n = opt.agents_per_class;
  const double sqrt_h = std::sqrt(opt.h);
  const double inv_count = 1.0 / static_cast<double>(A_n);

  PopulationSimulation out;
  out.h = opt.h;
  out.agent_paths.resize(static_cast<std::size_t>(K));
  out.class_means.resize(static_cast<std::size_t>(K));
  out.class_stddev.resize(static_cast<std::size_t>(K));
  out.empirical_mean_stack.resize(N, J);

  std::vector<std::vector<Vector>> x(static_cast<std::size_t>(K));
  std::vector<std::vector<std::mt19937_64>> wiener(static_cast<std::size_t>(K));
  std::vector<std::vector<std::normal_distribution<double>>> normals(static_cast<std::size_t>(K));
  std::vector<Matrix> LPi(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const Index n = pop.state_dim(k);
    LPi[ks] = gains.mean_field_gain_row(pop.input_offsets, k);
    out.agent_paths[ks].assign(static_cast<std::size_t>(A_n), Matrix(n, J));
    out.class_means[ks].resize(n, J);
    out.class_stddev[ks].resize(n, J);
    for (Index i = 0; i < A_n; ++i) {
      std::mt19937_64 g0(derive_seed(opt.seed, Stream::kInitialState,
                                     static_cast<std::uint64_t>(i), ks, 0));
      x[ks].push_back(x0_sampler(n, g0));
      if (x[ks].back().size() != n)
        throw DimensionError("simulate_finite_population: sampler returned the wrong size");
      wiener[ks].emplace_back(
          derive_seed(opt.seed, Stream::kWiener, static_cast<std::uint64_t>(i), ks, 1));
      normals[ks].emplace_back(0.0, 1.0);
    }
  }
  Vector xbar(N);
  for (Index j = 0; j < J; ++j) {
    for (Index k = 0; k < K; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const Index n = pop.state_dim(k);
      Vector mean = Vector::Zero(n), sq = Vector::Zero(n);
      for (Index i = 0; i < A_n; ++i) {
        const Vector& xi = x[ks][static_cast<std::size_t>(i)];
        out.agent_paths[ks][static_cast<std::size_t>(i)].col(j) = xi;
        mean += xi;
      }
      mean *= inv_count;
      for (Index i = 0; i < A_n; ++i)
        sq += (x[ks][static_cast<std::size_t>(i)] - mean).cwiseAbs2();
      out.class_means[ks].col(j) = mean;
      out.class_stddev[ks].col(j) = (sq * inv_count).cwiseSqrt();
      xbar.segment(pop.state_offsets[k], n) = mean;
    }
    out.empirical_mean_stack.col(j) = xbar;
    if (j + 1 == J) break;

    for (Index k = 0; k < K; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const ClassModel& c = pop.classes[ks];
      const Vector mf = LPi[ks] * xbar;
      Vector w(c.d());
      for (Index i = 0; i < A_n; ++i) {
        const auto is = static_cast<std::size_t>(i);
        Vector& xi = x[ks][is];
        for (Index q = 0; q < c.d(); ++q) w(q) = normals[ks][is](wiener[ks][is]);
        const Vector u = -gains.class_gains[ks] * xi - mf;
        xi += opt.h * (c.A * xi + c.B * u) + sqrt_h * (c.D * w);
        if (!xi.allFinite())
          throw DivergenceError(detail::divergence_message("simulate_finite_population", i,
                                                           out.time(j + 1)));
      }
    }
  }
  return out;
}

}  // namespace mfg_irl
