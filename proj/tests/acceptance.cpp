// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are fixed here.

#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mfg_irl/mfg_irl.hpp"
#include "support/exact_integrals.hpp"
#include "support/oracles.hpp"
#include "support/random_systems.hpp"

namespace {

using namespace mfg_irl;

int failures = 0;

void report(int id, bool pass, const std::string& what, double seconds) {
  std::printf("%s [%d] %s (%.1f s)\n", pass ? "PASS" : "FAIL", id, what.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Runs one criterion; an exception counts as failure.
void criterion(int id, const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::pair<bool, std::string> r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r = {false, std::string("exception: ") + e.what()};
  }
  report(id, r.first, r.second,
         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

PopulationModel table1() { return build_population(table1_population()); }

std::vector<PopulationModel> random_systems(std::uint64_t seed, int count) {
  std::mt19937_64 g(seed);
  std::vector<PopulationModel> out;
  for (int i = 0; i < count; ++i) out.push_back(oracle::random_population(g));
  return out;
}

// Published learned and ground-truth class blocks; their difference sets the
// per-class Frobenius scale of criterion 3.
struct PaperClass {
  Matrix L_learned, L_truth, P_learned, P_truth;
};

std::vector<PaperClass> paper_class_table() {
  auto row = [](std::initializer_list<double> v) {
    Matrix M(1, static_cast<Index>(v.size()));
    Index j = 0;
    for (double x : v) M(0, j++) = x;
    return M;
  };
  std::vector<PaperClass> t(3);
  t[0].L_learned = row({3.9969, 2.7750});
  t[0].L_truth = row({3.9608, 2.7376});
  t[0].P_learned = (Matrix(2, 2) << 2.8624, 0.3584, 0.3584, 1.8810).finished();
  t[0].P_truth = (Matrix(2, 2) << 2.8102, 0.3584, 0.3584, 1.8316).finished();
  t[1].L_learned = (Matrix(2, 3) << -0.4359, -0.6928, 2.9514, 3.6698, 5.5736, 0.5743).finished();
  t[1].L_truth = (Matrix(2, 3) << -0.4233, -0.6794, 2.9314, 3.6677, 5.5738, 0.5616).finished();
  t[1].P_learned = (Matrix(3, 3) << 13.4680, 2.6812, -0.2104, 2.6812, 4.0818, -0.3260, -0.2104,
                    -0.3260, 1.5024).finished();
  t[1].P_truth = (Matrix(3, 3) << 13.4070, 2.6732, -0.2117, 2.6732, 4.0715, -0.3397, -0.2117,
                  -0.3397, 1.4657).finished();
  t[2].L_learned = row({-3.6928, 6.0612});
  t[2].L_truth = row({-3.6908, 6.0446});
  t[2].P_learned = (Matrix(2, 2) << 10.2930, -3.4970, -3.4970, 2.1593).finished();
  t[2].P_truth = (Matrix(2, 2) << 10.2340, -3.4672, -3.4672, 2.1335).finished();
  return t;
}

// Largest entry error reported for (Omega, L_Omega); only four entries of
// each are published, so this bounds the global matrices.
constexpr double kPaperGlobalError = 0.0673;
constexpr double kFrobeniusFactor = 3.0;
constexpr double kEntryTol = 0.15;
constexpr int kMaxIterations = 20;

struct SeedResult {
  std::uint64_t seed = 0;
  EvaluationReport report;
  LearningOutcome learning;
  bool improved = false;  // final error <= first-iterate error for every matrix
};

SeedResult learn_seed(std::uint64_t seed, const RiccatiSolution& truth) {
  ExperimentConfig cfg = default_config();
  cfg.seed = seed;
  const auto v = validate_stage(cfg);
  const auto ens = simulate_stage(cfg, v.population, v.initial_gain);
  SeedResult r;
  r.seed = seed;
  r.learning = learn_stage(ens, costs_from_spec(cfg.population), v.initial_gain, cfg.learning);
  r.report = compare_to_ground_truth(r.learning.solution, truth);
  r.improved = true;
  for (const auto& c : r.report.curves) r.improved = r.improved && c.frobenius.back() <= c.frobenius.front();
  return r;
}

}  // namespace

int main() {
  const PopulationModel pop = table1();
  const RiccatiSolution truth = mfg_ground_truth(pop);

  criterion(1, [&] {
    const double tol = 5e-4;
    const Matrix P1 = (Matrix(2, 2) << 2.8102, 0.3584, 0.3584, 1.8316).finished();
    const Matrix LP2 =
        (Matrix(2, 3) << -0.4233, -0.6794, 2.9314, 3.6677, 5.5738, 0.5616).finished();
    const double e1 = (truth.class_P[0] - P1).cwiseAbs().maxCoeff();
    const double e2 = (truth.gains.class_gains[1] - LP2).cwiseAbs().maxCoeff();
    const double e3 = std::abs(truth.Omega(0, 0) - 2.7111);
    const double e4 = std::abs(truth.Omega(5, 5) - 9.5677);
    const bool ok = e1 <= tol && e2 <= tol && e3 <= tol && e4 <= tol;
    return std::pair{ok, fmt("ground truth: max |P_1 err| %.2e, |L_P2 err| %.2e, |Omega11 err| %.2e, "
                             "|Omega66 err| %.2e (tol %.0e)",
                             e1, e2, e3, e4, tol)};
  });

  criterion(2, [&] {
    const double tol = 1e-6;
    double worst = 0.0, worst_theta = 0.0;
    int systems = 0;
    {
      const Matrix L0 = Matrix::Zero(pop.M(), pop.N());
      const ExplorationPolicy p(L0, pop.input_dims(), oracle::low_frequency_noise(), 3);
      const auto data = oracle::exact_data_integrals(pop, p, Vector::Ones(pop.N()),
                                                      contiguous_windows(0.0, 0.1, 120), 1e-3);
      const auto g = oracle::iterate_gap(pop, policy_iteration(data, cost_model(pop), L0), L0);
      worst = std::max(worst, g.worst_P);
      worst_theta = std::max(worst_theta, g.worst_theta);
      ++systems;
    }
    int trial = 0;
    for (const auto& rp : random_systems(20240601, 20)) {
      const Matrix L0 = oracle::stabilizing_initial_gain(rp);
      const ExplorationPolicy p(L0, rp.input_dims(), oracle::low_frequency_noise(), 100 + trial++);
      const auto data = oracle::exact_data_integrals(rp, p, Vector::Ones(rp.N()),
                                                      contiguous_windows(0.0, 0.1, 200), 1e-3);
      const auto g = oracle::iterate_gap(rp, policy_iteration(data, cost_model(rp), L0), L0);
      worst = std::max(worst, g.worst_P);
      worst_theta = std::max(worst_theta, g.worst_theta);
      ++systems;
    }
    return std::pair{worst < tol,
                     fmt("exact-integral IRL vs Kleinman on %d systems: worst iterate gap %.2e "
                         "(tol %.0e); worst theta gap %.2e",
                         systems, worst, tol, worst_theta)};
  });

  std::vector<SeedResult> seeds;
  criterion(3, [&] {
    const auto paper = paper_class_table();
    std::vector<double> bound_L, bound_P;
    for (const auto& c : paper) {
      bound_L.push_back(kFrobeniusFactor * (c.L_learned - c.L_truth).norm());
      bound_P.push_back(kFrobeniusFactor * (c.P_learned - c.P_truth).norm());
    }
    const double bound_global = kFrobeniusFactor * kPaperGlobalError;
    int passing = 0;
    std::string detail;
    for (std::uint64_t s = 1; s <= 20; ++s) {
      seeds.push_back(learn_seed(s, truth));
      if (s > 10) continue;
      const auto& r = seeds.back().report;
      bool ok = r.converged && r.iterations <= kMaxIterations;
      double worst_entry = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        ok = ok && r.class_gain_errors[k].frobenius <= bound_L[k] &&
             r.class_P_errors[k].frobenius <= bound_P[k];
        worst_entry = std::max({worst_entry, r.class_gain_errors[k].max_abs, r.class_P_errors[k].max_abs});
      }
      ok = ok && r.omega_error.frobenius <= bound_global && r.global_gain_error.frobenius <= bound_global;
      worst_entry = std::max({worst_entry, r.omega_error.max_abs, r.global_gain_error.max_abs});
      ok = ok && worst_entry <= kEntryTol;
      passing += ok ? 1 : 0;
      std::printf("  seed %2llu: %s, %d iterations, worst entry %.4f, ||Omega err||_F %.4f, "
                  "||L_Omega err||_F %.4f\n",
                  static_cast<unsigned long long>(s), ok ? "ok  " : "miss", r.iterations,
                  worst_entry, r.omega_error.frobenius, r.global_gain_error.frobenius);
    }
    detail = fmt("data-driven learning within bounds on %d/10 seeds (need 8; entry tol %.2f, "
                 "<= %d iterations, global Frobenius bound %.4f)",
                 passing, kEntryTol, kMaxIterations, bound_global);
    return std::pair{passing >= 8, detail};
  });

  criterion(4, [&] {
    int sequences = 0;
    double worst_mono = std::numeric_limits<double>::infinity(), worst_abscissa = -1e300;
    bool ok = true;
    auto check = [&](const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, double rho) {
      const auto res = kleinman_iterate(A, B, Q, R, rho, stabilizing_gain(A, B, rho));
      ++sequences;
      worst_abscissa = std::max(worst_abscissa, res.trace.initial_abscissa);
      for (const auto& s : res.trace.steps) {
        worst_abscissa = std::max(worst_abscissa, s.spectral_abscissa);
        if (std::isfinite(s.monotonicity)) worst_mono = std::min(worst_mono, s.monotonicity);
      }
    };
    for (const auto& rp : random_systems(77, 50)) {
      for (const auto& c : rp.classes) check(c.A, c.B, c.Q, c.R, c.rho);
      const CostModel costs = cost_model(rp);
      check(rp.A, rp.B, costs.coupled_Q, costs.R_aggregate, rp.rho);
    }
    ok = worst_mono >= -1e-8 && worst_abscissa < 0.0;
    return std::pair{ok, fmt("Kleinman on 50 random systems (%d sequences): min lambda_min(X_l - "
                             "X_l+1) %.2e (tol -1e-8), max closed-loop abscissa %.3f",
                             sequences, worst_mono, worst_abscissa)};
  });

  criterion(5, [&] {
    double worst = hamiltonian_similarity_check(pop, truth.P).max_matched_distance;
    for (const auto& rp : random_systems(555, 20))
      worst = std::max(worst, hamiltonian_similarity_check(rp, mfg_ground_truth(rp).P).max_matched_distance);
    return std::pair{worst < 1e-8,
                     fmt("spectra of H_Omega and H_Pi on 21 systems: worst paired distance %.2e "
                         "(tol 1e-8)",
                         worst)};
  });

  criterion(6, [&] {
    const double r = pi_equation_residual(pop, truth.P, truth.Pi);
    return std::pair{r < 1e-7, fmt("Pi = Omega - P relative residual %.2e (tol 1e-7)", r)};
  });

  criterion(7, [&] {
    PopulationModel quiet = pop;
    quiet.D.setZero();
    for (auto& c : quiet.classes) c.D.setZero();
    NoiseSpec none;
    none.amplitude = 0.0;
    const Matrix L0 = Matrix::Zero(pop.M(), pop.N());
    EnsembleOptions opt;
    opt.runs = 1;
    opt.t_total = 12.0;
    const auto ens = simulate_ensemble(quiet, ExplorationPolicy(L0, pop.input_dims(), none, 1),
                                       Vector::Ones(pop.N()), opt);
    const auto data = compute_data_integrals(ens, contiguous_windows(0.0, 0.1, 120));
    const auto degenerate =
        check_excitation(assemble_regression(data, cost_model(pop), oracle::diagonal_blocks(pop, L0), L0));
    const auto& ex = seeds.empty() ? ExcitationReport{} : seeds.front().learning.excitation;
    const bool ranks_ok = ex.classes.size() == 3 && ex.classes[0].required == 6 &&
                          ex.classes[1].required == 13 && ex.classes[2].required == 6 &&
                          ex.global.required == 57;
    const bool ok = !degenerate.passed() && ex.passed() && ranks_ok;
    std::string ranks;
    for (const auto& c : ex.classes) ranks += fmt("%lld/%lld ", static_cast<long long>(c.rank),
                                                   static_cast<long long>(c.required));
    return std::pair{ok, fmt("degenerate data %s (global rank %lld/57); default setup ranks %sglobal "
                             "%lld/%lld [required n(n+1)/2+nm+1; the criterion text lists 12/13/12]",
                             degenerate.passed() ? "ACCEPTED" : "rejected",
                             static_cast<long long>(degenerate.global.rank), ranks.c_str(),
                             static_cast<long long>(ex.global.rank),
                             static_cast<long long>(ex.global.required))};
  });

  criterion(8, [&] {
    PopulationModel quiet = pop;
    quiet.D.setZero();
    for (auto& c : quiet.classes) c.D.setZero();
    NoiseSpec none;
    none.sinusoids = 0;
    const Matrix L0 = Matrix::Zero(pop.M(), pop.N());
    const Vector x0 = Vector::Ones(pop.N());
    const double T = 2.0;
    const Vector exact = (pop.A * T).exp() * x0;
    std::vector<double> err;
    for (double h : {4e-3, 2e-3, 1e-3, 5e-4}) {
      EnsembleOptions opt;
      opt.t_total = T;
      opt.h = h;
      opt.runs = 1;
      const auto ens = simulate_ensemble(quiet, ExplorationPolicy(L0, pop.input_dims(), none, 1), x0, opt);
      err.push_back((ens.states[0].col(ens.steps) - exact).cwiseAbs().maxCoeff());
    }
    bool ok = true;
    std::string ratios;
    for (std::size_t i = 1; i < err.size(); ++i) {
      const double r = err[i - 1] / err[i];
      ok = ok && r >= 1.7 && r <= 2.3;
      ratios += fmt("%.3f ", r);
    }
    return std::pair{ok, fmt("Euler-Maruyama with D = 0: error ratios %sover three refinements "
                             "(need [1.7, 2.3])",
                             ratios.c_str())};
  });

  criterion(9, [&] {
    if (seeds.empty()) return std::pair{false, std::string("no learned gains (criterion 3 failed early)")};
    const ExperimentConfig cfg = default_config();
    const auto mf = emit_mean_field_comparison(pop, seeds.front().learning.solution.gains(),
                                               truth.gains, cfg, std::nullopt);
    const bool ok = mf.bounded && mf.mean_population_gap_learned <= 0.1;
    return std::pair{ok, fmt("50 agents/class under learned gains: mean sup gap to the mean-field "
                             "ODE %.4f over %zu seeds (tol 0.1; %.4f under true gains), bounded %s",
                             mf.mean_population_gap_learned, mf.population_gap_learned.size(),
                             mf.mean_population_gap_truth, mf.bounded ? "yes" : "no")};
  });

  // Statistical property of the learner on the same 20-seed batch.
  {
    int improved = 0;
    for (const auto& s : seeds) improved += s.improved ? 1 : 0;
    const bool ok = !seeds.empty() && improved >= static_cast<int>(0.95 * seeds.size() + 0.5);
    std::printf("%s [property] final-iterate error <= first-iterate error on %d/%zu seeds (need 95%%)\n",
                ok ? "PASS" : "FAIL", improved, seeds.size());
    if (!ok) ++failures;
  }

  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
