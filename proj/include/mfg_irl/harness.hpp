// Pipeline driver: validate -> truth -> simulate -> learn -> evaluate, with
// file outputs and one exit code per stage.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mfg_irl/config.hpp"
#include "mfg_irl/io.hpp"
#include "mfg_irl/irl.hpp"
#include "mfg_irl/model.hpp"
#include "mfg_irl/riccati.hpp"
#include "mfg_irl/simulator.hpp"

namespace mfg_irl {

inline constexpr const char* kVersion = "0.1.0";

enum class Stage : int {
  kConfig = 1,
  kValidate = 2,
  kTruth = 3,
  kSimulate = 4,
  kLearn = 5,
  kEvaluate = 6,
};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kConfig: return "config";
    case Stage::kValidate: return "validate";
    case Stage::kTruth: return "truth";
    case Stage::kSimulate: return "simulate";
    case Stage::kLearn: return "learn";
    case Stage::kEvaluate: return "evaluate";
  }
  return "unknown";
}

inline int exit_code(Stage s) { return static_cast<int>(s); }

class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error(std::string("[") + stage_name(stage) + "] " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

/// --out, else $MFG_IRL_OUTPUT_DIR, else ./mfg_irl_output.
inline std::filesystem::path resolve_output_dir(const std::string& cli_value = {}) {
  if (!cli_value.empty()) return cli_value;
  if (const char* env = std::getenv("MFG_IRL_OUTPUT_DIR"); env && *env) return env;
  return "mfg_irl_output";
}

/// A manifest can stand in for a config file.
inline json config_document(const json& doc) {
  if (doc.is_object() && doc.contains("manifest_version") && doc.contains("config"))
    return doc.at("config");
  return doc;
}

template <class F>
auto in_stage(Stage s, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(s, e.what());
  }
}

// --- validate -------------------------------------------------------------------------

struct ValidationOutcome {
  PopulationModel population;
  AssumptionReport assumptions;
  Matrix initial_gain;
  bool initial_gain_stabilizing = false;
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
};

/// Diagonal blocks of a global gain, one per class.
inline std::vector<Matrix> class_blocks(const Matrix& L, const std::vector<Index>& state_dims,
                                        const std::vector<Index>& input_dims) {
  const auto so = detail::offsets_of(state_dims), io = detail::offsets_of(input_dims);
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < state_dims.size(); ++k)
    out.push_back(L.block(io[k], so[k], input_dims[k], state_dims[k]));
  return out;
}

inline Matrix initial_gain(const LearningSpec& spec, const PopulationModel& pop) {
  switch (spec.initial_gain) {
    case InitialGainKind::kZero: return Matrix::Zero(pop.M(), pop.N());
    case InitialGainKind::kExplicit:
      if (spec.L0.rows() != pop.M() || spec.L0.cols() != pop.N())
        throw DimensionError("learning.L0 must be " + std::to_string(pop.M()) + "x" +
                             std::to_string(pop.N()));
      return spec.L0;
    case InitialGainKind::kFallback: {
      std::vector<Matrix> gains;
      for (const auto& c : pop.classes) gains.push_back(stabilizing_gain(c.A, c.B, c.rho));
      return block_diagonal(gains);
    }
  }
  return Matrix::Zero(pop.M(), pop.N());
}

inline ValidationOutcome validate_stage(const ExperimentConfig& cfg) {
  return in_stage(Stage::kValidate, [&] {
    ValidationOutcome v;
    v.population = build_population(cfg.population);
    v.assumptions = validate_assumptions(v.population);
    v.failures = v.assumptions.failures(v.population.N());
    v.initial_gain = initial_gain(cfg.learning, v.population);
    const PopulationModel& pop = v.population;
    v.initial_gain_stabilizing = is_hurwitz(pop.shifted_drift() - pop.B * v.initial_gain);
    if (!v.initial_gain_stabilizing) v.failures.push_back("initial global gain is not stabilizing");
    const auto blocks = class_blocks(v.initial_gain, pop.state_dims(), pop.input_dims());
    for (Index k = 0; k < pop.num_classes(); ++k) {
      const auto& c = pop.classes[static_cast<std::size_t>(k)];
      const Matrix F = c.A - 0.5 * c.rho * Matrix::Identity(c.n(), c.n()) -
                       c.B * blocks[static_cast<std::size_t>(k)];
      if (!is_hurwitz(F)) {
        v.initial_gain_stabilizing = false;
        v.failures.push_back("class " + std::to_string(k) + ": initial gain is not stabilizing");
      }
    }
    return v;
  });
}

inline json validation_to_json(const ValidationOutcome& v) {
  json classes = json::array();
  for (const auto& c : v.assumptions.classes)
    classes.push_back({{"q_psd", c.q_psd},
                       {"r_pd", c.r_pd},
                       {"stabilizable", c.stabilizable},
                       {"observable", c.observable}});
  const auto& a = v.assumptions;
  return {{"passed", v.passed()},
          {"classes", classes},
          {"aggregate_stabilizable", a.aggregate_stabilizable},
          {"aggregate_observable", a.aggregate_observable},
          {"coupled_q_asymmetry", a.coupled_q_asymmetry},
          {"stable_eigenvalues", a.stable_count},
          {"unstable_eigenvalues", a.unstable_count},
          {"on_axis_eigenvalues", a.on_axis_count},
          {"graph_condition_number", a.graph_condition_number},
          {"initial_gain_stabilizing", v.initial_gain_stabilizing},
          {"failures", v.failures}};
}

// --- truth ----------------------------------------------------------------------------

inline RiccatiSolution truth_stage(const PopulationModel& pop) {
  return in_stage(Stage::kTruth, [&] { return mfg_ground_truth(pop); });
}

/// gain files: L_P_<k>.csv, L_Omega.csv, L_Pi.csv (k from 1).
inline void write_gain_set(const std::filesystem::path& dir, const GainSet& g) {
  for (std::size_t k = 0; k < g.class_gains.size(); ++k)
    write_matrix_csv(dir / ("L_P_" + std::to_string(k + 1) + ".csv"), g.class_gains[k]);
  write_matrix_csv(dir / "L_Omega.csv", g.global_gain);
  write_matrix_csv(dir / "L_Pi.csv", g.mean_field_gain);
}

inline GainSet read_gain_set(const std::filesystem::path& dir, Index classes) {
  std::vector<Matrix> local;
  for (Index k = 0; k < classes; ++k)
    local.push_back(read_matrix_csv(dir / ("L_P_" + std::to_string(k + 1) + ".csv")));
  return make_gain_set(std::move(local), read_matrix_csv(dir / "L_Omega.csv"));
}

inline void write_truth(const std::filesystem::path& dir, const RiccatiSolution& t) {
  for (std::size_t k = 0; k < t.class_P.size(); ++k)
    write_matrix_csv(dir / ("P_" + std::to_string(k + 1) + ".csv"), t.class_P[k]);
  write_matrix_csv(dir / "Omega.csv", t.Omega);
  write_matrix_csv(dir / "Pi.csv", t.Pi);
  write_gain_set(dir, t.gains);
  write_json(dir / "truth.json", {{"class_residuals", t.class_residuals},
                                  {"omega_residual", t.omega_residual},
                                  {"pi_residual", t.pi_residual},
                                  {"class_solver_gap", t.class_solver_gap},
                                  {"omega_solver_gap", t.omega_solver_gap},
                                  {"graph_condition_number", t.graph_condition_number},
                                  {"kleinman_iterations", t.iterations}});
}

// --- simulate -------------------------------------------------------------------------

inline ExplorationPolicy exploration_policy(const ExperimentConfig& cfg, const PopulationModel& pop,
                                            const Matrix& L0) {
  return ExplorationPolicy(L0, pop.input_dims(), cfg.exploration, cfg.seed);
}

inline TrajectoryEnsemble simulate_stage(const ExperimentConfig& cfg, const PopulationModel& pop,
                                         const Matrix& L0) {
  return in_stage(Stage::kSimulate, [&] {
    const Vector x0 = cfg.simulation.x0 ? *cfg.simulation.x0 : Vector::Ones(pop.N());
    EnsembleOptions opt;
    opt.t_total = cfg.simulation.t_total;
    opt.h = cfg.simulation.h;
    opt.runs = cfg.simulation.runs;
    opt.seed = cfg.seed;
    opt.threads = cfg.simulation.threads;
    return simulate_ensemble(pop, exploration_policy(cfg, pop, L0), x0, opt);
  });
}

// --- learn ----------------------------------------------------------------------------

struct LearningOutcome {
  DataMatrices data;
  ExcitationReport excitation;
  LearnedSolution solution;
};

inline WindowSet window_set(const LearningSpec& spec) {
  return contiguous_windows(spec.window_start, spec.window_length, spec.windows);
}

/// Reads only the ensemble and the cost model.
inline LearningOutcome learn_stage(const TrajectoryEnsemble& ens, const CostModel& costs,
                                   const Matrix& L0, const LearningSpec& spec) {
  return in_stage(Stage::kLearn, [&] {
    LearningOutcome out;
    out.data = compute_data_integrals(ens, window_set(spec), spec.quadrature);
    out.excitation = check_excitation(assemble_regression(
        out.data, costs, class_blocks(L0, costs.state_dims, costs.input_dims), L0));
    if (!out.excitation.passed()) {
      std::string msg = "insufficient excitation:";
      for (std::size_t k = 0; k < out.excitation.classes.size(); ++k)
        msg += " class " + std::to_string(k) + " rank " +
               std::to_string(out.excitation.classes[k].rank) + "/" +
               std::to_string(out.excitation.classes[k].required) + ";";
      msg += " global rank " + std::to_string(out.excitation.global.rank) + "/" +
             std::to_string(out.excitation.global.required);
      throw ExcitationError(msg);
    }
    PolicyIterationOptions opt;
    opt.eps = spec.eps;
    opt.max_iters = spec.max_iters;
    opt.throw_on_nonconvergence = false;
    out.solution = policy_iteration(out.data, costs, L0, opt);
    return out;
  });
}

inline json excitation_to_json(const ExcitationReport& e) {
  auto one = [](const RankCheck& c) {
    return json{{"required", c.required}, {"rank", c.rank}, {"rows", c.rows},
                {"sigma_max", c.sigma_max}, {"margin", c.margin}, {"passed", c.passed()}};
  };
  json classes = json::array();
  for (const auto& c : e.classes) classes.push_back(one(c));
  return {{"classes", classes}, {"global", one(e.global)}, {"passed", e.passed()}};
}

inline json learned_to_json(const LearnedSolution& s) {
  auto mats = [](const std::vector<Matrix>& v) {
    json a = json::array();
    for (const auto& m : v) a.push_back(matrix_to_json(m));
    return a;
  };
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  json history = json::array();
  for (const auto& it : s.history) {
    json steps = json::array();
    for (double x : it.class_steps) steps.push_back(num(x));
    history.push_back({{"class_P", mats(it.class_P)},
                       {"class_gains", mats(it.class_gains)},
                       {"class_theta", it.class_theta},
                       {"class_steps", steps},
                       {"Omega", matrix_to_json(it.Omega)},
                       {"global_gain", matrix_to_json(it.global_gain)},
                       {"theta_omega", it.theta_omega},
                       {"global_step", num(it.global_step)}});
  }
  return {{"converged", s.converged}, {"history", history}};
}

inline LearnedSolution learned_from_json(const json& j) {
  auto mats = [](const json& a, const std::string& what) {
    std::vector<Matrix> v;
    for (const auto& m : a) v.push_back(matrix_from_json(m, what));
    return v;
  };
  auto num = [](const json& x) {
    return x.is_null() ? std::numeric_limits<double>::infinity() : x.get<double>();
  };
  LearnedSolution s;
  s.converged = j.at("converged").get<bool>();
  for (const auto& h : j.at("history")) {
    LearnedIterate it;
    it.class_P = mats(h.at("class_P"), "class_P");
    it.class_gains = mats(h.at("class_gains"), "class_gains");
    it.class_theta = h.at("class_theta").get<std::vector<double>>();
    for (const auto& x : h.at("class_steps")) it.class_steps.push_back(num(x));
    it.Omega = matrix_from_json(h.at("Omega"), "Omega");
    it.global_gain = matrix_from_json(h.at("global_gain"), "global_gain");
    it.theta_omega = h.at("theta_omega").get<double>();
    it.global_step = num(h.at("global_step"));
    s.history.push_back(std::move(it));
  }
  if (s.history.empty()) throw ConfigError("learned solution has no iterations");
  const auto& last = s.history.back();
  s.class_P = last.class_P;
  s.class_gains = last.class_gains;
  s.class_theta = last.class_theta;
  s.Omega = last.Omega;
  s.global_gain = last.global_gain;
  s.theta_omega = last.theta_omega;
  return s;
}

inline void write_learned(const std::filesystem::path& dir, const LearnedSolution& s) {
  for (std::size_t k = 0; k < s.class_P.size(); ++k)
    write_matrix_csv(dir / ("P_" + std::to_string(k + 1) + ".csv"), s.class_P[k]);
  write_matrix_csv(dir / "Omega.csv", s.Omega);
  write_matrix_csv(dir / "Pi.csv", s.Pi());
  write_gain_set(dir, s.gains());

  auto out = open_output(dir / "iterations.csv");
  out << "iteration";
  for (std::size_t k = 0; k < s.class_P.size(); ++k) out << ",step_P_" << k + 1 << ",theta_P_" << k + 1;
  out << ",step_Omega,theta_Omega\n";
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    const auto& it = s.history[i];
    out << i + 1;
    for (std::size_t k = 0; k < it.class_P.size(); ++k)
      out << ',' << format_double(it.class_steps[k]) << ',' << format_double(it.class_theta[k]);
    out << ',' << format_double(it.global_step) << ',' << format_double(it.theta_omega) << '\n';
  }
  write_json(dir / "history.json", learned_to_json(s));
  write_json(dir / "learned.json", {{"iterations", s.iterations()},
                                    {"converged", s.converged},
                                    {"class_theta", s.class_theta},
                                    {"theta_omega", s.theta_omega}});
}

// --- evaluate -------------------------------------------------------------------------

struct ErrorPair {
  double frobenius = 0.0;
  double max_abs = 0.0;
};

inline ErrorPair matrix_error(const Matrix& learned, const Matrix& truth) {
  if (learned.rows() != truth.rows() || learned.cols() != truth.cols())
    throw DimensionError("matrix_error: shapes differ");
  const Matrix d = learned - truth;
  return {d.norm(), d.size() ? d.cwiseAbs().maxCoeff() : 0.0};
}

struct ErrorCurve {
  std::string name;
  std::vector<double> frobenius;  // one entry per iteration
  std::vector<double> max_abs;
};

struct EntryRow {
  std::string parameter;
  double learned = 0.0;
  double truth = 0.0;
  double error = 0.0;
};

struct MeanFieldComparison {
  double ode_gap = 0.0;       // sup_t ||Xbar_learned - Xbar_truth||_inf
  double gain_error = 0.0;    // ||L_Omega learned - truth||_F
  double gap_per_gain_error = 0.0;
  std::vector<double> population_gap_learned;  // per seed, sup-norm gap to the ODE
  std::vector<double> population_gap_truth;
  double mean_population_gap_learned = 0.0;
  double mean_population_gap_truth = 0.0;
  bool bounded = true;
};

struct EvaluationReport {
  std::vector<ErrorPair> class_gain_errors;
  std::vector<ErrorPair> class_P_errors;
  ErrorPair omega_error;
  ErrorPair global_gain_error;
  std::vector<ErrorCurve> curves;
  std::vector<EntryRow> entries;
  int iterations = 0;
  bool converged = false;
  std::optional<MeanFieldComparison> mean_field;
};

/// Entry selection mirroring the published comparison tables: all local
/// gains, upper triangles of P_k, then Omega_11, 2 Omega_12, 2 Omega_13,
/// Omega_66 and L_Omega entries (1,1), (1,2), (2,3), (3,6) where they exist.
inline std::vector<EntryRow> entry_table(const LearnedSolution& learned, const RiccatiSolution& truth) {
  std::vector<EntryRow> rows;
  auto add = [&](std::string name, double l, double t) {
    rows.push_back({std::move(name), l, t, std::abs(l - t)});
  };
  auto ij = [](Index i, Index j) { return std::to_string(i + 1) + "," + std::to_string(j + 1); };
  for (std::size_t k = 0; k < truth.class_P.size(); ++k) {
    const std::string tag = std::to_string(k + 1);
    const Matrix &Ll = learned.class_gains[k], &Lt = truth.gains.class_gains[k];
    for (Index i = 0; i < Lt.rows(); ++i)
      for (Index j = 0; j < Lt.cols(); ++j) add("L_P" + tag + "(" + ij(i, j) + ")", Ll(i, j), Lt(i, j));
    const Matrix &Pl = learned.class_P[k], &Pt = truth.class_P[k];
    for (Index i = 0; i < Pt.rows(); ++i)
      for (Index j = i; j < Pt.cols(); ++j) add("P" + tag + "(" + ij(i, j) + ")", Pl(i, j), Pt(i, j));
  }
  const Matrix &Ol = learned.Omega, &Ot = truth.Omega;
  const Index N = Ot.rows();
  add("Omega(1,1)", Ol(0, 0), Ot(0, 0));
  if (N > 1) add("2Omega(1,2)", 2.0 * Ol(0, 1), 2.0 * Ot(0, 1));
  if (N > 2) add("2Omega(1,3)", 2.0 * Ol(0, 2), 2.0 * Ot(0, 2));
  if (N > 5) add("Omega(6,6)", Ol(5, 5), Ot(5, 5));
  const Matrix &Gl = learned.global_gain, &Gt = truth.gains.global_gain;
  for (auto [i, j] : {std::pair<Index, Index>{0, 0}, {0, 1}, {1, 2}, {2, 5}})
    if (i < Gt.rows() && j < Gt.cols()) add("L_Omega(" + ij(i, j) + ")", Gl(i, j), Gt(i, j));
  return rows;
}

inline EvaluationReport compare_to_ground_truth(const LearnedSolution& learned,
                                                const RiccatiSolution& truth) {
  if (learned.class_P.size() != truth.class_P.size())
    throw DimensionError("compare_to_ground_truth: class counts differ");
  EvaluationReport r;
  r.iterations = learned.iterations();
  r.converged = learned.converged;
  const std::size_t K = truth.class_P.size();
  for (std::size_t k = 0; k < K; ++k) {
    r.class_gain_errors.push_back(matrix_error(learned.class_gains[k], truth.gains.class_gains[k]));
    r.class_P_errors.push_back(matrix_error(learned.class_P[k], truth.class_P[k]));
  }
  r.omega_error = matrix_error(learned.Omega, truth.Omega);
  r.global_gain_error = matrix_error(learned.global_gain, truth.gains.global_gain);

  for (std::size_t k = 0; k < K; ++k) {
    ErrorCurve g{"L_P" + std::to_string(k + 1), {}, {}}, p{"P" + std::to_string(k + 1), {}, {}};
    for (const auto& it : learned.history) {
      const auto eg = matrix_error(it.class_gains[k], truth.gains.class_gains[k]);
      const auto ep = matrix_error(it.class_P[k], truth.class_P[k]);
      g.frobenius.push_back(eg.frobenius);
      g.max_abs.push_back(eg.max_abs);
      p.frobenius.push_back(ep.frobenius);
      p.max_abs.push_back(ep.max_abs);
    }
    r.curves.push_back(std::move(g));
    r.curves.push_back(std::move(p));
  }
  ErrorCurve o{"Omega", {}, {}}, lo{"L_Omega", {}, {}};
  for (const auto& it : learned.history) {
    const auto eo = matrix_error(it.Omega, truth.Omega);
    const auto el = matrix_error(it.global_gain, truth.gains.global_gain);
    o.frobenius.push_back(eo.frobenius);
    o.max_abs.push_back(eo.max_abs);
    lo.frobenius.push_back(el.frobenius);
    lo.max_abs.push_back(el.max_abs);
  }
  r.curves.push_back(std::move(o));
  r.curves.push_back(std::move(lo));
  r.entries = entry_table(learned, truth);
  return r;
}

/// Largest |entry| of a - b over all columns.
inline double sup_gap(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline std::uint64_t evaluation_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index) {
  return splitmix64(master ^ splitmix64((tag << 32) ^ index));
}

/// Mean path of N_s representative-agent replays under alpha = -L_Omega X.
inline Matrix replay_mean_path(const PopulationModel& pop, const Matrix& global_gain,
                               const Vector& x0, Index replays, double t_total, double h,
                               std::uint64_t seed, unsigned threads) {
  NoiseSpec quiet;
  quiet.sinusoids = 0;
  EnsembleOptions opt;
  opt.t_total = t_total;
  opt.h = h;
  opt.runs = replays;
  opt.seed = seed;
  opt.threads = threads;
  const auto ens =
      simulate_ensemble(pop, ExplorationPolicy(global_gain, pop.input_dims(), quiet, seed), x0, opt);
  Matrix mean = Matrix::Zero(pop.N(), ens.grid_points());
  for (const auto& X : ens.states) mean += X;
  return mean / static_cast<double>(ens.runs());
}

namespace detail {

inline void write_paired_paths(const std::filesystem::path& p, double h, const Matrix& learned,
                               const Matrix& truth) {
  auto out = open_output(p);
  out << "time";
  for (Index i = 0; i < learned.rows(); ++i) out << ",learned_x" << i + 1;
  for (Index i = 0; i < truth.rows(); ++i) out << ",truth_x" << i + 1;
  out << '\n';
  for (Index j = 0; j < learned.cols(); ++j) {
    out << format_double(static_cast<double>(j) * h);
    for (Index i = 0; i < learned.rows(); ++i) out << ',' << format_double(learned(i, j));
    for (Index i = 0; i < truth.rows(); ++i) out << ',' << format_double(truth(i, j));
    out << '\n';
  }
}

inline void write_population(const std::filesystem::path& p, const PopulationSimulation& s) {
  auto out = open_output(p);
  out << "time";
  for (std::size_t k = 0; k < s.class_means.size(); ++k)
    for (Index i = 0; i < s.class_means[k].rows(); ++i) {
      const std::string c = "c" + std::to_string(k + 1) + "_x" + std::to_string(i + 1);
      out << ',' << c << "_mean," << c << "_lower," << c << "_upper";
    }
  out << '\n';
  const Index J = s.empirical_mean_stack.cols();
  std::vector<Matrix> lo, hi;
  for (std::size_t k = 0; k < s.class_means.size(); ++k) {
    lo.push_back(s.lower_envelope(static_cast<Index>(k)));
    hi.push_back(s.upper_envelope(static_cast<Index>(k)));
  }
  for (Index j = 0; j < J; ++j) {
    out << format_double(s.time(j));
    for (std::size_t k = 0; k < s.class_means.size(); ++k)
      for (Index i = 0; i < s.class_means[k].rows(); ++i)
        out << ',' << format_double(s.class_means[k](i, j)) << ',' << format_double(lo[k](i, j))
            << ',' << format_double(hi[k](i, j));
    out << '\n';
  }
}

}  // namespace detail

/// Mean-field ODE, N_s replay and finite-population runs under both gain
/// sets. Writes mean_field_ode.csv, mean_field_replay.csv and
/// population_{learned,truth}.csv (first seed) into `dir` when it is set.
inline MeanFieldComparison emit_mean_field_comparison(const PopulationModel& pop,
                                                      const GainSet& learned, const GainSet& truth,
                                                      const ExperimentConfig& cfg,
                                                      const std::optional<std::filesystem::path>& dir) {
  const EvaluationSpec& ev = cfg.evaluation;
  MeanFieldComparison mf;
  const Vector ones = Vector::Ones(pop.N());
  const auto ode_l = simulate_mean_field(pop, learned, ones, ev.t_total, ev.h);
  const auto ode_t = simulate_mean_field(pop, truth, ones, ev.t_total, ev.h);
  mf.ode_gap = sup_gap(ode_l.path, ode_t.path);
  mf.gain_error = (learned.global_gain - truth.global_gain).norm();
  mf.gap_per_gain_error = mf.gain_error > 0.0 ? mf.ode_gap / mf.gain_error : 0.0;
  if (dir) detail::write_paired_paths(*dir / "mean_field_ode.csv", ev.h, ode_l.path, ode_t.path);

  if (ev.replay_runs > 0) {
    const std::uint64_t s = evaluation_seed(cfg.seed, 1, 0);
    const Matrix rl = replay_mean_path(pop, learned.global_gain, ones, ev.replay_runs, ev.t_total,
                                       ev.h, s, cfg.simulation.threads);
    const Matrix rt = replay_mean_path(pop, truth.global_gain, ones, ev.replay_runs, ev.t_total,
                                       ev.h, s, cfg.simulation.threads);
    if (dir) detail::write_paired_paths(*dir / "mean_field_replay.csv", ev.h, rl, rt);
  }

  // The ODE for the population comparison starts at the mean of the x0 law.
  const Vector xbar0 = Vector::Constant(pop.N(), 0.5 * (ev.x0_min + ev.x0_max));
  const Matrix ode_pl = simulate_mean_field(pop, learned, xbar0, ev.t_total, ev.h).path;
  const Matrix ode_pt = simulate_mean_field(pop, truth, xbar0, ev.t_total, ev.h).path;
  PopulationOptions po;
  po.agents_per_class = ev.agents_per_class;
  po.t_total = ev.t_total;
  po.h = ev.h;
  for (Index s = 0; s < ev.population_seeds; ++s) {
    po.seed = evaluation_seed(cfg.seed, 2, static_cast<std::uint64_t>(s));
    const auto sampler = uniform_box_sampler(ev.x0_min, ev.x0_max);
    const auto pl = simulate_finite_population(pop, learned, sampler, po);
    const auto pt = simulate_finite_population(pop, truth, sampler, po);
    mf.population_gap_learned.push_back(sup_gap(pl.empirical_mean_stack, ode_pl));
    mf.population_gap_truth.push_back(sup_gap(pt.empirical_mean_stack, ode_pt));
    for (const auto* sim : {&pl, &pt})
      for (const auto& agents : sim->agent_paths)
        for (const auto& path : agents) mf.bounded = mf.bounded && path.allFinite();
    if (s == 0 && dir) {
      detail::write_population(*dir / "population_learned.csv", pl);
      detail::write_population(*dir / "population_truth.csv", pt);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  mf.mean_population_gap_learned = mean(mf.population_gap_learned);
  mf.mean_population_gap_truth = mean(mf.population_gap_truth);
  return mf;
}

inline json report_to_json(const EvaluationReport& r) {
  auto pair = [](const ErrorPair& e) { return json{{"frobenius", e.frobenius}, {"max_abs", e.max_abs}}; };
  json classes = json::array();
  for (std::size_t k = 0; k < r.class_P_errors.size(); ++k)
    classes.push_back({{"L_P", pair(r.class_gain_errors[k])}, {"P", pair(r.class_P_errors[k])}});
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"parameter", e.parameter}, {"learned", e.learned}, {"truth", e.truth},
                       {"error", e.error}});
  json out = {{"iterations", r.iterations},
              {"converged", r.converged},
              {"classes", classes},
              {"Omega", pair(r.omega_error)},
              {"L_Omega", pair(r.global_gain_error)},
              {"entries", entries}};
  if (r.mean_field) {
    const auto& m = *r.mean_field;
    out["mean_field"] = {{"ode_gap", m.ode_gap},
                         {"gain_error", m.gain_error},
                         {"gap_per_gain_error", m.gap_per_gain_error},
                         {"population_gap_learned", m.population_gap_learned},
                         {"population_gap_truth", m.population_gap_truth},
                         {"mean_population_gap_learned", m.mean_population_gap_learned},
                         {"mean_population_gap_truth", m.mean_population_gap_truth},
                         {"bounded", m.bounded}};
  }
  return out;
}

/// errors_by_iteration.csv (one row per iteration, Frobenius and max-entry
/// columns per matrix) and entries.csv.
inline void write_report(const std::filesystem::path& dir, const EvaluationReport& r) {
  {
    auto out = open_output(dir / "errors_by_iteration.csv");
    out << "iteration";
    for (const auto& c : r.curves) out << ',' << c.name << "_frobenius," << c.name << "_max";
    out << '\n';
    for (int i = 0; i < r.iterations; ++i) {
      out << i + 1;
      for (const auto& c : r.curves)
        out << ',' << format_double(c.frobenius[static_cast<std::size_t>(i)]) << ','
            << format_double(c.max_abs[static_cast<std::size_t>(i)]);
      out << '\n';
    }
  }
  {
    auto out = open_output(dir / "entries.csv");
    out << "parameter,learned,truth,error\n";
    for (const auto& e : r.entries)
      out << e.parameter << ',' << format_double(e.learned) << ',' << format_double(e.truth) << ','
          << format_double(e.error) << '\n';
  }
  write_json(dir / "report.json", report_to_json(r));
}

// --- pipeline ---------------------------------------------------------------------------

inline json manifest(const ExperimentConfig& cfg) {
  return {{"manifest_version", 1},
          {"library_version", kVersion},
          {"config_hash", hex64(config_hash(cfg))},
          {"seed", cfg.seed},
          {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__},
          {"config", to_json(cfg)}};
}

struct RunOptions {
  std::filesystem::path out_dir = "mfg_irl_output";
  bool force = false;
  bool write_ensemble = false;
  bool mean_field = true;
  std::ostream* log = &std::cerr;
};

struct PipelineResult {
  int exit_code = 0;
  ValidationOutcome validation;
  RiccatiSolution truth;
  LearningOutcome learning;
  EvaluationReport report;
};

inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  std::ostream& log = *opt.log;
  const auto& dir = opt.out_dir;
  PipelineResult res;
  write_json(dir / "manifest.json", manifest(cfg));

  res.validation = validate_stage(cfg);
  write_json(dir / "validation.json", validation_to_json(res.validation));
  if (!res.validation.passed()) {
    for (const auto& f : res.validation.failures) log << "validate: " << f << '\n';
    if (!opt.force) throw StageError(Stage::kValidate, "assumption checks failed");
    log << "WARNING: continuing past failed validation because --force was given; results are "
           "not covered by the convergence guarantees\n";
  }
  const PopulationModel& pop = res.validation.population;
  const Matrix& L0 = res.validation.initial_gain;

  log << "truth: solving Riccati equations\n";
  res.truth = truth_stage(pop);
  write_truth(dir / "truth", res.truth);

  log << "simulate: " << cfg.simulation.runs << " runs x " << cfg.simulation.t_total << " s\n";
  const TrajectoryEnsemble ens = simulate_stage(cfg, pop, L0);
  if (opt.write_ensemble) write_ensemble(dir / "ensemble.bin", ens);

  log << "learn: policy iteration\n";
  res.learning = learn_stage(ens, costs_from_spec(cfg.population), L0, cfg.learning);
  write_json(dir / "excitation.json", excitation_to_json(res.learning.excitation));
  write_learned(dir / "learned", res.learning.solution);

  log << "evaluate: comparing with ground truth\n";
  res.report = in_stage(Stage::kEvaluate, [&] {
    EvaluationReport r = compare_to_ground_truth(res.learning.solution, res.truth);
    if (opt.mean_field)
      r.mean_field = emit_mean_field_comparison(pop, res.learning.solution.gains(),
                                                res.truth.gains, cfg, dir);
    return r;
  });
  write_report(dir, res.report);

  if (!res.validation.passed())
    res.exit_code = exit_code(Stage::kValidate);
  else if (!res.learning.solution.converged)
    res.exit_code = exit_code(Stage::kLearn);
  else if (res.report.mean_field && !res.report.mean_field->bounded)
    res.exit_code = exit_code(Stage::kEvaluate);
  return res;
}

}  // namespace mfg_irl
