// mfg_irl command-line driver.
//
//   mfg_irl validate|truth|simulate|learn|evaluate|run [--config FILE]
//           [--set path=value]... [--seed N] [--out DIR] [--force]
//
// Exit codes: 0 success, 1 config, 2 validate, 3 truth, 4 simulate,
// 5 learn, 6 evaluate.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfg_irl/mfg_irl.hpp"

namespace {

using namespace mfg_irl;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config,-c", c.config, "experiment config (JSON) or a run manifest");
  cmd->add_option("--set", c.overrides, "override a config value, e.g. simulation.runs=10");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--out,-o", c.out, "output directory (default $MFG_IRL_OUTPUT_DIR)");
  cmd->add_flag("--force", c.force, "continue past failed assumption checks");
}

ExperimentConfig load(const Common& c) {
  try {
    json doc = c.config.empty() ? to_json(default_config()) : config_document(read_json(c.config));
    for (const auto& o : c.overrides) apply_override(doc, o);
    if (c.seed) doc["seed"] = *c.seed;
    return config_from_json(doc);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(Stage::kConfig, e.what());
  }
}

ValidationOutcome checked_validation(const ExperimentConfig& cfg, const Common& c, const fs::path& out) {
  auto v = validate_stage(cfg);
  write_json(out / "validation.json", validation_to_json(v));
  if (!v.passed()) {
    for (const auto& f : v.failures) std::cerr << "validate: " << f << '\n';
    if (!c.force) throw StageError(Stage::kValidate, "assumption checks failed");
    std::cerr << "WARNING: continuing past failed validation (--force)\n";
  }
  return v;
}

void print_report(const EvaluationReport& r) {
  std::printf("iterations %d, converged %s\n", r.iterations, r.converged ? "yes" : "no");
  for (std::size_t k = 0; k < r.class_P_errors.size(); ++k)
    std::printf("class %zu  ||L_P - L_P*||_F = %.4g  ||P - P*||_F = %.4g\n", k + 1,
                r.class_gain_errors[k].frobenius, r.class_P_errors[k].frobenius);
  std::printf("global   ||L_Omega - L_Omega*||_F = %.4g  ||Omega - Omega*||_F = %.4g\n",
              r.global_gain_error.frobenius, r.omega_error.frobenius);
  std::printf("%-16s %12s %12s %10s\n", "parameter", "learned", "truth", "error");
  for (const auto& e : r.entries)
    std::printf("%-16s %12.4f %12.4f %10.4f\n", e.parameter.c_str(), e.learned, e.truth, e.error);
  if (r.mean_field) {
    const auto& m = *r.mean_field;
    std::printf("mean field: ODE gap %.4g (%.4g per unit gain error), population gap %.4g learned / "
                "%.4g truth\n",
                m.ode_gap, m.gap_per_gain_error, m.mean_population_gap_learned,
                m.mean_population_gap_truth);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-free learning of multi-class LQG mean-field-game gains"};
  app.require_subcommand(1);

  Common common;
  auto* validate = app.add_subcommand("validate", "check the standing assumptions");
  auto* truth = app.add_subcommand("truth", "model-based Riccati solutions");
  auto* simulate = app.add_subcommand("simulate", "generate the exploration ensemble");
  auto* learn = app.add_subcommand("learn", "run the learner on a saved ensemble");
  auto* evaluate = app.add_subcommand("evaluate", "compare learned gains with ground truth");
  auto* run = app.add_subcommand("run", "full pipeline");
  for (auto* cmd : {validate, truth, simulate, learn, evaluate, run}) add_common(cmd, common);

  bool csv = false, keep_ensemble = false, no_mean_field = false;
  std::string ensemble_path, l0_path, learned_dir;
  simulate->add_flag("--csv", csv, "also write the ensemble in long CSV form");
  learn->add_option("--ensemble", ensemble_path, "ensemble file (default OUT/ensemble.bin)");
  learn->add_option("--L0", l0_path, "initial gain CSV (default next to the ensemble)");
  evaluate->add_option("--learned", learned_dir, "learned solution directory (default OUT/learned)");
  run->add_flag("--keep-ensemble", keep_ensemble, "write ensemble.bin");
  for (auto* cmd : {evaluate, run})
    cmd->add_flag("--no-mean-field", no_mean_field, "skip the mean-field comparison");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = load(common);
    const fs::path out = resolve_output_dir(common.out);

    if (*validate) {
      const auto v = validate_stage(cfg);
      write_json(out / "validation.json", validation_to_json(v));
      for (const auto& f : v.failures) std::cerr << "validate: " << f << '\n';
      std::printf("validation %s\n", v.passed() ? "passed" : "FAILED");
      return v.passed() ? 0 : exit_code(Stage::kValidate);
    }

    if (*truth) {
      const auto v = checked_validation(cfg, common, out);
      const auto t = truth_stage(v.population);
      write_truth(out / "truth", t);
      std::printf("ground truth written to %s (max class residual %.3g, Omega residual %.3g)\n",
                  (out / "truth").c_str(),
                  t.class_residuals.empty() ? 0.0
                                            : *std::max_element(t.class_residuals.begin(),
                                                                t.class_residuals.end()),
                  t.omega_residual);
      return 0;
    }

    if (*simulate) {
      const auto v = checked_validation(cfg, common, out);
      const auto ens = simulate_stage(cfg, v.population, v.initial_gain);
      write_json(out / "manifest.json", manifest(cfg));
      write_ensemble(out / "ensemble.bin", ens);
      write_matrix_csv(out / "L0.csv", v.initial_gain);
      if (csv) write_ensemble_csv(out / "ensemble.csv", ens);
      std::printf("%lld runs x %lld steps written to %s\n", static_cast<long long>(ens.runs()),
                  static_cast<long long>(ens.steps), (out / "ensemble.bin").c_str());
      return 0;
    }

    if (*learn) {
      // Only the ensemble, the initial gain and the cost weights are read here.
      const fs::path ens_file = ensemble_path.empty() ? out / "ensemble.bin" : fs::path(ensemble_path);
      const fs::path l0_file = l0_path.empty() ? ens_file.parent_path() / "L0.csv" : fs::path(l0_path);
      const auto ens = in_stage(Stage::kLearn, [&] { return read_ensemble(ens_file); });
      const Matrix L0 = in_stage(Stage::kLearn, [&] { return read_matrix_csv(l0_file); });
      const CostModel costs = in_stage(Stage::kLearn, [&] { return costs_from_spec(cfg.population); });
      const auto res = learn_stage(ens, costs, L0, cfg.learning);
      write_json(out / "excitation.json", excitation_to_json(res.excitation));
      write_learned(out / "learned", res.solution);
      std::printf("policy iteration: %d iterations, converged %s\n", res.solution.iterations(),
                  res.solution.converged ? "yes" : "no");
      return res.solution.converged ? 0 : exit_code(Stage::kLearn);
    }

    if (*evaluate) {
      const auto v = checked_validation(cfg, common, out);
      const auto t = truth_stage(v.population);
      const fs::path dir = learned_dir.empty() ? out / "learned" : fs::path(learned_dir);
      const auto learned =
          in_stage(Stage::kEvaluate, [&] { return learned_from_json(read_json(dir / "history.json")); });
      auto report = in_stage(Stage::kEvaluate, [&] {
        EvaluationReport r = compare_to_ground_truth(learned, t);
        if (!no_mean_field)
          r.mean_field = emit_mean_field_comparison(v.population, learned.gains(), t.gains, cfg, out);
        return r;
      });
      write_report(out, report);
      print_report(report);
      return report.mean_field && !report.mean_field->bounded ? exit_code(Stage::kEvaluate) : 0;
    }

    RunOptions opt;
    opt.out_dir = out;
    opt.force = common.force;
    opt.write_ensemble = keep_ensemble;
    opt.mean_field = !no_mean_field;
    const auto res = run_pipeline(cfg, opt);
    print_report(res.report);
    std::printf("outputs in %s\n", out.c_str());
    return res.exit_code;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.stage());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(Stage::kConfig);
  }
}
