// Experiment configuration: JSON schema, defaults, dotted-path overrides and
// a stable hash of the resolved configuration.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfg_irl/io.hpp"
#include "mfg_irl/irl.hpp"
#include "mfg_irl/model.hpp"
#include "mfg_irl/simulator.hpp"

namespace mfg_irl {

struct PopulationSpec {
  std::vector<ClassModel> classes;
  double rho = 0.1;
  Matrix Htilde;           // N x N, zero diagonal blocks; normalized into H
  std::optional<Matrix> H; // explicit coupling, bypasses the construction

  std::vector<Index> state_dims() const {
    std::vector<Index> d;
    for (const auto& c : classes) d.push_back(c.n());
    return d;
  }
  Index N() const {
    Index n = 0;
    for (const auto& c : classes) n += c.n();
    return n;
  }
  Index M() const {
    Index m = 0;
    for (const auto& c : classes) m += c.m();
    return m;
  }
};

struct SimulationSpec {
  double t_total = 20.0;
  double h = 1e-3;
  Index runs = 100;
  std::optional<Vector> x0;  // defaults to ones(N)
  unsigned threads = 1;
};

enum class InitialGainKind { kZero, kFallback, kExplicit };

struct LearningSpec {
  double window_start = 0.0;
  double window_length = 0.1;
  Index windows = 120;
  double eps = 1e-9;
  int max_iters = 50;
  Quadrature quadrature = Quadrature::kLeftPoint;
  InitialGainKind initial_gain = InitialGainKind::kZero;
  Matrix L0;  // used when initial_gain == kExplicit
};

struct EvaluationSpec {
  Index agents_per_class = 50;
  double x0_min = 0.5;
  double x0_max = 1.5;
  Index replay_runs = 100;  // N_s representative-agent replays
  Index population_seeds = 5;
  double t_total = 10.0;
  double h = 1e-3;
};

struct ExperimentConfig {
  PopulationSpec population;
  NoiseSpec exploration;
  SimulationSpec simulation;
  LearningSpec learning;
  EvaluationSpec evaluation;
  std::uint64_t seed = 1;
};

/// The three-class example system with its network coupling.
inline PopulationSpec table1_population() {
  auto diag = [](std::initializer_list<double> v) {
    Vector d(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) d(i++) = x;
    return Matrix(d.asDiagonal());
  };
  PopulationSpec p;
  p.rho = 0.1;

  ClassModel c1, c2, c3;
  c1.A = (Matrix(2, 2) << 0, 10, -10, -3).finished();
  c1.B = (Matrix(2, 1) << 1, 1).finished();
  c1.Q = diag({20, 10});
  c1.R = diag({0.8});
  c1.D = 0.1 * Matrix::Identity(2, 2);

  c2.A = (Matrix(3, 3) << 0, 1, 0, 0, 0, 1, -2, -3, -5).finished();
  c2.B = (Matrix(3, 2) << 0, 0, 0, 1, 1, 0.5).finished();
  c2.Q = diag({10, 15, 20});
  c2.R = diag({0.5, 0.7});
  c2.D = 0.1 * Matrix::Identity(3, 3);

  c3.A = (Matrix(2, 2) << 0, -4, 3, -6).finished();
  c3.B = (Matrix(2, 1) << 0.8, 3).finished();
  c3.Q = diag({30, 20});
  c3.R = diag({0.6});
  c3.D = 0.1 * Matrix::Identity(2, 2);

  for (ClassModel* c : {&c1, &c2, &c3}) {
    c->rho = p.rho;
    p.classes.push_back(*c);
  }

  // Htilde_12 = Htilde_32 = [I_2 0]/2, Htilde_13 = I_2/2 and their transposes.
  Matrix Ht = Matrix::Zero(7, 7);
  Matrix half_i20 = Matrix::Zero(2, 3);
  half_i20.leftCols(2) = 0.5 * Matrix::Identity(2, 2);
  Ht.block(0, 2, 2, 3) = half_i20;
  Ht.block(2, 0, 3, 2) = half_i20.transpose();
  Ht.block(5, 2, 2, 3) = half_i20;
  Ht.block(2, 5, 3, 2) = half_i20.transpose();
  Ht.block(0, 5, 2, 2) = 0.5 * Matrix::Identity(2, 2);
  Ht.block(5, 0, 2, 2) = 0.5 * Matrix::Identity(2, 2);
  p.Htilde = Ht;
  return p;
}

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.population = table1_population();
  return c;
}

/// H from the spec. Reads Q and Htilde only.
inline Matrix coupling_matrix(const PopulationSpec& p) {
  const Index N = p.N();
  if (p.H) {
    if (p.H->rows() != N || p.H->cols() != N) throw DimensionError("explicit H must be N x N");
    return *p.H;
  }
  std::vector<Matrix> Qs;
  for (const auto& c : p.classes) Qs.push_back(c.Q);
  const auto dims = p.state_dims();
  const Matrix Ht = p.Htilde.size() == 0 ? Matrix::Zero(N, N) : p.Htilde;
  return build_coupling_matrix(block_diagonal(Qs), Ht, dims);
}

inline PopulationModel build_population(const PopulationSpec& p) {
  return assemble_population(p.classes, coupling_matrix(p));
}

/// The learner's view of the problem: costs and dimensions only.
inline CostModel costs_from_spec(const PopulationSpec& p) {
  CostModel c;
  c.rho = p.rho;
  std::vector<Matrix> Qs, Rs;
  for (const auto& cl : p.classes) {
    c.state_dims.push_back(cl.n());
    c.input_dims.push_back(cl.m());
    c.Q.push_back(cl.Q);
    c.R.push_back(cl.R);
  }
  const Matrix Q = block_diagonal(c.Q);
  const Matrix H = coupling_matrix(p);
  c.coupled_Q = symmetric_part(Q * (Matrix::Identity(Q.rows(), Q.rows()) - H));
  c.R_aggregate = block_diagonal(c.R);
  return c;
}

// --- JSON ---------------------------------------------------------------------------

namespace detail {

inline const char* quadrature_name(Quadrature q) {
  return q == Quadrature::kLeftPoint ? "left_point" : "trapezoidal";
}

inline Quadrature quadrature_from(const std::string& s) {
  if (s == "left_point") return Quadrature::kLeftPoint;
  if (s == "trapezoidal") return Quadrature::kTrapezoidal;
  throw ConfigError("learning.quadrature must be \"left_point\" or \"trapezoidal\"");
}

template <class T>
void read_if(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json pop;
  pop["rho"] = c.population.rho;
  json classes = json::array();
  for (const auto& cl : c.population.classes)
    classes.push_back({{"A", matrix_to_json(cl.A)},
                       {"B", matrix_to_json(cl.B)},
                       {"D", matrix_to_json(cl.D)},
                       {"Q", matrix_to_json(cl.Q)},
                       {"R", matrix_to_json(cl.R)}});
  pop["classes"] = classes;
  if (c.population.H)
    pop["H"] = matrix_to_json(*c.population.H);
  else
    pop["Htilde"] = matrix_to_json(c.population.Htilde);

  json learning = {{"window_start", c.learning.window_start},
                   {"window_length", c.learning.window_length},
                   {"windows", c.learning.windows},
                   {"eps", c.learning.eps},
                   {"max_iters", c.learning.max_iters},
                   {"quadrature", detail::quadrature_name(c.learning.quadrature)}};
  switch (c.learning.initial_gain) {
    case InitialGainKind::kZero: learning["L0"] = "zero"; break;
    case InitialGainKind::kFallback: learning["L0"] = "fallback"; break;
    case InitialGainKind::kExplicit: learning["L0"] = matrix_to_json(c.learning.L0); break;
  }

  json sim = {{"t_total", c.simulation.t_total},
              {"h", c.simulation.h},
              {"runs", c.simulation.runs},
              {"threads", c.simulation.threads}};
  sim["x0"] = c.simulation.x0 ? vector_to_json(*c.simulation.x0) : json(nullptr);

  return {{"seed", c.seed},
          {"population", pop},
          {"exploration",
           {{"sinusoids", c.exploration.sinusoids},
            {"amplitude", c.exploration.amplitude},
            {"omega_min", c.exploration.omega_min},
            {"omega_max", c.exploration.omega_max},
            {"redraw_per_run", c.exploration.redraw_per_run}}},
          {"simulation", sim},
          {"learning", learning},
          {"evaluation",
           {{"agents_per_class", c.evaluation.agents_per_class},
            {"x0_min", c.evaluation.x0_min},
            {"x0_max", c.evaluation.x0_max},
            {"replay_runs", c.evaluation.replay_runs},
            {"population_seeds", c.evaluation.population_seeds},
            {"t_total", c.evaluation.t_total},
            {"h", c.evaluation.h}}}};
}

/// Missing sections and keys keep their defaults; a missing population
/// section means the bundled three-class system.
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_config();
  detail::reject_unknown(j, {"seed", "population", "exploration", "simulation", "learning",
                             "evaluation"},
                         "config");
  detail::read_if(j, "seed", c.seed, "config");

  if (j.contains("population")) {
    const json& p = j.at("population");
    detail::reject_unknown(p, {"rho", "classes", "Htilde", "Htilde_blocks", "H"}, "population");
    PopulationSpec spec;
    detail::read_if(p, "rho", spec.rho, "population");
    if (!p.contains("classes") || !p.at("classes").is_array() || p.at("classes").empty())
      throw ConfigError("population.classes must be a non-empty array");
    for (std::size_t k = 0; k < p.at("classes").size(); ++k) {
      const json& cj = p.at("classes")[k];
      const std::string where = "population.classes[" + std::to_string(k) + "]";
      detail::reject_unknown(cj, {"A", "B", "D", "Q", "R"}, where);
      for (const char* key : {"A", "B", "D", "Q", "R"})
        if (!cj.contains(key)) throw ConfigError(where + ": missing " + key);
      ClassModel cl;
      cl.A = matrix_from_json(cj.at("A"), where + ".A");
      cl.B = matrix_from_json(cj.at("B"), where + ".B");
      cl.D = matrix_from_json(cj.at("D"), where + ".D");
      cl.Q = matrix_from_json(cj.at("Q"), where + ".Q");
      cl.R = matrix_from_json(cj.at("R"), where + ".R");
      cl.rho = spec.rho;
      spec.classes.push_back(std::move(cl));
    }
    const Index N = spec.N();
    const int given = static_cast<int>(p.contains("Htilde")) +
                      static_cast<int>(p.contains("Htilde_blocks")) +
                      static_cast<int>(p.contains("H"));
    if (given > 1) throw ConfigError("population: give only one of Htilde, Htilde_blocks, H");
    spec.Htilde = Matrix::Zero(N, N);
    if (p.contains("Htilde")) {
      spec.Htilde = matrix_from_json(p.at("Htilde"), "population.Htilde");
      if (spec.Htilde.rows() != N || spec.Htilde.cols() != N)
        throw ConfigError("population.Htilde must be " + std::to_string(N) + "x" + std::to_string(N));
    } else if (p.contains("Htilde_blocks")) {
      const auto dims = spec.state_dims();
      const auto off = detail::offsets_of(dims);
      for (const json& b : p.at("Htilde_blocks")) {
        detail::reject_unknown(b, {"row", "col", "matrix"}, "population.Htilde_blocks[]");
        const auto r = b.at("row").get<std::size_t>(), col = b.at("col").get<std::size_t>();
        if (r >= dims.size() || col >= dims.size())
          throw ConfigError("population.Htilde_blocks: class index out of range");
        const Matrix blk = matrix_from_json(b.at("matrix"), "population.Htilde_blocks[].matrix");
        if (blk.rows() != dims[r] || blk.cols() != dims[col])
          throw ConfigError("population.Htilde_blocks: block (" + std::to_string(r) + "," +
                            std::to_string(col) + ") has the wrong shape");
        spec.Htilde.block(off[r], off[col], dims[r], dims[col]) = blk;
      }
    } else if (p.contains("H")) {
      spec.H = matrix_from_json(p.at("H"), "population.H");
    }
    c.population = std::move(spec);
  }

  if (j.contains("exploration")) {
    const json& e = j.at("exploration");
    detail::reject_unknown(e, {"sinusoids", "amplitude", "omega_min", "omega_max", "redraw_per_run"},
                           "exploration");
    detail::read_if(e, "sinusoids", c.exploration.sinusoids, "exploration");
    detail::read_if(e, "amplitude", c.exploration.amplitude, "exploration");
    detail::read_if(e, "omega_min", c.exploration.omega_min, "exploration");
    detail::read_if(e, "omega_max", c.exploration.omega_max, "exploration");
    detail::read_if(e, "redraw_per_run", c.exploration.redraw_per_run, "exploration");
  }

  if (j.contains("simulation")) {
    const json& s = j.at("simulation");
    detail::reject_unknown(s, {"t_total", "h", "runs", "threads", "x0"}, "simulation");
    detail::read_if(s, "t_total", c.simulation.t_total, "simulation");
    detail::read_if(s, "h", c.simulation.h, "simulation");
    detail::read_if(s, "runs", c.simulation.runs, "simulation");
    detail::read_if(s, "threads", c.simulation.threads, "simulation");
    if (s.contains("x0") && !s.at("x0").is_null())
      c.simulation.x0 = vector_from_json(s.at("x0"), "simulation.x0");
  }

  if (j.contains("learning")) {
    const json& l = j.at("learning");
    detail::reject_unknown(l, {"window_start", "window_length", "windows", "eps", "max_iters",
                               "quadrature", "L0"},
                           "learning");
    detail::read_if(l, "window_start", c.learning.window_start, "learning");
    detail::read_if(l, "window_length", c.learning.window_length, "learning");
    detail::read_if(l, "windows", c.learning.windows, "learning");
    detail::read_if(l, "eps", c.learning.eps, "learning");
    detail::read_if(l, "max_iters", c.learning.max_iters, "learning");
    if (l.contains("quadrature")) {
      if (!l.at("quadrature").is_string()) throw ConfigError("learning.quadrature: wrong type");
      c.learning.quadrature = detail::quadrature_from(l.at("quadrature").get<std::string>());
    }
    if (l.contains("L0")) {
      const json& g = l.at("L0");
      if (g.is_string() && g.get<std::string>() == "zero") {
        c.learning.initial_gain = InitialGainKind::kZero;
      } else if (g.is_string() && g.get<std::string>() == "fallback") {
        c.learning.initial_gain = InitialGainKind::kFallback;
      } else if (g.is_array()) {
        c.learning.initial_gain = InitialGainKind::kExplicit;
        c.learning.L0 = matrix_from_json(g, "learning.L0");
      } else {
        throw ConfigError("learning.L0 must be \"zero\", \"fallback\" or an M x N matrix");
      }
    }
  }

  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    detail::reject_unknown(e, {"agents_per_class", "x0_min", "x0_max", "replay_runs",
                               "population_seeds", "t_total", "h"},
                           "evaluation");
    detail::read_if(e, "agents_per_class", c.evaluation.agents_per_class, "evaluation");
    detail::read_if(e, "x0_min", c.evaluation.x0_min, "evaluation");
    detail::read_if(e, "x0_max", c.evaluation.x0_max, "evaluation");
    detail::read_if(e, "replay_runs", c.evaluation.replay_runs, "evaluation");
    detail::read_if(e, "population_seeds", c.evaluation.population_seeds, "evaluation");
    detail::read_if(e, "t_total", c.evaluation.t_total, "evaluation");
    detail::read_if(e, "h", c.evaluation.h, "evaluation");
  }
  return c;
}

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form path=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  std::string pointer;
  for (char ch : path) pointer += ch == '.' ? '/' : ch;
  try {
    doc[json::json_pointer("/" + pointer)] = value;
  } catch (const json::exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
}

/// 64-bit FNV-1a of the canonical (sorted-key, compact) JSON form.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline ExperimentConfig load_config(const std::filesystem::path& p,
                                    const std::vector<std::string>& overrides = {}) {
  json doc = read_json(p);
  for (const auto& o : overrides) apply_override(doc, o);
  try {
    return config_from_json(doc);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

}  // namespace mfg_irl
