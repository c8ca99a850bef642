// Serialization: matrices as CSV and JSON, ensembles as a compact binary
// file (or long-format CSV for inspection).
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfg_irl/core.hpp"
#include "mfg_irl/simulator.hpp"

namespace mfg_irl {

using json = nlohmann::json;

/// Shortest round-trip representation is not guaranteed; %.17g is.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  return out;
}

inline void write_matrix_csv(const std::filesystem::path& p, const Matrix& M) {
  auto out = open_output(p);
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) out << (j ? "," : "") << format_double(M(i, j));
    out << '\n';
  }
}

inline Matrix read_matrix_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error("read_matrix_csv: bad number '" + cell + "' in " + p.string());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DimensionError("read_matrix_csv: ragged rows in " + p.string());
    rows.push_back(std::move(row));
  }
  Matrix M(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < M.rows(); ++i)
    for (Index j = 0; j < M.cols(); ++j)
      M(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return M;
}

// --- JSON ---------------------------------------------------------------------------

/// Row-major nested arrays.
inline json matrix_to_json(const Matrix& M) {
  json rows = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Accepts [[...], ...] or a bare number (1 x 1).
inline Matrix matrix_from_json(const json& j, const std::string& what) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array()) throw ConfigError(what + ": expected a matrix (array of rows)");
  const auto rows = static_cast<Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  if (!j[0].is_array()) throw ConfigError(what + ": rows must be arrays");
  const auto cols = static_cast<Index>(j[0].size());
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      throw ConfigError(what + ": ragged matrix rows");
    for (Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(what + ": non-numeric entry");
      M(i, c) = v.get<double>();
    }
  }
  return M;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + ": non-numeric entry");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  auto out = open_output(p);
  out << j.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// --- ensembles -------------------------------------------------------------------

namespace detail {

inline constexpr char kEnsembleMagic[8] = {'M', 'F', 'G', 'E', 'N', 'S', '0', '1'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("read_ensemble: truncated file");
  return v;
}

}  // namespace detail

/// Little-endian host layout: magic, h, steps, rho, seed, class dims, then
/// per run the N x (steps+1) states and M x (steps+1) inputs, column-major.
inline void write_ensemble(const std::filesystem::path& p, const TrajectoryEnsemble& ens) {
  auto out = open_output(p);
  out.write(detail::kEnsembleMagic, sizeof detail::kEnsembleMagic);
  detail::put(out, ens.h);
  detail::put(out, static_cast<std::int64_t>(ens.steps));
  detail::put(out, ens.rho);
  detail::put(out, ens.seed);
  detail::put(out, static_cast<std::int64_t>(ens.state_dims.size()));
  for (std::size_t k = 0; k < ens.state_dims.size(); ++k) {
    detail::put(out, static_cast<std::int64_t>(ens.state_dims[k]));
    detail::put(out, static_cast<std::int64_t>(ens.input_dims[k]));
  }
  detail::put(out, static_cast<std::int64_t>(ens.runs()));
  for (Index r = 0; r < ens.runs(); ++r) {
    const Matrix& X = ens.states[static_cast<std::size_t>(r)];
    const Matrix& U = ens.inputs[static_cast<std::size_t>(r)];
    out.write(reinterpret_cast<const char*>(X.data()),
              static_cast<std::streamsize>(X.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(U.data()),
              static_cast<std::streamsize>(U.size() * sizeof(double)));
  }
  if (!out) throw Error("write_ensemble: write failed for " + p.string());
}

inline TrajectoryEnsemble read_ensemble(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  char magic[sizeof detail::kEnsembleMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, detail::kEnsembleMagic, sizeof magic) != 0)
    throw Error(p.string() + " is not an ensemble file");
  TrajectoryEnsemble ens;
  ens.h = detail::get<double>(in);
  ens.steps = detail::get<std::int64_t>(in);
  ens.rho = detail::get<double>(in);
  ens.seed = detail::get<std::uint64_t>(in);
  const auto K = detail::get<std::int64_t>(in);
  if (K < 0 || ens.steps < 0) throw Error("read_ensemble: corrupt header");
  Index N = 0, M = 0;
  for (std::int64_t k = 0; k < K; ++k) {
    ens.state_dims.push_back(detail::get<std::int64_t>(in));
    ens.input_dims.push_back(detail::get<std::int64_t>(in));
    N += ens.state_dims.back();
    M += ens.input_dims.back();
  }
  const auto runs = detail::get<std::int64_t>(in);
  const Index J = ens.steps + 1;
  for (std::int64_t r = 0; r < runs; ++r) {
    Matrix X(N, J), U(M, J);
    in.read(reinterpret_cast<char*>(X.data()), static_cast<std::streamsize>(X.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(U.data()), static_cast<std::streamsize>(U.size() * sizeof(double)));
    if (!in) throw Error("read_ensemble: truncated file");
    ens.states.push_back(std::move(X));
    ens.inputs.push_back(std::move(U));
  }
  return ens;
}

/// Long format: run,time,class,kind,coordinate,value with kind x or u.
inline void write_ensemble_csv(const std::filesystem::path& p, const TrajectoryEnsemble& ens) {
  auto out = open_output(p);
  out << "run,time,class,kind,coordinate,value\n";
  for (Index r = 0; r < ens.runs(); ++r) {
    const Matrix& X = ens.states[static_cast<std::size_t>(r)];
    const Matrix& U = ens.inputs[static_cast<std::size_t>(r)];
    for (Index j = 0; j < ens.grid_points(); ++j) {
      const std::string t = format_double(ens.time(j));
      Index xs = 0, us = 0;
      for (std::size_t k = 0; k < ens.state_dims.size(); ++k) {
        for (Index i = 0; i < ens.state_dims[k]; ++i)
          out << r << ',' << t << ',' << k << ",x," << i << ',' << format_double(X(xs + i, j)) << '\n';
        for (Index i = 0; i < ens.input_dims[k]; ++i)
          out << r << ',' << t << ',' << k << ",u," << i << ',' << format_double(U(us + i, j)) << '\n';
        xs += ens.state_dims[k];
        us += ens.input_dims[k];
      }
    }
  }
}

}  // namespace mfg_irl
