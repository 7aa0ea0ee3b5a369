#pragma once
/// \file
/// Deterministic output writing. Every floating-point cell goes through
/// shortest round-trip formatting (std::to_chars), newlines are always '\n',
/// and files are written in binary mode, so a given sequence of numbers
/// produces identical bytes on any platform with IEEE doubles. Run manifests
/// fingerprint each output file (FNV-1a over its bytes), which is what the
/// reproducibility checks compare.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "nelson/operators.hpp"
#include "nelson/pphi1.hpp"
#include "nelson/rng.hpp"
#include "nelson/sparse.hpp"
#include "nelson/version.hpp"

namespace nelson::io {

/// Shortest representation that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc())
    throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

/// CSV assembly: cells are preformatted strings (use format_double for
/// numbers), joined with commas. Cells must not contain commas or newlines;
/// every identifier this library emits satisfies that, so there is no
/// quoting layer to get wrong.
struct CsvBuilder {
  std::string text;

  explicit CsvBuilder(const std::vector<std::string>& header) { add_row(header); }

  void add_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string& c = cells[i];
      if (c.find_first_of(",\n\r") != std::string::npos)
        throw std::invalid_argument("CsvBuilder: cell contains a separator: " + c);
      if (i) text += ',';
      text += c;
    }
    text += '\n';
  }
};

inline void write_text(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("io: short write to " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io: cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

// --- exports of core objects ---------------------------------------------------------

/// Sparse matrix in coordinate text form, one "row,col,value" line per stored
/// entry, emitted in row-major storage order (deterministic).
inline std::string coo_string(const SparseMatrix& A) {
  std::string s = "row,col,value\n";
  for (std::size_t r = 0; r < A.n; ++r)
    for (std::size_t p = A.row_ptr[r]; p < A.row_ptr[r + 1]; ++p) {
      s += std::to_string(r);
      s += ',';
      s += std::to_string(A.col[p]);
      s += ',';
      s += format_double(A.val[p]);
      s += '\n';
    }
  return s;
}

/// Ground-state table: one row per lattice state with its particle coordinate,
/// quadrature coordinates and l2-normalized amplitude.
inline std::string ground_state_csv(const OperatorSpace& space, const GroundState& gs) {
  std::vector<std::string> header = {"index", "x"};
  for (std::size_t q = 0; q < space.grid.n_quadratures(); ++q)
    header.push_back("q" + std::to_string(q + 1));
  header.push_back("amplitude");
  CsvBuilder csv(header);
  std::vector<std::string> row(header.size());
  for (std::size_t a = 0; a < gs.vec.size(); ++a) {
    row[0] = std::to_string(a);
    row[1] = format_double(space.x_of(a));
    const std::vector<double> q = space.q_coords(a);
    for (std::size_t j = 0; j < q.size(); ++j) row[2 + j] = format_double(q[j]);
    row.back() = format_double(gs.vec[a]);
    csv.add_row(row);
  }
  return csv.text;
}

/// Jump-skeleton table of a sampled trajectory: one row per sojourn start.
inline std::string path_csv(const OperatorSpace& space, const PPhiPath& path) {
  std::vector<std::string> header = {"jump_time", "state_index", "x"};
  for (std::size_t q = 0; q < space.grid.n_quadratures(); ++q)
    header.push_back("q" + std::to_string(q + 1));
  CsvBuilder csv(header);
  std::vector<std::string> row(header.size());
  for (std::size_t i = 0; i < path.states.size(); ++i) {
    row[0] = format_double(path.times[i]);
    row[1] = std::to_string(path.states[i]);
    row[2] = format_double(space.x_of(path.states[i]));
    const std::vector<double> q = space.q_coords(path.states[i]);
    for (std::size_t j = 0; j < q.size(); ++j) row[3 + j] = format_double(q[j]);
    csv.add_row(row);
  }
  return csv.text;
}

// --- run manifest --------------------------------------------------------------------

struct OutputRecord {
  std::string name;         ///< file name relative to the run directory
  std::uint64_t bytes = 0;
  std::string fnv64;        ///< FNV-1a of the file bytes, 16 hex digits
};

/// Everything needed to audit a run: the resolved configuration, its hash,
/// the seed, the library version, and a fingerprint of every output file.
/// wall_seconds is informational and excluded from determinism guarantees;
/// all other fields (and all output bytes) repeat exactly for the same
/// configuration and seed.
struct RunManifest {
  std::string pipeline;
  nlohmann::json config;
  std::string config_hash;
  std::uint64_t master_seed = 0;
  std::string version = version_string;
  std::vector<OutputRecord> outputs;
  nlohmann::json summary;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pipeline"] = pipeline;
    j["config"] = config;
    j["config_hash"] = config_hash;
    j["master_seed"] = master_seed;
    j["version"] = version;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& o : outputs)
      outs.push_back({{"name", o.name}, {"bytes", o.bytes}, {"fnv64", o.fnv64}});
    j["outputs"] = outs;
    j["summary"] = summary;
    j["wall_seconds"] = wall_seconds;
    return j;
  }
};

/// Writes one output file under the run directory and records its fingerprint.
inline void record_output(RunManifest& man, const std::filesystem::path& dir,
                          const std::string& name, std::string_view content) {
  write_text(dir / name, content);
  man.outputs.push_back({name, content.size(), hex64(fnv1a64(content))});
}

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& man) {
  write_text(dir / "manifest.json", man.to_json().dump(2) + "\n");
}

}  // namespace nelson::io
