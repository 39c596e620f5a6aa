#pragma once

#include <fmt/format.h>

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ss/error.hpp"
#include "ss/lattice.hpp"

namespace ss::csv {

/// Shortest round-trip decimal form, so rewritten files are byte-identical.
inline std::string num(double v) { return fmt::format("{}", v); }

inline std::string join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  return line;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  Writer& header(const std::vector<std::string>& names) {
    os_ << join(names) << '\n';
    return *this;
  }

  template <typename... Cells>
  Writer& row(const Cells&... cells) {
    std::vector<std::string> out;
    (out.push_back(cell(cells)), ...);
    os_ << join(out) << '\n';
    return *this;
  }

  Writer& row(const std::vector<double>& values) {
    std::vector<std::string> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(num(v));
    os_ << join(out) << '\n';
    return *this;
  }

 private:
  static std::string cell(double v) { return num(v); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <typename I>
    requires std::is_integral_v<I>
  static std::string cell(I v) {
    return std::to_string(v);
  }

  std::ostream& os_;
};

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.remove_suffix(1);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    cells.emplace_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'", context);
  }
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("missing column '" + name + "'");
  }
};

inline Table read(std::istream& is) {
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      t.header = split(line);
      have_header = true;
    } else {
      t.rows.push_back(split(line));
      if (t.rows.back().size() != t.header.size())
        throw ConfigError("row " + std::to_string(t.rows.size()) + " has " + std::to_string(t.rows.back().size()) +
                          " cells, header has " + std::to_string(t.header.size()));
    }
  }
  if (!have_header) throw ConfigError("empty CSV input");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read(in);
}

inline std::vector<std::string> state_header(const LatticeSpec& spec) {
  std::vector<std::string> h{"node_index"};
  for (std::size_t k = 1; k <= spec.dim(); ++k) h.push_back("i_" + std::to_string(k));
  for (std::size_t p = 1; p <= spec.outputs(); ++p) h.push_back("x_" + std::to_string(p));
  for (std::size_t p = 1; p <= spec.outputs(); ++p) h.push_back("v_" + std::to_string(p));
  return h;
}

/// `node_index,i_1..i_d,x_1..x_m,v_1..v_m`, rows in row-major node order.
inline void write_state(std::ostream& os, const LatticeSpec& spec, const GridState& state) {
  os << join(state_header(spec)) << '\n';
  for (std::size_t n = 0; n < spec.node_count(); ++n) {
    std::vector<std::string> cells{std::to_string(n)};
    for (std::size_t i : spec.multi_index(n)) cells.push_back(std::to_string(i));
    const auto row = static_cast<Eigen::Index>(n);
    for (Eigen::Index p = 0; p < state.x.cols(); ++p) cells.push_back(num(state.x(row, p)));
    for (Eigen::Index p = 0; p < state.v.cols(); ++p) cells.push_back(num(state.v(row, p)));
    os << join(cells) << '\n';
  }
}

inline GridState read_state(std::istream& is, const LatticeSpec& spec) {
  const Table t = read(is);
  if (t.header != state_header(spec)) throw ConfigError("grid state header does not match the lattice");
  if (t.rows.size() != spec.node_count())
    throw ConfigError("grid state has " + std::to_string(t.rows.size()) + " rows, lattice has " +
                      std::to_string(spec.node_count()) + " nodes");
  GridState s = GridState::zeros(spec);
  const std::size_t d = spec.dim();
  const std::size_t m = spec.outputs();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto n = static_cast<std::size_t>(parse_double(row[0], "node_index"));
    if (n != r) throw ConfigError("grid state rows must be in node order");
    for (std::size_t p = 0; p < m; ++p) {
      s.x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p)) = parse_double(row[1 + d + p], "x");
      s.v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p)) = parse_double(row[1 + d + m + p], "v");
    }
  }
  if (!s.finite()) throw ConfigError("grid state contains non-finite values");
  return s;
}

}  // namespace ss::csv
