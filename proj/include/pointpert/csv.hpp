#pragma once

// Minimal CSV emission.  Doubles are printed with 17 significant digits so that a table read
// back parses to the same bits; the output depends only on the values written.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "pointpert/errors.hpp"

namespace pointpert::csv {

inline std::string format(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

using Cell = std::variant<std::string, double, std::int64_t>;

inline std::string render(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format(*d);
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

class Writer {
 public:
  Writer(std::ostream& out, std::vector<std::string> header) : out_(out), columns_(header.size()) {
    std::vector<Cell> h(header.begin(), header.end());
    write(h);
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != columns_) throw PreconditionError("csv row has the wrong number of cells");
    write(cells);
    ++rows_;
  }

  std::size_t rows() const { return rows_; }

 private:
  void write(const std::vector<Cell>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << render(cells[i]);
    }
    out_ << '\n';
  }

  std::ostream& out_;
  std::size_t columns_;
  std::size_t rows_ = 0;
};

}  // namespace pointpert::csv
