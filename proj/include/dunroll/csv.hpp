#pragma once

#include "core.hpp"

#include <fstream>
#include <initializer_list>
#include <ostream>
#include <string>
#include <vector>

namespace dunroll {

/// CSV output headed by a "# schema: <name> v<version>" line.
class CsvWriter {
 public:
  CsvWriter(std::ostream& os, std::string_view schema, int version,
            const std::vector<std::string>& columns)
      : os_(os), n_cols_(columns.size()) {
    os_ << "# schema: " << schema << " v" << version << '\n';
    for (std::size_t k = 0; k < columns.size(); ++k) os_ << (k ? "," : "") << columns[k];
    os_ << '\n';
  }

  /// Cells are pre-formatted strings; reals should go through format_real.
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != n_cols_) throw ValidationError("CSV row width mismatch");
    for (std::size_t k = 0; k < cells.size(); ++k) os_ << (k ? "," : "") << cells[k];
    os_ << '\n';
  }

 private:
  std::ostream& os_;
  std::size_t n_cols_;
};

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

}  // namespace dunroll
