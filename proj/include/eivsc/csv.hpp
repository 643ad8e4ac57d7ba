#pragma once

// CSV ingestion for real panels. UTF-8, comma separated, first row is a
// header, rows are time-ordered, "." decimal separator. Cell positions in
// error messages are 1-based file coordinates (the header is row 1).

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eivsc/panel.hpp"

namespace eivsc::csv {

struct LayoutConfig {
  std::string treated_column;        // header name; empty -> use treated_index
  int treated_index = -1;            // 0-based column index; -1 -> last column
  std::vector<std::string> control_columns;  // empty -> every non-treated column
  int post_row = -1;                 // 0-based data row of the post period; -1 -> last row
};

struct CsvError : std::runtime_error {
  explicit CsvError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

inline double parse_cell(const std::string& raw, int file_row, int file_col) {
  const std::string cell = trim(raw);
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  double value = 0.0;
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last || cell.empty()) {
    std::ostringstream msg;
    msg << "non-numeric cell at row " << file_row << ", column " << file_col << ": '" << cell << "'";
    throw CsvError(msg.str());
  }
  return value;
}

}  // namespace detail

inline panel::PanelObservation load_panel_csv(const std::string& path, const LayoutConfig& layout = {}) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw CsvError("empty file: " + path);
  const std::vector<std::string> header = detail::split_line(line);
  const int width = static_cast<int>(header.size());

  std::vector<std::vector<double>> rows;
  int file_row = 1;
  while (std::getline(in, line)) {
    ++file_row;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_line(line);
    if (static_cast<int>(cells.size()) != width) {
      std::ostringstream msg;
      msg << "ragged row " << file_row << ": expected " << width << " cells, found " << cells.size();
      throw CsvError(msg.str());
    }
    std::vector<double> parsed(width);
    for (int c = 0; c < width; ++c) parsed[c] = detail::parse_cell(cells[c], file_row, c + 1);
    rows.push_back(std::move(parsed));
  }
  if (rows.size() < 2) throw CsvError("fewer than 2 time rows in " + path);

  int treated = layout.treated_index;
  if (!layout.treated_column.empty()) {
    treated = -1;
    for (int c = 0; c < width; ++c) {
      if (detail::trim(header[c]) == layout.treated_column) treated = c;
    }
    if (treated < 0) throw CsvError("treated column '" + layout.treated_column + "' not found in header");
  }
  if (treated < 0) treated = width - 1;
  if (treated >= width) throw CsvError("treated column index out of range");

  std::vector<int> controls;
  if (layout.control_columns.empty()) {
    for (int c = 0; c < width; ++c)
      if (c != treated) controls.push_back(c);
  } else {
    for (const std::string& name : layout.control_columns) {
      int idx = -1;
      for (int c = 0; c < width; ++c)
        if (detail::trim(header[c]) == name) idx = c;
      if (idx < 0) throw CsvError("control column '" + name + "' not found in header");
      controls.push_back(idx);
    }
  }
  if (controls.empty()) throw CsvError("no control columns");

  int post = layout.post_row;
  if (post < 0) post = static_cast<int>(rows.size()) - 1;
  if (post >= static_cast<int>(rows.size())) throw CsvError("post-treatment row index out of range");

  const int n = static_cast<int>(rows.size()) - 1;
  const int p = static_cast<int>(controls.size());
  panel::PanelObservation out;
  out.X.resize(n, p);
  out.y.resize(n);
  out.x_e.resize(p);
  int r = 0;
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    if (i == post) {
      for (int c = 0; c < p; ++c) out.x_e[c] = rows[i][controls[c]];
      out.y_e = rows[i][treated];
    } else {
      for (int c = 0; c < p; ++c) out.X(r, c) = rows[i][controls[c]];
      out.y[r] = rows[i][treated];
      ++r;
    }
  }
  out.validate();
  return out;
}

// Writer used for round trips and by the CLI; 17 significant digits so that
// doubles survive write-then-read exactly.
inline void save_panel_csv(const panel::PanelObservation& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write file: " + path);
  out.precision(17);
  for (int c = 0; c < panel.p(); ++c) out << "control_" << c + 1 << ",";
  out << "treated\n";
  for (int i = 0; i < panel.n(); ++i) {
    for (int c = 0; c < panel.p(); ++c) out << panel.X(i, c) << ",";
    out << panel.y[i] << "\n";
  }
  for (int c = 0; c < panel.p(); ++c) out << panel.x_e[c] << ",";
  out << panel.y_e << "\n";
}

}  // namespace eivsc::csv
