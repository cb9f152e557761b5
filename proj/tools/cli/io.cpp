#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fastgp/error.hpp"
#include "fastgp_cli.hpp"

namespace fastgp::cli {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& cell, const std::string& name, std::size_t line, std::size_t col) {
  const std::string t = trim(cell);
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (t.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    std::ostringstream os;
    os << name << ":" << line << ": column " << col + 1 << " is not a finite number ('" << t << "')";
    throw InvalidArgument(os.str());
  }
  return v;
}

}  // namespace

Table parse_csv(std::istream& in, const std::string& name, bool has_response) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw InvalidArgument(name + ": empty file, expected a header row");
  for (const auto& h : split(line)) t.header.push_back(trim(h));
  const std::size_t ncol = t.header.size();
  const std::size_t min_cols = has_response ? 2 : 1;
  if (ncol < min_cols) {
    throw InvalidArgument(name + ":" + std::to_string(lineno) + ": header needs at least " + std::to_string(min_cols) +
                          " columns");
  }
  // a numeric first line means the header is missing
  bool numeric = true;
  for (const auto& h : t.header) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(h.data(), h.data() + h.size(), v);
    if (h.empty() || ec != std::errc() || p != h.data() + h.size()) numeric = false;
  }
  if (numeric) throw InvalidArgument(name + ":" + std::to_string(lineno) + ": header row required, found numbers");

  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != ncol) {
      std::ostringstream os;
      os << name << ":" << lineno << ": expected " << ncol << " columns, found " << cells.size();
      throw InvalidArgument(os.str());
    }
    for (std::size_t c = 0; c < ncol; ++c) values.push_back(parse_number(cells[c], name, lineno, c));
    ++rows;
  }
  if (rows == 0) throw InvalidArgument(name + ": no data rows");
  const auto ncoord = static_cast<Index>(has_response ? ncol - 1 : ncol);
  t.coords.resize(static_cast<Index>(rows), ncoord);
  if (has_response) t.response.resize(static_cast<Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    for (Index c = 0; c < ncoord; ++c) t.coords(static_cast<Index>(r), c) = values[r * ncol + static_cast<std::size_t>(c)];
    if (has_response) t.response(static_cast<Index>(r)) = values[r * ncol + ncol - 1];
  }
  return t;
}

Table read_csv(const std::string& path, bool has_response) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "' for reading");
  return parse_csv(in, path, has_response);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(std::ostream& out, const std::vector<std::string>& header, const Eigen::MatrixXd& columns) {
  if (static_cast<Index>(header.size()) != columns.cols()) throw InvalidArgument("write_csv: header/column mismatch");
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (Index r = 0; r < columns.rows(); ++r) {
    for (Index c = 0; c < columns.cols(); ++c) out << (c ? "," : "") << format_double(columns(r, c));
    out << '\n';
  }
}

void write_csv_file(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& columns) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open '" + path + "' for writing");
  write_csv(out, header, columns);
  out.flush();
  if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

UnitTransform::UnitTransform(Eigen::RowVectorXd offset, double scale) : offset_(std::move(offset)), scale_(scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("unit transform scale must be positive");
}

UnitTransform UnitTransform::fit(const Eigen::MatrixXd& points) {
  check_points(points);
  const Eigen::RowVectorXd lo = points.colwise().minCoeff();
  const Eigen::RowVectorXd hi = points.colwise().maxCoeff();
  double range = (hi - lo).maxCoeff();
  if (!(range > 0.0)) range = 1.0;
  return {lo, range};
}

Eigen::MatrixXd UnitTransform::to_unit(const Eigen::MatrixXd& points) const {
  if (points.cols() != offset_.size()) throw InvalidArgument("unit transform: dimension mismatch");
  return (points.rowwise() - offset_) / scale_;
}

Eigen::MatrixXd UnitTransform::from_unit(const Eigen::MatrixXd& points) const {
  if (points.cols() != offset_.size()) throw InvalidArgument("unit transform: dimension mismatch");
  return (points * scale_).rowwise() + offset_;
}

Eigen::VectorXd UnitTransform::beta_to_user(const Eigen::VectorXd& beta) const {
  if (beta.size() != offset_.size() + 1) throw InvalidArgument("unit transform: beta has the wrong length");
  Eigen::VectorXd out(beta.size());
  out.tail(offset_.size()) = beta.tail(offset_.size()) / scale_;
  out(0) = beta(0) - offset_.dot(out.tail(offset_.size()));
  return out;
}

Eigen::VectorXd UnitTransform::beta_to_unit(const Eigen::VectorXd& beta) const {
  if (beta.size() != offset_.size() + 1) throw InvalidArgument("unit transform: beta has the wrong length");
  Eigen::VectorXd out(beta.size());
  out(0) = beta(0) + offset_.dot(beta.tail(offset_.size()));
  out.tail(offset_.size()) = beta.tail(offset_.size()) * scale_;
  return out;
}

}  // namespace fastgp::cli
