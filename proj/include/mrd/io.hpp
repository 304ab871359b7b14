#pragma once

#include <charconv>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrd/errors.hpp"
#include "mrd/estimator.hpp"
#include "mrd/geometry.hpp"
#include "mrd/mc.hpp"

namespace mrd {

inline constexpr const char* kSchemaTag = "mrd/1";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_number(const std::string& cell, const char* column,
                           std::size_t row) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw InputFormatError("non-numeric value '" + cell + "' in column " + column +
                               " at data row " + std::to_string(row),
                           row);
  if (!std::isfinite(v))
    throw InputFormatError(std::string("non-finite value in column ") + column +
                               " at data row " + std::to_string(row),
                           row);
  return v;
}

}  // namespace detail

struct CsvDataset {
  Dataset data;
  bool has_treatment = false;
};

// Headered CSV with columns y, r1, r2 and optionally d; extra columns are
// ignored. Errors carry the 1-based data row.
inline CsvDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw InputFormatError("empty input: missing header row");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, int> col;
  for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = static_cast<int>(k);
  for (const char* need : {"y", "r1", "r2"})
    if (!col.count(need))
      throw InputFormatError(std::string("missing required column '") + need + "'");
  const int cy = col["y"], c1 = col["r1"], c2 = col["r2"];
  const int cd = col.count("d") ? col["d"] : -1;

  CsvDataset out;
  out.has_treatment = cd >= 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    const int needed = std::max({cy, c1, c2, cd});
    if (static_cast<int>(cells.size()) <= needed)
      throw InputFormatError("too few columns at data row " + std::to_string(row), row);
    const double y = detail::parse_number(cells[cy], "y", row);
    const double r1 = detail::parse_number(cells[c1], "r1", row);
    const double r2 = detail::parse_number(cells[c2], "r2", row);
    bool d = false;
    if (cd >= 0) {
      const double dv = detail::parse_number(cells[cd], "d", row);
      if (dv != 0.0 && dv != 1.0)
        throw InputFormatError("treatment flag must be 0 or 1 at data row " +
                                   std::to_string(row),
                               row);
      d = dv == 1.0;
    }
    out.data.push_back(y, r1, r2, d);
  }
  if (out.data.size() == 0) throw InputFormatError("no data rows");
  return out;
}

// Finite numbers pass through; non-finite values become null with a reason
// field so downstream parsers never meet NaN.
inline void put_num(nlohmann::json& j, const std::string& key, double v) {
  if (std::isfinite(v)) {
    j[key] = v;
  } else {
    j[key] = nullptr;
    j[key + "_reason"] = "non-finite";
  }
}

inline nlohmann::json to_json(const RDEstimate& e) {
  nlohmann::json j;
  put_num(j, "theta", e.theta);
  put_num(j, "theta_bc", e.theta_bc);
  put_num(j, "se", e.se);
  put_num(j, "ci_low", e.ci_low);
  put_num(j, "ci_high", e.ci_high);
  put_num(j, "h1", e.h1);
  put_num(j, "h2", e.h2);
  put_num(j, "pilot_plus", e.pilot_plus);
  put_num(j, "pilot_minus", e.pilot_minus);
  j["eff_n_plus"] = e.eff_n_plus;
  j["eff_n_minus"] = e.eff_n_minus;
  j["alpha"] = e.alpha;
  j["center"] = {e.frame.center.x, e.frame.center.y};
  j["normal"] = {e.frame.normal.x, e.frame.normal.y};
  return j;
}

inline nlohmann::json to_json(const EstimatorSummary& s) {
  nlohmann::json j;
  j["estimator"] = s.name;
  put_num(j, "length", s.length);
  put_num(j, "bias", s.bias);
  put_num(j, "coverage", s.coverage);
  put_num(j, "rmse", s.rmse);
  put_num(j, "pilot", s.pilot_median);
  put_num(j, "h1", s.h1_median);
  put_num(j, "h2", s.h2_median);
  put_num(j, "eff_sample", s.eff_n_median);
  j["failures"] = s.failures;
  j["used"] = s.used;
  return j;
}

// shortest representation that parses back to the same double
inline std::string csv_num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string();
}

inline std::string estimate_csv(const RDEstimate& e) {
  std::ostringstream os;
  os << "theta,theta_bc,se,ci_low,ci_high,h1,h2,pilot_plus,pilot_minus,"
        "eff_n_plus,eff_n_minus\n";
  os << csv_num(e.theta) << ',' << csv_num(e.theta_bc) << ',' << csv_num(e.se) << ','
     << csv_num(e.ci_low) << ',' << csv_num(e.ci_high) << ',' << csv_num(e.h1) << ','
     << csv_num(e.h2) << ',' << csv_num(e.pilot_plus) << ',' << csv_num(e.pilot_minus)
     << ',' << e.eff_n_plus << ',' << e.eff_n_minus << '\n';
  return os.str();
}

inline std::string summary_csv(const MCResult& res) {
  std::ostringstream os;
  os << "estimator,length,bias,coverage,rmse,pilot,h1,h2,eff_sample,failures\n";
  for (const auto& s : res.summary)
    os << s.name << ',' << csv_num(s.length) << ',' << csv_num(s.bias) << ','
       << csv_num(s.coverage) << ',' << csv_num(s.rmse) << ','
       << csv_num(s.pilot_median) << ',' << csv_num(s.h1_median) << ','
       << csv_num(s.h2_median) << ',' << csv_num(s.eff_n_median) << ','
       << s.failures << '\n';
  return os.str();
}

inline std::string designs_csv() {
  std::ostringstream os;
  os << "design,side,term,coefficient\n";
  for (int id = 1; id <= 4; ++id) {
    const DesignSpec d = make_design(id);
    for (int k = 0; k < kNumPolyTerms; ++k)
      os << id << ",control," << poly_term_names()[k] << ','
         << csv_num(d.control[k]) << '\n';
    for (int k = 0; k < kNumPolyTerms; ++k)
      os << id << ",treated," << poly_term_names()[k] << ','
         << csv_num(d.treated[k]) << '\n';
  }
  return os.str();
}

}  // namespace mrd
