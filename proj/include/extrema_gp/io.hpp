#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "extrema_gp/error.hpp"
#include "extrema_gp/posterior.hpp"
#include "extrema_gp/simulate.hpp"
#include "extrema_gp/summarize.hpp"

namespace extrema_gp {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kPosteriorCsvSchema = "extrema-gp/posterior-csv/v1";
inline constexpr const char* kExtremaJsonSchema = "extrema-gp/extrema-json/v1";
inline constexpr const char* kReportJsonSchema = "extrema-gp/simulation-json/v1";
inline constexpr const char* kTableCsvSchema = "extrema-gp/table-csv/v1";
inline constexpr const char* kDataCsvSchema = "extrema-gp/data-csv/v1";
inline constexpr const char* kManifestSchema = "extrema-gp/manifest/v1";

using json = nlohmann::ordered_json;

/// Shortest text that round-trips a double ("nan"/"inf" are never emitted by callers).
inline std::string fmt_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Provenance embedded in every artifact.
struct RunManifest {
  std::string command;
  std::string input;  // path, or "preset:<name>"
  std::optional<Hyperparams> hyper;
  std::string prior;
  std::size_t grid_size = kDefaultGridSize;
  double alpha_hpd = 0.05;
  double alpha_ci = 0.05;
  std::uint64_t seed = 0;
  int eb_starts = 0;
  bool rescaled = false;
  double rescale_offset = 0.0;  // x_scaled = (x - offset) / scale
  double rescale_scale = 1.0;
  std::optional<std::string> created;  // only when a timestamp is requested

  json to_json() const {
    json j;
    j["schema"] = kManifestSchema;
    j["tool"] = "extrema_gp";
    j["version"] = kVersion;
    j["command"] = command;
    j["input"] = input;
    if (hyper) {
      j["hyperparams"] = {{"lambda", hyper->lambda}, {"h", hyper->h}, {"sigma2", hyper->sigma2}};
    } else {
      j["hyperparams"] = nullptr;
    }
    j["prior"] = prior;
    j["grid_size"] = grid_size;
    j["alpha_hpd"] = alpha_hpd;
    j["alpha_ci"] = alpha_ci;
    j["seed"] = seed;
    j["eb_starts"] = eb_starts;
    j["rescale"] = {{"applied", rescaled}, {"offset", rescale_offset}, {"scale", rescale_scale}};
    j["created"] = created ? json(*created) : json(nullptr);
    return j;
  }
};

// ---------------------------------------------------------------- CSV input

struct XYData {
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& field, std::size_t line) {
  const std::string f = trim(field);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(f, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (f.empty() || used != f.size() || !std::isfinite(v)) {
    throw InvalidInput("line " + std::to_string(line) + ": '" + f + "' is not a finite number");
  }
  return v;
}

}  // namespace detail

/// Reads a two-column CSV with header `x,y`. Blank lines and lines starting
/// with '#' are skipped.
inline XYData read_xy_csv(std::istream& in) {
  XYData out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto comma = t.find(',');
    if (comma == std::string::npos || t.find(',', comma + 1) != std::string::npos) {
      throw InvalidInput("line " + std::to_string(lineno) + ": expected exactly two comma-separated fields");
    }
    const std::string a = detail::trim(t.substr(0, comma)), b = detail::trim(t.substr(comma + 1));
    if (!header) {
      if (a != "x" || b != "y") throw InvalidInput("line " + std::to_string(lineno) + ": header must be 'x,y'");
      header = true;
      continue;
    }
    out.x.push_back(detail::parse_number(a, lineno));
    out.y.push_back(detail::parse_number(b, lineno));
  }
  if (!header) throw InvalidInput("input has no 'x,y' header");
  return out;
}

inline XYData read_xy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open input file '" + path + "'");
  return read_xy_csv(in);
}

/// Min-max scaling of x onto [0, 1]; returns (offset, scale).
inline std::pair<double, double> rescale_unit(std::vector<double>& x) {
  if (x.empty()) throw InvalidInput("cannot rescale an empty design");
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double offset = *lo, scale = *hi - *lo;
  if (!(scale > 0.0)) throw InvalidInput("cannot rescale: all x values are equal");
  for (double& v : x) v = std::clamp((v - offset) / scale, 0.0, 1.0);
  return {offset, scale};
}

inline void write_xy_csv(std::ostream& out, const Dataset& data, const json& manifest) {
  out << "# schema: " << kDataCsvSchema << "\n# manifest: " << manifest.dump() << "\nx,y\n";
  for (std::size_t i = 0; i < data.size(); ++i) out << fmt_double(data.x()[i]) << ',' << fmt_double(data.y()[i]) << '\n';
}

// ---------------------------------------------------------------- posterior

inline void write_posterior_csv(std::ostream& out, const PosteriorGrid& grid, const json& manifest) {
  out << "# schema: " << kPosteriorCsvSchema << "\n# manifest: " << manifest.dump() << "\nt,density,log_unnorm\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out << fmt_double(grid.ts[i]) << ',' << fmt_double(grid.density[i]) << ',' << fmt_double(grid.log_unnorm[i])
        << '\n';
  }
}

struct PosteriorRows {
  std::vector<double> t, density, log_unnorm;
};

inline PosteriorRows read_posterior_csv(std::istream& in) {
  PosteriorRows rows;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!header) {
      if (t != "t,density,log_unnorm") throw InvalidInput("posterior CSV header must be 't,density,log_unnorm'");
      header = true;
      continue;
    }
    std::stringstream ss(t);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    rows.t.push_back(detail::parse_number(a, lineno));
    rows.density.push_back(detail::parse_number(b, lineno));
    rows.log_unnorm.push_back(detail::parse_number(c, lineno));
  }
  return rows;
}

inline json posterior_to_json(const PosteriorGrid& grid, const json& manifest) {
  json j;
  j["schema"] = kPosteriorCsvSchema;
  j["manifest"] = manifest;
  j["t_lo"] = grid.t_lo;
  j["t_hi"] = grid.t_hi;
  j["grid_step"] = grid.grid_step;
  j["log_norm_const"] = grid.log_norm_const;
  j["t"] = grid.ts;
  j["density"] = grid.density;
  j["log_unnorm"] = grid.log_unnorm;
  return j;
}

// ---------------------------------------------------------------- extrema

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json extrema_to_json(const ExtremaReport& rep, const json& manifest) {
  json j;
  j["schema"] = kExtremaJsonSchema;
  j["manifest"] = manifest;
  j["m_hat"] = rep.m_hat;
  j["hpd"] = {{"level", rep.hpd.level},
              {"threshold", rep.hpd.threshold},
              {"mass", rep.hpd.mass},
              {"degenerate", rep.hpd.degenerate}};
  json segs = json::array();
  for (const auto& s : rep.hpd.segments) {
    segs.push_back({{"lo", s.lo}, {"hi", s.hi}, {"mass", s.mass}, {"boundary", s.boundary}});
  }
  j["segments"] = segs;
  j["modes"] = rep.modes();
  json ests = json::array();
  for (const auto& e : rep.estimates) {
    json o;
    o["t_hat"] = e.t_hat;
    o["kind"] = to_string(e.kind);
    o["ci_lo"] = e.ci ? json(e.ci->lo) : json(nullptr);
    o["ci_hi"] = e.ci ? json(e.ci->hi) : json(nullptr);
    o["bias_correction"] = e.ci ? json(e.ci->bias_correction) : json(nullptr);
    o["boundary_flag"] = e.boundary_flag;
    o["posterior_mode"] = e.posterior_mode;
    o["curvature_hat"] = e.curvature_hat;
    o["joint_ci_lo"] = e.joint_ci ? json(e.joint_ci->lo) : json(nullptr);
    o["joint_ci_hi"] = e.joint_ci ? json(e.joint_ci->hi) : json(nullptr);
    o["source"] = to_string(e.source);
    o["root_count"] = e.root_count;
    if (!e.note.empty()) o["note"] = e.note;
    ests.push_back(std::move(o));
  }
  j["estimates"] = ests;
  return j;
}

// ---------------------------------------------------------------- simulation report

namespace detail {

inline json opt_array(const std::array<std::optional<double>, 3>& a) {
  json j = json::array();
  for (const auto& v : a) j.push_back(opt_json(v));
  return j;
}

inline std::array<std::optional<double>, 3> opt_array_from(const json& j) {
  std::array<std::optional<double>, 3> a;
  for (std::size_t k = 0; k < 3; ++k) {
    if (!j.at(k).is_null()) a[k] = j.at(k).get<double>();
  }
  return a;
}

inline json histogram_json(const std::map<std::size_t, std::size_t>& h) {
  json j = json::object();
  for (const auto& [m, c] : h) j[std::to_string(m)] = c;
  return j;
}

inline std::map<std::size_t, std::size_t> histogram_from(const json& j) {
  std::map<std::size_t, std::size_t> h;
  for (const auto& [k, v] : j.items()) h[static_cast<std::size_t>(std::stoull(k))] = v.get<std::size_t>();
  return h;
}

}  // namespace detail

/// Runtime stats are wall-clock dependent; they are written only when asked
/// so that reports from identical configurations are byte-identical.
inline json report_to_json(const SimulationReport& r, const json& manifest, bool include_runtime = false) {
  json j;
  j["schema"] = kReportJsonSchema;
  j["manifest"] = manifest;
  j["n"] = r.n;
  j["sigma"] = r.sigma;
  j["replicates"] = r.replicates;
  j["seed"] = r.seed;
  j["prior"] = {r.prior_a, r.prior_b};
  j["alpha_hpd"] = r.alpha_hpd;
  j["alpha_ci"] = r.alpha_ci;
  j["m_hat_histogram"] = detail::histogram_json(r.m_hat_histogram);
  json sweep = json::array();
  for (const auto& [a, h] : r.m_hat_by_alpha) sweep.push_back({{"alpha", a}, {"histogram", detail::histogram_json(h)}});
  j["m_hat_by_alpha"] = sweep;
  j["rmse_x100"] = detail::opt_array(r.rmse_x100);
  j["rmse_x100_gp_root"] = detail::opt_array(r.rmse_x100_gp_root);
  j["multiplicity"] = {{"missing", r.multiplicity.missing}, {"multiple", r.multiplicity.multiple}};
  json cov = json::array();
  for (const auto& c : r.coverage) {
    cov.push_back({{"alpha", c.alpha},
                   {"marginal", detail::opt_array(c.marginal)},
                   {"joint", opt_json(c.joint)},
                   {"conditioning_count", c.conditioning_count}});
  }
  j["coverage"] = cov;
  j["curvature_ordering"] = {{"eligible", r.ordering_eligible}, {"holds", r.ordering_holds}};
  j["mean_hyper"] = {{"sigma", r.mean_hyper[0]}, {"tau", r.mean_hyper[1]}, {"h", r.mean_hyper[2]}};
  json fails = json::array();
  for (const auto& f : r.failures) fails.push_back({{"index", f.index}, {"reason", f.reason}});
  j["failures"] = fails;
  if (include_runtime) {
    j["runtime"] = {{"total_seconds", r.runtime.total_seconds},
                    {"mean_replicate_seconds", r.runtime.mean_replicate_seconds},
                    {"max_replicate_seconds", r.runtime.max_replicate_seconds},
                    {"workers", r.runtime.workers}};
  }
  return j;
}

inline SimulationReport report_from_json(const json& j) {
  if (j.at("schema").get<std::string>() != kReportJsonSchema) throw InvalidInput("unexpected report schema");
  SimulationReport r;
  r.n = j.at("n").get<std::size_t>();
  r.sigma = j.at("sigma").get<double>();
  r.replicates = j.at("replicates").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.prior_a = j.at("prior").at(0).get<double>();
  r.prior_b = j.at("prior").at(1).get<double>();
  r.alpha_hpd = j.at("alpha_hpd").get<double>();
  r.alpha_ci = j.at("alpha_ci").get<double>();
  r.m_hat_histogram = detail::histogram_from(j.at("m_hat_histogram"));
  for (const auto& s : j.at("m_hat_by_alpha")) {
    r.m_hat_by_alpha[s.at("alpha").get<double>()] = detail::histogram_from(s.at("histogram"));
  }
  r.rmse_x100 = detail::opt_array_from(j.at("rmse_x100"));
  r.rmse_x100_gp_root = detail::opt_array_from(j.at("rmse_x100_gp_root"));
  r.multiplicity.missing = j.at("multiplicity").at("missing").get<std::array<std::size_t, 3>>();
  r.multiplicity.multiple = j.at("multiplicity").at("multiple").get<std::array<std::size_t, 3>>();
  for (const auto& c : j.at("coverage")) {
    CoverageRow row;
    row.alpha = c.at("alpha").get<double>();
    row.marginal = detail::opt_array_from(c.at("marginal"));
    if (!c.at("joint").is_null()) row.joint = c.at("joint").get<double>();
    row.conditioning_count = c.at("conditioning_count").get<std::size_t>();
    r.coverage.push_back(row);
  }
  r.ordering_eligible = j.at("curvature_ordering").at("eligible").get<std::size_t>();
  r.ordering_holds = j.at("curvature_ordering").at("holds").get<std::size_t>();
  r.mean_hyper = {j.at("mean_hyper").at("sigma").get<double>(), j.at("mean_hyper").at("tau").get<double>(),
                  j.at("mean_hyper").at("h").get<double>()};
  for (const auto& f : j.at("failures")) r.failures.push_back({f.at("index").get<std::size_t>(), f.at("reason")});
  if (j.contains("runtime")) {
    const auto& rt = j.at("runtime");
    r.runtime.total_seconds = rt.at("total_seconds").get<double>();
    r.runtime.mean_replicate_seconds = rt.at("mean_replicate_seconds").get<double>();
    r.runtime.max_replicate_seconds = rt.at("max_replicate_seconds").get<double>();
    r.runtime.workers = rt.at("workers").get<std::size_t>();
  }
  return r;
}

namespace detail {
inline std::string cell(const std::optional<double>& v) { return v ? fmt_double(*v) : "NA"; }
inline std::string method_label(const SimulationReport& r) {
  return "DGP Beta(" + fmt_double(r.prior_a) + "," + fmt_double(r.prior_b) + ")";
}
}  // namespace detail

/// RMSE x 100 per extremum (posterior-mode estimates).
inline void write_table1_csv(std::ostream& out, const SimulationReport& r, const json& manifest) {
  out << "# schema: " << kTableCsvSchema << "/table1\n# manifest: " << manifest.dump() << "\n";
  out << "method,n,t1,t2,t3\n";
  out << detail::method_label(r) << ',' << r.n;
  for (const auto& v : r.rmse_x100) out << ',' << detail::cell(v);
  out << '\n';
}

/// Replicates with multiple / missing estimates per alignment interval.
inline void write_table2_csv(std::ostream& out, const SimulationReport& r, const json& manifest) {
  out << "# schema: " << kTableCsvSchema << "/table2\n# manifest: " << manifest.dump() << "\n";
  out << "method,n,t1_multiple,t1_missing,t2_multiple,t2_missing,t3_multiple,t3_missing\n";
  out << detail::method_label(r) << ',' << r.n;
  for (std::size_t k = 0; k < 3; ++k) out << ',' << r.multiplicity.multiple[k] << ',' << r.multiplicity.missing[k];
  out << '\n';
}

/// Coverage conditional on M_hat = 3, one row per level.
inline void write_table3_csv(std::ostream& out, const SimulationReport& r, const json& manifest) {
  out << "# schema: " << kTableCsvSchema << "/table3\n# manifest: " << manifest.dump() << "\n";
  out << "n,alpha,t1,t2,t3,joint,conditioning_count\n";
  for (const auto& c : r.coverage) {
    out << r.n << ',' << fmt_double(c.alpha);
    for (const auto& v : c.marginal) out << ',' << detail::cell(v);
    out << ',' << detail::cell(c.joint) << ',' << c.conditioning_count << '\n';
  }
}

// ---------------------------------------------------------------- SVG

/// Density curve, shaded HPD segments, ticks at the estimated extrema.
inline std::string posterior_svg(const PosteriorGrid& grid, const ExtremaReport& rep) {
  constexpr double W = 800, H = 400, pad = 40;
  const double peak = grid.max_density();
  auto sx = [&](double t) { return pad + (W - 2 * pad) * t; };
  auto sy = [&](double d) { return H - pad - (H - 2 * pad) * (peak > 0 ? d / peak : 0.0); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& s : rep.hpd.segments) {
    os << "<rect x=\"" << fmt_double(sx(s.lo)) << "\" y=\"" << pad << "\" width=\"" << fmt_double(sx(s.hi) - sx(s.lo))
       << "\" height=\"" << H - 2 * pad << "\" fill=\"" << (s.boundary ? "#f4c7c3" : "#c6dbef")
       << "\" fill-opacity=\"0.6\"/>\n";
  }
  os << "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i) os << ' ';
    os << fmt_double(sx(grid.ts[i])) << ',' << fmt_double(sy(grid.density[i]));
  }
  os << "\"/>\n";
  for (const auto& e : rep.estimates) {
    os << "<line x1=\"" << fmt_double(sx(e.t_hat)) << "\" x2=\"" << fmt_double(sx(e.t_hat)) << "\" y1=\"" << H - pad
       << "\" y2=\"" << H - pad + 10 << "\" stroke=\"#a50f15\" stroke-width=\"2\"/>\n";
  }
  os << "<line x1=\"" << pad << "\" x2=\"" << W - pad << "\" y1=\"" << H - pad << "\" y2=\"" << H - pad
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"" << H - 10 << "\" font-size=\"12\">0</text>\n";
  os << "<text x=\"" << W - pad << "\" y=\"" << H - 10 << "\" font-size=\"12\">1</text>\n";
  os << "<text x=\"" << pad << "\" y=\"" << pad - 10 << "\" font-size=\"12\">posterior density of t (M_hat = "
     << rep.m_hat << ")</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace extrema_gp
