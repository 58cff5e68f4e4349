#pragma once

// CSV and JSON serialization of densities, curves and run metadata.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crossint/core.hpp"
#include "crossint/covmodel.hpp"
#include "crossint/crossings.hpp"
#include "crossint/deps.hpp"
#include "crossint/iia.hpp"

namespace crossint::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Finite doubles as numbers, everything else as null.
inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json num_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

/// Metadata block embedded in every output: the resolved config and seed.
/// Wall time is kept separate so that reruns produce identical files.
inline json metadata(const json& config, std::uint64_t seed, const std::string& command) {
  return {{"schema_version", kSchemaVersion}, {"command", command}, {"seed", seed}, {"config", config}};
}

inline void write_text(const std::string& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot open output file " + file);
  out << text;
  if (!out) throw Error("write failed for " + file);
}

inline void write_json(const std::string& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

inline json read_json(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open " + file);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + file + ": " + e.what());
  }
}

/// Comment header for CSV files: one "# key: value" line with the metadata.
inline std::string csv_header(const json& meta) { return "# " + meta.dump() + "\n"; }

inline std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(12) << x;
  return s.str();
}

inline std::string density_csv(const Density1D& d, const json& meta) {
  std::string out = csv_header(meta) + "t,f,err,terr\n";
  for (std::size_t i = 0; i < d.t.size(); ++i)
    out += fmt(d.t[i]) + "," + fmt(d.f[i]) + "," + fmt(i < d.err.size() ? d.err[i] : 0.0) + "," +
           fmt(i < d.terr.size() ? d.terr[i] : 0.0) + "\n";
  return out;
}

inline json density_summary(const Density1D& d) {
  return {{"normalization", num(d.normalization)}, {"tail_mass", num(d.tail_mass)}, {"mean", num(d.mean)},
          {"level", d.level},                      {"points", d.t.size()}};
}

/// Long format, one row per cell: t1, t2, f, err, terr.
inline std::string joint_csv(const JointDensity2D& j, const json& meta) {
  std::string out = csv_header(meta) + "t1,t2,f,err,terr\n";
  for (std::size_t a = 0; a < j.t1.size(); ++a) {
    for (std::size_t b = 0; b < j.t2.size(); ++b) {
      const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
      out += fmt(j.t1[a]) + "," + fmt(j.t2[b]) + "," + fmt(j.f(ia, ib)) + "," +
             fmt(j.err.size() ? j.err(ia, ib) : 0.0) + "," + fmt(j.terr.size() ? j.terr(ia, ib) : 0.0) + "\n";
    }
    out += "\n";  // gnuplot block separator
  }
  return out;
}

inline json joint_summary(const JointDensity2D& j) {
  return {{"normalization", num(j.normalization)},
          {"mean1", num(j.mean1)},
          {"mean2", num(j.mean2)},
          {"correlation", num(j.corr)},
          {"kl", num(j.kl)},
          {"level", j.level},
          {"missing_cells", j.missing_cells},
          {"grid", {{"n1", j.t1.size()}, {"n2", j.t2.size()}}}};
}

inline std::string persistence_csv(const PersistenceCurve& c, const json& meta) {
  std::string out = csv_header(meta) + "T,Q,Q_err,local_theta,unreliable\n";
  for (std::size_t i = 0; i < c.T.size(); ++i)
    out += fmt(c.T[i]) + "," + fmt(c.Q[i]) + "," + fmt(i < c.Q_err.size() ? c.Q_err[i] : 0.0) + "," +
           fmt(i < c.local_theta.size() ? c.local_theta[i] : std::nan("")) + "," +
           std::to_string(i < c.unreliable.size() ? static_cast<int>(c.unreliable[i]) : 0) + "\n";
  return out;
}

inline json persistence_summary(const PersistenceCurve& c) {
  return {{"theta", num(c.theta_hat)}, {"fit_window", {num(c.fit_lo), num(c.fit_hi)}},
          {"runs", c.n_runs},          {"level", c.level}};
}

inline std::string quasi_cdf_csv(const std::vector<double>& t, const std::vector<double>& F, const json& meta) {
  std::string out = csv_header(meta) + "t,F\n";
  for (std::size_t i = 0; i < t.size(); ++i) out += fmt(t[i]) + "," + fmt(F[i]) + "\n";
  return out;
}

inline json laplace_summary(const LaplaceApprox& a) {
  json poles = json::array(), res = json::array();
  for (const auto& p : a.poles) poles.push_back({num(p.real()), num(p.imag())});
  for (const auto& r : a.residues) res.push_back({num(r.real()), num(r.imag())});
  return {{"L", a.L},     {"mu", a.mu},        {"theta", num(a.theta_L)}, {"atom_at_zero", a.atom_at_zero},
          {"poles", poles}, {"residues", res}, {"total_mass", num(a.total_mass())}};
}

inline std::string markov_csv(const MarkovTestResult& r, const std::vector<double>& states, const json& meta) {
  std::string out = csv_header(meta) + "t0,t1,mass,l1,max_abs\n";
  for (const auto& s : r.slices)
    out += fmt(states[s.i]) + "," + fmt(states[s.j]) + "," + fmt(s.mass) + "," + fmt(s.l1) + "," + fmt(s.max_abs) +
           "\n";
  return out;
}

/// Two-column (w, S) spectrum; lines starting with '#' and a non-numeric
/// header line are skipped.
inline CovarianceModel read_spectrum_csv(const std::string& file, const std::string& code = "TAB") {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open spectrum file " + file);
  std::vector<double> w, s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line)
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    std::istringstream ls(line);
    double a, b;
    if (!(ls >> a >> b)) {
      if (w.empty()) continue;  // header
      throw ConfigError(file + ":" + std::to_string(lineno) + ": expected two numbers");
    }
    w.push_back(a);
    s.push_back(b);
  }
  if (w.size() < 3) throw ConfigError("spectrum file " + file + " has fewer than 3 rows");
  return CovarianceModel::tabulated(std::move(w), std::move(s), code);
}

}  // namespace crossint::io
