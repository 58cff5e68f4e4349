// crossint: command-line front end for the crossing-interval library
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossint/crossint.hpp"

using namespace crossint;
using io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitComparison = 4;

struct Common {
  unsigned threads = 1;
  int speed = 3;
  std::uint64_t seed = 12345;
  std::string out = "crossint_out";
  std::string spectrum_file;
};

const char* kSpeedHelp =
    "Speed preset 1..9 (lattice points x random shifts per integral):\n"
    "  1: 8191x16  2: 4093x16  3: 2039x12  4: 1021x12  5: 509x12\n"
    "  6: 251x12   7: 127x12   8: 61x12    9: 31x12";

CovarianceModel load_model(const std::string& code, const Common& c) {
  if (!c.spectrum_file.empty()) return io::read_spectrum_csv(c.spectrum_file, code.empty() ? "TAB" : code);
  return CovarianceModel::from_code(code);
}

CrossingOptions crossing_options(const Common& c) {
  CrossingOptions o;
  o.mvn.speed = c.speed;
  o.mvn.seed = c.seed;
  o.mvn.threads = c.threads;
  return o;
}

json common_json(const Common& c) {
  return {{"threads", c.threads}, {"speed", c.speed}, {"seed", c.seed}, {"spectrum_file", c.spectrum_file}};
}

std::string out_path(const Common& c, const std::string& name) {
  std::filesystem::create_directories(c.out);
  return (std::filesystem::path(c.out) / name).string();
}

/// Writes the summary JSON (with metadata) and reports the wall time on
/// stderr and in a separate timing file so that summaries stay reproducible.
void finish(const Common& c, const std::string& stem, const json& meta, json summary, double seconds) {
  summary["metadata"] = meta;
  io::write_json(out_path(c, stem + ".json"), summary);
  io::write_json(out_path(c, stem + ".timing.json"), {{"wall_time_s", seconds}});
  std::cerr << stem << ": " << seconds << " s, output in " << c.out << "\n";
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Side parse_side(const std::string& s) {
  if (s == "above") return Side::Above;
  if (s == "below") return Side::Below;
  throw ConfigError("side must be 'above' or 'below'");
}

// ---------------------------------------------------------------------------
// computations shared by several subcommands

JointDensity2D run_joint(const CovarianceModel& m, double dt, long n, double u, const Common& c) {
  JointGrid g;
  g.dt = dt;
  g.n1 = n;
  g.n2 = n;
  return joint_interval_pdf(m, g, u, crossing_options(c));
}

json measures_row(const CovarianceModel& m, const JointDensity2D& j) {
  const auto mo = m.moments();
  return {{"model", m.code()},
          {"alpha", mo.alpha ? json(*mo.alpha) : json(nullptr)},
          {"correlation", io::num(interval_correlation(j))},
          {"kl", io::num(j.kl)},
          {"normalization", io::num(j.normalization)},
          {"missing_cells", j.missing_cells}};
}

PersistenceCurve run_persistence(const CovarianceModel& m, double u, double dt, double Tmax, int runs, long stride,
                                 const Common& c) {
  PersistenceOptions po;
  po.dt = dt;
  po.T_max = Tmax;
  po.n_runs = runs;
  po.report_stride = stride;
  po.crossing = crossing_options(c);
  return persistence_QT(m, u, po);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact level-crossing interval distributions and persistence for stationary Gaussian processes"};
  app.set_config("--config", "", "TOML/INI file with option values (sections per subcommand)");
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--speed", c.speed, kSpeedHelp)->check(CLI::Range(1, 9))->capture_default_str();
  app.add_option("--seed", c.seed, "Seed of the randomized lattice rules and simulations")->capture_default_str();
  app.add_option("--out", c.out, "Output directory")->capture_default_str();
  app.add_option("--spectrum", c.spectrum_file, "Two-column (omega, S) CSV used instead of a catalog model");

  std::string model = "LH1";
  double dt = 0.2, u = 0.0;
  long n = 60;

  // intervalpdf
  auto* ip = app.add_subcommand("intervalpdf", "Density of the excursion interval above or below u");
  std::string side = "above";
  ip->add_option("--model", model, "Catalog code (LH1..LH7, WHk, BMSd, WN, BS, J)")->capture_default_str();
  ip->add_option("--dt", dt, "Grid spacing")->capture_default_str();
  ip->add_option("--n", n, "Grid steps")->capture_default_str();
  ip->add_option("--u", u, "Level")->capture_default_str();
  ip->add_option("--side", side, "above | below")->capture_default_str();

  // jointpdf
  auto* jp = app.add_subcommand("jointpdf", "Joint density of two successive intervals (above, below)");
  jp->add_option("--model", model)->capture_default_str();
  jp->add_option("--dt", dt)->capture_default_str();
  jp->add_option("--n", n, "Grid steps per axis")->capture_default_str();
  jp->add_option("--u", u)->capture_default_str();

  // measures
  auto* ms = app.add_subcommand("measures", "alpha, correlation and KL distance of successive intervals");
  std::vector<std::string> models;
  ms->add_option("--model", models, "One or more catalog codes")->required();
  ms->add_option("--dt", dt)->capture_default_str();
  ms->add_option("--n", n)->capture_default_str();

  // persistence
  auto* ps = app.add_subcommand("persistence", "Persistence probability Q_T and exponent theta");
  double Tmax = 30.0, pdt = 0.1;
  int runs = 50;
  long stride = 10;
  std::string fit = "global";
  ps->add_option("--model", model)->capture_default_str();
  ps->add_option("--dt", pdt, "Indicator spacing")->capture_default_str();
  ps->add_option("--Tmax", Tmax)->capture_default_str();
  ps->add_option("--runs", runs, "Independent randomizations averaged")->capture_default_str();
  ps->add_option("--stride", stride, "Report Q every stride*dt")->capture_default_str();
  ps->add_option("--u", u)->capture_default_str();
  ps->add_option("--fit", fit, "global | local")->capture_default_str();

  // iia-theta
  auto* it = app.add_subcommand("iia-theta", "Persistence exponent of the independent interval approximation");
  std::vector<int> Ls;
  it->add_option("--model", model)->capture_default_str();
  it->add_option("--L", Ls, "Series orders (BMS2 only); omitted = numerical transform");

  // iia-quasicdf
  auto* iq = app.add_subcommand("iia-quasicdf", "Quasi distribution function from the series partial fractions");
  int L = 3;
  double tmax = 10.0;
  iq->add_option("--L", L)->capture_default_str();
  iq->add_option("--tmax", tmax)->capture_default_str();
  iq->add_option("--n", n, "Points")->capture_default_str();

  // markov-test
  auto* mt = app.add_subcommand("markov-test", "Three-interval test of the Markov chain approximation");
  BinGrid bins;
  bins.x0 = 0.2;
  bins.width = 0.2;
  bins.n = 30;
  mt->add_option("--model", model)->capture_default_str();
  mt->add_option("--x0", bins.x0, "First bin centre")->capture_default_str();
  mt->add_option("--width", bins.width, "Bin width")->capture_default_str();
  mt->add_option("--bins", bins.n, "Number of bins")->capture_default_str();
  mt->add_option("--dt", bins.dt, "Indicator spacing")->capture_default_str();

  // simulate
  auto* sm = app.add_subcommand("simulate", "Simulate paths and write interval sequences");
  double sdt = 0.05;
  std::size_t points = 65536, paths = 16;
  sm->add_option("--model", model)->capture_default_str();
  sm->add_option("--dt", sdt)->capture_default_str();
  sm->add_option("--points", points)->capture_default_str();
  sm->add_option("--paths", paths)->capture_default_str();
  sm->add_option("--u", u)->capture_default_str();

  // compare
  auto* cp = app.add_subcommand("compare", "Analytic joint density against a simulated histogram");
  std::size_t pairs = 100000;
  double factor = 3.0;
  cp->add_option("--model", model)->capture_default_str();
  cp->add_option("--dt", dt)->capture_default_str();
  cp->add_option("--n", n)->capture_default_str();
  cp->add_option("--u", u)->capture_default_str();
  cp->add_option("--pairs", pairs, "Simulated (above, below) pairs")->capture_default_str();
  cp->add_option("--sim-dt", sdt)->capture_default_str();
  cp->add_option("--factor", factor, "Allowed multiple of the combined error")->capture_default_str();

  // reproduce
  auto* rp = app.add_subcommand("reproduce", "Regenerate a table at the configured scale");
  std::string table;
  rp->add_option("table", table, "table2 | table3 | table4")->required()->check(CLI::IsMember({"table2", "table3", "table4"}));
  rp->add_option("--runs", runs, "Persistence runs (table3)")->capture_default_str();
  rp->add_option("--Tmax", Tmax, "Persistence horizon (table3)")->capture_default_str();
  rp->add_option("--n", n, "Joint grid steps (table2)")->capture_default_str();
  rp->add_option("--dt", dt, "Joint grid spacing (table2)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (*ip) {
      const auto m = load_model(model, c);
      const json cfg = {{"model", m.code()}, {"dt", dt}, {"n", n}, {"u", u}, {"side", side}, {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "intervalpdf");
      const auto d = interval_pdf(m, dt, n, u, parse_side(side), crossing_options(c));
      const std::string stem = "intervalpdf_" + m.code();
      io::write_text(out_path(c, stem + ".csv"), io::density_csv(d, meta));
      finish(c, stem, meta, io::density_summary(d), elapsed(t0));
      std::printf("mean %.6f normalization %.6f tail %.3g\n", d.mean, d.normalization, d.tail_mass);
    } else if (*jp) {
      const auto m = load_model(model, c);
      const json cfg = {{"model", m.code()}, {"dt", dt}, {"n", n}, {"u", u}, {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "jointpdf");
      const auto j = run_joint(m, dt, n, u, c);
      const std::string stem = "jointpdf_" + m.code();
      io::write_text(out_path(c, stem + ".csv"), io::joint_csv(j, meta));
      finish(c, stem, meta, io::joint_summary(j), elapsed(t0));
      std::printf("correlation %.4f KL %.4f normalization %.4f\n", j.corr, j.kl, j.normalization);
    } else if (*ms) {
      const json cfg = {{"models", models}, {"dt", dt}, {"n", n}, {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "measures");
      json rows = json::array();
      for (const auto& code : models) {
        const auto m = load_model(code, c);
        const auto j = run_joint(m, dt, n, 0.0, c);
        rows.push_back(measures_row(m, j));
        std::printf("%-6s rho %7.4f KL %.4f\n", m.code().c_str(), interval_correlation(j), j.kl);
      }
      finish(c, "measures", meta, {{"rows", rows}}, elapsed(t0));
    } else if (*ps) {
      const auto m = load_model(model, c);
      const json cfg = {{"model", m.code()}, {"dt", pdt},   {"Tmax", Tmax}, {"runs", runs},
                        {"stride", stride},  {"u", u},      {"fit", fit},   {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "persistence");
      auto curve = run_persistence(m, u, pdt, Tmax, runs, stride, c);
      if (fit != "global" && fit != "local") throw ConfigError("fit must be 'global' or 'local'");
      const auto e = persistence_exponent(curve, fit == "global" ? ExponentFit::Global : ExponentFit::LocalQuadratic);
      const std::string stem = "persistence_" + m.code();
      io::write_text(out_path(c, stem + ".csv"), io::persistence_csv(curve, meta));
      finish(c, stem, meta, io::persistence_summary(curve), elapsed(t0));
      std::printf("theta %.5f (fit on [%.3g, %.3g])\n", e.theta, e.fit_lo, e.fit_hi);
    } else if (*it) {
      const auto m = load_model(model, c);
      const json cfg = {{"model", m.code()}, {"L", Ls}, {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "iia-theta");
      json rows = json::array();
      if (!Ls.empty()) {
        if (m.code() != "BMS2") throw ConfigError("series orders are available for BMS2 only");
        for (int l : Ls) {
          const auto a = diffusion2d_series(l);
          rows.push_back(io::laplace_summary(a));
          std::printf("L %3d theta %.4f\n", l, a.theta_L);
        }
      } else {
        const double mu = 0.5 / m.upcrossing_rate(0.0);
        const double th = theta_iia(clipped_laplace(m), mu);
        rows.push_back({{"theta", th}, {"mu", mu}});
        std::printf("theta %.5f\n", th);
      }
      finish(c, "iia_theta_" + m.code(), meta, {{"rows", rows}}, elapsed(t0));
    } else if (*iq) {
      const json cfg = {{"L", L}, {"tmax", tmax}, {"n", n}, {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "iia-quasicdf");
      const auto a = diffusion2d_series(L);
      const auto t = linspace(0.0, tmax, static_cast<std::size_t>(std::max(2L, n)));
      const auto F = quasi_cdf(a, t);
      double dip = 0.0;
      for (std::size_t i = 1; i < F.size(); ++i) dip = std::max(dip, F[i - 1] - F[i]);
      const std::string stem = "iia_quasicdf_L" + std::to_string(L);
      io::write_text(out_path(c, stem + ".csv"), io::quasi_cdf_csv(t, F, meta));
      json s = io::laplace_summary(a);
      s["largest_decrease"] = dip;
      finish(c, stem, meta, s, elapsed(t0));
      std::printf("largest decrease %.4g\n", dip);
    } else if (*mt) {
      const auto m = load_model(model, c);
      const json cfg = {{"model", m.code()}, {"x0", bins.x0},   {"width", bins.width},
                        {"bins", bins.n},    {"dt", bins.dt},   {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "markov-test");
      const auto o = crossing_options(c);
      const auto f3 = tri_interval_pdf(m, bins, 0.0, o);
      const auto f2 = joint_interval_pdf_binned(m, bins, 0.0, o);
      const auto r = markov_test(f3, f2);
      const std::string stem = "markov_" + m.code();
      io::write_text(out_path(c, stem + ".csv"), io::markov_csv(r, bins.centres(), meta));
      finish(c, stem, meta,
             {{"max_dev", r.max_dev}, {"mean_dev", r.mean_dev}, {"slices", r.slices.size()}, {"skipped", r.skipped}},
             elapsed(t0));
      std::printf("mean deviation %.4f max deviation %.4f\n", r.mean_dev, r.max_dev);
    } else if (*sm) {
      const auto m = load_model(model, c).normalized();
      const json cfg = {{"model", m.code()}, {"dt", sdt}, {"points", points}, {"paths", paths}, {"u", u},
                        {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "simulate");
      SimulationOptions so;
      so.threads = c.threads;
      const auto sample = simulate_intervals(m, points, sdt, paths, c.seed, u, so);
      IntervalSequence all;
      for (const auto& b : sample.blocks) {
        all.length.insert(all.length.end(), b.length.begin(), b.length.end());
        all.label.insert(all.label.end(), b.label.begin(), b.label.end());
      }
      const std::string stem = "intervals_" + m.code();
      write_intervals_binary(out_path(c, stem + ".bin"), all);
      finish(c, stem, meta, {{"intervals", all.length.size()}, {"layout", "float64 length, float64 label (+1/-1)"}},
             elapsed(t0));
      std::printf("%zu intervals\n", all.length.size());
    } else if (*cp) {
      const auto m = load_model(model, c).normalized();
      const json cfg = {{"model", m.code()}, {"dt", dt},     {"n", n},           {"u", u},
                        {"pairs", pairs},    {"sim_dt", sdt}, {"factor", factor}, {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "compare");
      const auto j = run_joint(m, dt, n, u, c);
      // pairs per path from the crossing rate
      const std::size_t points = 1 << 16;
      const double pairs_per_path = m.upcrossing_rate(u) * sdt * static_cast<double>(points);
      const auto n_paths = static_cast<std::size_t>(std::ceil(static_cast<double>(pairs) / std::max(pairs_per_path, 1.0)));
      SimulationOptions so;
      so.threads = c.threads;
      const auto sample = simulate_intervals(m, points, sdt, n_paths, c.seed, u, so);
      const auto e = empirical_joint(sample, j.t1, j.t2);
      const auto r = compare_joint(j, e.density, factor);
      const std::string stem = "compare_" + m.code();
      io::write_text(out_path(c, stem + "_empirical.csv"), io::joint_csv(e.density, meta));
      finish(c, stem, meta,
             {{"cells", r.cells},
              {"max_ratio", r.max_ratio},
              {"max_abs", r.max_abs},
              {"fraction_beyond_one_error", r.fraction_beyond_err},
              {"pairs", e.n_pairs},
              {"pass", r.pass}},
             elapsed(t0));
      std::printf("%zu pairs, %zu cells, max |diff|/error %.3f -> %s\n", e.n_pairs, r.cells, r.max_ratio,
                  r.pass ? "agree" : "disagree");
      if (!r.pass) return kExitComparison;
    } else if (*rp) {
      const json cfg = {{"table", table}, {"runs", runs}, {"Tmax", Tmax}, {"n", n}, {"dt", dt}, {"common", common_json(c)}};
      const json meta = io::metadata(cfg, c.seed, "reproduce");
      json rows = json::array();
      if (table == "table4") {
        for (int l : {0, 1, 2, 3, 4, 5, 6, 7, 8, 15, 30}) {
          const auto a = diffusion2d_series(l);
          rows.push_back({{"L", l}, {"theta", a.theta_L}});
          std::printf("L %3d theta %.4f\n", l, a.theta_L);
        }
      } else if (table == "table3") {
        for (int d : {1, 2, 3}) {
          auto curve = run_persistence(CovarianceModel::diffusion(d), 0.0, 0.1, Tmax, runs, 10, c);
          const auto e = persistence_exponent(curve, ExponentFit::Global);
          rows.push_back({{"d", d}, {"theta", e.theta}, {"runs", runs}});
          std::printf("d %d theta %.4f\n", d, e.theta);
        }
      } else {
        for (const char* code : {"LH1", "LH2", "LH3", "LH4", "LH5", "LH6", "LH7", "WN", "BS", "J"}) {
          const auto m = CovarianceModel::from_code(code);
          const auto j = run_joint(m, dt, n, 0.0, c);
          rows.push_back(measures_row(m, j));
          std::printf("%-4s rho %7.4f KL %.4f\n", code, interval_correlation(j), j.kl);
        }
      }
      finish(c, "reproduce_" + table, meta, {{"rows", rows}}, elapsed(t0));
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MomentUndefined& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
