// Command-line surface: estimation at a boundary point, boundary sweeps,
// Monte Carlo simulation, and the distance-strategy diagnostics.
// Exit codes: 0 success, 1 usage/input error, 2 numerical/estimation error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mrd/mrd.hpp"

namespace {

using nlohmann::json;

// JSON config files mirroring the flags: top-level keys apply to every
// subcommand section named after it, e.g. {"estimate": {"alpha": 0.1}}.
// Command-line flags take precedence over file values.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    input >> j;
    if (!j.is_object())
      throw CLI::FileError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> out;
    emit(j, {}, out);
    return out;
  }

 private:
  static void emit(const json& j, std::vector<std::string> parents,
                   std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto deeper = parents;
        deeper.push_back(key);
        emit(value, deeper, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }
};

struct OutputTarget {
  std::string path;  // empty -> stdout

  void write(const std::string& text) const {
    if (path.empty()) {
      std::cout << text;
      return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw mrd::InputFormatError("cannot open output path: " + path);
    out << text;
  }
};

mrd::KernelFamily parse_kernel(const std::string& s) {
  if (s == "product-triangular") return mrd::KernelFamily::product_triangular;
  if (s == "product-epanechnikov") return mrd::KernelFamily::product_epanechnikov;
  if (s == "cone") return mrd::KernelFamily::cone;
  throw CLI::ValidationError("--kernel", "unknown kernel family: " + s);
}

mrd::RegionKind parse_region_kind(const std::string& s) {
  if (s == "intersection") return mrd::RegionKind::intersection;
  if (s == "half-sum") return mrd::RegionKind::half_sum;
  if (s == "half-plane") return mrd::RegionKind::half_plane;
  throw CLI::ValidationError("--region", "unknown region kind: " + s);
}

mrd::CsvDataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mrd::InputFormatError("cannot open input file: " + path);
  return mrd::read_dataset_csv(in);
}

void apply_region(mrd::Dataset& data, const mrd::RegionSpec& region) {
  for (std::size_t i = 0; i < data.size(); ++i)
    data.treated[i] =
        mrd::region_contains(region, {data.r1[i], data.r2[i]}) ? 1 : 0;
}

json error_record(const std::string& kind, const std::string& message) {
  json j;
  j["schema"] = mrd::kSchemaTag;
  j["error"] = {{"kind", kind}, {"message", message}};
  return j;
}

int emit_numeric_error(const OutputTarget& out, const std::string& kind,
                       const mrd::Error& err) {
  json j = error_record(kind, err.what());
  if (const auto* ild = dynamic_cast<const mrd::InsufficientLocalDataError*>(&err)) {
    j["error"]["effective_n"] = ild->effective_n;
    j["error"]["side"] = ild->side;
  }
  out.write(j.dump(2) + "\n");
  return 2;
}

struct CommonFlags {
  std::string input;
  std::string output;
  std::string format = "json";
  std::string kernel = "product-triangular";
  std::string bw_mode = "heterogeneous";
  bool density_adjusted = false;
  double alpha = 0.05;
  double h1 = 0.0, h2 = 0.0;
  std::vector<double> center{0.0, 0.0};
  std::vector<double> normal{0.0, 1.0};
  std::string region_kind;
  std::vector<double> thresholds{0.0, 0.0};
};

mrd::EstimateOptions to_options(const CommonFlags& f) {
  mrd::EstimateOptions opt;
  opt.kernel.family = parse_kernel(f.kernel);
  opt.alpha = f.alpha;
  opt.density_adjusted = f.density_adjusted;
  if (f.bw_mode == "heterogeneous") {
    opt.mode = mrd::BandwidthMode::heterogeneous;
  } else if (f.bw_mode == "common") {
    opt.mode = mrd::BandwidthMode::common;
  } else if (f.bw_mode == "fixed") {
    opt.mode = mrd::BandwidthMode::fixed;
    opt.fixed_h1 = f.h1;
    opt.fixed_h2 = f.h2;
  } else {
    throw CLI::ValidationError("--bw-mode", "unknown bandwidth mode: " + f.bw_mode);
  }
  return opt;
}

void add_common_flags(CLI::App* cmd, CommonFlags& f, bool needs_input) {
  if (needs_input)
    cmd->add_option("--input", f.input, "input CSV with columns y,r1,r2[,d]")
        ->required();
  cmd->add_option("--output", f.output, "output path (default stdout)");
  cmd->add_option("--format", f.format, "output format: json or csv")
      ->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--kernel", f.kernel,
                  "kernel family: product-triangular, product-epanechnikov, cone");
  cmd->add_option("--bw-mode", f.bw_mode,
                  "bandwidth mode: heterogeneous, common, fixed");
  cmd->add_flag("--density-adjusted", f.density_adjusted,
                "scale-equivariant selection with a 1/f(c) variance factor");
  cmd->add_option("--alpha", f.alpha, "confidence level tail mass")
      ->check(CLI::Range(1e-6, 0.499999));
  cmd->add_option("--h1", f.h1, "fixed bandwidth along the boundary");
  cmd->add_option("--h2", f.h2, "fixed bandwidth across the boundary");
  cmd->add_option("--center", f.center, "boundary point c1,c2")->expected(2);
  cmd->add_option("--normal", f.normal, "unit normal into the treated region")
      ->expected(2);
  cmd->add_option("--region", f.region_kind,
                  "region kind deriving d: intersection, half-sum, half-plane");
  cmd->add_option("--thresholds", f.thresholds, "region thresholds c1,c2")
      ->expected(2);
}

int cmd_estimate(const CommonFlags& f) {
  OutputTarget out{f.output};
  auto csv = load_csv(f.input);
  if (!f.region_kind.empty())
    apply_region(csv.data,
                 {parse_region_kind(f.region_kind), f.thresholds[0], f.thresholds[1]});
  else if (!csv.has_treatment)
    throw mrd::InputFormatError(
        "input has no treatment column d and no --region was given");
  const auto frame = mrd::BoundaryFrame::from_normal(
      {f.center[0], f.center[1]}, {f.normal[0], f.normal[1]});
  try {
    const mrd::RDEstimate est = mrd::estimate_rd(csv.data, frame, to_options(f));
    if (f.format == "csv") {
      out.write(mrd::estimate_csv(est));
    } else {
      json j = mrd::to_json(est);
      j["schema"] = mrd::kSchemaTag;
      j["command"] = "estimate";
      out.write(j.dump(2) + "\n");
    }
    return 0;
  } catch (const mrd::InsufficientLocalDataError& err) {
    return emit_numeric_error(out, "insufficient-local-data", err);
  } catch (const mrd::DegenerateSelectionError& err) {
    return emit_numeric_error(out, "degenerate-selection", err);
  }
}

int cmd_sweep(const CommonFlags& f, int points, double extent) {
  OutputTarget out{f.output};
  auto csv = load_csv(f.input);
  if (f.region_kind.empty())
    throw mrd::InputFormatError("sweep requires --region to place boundary points");
  const mrd::RegionSpec region{parse_region_kind(f.region_kind), f.thresholds[0],
                               f.thresholds[1]};
  if (!csv.has_treatment) apply_region(csv.data, region);
  const auto frames = mrd::boundary_points(region, points, extent);
  const auto entries = mrd::sweep_boundary(csv.data, frames, to_options(f));

  if (f.format == "csv") {
    std::ostringstream os;
    os << "center1,center2,theta,theta_bc,se,ci_low,ci_high,h1,h2,error\n";
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& e = entries[k];
      os << mrd::csv_num(frames[k].center.x) << ',' << mrd::csv_num(frames[k].center.y)
         << ',';
      if (e.ok)
        os << mrd::csv_num(e.estimate.theta) << ',' << mrd::csv_num(e.estimate.theta_bc)
           << ',' << mrd::csv_num(e.estimate.se) << ',' << mrd::csv_num(e.estimate.ci_low)
           << ',' << mrd::csv_num(e.estimate.ci_high) << ','
           << mrd::csv_num(e.estimate.h1) << ',' << mrd::csv_num(e.estimate.h2) << ",\n";
      else
        os << ",,,,,,," << e.error_kind << '\n';
    }
    out.write(os.str());
  } else {
    json arr = json::array();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& e = entries[k];
      json p;
      p["center"] = {frames[k].center.x, frames[k].center.y};
      if (e.ok) {
        p["estimate"] = mrd::to_json(e.estimate);
      } else {
        p["error"] = {{"kind", e.error_kind}, {"message", e.error_message}};
      }
      arr.push_back(std::move(p));
    }
    json j;
    j["schema"] = mrd::kSchemaTag;
    j["command"] = "sweep";
    j["points"] = std::move(arr);
    out.write(j.dump(2) + "\n");
  }
  return 0;
}

struct SimulateFlags {
  int design = 2;
  int n = 5000;
  int reps = 100;
  std::uint64_t seed = 0;
  int jobs = 0;
  std::string estimators = "2d-diff,2d-common,distance-ik";
  std::vector<double> support;
  double noise_std = 0.1295;
  bool lpm = false;
  std::string export_designs;
};

int cmd_simulate(const CommonFlags& f, const SimulateFlags& sf) {
  OutputTarget out{f.output};
  if (!sf.export_designs.empty()) {
    OutputTarget dst{sf.export_designs};
    dst.write(mrd::designs_csv());
    return 0;
  }
  mrd::DesignSpec design = mrd::make_design(sf.design);
  if (!sf.support.empty()) {
    if (sf.support.size() != 4)
      throw mrd::InputFormatError("--support needs x_lo,x_hi,y_lo,y_hi");
    design.x_lo = sf.support[0];
    design.x_hi = sf.support[1];
    design.y_lo = sf.support[2];
    design.y_hi = sf.support[3];
  }
  design.noise_std = sf.noise_std;
  design.lpm = sf.lpm;

  std::vector<mrd::EstimatorKind> kinds;
  std::stringstream ss(sf.estimators);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "2d-diff") kinds.push_back(mrd::EstimatorKind::td_diff);
    else if (tok == "2d-common") kinds.push_back(mrd::EstimatorKind::td_common);
    else if (tok == "distance-ik") kinds.push_back(mrd::EstimatorKind::distance_ik);
    else throw mrd::InputFormatError("unknown estimator: " + tok);
  }

  int jobs = sf.jobs;
  if (jobs <= 0) {
    if (const char* env = std::getenv("MRD_JOBS")) jobs = std::atoi(env);
    if (jobs <= 0) jobs = 1;
  }
  mrd::EstimateOptions base;
  base.kernel.family = parse_kernel(f.kernel);
  base.alpha = f.alpha;
  base.density_adjusted = f.density_adjusted;
  const mrd::MCResult res =
      mrd::run_mc(design, kinds, sf.n, sf.reps, sf.seed, jobs, base);

  if (f.format == "csv") {
    out.write(mrd::summary_csv(res));
  } else {
    json j;
    j["schema"] = mrd::kSchemaTag;
    j["command"] = "simulate";
    j["design"] = sf.design;
    j["n"] = sf.n;
    j["reps"] = sf.reps;
    j["seed"] = sf.seed;
    j["true_theta"] = res.true_theta;
    json rows = json::array();
    for (const auto& s : res.summary) rows.push_back(mrd::to_json(s));
    j["estimators"] = std::move(rows);
    out.write(j.dump(2) + "\n");
  }
  return 0;
}

struct DiagnoseFlags {
  std::string mode = "density";
  std::uint64_t seed = 0;
  int n = 100000;
  int reps = 30;
  double sigma = 1.0;
  std::vector<double> h_grid;
  std::vector<int> n_grid;
};

int cmd_diagnose(const CommonFlags& f, const DiagnoseFlags& df) {
  OutputTarget out{f.output};
  const mrd::BoundaryFrame origin =
      mrd::BoundaryFrame::from_normal({0.0, 0.0}, {0.0, 1.0});

  if (df.mode == "density") {
    std::vector<double> hs = df.h_grid;
    if (hs.empty()) hs = {0.2, 0.1, 0.05, 0.025, 0.0125};
    const mrd::Dataset data = mrd::sample_uniform_half_rect(df.n, df.seed);
    const auto s = mrd::to_signed_distance(data, origin);
    std::ostringstream os;
    os << "h,f0,f0_over_h\n";
    json rows = json::array();
    for (double h : hs) {
      const double f0 = mrd::density_at_zero(s, h);
      os << mrd::csv_num(h) << ',' << mrd::csv_num(f0) << ','
         << mrd::csv_num(f0 / h) << '\n';
      rows.push_back({{"h", h}, {"f0", f0}, {"f0_over_h", f0 / h}});
    }
    if (f.format == "csv") {
      out.write(os.str());
    } else {
      json j;
      j["schema"] = mrd::kSchemaTag;
      j["command"] = "diagnose";
      j["mode"] = "density";
      j["series"] = std::move(rows);
      out.write(j.dump(2) + "\n");
    }
    return 0;
  }

  if (df.mode != "gamma")
    throw mrd::InputFormatError("diagnose mode must be 'density' or 'gamma'");

  std::vector<int> ns = df.n_grid;
  if (ns.empty()) ns = {10000, 40000, 160000};
  Eigen::Matrix2d c_gamma;
  c_gamma << 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 10.0;
  c_gamma *= M_PI / 2.0;
  Eigen::Matrix2d c_psi;
  c_psi << 1.0 / 3.0, 2.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0;
  c_psi *= (M_PI / 2.0) * df.sigma * df.sigma;
  const Eigen::Matrix2d ci = c_gamma.inverse();
  const double v_limit = (ci * c_psi * ci)(0, 0);

  std::ostringstream os;
  os << "n,h,gamma_rel_dev,nh2_v_plus,v_limit\n";
  json rows = json::array();
  for (std::size_t gi = 0; gi < ns.size(); ++gi) {
    const int n = ns[gi];
    const double h = std::pow(static_cast<double>(n), -0.2);
    std::vector<double> devs, vs;
    for (int r = 0; r < df.reps; ++r) {
      const mrd::Dataset data = mrd::sample_uniform_half_rect(
          n, mrd::stream_seed(df.seed, gi * 1000 + r), df.sigma);
      const auto s = mrd::to_signed_distance(data, origin);
      const auto gp = mrd::gamma_psi(s, h, df.sigma * df.sigma);
      devs.push_back((gp.gamma_plus / h - c_gamma).norm() / c_gamma.norm());
      vs.push_back(static_cast<double>(n) * h * h * gp.v_plus);
    }
    std::sort(devs.begin(), devs.end());
    std::sort(vs.begin(), vs.end());
    const double dev = devs[devs.size() / 2];
    const double v = vs[vs.size() / 2];
    os << n << ',' << mrd::csv_num(h) << ',' << mrd::csv_num(dev) << ','
       << mrd::csv_num(v) << ',' << mrd::csv_num(v_limit) << '\n';
    rows.push_back({{"n", n},
                    {"h", h},
                    {"gamma_rel_dev", dev},
                    {"nh2_v_plus", v},
                    {"v_limit", v_limit}});
  }
  if (f.format == "csv") {
    out.write(os.str());
  } else {
    json j;
    j["schema"] = mrd::kSchemaTag;
    j["command"] = "diagnose";
    j["mode"] = "gamma";
    j["series"] = std::move(rows);
    out.write(j.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multivariate regression discontinuity estimation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file mirroring the flags");

  CommonFlags est_f, sweep_f, sim_f, diag_f;

  auto* est = app.add_subcommand("estimate", "estimate the effect at a boundary point");
  add_common_flags(est, est_f, true);

  auto* sweep = app.add_subcommand("sweep", "estimate along the boundary");
  add_common_flags(sweep, sweep_f, true);
  int sweep_points = 10;
  double sweep_extent = 1.0;
  sweep->add_option("--points", sweep_points, "points per boundary segment")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--extent", sweep_extent, "walk length along each segment")
      ->check(CLI::PositiveNumber);

  auto* sim = app.add_subcommand("simulate", "Monte Carlo over a built-in design");
  add_common_flags(sim, sim_f, false);
  SimulateFlags sf;
  sim->add_option("--design", sf.design, "design id 1..4")->check(CLI::Range(1, 4));
  sim->add_option("--n", sf.n, "observations per replication")->check(CLI::PositiveNumber);
  sim->add_option("--reps", sf.reps, "replications")->check(CLI::PositiveNumber);
  auto* seed_opt = sim->add_option("--seed", sf.seed, "RNG seed");
  seed_opt->required();
  sim->add_option("--jobs", sf.jobs, "worker threads (default MRD_JOBS or 1)");
  sim->add_option("--estimators", sf.estimators,
                  "comma list of 2d-diff,2d-common,distance-ik");
  sim->add_option("--support", sf.support, "x_lo x_hi y_lo y_hi")->expected(4);
  sim->add_option("--noise-std", sf.noise_std, "outcome noise std");
  sim->add_flag("--lpm", sf.lpm, "Bernoulli outcomes from the clamped mean");
  sim->add_option("--export-designs", sf.export_designs,
                  "write the design coefficient table as CSV and exit");

  auto* diag = app.add_subcommand("diagnose", "distance-strategy diagnostics");
  add_common_flags(diag, diag_f, false);
  DiagnoseFlags df;
  diag->add_option("--mode", df.mode, "density or gamma");
  diag->add_option("--seed", df.seed, "RNG seed")->required();
  diag->add_option("--n", df.n, "sample size (density mode)")->check(CLI::PositiveNumber);
  diag->add_option("--reps", df.reps, "replications per grid point (gamma mode)")
      ->check(CLI::PositiveNumber);
  diag->add_option("--sigma", df.sigma, "known noise std (gamma mode)");
  diag->add_option("--h-grid", df.h_grid, "density-mode bandwidth grid");
  diag->add_option("--n-grid", df.n_grid, "gamma-mode sample-size grid");

  try {
    app.parse(argc, argv);
    if (est->parsed()) return cmd_estimate(est_f);
    if (sweep->parsed()) return cmd_sweep(sweep_f, sweep_points, sweep_extent);
    if (sim->parsed()) return cmd_simulate(sim_f, sf);
    if (diag->parsed()) return cmd_diagnose(diag_f, df);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const mrd::InputFormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const mrd::InvalidArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const mrd::InvalidFrameError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const mrd::Error& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 2;
  }
}
