#include "qpat_cli/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "qpat/acoustics.hpp"
#include "qpat/error.hpp"
#include "qpat/experiment.hpp"
#include "qpat/geometry.hpp"
#include "qpat/heating.hpp"
#include "qpat/inversion.hpp"
#include "qpat/transport.hpp"

#ifndef QPAT_VERSION
#define QPAT_VERSION "0.0.0"
#endif

namespace qpat::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const char* version() { return QPAT_VERSION; }

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  return buf;
}

namespace {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

/// Collects the run description and writes manifest.json next to the outputs.
class Manifest {
 public:
  Manifest(std::string command, const ExperimentConfig* config) {
    doc_["software"] = std::string("qpat ") + version();
    doc_["command"] = std::move(command);
    if (config) {
      doc_["config"] = json::object();
      for (const auto& [k, v] : config->entries()) doc_["config"][k] = v;
    }
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
    doc_["timings_s"] = json::object();
    doc_["warnings"] = json::array();
  }

  void input(const fs::path& p) { doc_["inputs"][p.string()] = file_hash(p); }
  void output(const fs::path& p) { doc_["outputs"].push_back({{"path", p.filename().string()}, {"hash", file_hash(p)}}); }
  void timing(const std::string& phase, double seconds) { doc_["timings_s"][phase] = seconds; }
  void warn(const std::string& w) { doc_["warnings"].push_back(w); }
  json& operator[](const std::string& key) { return doc_[key]; }

  void write(const fs::path& dir) const {
    std::ofstream os(dir / "manifest.json");
    os << doc_.dump(2) << '\n';
    if (!os) throw DataError("cannot write manifest in " + dir.string());
  }

 private:
  json doc_;
};

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing manifest.json in " + dir.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
}

/// Verifies every output listed in a manifest against its recorded hash.
void verify_outputs(const fs::path& dir, const json& manifest) {
  if (!manifest.contains("outputs")) throw DataError("manifest in " + dir.string() + " lists no outputs");
  for (const auto& o : manifest["outputs"]) {
    const fs::path p = dir / o.at("path").get<std::string>();
    if (!fs::exists(p)) throw DataError("missing data file " + p.string());
    if (file_hash(p) != o.at("hash").get<std::string>()) throw DataError("hash mismatch for " + p.string());
  }
}

fs::path prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string());
  return dir;
}

struct InversionSetup {
  SpatialMesh mesh;
  AngularGrid grid;
  ScatteringMatrix kmat;
  OpticalModel model;
  DetectorGeometry geom;
  TimeGrid time;
  CutoffProfile cutoff;
  CoefficientPair initial;

  explicit InversionSetup(const ExperimentConfig& c)
      : mesh(c.inv_N),
        grid(build_angular_grid(c.n_angles)),
        kmat(assemble_scattering_matrix(grid, {c.g, c.kernel_form})),
        geom(make_detector_geometry(c)),
        time(make_time_grid(c)),
        cutoff(build_cutoff(geom, mesh, c.ramp)) {
    model.mesh = &mesh;
    model.grid = &grid;
    model.kmat = &kmat;
    model.illuminations = {make_bottom_illumination(mesh, grid)};
    initial.mu = Eigen::VectorXd::Constant(mesh.n_vertices(), 0.01 * c.mu_max);
    initial.sigma = Eigen::VectorXd::Constant(mesh.n_vertices(), c.sigma);
    initial.mu_max = c.mu_max;
    initial.sigma_max = std::max(initial.sigma_max, c.sigma);
  }
  InversionSetup(const InversionSetup&) = delete;
  InversionSetup& operator=(const InversionSetup&) = delete;
};

std::vector<PressureData> load_data(const fs::path& dir, const ExperimentConfig& c, Manifest& manifest) {
  const json m = read_manifest(dir);
  verify_outputs(dir, m);
  std::vector<PressureData> data;
  for (int i = 0;; ++i) {
    const fs::path p = dir / ("pressure_" + std::to_string(i) + ".bin");
    if (!fs::exists(p)) break;
    manifest.input(p);
    data.push_back(read_pressure(p));
    const auto& d = data.back();
    if (d.geometry.n_detectors() != c.n_detectors || d.time.n_times != c.n_times ||
        std::abs(d.time.t_max - c.t_max) > 1e-9 * c.t_max || d.geometry.radius != c.detector_radius)
      throw DataError(p.string() + " does not match the detector/time sampling of the config");
  }
  if (data.empty()) throw DataError("no pressure_<i>.bin files in " + dir.string());
  return data;
}

void write_trace(const fs::path& p, const IterationTrace& trace) {
  std::ofstream os(p);
  write_trace_csv(os, trace);
  if (!os) throw DataError("cannot write " + p.string());
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in list");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

int cmd_simulate(const fs::path& config_path, const fs::path& out_dir, std::ostream& out) {
  Stopwatch clock;
  const ExperimentConfig c = load_config(config_path);
  Manifest manifest("simulate", &c);
  manifest.input(config_path);
  const fs::path dir = prepare_output_dir(out_dir);
  for (const auto& w : c.warnings()) {
    manifest.warn(w);
    out << "warning: " << w << '\n';
  }
  const PhantomSpec spec = [&] {
    PhantomSpec s = PhantomSpec::standard();
    s.sigma = c.sigma;
    s.g = c.g;
    s.mu_max = c.mu_max;
    return s;
  }();
  manifest.timing("setup", clock.lap());
  const SimulationResult sim = simulate_data(spec, c);
  manifest.timing("simulation", clock.lap());

  const SpatialMesh fine(c.sim_N), coarse(c.inv_N);
  std::vector<fs::path> files;
  for (std::size_t i = 0; i < sim.data.size(); ++i) {
    const auto p = dir / ("pressure_" + std::to_string(i) + ".bin");
    write_pressure(p, add_noise(sim.data[i], c.noise_level, c.noise_seed + i));
    files.push_back(p);
    files.push_back(dir / ("heating_fine_" + std::to_string(i) + ".fld"));
    write_field(files.back(), sim.heating_fine[i], fine);
    files.push_back(dir / ("heating_coarse_" + std::to_string(i) + ".fld"));
    write_field(files.back(), sim.heating_coarse[i], coarse);
  }
  files.push_back(dir / "truth_mu_fine.fld");
  write_field(files.back(), sim.truth_fine.mu, fine);
  files.push_back(dir / "truth_mu_coarse.fld");
  write_field(files.back(), sim.truth_coarse.mu, coarse);
  for (const auto& f : files) manifest.output(f);
  manifest["noise"] = {{"level", c.noise_level}, {"seed", c.noise_seed}, {"generator", kNoiseGenerator}};
  manifest.timing("write", clock.lap());
  manifest.write(dir);
  out << "simulate: wrote " << files.size() << " files to " << dir.string() << '\n';
  return kSuccess;
}

int cmd_reconstruct(const fs::path& config_path, const fs::path& data_dir, const std::string& method,
                    const fs::path& out_dir, const std::string& sweep, std::ostream& out) {
  if (method != "single" && method != "two") throw ConfigError("unknown method '" + method + "' (single|two)");
  Stopwatch clock;
  const ExperimentConfig c = load_config(config_path);
  Manifest manifest("reconstruct --method=" + method, &c);
  manifest.input(config_path);
  for (const auto& w : c.warnings()) manifest.warn(w);
  const std::vector<PressureData> data = load_data(data_dir, c, manifest);
  const fs::path dir = prepare_output_dir(out_dir);

  InversionSetup setup(c);
  manifest.timing("setup", clock.lap());

  std::unique_ptr<WaveOperator> wave;
  std::vector<Eigen::VectorXd> heating;
  if (method == "single") {
    wave = std::make_unique<WaveOperator>(setup.mesh, setup.geom, setup.time, setup.cutoff);
    manifest.timing("wave_operator", clock.lap());
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      heating.push_back(backprojection_inverse(data[i], setup.mesh, setup.cutoff));
      const auto p = dir / ("heating_fbp_" + std::to_string(i) + ".fld");
      write_field(p, heating.back(), setup.mesh);
      manifest.output(p);
    }
    manifest.timing("backprojection", clock.lap());
  }
  auto solve = [&](const SolverConfig& sc) {
    return method == "single" ? run_single_stage(setup.model, *wave, data, sc, setup.initial)
                              : run_two_stage_from_heating(setup.model, heating, sc, setup.initial);
  };
  const SolverConfig base = method == "single" ? c.solver : c.solver_for_two_stage();

  if (!sweep.empty()) {
    const fs::path truth_path = data_dir / "truth_mu_coarse.fld";
    manifest.input(truth_path);
    const Eigen::VectorXd truth = read_field(truth_path, setup.mesh);
    const auto p = dir / "lambda_sweep.csv";
    std::ofstream os(p);
    os << "lambda,relative_error\n";
    os.precision(17);
    double best = -1.0, best_err = 0.0;
    for (double lambda : parse_list(sweep)) {
      SolverConfig sc = base;
      sc.lambda = lambda;
      const double err = relative_error(solve(sc).coeffs.mu, truth, setup.mesh);
      os << lambda << ',' << err << '\n';
      out << "lambda " << lambda << "  relative error " << err << '\n';
      if (best < 0.0 || err < best_err) best = lambda, best_err = err;
    }
    os.close();
    manifest.output(p);
    manifest["best_lambda"] = best;
    out << "best lambda " << best << '\n';
    manifest.timing("sweep", clock.lap());
    manifest.write(dir);
    return kSuccess;
  }

  const ReconstructionResult r = solve(base);
  manifest.timing("optimization", clock.lap());
  const auto field_path = dir / "recon_mu.fld";
  write_field(field_path, r.coeffs.mu, setup.mesh);
  manifest.output(field_path);
  if (base.reconstruct_sigma) {
    const auto p = dir / "recon_sigma.fld";
    write_field(p, r.coeffs.sigma, setup.mesh);
    manifest.output(p);
  }
  const auto trace_path = dir / "trace.csv";
  write_trace(trace_path, r.trace);
  manifest.output(trace_path);
  manifest["iterations"] = static_cast<int>(r.trace.records.size()) - 1;
  manifest["stop_reason"] = r.trace.stop_reason;
  manifest["lambda"] = base.lambda;
  manifest["step"] = r.trace.records.back().step;
  manifest.write(dir);
  out << "reconstruct (" << method << "): " << r.trace.records.size() - 1 << " iterations, objective "
      << r.trace.records.back().objective << ", stop: " << r.trace.stop_reason << '\n';
  return kSuccess;
}

SpatialMesh mesh_for(const FieldFile& f, const fs::path& p) {
  const double side = std::sqrt(static_cast<double>(f.values.size()));
  const int N = static_cast<int>(std::lround(side)) - 1;
  if (N < 1 || (N + 1) * (N + 1) != f.values.size()) throw DataError(p.string() + " is not a square-mesh field");
  SpatialMesh mesh(N);
  if (mesh.hash() != f.mesh_hash) throw DataError(p.string() + " has an unknown mesh hash");
  return mesh;
}

int cmd_compare(const fs::path& a, const fs::path& b, const fs::path& truth_path, const fs::path& csv,
                std::ostream& out) {
  const FieldFile ta = read_field_raw(truth_path);
  const SpatialMesh mesh = mesh_for(ta, truth_path);
  const Eigen::VectorXd ra = read_field(a, mesh), rb = read_field(b, mesh);
  const double ea = relative_error(ra, ta.values, mesh), eb = relative_error(rb, ta.values, mesh);
  out << std::left << std::setw(12) << "field" << "relative_L2_error\n";
  out << std::setw(12) << "a" << std::setprecision(6) << ea << '\n';
  out << std::setw(12) << "b" << eb << '\n';
  if (!csv.empty()) {
    std::ofstream os(csv);
    os << "section,coordinate,truth,a,b\n";
    os.precision(17);
    const int N = mesh.resolution(), mid = N / 2;
    for (int i = 0; i <= N; ++i) {
      const int v = mesh.vertex_index(i, mid);
      os << "horizontal," << mesh.vertices()[v].x() << ',' << ta.values[v] << ',' << ra[v] << ',' << rb[v] << '\n';
    }
    for (int j = 0; j <= N; ++j) {
      const int v = mesh.vertex_index(mid, j);
      os << "vertical," << mesh.vertices()[v].y() << ',' << ta.values[v] << ',' << ra[v] << ',' << rb[v] << '\n';
    }
    if (!os) throw DataError("cannot write " + csv.string());
  }
  return kSuccess;
}

int cmd_mesh_export(int N, const fs::path& path, std::ostream& out) {
  const SpatialMesh mesh(N);
  if (path.empty()) {
    export_mesh(mesh, out);
  } else {
    std::ofstream os(path);
    export_mesh(mesh, os);
    if (!os) throw DataError("cannot write " + path.string());
  }
  return kSuccess;
}

bool report(std::ostream& out, const std::string& name, double value, double tolerance) {
  const bool pass = std::isfinite(value) && value <= tolerance;
  out << (pass ? "PASS " : "FAIL ") << name << "  value=" << std::scientific << std::setprecision(3) << value
      << " tol=" << tolerance << std::defaultfloat << '\n';
  return pass;
}

int cmd_selftest(std::ostream& out) {
  bool ok = true;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto random_vector = [&](Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (auto& x : v) x = uni(rng);
    return v;
  };

  const SpatialMesh mesh(16);
  const AngularGrid grid = build_angular_grid(8);
  const ScatteringMatrix kmat = assemble_scattering_matrix(grid, {0.6});
  const int nv = mesh.n_vertices();

  {
    const auto& w = grid.weights;
    double worst = 0.0;
    for (int j = 0; j < grid.n_angles; ++j) {
      double s = 0.0;
      for (int k = 0; k < grid.n_angles; ++k) s += kmat.entries(j, k) * w[k];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    ok &= report(out, "scattering row sums", worst, 1e-12);
  }

  CoefficientPair coeffs;
  coeffs.mu = 0.1 + 0.05 * random_vector(nv).array();
  coeffs.sigma = 2.5 + 0.5 * random_vector(nv).array();
  {
    const TransportSystem sys(mesh, grid, coeffs, kmat);
    const Eigen::VectorXd u = random_vector(sys.size()), w = random_vector(sys.size());
    const double a = sys.apply(u).dot(w), b = u.dot(sys.apply_transpose(w));
    ok &= report(out, "transport adjoint pairing", std::abs(a - b) / std::abs(a), 1e-12);
  }

  const DetectorGeometry geom = DetectorGeometry::half_circle(120);
  const TimeGrid time{3.5, 300};
  const CutoffProfile cutoff = build_cutoff(geom, mesh, 0.08);
  const WaveOperator wave(mesh, geom, time, cutoff);
  {
    const Eigen::VectorXd h = random_vector(nv);
    Eigen::MatrixXd v(geom.n_detectors(), time.n_times);
    for (auto& x : v.reshaped()) x = uni(rng);
    const double a = (wave.apply(h).array() * v.array()).sum(), b = h.dot(wave.apply_transpose(v));
    ok &= report(out, "wave transpose pairing", std::abs(a - b) / std::abs(a), 1e-12);
  }

  {
    OpticalModel model{&mesh, &grid, &kmat, {make_bottom_illumination(mesh, grid)}, {}};
    CoefficientPair truth = coeffs;
    truth.mu = 0.1 + 0.08 * random_vector(nv).array();
    const HeatingMisfit none(mesh, {Eigen::VectorXd::Zero(nv)});
    const Eigen::VectorXd h_true = Objective(model, none, 0.0).evaluate(truth).heating[0];
    const AcousticFidelity fidelity(wave, {wave.make_data(wave.apply(h_true))});
    const Objective objective(model, fidelity, 0.0);
    const ObjectiveState state = objective.evaluate(coeffs);
    const GradientPair g = objective.gradient(state);
    const Eigen::VectorXd mass = mesh.lumped_mass();
    const double s = 1e-5;
    double worst = 0.0;
    for (int d = 0; d < 10; ++d) {
      const Eigen::VectorXd hm = random_vector(nv), hs = random_vector(nv);
      CoefficientPair plus = coeffs, minus = coeffs;
      plus.mu += s * hm, minus.mu -= s * hm;
      plus.sigma += s * hs, minus.sigma -= s * hs;
      const double fd = (objective.evaluate(plus).fidelity - objective.evaluate(minus).fidelity) / (2.0 * s);
      const double an = (mass.array() * (g.grad_mu.array() * hm.array() + g.grad_sigma.array() * hs.array())).sum();
      worst = std::max(worst, std::abs(fd - an) / std::abs(fd));
    }
    ok &= report(out, "gradient vs central differences (10 directions)", worst, 1e-4);
  }
  out << (ok ? "selftest: all checks passed\n" : "selftest: FAILED\n");
  return ok ? kSuccess : kNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quantitative photoacoustic tomography: simulation and reconstruction"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Upper bound on worker threads (this build computes serially)")
      ->check(CLI::PositiveNumber);

  std::string config, data_dir, out_dir = ".", method = "single", sweep;
  auto* simulate = app.add_subcommand("simulate", "Simulate pressure data and ground truth");
  simulate->add_option("config", config, "Config file")->required();
  simulate->add_option("-o,--out", out_dir, "Output directory");

  auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct absorption from pressure data");
  reconstruct->add_option("config", config, "Config file")->required();
  reconstruct->add_option("data", data_dir, "Directory written by simulate")->required();
  reconstruct->add_option("-m,--method", method, "single or two");
  reconstruct->add_option("-o,--out", out_dir, "Output directory");
  reconstruct->add_option("--lambda-sweep", sweep,
                          "Comma-separated lambdas; reports the error against the stored truth for each");

  std::string field_a, field_b, truth, csv;
  auto* compare = app.add_subcommand("compare", "Relative L2 errors and cross-sections of two reconstructions");
  compare->add_option("a", field_a, "First reconstruction")->required();
  compare->add_option("b", field_b, "Second reconstruction")->required();
  compare->add_option("truth", truth, "Reference field")->required();
  compare->add_option("--csv", csv, "Cross-section CSV output");

  int mesh_N = 0;
  std::string mesh_out;
  auto* mesh = app.add_subcommand("mesh", "Mesh utilities");
  mesh->require_subcommand(1);
  auto* mesh_export = mesh->add_subcommand("export", "Write the triangulation as text");
  mesh_export->add_option("N", mesh_N, "Resolution")->required()->check(CLI::PositiveNumber);
  mesh_export->add_option("-o,--out", mesh_out, "Output file (stdout if omitted)");

  auto* selftest = app.add_subcommand("selftest", "Adjoint and gradient consistency checks");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kSuccess : kUsage;
  }

  try {
    if (*simulate) return cmd_simulate(config, out_dir, out);
    if (*reconstruct) return cmd_reconstruct(config, data_dir, method, out_dir, sweep, out);
    if (*compare) return cmd_compare(field_a, field_b, truth, csv, out);
    if (*mesh_export) return cmd_mesh_export(mesh_N, mesh_out, out);
    if (*selftest) return cmd_selftest(out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    if (*reconstruct) err << reconstruct->help();
    return kUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataIntegrity;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const DomainError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  }
  return kUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace qpat::cli
