#include "qpat/experiment.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "qpat/error.hpp"
#include "qpat/heating.hpp"

namespace qpat {

bool Inclusion::contains(const Vec2& p) const {
  const Vec2 d = p - center;
  if (shape == Shape::disk) return d.norm() <= size.x();
  return std::abs(d.x()) <= size.x() && std::abs(d.y()) <= size.y();
}

void PhantomSpec::validate() const {
  auto check_mu = [&](double mu) {
    if (!(mu >= 0.0 && mu <= mu_max)) throw InvalidArgument("phantom absorption outside [0, mu_max]");
  };
  check_mu(background_mu);
  if (!(sigma >= 0.0)) throw InvalidArgument("phantom scattering must be nonnegative");
  if (!(g >= 0.0 && g < 1.0)) throw InvalidArgument("anisotropy must lie in [0, 1)");
  for (const auto& inc : inclusions) {
    check_mu(inc.mu);
    const Vec2 half = inc.shape == Inclusion::Shape::disk ? Vec2(inc.size.x(), inc.size.x()) : inc.size;
    if (!(half.x() > 0.0 && half.y() > 0.0)) throw InvalidArgument("inclusion size must be positive");
    if (std::abs(inc.center.x()) + half.x() > 1.0 || std::abs(inc.center.y()) + half.y() > 1.0)
      throw InvalidArgument("inclusion extends outside [-1,1]^2");
  }
}

PhantomSpec PhantomSpec::standard() {
  PhantomSpec s;
  s.inclusions = {
      {Inclusion::Shape::disk, Vec2(-0.4, -0.3), Vec2(0.25, 0.0), 0.3},
      {Inclusion::Shape::disk, Vec2(0.4, 0.35), Vec2(0.2, 0.0), 0.2},
      {Inclusion::Shape::rectangle, Vec2(0.3, -0.45), Vec2(0.2, 0.12), 0.25},
  };
  return s;
}

CoefficientPair make_phantom(const PhantomSpec& spec, const SpatialMesh& mesh) {
  spec.validate();
  CoefficientPair c;
  c.mu = Eigen::VectorXd::Constant(mesh.n_vertices(), spec.background_mu);
  c.sigma = Eigen::VectorXd::Constant(mesh.n_vertices(), spec.sigma);
  c.mu_max = spec.mu_max;
  c.sigma_max = std::max(c.sigma_max, spec.sigma);
  for (int v = 0; v < mesh.n_vertices(); ++v)
    for (const auto& inc : spec.inclusions)
      if (inc.contains(mesh.vertices()[v])) c.mu[v] = inc.mu;
  return c;
}

int nearest_direction(const AngularGrid& grid, const Vec2& target) {
  int best = 0;
  for (int k = 1; k < grid.n_angles; ++k)
    if (grid.directions[k].dot(target) > grid.directions[best].dot(target) + 1e-14) best = k;
  return best;
}

IlluminationPattern make_bottom_illumination(const SpatialMesh& mesh, const AngularGrid& grid) {
  const int k = nearest_direction(grid, Vec2(0.0, 1.0));
  if (grid.directions[k].y() < std::cos(2.0 * std::numbers::pi / grid.n_angles))
    throw InvalidArgument("no grid direction within one angular cell of (0, 1)");
  IlluminationPattern p;
  p.f = Eigen::MatrixXd::Zero(mesh.n_vertices(), grid.n_angles);
  for (int i = 0; i <= mesh.resolution(); ++i) p.f(mesh.vertex_index(i, 0), k) = 1.0;
  return p;
}

IlluminationPattern make_uniform_inflow(const SpatialMesh& mesh, const AngularGrid& grid, double value) {
  IlluminationPattern p;
  p.f = Eigen::MatrixXd::Zero(mesh.n_vertices(), grid.n_angles);
  for (const auto& dof : classify_boundary(mesh, grid).inflow) p.f(dof.vertex, dof.angle) = value;
  return p;
}

double discrete_inflow_flux(const SpatialMesh& mesh, const AngularGrid& grid, const Eigen::MatrixXd& f) {
  double flux = 0.0;
  for (const auto& e : mesh.boundary_edges())
    for (int k = 0; k < grid.n_angles; ++k) {
      const double dot = e.normal.dot(grid.directions[k]);
      if (dot >= -kGrazingTolerance) continue;
      flux += grid.weights[k] * (-dot) * e.length * 0.5 * (f(e.vertices[0], k) + f(e.vertices[1], k));
    }
  return flux;
}

void ExperimentConfig::validate() const {
  if (sim_N < 1 || inv_N < 1) throw ConfigError("mesh resolutions must be positive");
  if (n_angles < 2) throw ConfigError("angles.n must be at least 2");
  if (!(g >= 0.0 && g < 1.0)) throw ConfigError("kernel.g must lie in [0, 1)");
  if (!(sigma >= 0.0)) throw ConfigError("coeff.sigma must be nonnegative");
  if (!(mu_max > 0.0)) throw ConfigError("coeff.mu_max must be positive");
  if (!(noise_level >= 0.0)) throw ConfigError("noise.level must be nonnegative");
  if (n_detectors < 1) throw ConfigError("detector.n must be positive");
  if (n_times < 3) throw ConfigError("time.n must be at least 3");
  if (!(t_max > 0.0)) throw ConfigError("time.max must be positive");
  if (!(lambda_two > 0.0)) throw ConfigError("solver.lambda_two must be positive");
  try {
    solver.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> ExperimentConfig::warnings() const {
  std::vector<std::string> w;
  if (sim_N == inv_N)
    w.push_back("inverse crime: simulation and inversion meshes coincide (mesh.sim_N = mesh.inv_N = " +
                std::to_string(sim_N) + ")");
  return w;
}

SolverConfig ExperimentConfig::solver_for_two_stage() const {
  SolverConfig s = solver;
  s.lambda = lambda_two;
  return s;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& text) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw std::invalid_argument("bad number");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw std::invalid_argument("bad boolean");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"mesh.sim_N", [](auto& c, const auto& v) { c.sim_N = parse_number<int>(v); }},
      {"mesh.inv_N", [](auto& c, const auto& v) { c.inv_N = parse_number<int>(v); }},
      {"angles.n", [](auto& c, const auto& v) { c.n_angles = parse_number<int>(v); }},
      {"kernel.g", [](auto& c, const auto& v) { c.g = parse_number<double>(v); }},
      {"kernel.form", [](auto& c, const auto& v) { c.kernel_form = kernel_form_from_string(v); }},
      {"coeff.sigma", [](auto& c, const auto& v) { c.sigma = parse_number<double>(v); }},
      {"coeff.mu_max", [](auto& c, const auto& v) { c.mu_max = parse_number<double>(v); }},
      {"noise.level", [](auto& c, const auto& v) { c.noise_level = parse_number<double>(v); }},
      {"noise.seed", [](auto& c, const auto& v) { c.noise_seed = parse_number<std::uint64_t>(v); }},
      {"solver.lambda", [](auto& c, const auto& v) { c.solver.lambda = parse_number<double>(v); }},
      {"solver.lambda_two", [](auto& c, const auto& v) { c.lambda_two = parse_number<double>(v); }},
      {"solver.iters", [](auto& c, const auto& v) { c.solver.max_iters = parse_number<int>(v); }},
      {"solver.step", [](auto& c, const auto& v) { c.solver.step = parse_number<double>(v); }},
      {"solver.backtracking", [](auto& c, const auto& v) { c.solver.backtracking = parse_bool(v); }},
      {"solver.reconstruct_sigma", [](auto& c, const auto& v) { c.solver.reconstruct_sigma = parse_bool(v); }},
      {"detector.n", [](auto& c, const auto& v) { c.n_detectors = parse_number<int>(v); }},
      {"detector.arc",
       [](auto& c, const auto& v) {
         if (v != "half" && v != "full") throw std::invalid_argument("expected half or full");
         c.full_view = v == "full";
       }},
      {"detector.radius", [](auto& c, const auto& v) { c.detector_radius = parse_number<double>(v); }},
      {"detector.ramp", [](auto& c, const auto& v) { c.ramp = parse_number<double>(v); }},
      {"time.n", [](auto& c, const auto& v) { c.n_times = parse_number<int>(v); }},
      {"time.max", [](auto& c, const auto& v) { c.t_max = parse_number<double>(v); }},
  };
  return table;
}

}  // namespace

std::map<std::string, std::string> ExperimentConfig::entries() const {
  return {
      {"mesh.sim_N", std::to_string(sim_N)},
      {"mesh.inv_N", std::to_string(inv_N)},
      {"angles.n", std::to_string(n_angles)},
      {"kernel.g", format_double(g)},
      {"kernel.form", to_string(kernel_form)},
      {"coeff.sigma", format_double(sigma)},
      {"coeff.mu_max", format_double(mu_max)},
      {"noise.level", format_double(noise_level)},
      {"noise.seed", std::to_string(noise_seed)},
      {"solver.lambda", format_double(solver.lambda)},
      {"solver.lambda_two", format_double(lambda_two)},
      {"solver.iters", std::to_string(solver.max_iters)},
      {"solver.step", format_double(solver.step)},
      {"solver.backtracking", solver.backtracking ? "true" : "false"},
      {"solver.reconstruct_sigma", solver.reconstruct_sigma ? "true" : "false"},
      {"detector.n", std::to_string(n_detectors)},
      {"detector.arc", full_view ? "full" : "half"},
      {"detector.radius", format_double(detector_radius)},
      {"detector.ramp", format_double(ramp)},
      {"time.n", std::to_string(n_times)},
      {"time.max", format_double(t_max)},
  };
}

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys = {"mesh.sim_N", "mesh.inv_N", "angles.n"};
  return keys;
}

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto where = source + ":" + std::to_string(number) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const std::exception&) {
      throw ConfigError(where + "invalid value '" + value + "' for " + key);
    }
  }
  for (const auto& key : required_config_keys())
    if (!seen.count(key)) throw ConfigError(source + ": missing required key '" + key + "'");
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

DetectorGeometry make_detector_geometry(const ExperimentConfig& c) {
  return c.full_view ? DetectorGeometry::full_circle(c.n_detectors, c.detector_radius)
                     : DetectorGeometry::half_circle(c.n_detectors, c.detector_radius);
}

TimeGrid make_time_grid(const ExperimentConfig& c) { return {c.t_max, c.n_times}; }

Eigen::VectorXd transfer_field(const SpatialMesh& from, const Eigen::VectorXd& values, const SpatialMesh& to) {
  if (values.size() != from.n_vertices()) throw InvalidArgument("field does not match source mesh");
  Eigen::VectorXd out(to.n_vertices());
  for (int v = 0; v < to.n_vertices(); ++v) out[v] = from.interpolate(values, to.vertices()[v]);
  return out;
}

SimulationResult simulate_data(const PhantomSpec& spec, const ExperimentConfig& config) {
  config.validate();
  SimulationResult r;
  r.warnings = config.warnings();
  const SpatialMesh fine(config.sim_N), coarse(config.inv_N);
  const AngularGrid grid = build_angular_grid(config.n_angles);
  const ScatteringMatrix kmat = assemble_scattering_matrix(grid, {spec.g, config.kernel_form});

  r.truth_fine = make_phantom(spec, fine);
  r.truth_coarse = r.truth_fine;
  r.truth_coarse.mu = transfer_field(fine, r.truth_fine.mu, coarse);
  r.truth_coarse.sigma = transfer_field(fine, r.truth_fine.sigma, coarse);

  const TransportSystem system(fine, grid, r.truth_fine, kmat);
  const std::vector<IlluminationPattern> illuminations{make_bottom_illumination(fine, grid)};
  const DetectorGeometry geom = make_detector_geometry(config);
  const TimeGrid time = make_time_grid(config);
  const CutoffProfile cutoff = build_cutoff(geom, fine, config.ramp);
  for (const auto& illum : illuminations) {
    const RadianceField phi = solve_forward(system, illum);
    const HeatingField h = heating(fine, r.truth_fine, phi, grid);
    r.heating_fine.push_back(h.values);
    r.heating_coarse.push_back(transfer_field(fine, h.values, coarse));
    r.data.push_back(wave_forward(fine, h.values, geom, time, cutoff));
  }
  return r;
}

PressureData add_noise(const PressureData& v, double level, std::uint64_t seed) {
  if (!(level >= 0.0)) throw InvalidArgument("noise level must be nonnegative");
  PressureData out = v;
  if (level == 0.0) return out;
  const double stddev = level * v.values.cwiseAbs().maxCoeff();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index j = 0; j < out.values.rows(); ++j)
    for (Eigen::Index m = 0; m < out.values.cols(); ++m) out.values(j, m) += normal(rng);
  return out;
}

double relative_error(const Eigen::VectorXd& recon, const Eigen::VectorXd& truth, const SpatialMesh& mesh) {
  if (recon.size() != mesh.n_vertices() || truth.size() != mesh.n_vertices())
    throw InvalidArgument("fields do not match mesh");
  const auto mass = assemble_mass_matrix(mesh);
  const double denom = truth.dot(mass * truth);
  if (!(denom > 0.0)) throw DomainError("relative error undefined for a zero reference field");
  const Eigen::VectorXd d = recon - truth;
  return std::sqrt(d.dot(mass * d) / denom);
}

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");
constexpr char kFieldMagic[] = "QPATFLD1";

}  // namespace

void write_field(const std::filesystem::path& path, const Eigen::VectorXd& values, const SpatialMesh& mesh) {
  if (values.size() != mesh.n_vertices()) throw InvalidArgument("field does not match mesh");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kFieldMagic, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(values.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  const std::uint64_t hash = mesh.hash();
  os.write(reinterpret_cast<const char*>(&hash), sizeof hash);
  if (!os) throw DataError("failed writing " + path.string());
}

FieldFile read_field_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kFieldMagic, 8) != 0)
    throw DataError("bad magic in field file " + path.string());
  std::uint64_t n = 0;
  if (!is.read(reinterpret_cast<char*>(&n), sizeof n) || n == 0 || n > (1u << 28))
    throw DataError("bad size in field file " + path.string());
  FieldFile f;
  f.values.resize(static_cast<Eigen::Index>(n));
  if (!is.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(n * sizeof(double))) ||
      !is.read(reinterpret_cast<char*>(&f.mesh_hash), sizeof f.mesh_hash))
    throw DataError("truncated field file " + path.string());
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
  return f;
}

Eigen::VectorXd read_field(const std::filesystem::path& path, const SpatialMesh& mesh) {
  FieldFile f = read_field_raw(path);
  if (f.mesh_hash != mesh.hash() || f.values.size() != mesh.n_vertices())
    throw DataError("field file " + path.string() + " does not belong to the expected mesh");
  return std::move(f.values);
}

}  // namespace qpat
