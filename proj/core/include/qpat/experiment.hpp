#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qpat/acoustics.hpp"
#include "qpat/geometry.hpp"
#include "qpat/inversion.hpp"
#include "qpat/transport.hpp"

namespace qpat {

struct Inclusion {
  enum class Shape { disk, rectangle };
  Shape shape = Shape::disk;
  Vec2 center = Vec2::Zero();
  Vec2 size = Vec2::Zero();  // disk: (radius, unused); rectangle: half-widths
  double mu = 0.0;

  bool contains(const Vec2& p) const;
};

struct PhantomSpec {
  double background_mu = 0.05;
  std::vector<Inclusion> inclusions;  // later entries win on overlap
  double sigma = 3.0;
  double g = 0.6;
  double mu_max = 1.0;

  void validate() const;
  /// Two disks and a rectangle on a weakly absorbing background.
  static PhantomSpec standard();
};

CoefficientPair make_phantom(const PhantomSpec& spec, const SpatialMesh& mesh);

/// Index of the grid direction closest to `target` (first one on ties).
int nearest_direction(const AngularGrid& grid, const Vec2& target);

/// f = 1 on the bottom edge for the direction nearest (0, 1), zero elsewhere; no interior source.
IlluminationPattern make_bottom_illumination(const SpatialMesh& mesh, const AngularGrid& grid);

/// f = value on every inflow (vertex, direction) pair.
IlluminationPattern make_uniform_inflow(const SpatialMesh& mesh, const AngularGrid& grid, double value);

/// sum_k w_k int_{Gamma_-} |theta_k . nu| f ds with the P1 trace of f, edge by edge.
double discrete_inflow_flux(const SpatialMesh& mesh, const AngularGrid& grid, const Eigen::MatrixXd& f);

struct ExperimentConfig {
  int sim_N = 101;
  int inv_N = 61;
  int n_angles = 16;
  double g = 0.6;
  KernelForm kernel_form = KernelForm::conventional;
  double sigma = 3.0;
  double mu_max = 1.0;
  double noise_level = 0.0;
  std::uint64_t noise_seed = 20240917;
  int n_detectors = 120;
  bool full_view = false;
  double detector_radius = 1.5;
  double ramp = 0.08;
  int n_times = 600;
  double t_max = 3.5;
  SolverConfig solver;
  double lambda_two = 1e-6;  // lambda of the two-stage pipeline

  void validate() const;
  /// Inverse-crime guard and similar non-fatal findings.
  std::vector<std::string> warnings() const;
  /// Canonical key/value view (the keys accepted by parse_config).
  std::map<std::string, std::string> entries() const;
  SolverConfig solver_for_two_stage() const;
};

/// Parses `key = value` lines; '#' starts a comment. Throws ConfigError with the line number
/// on malformed lines, unknown keys or bad values, and names any missing required key.
ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Keys that must appear in every config file.
const std::vector<std::string>& required_config_keys();

DetectorGeometry make_detector_geometry(const ExperimentConfig& config);
TimeGrid make_time_grid(const ExperimentConfig& config);

/// P1 interpolation of a nodal field onto the vertices of another mesh.
Eigen::VectorXd transfer_field(const SpatialMesh& from, const Eigen::VectorXd& values, const SpatialMesh& to);

struct SimulationResult {
  std::vector<PressureData> data;  // one per illumination
  CoefficientPair truth_fine;
  CoefficientPair truth_coarse;
  std::vector<Eigen::VectorXd> heating_fine;
  std::vector<Eigen::VectorXd> heating_coarse;
  std::vector<std::string> warnings;
};

/// Phantom on the simulation mesh, transport, heating and wave data; truth also on the inversion mesh.
/// Noise is not added here.
SimulationResult simulate_data(const PhantomSpec& spec, const ExperimentConfig& config);

/// Adds i.i.d. Gaussian noise with standard deviation level * max|v| (mt19937_64, fixed seed).
PressureData add_noise(const PressureData& v, double level, std::uint64_t seed);

inline constexpr const char* kNoiseGenerator = "mt19937_64/normal_distribution";

/// Consistent-mass L2 error ||recon - truth|| / ||truth||.
double relative_error(const Eigen::VectorXd& recon, const Eigen::VectorXd& truth, const SpatialMesh& mesh);

/// Binary field file: "QPATFLD1", u64 n, n f64 values, u64 mesh hash. Little endian.
void write_field(const std::filesystem::path& path, const Eigen::VectorXd& values, const SpatialMesh& mesh);
/// Reads a field and checks that it belongs to `mesh` (DataError otherwise).
Eigen::VectorXd read_field(const std::filesystem::path& path, const SpatialMesh& mesh);

struct FieldFile {
  Eigen::VectorXd values;
  std::uint64_t mesh_hash = 0;
};
FieldFile read_field_raw(const std::filesystem::path& path);

}  // namespace qpat
