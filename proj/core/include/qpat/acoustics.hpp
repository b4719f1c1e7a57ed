#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "qpat/geometry.hpp"

namespace qpat {

/// Detector points y_j = radius (cos a_j, sin a_j).
///
/// Factories place the points at the midpoints of n equal subintervals of an open arc,
/// so every point lies strictly inside it; `spacing` is the angular subinterval length.
struct DetectorGeometry {
  double radius = 1.5;
  double spacing = 0.0;
  std::vector<double> angles;

  static DetectorGeometry arc(int n, double begin, double end, double radius = 1.5);
  static DetectorGeometry half_circle(int n, double radius = 1.5);
  static DetectorGeometry full_circle(int n, double radius = 1.5);

  int n_detectors() const { return static_cast<int>(angles.size()); }
  void validate() const;
  Vec2 point(int j) const;
  /// Arc-length quadrature weight of every detector.
  double arc_weight() const { return radius * spacing; }
};

/// Uniform samples t_m = m dt, m = 0..n_times-1, with dt = t_max / (n_times - 1).
struct TimeGrid {
  double t_max = 3.5;
  int n_times = 600;

  double dt() const { return t_max / (n_times - 1); }
  double t(int m) const { return m * dt(); }
  /// Trapezoidal weight of sample m.
  double weight(int m) const { return (m == 0 || m == n_times - 1) ? 0.5 * dt() : dt(); }
  void validate() const;
};

/// Smooth temporal window: 0 before t_lo - ramp, quintic smoothstep up to 1 at t_lo,
/// 1 on [t_lo, t_hi], back down to 0 at t_hi + ramp. C^2.
struct CutoffProfile {
  double t_lo = 0.0;
  double t_hi = 0.0;
  double ramp = 0.0;

  double operator()(double t) const;
};

/// dist(Omega, Lambda) for Omega = [-1,1]^2 and the detector arc.
double detector_distance(const DetectorGeometry& geom);

CutoffProfile build_cutoff(const DetectorGeometry& geom, const SpatialMesh& mesh, double ramp);

/// Pressure samples on the detector arc: values(j, m) = (W h)(y_j, t_m).
struct PressureData {
  DetectorGeometry geometry;
  TimeGrid time;
  Eigen::MatrixXd values;  // n_detectors x n_times

  /// Quadrature inner product on Lambda x (0, t_max).
  double inner(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const;
  /// Detector-arc weight times trapezoidal time weight, same shape as values.
  Eigen::MatrixXd quadrature_weights() const;
};

/// Exact circular means of a P1 field.
///
/// For a circle of given centre and radius, returns sparse weights c_v such that
/// sum_v c_v h_v = (1/2pi) int_{S^1} h(centre + r omega) d omega for the zero-extended P1
/// interpolant of h. The circle is cut at every grid line and diagonal it crosses, and
/// the linear barycentric functions are integrated in closed form on each arc.
class CircleMeans {
 public:
  explicit CircleMeans(const SpatialMesh& mesh) : mesh_(&mesh) {}

  /// Appends (vertex, weight) pairs, merged and sorted by vertex.
  void weights(const Vec2& centre, double radius, std::vector<std::pair<int, double>>& out) const;

  double mean(const Eigen::VectorXd& h, const Vec2& centre, double radius) const;

 private:
  const SpatialMesh* mesh_;
  mutable std::vector<double> crossings_;
};

/// (M h)(y_j, r) for every detector and radius. Rows are detectors.
Eigen::MatrixXd spherical_means(const SpatialMesh& mesh, const Eigen::VectorXd& h,
                                const DetectorGeometry& geom, const Eigen::VectorXd& radii);

/// Lower-triangular weights D with (d/dt int_0^t r m(r) / sqrt(t^2 - r^2) dr)(t_m) = sum_q D(m,q) m_q
/// for m piecewise linear on the radius grid r_q = t_q. Uses
/// d/dt G(t) = (1/t) int_0^t r (r m)'(r) / sqrt(t^2 - r^2) dr, integrated exactly per segment.
Eigen::MatrixXd abel_derivative_weights(const TimeGrid& time);

/// W h evaluated directly from the explicit two-dimensional solution formula.
PressureData wave_forward(const SpatialMesh& mesh, const Eigen::VectorXd& h, const DetectorGeometry& geom,
                          const TimeGrid& time, const CutoffProfile& cutoff);

/// Adjoint of W from its explicit integral representation, evaluated at mesh vertices.
Eigen::VectorXd wave_adjoint_formula(const PressureData& v, const SpatialMesh& mesh,
                                     const CutoffProfile& cutoff);

/// Universal backprojection estimate of the initial pressure from data on a circular arc.
///
/// The circular means M(y_j, r) are recovered from w v by exact Abel inversion
/// (zero beyond t_hi), then
/// h(x) = c / (2 pi R) sum_j |dS_j| int_0^T (d/dr r d/dr M)(y_j, r) log|r^2 - |x - y_j|^2| dr,
/// with the constant c fixed by full-view calibration (kBackprojectionScale).
Eigen::VectorXd backprojection_inverse(const PressureData& v, const SpatialMesh& mesh,
                                       const CutoffProfile& cutoff);

/// Circular means on the radius grid r_q = t_q from one pressure trace p (already windowed):
/// inverts p(t) = d/dt int_0^t r m(r) / sqrt(t^2 - r^2) dr. Entries with r > r_max are set to 0.
Eigen::VectorXd abel_invert(const Eigen::VectorXd& p, const TimeGrid& time, double r_max);

/// Calibrated normalization of backprojection_inverse.
extern const double kBackprojectionScale;

/// Centered first derivative in time, second-order one-sided stencils at both ends.
Eigen::VectorXd time_derivative(const Eigen::VectorXd& f, double dt);

/// Linear wave operator h -> W h with an exact transpose.
///
/// Circular-mean weights are frozen into a sparse matrix at construction (one row per
/// detector and radius), so apply() reproduces wave_forward to rounding error and
/// apply_transpose() is its Euclidean adjoint.
class WaveOperator {
 public:
  WaveOperator(const SpatialMesh& mesh, DetectorGeometry geom, TimeGrid time, CutoffProfile cutoff,
               std::size_t max_nonzeros = 200'000'000);

  Eigen::Index rows() const { return static_cast<Eigen::Index>(geom_.n_detectors()) * time_.n_times; }
  Eigen::Index cols() const { return n_vertices_; }

  Eigen::MatrixXd apply(const Eigen::VectorXd& h) const;
  Eigen::VectorXd apply_transpose(const Eigen::MatrixXd& v) const;

  PressureData make_data(Eigen::MatrixXd values) const { return {geom_, time_, std::move(values)}; }
  const DetectorGeometry& geometry() const { return geom_; }
  const TimeGrid& time() const { return time_; }
  const CutoffProfile& cutoff() const { return cutoff_; }
  std::size_t nonzeros() const { return static_cast<std::size_t>(means_.nonZeros()); }

 private:
  int n_vertices_;
  DetectorGeometry geom_;
  TimeGrid time_;
  CutoffProfile cutoff_;
  Eigen::MatrixXd abel_;
  Eigen::VectorXd window_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> means_;
};

/// Binary pressure file: "QPATPRES1", u64 n_detectors, u64 n_times, u64 reserved = 0,
/// f64 radius, f64 dt, n_detectors f64 angles, row-major f64 samples. Little endian.
void write_pressure(const std::filesystem::path& path, const PressureData& data);
PressureData read_pressure(const std::filesystem::path& path);

}  // namespace qpat
