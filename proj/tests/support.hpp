#pragma once

#include <cmath>
#include <random>

#include <Eigen/Core>

#include "qpat/geometry.hpp"

namespace qpat::test {

inline Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Nodal values of (1 - |x - c|^2 / r^2)^3 inside the disk, zero outside.
inline Eigen::VectorXd bump(const SpatialMesh& mesh, const Vec2& c, double r) {
  Eigen::VectorXd h(mesh.n_vertices());
  for (int v = 0; v < mesh.n_vertices(); ++v) {
    const double s = (mesh.vertices()[v] - c).squaredNorm() / (r * r);
    h[v] = s < 1.0 ? std::pow(1.0 - s, 3) : 0.0;
  }
  return h;
}

inline double lumped_l2(const SpatialMesh& mesh, const Eigen::VectorXd& v) {
  return std::sqrt((mesh.lumped_mass().array() * v.array().square()).sum());
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

}  // namespace qpat::test
