#include "qpat/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "qpat/error.hpp"

namespace qpat {

SpatialMesh::SpatialMesh(int N) : N_(N) {
  if (N < 1) throw InvalidArgument("mesh resolution N must be >= 1, got " + std::to_string(N));
  h_ = 2.0 / N;
  const int n1 = N + 1;
  vertices_.reserve(static_cast<std::size_t>(n1) * n1);
  for (int j = 0; j <= N; ++j)
    for (int i = 0; i <= N; ++i) {
      // Snap the last row/column so the square is covered exactly.
      const double x = (i == N) ? 1.0 : -1.0 + i * h_;
      const double y = (j == N) ? 1.0 : -1.0 + j * h_;
      vertices_.emplace_back(x, y);
    }

  triangles_.reserve(2 * static_cast<std::size_t>(N) * N);
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < N; ++i) {
      const int v00 = vertex_index(i, j), v10 = vertex_index(i + 1, j);
      const int v01 = vertex_index(i, j + 1), v11 = vertex_index(i + 1, j + 1);
      triangles_.push_back({v00, v10, v11});
      triangles_.push_back({v00, v11, v01});
    }

  boundary_edges_.reserve(4 * static_cast<std::size_t>(N));
  auto add = [&](int a, int b, Vec2 normal, EdgeSide side) {
    boundary_edges_.push_back({{a, b}, normal, side, (vertices_[b] - vertices_[a]).norm()});
  };
  for (int i = 0; i < N; ++i) add(vertex_index(i, 0), vertex_index(i + 1, 0), {0, -1}, EdgeSide::bottom);
  for (int j = 0; j < N; ++j) add(vertex_index(N, j), vertex_index(N, j + 1), {1, 0}, EdgeSide::right);
  for (int i = N; i > 0; --i) add(vertex_index(i, N), vertex_index(i - 1, N), {0, 1}, EdgeSide::top);
  for (int j = N; j > 0; --j) add(vertex_index(0, j), vertex_index(0, j - 1), {-1, 0}, EdgeSide::left);
}

double SpatialMesh::signed_area(int t) const {
  const auto& tri = triangles_[t];
  const Vec2 a = vertices_[tri[1]] - vertices_[tri[0]];
  const Vec2 b = vertices_[tri[2]] - vertices_[tri[0]];
  return 0.5 * (a.x() * b.y() - a.y() * b.x());
}

std::array<Vec2, 3> SpatialMesh::hat_gradients(int t) const {
  const auto& tri = triangles_[t];
  const double twice_area = 2.0 * signed_area(t);
  std::array<Vec2, 3> g;
  for (int a = 0; a < 3; ++a) {
    const Vec2& p = vertices_[tri[(a + 1) % 3]];
    const Vec2& q = vertices_[tri[(a + 2) % 3]];
    // Rotate the opposite edge by -90 degrees.
    g[a] = Vec2(p.y() - q.y(), q.x() - p.x()) / twice_area;
  }
  return g;
}

std::optional<SpatialMesh::Location> SpatialMesh::locate(const Vec2& p) const {
  if (!(p.x() >= -1.0 && p.x() <= 1.0 && p.y() >= -1.0 && p.y() <= 1.0)) return std::nullopt;
  const double sx = (p.x() + 1.0) / h_, sy = (p.y() + 1.0) / h_;
  const int i = std::clamp(static_cast<int>(std::floor(sx)), 0, N_ - 1);
  const int j = std::clamp(static_cast<int>(std::floor(sy)), 0, N_ - 1);
  const double u = sx - i, v = sy - j;
  const int cell = 2 * (i + N_ * j);
  if (v <= u) return Location{cell, triangles_[cell], {1.0 - u, u - v, v}};
  return Location{cell + 1, triangles_[cell + 1], {1.0 - v, u, v - u}};
}

double SpatialMesh::interpolate(const Eigen::VectorXd& nodal, const Vec2& p) const {
  const auto loc = locate(p);
  if (!loc) return 0.0;
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += loc->barycentric[a] * nodal[loc->vertices[a]];
  return s;
}

Eigen::VectorXd SpatialMesh::lumped_mass() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_vertices());
  for (int t = 0; t < n_triangles(); ++t) {
    const double third = signed_area(t) / 3.0;
    for (int v : triangles_[t]) m[v] += third;
  }
  return m;
}

Eigen::SparseMatrix<double> assemble_mass_matrix(const SpatialMesh& mesh) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * static_cast<std::size_t>(mesh.n_triangles()));
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const double area = mesh.signed_area(t);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trip.emplace_back(tri[a], tri[b], area * (a == b ? 1.0 / 6.0 : 1.0 / 12.0));
  }
  Eigen::SparseMatrix<double> m(mesh.n_vertices(), mesh.n_vertices());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

Eigen::SparseMatrix<double> assemble_stiffness_matrix(const SpatialMesh& mesh) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * static_cast<std::size_t>(mesh.n_triangles()));
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const double area = mesh.signed_area(t);
    const auto grads = mesh.hat_gradients(t);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trip.emplace_back(tri[a], tri[b], area * grads[a].dot(grads[b]));
  }
  Eigen::SparseMatrix<double> k(mesh.n_vertices(), mesh.n_vertices());
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t k = 0; k < size; ++k) {
    h ^= bytes[k];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t SpatialMesh::hash() const {
  std::uint64_t h = fnv1a(&N_, sizeof N_);
  return fnv1a(vertices_.data(), vertices_.size() * sizeof(Vec2), h);
}

SpatialMesh build_uniform_mesh(int N) { return SpatialMesh(N); }

AngularGrid build_angular_grid(int n_angles) {
  if (n_angles < 2)
    throw InvalidArgument("angular grid needs at least 2 directions, got " + std::to_string(n_angles));
  AngularGrid g;
  g.n_angles = n_angles;
  const double step = 2.0 * std::numbers::pi / n_angles;
  for (int k = 0; k < n_angles; ++k) {
    const double phi = -std::numbers::pi + step * k;
    g.angles.push_back(phi);
    g.directions.emplace_back(std::cos(phi), std::sin(phi));
    g.weights.push_back(step);
  }
  return g;
}

BoundaryClassification classify_boundary(const SpatialMesh& mesh, const AngularGrid& grid) {
  BoundaryClassification c;
  const auto& edges = mesh.boundary_edges();
  for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
    const auto& edge = edges[e];
    for (int k = 0; k < grid.n_angles; ++k) {
      const double dot = edge.normal.dot(grid.directions[k]);
      if (std::abs(dot) < kGrazingTolerance) continue;
      auto& target = dot < 0 ? c.inflow : c.outflow;
      for (int v : edge.vertices) target.push_back({e, v, k, std::abs(dot) * 0.5 * edge.length});
    }
  }
  return c;
}

void export_mesh(const SpatialMesh& mesh, std::ostream& out) {
  out << "vertices " << mesh.n_vertices() << " triangles " << mesh.n_triangles() << '\n';
  out.precision(17);
  for (const auto& v : mesh.vertices()) out << v.x() << ' ' << v.y() << '\n';
  for (const auto& t : mesh.triangles()) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

}  // namespace qpat
