#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace qpat {

using Vec2 = Eigen::Vector2d;

enum class EdgeSide { bottom, right, top, left };

struct BoundaryEdge {
  std::array<int, 2> vertices;
  Vec2 normal;  // outward unit normal
  EdgeSide side;
  double length;
};

/// Uniform triangulation of [-1,1]^2 with (N+1)^2 vertices and 2N^2 triangles.
///
/// Vertex (i, j) sits at (-1 + i h, -1 + j h) with index i + (N+1) j. Every grid
/// square is split along its bottom-left to top-right diagonal, giving the
/// counter-clockwise triangles (v00, v10, v11) and (v00, v11, v01).
class SpatialMesh {
 public:
  struct Location {
    int triangle;
    std::array<int, 3> vertices;
    std::array<double, 3> barycentric;
  };

  SpatialMesh() = default;
  explicit SpatialMesh(int N);

  int resolution() const { return N_; }
  double h() const { return h_; }
  int n_vertices() const { return static_cast<int>(vertices_.size()); }
  int n_triangles() const { return static_cast<int>(triangles_.size()); }

  const std::vector<Vec2>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_edges_; }

  int vertex_index(int i, int j) const { return i + (N_ + 1) * j; }
  double signed_area(int triangle) const;

  /// Gradients of the three P1 hat functions on a triangle (constant per triangle).
  std::array<Vec2, 3> hat_gradients(int triangle) const;

  /// Containing triangle and barycentric coordinates, or nullopt outside [-1,1]^2.
  std::optional<Location> locate(const Vec2& p) const;

  /// P1 interpolation of nodal values; exactly zero outside the closed square.
  double interpolate(const Eigen::VectorXd& nodal, const Vec2& p) const;

  /// Lumped (row-sum) mass weights, one per vertex.
  Eigen::VectorXd lumped_mass() const;

  /// FNV-1a hash over resolution and vertex coordinates; binds field files to meshes.
  std::uint64_t hash() const;

 private:
  int N_ = 0;
  double h_ = 0.0;
  std::vector<Vec2> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<BoundaryEdge> boundary_edges_;
};

SpatialMesh build_uniform_mesh(int N);

/// Consistent P1 mass matrix: entries int psi_a psi_b.
Eigen::SparseMatrix<double> assemble_mass_matrix(const SpatialMesh& mesh);

/// P1 stiffness matrix of the Dirichlet energy: entries int grad psi_a . grad psi_b.
Eigen::SparseMatrix<double> assemble_stiffness_matrix(const SpatialMesh& mesh);

/// Uniform periodic grid on the unit circle, angles -pi + 2 pi k / n.
struct AngularGrid {
  int n_angles = 0;
  std::vector<double> angles;
  std::vector<Vec2> directions;
  std::vector<double> weights;  // trapezoidal, each 2 pi / n
};

AngularGrid build_angular_grid(int n_angles);

/// |nu . theta| below this is treated as grazing.
inline constexpr double kGrazingTolerance = 1e-12;

struct BoundaryDof {
  int edge;
  int vertex;
  int angle;
  double weight;  // |nu . theta| times the lumped edge quadrature weight
};

struct BoundaryClassification {
  std::vector<BoundaryDof> inflow;
  std::vector<BoundaryDof> outflow;
};

/// Edgewise split into inflow (nu . theta < 0) and outflow (nu . theta > 0) pairs.
/// Corner vertices appear once per adjacent edge; grazing pairs are dropped.
BoundaryClassification classify_boundary(const SpatialMesh& mesh, const AngularGrid& grid);

/// Plain-text dump: "vertices <n> triangles <m>", n lines "x y", m lines "i j k".
void export_mesh(const SpatialMesh& mesh, std::ostream& out);

std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 1469598103934665603ULL);

}  // namespace qpat
