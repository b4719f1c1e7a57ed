#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "qpat/geometry.hpp"
#include "qpat/transport.hpp"

namespace qpat {

/// Absorbed energy density at mesh vertices, tagged with the hash of its mesh.
struct HeatingField {
  Eigen::VectorXd values;
  std::uint64_t mesh_hash = 0;
};

/// Angular average A Phi: nodewise sum over directions with the grid weights.
Eigen::VectorXd angular_average(const RadianceField& phi, const AngularGrid& grid);

/// A^* g: copies a spatial field into every direction.
RadianceField angular_spread(const Eigen::VectorXd& g, const AngularGrid& grid);

/// H(mu, sigma) = mu * A Phi, nodewise.
HeatingField heating(const SpatialMesh& mesh, const CoefficientPair& coeffs, const RadianceField& phi,
                     const AngularGrid& grid);

/// H'(mu, sigma)[h] = h_mu * A Phi + mu * A Psi with Psi the transport derivative.
Eigen::VectorXd heating_derivative(const CoefficientPair& coeffs, const RadianceField& phi,
                                   const RadianceField& psi, const Eigen::VectorXd& h_mu,
                                   const AngularGrid& grid);

/// P1 interpolant of a nodal field, extended by zero outside the closed square.
class ZeroExtendedField {
 public:
  ZeroExtendedField(const SpatialMesh& mesh, Eigen::VectorXd values)
      : mesh_(&mesh), values_(std::move(values)) {}

  double operator()(const Vec2& p) const { return mesh_->interpolate(values_, p); }
  const SpatialMesh& mesh() const { return *mesh_; }
  const Eigen::VectorXd& values() const { return values_; }

 private:
  const SpatialMesh* mesh_;
  Eigen::VectorXd values_;
};

ZeroExtendedField extend_by_zero(const SpatialMesh& mesh, const HeatingField& h);

}  // namespace qpat
