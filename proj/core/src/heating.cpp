#include "qpat/heating.hpp"

#include "qpat/error.hpp"

namespace qpat {

Eigen::VectorXd angular_average(const RadianceField& phi, const AngularGrid& grid) {
  if (phi.cols() != grid.n_angles) throw InvalidArgument("radiance field does not match the angular grid");
  const Eigen::Map<const Eigen::VectorXd> w(grid.weights.data(), grid.n_angles);
  return phi * w;
}

RadianceField angular_spread(const Eigen::VectorXd& g, const AngularGrid& grid) {
  return g.replicate(1, grid.n_angles);
}

HeatingField heating(const SpatialMesh& mesh, const CoefficientPair& coeffs, const RadianceField& phi,
                     const AngularGrid& grid) {
  if (coeffs.mu.size() != phi.rows()) throw InvalidArgument("absorption field does not match radiance field");
  return {coeffs.mu.cwiseProduct(angular_average(phi, grid)), mesh.hash()};
}

Eigen::VectorXd heating_derivative(const CoefficientPair& coeffs, const RadianceField& phi,
                                   const RadianceField& psi, const Eigen::VectorXd& h_mu,
                                   const AngularGrid& grid) {
  return h_mu.cwiseProduct(angular_average(phi, grid)) + coeffs.mu.cwiseProduct(angular_average(psi, grid));
}

ZeroExtendedField extend_by_zero(const SpatialMesh& mesh, const HeatingField& h) {
  if (h.mesh_hash != 0 && h.mesh_hash != mesh.hash())
    throw InvalidArgument("heating field belongs to a different mesh");
  if (h.values.size() != mesh.n_vertices()) throw InvalidArgument("heating field size does not match mesh");
  return ZeroExtendedField(mesh, h.values);
}

}  // namespace qpat
