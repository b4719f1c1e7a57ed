#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "qpat/geometry.hpp"
#include "qpat/krylov.hpp"

namespace qpat {

/// Which denominator the Henyey-Greenstein kernel uses.
///
/// `conventional`: 1 + g^2 - 2 g cos(angle between directions).
/// `literal`: 1 + g^2 - 2 g cos(theta . theta'), i.e. the cosine applied to the
/// dot product itself. Both are renormalized on the discrete grid.
enum class KernelForm { conventional, literal };

const char* to_string(KernelForm form);
KernelForm kernel_form_from_string(const std::string& s);

struct ScatteringKernelSpec {
  double g = 0.0;
  KernelForm form = KernelForm::conventional;
};

/// Raw two-dimensional Henyey-Greenstein kernel. Throws on non-unit directions.
double hg_kernel(const ScatteringKernelSpec& spec, const Vec2& theta, const Vec2& theta_prime);

/// Kernel as a function of the angle difference between two directions.
double hg_kernel_angle(const ScatteringKernelSpec& spec, double angle_difference);

/// Dense n_angles x n_angles approximation of the scattering operator.
///
/// (K u)_j = sum_k entries(j, k) w_k u_k. Entries are symmetric and circulant on the
/// uniform grid, scaled once so every weighted row sum is 1.
struct ScatteringMatrix {
  Eigen::MatrixXd entries;
  bool row_normalized = false;

  /// Discrete identity operator, entries delta_jk / w_k. Used as a test hook.
  static ScatteringMatrix identity(const AngularGrid& grid);

  /// Applies K angle-wise to a radiance field (n_vertices x n_angles).
  Eigen::MatrixXd apply(const Eigen::MatrixXd& field, const AngularGrid& grid) const;
};

ScatteringMatrix assemble_scattering_matrix(const AngularGrid& grid, const ScatteringKernelSpec& spec);

/// Nodal absorption and scattering fields together with their admissibility bounds.
struct CoefficientPair {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  double mu_max = 1.0;
  double sigma_max = 10.0;

  /// Throws DomainError unless 0 <= mu <= mu_max and 0 <= sigma <= sigma_max.
  void validate() const;
};

/// n_vertices x n_angles nodal coefficients; column k is the spatial field for direction k.
using RadianceField = Eigen::MatrixXd;

/// Boundary and interior sources. Empty `q` means no interior source.
struct IlluminationPattern {
  Eigen::MatrixXd f;  // n_vertices x n_angles, nonzero only on inflow (vertex, angle) pairs
  Eigen::MatrixXd q;  // n_vertices x n_angles nodal interior source, or empty
};

struct TransportOptions {
  double stabilization_factor = 0.03;   // delta = factor * h
  double stabilization_threshold = 1.0;  // stabilize where mu + sigma < threshold
  double tolerance = 1e-12;
  int restart = 80;
  int max_iterations = 4000;
};

/// Stabilized finite-element system for the stationary radiative transfer equation.
///
/// Unknowns are ordered angle-major: entry (v, k) of a RadianceField has flat index
/// k * n_vertices + v. The matrix is
///
///   M = blockdiag(T_k) - S,
///
/// where T_k carries the streamline-diffusion transport term, the outflow boundary
/// term and the (mu + sigma - sigma K_kk) reaction term for direction k, and S holds
/// the off-diagonal scattering coupling. S is applied without being stored. Solves use
/// GMRES preconditioned by sparse LU factors of the T_k, which are computed once in
/// the constructor and reused for forward, transposed and derivative solves.
///
/// The object is immutable after construction. Eigen's SparseLU keeps no mutable
/// state in solve(), but concurrent solves against one system are not tested; callers
/// serialize them.
class TransportSystem {
 public:
  TransportSystem(const SpatialMesh& mesh, const AngularGrid& grid, const CoefficientPair& coeffs,
                  const ScatteringMatrix& kmat, TransportOptions options = {});

  int size() const { return n_vertices_ * n_angles_; }
  const SpatialMesh& mesh() const { return *mesh_; }
  const AngularGrid& grid() const { return *grid_; }
  const ScatteringMatrix& scattering() const { return *kmat_; }

  /// Streamline-diffusion parameter per triangle (identical for every direction).
  const Eigen::VectorXd& delta_field() const { return delta_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& u) const;
  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& w) const;

  /// Explicit sparse matrix; intended for small systems and tests.
  Eigen::SparseMatrix<double> assemble_matrix() const;

  /// Right-hand side from inflow data: sum over inflow edges of |theta . nu| psi_i f.
  Eigen::VectorXd boundary_load(const Eigen::MatrixXd& f) const;
  /// Right-hand side from a nodal interior source against stabilized test functions.
  Eigen::VectorXd source_load(const Eigen::MatrixXd& q) const;

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  Eigen::VectorXd solve_transpose(const Eigen::VectorXd& rhs) const;

  /// Applies the coefficient derivative: (dM/dmu [h_mu] + dM/dsigma [h_sigma]) u.
  Eigen::VectorXd apply_coefficient_derivative(const Eigen::VectorXd& h_mu, const Eigen::VectorXd& h_sigma,
                                               const Eigen::VectorXd& u) const;

  /// Nodal sensitivities of lambda^T M u with respect to mu and sigma.
  ///
  /// Returns (g_mu, g_sigma) with g_mu[n] = lambda^T (dM/dmu_n) u and likewise for sigma,
  /// so that h_mu . g_mu + h_sigma . g_sigma = lambda^T apply_coefficient_derivative(h_mu, h_sigma, u).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> coefficient_sensitivity(const Eigen::VectorXd& u,
                                                                      const Eigen::VectorXd& lambda) const;

  const KrylovStats& last_stats() const { return last_stats_; }

 private:
  void apply_scattering(const Eigen::VectorXd& u, Eigen::VectorXd& out, bool transpose) const;
  void precondition(const Eigen::VectorXd& r, Eigen::VectorXd& z, bool transpose) const;
  // Element loop for sum_k w_k int coef psi_b (psi_a + delta theta_k . grad psi_a) on field pairs.
  void reaction_apply(const Eigen::VectorXd& coef, const Eigen::MatrixXd& u, Eigen::MatrixXd& out) const;
  Eigen::VectorXd reaction_sensitivity(const Eigen::MatrixXd& u, const Eigen::MatrixXd& lambda) const;

  const SpatialMesh* mesh_;
  const AngularGrid* grid_;
  const ScatteringMatrix* kmat_;
  TransportOptions options_;
  int n_vertices_;
  int n_angles_;
  Eigen::VectorXd delta_;
  std::vector<Eigen::SparseMatrix<double>> blocks_;
  std::vector<std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>>> factors_;
  // sigma-weighted mass and streamline matrices: int sigma psi_b psi_a, int sigma psi_b delta d_x psi_a, ...
  Eigen::SparseMatrix<double> sigma_mass_, sigma_dx_, sigma_dy_;
  mutable KrylovStats last_stats_;
};

/// Discrete T(mu, sigma): solves M c = b(f) + b(q).
RadianceField solve_forward(const TransportSystem& system, const IlluminationPattern& illum);

/// Solves M^T c = rhs for a right-hand side already in load-vector form.
RadianceField solve_adjoint(const TransportSystem& system, const RadianceField& rhs);

/// Derivative of T in direction (h_mu, h_sigma): M psi = -(dM[h]) phi with zero inflow data.
RadianceField directional_derivative(const TransportSystem& system, const RadianceField& phi,
                                     const Eigen::VectorXd& h_mu, const Eigen::VectorXd& h_sigma);

inline Eigen::Map<const Eigen::VectorXd> flat(const RadianceField& f) {
  return {f.data(), f.size()};
}
inline RadianceField unflat(const Eigen::VectorXd& v, int n_vertices) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), n_vertices, v.size() / n_vertices);
}

}  // namespace qpat
