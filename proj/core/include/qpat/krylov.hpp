#pragma once

#include <functional>

#include <Eigen/Core>

namespace qpat {

struct KrylovStats {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

using LinearMap = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Restarted GMRES with right preconditioning.
///
/// Solves A x = b where `apply` computes A v and `precondition` computes an
/// approximation of A^{-1} v. The residual is the true (unpreconditioned) one,
/// so `tolerance` bounds ||b - A x|| / ||b||. `x` holds the initial guess.
KrylovStats gmres(const LinearMap& apply, const LinearMap& precondition,
                  const Eigen::VectorXd& b, Eigen::VectorXd& x, double tolerance,
                  int restart, int max_iterations);

}  // namespace qpat
