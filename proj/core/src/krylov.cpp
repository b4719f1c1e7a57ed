#include "qpat/krylov.hpp"

#include <cmath>
#include <vector>

namespace qpat {

KrylovStats gmres(const LinearMap& apply, const LinearMap& precondition,
                  const Eigen::VectorXd& b, Eigen::VectorXd& x, double tolerance,
                  int restart, int max_iterations) {
  KrylovStats stats;
  const Eigen::Index n = b.size();
  const double bnorm = b.norm();
  if (x.size() != n) x = Eigen::VectorXd::Zero(n);
  if (bnorm == 0.0) {
    x.setZero();
    stats.converged = true;
    return stats;
  }

  Eigen::MatrixXd V(n, restart + 1);
  Eigen::MatrixXd Z(n, restart);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(restart + 1, restart);
  Eigen::VectorXd cs(restart), sn(restart), g(restart + 1);
  Eigen::VectorXd r(n), w(n), z(n);

  while (stats.iterations < max_iterations) {
    apply(x, r);
    r = b - r;
    double beta = r.norm();
    stats.relative_residual = beta / bnorm;
    if (stats.relative_residual <= tolerance) {
      stats.converged = true;
      return stats;
    }
    V.col(0) = r / beta;
    g.setZero();
    g[0] = beta;
    H.setZero();

    int j = 0;
    for (; j < restart && stats.iterations < max_iterations; ++j) {
      ++stats.iterations;
      precondition(V.col(j), z);
      Z.col(j) = z;
      apply(z, w);
      // Modified Gram-Schmidt, two passes.
      for (int pass = 0; pass < 2; ++pass)
        for (int i = 0; i <= j; ++i) {
          const double hij = V.col(i).dot(w);
          H(i, j) += hij;
          w -= hij * V.col(i);
        }
      H(j + 1, j) = w.norm();
      if (H(j + 1, j) > 0.0) V.col(j + 1) = w / H(j + 1, j);

      for (int i = 0; i < j; ++i) {
        const double t = cs[i] * H(i, j) + sn[i] * H(i + 1, j);
        H(i + 1, j) = -sn[i] * H(i, j) + cs[i] * H(i + 1, j);
        H(i, j) = t;
      }
      const double denom = std::hypot(H(j, j), H(j + 1, j));
      cs[j] = H(j, j) / denom;
      sn[j] = H(j + 1, j) / denom;
      H(j, j) = denom;
      H(j + 1, j) = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];
      if (std::abs(g[j + 1]) / bnorm <= tolerance) {
        ++j;
        break;
      }
    }

    Eigen::VectorXd y = H.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
    x += Z.leftCols(j) * y;
  }

  apply(x, r);
  stats.relative_residual = (b - r).norm() / bnorm;
  stats.converged = stats.relative_residual <= tolerance;
  return stats;
}

}  // namespace qpat
