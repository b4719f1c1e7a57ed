#include "qpat/transport.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "qpat/error.hpp"

namespace qpat {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

// int phi_n psi_b psi_a over a triangle, divided by its area.
double triple_integral(int n, int b, int a) {
  if (n == b && b == a) return 1.0 / 10.0;
  if (n == b || b == a || n == a) return 1.0 / 30.0;
  return 1.0 / 60.0;
}

// int phi_n psi_b over a triangle, divided by its area.
double pair_integral(int n, int b) { return n == b ? 1.0 / 6.0 : 1.0 / 12.0; }

// Local reaction matrix int coef psi_b (psi_a + delta beta_a), row a (test), column b (trial).
void local_reaction(const std::array<double, 3>& coef, double area, double delta,
                    const std::array<double, 3>& beta, double out[3][3]) {
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double mass = 0.0, stream = 0.0;
      for (int n = 0; n < 3; ++n) {
        mass += coef[n] * triple_integral(n, b, a);
        stream += coef[n] * pair_integral(n, b);
      }
      out[a][b] = area * (mass + delta * beta[a] * stream);
    }
}

}  // namespace

const char* to_string(KernelForm form) {
  return form == KernelForm::conventional ? "conventional" : "literal";
}

KernelForm kernel_form_from_string(const std::string& s) {
  if (s == "conventional") return KernelForm::conventional;
  if (s == "literal") return KernelForm::literal;
  throw InvalidArgument("unknown kernel form '" + s + "' (expected conventional or literal)");
}

double hg_kernel_angle(const ScatteringKernelSpec& spec, double angle_difference) {
  const double g = spec.g;
  const double c = std::cos(angle_difference);
  const double arg = spec.form == KernelForm::conventional ? c : std::cos(c);
  return (1.0 - g * g) / (2.0 * std::numbers::pi * (1.0 + g * g - 2.0 * g * arg));
}

double hg_kernel(const ScatteringKernelSpec& spec, const Vec2& theta, const Vec2& theta_prime) {
  if (std::abs(theta.norm() - 1.0) > 1e-9 || std::abs(theta_prime.norm() - 1.0) > 1e-9)
    throw InvalidArgument("hg_kernel: directions must be unit vectors");
  if (!(spec.g >= 0.0 && spec.g < 1.0)) throw InvalidArgument("hg_kernel: anisotropy g must lie in [0, 1)");
  const double dot = std::clamp(theta.dot(theta_prime), -1.0, 1.0);
  return hg_kernel_angle(spec, std::acos(dot));
}

ScatteringMatrix ScatteringMatrix::identity(const AngularGrid& grid) {
  ScatteringMatrix k;
  k.entries = Eigen::MatrixXd::Zero(grid.n_angles, grid.n_angles);
  for (int j = 0; j < grid.n_angles; ++j) k.entries(j, j) = 1.0 / grid.weights[j];
  k.row_normalized = true;
  return k;
}

Eigen::MatrixXd ScatteringMatrix::apply(const Eigen::MatrixXd& field, const AngularGrid& grid) const {
  const Eigen::Map<const Eigen::VectorXd> w(grid.weights.data(), grid.n_angles);
  return field * (entries * w.asDiagonal()).transpose();
}

ScatteringMatrix assemble_scattering_matrix(const AngularGrid& grid, const ScatteringKernelSpec& spec) {
  if (!(spec.g >= 0.0 && spec.g < 1.0)) throw InvalidArgument("anisotropy g must lie in [0, 1)");
  const int n = grid.n_angles;
  // Circulant by construction: entries depend only on the index distance.
  Eigen::VectorXd profile(n);
  for (int d = 0; d < n; ++d) profile[d] = hg_kernel_angle(spec, 2.0 * std::numbers::pi * d / n);
  ScatteringMatrix k;
  k.entries.resize(n, n);
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < n; ++l) {
      const int d = std::abs(j - l);
      k.entries(j, l) = profile[std::min(d, n - d)];
    }
  double row0 = 0.0;
  for (int l = 0; l < n; ++l) row0 += k.entries(0, l) * grid.weights[l];
  k.entries /= row0;
  k.row_normalized = true;
  return k;
}

void CoefficientPair::validate() const {
  if (!(mu_max > 0.0) || !(sigma_max > 0.0)) throw DomainError("coefficient bounds must be positive");
  if (mu.size() != sigma.size()) throw DomainError("mu and sigma have different sizes");
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (!(mu[i] >= 0.0 && mu[i] <= mu_max)) {
      std::ostringstream os;
      os << "absorption mu[" << i << "] = " << mu[i] << " outside [0, " << mu_max << "]";
      throw DomainError(os.str());
    }
    if (!(sigma[i] >= 0.0 && sigma[i] <= sigma_max)) {
      std::ostringstream os;
      os << "scattering sigma[" << i << "] = " << sigma[i] << " outside [0, " << sigma_max << "]";
      throw DomainError(os.str());
    }
  }
}

TransportSystem::TransportSystem(const SpatialMesh& mesh, const AngularGrid& grid,
                                 const CoefficientPair& coeffs, const ScatteringMatrix& kmat,
                                 TransportOptions options)
    : mesh_(&mesh),
      grid_(&grid),
      kmat_(&kmat),
      options_(options),
      n_vertices_(mesh.n_vertices()),
      n_angles_(grid.n_angles) {
  if (coeffs.mu.size() != n_vertices_ || coeffs.sigma.size() != n_vertices_)
    throw InvalidArgument("coefficient fields do not match the mesh");
  if (kmat.entries.rows() != n_angles_ || kmat.entries.cols() != n_angles_)
    throw InvalidArgument("scattering matrix does not match the angular grid");
  coeffs.validate();

  const auto& tris = mesh.triangles();
  const int n_tri = mesh.n_triangles();
  delta_ = Eigen::VectorXd::Zero(n_tri);
  for (int t = 0; t < n_tri; ++t)
    for (int v : tris[t])
      if (coeffs.mu[v] + coeffs.sigma[v] < options_.stabilization_threshold) {
        delta_[t] = options_.stabilization_factor * mesh.h();
        break;
      }

  Triplets smass, sdx, sdy;
  std::vector<Triplets> block_triplets(n_angles_);
  for (auto& b : block_triplets) b.reserve(9 * static_cast<std::size_t>(n_tri));
  smass.reserve(9 * static_cast<std::size_t>(n_tri));
  sdx.reserve(9 * static_cast<std::size_t>(n_tri));
  sdy.reserve(9 * static_cast<std::size_t>(n_tri));

  for (int t = 0; t < n_tri; ++t) {
    const auto& tri = tris[t];
    const double area = mesh.signed_area(t);
    const double delta = delta_[t];
    const auto grads = mesh.hat_gradients(t);
    const std::array<double, 3> sig{coeffs.sigma[tri[0]], coeffs.sigma[tri[1]], coeffs.sigma[tri[2]]};
    const std::array<double, 3> total{coeffs.mu[tri[0]] + sig[0], coeffs.mu[tri[1]] + sig[1],
                                      coeffs.mu[tri[2]] + sig[2]};

    double m_sig[3][3];
    local_reaction(sig, area, 0.0, {0, 0, 0}, m_sig);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        smass.emplace_back(tri[a], tri[b], m_sig[a][b]);
        double stream = 0.0;
        for (int n = 0; n < 3; ++n) stream += sig[n] * pair_integral(n, b);
        sdx.emplace_back(tri[a], tri[b], area * delta * grads[a].x() * stream);
        sdy.emplace_back(tri[a], tri[b], area * delta * grads[a].y() * stream);
      }

    for (int k = 0; k < n_angles_; ++k) {
      const Vec2& theta = grid.directions[k];
      const double wk = grid.weights[k];
      const std::array<double, 3> beta{theta.dot(grads[0]), theta.dot(grads[1]), theta.dot(grads[2])};
      double r_tot[3][3], r_sig[3][3];
      local_reaction(total, area, delta, beta, r_tot);
      local_reaction(sig, area, delta, beta, r_sig);
      const double self = wk * kmat.entries(k, k);
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          const double transport = area * (delta * beta[a] * beta[b] - beta[a] / 3.0);
          block_triplets[k].emplace_back(tri[a], tri[b],
                                         wk * (transport + r_tot[a][b] - self * r_sig[a][b]));
        }
    }
  }

  for (const auto& edge : mesh.boundary_edges())
    for (int k = 0; k < n_angles_; ++k) {
      const double dot = edge.normal.dot(grid.directions[k]);
      if (dot <= kGrazingTolerance) continue;
      const double c = grid.weights[k] * dot * edge.length / 6.0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          block_triplets[k].emplace_back(edge.vertices[a], edge.vertices[b], c * (a == b ? 2.0 : 1.0));
    }

  auto build = [&](const Triplets& trip) {
    Eigen::SparseMatrix<double> m(n_vertices_, n_vertices_);
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    return m;
  };
  sigma_mass_ = build(smass);
  sigma_dx_ = build(sdx);
  sigma_dy_ = build(sdy);

  blocks_.reserve(n_angles_);
  factors_.reserve(n_angles_);
  for (int k = 0; k < n_angles_; ++k) {
    blocks_.push_back(build(block_triplets[k]));
    auto lu = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    lu->compute(blocks_.back());
    if (lu->info() != Eigen::Success)
      throw NumericalError("transport assembly: LU factorization of direction block " + std::to_string(k) +
                           " failed (" + lu->lastErrorMessage() + ")");
    factors_.push_back(std::move(lu));
  }
}

void TransportSystem::apply_scattering(const Eigen::VectorXd& u, Eigen::VectorXd& out, bool transpose) const {
  const int nv = n_vertices_;
  const auto& K = kmat_->entries;
  const auto& w = grid_->weights;
  Eigen::Map<const Eigen::MatrixXd> U(u.data(), nv, n_angles_);
  Eigen::Map<Eigen::MatrixXd> Out(out.data(), nv, n_angles_);
  if (!transpose) {
    Eigen::VectorXd s(nv);
    for (int k = 0; k < n_angles_; ++k) {
      s.setZero();
      for (int l = 0; l < n_angles_; ++l)
        if (l != k) s += (K(k, l) * w[l]) * U.col(l);
      const Vec2& th = grid_->directions[k];
      Out.col(k) -= w[k] * (sigma_mass_ * s + th.x() * (sigma_dx_ * s) + th.y() * (sigma_dy_ * s));
    }
  } else {
    Eigen::MatrixXd Z(nv, n_angles_);
    for (int k = 0; k < n_angles_; ++k) {
      const Vec2& th = grid_->directions[k];
      Eigen::VectorXd lk = U.col(k);
      Z.col(k) = w[k] * (sigma_mass_.transpose() * lk + th.x() * (sigma_dx_.transpose() * lk) +
                         th.y() * (sigma_dy_.transpose() * lk));
    }
    for (int l = 0; l < n_angles_; ++l)
      for (int k = 0; k < n_angles_; ++k)
        if (k != l) Out.col(l) -= (w[l] * K(k, l)) * Z.col(k);
  }
}

Eigen::VectorXd TransportSystem::apply(const Eigen::VectorXd& u) const {
  Eigen::VectorXd out(size());
  for (int k = 0; k < n_angles_; ++k)
    out.segment(k * n_vertices_, n_vertices_) = blocks_[k] * u.segment(k * n_vertices_, n_vertices_);
  apply_scattering(u, out, false);
  return out;
}

Eigen::VectorXd TransportSystem::apply_transpose(const Eigen::VectorXd& w) const {
  Eigen::VectorXd out(size());
  for (int k = 0; k < n_angles_; ++k)
    out.segment(k * n_vertices_, n_vertices_) =
        blocks_[k].transpose() * w.segment(k * n_vertices_, n_vertices_);
  apply_scattering(w, out, true);
  return out;
}

Eigen::SparseMatrix<double> TransportSystem::assemble_matrix() const {
  const int nv = n_vertices_;
  Triplets trip;
  for (int k = 0; k < n_angles_; ++k)
    for (int c = 0; c < blocks_[k].outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(blocks_[k], c); it; ++it)
        trip.emplace_back(k * nv + it.row(), k * nv + it.col(), it.value());
  const auto& K = kmat_->entries;
  const auto& w = grid_->weights;
  for (int k = 0; k < n_angles_; ++k) {
    const Vec2& th = grid_->directions[k];
    Eigen::SparseMatrix<double> rk = sigma_mass_ + th.x() * sigma_dx_ + th.y() * sigma_dy_;
    for (int l = 0; l < n_angles_; ++l) {
      if (l == k) continue;
      const double c = -w[k] * w[l] * K(k, l);
      for (int col = 0; col < rk.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(rk, col); it; ++it)
          trip.emplace_back(k * nv + it.row(), l * nv + it.col(), c * it.value());
    }
  }
  Eigen::SparseMatrix<double> m(size(), size());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

Eigen::VectorXd TransportSystem::boundary_load(const Eigen::MatrixXd& f) const {
  if (f.rows() != n_vertices_ || f.cols() != n_angles_)
    throw InvalidArgument("inflow data must be n_vertices x n_angles");
  if ((f.array() < 0.0).any()) throw InvalidArgument("inflow data must be nonnegative");

  Eigen::MatrixXd allowed = Eigen::MatrixXd::Zero(n_vertices_, n_angles_);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(size());
  for (const auto& edge : mesh_->boundary_edges())
    for (int k = 0; k < n_angles_; ++k) {
      const double dot = edge.normal.dot(grid_->directions[k]);
      if (dot >= -kGrazingTolerance) continue;
      const double c = grid_->weights[k] * (-dot) * edge.length / 6.0;
      const int v0 = edge.vertices[0], v1 = edge.vertices[1];
      allowed(v0, k) = allowed(v1, k) = 1.0;
      b[k * n_vertices_ + v0] += c * (2.0 * f(v0, k) + f(v1, k));
      b[k * n_vertices_ + v1] += c * (f(v0, k) + 2.0 * f(v1, k));
    }
  for (int k = 0; k < n_angles_; ++k)
    for (int v = 0; v < n_vertices_; ++v)
      if (f(v, k) != 0.0 && allowed(v, k) == 0.0)
        throw InvalidArgument("inflow data is nonzero on a pair that is not on the inflow boundary (vertex " +
                              std::to_string(v) + ", direction " + std::to_string(k) + ")");
  return b;
}

void TransportSystem::reaction_apply(const Eigen::VectorXd& coef, const Eigen::MatrixXd& u,
                                     Eigen::MatrixXd& out) const {
  const auto& tris = mesh_->triangles();
  for (int t = 0; t < mesh_->n_triangles(); ++t) {
    const auto& tri = tris[t];
    const std::array<double, 3> c{coef[tri[0]], coef[tri[1]], coef[tri[2]]};
    if (c[0] == 0.0 && c[1] == 0.0 && c[2] == 0.0) continue;
    const double area = mesh_->signed_area(t);
    const auto grads = mesh_->hat_gradients(t);
    for (int k = 0; k < n_angles_; ++k) {
      const Vec2& th = grid_->directions[k];
      const std::array<double, 3> beta{th.dot(grads[0]), th.dot(grads[1]), th.dot(grads[2])};
      double r[3][3];
      local_reaction(c, area, delta_[t], beta, r);
      const double wk = grid_->weights[k];
      for (int a = 0; a < 3; ++a) {
        double s = 0.0;
        for (int b = 0; b < 3; ++b) s += r[a][b] * u(tri[b], k);
        out(tri[a], k) += wk * s;
      }
    }
  }
}

Eigen::VectorXd TransportSystem::reaction_sensitivity(const Eigen::MatrixXd& u, const Eigen::MatrixXd& lambda) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n_vertices_);
  const auto& tris = mesh_->triangles();
  for (int t = 0; t < mesh_->n_triangles(); ++t) {
    const auto& tri = tris[t];
    const double area = mesh_->signed_area(t);
    const double delta = delta_[t];
    const auto grads = mesh_->hat_gradients(t);
    for (int k = 0; k < n_angles_; ++k) {
      const Vec2& th = grid_->directions[k];
      const double wk = grid_->weights[k];
      std::array<double, 3> ul, ll, stream;
      for (int a = 0; a < 3; ++a) {
        ul[a] = u(tri[a], k);
        ll[a] = lambda(tri[a], k);
      }
      // Streamline part of the test function: delta theta . grad Lambda, constant per triangle.
      double dl = 0.0;
      for (int a = 0; a < 3; ++a) dl += ll[a] * th.dot(grads[a]);
      dl *= delta;
      for (int n = 0; n < 3; ++n) {
        double mass = 0.0;
        stream[n] = 0.0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) mass += ll[a] * ul[b] * triple_integral(n, b, a);
        for (int b = 0; b < 3; ++b) stream[n] += ul[b] * pair_integral(n, b);
        g[tri[n]] += wk * area * (mass + dl * stream[n]);
      }
    }
  }
  return g;
}

Eigen::VectorXd TransportSystem::apply_coefficient_derivative(const Eigen::VectorXd& h_mu,
                                                              const Eigen::VectorXd& h_sigma,
                                                              const Eigen::VectorXd& u) const {
  const RadianceField U = unflat(u, n_vertices_);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_vertices_, n_angles_);
  reaction_apply(h_mu + h_sigma, U, out);
  Eigen::MatrixXd scattered = kmat_->apply(U, *grid_);
  Eigen::MatrixXd minus = Eigen::MatrixXd::Zero(n_vertices_, n_angles_);
  reaction_apply(h_sigma, scattered, minus);
  out -= minus;
  return flat(out);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> TransportSystem::coefficient_sensitivity(
    const Eigen::VectorXd& u, const Eigen::VectorXd& lambda) const {
  const RadianceField U = unflat(u, n_vertices_);
  const RadianceField L = unflat(lambda, n_vertices_);
  Eigen::VectorXd g_mu = reaction_sensitivity(U, L);
  Eigen::VectorXd g_sigma = g_mu - reaction_sensitivity(kmat_->apply(U, *grid_), L);
  return {std::move(g_mu), std::move(g_sigma)};
}

Eigen::VectorXd TransportSystem::source_load(const Eigen::MatrixXd& q) const {
  if (q.rows() != n_vertices_ || q.cols() != n_angles_)
    throw InvalidArgument("interior source must be n_vertices x n_angles");
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n_vertices_, n_angles_);
  const auto& tris = mesh_->triangles();
  for (int t = 0; t < mesh_->n_triangles(); ++t) {
    const auto& tri = tris[t];
    const double area = mesh_->signed_area(t);
    const auto grads = mesh_->hat_gradients(t);
    for (int k = 0; k < n_angles_; ++k) {
      const Vec2& th = grid_->directions[k];
      const double wk = grid_->weights[k];
      double qsum = 0.0;
      for (int c = 0; c < 3; ++c) qsum += q(tri[c], k);
      for (int a = 0; a < 3; ++a) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += q(tri[c], k) * (a == c ? 1.0 / 6.0 : 1.0 / 12.0);
        s += delta_[t] * th.dot(grads[a]) * qsum / 3.0;
        b(tri[a], k) += wk * area * s;
      }
    }
  }
  return flat(b);
}

void TransportSystem::precondition(const Eigen::VectorXd& r, Eigen::VectorXd& z, bool transpose) const {
  z.resize(size());
  for (int k = 0; k < n_angles_; ++k) {
    const Eigen::VectorXd rk = r.segment(k * n_vertices_, n_vertices_);
    if (transpose)
      z.segment(k * n_vertices_, n_vertices_) = factors_[k]->transpose().solve(rk);
    else
      z.segment(k * n_vertices_, n_vertices_) = factors_[k]->solve(rk);
  }
}

namespace {

Eigen::VectorXd run_gmres(const TransportSystem& sys, const LinearMap& apply, const LinearMap& pre,
                          const Eigen::VectorXd& rhs, const TransportOptions& opt, KrylovStats& stats,
                          const char* what) {
  if (rhs.size() != sys.size()) throw InvalidArgument(std::string(what) + ": right-hand side has wrong size");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
  stats = gmres(apply, pre, rhs, x, opt.tolerance, opt.restart, opt.max_iterations);
  if (!stats.converged) {
    std::ostringstream os;
    os << what << ": GMRES did not converge after " << stats.iterations
       << " iterations, relative residual " << stats.relative_residual;
    throw NumericalError(os.str());
  }
  return x;
}

}  // namespace

Eigen::VectorXd TransportSystem::solve(const Eigen::VectorXd& rhs) const {
  return run_gmres(
      *this, [this](const Eigen::VectorXd& v, Eigen::VectorXd& o) { o = apply(v); },
      [this](const Eigen::VectorXd& v, Eigen::VectorXd& o) { precondition(v, o, false); }, rhs, options_,
      last_stats_, "transport solve");
}

Eigen::VectorXd TransportSystem::solve_transpose(const Eigen::VectorXd& rhs) const {
  return run_gmres(
      *this, [this](const Eigen::VectorXd& v, Eigen::VectorXd& o) { o = apply_transpose(v); },
      [this](const Eigen::VectorXd& v, Eigen::VectorXd& o) { precondition(v, o, true); }, rhs, options_,
      last_stats_, "transposed transport solve");
}

RadianceField solve_forward(const TransportSystem& system, const IlluminationPattern& illum) {
  Eigen::VectorXd rhs = system.boundary_load(illum.f);
  if (illum.q.size() > 0) rhs += system.source_load(illum.q);
  return unflat(system.solve(rhs), system.mesh().n_vertices());
}

RadianceField solve_adjoint(const TransportSystem& system, const RadianceField& rhs) {
  return unflat(system.solve_transpose(flat(rhs)), system.mesh().n_vertices());
}

RadianceField directional_derivative(const TransportSystem& system, const RadianceField& phi,
                                     const Eigen::VectorXd& h_mu, const Eigen::VectorXd& h_sigma) {
  const Eigen::VectorXd rhs = -system.apply_coefficient_derivative(h_mu, h_sigma, flat(phi));
  return unflat(system.solve(rhs), system.mesh().n_vertices());
}

}  // namespace qpat
