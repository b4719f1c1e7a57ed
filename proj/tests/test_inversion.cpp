#include <doctest.h>

#include <sstream>

#include "qpat/error.hpp"
#include "qpat/experiment.hpp"
#include "qpat/inversion.hpp"
#include "support.hpp"

using namespace qpat;

namespace {

struct Fixture {
  SpatialMesh mesh{8};
  AngularGrid grid = build_angular_grid(8);
  ScatteringMatrix kmat = assemble_scattering_matrix(grid, {0.6});
  OpticalModel model{&mesh, &grid, &kmat, {make_bottom_illumination(mesh, grid)}, {}};
  CoefficientPair truth = make_phantom(PhantomSpec::standard(), mesh);

  CoefficientPair flat(double mu) const {
    CoefficientPair c = truth;
    c.mu.setConstant(mu);
    return c;
  }
  std::vector<Eigen::VectorXd> heating_of(const CoefficientPair& c) const {
    const HeatingMisfit none(mesh, {Eigen::VectorXd::Zero(mesh.n_vertices())});
    return Objective(model, none, 1.0).evaluate(c).heating;
  }
};

// Gradient deliberately reversed, so every step climbs.
class AscentFidelity final : public HeatingFidelity {
 public:
  explicit AscentFidelity(const SpatialMesh& mesh) : mass_(mesh.lumped_mass()) {}
  int n_illuminations() const override { return 1; }
  Eigen::MatrixXd residual(int, const Eigen::VectorXd& h) const override { return h; }
  double value(const Eigen::MatrixXd& r) const override {
    return 0.5 * (mass_.array() * r.col(0).array().square()).sum();
  }
  Eigen::VectorXd heating_gradient(const Eigen::MatrixXd& r) const override {
    return -(mass_.array() * r.col(0).array()).matrix();
  }

 private:
  Eigen::VectorXd mass_;
};

}  // namespace

TEST_CASE("gradient penalty") {
  const SpatialMesh mesh(10);
  const Eigen::SparseMatrix<double> L = assemble_stiffness_matrix(mesh);
  CHECK(std::abs(penalty_value(Eigen::VectorXd::Constant(mesh.n_vertices(), 0.7), L)) < 1e-13);
  Eigen::VectorXd x(mesh.n_vertices());
  for (int v = 0; v < mesh.n_vertices(); ++v) x[v] = mesh.vertices()[v].x();
  CHECK(penalty_value(x, L) == doctest::Approx(2.0).epsilon(1e-12));
  const Eigen::VectorXd r = test::random_vector(mesh.n_vertices(), 3);
  CHECK(penalty_value(3.0 * r, L) == doctest::Approx(9.0 * penalty_value(r, L)).epsilon(1e-12));
  CHECK(penalty_value(r, L) >= 0.0);
}

TEST_CASE("prox step") {
  const SpatialMesh mesh(12);
  const auto M = assemble_mass_matrix(mesh);
  const auto L = assemble_stiffness_matrix(mesh);
  const Eigen::VectorXd r = test::random_vector(mesh.n_vertices(), 8, -0.3, 1.3);
  // No smoothing: pure projection onto the box.
  CHECK((prox_step(r, 0.0, M, L, 1.0) - r.cwiseMax(0.0).cwiseMin(1.0)).norm() < 1e-13);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(mesh.n_vertices(), 0.4);
  CHECK((prox_step(c, 5.0, M, L, 1.0) - c).norm() < 1e-12);
  // Larger weights give smoother results.
  const Eigen::VectorXd inside = test::random_vector(mesh.n_vertices(), 9, 0.2, 0.8);
  ProxOperator prox(M, L);
  double prev = penalty_value(inside, L);
  for (double s : {1e-4, 1e-3, 1e-2, 1e-1}) {
    int clipped = -1;
    const Eigen::VectorXd p = prox(inside, s, 1.0, &clipped);
    CHECK(clipped == 0);
    const double now = penalty_value(p, L);
    CHECK(now < prev);
    prev = now;
  }
  int clipped = 0;
  prox(r, 1e-6, 1.0, &clipped);
  CHECK(clipped > 0);
}

TEST_CASE("fidelity values") {
  const SpatialMesh mesh(6);
  const HeatingMisfit misfit(mesh, {Eigen::VectorXd::Zero(mesh.n_vertices())});
  CHECK(misfit.value(misfit.residual(0, Eigen::VectorXd::Ones(mesh.n_vertices()))) == doctest::Approx(2.0));

  const DetectorGeometry g = DetectorGeometry::half_circle(10);
  const TimeGrid t{3.5, 80};
  const WaveOperator W(mesh, g, t, build_cutoff(g, mesh, 0.08));
  const PressureData v = W.make_data(Eigen::MatrixXd::Random(10, 80));
  const AcousticFidelity acoustic(W, {v});
  const Eigen::MatrixXd res = acoustic.residual(0, Eigen::VectorXd::Zero(mesh.n_vertices()));
  CHECK(acoustic.value(res) == doctest::Approx(0.5 * v.inner(v.values, v.values)).epsilon(1e-13));
  // The heating gradient is the transpose applied to the weighted residual.
  const Eigen::VectorXd h = test::random_vector(mesh.n_vertices(), 4);
  const Eigen::MatrixXd rh = acoustic.residual(0, h);
  const Eigen::VectorXd dir = test::random_vector(mesh.n_vertices(), 5);
  const double e = 1e-6;
  const double fd = (acoustic.value(acoustic.residual(0, h + e * dir)) - acoustic.value(acoustic.residual(0, h - e * dir))) / (2 * e);
  CHECK(acoustic.heating_gradient(rh).dot(dir) == doctest::Approx(fd).epsilon(1e-7));
}

TEST_CASE("fidelity gradient matches central differences") {
  const Fixture f;
  const CoefficientPair c = f.truth;
  std::vector<Eigen::VectorXd> targets = f.heating_of(f.flat(0.15));
  const HeatingMisfit misfit(f.mesh, targets);
  const Objective obj(f.model, misfit, 1e-3);
  const GradientPair g = obj.gradient(obj.evaluate(c));
  const Eigen::VectorXd& m = obj.lumped_mass();
  const Eigen::VectorXd hm = test::random_vector(f.mesh.n_vertices(), 1, -0.02, 0.02);
  const Eigen::VectorXd hs = test::random_vector(f.mesh.n_vertices(), 2, -0.5, 0.5);
  const double e = 1e-5;
  CoefficientPair p = c, q = c;
  p.mu += e * hm, q.mu -= e * hm, p.sigma += e * hs, q.sigma -= e * hs;
  const double fd = (obj.evaluate(p).fidelity - obj.evaluate(q).fidelity) / (2 * e);
  const double an = (m.array() * (g.grad_mu.array() * hm.array() + g.grad_sigma.array() * hs.array())).sum();
  CHECK(an == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("exact data give a vanishing fidelity gradient") {
  const Fixture f;
  const DetectorGeometry g = DetectorGeometry::half_circle(12);
  const TimeGrid t{3.5, 60};
  const WaveOperator W(f.mesh, g, t, build_cutoff(g, f.mesh, 0.08));
  const PressureData v = W.make_data(W.apply(f.heating_of(f.truth)[0]));
  const AcousticFidelity fid(W, {v});
  const Objective obj(f.model, fid, 1e-4);
  const ObjectiveState s = obj.evaluate(f.truth);
  CHECK(s.fidelity == doctest::Approx(0.0).scale(1e-20));
  const GradientPair gr = obj.gradient(s);
  CHECK(gr.grad_mu.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(s.penalty == doctest::Approx(1e-4 * penalty_value(f.truth.mu, obj.stiffness())));
}

TEST_CASE("scattering coefficient has no effect under an identity kernel") {
  Fixture f;
  f.kmat = ScatteringMatrix::identity(f.grid);
  const HeatingMisfit misfit(f.mesh, f.heating_of(f.flat(0.2)));
  const Objective obj(f.model, misfit, 1e-4);
  const GradientPair g = obj.gradient(obj.evaluate(f.truth));
  CHECK(g.grad_sigma.cwiseAbs().maxCoeff() <= 1e-10 * g.grad_mu.cwiseAbs().maxCoeff());
}

TEST_CASE("solver configuration is validated") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.step = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("backtracking decreases the objective monotonically") {
  const Fixture f;
  const HeatingMisfit misfit(f.mesh, f.heating_of(f.truth));
  const Objective obj(f.model, misfit, 1e-4);
  SolverConfig c;
  c.backtracking = true;
  c.step = 1e4;
  c.max_iters = 12;
  const ReconstructionResult r = run_proximal_gradient(obj, c, f.flat(0.05));
  const auto& rec = r.trace.records;
  REQUIRE(rec.size() > 2);
  for (std::size_t i = 1; i < rec.size(); ++i) CHECK(rec[i].objective <= rec[i - 1].objective);
  CHECK(rec.back().step < 1e4);
  CHECK(r.coeffs.mu.minCoeff() >= 0.0);
  CHECK(r.coeffs.mu.maxCoeff() <= 1.0);
}

TEST_CASE("automatic step converges on heating data") {
  const Fixture f;
  const HeatingMisfit misfit(f.mesh, f.heating_of(f.truth));
  const Objective obj(f.model, misfit, 1e-6);
  SolverConfig c;
  c.lambda = 1e-6;
  c.max_iters = 30;
  const ReconstructionResult r = run_proximal_gradient(obj, c, f.flat(0.05));
  CHECK(r.trace.records.front().step > 0.0);
  CHECK(r.trace.records.back().objective < 0.1 * r.trace.records.front().objective);
}

TEST_CASE("divergence guard stops a climbing iteration") {
  const Fixture f;
  const AscentFidelity up(f.mesh);
  const Objective obj(f.model, up, 1e-4);
  SolverConfig c;
  c.step = 0.05;
  c.max_iters = 50;
  CHECK_THROWS_AS(run_proximal_gradient(obj, c, f.flat(0.02)), NumericalError);
}

TEST_CASE("two-stage iteration is stationary at a constant truth") {
  const Fixture f;
  const CoefficientPair truth = f.flat(0.2);
  SolverConfig c;
  c.max_iters = 5;
  const ReconstructionResult r = run_two_stage_from_heating(f.model, f.heating_of(truth), c, truth);
  CHECK((r.coeffs.mu - truth.mu).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(r.trace.records.front().fidelity < 1e-25);
}

TEST_CASE("trace csv") {
  IterationTrace t;
  t.records.push_back({0, 1.0, 0.5, 1.5, 0.1, 2.0, 0});
  t.records.push_back({1, 0.5, 0.5, 1.0, 0.1, 1.0, 3});
  std::ostringstream os;
  write_trace_csv(os, t);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "iter,fidelity,penalty,objective,step,grad_norm,clip_count");
  std::getline(is, line);
  CHECK(line == "0,1,0.5,1.5,0.10000000000000001,2,0");
  std::getline(is, line);
  CHECK(line.back() == '3');
}
