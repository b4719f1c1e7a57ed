#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "qpat/error.hpp"
#include "qpat/experiment.hpp"
#include "support.hpp"

using namespace qpat;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = "mesh.sim_N = 16\nmesh.inv_N = 12\nangles.n = 8\n";

ExperimentConfig small_config() {
  std::istringstream in(std::string(kMinimal) + "detector.n = 24\ntime.n = 150\n");
  return parse_config(in);
}

std::string config_error(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_config(in, "test.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("standard phantom") {
  const PhantomSpec spec = PhantomSpec::standard();
  CHECK_NOTHROW(spec.validate());
  REQUIRE(spec.inclusions.size() == 3);
  const SpatialMesh mesh(40);
  const CoefficientPair c = make_phantom(spec, mesh);
  CHECK_NOTHROW(c.validate());
  CHECK(c.mu.minCoeff() == doctest::Approx(0.05));
  CHECK(c.mu.maxCoeff() == doctest::Approx(0.3));
  CHECK((c.sigma.array() == 3.0).all());
  for (const auto& inc : spec.inclusions) {
    int inside = 0;
    for (const auto& p : mesh.vertices()) inside += inc.contains(p);
    CHECK(inside > 10);
  }
  // No vertex lies in two inclusions.
  for (const auto& p : mesh.vertices()) {
    int n = 0;
    for (const auto& inc : spec.inclusions) n += inc.contains(p);
    CHECK(n <= 1);
  }
  PhantomSpec bad = spec;
  bad.inclusions[0].mu = 2.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = spec;
  bad.inclusions[1].center = Vec2(0.95, 0.0);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("bottom illumination") {
  const SpatialMesh mesh(10);
  const AngularGrid grid = build_angular_grid(16);
  CHECK(nearest_direction(grid, Vec2(0.0, 1.0)) == 12);
  const IlluminationPattern f = make_bottom_illumination(mesh, grid);
  CHECK(f.f.sum() == doctest::Approx(11.0));
  CHECK(f.f.col(12).sum() == doctest::Approx(11.0));
  CHECK(f.q.size() == 0);
  CHECK(discrete_inflow_flux(mesh, grid, f.f) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-14));
  // Unit radiance: perimeter 8 times the discrete half-circle sum of |cos|, w cot(pi/16).
  CHECK(discrete_inflow_flux(mesh, grid, make_uniform_inflow(mesh, grid, 1.0).f) ==
        doctest::Approx(8.0 * grid.weights[0] * (1.0 / std::tan(std::numbers::pi / 16))).epsilon(1e-12));
}

TEST_CASE("noise is deterministic and has the requested level") {
  PressureData v{DetectorGeometry::half_circle(100), TimeGrid{3.5, 400}, Eigen::MatrixXd::Zero(100, 400)};
  v.values(3, 7) = -2.0;
  const PressureData a = add_noise(v, 0.05, 11), b = add_noise(v, 0.05, 11), c = add_noise(v, 0.05, 12);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  const Eigen::ArrayXXd n = a.values.array() - v.values.array();
  const double mean = n.mean(), sd = std::sqrt((n - mean).square().mean());
  CHECK(std::abs(mean) < 0.005);
  CHECK(sd == doctest::Approx(0.1).epsilon(0.02));
  CHECK(add_noise(v, 0.0, 1).values == v.values);
  CHECK_THROWS_AS(add_noise(v, -0.1, 1), InvalidArgument);
}

TEST_CASE("relative error") {
  const SpatialMesh mesh(8);
  const Eigen::VectorXd t = test::random_vector(mesh.n_vertices(), 1, 0.1, 1.0);
  CHECK(relative_error(t, t, mesh) == 0.0);
  CHECK(relative_error(1.1 * t, t, mesh) == doctest::Approx(0.1));
  CHECK(relative_error(Eigen::VectorXd::Zero(mesh.n_vertices()), t, mesh) == doctest::Approx(1.0));
  CHECK_THROWS_AS(relative_error(t, Eigen::VectorXd::Zero(mesh.n_vertices()), mesh), DomainError);
  CHECK_THROWS_AS(relative_error(t, Eigen::VectorXd::Ones(3), mesh), InvalidArgument);
}

TEST_CASE("configuration parsing") {
  std::istringstream in(std::string(kMinimal) + "# comment\n\nsolver.lambda = 1e-3  # trailing\ndetector.arc = full\n");
  const ExperimentConfig c = parse_config(in);
  CHECK(c.sim_N == 16);
  CHECK(c.inv_N == 12);
  CHECK(c.n_angles == 8);
  CHECK(c.solver.lambda == 1e-3);
  CHECK(c.full_view);
  CHECK(c.warnings().empty());
  CHECK(c.entries().at("mesh.sim_N") == "16");

  CHECK(config_error(std::string(kMinimal) + "bogus.key = 1\n").find("test.cfg:4:") != std::string::npos);
  CHECK(config_error(std::string(kMinimal) + "angles.n = 4\n").find("duplicate") != std::string::npos);
  CHECK(config_error(std::string(kMinimal) + "kernel.g = abc\n").find("test.cfg:4:") != std::string::npos);
  CHECK(config_error(std::string(kMinimal) + "just words\n").find("test.cfg:4:") != std::string::npos);
  CHECK(config_error("mesh.sim_N = 16\nangles.n = 8\n").find("mesh.inv_N") != std::string::npos);
  CHECK(!config_error(std::string(kMinimal) + "kernel.g = 1.0\n").empty());
  CHECK(!config_error(std::string(kMinimal) + "detector.arc = left\n").empty());
  CHECK_THROWS_AS(load_config("/nonexistent/qpat.cfg"), ConfigError);

  std::istringstream crime("mesh.sim_N = 20\nmesh.inv_N = 20\nangles.n = 8\n");
  const auto w = parse_config(crime).warnings();
  REQUIRE(w.size() == 1);
  CHECK(w[0].find("inverse crime") != std::string::npos);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"standard.cfg", "noisy.cfg"}) {
    const ExperimentConfig c = load_config(fs::path(QPAT_SOURCE_DIR) / "configs" / name);
    CHECK(c.sim_N == 101);
    CHECK(c.inv_N == 61);
    CHECK(c.warnings().empty());
  }
}

TEST_CASE("field files") {
  const fs::path dir = fs::temp_directory_path() / "qpat_test_fields";
  fs::create_directories(dir);
  const SpatialMesh mesh(6);
  const Eigen::VectorXd v = test::random_vector(mesh.n_vertices(), 2);
  write_field(dir / "a.fld", v, mesh);
  CHECK(read_field(dir / "a.fld", mesh) == v);
  CHECK(read_field_raw(dir / "a.fld").mesh_hash == mesh.hash());
  CHECK_THROWS_AS(read_field(dir / "a.fld", SpatialMesh(5)), DataError);
  fs::resize_file(dir / "a.fld", fs::file_size(dir / "a.fld") - 3);
  CHECK_THROWS_AS(read_field(dir / "a.fld", mesh), DataError);
  CHECK_THROWS_AS(write_field(dir / "b.fld", Eigen::VectorXd::Ones(3), mesh), InvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("field transfer between meshes") {
  const SpatialMesh fine(12), coarse(6);
  Eigen::VectorXd lin(fine.n_vertices());
  for (int v = 0; v < fine.n_vertices(); ++v) lin[v] = 1.0 + 2.0 * fine.vertices()[v].x() - fine.vertices()[v].y();
  const Eigen::VectorXd t = transfer_field(fine, lin, coarse);
  for (int v = 0; v < coarse.n_vertices(); ++v)
    CHECK(t[v] == doctest::Approx(1.0 + 2.0 * coarse.vertices()[v].x() - coarse.vertices()[v].y()));
  // Nested vertices carry their values over exactly.
  const Eigen::VectorXd r = test::random_vector(fine.n_vertices(), 4);
  const Eigen::VectorXd rc = transfer_field(fine, r, coarse);
  CHECK(rc[coarse.vertex_index(3, 2)] == r[fine.vertex_index(6, 4)]);
}

TEST_CASE("simulation pipeline") {
  const ExperimentConfig cfg = small_config();
  PhantomSpec spec = PhantomSpec::standard();
  const SimulationResult base = simulate_data(spec, cfg);
  REQUIRE(base.data.size() == 1);
  CHECK(base.data[0].values.rows() == 24);
  CHECK(base.data[0].values.cols() == 150);
  CHECK(base.truth_coarse.mu.size() == SpatialMesh(12).n_vertices());
  CHECK(base.heating_fine[0].minCoeff() >= -1e-6);
  CHECK(base.data[0].values.cwiseAbs().maxCoeff() > 0.0);

  PhantomSpec dark = spec;
  dark.background_mu = 0.0;
  for (auto& inc : dark.inclusions) inc.mu = 0.0;
  CHECK(simulate_data(dark, cfg).data[0].values.cwiseAbs().maxCoeff() == 0.0);

  // Weak absorption: the data respond almost linearly.
  PhantomSpec weak = spec, weak2 = spec;
  weak.background_mu = 0.01;
  weak2.background_mu = 0.02;
  for (std::size_t i = 0; i < spec.inclusions.size(); ++i) {
    weak.inclusions[i].mu = 0.02;
    weak2.inclusions[i].mu = 0.04;
  }
  const Eigen::MatrixXd p1 = simulate_data(weak, cfg).data[0].values, p2 = simulate_data(weak2, cfg).data[0].values;
  CHECK((p2 - 2.0 * p1).norm() <= 0.2 * p2.norm());
  CHECK((p2 - 2.0 * p1).norm() > 0.0);

  const SimulationResult again = simulate_data(spec, cfg);
  CHECK(again.data[0].values == base.data[0].values);
}
