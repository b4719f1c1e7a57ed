#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>
#include <algorithm>

#include "qpat/acoustics.hpp"
#include "qpat/error.hpp"
#include "support.hpp"

using namespace qpat;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

CutoffProfile half_cutoff(const SpatialMesh& mesh, const DetectorGeometry& g) { return build_cutoff(g, mesh, 0.08); }

}  // namespace

TEST_CASE("detector factories place midpoints on the circle") {
  const DetectorGeometry g = DetectorGeometry::half_circle(4);
  REQUIRE(g.n_detectors() == 4);
  CHECK(g.spacing == doctest::Approx(kPi / 4));
  CHECK(g.angles.front() == doctest::Approx(-kPi + kPi / 8));
  for (int j = 0; j < 4; ++j) {
    CHECK(g.point(j).norm() == doctest::Approx(1.5));
    CHECK(g.point(j).y() < 0.0);
  }
  CHECK_THROWS_AS(DetectorGeometry::half_circle(4, 1.2).validate(), InvalidArgument);
  CHECK_THROWS_AS((DetectorGeometry{1.5, 0.1, {}}).validate(), InvalidArgument);
}

TEST_CASE("distance from the square to the detector arc") {
  // The lower half circle of radius 1.5 comes closest at the two bottom corners.
  CHECK(detector_distance(DetectorGeometry::half_circle(120)) == doctest::Approx(1.5 - std::sqrt(2.0)).epsilon(1e-8));
  CHECK(detector_distance(DetectorGeometry::full_circle(240)) == doctest::Approx(1.5 - std::sqrt(2.0)).epsilon(1e-8));
  // A short arc around the bottom axis point sees only the bottom edge; its ends are closest.
  CHECK(detector_distance(DetectorGeometry::arc(3, -kPi / 2 - 0.01, -kPi / 2 + 0.01)) ==
        doctest::Approx(1.5 * std::cos(0.01) - 1.0).epsilon(1e-12));
  CHECK(detector_distance(DetectorGeometry::half_circle(4, 3.0)) == doctest::Approx(3.0 - std::sqrt(2.0)).epsilon(1e-8));
}

TEST_CASE("cutoff profile") {
  const SpatialMesh mesh(4);
  const DetectorGeometry g = DetectorGeometry::half_circle(16);
  const CutoffProfile c = half_cutoff(mesh, g);
  CHECK(c.t_hi == doctest::Approx(3.0 - c.t_lo));
  CHECK(c(0.0) == 0.0);
  CHECK(c(c.t_lo - c.ramp) == 0.0);
  CHECK(c(c.t_lo) == 1.0);
  CHECK(c(0.5 * (c.t_lo + c.t_hi)) == 1.0);
  CHECK(c(c.t_hi) == 1.0);
  CHECK(c(c.t_hi + c.ramp) == 0.0);
  CHECK(c(10.0) == 0.0);
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double v = c(c.t_lo - c.ramp + c.ramp * i / 100.0);
    CHECK(v >= prev);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    prev = v;
  }
  // Flat joins: one-sided difference quotients vanish like e^2.
  for (double e : {1e-3, 1e-4}) {
    CHECK(c(c.t_lo - c.ramp + e) / e < 20.0 * e * e / (c.ramp * c.ramp * c.ramp));
    CHECK((1.0 - c(c.t_lo - e)) / e < 20.0 * e * e / (c.ramp * c.ramp * c.ramp));
  }
  CHECK_THROWS_AS(build_cutoff(g, mesh, 0.25), InvalidArgument);
  CHECK_THROWS_AS(build_cutoff(g, mesh, 0.0), InvalidArgument);
}

TEST_CASE("exact circle means agree with a fine angular quadrature") {
  const SpatialMesh mesh(12);
  const Eigen::VectorXd h = test::random_vector(mesh.n_vertices(), 31, 0.0, 1.0);
  const CircleMeans cm(mesh);
  for (auto [c, r] : {std::pair{Vec2(0.0, -1.5), 1.0}, std::pair{Vec2(0.1, 0.2), 0.37}, std::pair{Vec2(1.5, 0.0), 0.8},
                      std::pair{Vec2(-1.06, -1.06), 0.5}, std::pair{Vec2(0.0, 0.0), 2.0}}) {
    // Split at the crossings with the square's boundary lines, where the zero extension jumps,
    // then apply the midpoint rule on each sub-arc.
    std::vector<double> cuts{0.0, 2.0 * kPi};
    for (int axis = 0; axis < 2; ++axis)
      for (double line : {-1.0, 1.0}) {
        const double q = (line - c[axis]) / r;
        if (std::abs(q) >= 1.0) continue;
        const double base = axis == 0 ? std::acos(q) : std::asin(q);
        for (double a : {base, axis == 0 ? -base : kPi - base}) cuts.push_back(std::fmod(a + 2.0 * kPi, 2.0 * kPi));
      }
    std::sort(cuts.begin(), cuts.end());
    double s = 0.0;
    const int per_arc = 20'000;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double len = cuts[i + 1] - cuts[i];
      for (int q = 0; q < per_arc; ++q) {
        const double a = cuts[i] + len * (q + 0.5) / per_arc;
        s += len / per_arc * mesh.interpolate(h, c + r * Vec2(std::cos(a), std::sin(a)));
      }
    }
    CHECK(cm.mean(h, c, r) == doctest::Approx(s / (2.0 * kPi)).epsilon(1e-7));
  }
  // A circle enclosing the square sees nothing; a constant field has mean equal to the covered fraction.
  CHECK(cm.mean(h, Vec2(0.0, 0.0), 1.5) == 0.0);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(mesh.n_vertices());
  CHECK(cm.mean(one, Vec2(0.0, 0.0), 0.5) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(cm.mean(one, Vec2(1.0, 0.0), 0.5) == doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("Abel derivative weights are exact on linear profiles") {
  const TimeGrid t{2.0, 101};
  const Eigen::MatrixXd D = abel_derivative_weights(t);
  Eigen::VectorXd one = Eigen::VectorXd::Ones(t.n_times), r(t.n_times);
  for (int m = 0; m < t.n_times; ++m) r[m] = t.t(m);
  const Eigen::VectorXd d1 = D * one, dr = D * r;
  for (int m = 1; m < t.n_times; ++m) {
    CHECK(d1[m] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dr[m] == doctest::Approx(kPi * t.t(m) / 2.0).epsilon(1e-12));
  }
  CHECK(D.isLowerTriangular());
}

TEST_CASE("Abel inversion recovers smooth means") {
  const TimeGrid t{3.0, 1201};
  const Eigen::MatrixXd D = abel_derivative_weights(t);
  Eigen::VectorXd m(t.n_times);
  for (int q = 0; q < t.n_times; ++q) m[q] = std::exp(-4.0 * (t.t(q) - 1.0) * (t.t(q) - 1.0));
  const Eigen::VectorXd back = abel_invert(D * m, t, 10.0);
  CHECK((back - m).cwiseAbs().maxCoeff() < 1e-3);
  const Eigen::VectorXd cut = abel_invert(D * m, t, 1.5);
  CHECK(cut.tail(t.n_times - 601).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("time derivative is second order including the ends") {
  const double dt = 0.01;
  Eigen::VectorXd f(50);
  for (int i = 0; i < 50; ++i) f[i] = (i * dt) * (i * dt);
  const Eigen::VectorXd d = time_derivative(f, dt);
  for (int i = 0; i < 50; ++i) CHECK(d[i] == doctest::Approx(2.0 * i * dt).epsilon(1e-10).scale(1.0));
}

TEST_CASE("wave operator: linearity, agreement with the formula, exact transpose") {
  const SpatialMesh mesh(10);
  const DetectorGeometry g = DetectorGeometry::half_circle(20);
  const TimeGrid t{3.5, 200};
  const CutoffProfile c = half_cutoff(mesh, g);
  const WaveOperator W(mesh, g, t, c);
  const Eigen::VectorXd a = test::random_vector(mesh.n_vertices(), 1), b = test::random_vector(mesh.n_vertices(), 2);
  const Eigen::MatrixXd Wa = W.apply(a), Wb = W.apply(b);
  CHECK((W.apply(2.0 * a - 3.0 * b) - (2.0 * Wa - 3.0 * Wb)).norm() <= 1e-12 * Wa.norm());
  CHECK((wave_forward(mesh, a, g, t, c).values - Wa).norm() <= 1e-12 * Wa.norm());
  const Eigen::MatrixXd v = Eigen::MatrixXd::Random(20, 200);
  const double lhs = (Wa.array() * v.array()).sum(), rhs = a.dot(W.apply_transpose(v));
  CHECK(std::abs(lhs - rhs) <= 1e-12 * std::abs(lhs));
  CHECK_THROWS_AS(WaveOperator(mesh, g, t, c, 100), ConfigError);
}

TEST_CASE("formula adjoint is close to the transpose under the discrete inner products") {
  const SpatialMesh mesh(16);
  const DetectorGeometry g = DetectorGeometry::half_circle(60);
  const TimeGrid t{3.5, 1200};
  const CutoffProfile c = half_cutoff(mesh, g);
  const Eigen::VectorXd h = test::bump(mesh, Vec2(0.1, -0.2), 0.6);
  const PressureData p = wave_forward(mesh, h, g, t, c);
  const Eigen::VectorXd back = wave_adjoint_formula(p, mesh, c);
  const double lhs = p.inner(p.values, p.values);
  const double rhs = (mesh.lumped_mass().array() * h.array() * back.array()).sum();
  CHECK(test::rel(lhs, rhs) < 0.1);
}

TEST_CASE("finite propagation speed") {
  const SpatialMesh mesh(20);
  const DetectorGeometry g = DetectorGeometry::half_circle(9);
  const TimeGrid t{3.5, 400};
  const CutoffProfile c = half_cutoff(mesh, g);
  const Vec2 centre(0.2, 0.3);
  const double radius = 0.3;
  const Eigen::VectorXd h = test::bump(mesh, centre, radius);
  const PressureData p = wave_forward(mesh, h, g, t, c);
  // The P1 support lies within radius + one diagonal of the centre.
  const double reach = radius + std::sqrt(2.0) * mesh.h();
  double before = 0.0, after = 0.0;
  for (int j = 0; j < g.n_detectors(); ++j) {
    const double d = (g.point(j) - centre).norm();
    for (int m = 0; m < t.n_times; ++m) {
      if (t.t(m) < d - reach) before = std::max(before, std::abs(p.values(j, m)));
      else after = std::max(after, std::abs(p.values(j, m)));
    }
  }
  CHECK(before == 0.0);
  CHECK(after > 0.0);
}

TEST_CASE("reflection about the diagonal maps the data onto itself") {
  // The mesh diagonals run along y = x, so swapping coordinates is a symmetry of the P1 space.
  const int N = 12;
  const SpatialMesh mesh(N);
  const int n = 16;
  const DetectorGeometry g = DetectorGeometry::full_circle(n);
  const TimeGrid t{3.5, 150};
  const CutoffProfile c = build_cutoff(g, mesh, 0.08);
  const Eigen::VectorXd h = test::random_vector(mesh.n_vertices(), 17);
  Eigen::VectorXd hs(mesh.n_vertices());
  for (int j = 0; j <= N; ++j)
    for (int i = 0; i <= N; ++i) hs[mesh.vertex_index(j, i)] = h[mesh.vertex_index(i, j)];
  const Eigen::MatrixXd a = wave_forward(mesh, h, g, t, c).values, b = wave_forward(mesh, hs, g, t, c).values;
  for (int j = 0; j < n; ++j) {
    const int k = ((5 * n / 4 - j - 1) % n + n) % n;
    CHECK((a.row(j) - b.row(k)).norm() <= 1e-12 * a.norm());
  }
}

TEST_CASE("time grid must cover the cutoff window") {
  const SpatialMesh mesh(4);
  const DetectorGeometry g = DetectorGeometry::half_circle(8);
  const CutoffProfile c = half_cutoff(mesh, g);
  const Eigen::VectorXd h = Eigen::VectorXd::Ones(mesh.n_vertices());
  CHECK_THROWS_AS(wave_forward(mesh, h, g, TimeGrid{2.5, 100}, c), InvalidArgument);
  CHECK_THROWS_AS(wave_forward(mesh, h, g, TimeGrid{3.5, 2}, c), InvalidArgument);
}

TEST_CASE("pressure files round-trip and reject corruption") {
  const fs::path dir = fs::temp_directory_path() / "qpat_test_pressure";
  fs::create_directories(dir);
  PressureData p{DetectorGeometry::half_circle(5), TimeGrid{3.5, 7}, Eigen::MatrixXd::Random(5, 7)};
  const fs::path f = dir / "p.bin";
  write_pressure(f, p);
  const PressureData q = read_pressure(f);
  CHECK(q.values == p.values);
  CHECK(q.geometry.angles == p.geometry.angles);
  CHECK(q.geometry.radius == p.geometry.radius);
  CHECK(q.time.n_times == 7);
  CHECK(q.time.dt() == doctest::Approx(p.time.dt()).epsilon(1e-15));

  {  // trailing garbage
    std::ofstream o(f, std::ios::binary | std::ios::app);
    o << 'x';
  }
  CHECK_THROWS_AS(read_pressure(f), DataError);
  write_pressure(f, p);
  fs::resize_file(f, fs::file_size(f) - 8);
  CHECK_THROWS_AS(read_pressure(f), DataError);
  write_pressure(f, p);
  {
    std::fstream o(f, std::ios::binary | std::ios::in | std::ios::out);
    o.seekp(0);
    o << 'X';
  }
  CHECK_THROWS_AS(read_pressure(f), DataError);
  CHECK_THROWS_AS(read_pressure(dir / "missing.bin"), DataError);
  fs::remove_all(dir);
}
