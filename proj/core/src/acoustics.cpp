#include "qpat/acoustics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "qpat/error.hpp"

namespace qpat {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInsideTolerance = 1e-12;

bool inside_square(const Vec2& p) {
  return std::abs(p.x()) <= 1.0 + kInsideTolerance && std::abs(p.y()) <= 1.0 + kInsideTolerance;
}

double xlogx(double u) { return u == 0.0 ? 0.0 : u * std::log(std::abs(u)); }

}  // namespace

DetectorGeometry DetectorGeometry::arc(int n, double begin, double end, double radius) {
  if (n < 1) throw InvalidArgument("detector count must be positive");
  if (!(end > begin)) throw InvalidArgument("detector arc must have positive length");
  DetectorGeometry g;
  g.radius = radius;
  g.spacing = (end - begin) / n;
  for (int j = 0; j < n; ++j) g.angles.push_back(begin + (j + 0.5) * g.spacing);
  g.validate();
  return g;
}

DetectorGeometry DetectorGeometry::half_circle(int n, double radius) { return arc(n, -kPi, 0.0, radius); }

DetectorGeometry DetectorGeometry::full_circle(int n, double radius) { return arc(n, -kPi, kPi, radius); }

void DetectorGeometry::validate() const {
  // The closed square must lie inside the detection disk.
  if (!(radius >= 1.5)) throw InvalidArgument("detector radius must be >= 1.5");
  if (angles.empty()) throw InvalidArgument("detector geometry has no detectors");
  if (!(spacing > 0.0)) throw InvalidArgument("detector spacing must be positive");
}

Vec2 DetectorGeometry::point(int j) const {
  return radius * Vec2(std::cos(angles[j]), std::sin(angles[j]));
}

void TimeGrid::validate() const {
  if (n_times < 3) throw InvalidArgument("time grid needs at least 3 samples");
  if (!(t_max > 0.0)) throw InvalidArgument("time grid t_max must be positive");
}

double CutoffProfile::operator()(double t) const {
  auto step = [](double s) {
    s = std::clamp(s, 0.0, 1.0);
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0);
  };
  if (t >= t_lo && t <= t_hi) return 1.0;
  if (ramp <= 0.0) return 0.0;
  if (t < t_lo) return step((t - (t_lo - ramp)) / ramp);
  return step(((t_hi + ramp) - t) / ramp);
}

double detector_distance(const DetectorGeometry& geom) {
  geom.validate();
  const double begin = geom.angles.front() - 0.5 * geom.spacing;
  const double end = geom.angles.back() + 0.5 * geom.spacing;
  auto dist = [&](double a) {
    const Vec2 p = geom.radius * Vec2(std::cos(a), std::sin(a));
    return std::hypot(std::max(std::abs(p.x()) - 1.0, 0.0), std::max(std::abs(p.y()) - 1.0, 0.0));
  };
  double best = std::min(dist(begin), dist(end));
  const int samples = 20000;
  for (int s = 1; s < samples; ++s) best = std::min(best, dist(begin + (end - begin) * s / samples));
  for (int q = -8; q <= 8; ++q) {
    const double a = q * 0.5 * kPi;
    if (a > begin && a < end) best = std::min(best, dist(a));
  }
  return best;
}

CutoffProfile build_cutoff(const DetectorGeometry& geom, const SpatialMesh& mesh, double ramp) {
  (void)mesh;  // the mesh always covers [-1,1]^2
  if (!(ramp > 0.0)) throw InvalidArgument("cutoff ramp must be positive");
  CutoffProfile c;
  c.t_lo = detector_distance(geom);
  c.t_hi = 2.0 * geom.radius - c.t_lo;
  c.ramp = ramp;
  if (c.t_lo - ramp < 0.0)
    throw InvalidArgument("cutoff ramp " + std::to_string(ramp) + " exceeds dist(Omega, Lambda) = " +
                          std::to_string(c.t_lo));
  return c;
}

double PressureData::inner(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const {
  return (quadrature_weights().array() * a.array() * b.array()).sum();
}

Eigen::MatrixXd PressureData::quadrature_weights() const {
  Eigen::MatrixXd w(geometry.n_detectors(), time.n_times);
  for (int m = 0; m < time.n_times; ++m) w.col(m).setConstant(geometry.arc_weight() * time.weight(m));
  return w;
}

void CircleMeans::weights(const Vec2& c, double r, std::vector<std::pair<int, double>>& out) const {
  out.clear();
  const SpatialMesh& mesh = *mesh_;
  const int N = mesh.resolution();
  const double h = mesh.h();

  if (r <= 0.0) {
    if (auto loc = mesh.locate(c))
      for (int a = 0; a < 3; ++a) out.emplace_back(loc->vertices[a], loc->barycentric[a]);
  } else {
    const double dmin = std::hypot(std::max(std::abs(c.x()) - 1.0, 0.0), std::max(std::abs(c.y()) - 1.0, 0.0));
    const double dmax = std::hypot(std::abs(c.x()) + 1.0, std::abs(c.y()) + 1.0);
    if (r < dmin || r > dmax) return;

    auto& cross = crossings_;
    cross.clear();
    auto push = [&](double w) {
      if (inside_square(c + r * Vec2(std::cos(w), std::sin(w)))) {
        w = std::fmod(w, 2.0 * kPi);
        if (w < 0.0) w += 2.0 * kPi;
        cross.push_back(w);
      }
    };
    auto index_range = [&](double lo, double hi) {
      const int i0 = std::max(0, static_cast<int>(std::ceil((std::max(lo, -1.0) + 1.0) / h - 1e-9)));
      const int i1 = std::min(N, static_cast<int>(std::floor((std::min(hi, 1.0) + 1.0) / h + 1e-9)));
      return std::pair{i0, i1};
    };
    const auto [ix0, ix1] = index_range(c.x() - r, c.x() + r);
    for (int i = ix0; i <= ix1; ++i) {
      const double s = (mesh.vertices()[mesh.vertex_index(i, 0)].x() - c.x()) / r;
      if (std::abs(s) > 1.0) continue;
      const double a = std::acos(s);
      push(a);
      push(-a);
    }
    const auto [iy0, iy1] = index_range(c.y() - r, c.y() + r);
    for (int j = iy0; j <= iy1; ++j) {
      const double s = (mesh.vertices()[mesh.vertex_index(0, j)].y() - c.y()) / r;
      if (std::abs(s) > 1.0) continue;
      const double a = std::asin(s);
      push(a);
      push(kPi - a);
    }
    // Diagonals x - y = d * h through grid vertices.
    for (int d = -N; d <= N; ++d) {
      const double s = (d * h - c.x() + c.y()) / (r * std::numbers::sqrt2);
      if (std::abs(s) > 1.0) continue;
      const double a = std::acos(s);
      push(-0.25 * kPi + a);
      push(-0.25 * kPi - a);
    }
    std::sort(cross.begin(), cross.end());

    auto integrate = [&](double wa, double wb) {
      if (wb - wa <= 0.0) return;
      const double mid = 0.5 * (wa + wb);
      const auto loc = mesh.locate(c + r * Vec2(std::cos(mid), std::sin(mid)));
      if (!loc) return;
      const auto grads = mesh.hat_gradients(loc->triangle);
      const double dsin = std::sin(wb) - std::sin(wa);
      const double dcos = std::cos(wb) - std::cos(wa);
      for (int a = 0; a < 3; ++a) {
        const int v = loc->vertices[a];
        const double at_centre = 1.0 + grads[a].dot(c - mesh.vertices()[v]);
        const double integral = at_centre * (wb - wa) + r * (grads[a].x() * dsin - grads[a].y() * dcos);
        out.emplace_back(v, integral / (2.0 * kPi));
      }
    };
    if (cross.empty()) {
      integrate(0.0, 2.0 * kPi);
    } else {
      for (std::size_t k = 0; k + 1 < cross.size(); ++k) integrate(cross[k], cross[k + 1]);
      integrate(cross.back(), cross.front() + 2.0 * kPi);
    }
  }

  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t w = 0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (w > 0 && out[w - 1].first == out[k].first)
      out[w - 1].second += out[k].second;
    else
      out[w++] = out[k];
  }
  out.resize(w);
}

double CircleMeans::mean(const Eigen::VectorXd& h, const Vec2& centre, double radius) const {
  std::vector<std::pair<int, double>> w;
  weights(centre, radius, w);
  double s = 0.0;
  for (const auto& [v, c] : w) s += c * h[v];
  return s;
}

Eigen::MatrixXd spherical_means(const SpatialMesh& mesh, const Eigen::VectorXd& h, const DetectorGeometry& geom,
                                const Eigen::VectorXd& radii) {
  if (h.size() != mesh.n_vertices()) throw InvalidArgument("field does not match mesh");
  CircleMeans means(mesh);
  std::vector<std::pair<int, double>> w;
  Eigen::MatrixXd out(geom.n_detectors(), radii.size());
  for (int j = 0; j < geom.n_detectors(); ++j) {
    const Vec2 y = geom.point(j);
    for (Eigen::Index q = 0; q < radii.size(); ++q) {
      if (radii[q] < 0.0) throw InvalidArgument("radii must be nonnegative");
      means.weights(y, radii[q], w);
      double s = 0.0;
      for (const auto& [v, c] : w) s += c * h[v];
      out(j, q) = s;
    }
  }
  return out;
}

Eigen::MatrixXd abel_derivative_weights(const TimeGrid& time) {
  time.validate();
  const int n = time.n_times;
  const double dt = time.dt();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  D(0, 0) = 1.0;
  for (int m = 1; m < n; ++m) {
    const double t = time.t(m);
    auto j1 = [&](double r) { return -std::sqrt(std::max(t * t - r * r, 0.0)); };
    auto j2 = [&](double r) {
      const double ratio = std::min(r / t, 1.0);
      return 0.5 * t * t * std::asin(ratio) - 0.5 * r * std::sqrt(std::max(t * t - r * r, 0.0));
    };
    for (int q = 0; q < m; ++q) {
      const double ra = time.t(q), rb = time.t(q + 1);
      const double J1 = j1(rb) - j1(ra);
      const double J2 = j2(rb) - j2(ra);
      D(m, q) += (J1 * (1.0 + ra / dt) - 2.0 * J2 / dt) / t;
      D(m, q + 1) += (-J1 * ra / dt + 2.0 * J2 / dt) / t;
    }
  }
  return D;
}

Eigen::VectorXd time_derivative(const Eigen::VectorXd& f, double dt) {
  const Eigen::Index n = f.size();
  Eigen::VectorXd d(n);
  if (n < 3) throw InvalidArgument("time_derivative needs at least 3 samples");
  for (Eigen::Index m = 1; m + 1 < n; ++m) d[m] = (f[m + 1] - f[m - 1]) / (2.0 * dt);
  d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt);
  d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dt);
  return d;
}

namespace {

Eigen::VectorXd sample_window(const TimeGrid& time, const CutoffProfile& cutoff) {
  Eigen::VectorXd w(time.n_times);
  for (int m = 0; m < time.n_times; ++m) w[m] = cutoff(time.t(m));
  return w;
}

void check_time_grid(const TimeGrid& time, const CutoffProfile& cutoff) {
  time.validate();
  if (time.t_max < cutoff.t_hi + cutoff.ramp)
    throw InvalidArgument("time grid too short: t_max = " + std::to_string(time.t_max) +
                          " < t_hi + ramp = " + std::to_string(cutoff.t_hi + cutoff.ramp));
}

}  // namespace

PressureData wave_forward(const SpatialMesh& mesh, const Eigen::VectorXd& h, const DetectorGeometry& geom,
                          const TimeGrid& time, const CutoffProfile& cutoff) {
  check_time_grid(time, cutoff);
  geom.validate();
  const Eigen::MatrixXd D = abel_derivative_weights(time);
  const Eigen::VectorXd window = sample_window(time, cutoff);
  Eigen::VectorXd radii(time.n_times);
  for (int m = 0; m < time.n_times; ++m) radii[m] = time.t(m);
  const Eigen::MatrixXd means = spherical_means(mesh, h, geom, radii);
  PressureData out{geom, time, (means * D.transpose()) * window.asDiagonal()};
  return out;
}

Eigen::VectorXd wave_adjoint_formula(const PressureData& v, const SpatialMesh& mesh, const CutoffProfile& cutoff) {
  const auto& geom = v.geometry;
  const auto& time = v.time;
  const int nt = time.n_times;
  const double dt = time.dt();
  const Eigen::VectorXd window = sample_window(time, cutoff);

  std::vector<Eigen::VectorXd> g(geom.n_detectors());
  for (int j = 0; j < geom.n_detectors(); ++j)
    g[j] = time_derivative(v.values.row(j).transpose().cwiseProduct(window), dt);

  Eigen::VectorXd out = Eigen::VectorXd::Zero(mesh.n_vertices());
  for (int x = 0; x < mesh.n_vertices(); ++x) {
    const Vec2& px = mesh.vertices()[x];
    double total = 0.0;
    for (int j = 0; j < geom.n_detectors(); ++j) {
      const double rho = (px - geom.point(j)).norm();
      const int start = std::max(0, static_cast<int>(std::floor(rho / dt)));
      double a0 = std::log(rho), a1 = 0.0, sum = 0.0;
      const auto& gj = g[j];
      for (int m = start; m < nt - 1; ++m) {
        const double tb = time.t(m + 1);
        if (tb <= rho) continue;
        const double root = std::sqrt(tb * tb - rho * rho);
        const double b0 = std::log(tb + root), b1 = root;
        const double beta = (gj[m + 1] - gj[m]) / dt;
        sum += (gj[m] - beta * time.t(m)) * (b0 - a0) + beta * (b1 - a1);
        a0 = b0;
        a1 = b1;
      }
      total += geom.arc_weight() * sum;
    }
    out[x] = -total / (2.0 * kPi);
  }
  return out;
}

const double kBackprojectionScale = 1.0;

Eigen::VectorXd abel_invert(const Eigen::VectorXd& p, const TimeGrid& time, double r_max) {
  const int n = time.n_times;
  const double dt = time.dt();
  if (p.size() != n) throw InvalidArgument("abel_invert: trace length does not match time grid");
  // G(t) = int_0^t p, the Abel transform of r -> m(r).
  Eigen::VectorXd G(n);
  G[0] = 0.0;
  for (int m = 1; m < n; ++m) G[m] = G[m - 1] + 0.5 * dt * (p[m] + p[m - 1]);
  // Q(r) = int_0^r t G(t) / sqrt(r^2 - t^2) dt, exact for piecewise linear G.
  Eigen::VectorXd Q = Eigen::VectorXd::Zero(n);
  for (int q = 1; q < n; ++q) {
    const double r = time.t(q);
    auto k1 = [r](double t) { return -std::sqrt(std::max(r * r - t * t, 0.0)); };
    auto k2 = [r](double t) {
      return 0.5 * r * r * std::asin(std::min(t / r, 1.0)) - 0.5 * t * std::sqrt(std::max(r * r - t * t, 0.0));
    };
    double s = 0.0, a1 = k1(0.0), a2 = k2(0.0);
    for (int m = 0; m < q; ++m) {
      const double tb = time.t(m + 1);
      const double b1 = k1(tb), b2 = k2(tb);
      const double beta = (G[m + 1] - G[m]) / dt;
      s += (G[m] - beta * time.t(m)) * (b1 - a1) + beta * (b2 - a2);
      a1 = b1;
      a2 = b2;
    }
    Q[q] = s;
  }
  const Eigen::VectorXd dQ = time_derivative(Q, dt);
  Eigen::VectorXd means(n);
  for (int q = 1; q < n; ++q) means[q] = time.t(q) > r_max ? 0.0 : (2.0 / kPi) * dQ[q] / time.t(q);
  means[0] = means[1];
  return means;
}

Eigen::VectorXd backprojection_inverse(const PressureData& v, const SpatialMesh& mesh, const CutoffProfile& cutoff) {
  const auto& geom = v.geometry;
  const auto& time = v.time;
  const int nt = time.n_times;
  const double dt = time.dt();
  const Eigen::VectorXd window = sample_window(time, cutoff);
  Eigen::VectorXd tgrid(nt);
  for (int m = 0; m < nt; ++m) tgrid[m] = time.t(m);

  // Filtered means (d/dr r d/dr M)(y_j, r) on the radius grid r_q = t_q.
  std::vector<Eigen::VectorXd> g(geom.n_detectors());
  for (int j = 0; j < geom.n_detectors(); ++j) {
    const Eigen::VectorXd means = abel_invert(v.values.row(j).transpose().cwiseProduct(window), time, cutoff.t_hi);
    g[j] = time_derivative(time_derivative(means, dt).cwiseProduct(tgrid), dt);
  }

  const double scale = kBackprojectionScale / (2.0 * kPi * geom.radius);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mesh.n_vertices());
  for (int x = 0; x < mesh.n_vertices(); ++x) {
    const Vec2& px = mesh.vertices()[x];
    double total = 0.0;
    for (int j = 0; j < geom.n_detectors(); ++j) {
      const double rho = (px - geom.point(j)).norm();
      auto L0 = [rho](double t) { return xlogx(t - rho) + xlogx(t + rho) - 2.0 * t; };
      auto L1 = [rho](double t) { return 0.5 * (xlogx(t * t - rho * rho) - t * t); };
      const auto& gj = g[j];
      double a0 = L0(0.0), a1 = L1(0.0), sum = 0.0;
      for (int m = 0; m < nt - 1; ++m) {
        const double tb = tgrid[m + 1];
        const double b0 = L0(tb), b1 = L1(tb);
        const double beta = (gj[m + 1] - gj[m]) / dt;
        sum += (gj[m] - beta * tgrid[m]) * (b0 - a0) + beta * (b1 - a1);
        a0 = b0;
        a1 = b1;
      }
      total += geom.arc_weight() * sum;
    }
    out[x] = scale * total;
  }
  return out;
}

WaveOperator::WaveOperator(const SpatialMesh& mesh, DetectorGeometry geom, TimeGrid time, CutoffProfile cutoff,
                           std::size_t max_nonzeros)
    : n_vertices_(mesh.n_vertices()),
      geom_(std::move(geom)),
      time_(time),
      cutoff_(cutoff),
      abel_(abel_derivative_weights(time_)),
      window_(sample_window(time_, cutoff_)) {
  check_time_grid(time_, cutoff_);
  geom_.validate();
  const int nd = geom_.n_detectors(), nt = time_.n_times;
  CircleMeans means(mesh);
  std::vector<std::pair<int, double>> w;
  std::vector<int> outer(static_cast<std::size_t>(nd) * nt + 1, 0);
  std::vector<int> inner;
  std::vector<double> values;
  for (int j = 0; j < nd; ++j) {
    const Vec2 y = geom_.point(j);
    for (int q = 0; q < nt; ++q) {
      means.weights(y, time_.t(q), w);
      for (const auto& [v, c] : w) {
        inner.push_back(v);
        values.push_back(c);
      }
      if (inner.size() > max_nonzeros)
        throw ConfigError("wave operator needs more than " + std::to_string(max_nonzeros) +
                          " stored weights; reduce detector/time sampling or use the matrix-free wave_forward");
      outer[static_cast<std::size_t>(j) * nt + q + 1] = static_cast<int>(inner.size());
    }
  }
  means_ = Eigen::Map<const Eigen::SparseMatrix<double, Eigen::RowMajor>>(
      static_cast<Eigen::Index>(nd) * nt, n_vertices_, static_cast<Eigen::Index>(values.size()), outer.data(),
      inner.data(), values.data());
}

Eigen::MatrixXd WaveOperator::apply(const Eigen::VectorXd& h) const {
  if (h.size() != n_vertices_) throw InvalidArgument("wave operator: field size does not match mesh");
  const Eigen::VectorXd flat_means = means_ * h;  // index j * nt + q
  const Eigen::Map<const Eigen::MatrixXd> m(flat_means.data(), time_.n_times, geom_.n_detectors());
  return (m.transpose() * abel_.transpose()) * window_.asDiagonal();
}

Eigen::VectorXd WaveOperator::apply_transpose(const Eigen::MatrixXd& v) const {
  if (v.rows() != geom_.n_detectors() || v.cols() != time_.n_times)
    throw InvalidArgument("wave operator: data shape mismatch");
  const Eigen::MatrixXd mbar = (v * window_.asDiagonal()) * abel_;  // n_det x n_t
  const Eigen::MatrixXd mbar_t = mbar.transpose();
  const Eigen::Map<const Eigen::VectorXd> flat_bar(mbar_t.data(), mbar_t.size());
  return means_.transpose() * flat_bar;
}

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kPressureMagic[] = "QPATPRES1";

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated file " + path.string());
  return v;
}

}  // namespace

void write_pressure(const std::filesystem::path& path, const PressureData& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kPressureMagic, 9);
  put<std::uint64_t>(os, static_cast<std::uint64_t>(data.geometry.n_detectors()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(data.time.n_times));
  put<std::uint64_t>(os, 0);
  put<double>(os, data.geometry.radius);
  put<double>(os, data.time.dt());
  for (double a : data.geometry.angles) put<double>(os, a);
  for (int j = 0; j < data.values.rows(); ++j)
    for (int m = 0; m < data.values.cols(); ++m) put<double>(os, data.values(j, m));
  if (!os) throw DataError("failed writing " + path.string());
}

PressureData read_pressure(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[9];
  if (!is.read(magic, 9) || std::memcmp(magic, kPressureMagic, 9) != 0)
    throw DataError("bad magic in pressure file " + path.string());
  const auto nd = get<std::uint64_t>(is, path);
  const auto nt = get<std::uint64_t>(is, path);
  const auto reserved = get<std::uint64_t>(is, path);
  if (reserved != 0) throw DataError("nonzero reserved field in " + path.string());
  if (nd == 0 || nt < 3 || nd > (1u << 24) || nt > (1u << 24)) throw DataError("implausible dimensions in " + path.string());
  PressureData d;
  d.geometry.radius = get<double>(is, path);
  const double dt = get<double>(is, path);
  d.geometry.angles.resize(nd);
  for (auto& a : d.geometry.angles) a = get<double>(is, path);
  d.geometry.spacing = nd > 1 ? d.geometry.angles[1] - d.geometry.angles[0] : kPi;
  d.time.n_times = static_cast<int>(nt);
  d.time.t_max = dt * static_cast<double>(nt - 1);
  d.values.resize(static_cast<Eigen::Index>(nd), static_cast<Eigen::Index>(nt));
  for (Eigen::Index j = 0; j < d.values.rows(); ++j)
    for (Eigen::Index m = 0; m < d.values.cols(); ++m) d.values(j, m) = get<double>(is, path);
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
  return d;
}

}  // namespace qpat
