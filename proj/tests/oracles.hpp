#pragma once

// Brute-force reference computations, deliberately independent of the
// library's geometry code.

#include "motionforge/camera.hpp"
#include "motionforge/mesh.hpp"
#include "motionforge/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

namespace mftest {

using namespace motionforge;

// Generalized winding number (sum of signed solid angles / 4 pi).
inline double winding_number(const TriangleMesh& m, const Vec3& p) {
  double total = 0.0;
  for (const auto& t : m.triangles) {
    const Vec3 a = m.vertices[t[0]] - p, b = m.vertices[t[1]] - p, c = m.vertices[t[2]] - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * kPi);
}

inline bool inside_by_winding(const TriangleMesh& m, const Vec3& p) { return std::abs(winding_number(m, p)) > 0.5; }

// Clips the triangle against the box shrunk by `shrink`; any surviving area or
// segment means the triangle reaches the open interior.
inline bool triangle_enters_box(const Vec3& lo, const Vec3& hi, const Vec3& a, const Vec3& b, const Vec3& c,
                                double shrink = 1e-9) {
  std::vector<Vec3> poly = {a, b, c};
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side) {
      const double bound = side == 0 ? lo[axis] + shrink : hi[axis] - shrink;
      auto inside = [&](const Vec3& p) { return side == 0 ? p[axis] > bound : p[axis] < bound; };
      std::vector<Vec3> out;
      for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec3& p = poly[i];
        const Vec3& q = poly[(i + 1) % poly.size()];
        const bool pi = inside(p), qi = inside(q);
        if (pi) out.push_back(p);
        if (pi != qi) {
          const double s = (bound - p[axis]) / (q[axis] - p[axis]);
          out.push_back(p + s * (q - p));
        }
      }
      poly = std::move(out);
      if (poly.empty()) return false;
    }
  return true;
}

// Reference voxelization: a cell is 0 iff its center is inside (winding) or a
// triangle enters its interior (clipping).
inline std::vector<std::uint8_t> oracle_voxels(const TriangleMesh& m, const OccupancyGrid& like) {
  std::vector<std::uint8_t> out(like.size(), 1);
  const auto d = like.dims();
  const double cs = like.cell_size();
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy)
      for (int iz = 0; iz < d[2]; ++iz) {
        const Vec3 c = like.cell_center(ix, iy, iz);
        bool blocked = inside_by_winding(m, c);
        for (std::size_t t = 0; t < m.triangles.size() && !blocked; ++t) {
          const auto [a, b, cc] = m.corners(t);
          if ((b - a).cross(cc - a).norm() < 1e-14) continue;
          blocked = triangle_enters_box(c - Vec3::Constant(cs / 2), c + Vec3::Constant(cs / 2), a, b, cc);
        }
        out[like.index(ix, iy, iz)] = blocked ? 0 : 1;
      }
  return out;
}

// Distance from p to the triangle by dense barycentric search refinement:
// exact via projection onto the plane and the three edges.
inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (a + t * ab - p).norm();
}

inline double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a).normalized();
  const Vec3 q = p - n * n.dot(p - a);
  // Inside test by same-side signs of the edge normals.
  const double s0 = n.dot((b - a).cross(q - a)), s1 = n.dot((c - b).cross(q - b)), s2 = n.dot((a - c).cross(q - c));
  if (s0 >= 0 && s1 >= 0 && s2 >= 0) return std::abs(n.dot(p - a));
  return std::min({point_segment_distance(p, a, b), point_segment_distance(p, b, c), point_segment_distance(p, c, a)});
}

inline double mesh_distance(const TriangleMesh& m, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto [a, b, c] = m.corners(t);
    best = std::min(best, point_triangle_distance(p, a, b, c));
  }
  return best;
}

inline TriangleMesh transformed(TriangleMesh m, const Mat3& r, const Vec3& t) {
  for (auto& v : m.vertices) v = r * v + t;
  return m;
}

}  // namespace mftest

namespace mftest {

// Column walkability straight from the cell definition, then Dijkstra over
// 8 moves without corner cutting. Returns the cost in cells, or -1.
inline std::vector<std::vector<bool>> oracle_walkable(const OccupancyGrid& g) {
  const auto d = g.dims();
  std::vector<std::vector<bool>> w(d[0], std::vector<bool>(d[1], true));
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y)
      for (int z = 0; z < d[2]; ++z) {
        const double zc = g.cell_center(x, y, z).z();
        if (zc >= 0 && zc <= 1.8 && g.at(x, y, z) == 0) w[x][y] = false;
      }
  return w;
}

inline double oracle_path_cost(const std::vector<std::vector<bool>>& w, int sx, int sy, int gx, int gy) {
  const int nx = static_cast<int>(w.size()), ny = static_cast<int>(w[0].size());
  auto ok = [&](int x, int y) { return x >= 0 && y >= 0 && x < nx && y < ny && w[x][y]; };
  if (!ok(sx, sy) || !ok(gx, gy)) return -1;
  std::vector<double> dist(nx * ny, 1e300);
  std::set<std::pair<double, int>> frontier;
  dist[sx * ny + sy] = 0;
  frontier.insert({0.0, sx * ny + sy});
  while (!frontier.empty()) {
    auto [dc, c] = *frontier.begin();
    frontier.erase(frontier.begin());
    const int x = c / ny, y = c % ny;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy) {
        if (!dx && !dy) continue;
        if (!ok(x + dx, y + dy)) continue;
        if (dx && dy && !(ok(x + dx, y) && ok(x, y + dy))) continue;
        const double nd = dc + ((dx && dy) ? std::sqrt(2.0) : 1.0);
        const int nc = (x + dx) * ny + (y + dy);
        if (nd < dist[nc]) {
          frontier.erase({dist[nc], nc});
          dist[nc] = nd;
          frontier.insert({nd, nc});
        }
      }
  }
  return dist[gx * ny + gy] >= 1e299 ? -1 : dist[gx * ny + gy];
}

// Random 64x64 standing-band grid: scattered obstacle columns and a few walls.
inline OccupancyGrid random_plan_grid(Rng& rng, int n = 64, double density = 0.15) {
  OccupancyGrid g({n, n, 18}, Vec3(-3.2, -3.2, 0.0), 0.1, 1);
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y)
      if (rng.uniform() < density) g.set(x, y, static_cast<int>(rng.uniform_int(0, 17)), 0);
  for (int wall = 0; wall < 3; ++wall) {
    const bool vertical = rng.uniform() < 0.5;
    const int at = static_cast<int>(rng.uniform_int(0, n - 1));
    const int door = static_cast<int>(rng.uniform_int(0, n - 1));
    for (int i = 0; i < n; ++i)
      if (std::abs(i - door) > 1) vertical ? g.set(at, i, 9, 0) : g.set(i, at, 9, 0);
  }
  return g;
}

}  // namespace mftest

namespace mftest {

inline DpResult brute_force(const std::vector<std::vector<double>>& cov, const std::vector<std::vector<bool>>& feas,
                     const std::vector<double>& yaws, double lambda) {
  const int kf = static_cast<int>(cov.size()), n = static_cast<int>(yaws.size());
  std::vector<int> idx(kf, 0);
  DpResult best;
  best.cost = std::numeric_limits<double>::infinity();
  while (true) {
    bool ok = true;
    for (int k = 0; k < kf; ++k) ok &= feas[k][idx[k]];
    if (ok) {
      const double c = path_cost(idx, yaws, cov, lambda);
      if (c < best.cost - 1e-9) best = {idx, c};
    }
    int k = kf - 1;
    while (k >= 0 && ++idx[k] == n) idx[k--] = 0;
    if (k < 0) break;
  }
  return best;
}

// Dense solve of the natural spline moments, independent of the tridiagonal sweep.
inline std::vector<double> dense_spline(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& at) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
  a(0, 0) = a(n - 1, n - 1) = 1;
  for (int i = 1; i + 1 < n; ++i) {
    const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
    a(i, i - 1) = h0 / 6;
    a(i, i) = (h0 + h1) / 3;
    a(i, i + 1) = h1 / 6;
    r(i) = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
  }
  const Eigen::VectorXd m = a.fullPivLu().solve(r);
  std::vector<double> out;
  for (double t : at) {
    int s = 0;
    while (s + 2 < n && x[s + 1] < t) ++s;
    const double h = x[s + 1] - x[s], p = x[s + 1] - t, q = t - x[s];
    out.push_back(m(s) * p * p * p / (6 * h) + m(s + 1) * q * q * q / (6 * h) + (y[s] - m(s) * h * h / 6) * p / h +
                  (y[s + 1] - m(s + 1) * h * h / 6) * q / h);
  }
  return out;
}

inline std::vector<double> ring_yaws(int n) {
  std::vector<double> y;
  for (int i = 0; i < n; ++i) y.push_back(proposal_yaw(i, n));
  return y;
}

// Closed-form planar 2-link solution with unit links: bend angle from the law
// of cosines.
inline double analytic_bend(double d) { return kPi - std::acos(std::clamp((2.0 - d * d) / 2.0, -1.0, 1.0)); }

}  // namespace mftest
