#pragma once

// Triangle meshes: OBJ I/O, primitive builders and the geometric queries used
// by voxelization, contact annotation and camera visibility.

#include "motionforge/core.hpp"

#include <array>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace motionforge {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }

  void append(const TriangleMesh& other) {
    const int base = static_cast<int>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    for (auto t : other.triangles) triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  }

  std::array<Vec3, 3> corners(std::size_t tri) const {
    const auto& t = triangles[tri];
    return {vertices[t[0]], vertices[t[1]], vertices[t[2]]};
  }

  std::pair<Vec3, Vec3> bounds() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& v : vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return {lo, hi};
  }
};

// Triangles only; "f" entries may use v/vt/vn syntax, polygons are fanned.
inline TriangleMesh parse_obj(std::istream& in) {
  TriangleMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z()))
        throw Error(ErrorCode::ParseError, "bad vertex on OBJ line " + std::to_string(line_no));
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        const int resolved = i < 0 ? static_cast<int>(mesh.vertices.size()) + i : i - 1;
        if (resolved < 0 || resolved >= static_cast<int>(mesh.vertices.size()))
          throw Error(ErrorCode::ParseError, "face index out of range on OBJ line " + std::to_string(line_no));
        idx.push_back(resolved);
      }
      if (idx.size() < 3) throw Error(ErrorCode::ParseError, "face with < 3 vertices on line " + std::to_string(line_no));
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return mesh;
}

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return parse_obj(in);
}

inline std::string to_obj(const TriangleMesh& mesh) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  return out.str();
}

// Closed axis-aligned box, outward-facing triangles. `subdiv` splits each face
// into subdiv x subdiv quads.
inline TriangleMesh make_box(const Vec3& lo, const Vec3& hi, int subdiv = 1) {
  TriangleMesh m;
  auto face = [&](const Vec3& origin, const Vec3& du, const Vec3& dv) {
    const int base = static_cast<int>(m.vertices.size());
    for (int i = 0; i <= subdiv; ++i)
      for (int j = 0; j <= subdiv; ++j)
        m.vertices.push_back(origin + du * (double(i) / subdiv) + dv * (double(j) / subdiv));
    auto id = [&](int i, int j) { return base + i * (subdiv + 1) + j; };
    for (int i = 0; i < subdiv; ++i)
      for (int j = 0; j < subdiv; ++j) {
        m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
        m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
      }
  };
  const Vec3 d = hi - lo;
  const Vec3 ex(d.x(), 0, 0), ey(0, d.y(), 0), ez(0, 0, d.z());
  face(lo, ey, ex);               // -z
  face(lo + ez, ex, ey);          // +z
  face(lo, ex, ez);               // -y
  face(lo + ey, ez, ex);          // +y
  face(lo, ez, ey);               // -x
  face(lo + ex, ey, ez);          // +x
  return m;
}

// UV sphere with poles on the z axis.
inline TriangleMesh make_sphere(const Vec3& center, double radius, int rings = 16, int segments = 32) {
  TriangleMesh m;
  m.vertices.push_back(center + Vec3(0, 0, radius));
  for (int r = 1; r < rings; ++r) {
    const double th = kPi * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double ph = 2 * kPi * s / segments;
      m.vertices.push_back(center + radius * Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)));
    }
  }
  m.vertices.push_back(center - Vec3(0, 0, radius));
  const int south = static_cast<int>(m.vertices.size()) - 1;
  auto id = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) m.triangles.push_back({0, id(1, s), id(1, s + 1)});
  for (int r = 1; r + 1 < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      m.triangles.push_back({id(r, s), id(r + 1, s), id(r + 1, s + 1)});
      m.triangles.push_back({id(r, s), id(r + 1, s + 1), id(r, s + 1)});
    }
  for (int s = 0; s < segments; ++s) m.triangles.push_back({south, id(rings - 1, s + 1), id(rings - 1, s)});
  return m;
}

struct RayHit {
  double t = 0;
  double u = 0;
  double v = 0;
  std::size_t triangle = 0;
};

// Moller-Trumbore. Returns t > t_min on hit.
inline std::optional<RayHit> intersect_ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                                    const Vec3& c, double t_min = 0.0) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t <= t_min) return std::nullopt;
  return RayHit{t, u, v, 0};
}

// Nearest hit along the ray, if any.
inline std::optional<RayHit> raycast(const TriangleMesh& mesh, const Vec3& origin, const Vec3& dir) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto [a, b, c] = mesh.corners(i);
    if (auto h = intersect_ray_triangle(origin, dir, a, b, c)) {
      if (!best || h->t < best->t) {
        best = h;
        best->triangle = i;
      }
    }
  }
  return best;
}

// Closest point on triangle abc to p (Voronoi-region walk).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

struct ClosestPoint {
  Vec3 point = Vec3::Zero();
  double distance = std::numeric_limits<double>::infinity();
  std::size_t triangle = 0;
};

inline ClosestPoint closest_point(const TriangleMesh& mesh, const Vec3& p) {
  ClosestPoint best;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto [a, b, c] = mesh.corners(i);
    const Vec3 q = closest_point_on_triangle(p, a, b, c);
    const double d = (q - p).norm();
    if (d < best.distance) best = {q, d, i};
  }
  return best;
}

// Two-sided ray parity: inside iff the crossings along +d and along -d are
// both odd. Equals plain parity on closed meshes and keeps open sheets (a lone
// floor plane) from claiming a half-space. Rays that graze an edge or vertex
// are discarded and retried along another fixed direction.
inline bool point_inside(const TriangleMesh& mesh, const Vec3& p) {
  static const std::array<Vec3, 5> dirs = {
      Vec3(0.5773, 0.3141, 0.7539).normalized(), Vec3(-0.2718, 0.8284, 0.1414).normalized(),
      Vec3(0.1618, -0.6931, -0.7071).normalized(), Vec3(-0.9, -0.2, 0.38).normalized(),
      Vec3(0.33, 0.66, -0.67).normalized()};
  constexpr double eps = 1e-9;
  bool result = false;
  for (const auto& d : dirs) {
    int forward = 0, backward = 0;
    bool grazing = false;
    for (std::size_t i = 0; i < mesh.triangles.size() && !grazing; ++i) {
      const auto [a, b, c] = mesh.corners(i);
      for (int side = 0; side < 2 && !grazing; ++side) {
        const Vec3 dir = side == 0 ? d : Vec3(-d);
        if (auto h = intersect_ray_triangle(p, dir, a, b, c)) {
          const Vec3 n = (b - a).cross(c - a);
          const double cosang = std::abs(n.normalized().dot(d));
          if (h->u < eps || h->v < eps || h->u + h->v > 1 - eps || cosang < 1e-6) grazing = true;
          ++(side == 0 ? forward : backward);
        }
      }
    }
    result = forward % 2 == 1 && backward % 2 == 1;
    if (!grazing) return result;
  }
  return result;
}

// True when the triangle intersects the open interior of the axis-aligned box
// (separating-axis test with strict inequalities, so faces lying on a box
// boundary do not count).
inline bool triangle_overlaps_box_interior(const Vec3& box_center, const Vec3& half, const Vec3& a, const Vec3& b,
                                           const Vec3& c) {
  const Vec3 v0 = a - box_center, v1 = b - box_center, v2 = c - box_center;
  auto separated = [&](const Vec3& axis) {
    const double len = axis.norm();
    if (len < 1e-14) return false;
    const double p0 = v0.dot(axis), p1 = v1.dot(axis), p2 = v2.dot(axis);
    const double r = half.x() * std::abs(axis.x()) + half.y() * std::abs(axis.y()) + half.z() * std::abs(axis.z());
    const double mn = std::min({p0, p1, p2}), mx = std::max({p0, p1, p2});
    const double slack = 1e-12 * len * std::max(1.0, half.maxCoeff());
    return mn >= r - slack || mx <= -r + slack;
  };
  for (int k = 0; k < 3; ++k)
    if (separated(Vec3::Unit(k))) return false;
  const Vec3 e[3] = {v1 - v0, v2 - v1, v0 - v2};
  const Vec3 n = e[0].cross(e[1]);
  if (n.norm() < 1e-14) return false;
  if (separated(n)) return false;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      if (separated(Vec3::Unit(k).cross(e[i]))) return false;
  return true;
}

inline bool triangle_degenerate(const Vec3& a, const Vec3& b, const Vec3& c) {
  return (b - a).cross(c - a).norm() < 1e-14;
}

}  // namespace motionforge
