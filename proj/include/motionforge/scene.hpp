#pragma once

// Occupancy grids: mesh voxelization, the yaw-aligned local grid query and
// xy patch tokenization with z as channels.

#include "motionforge/core.hpp"
#include "motionforge/mesh.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace motionforge {

// Boolean voxels, 1 = reachable. Index order ((ix * ny) + iy) * nz + iz.
// Origin and cell size are kept at single precision so the binary file
// round-trips exactly.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;

  OccupancyGrid(std::array<int, 3> dims, const Vec3& origin, double cell_size, std::uint8_t fill = 1)
      : dims_(dims), cell_(static_cast<float>(cell_size)) {
    require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, ErrorCode::InvalidInput, "grid dims must be positive");
    require(cell_size > 0, ErrorCode::InvalidInput, "cell size must be positive");
    for (int k = 0; k < 3; ++k) origin_[k] = static_cast<float>(origin[k]);
    data_.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], fill);
  }

  const std::array<int, 3>& dims() const { return dims_; }
  Vec3 origin() const { return Vec3(origin_[0], origin_[1], origin_[2]); }
  double cell_size() const { return cell_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * dims_[1] + iy) * dims_[2] + iz;
  }
  bool in_bounds(int ix, int iy, int iz) const {
    return ix >= 0 && iy >= 0 && iz >= 0 && ix < dims_[0] && iy < dims_[1] && iz < dims_[2];
  }
  std::uint8_t at(int ix, int iy, int iz) const { return data_[index(ix, iy, iz)]; }
  void set(int ix, int iy, int iz, std::uint8_t v) { data_[index(ix, iy, iz)] = v; }

  Vec3 cell_center(int ix, int iy, int iz) const {
    return origin() + cell_size() * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
  }

  // Nearest-cell lookup; points outside the grid read as unreachable.
  std::uint8_t sample(const Vec3& p) const {
    const Vec3 rel = (p - origin()) / cell_size();
    const int ix = static_cast<int>(std::floor(rel.x()));
    const int iy = static_cast<int>(std::floor(rel.y()));
    const int iz = static_cast<int>(std::floor(rel.z()));
    return in_bounds(ix, iy, iz) ? at(ix, iy, iz) : 0;
  }

  bool operator==(const OccupancyGrid& o) const {
    return dims_ == o.dims_ && origin_ == o.origin_ && cell_ == o.cell_ && data_ == o.data_;
  }

 private:
  std::array<int, 3> dims_{0, 0, 0};
  std::array<float, 3> origin_{0, 0, 0};
  float cell_ = 0;
  std::vector<std::uint8_t> data_;
};

struct VoxelizeResult {
  OccupancyGrid grid;
  int degenerate_triangles = 0;
};

// A cell is unreachable iff its center lies inside the mesh or a triangle cuts
// its interior. Inside tests use two-sided vertical ray parity per column (see
// point_inside), falling back to the generic point test when the column
// grazes an edge.
inline VoxelizeResult voxelize(const TriangleMesh& mesh, const Vec3& lo, const Vec3& hi, double cell_size) {
  require(cell_size > 0, ErrorCode::InvalidInput, "cell size must be positive");
  require((hi.array() > lo.array()).all(), ErrorCode::InvalidInput, "empty bounds");
  std::array<int, 3> dims;
  for (int k = 0; k < 3; ++k) dims[k] = std::max(1, static_cast<int>(std::ceil((hi[k] - lo[k]) / cell_size - 1e-9)));
  VoxelizeResult res{OccupancyGrid(dims, lo, cell_size, 1), 0};
  OccupancyGrid& g = res.grid;
  const Vec3 origin = g.origin();
  const double cs = g.cell_size();

  TriangleMesh clean;
  clean.vertices = mesh.vertices;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto [a, b, c] = mesh.corners(i);
    if (triangle_degenerate(a, b, c) || !a.allFinite() || !b.allFinite() || !c.allFinite()) {
      ++res.degenerate_triangles;
      continue;
    }
    clean.triangles.push_back(mesh.triangles[i]);
  }
  if (clean.empty()) return res;

  auto clamp_cell = [&](double x, int k) { return std::clamp(static_cast<int>(std::floor((x - origin[k]) / cs)), 0, dims[k] - 1); };

  // Surface cells.
  const Vec3 half = Vec3::Constant(0.5 * cs);
  for (std::size_t i = 0; i < clean.triangles.size(); ++i) {
    const auto [a, b, c] = clean.corners(i);
    const Vec3 tlo = a.cwiseMin(b).cwiseMin(c), thi = a.cwiseMax(b).cwiseMax(c);
    if ((thi.array() < origin.array()).any()) continue;
    const int x0 = clamp_cell(tlo.x(), 0), x1 = clamp_cell(thi.x(), 0);
    const int y0 = clamp_cell(tlo.y(), 1), y1 = clamp_cell(thi.y(), 1);
    const int z0 = clamp_cell(tlo.z(), 2), z1 = clamp_cell(thi.z(), 2);
    for (int ix = x0; ix <= x1; ++ix)
      for (int iy = y0; iy <= y1; ++iy)
        for (int iz = z0; iz <= z1; ++iz)
          if (g.at(ix, iy, iz) && triangle_overlaps_box_interior(g.cell_center(ix, iy, iz), half, a, b, c))
            g.set(ix, iy, iz, 0);
  }

  // Interior cells.
  const Vec3 up = Vec3::UnitZ();
  const double z_start = origin.z() - 1.0;
  std::vector<double> hits;
  for (int ix = 0; ix < dims[0]; ++ix) {
    for (int iy = 0; iy < dims[1]; ++iy) {
      const Vec3 c0 = g.cell_center(ix, iy, 0);
      const Vec3 ray_origin(c0.x(), c0.y(), z_start);
      hits.clear();
      bool grazing = false;
      for (std::size_t i = 0; i < clean.triangles.size() && !grazing; ++i) {
        const auto [a, b, c] = clean.corners(i);
        if (std::min({a.x(), b.x(), c.x()}) > c0.x() || std::max({a.x(), b.x(), c.x()}) < c0.x()) continue;
        if (std::min({a.y(), b.y(), c.y()}) > c0.y() || std::max({a.y(), b.y(), c.y()}) < c0.y()) continue;
        if (auto h = intersect_ray_triangle(ray_origin, up, a, b, c, -1e300)) {
          constexpr double eps = 1e-9;
          const Vec3 n = (b - a).cross(c - a).normalized();
          if (h->u < eps || h->v < eps || h->u + h->v > 1 - eps || std::abs(n.z()) < 1e-9) grazing = true;
          hits.push_back(h->t + z_start);
        }
      }
      if (grazing) {
        for (int iz = 0; iz < dims[2]; ++iz)
          if (g.at(ix, iy, iz) && point_inside(clean, g.cell_center(ix, iy, iz))) g.set(ix, iy, iz, 0);
        continue;
      }
      std::sort(hits.begin(), hits.end());
      for (int iz = 0; iz < dims[2]; ++iz) {
        const double z = g.cell_center(ix, iy, iz).z();
        const auto below = std::lower_bound(hits.begin(), hits.end(), z) - hits.begin();
        const auto above = hits.end() - std::upper_bound(hits.begin(), hits.end(), z);
        if (below % 2 == 1 && above % 2 == 1) g.set(ix, iy, iz, 0);
      }
    }
  }
  return res;
}

// Local crop spanning world z in [0, vertical_extent].
struct LocalGridSpec {
  int nx = 32;
  int ny = 32;
  int nz = 18;
  double cell = 0.1;

  static constexpr double kVerticalExtent = 1.8;
};

struct LocalGrid {
  int nx = 0, ny = 0, nz = 0;
  double cell = 0;
  Vec2 center_xy = Vec2::Zero();
  double yaw = 0;
  std::vector<std::uint8_t> data;  // ((i * ny) + j) * nz + k

  std::uint8_t at(int i, int j, int k) const { return data[(static_cast<std::size_t>(i) * ny + j) * nz + k]; }
};

// World sample point of local cell (i, j, k): the local offset of the cell
// center is rotated by yaw about z and translated to center_xy.
inline Vec3 local_cell_world_point(const LocalGridSpec& spec, const Vec2& center_xy, double yaw, int i, int j, int k) {
  const double ox = (i + 0.5) * spec.cell - 0.5 * spec.nx * spec.cell;
  const double oy = (j + 0.5) * spec.cell - 0.5 * spec.ny * spec.cell;
  const double c = std::cos(yaw), s = std::sin(yaw);
  return Vec3(center_xy.x() + c * ox - s * oy, center_xy.y() + s * ox + c * oy, (k + 0.5) * spec.cell);
}

inline LocalGrid query_local_grid(const OccupancyGrid& grid, const Vec2& center_xy, double yaw,
                                  const LocalGridSpec& spec = {}) {
  require(spec.nx > 0 && spec.ny > 0 && spec.nz > 0 && spec.cell > 0, ErrorCode::InvalidInput, "bad local grid spec");
  require(std::abs(spec.nz * spec.cell - LocalGridSpec::kVerticalExtent) < 1e-9, ErrorCode::InvalidInput,
          "local grid must span 0 to 1.8 m vertically");
  LocalGrid out{spec.nx, spec.ny, spec.nz, spec.cell, center_xy, yaw, {}};
  out.data.resize(static_cast<std::size_t>(spec.nx) * spec.ny * spec.nz);
  std::size_t idx = 0;
  for (int i = 0; i < spec.nx; ++i)
    for (int j = 0; j < spec.ny; ++j)
      for (int k = 0; k < spec.nz; ++k) out.data[idx++] = grid.sample(local_cell_world_point(spec, center_xy, yaw, i, j, k));
  return out;
}

struct SceneTokens {
  int patch = 0;
  int rows = 0;  // patches along local x
  int cols = 0;  // patches along local y
  MatX tokens;   // (rows * cols) x (patch * patch * nz)
};

// Tokens row-major over the patch grid; each flattens its p x p x nz block
// with z fastest.
inline SceneTokens patchify(const LocalGrid& local, int patch) {
  require(patch > 0 && local.nx % patch == 0 && local.ny % patch == 0, ErrorCode::ShapeMismatch,
          "patch side must divide the local grid");
  SceneTokens st{patch, local.nx / patch, local.ny / patch, MatX()};
  st.tokens.resize(st.rows * st.cols, patch * patch * local.nz);
  for (int pr = 0; pr < st.rows; ++pr)
    for (int pc = 0; pc < st.cols; ++pc) {
      int f = 0;
      for (int a = 0; a < patch; ++a)
        for (int b = 0; b < patch; ++b)
          for (int k = 0; k < local.nz; ++k) st.tokens(pr * st.cols + pc, f++) = local.at(pr * patch + a, pc * patch + b, k);
    }
  return st;
}

inline LocalGrid depatchify(const SceneTokens& st, int nz) {
  const int p = st.patch;
  LocalGrid out;
  out.nx = st.rows * p;
  out.ny = st.cols * p;
  out.nz = nz;
  out.data.resize(static_cast<std::size_t>(out.nx) * out.ny * nz);
  for (int pr = 0; pr < st.rows; ++pr)
    for (int pc = 0; pc < st.cols; ++pc) {
      int f = 0;
      for (int a = 0; a < p; ++a)
        for (int b = 0; b < p; ++b)
          for (int k = 0; k < nz; ++k)
            out.data[(static_cast<std::size_t>(pr * p + a) * out.ny + (pc * p + b)) * nz + k] =
                static_cast<std::uint8_t>(st.tokens(pr * st.cols + pc, f++));
    }
  return out;
}

// ---- Grid file ------------------------------------------------------------

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T> && sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw Error(ErrorCode::ParseError, "truncated grid file");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace detail

inline constexpr char kGridMagic[16] = {'M', 'F', 'G', 'R', 'I', 'D', '0', '1', 0, 0, 0, 0, 0, 0, 0, 0};

inline std::string encode_grid(const OccupancyGrid& g) {
  std::string out(kGridMagic, 16);
  for (int k = 0; k < 3; ++k) detail::put_le(out, static_cast<std::uint32_t>(g.dims()[k]));
  const Vec3 o = g.origin();
  for (int k = 0; k < 3; ++k) detail::put_le(out, static_cast<float>(o[k]));
  detail::put_le(out, static_cast<float>(g.cell_size()));
  out.append(reinterpret_cast<const char*>(g.data().data()), g.data().size());
  return out;
}

inline OccupancyGrid decode_grid(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 16, std::string(kGridMagic, 16)) != 0)
    throw Error(ErrorCode::ParseError, "not a grid file (bad magic)");
  std::size_t pos = 16;
  std::array<int, 3> dims;
  for (int k = 0; k < 3; ++k) dims[k] = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  Vec3 origin;
  for (int k = 0; k < 3; ++k) origin[k] = detail::get_le<float>(bytes, pos);
  const double cell = detail::get_le<float>(bytes, pos);
  OccupancyGrid g(dims, origin, cell, 1);
  if (bytes.size() - pos != g.size()) throw Error(ErrorCode::ParseError, "grid payload size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
    if (v > 1) throw Error(ErrorCode::ParseError, "grid cell value must be 0 or 1");
    g.data()[i] = v;
  }
  return g;
}

inline OccupancyGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_grid(bytes);
}

}  // namespace motionforge
