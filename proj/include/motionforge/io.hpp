#pragma once

// File formats, checkpoints and project configuration. Everything that
// writes goes through write_file_atomic: the bytes land in a temporary file
// next to the target and are renamed over it, so readers see either the old
// file or the new one.

#include "motionforge/action.hpp"
#include "motionforge/augment.hpp"
#include "motionforge/generator.hpp"
#include "motionforge/interact.hpp"
#include "motionforge/kinematics.hpp"
#include "motionforge/scene.hpp"

#include <boost/beast/core/detail/base64.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace motionforge::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- bytes on disk ----

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed: " + path);
  return ss.str();
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  static std::atomic<unsigned> counter{0};
  const fs::path target(path);
  const fs::path dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
  const fs::path tmp =
      dir / ("." + target.filename().string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot create " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot replace " + path);
  }
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, what + ": " + e.what());
  }
}

inline json load_json(const std::string& path) { return parse_json(read_file(path), path); }

inline void save_json(const std::string& path, const json& j) { write_file_atomic(path, j.dump(1) + "\n"); }

// Runs a JSON accessor, turning type and key errors into ParseError.
template <typename F>
auto reading(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, what + ": " + e.what());
  }
}

// ---- base64 and bitsets ----

inline std::string base64_encode(const std::string& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::string base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  if (text.size() % 4 != 0) throw Error(ErrorCode::ParseError, "base64 length must be a multiple of 4");
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  // The decoder stops at the first character outside the alphabet; only
  // padding may be left over.
  for (std::size_t i = read; i < text.size(); ++i)
    if (text[i] != '=' || text.size() - i > 2) throw Error(ErrorCode::ParseError, "invalid base64");
  out.resize(written);
  return out;
}

// Bit i goes to byte i/8, least significant bit first.
inline std::string pack_bits(const std::vector<bool>& bits) {
  std::string out((bits.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] = static_cast<char>(static_cast<unsigned char>(out[i / 8]) | (1u << (i % 8)));
  return out;
}

inline std::vector<bool> unpack_bits(const std::string& bytes, std::size_t n) {
  if (bytes.size() != (n + 7) / 8) throw Error(ErrorCode::ParseError, "bitset size mismatch");
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (static_cast<unsigned char>(bytes[i / 8]) >> (i % 8)) & 1u;
  for (std::size_t i = n; i < bytes.size() * 8; ++i)
    if ((static_cast<unsigned char>(bytes[i / 8]) >> (i % 8)) & 1u) throw Error(ErrorCode::ParseError, "bitset padding set");
  return out;
}

// ---- small helpers ----

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::ParseError, "expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Vec2 json_vec2(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::ParseError, "expected a 2-vector");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

// ---- skeleton ----

inline json skeleton_to_json(const Skeleton& s) {
  json bones = json::array();
  for (const auto& b : s.bones()) bones.push_back({{"name", b.name}, {"parent", b.parent}, {"offset", vec_json(b.offset)}});
  return {{"bones", bones}};
}

inline Skeleton skeleton_from_json(const json& j) {
  return reading("skeleton", [&] {
    std::vector<Bone> bones;
    for (const auto& b : j.at("bones")) bones.push_back({b.at("name").get<std::string>(), b.at("parent").get<int>(), json_vec3(b.at("offset"))});
    return Skeleton(std::move(bones));
  });
}

inline Skeleton load_skeleton(const std::string& path) { return skeleton_from_json(load_json(path)); }
inline void save_skeleton(const std::string& path, const Skeleton& s) { save_json(path, skeleton_to_json(s)); }

// ---- motion ----

struct MotionFile {
  double fps = 10.0;
  std::vector<std::string> joints;
  Motion frames;
};

inline std::vector<std::string> joint_names(const Skeleton& s) {
  std::vector<std::string> n;
  for (const auto& b : s.bones()) n.push_back(b.name);
  return n;
}

inline json motion_to_json(const MotionFile& m) {
  json frames = json::array();
  for (const auto& f : m.frames) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < f.rows(); ++i) rows.push_back({f(i, 0), f(i, 1), f(i, 2)});
    frames.push_back(std::move(rows));
  }
  return {{"fps", m.fps}, {"joints", m.joints}, {"frames", frames}};
}

inline MotionFile motion_from_json(const json& j) {
  return reading("motion", [&] {
    MotionFile m;
    m.fps = j.at("fps").get<double>();
    m.joints = j.at("joints").get<std::vector<std::string>>();
    require(m.fps > 0, ErrorCode::ParseError, "motion fps must be positive");
    for (const auto& f : j.at("frames")) {
      require(f.size() == m.joints.size(), ErrorCode::ParseError, "frame joint count differs from the joint list");
      JointFrame jf(static_cast<Eigen::Index>(f.size()), 3);
      for (std::size_t i = 0; i < f.size(); ++i) jf.row(static_cast<Eigen::Index>(i)) = json_vec3(f[i]).transpose();
      require(jf.allFinite(), ErrorCode::ParseError, "non-finite joint position");
      m.frames.push_back(std::move(jf));
    }
    return m;
  });
}

inline MotionFile load_motion(const std::string& path) { return motion_from_json(load_json(path)); }
inline void save_motion(const std::string& path, const MotionFile& m) { save_json(path, motion_to_json(m)); }

inline MotionFile make_motion_file(const Skeleton& s, const Motion& frames, double fps = 10.0) {
  return {fps, joint_names(s), frames};
}

// ---- actions ----

struct ActionFile {
  int n_actions = 0;
  std::vector<ActionSegment> segments;
};

inline json actions_to_json(const ActionFile& a) {
  json segs = json::array();
  for (const auto& s : a.segments) segs.push_back({{"action", s.action}, {"start", s.start}, {"end", s.end}});
  return {{"n_actions", a.n_actions}, {"segments", segs}};
}

inline ActionFile actions_from_json(const json& j) {
  return reading("actions", [&] {
    ActionFile a;
    a.n_actions = j.at("n_actions").get<int>();
    for (const auto& s : j.at("segments"))
      a.segments.push_back({s.at("action").get<int>(), s.at("start").get<int>(), s.at("end").get<int>()});
    validate_segments(a.segments, a.n_actions);
    return a;
  });
}

inline ActionFile load_actions(const std::string& path) { return actions_from_json(load_json(path)); }
inline void save_actions(const std::string& path, const ActionFile& a) { save_json(path, actions_to_json(a)); }

// ---- object tracks (points come from the object's OBJ) ----

inline json track_to_json(const ObjectTrack& t) {
  json frames = json::array();
  for (int f = 0; f < t.frames(); ++f) {
    json r = json::array();
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) r.push_back(t.rotations[f](i, c));
    frames.push_back({{"R", r}, {"T", vec_json(t.translations[f])}});
  }
  return {{"frames", frames}};
}

inline ObjectTrack track_from_json(const json& j, std::vector<Vec3> points = {}) {
  return reading("track", [&] {
    ObjectTrack t;
    t.points = std::move(points);
    for (const auto& f : j.at("frames")) {
      const auto& r = f.at("R");
      require(r.is_array() && r.size() == 9, ErrorCode::ParseError, "R must hold 9 numbers");
      Mat3 m;
      for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = r[static_cast<std::size_t>(i)].get<double>();
      t.rotations.push_back(m);
      t.translations.push_back(json_vec3(f.at("T")));
    }
    return t;
  });
}

inline ObjectTrack load_track(const std::string& path, std::vector<Vec3> points = {}) {
  return track_from_json(load_json(path), std::move(points));
}
inline void save_track(const std::string& path, const ObjectTrack& t) { save_json(path, track_to_json(t)); }

// ---- contacts ----

inline json contacts_to_json(const std::vector<ContactSet>& frames) {
  const std::size_t n = frames.empty() ? 0 : frames.front().size();
  json arr = json::array();
  for (const auto& f : frames) {
    require(f.size() == n, ErrorCode::ShapeMismatch, "contact sets differ in size");
    arr.push_back(base64_encode(pack_bits(f)));
  }
  return {{"vertex_count", n}, {"frames", arr}};
}

inline std::vector<ContactSet> contacts_from_json(const json& j) {
  return reading("contacts", [&] {
    const auto n = j.at("vertex_count").get<std::size_t>();
    std::vector<ContactSet> out;
    for (const auto& f : j.at("frames")) out.push_back(unpack_bits(base64_decode(f.get<std::string>()), n));
    return out;
  });
}

// ---- contact events ----

inline int joint_ref(const json& j, const Skeleton* skel) {
  if (j.is_string()) {
    require(skel != nullptr, ErrorCode::ParseError, "joint names need a skeleton");
    const auto i = skel->find(j.get<std::string>());
    require(i.has_value(), ErrorCode::ParseError, "unknown joint " + j.get<std::string>());
    return *i;
  }
  return j.get<int>();
}

inline json events_to_json(const std::vector<ContactEvent>& ev) {
  json arr = json::array();
  for (const auto& e : ev)
    arr.push_back({{"joint", e.joint}, {"frame_start", e.frame_start}, {"frame_end", e.frame_end},
                   {"point_old", vec_json(e.point_old)}, {"point_new", vec_json(e.point_new)}});
  return {{"events", arr}};
}

// Accepts {"events":[...]} or a bare array; joints by index or name.
inline std::vector<ContactEvent> events_from_json(const json& j, const Skeleton* skel = nullptr) {
  return reading("events", [&] {
    const json& arr = j.is_array() ? j : j.at("events");
    std::vector<ContactEvent> out;
    for (const auto& e : arr) {
      ContactEvent c;
      c.joint = joint_ref(e.at("joint"), skel);
      c.frame_start = e.at("frame_start").get<int>();
      c.frame_end = e.at("frame_end").get<int>();
      c.point_old = json_vec3(e.at("point_old"));
      c.point_new = json_vec3(e.at("point_new"));
      require(c.frame_start <= c.frame_end, ErrorCode::ParseError, "event ends before it starts");
      out.push_back(c);
    }
    return out;
  });
}

// ---- subgoals ----

struct SubgoalFile {
  Vec2 start = Vec2::Zero();
  std::vector<Subgoal> subgoals;
};

inline json subgoal_to_json(const Subgoal& g) {
  if (g.kind == Subgoal::Kind::Navigation) return {{"xy", {g.xy.x(), g.xy.y()}}};
  return {{"joint", g.joint}, {"xyz", vec_json(g.xyz)}};
}

inline Subgoal subgoal_from_json(const json& g, const Skeleton* skel) {
  if (g.contains("xy")) return Subgoal::navigation(json_vec2(g.at("xy")));
  return Subgoal::reach(joint_ref(g.at("joint"), skel), json_vec3(g.at("xyz")));
}

inline SubgoalFile subgoals_from_json(const json& j, const Skeleton* skel = nullptr) {
  return reading("subgoals", [&] {
    SubgoalFile f;
    if (j.contains("start")) f.start = json_vec2(j.at("start"));
    for (const auto& g : j.at("subgoals")) f.subgoals.push_back(subgoal_from_json(g, skel));
    require(!f.subgoals.empty(), ErrorCode::ParseError, "no subgoals");
    return f;
  });
}

// ---- grids ----

inline void save_grid(const std::string& path, const OccupancyGrid& g) { write_file_atomic(path, encode_grid(g)); }

inline json grid_message(const OccupancyGrid& g) {
  const Vec3 o = g.origin();
  const std::string bytes(g.data().begin(), g.data().end());
  return {{"dims", {g.dims()[0], g.dims()[1], g.dims()[2]}},
          {"origin", {o.x(), o.y(), o.z()}},
          {"cell_size", g.cell_size()},
          {"data_b64", base64_encode(bytes)}};
}

// ---- checkpoints ----

inline constexpr const char* kCheckpointFormat = "motionforge-checkpoint";

inline json generator_config_to_json(const GeneratorConfig& c) {
  const auto& m = c.model;
  return {{"model",
           {{"width", m.width}, {"layers", m.layers}, {"heads", m.heads}, {"ffn", m.ffn}, {"dropout", m.dropout},
            {"max_frames", m.max_frames}, {"joint_dim", m.joint_dim}, {"diffusion_steps", m.diffusion_steps},
            {"scene_token_dim", m.scene_token_dim}, {"scene_tokens", m.scene_tokens}, {"n_actions", m.n_actions},
            {"encoder_layers", m.encoder_layers}, {"encoder_heads", m.encoder_heads}, {"encoder_ffn", m.encoder_ffn},
            {"positional_encoding", m.positional_encoding}, {"input_skip", m.input_skip}}},
          {"k", c.k},
          {"local", {{"nx", c.local.nx}, {"ny", c.local.ny}, {"nz", c.local.nz}, {"cell", c.local.cell}}},
          {"patch", c.patch},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"clip_x0", c.clip_x0}};
}

inline GeneratorConfig generator_config_from_json(const json& j) {
  return reading("generator config", [&] {
    GeneratorConfig c;
    const json& m = j.at("model");
    c.model.width = m.at("width");
    c.model.layers = m.at("layers");
    c.model.heads = m.at("heads");
    c.model.ffn = m.at("ffn");
    c.model.dropout = m.at("dropout");
    c.model.max_frames = m.at("max_frames");
    c.model.joint_dim = m.at("joint_dim");
    c.model.diffusion_steps = m.at("diffusion_steps");
    c.model.scene_token_dim = m.at("scene_token_dim");
    c.model.scene_tokens = m.at("scene_tokens");
    c.model.n_actions = m.at("n_actions");
    c.model.encoder_layers = m.at("encoder_layers");
    c.model.encoder_heads = m.at("encoder_heads");
    c.model.encoder_ffn = m.at("encoder_ffn");
    c.model.positional_encoding = m.at("positional_encoding");
    c.model.input_skip = m.value("input_skip", true);
    c.k = j.at("k");
    c.local.nx = j.at("local").at("nx");
    c.local.ny = j.at("local").at("ny");
    c.local.nz = j.at("local").at("nz");
    c.local.cell = j.at("local").at("cell");
    c.patch = j.at("patch");
    c.beta_start = j.at("beta_start");
    c.beta_end = j.at("beta_end");
    c.clip_x0 = j.value("clip_x0", 0.0);
    c.model.validate();
    return c;
  });
}

struct CheckpointInfo {
  std::uint64_t seed = 0;
  int trained_steps = 0;
};

namespace detail {

inline std::string blob_path_for(const std::string& manifest_path) {
  fs::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

inline void append_f32(std::string& out, const double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) motionforge::detail::put_le(out, static_cast<float>(v[i]));
}

inline void read_f32(const std::string& blob, std::size_t& pos, double* v, std::size_t n) {
  if (pos + 4 * n > blob.size()) throw Error(ErrorCode::ParseError, "checkpoint blob is truncated");
  for (std::size_t i = 0; i < n; ++i) v[i] = motionforge::detail::get_le<float>(blob, pos);
}

}  // namespace detail

// Manifest JSON at `path`, parameters as little-endian f32 in manifest order
// in the sibling .bin file. The normalizer rides along as two extra tensors.
inline void save_checkpoint(const std::string& path, const MotionGenerator& gen, const CheckpointInfo& info = {}) {
  const auto& ps = gen.model().params();
  json tensors = json::array();
  for (const auto& t : ps.tensors()) tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  const auto& norm = gen.normalizer();
  for (const char* n : {"normalizer.mean", "normalizer.scale"})
    tensors.push_back({{"name", n}, {"rows", norm.mean.rows()}, {"cols", norm.mean.cols()}});

  std::string blob;
  blob.reserve(4 * (ps.size() + 2 * static_cast<std::size_t>(norm.mean.size())));
  detail::append_f32(blob, ps.values().data(), ps.size());
  detail::append_f32(blob, norm.mean.data(), static_cast<std::size_t>(norm.mean.size()));
  detail::append_f32(blob, norm.scale.data(), static_cast<std::size_t>(norm.scale.size()));

  const std::string blob_path = detail::blob_path_for(path);
  const json manifest = {{"format", kCheckpointFormat},
                         {"version", 1},
                         {"dtype", "f32le"},
                         {"seed", info.seed},
                         {"trained_steps", info.trained_steps},
                         {"generator", generator_config_to_json(gen.config())},
                         {"blob", fs::path(blob_path).filename().string()},
                         {"tensors", tensors}};
  write_file_atomic(blob_path, blob);
  save_json(path, manifest);
}

inline MotionGenerator load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr) {
  const json m = load_json(path);
  return reading("checkpoint " + path, [&] {
    require(m.at("format") == kCheckpointFormat, ErrorCode::ParseError, "not a checkpoint manifest");
    require(m.at("version") == 1 && m.at("dtype") == "f32le", ErrorCode::ParseError, "unsupported checkpoint version");
    const GeneratorConfig cfg = generator_config_from_json(m.at("generator"));
    const Normalizer blank = Normalizer::identity(cfg.model.max_frames, cfg.model.joint_dim);
    MotionGenerator gen(cfg, blank, 0);
    auto& ps = gen.model().params();
    const auto& tensors = m.at("tensors");
    require(tensors.size() == ps.tensors().size() + 2, ErrorCode::ParseError, "checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < ps.tensors().size(); ++i) {
      const auto& t = ps.tensors()[i];
      require(tensors[i].at("name") == t.name && tensors[i].at("rows") == t.rows && tensors[i].at("cols") == t.cols,
              ErrorCode::ParseError, "checkpoint tensor " + t.name + " does not match the model");
    }
    const fs::path blob_path = fs::path(path).parent_path() / m.at("blob").get<std::string>();
    const std::string blob = read_file(blob_path.string());
    Normalizer norm = blank;
    const auto n = static_cast<std::size_t>(norm.mean.size());
    require(blob.size() == 4 * (ps.size() + 2 * n), ErrorCode::ParseError, "checkpoint blob size mismatch");
    std::size_t pos = 0;
    detail::read_f32(blob, pos, ps.values().data(), ps.size());
    detail::read_f32(blob, pos, norm.mean.data(), n);
    detail::read_f32(blob, pos, norm.scale.data(), n);
    require(ps.values().allFinite() && norm.mean.allFinite() && norm.scale.allFinite(), ErrorCode::ParseError,
            "non-finite checkpoint values");
    if (info) *info = {m.at("seed").get<std::uint64_t>(), m.at("trained_steps").get<int>()};
    MotionGenerator out(cfg, norm, 0);
    out.model().params().values() = ps.values();
    return out;
  });
}

// ---- project configuration ----

struct ProjectConfig {
  std::string grid_path;
  std::string skeleton_path;
  std::string checkpoint_path;

  int diffusion_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int length = 16;
  int k = 2;

  LocalGridSpec local;
  int patch = 8;
  int n_actions = 12;

  std::string bind = "127.0.0.1";
  int port = 8765;
};

inline constexpr const char* kConfigEnv = "MOTIONFORGE_CONFIG";

// An explicit path wins; otherwise the environment variable, if set.
inline std::string config_path(const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  const char* env = std::getenv(kConfigEnv);
  return env ? std::string(env) : std::string();
}

inline void validate_config(const ProjectConfig& c) {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::InvalidInput, "config: " + msg); };
  check(c.diffusion_steps >= 1 && c.diffusion_steps <= 1000, "diffusion steps must be in [1, 1000]");
  check(c.beta_start > 0 && c.beta_start <= c.beta_end && c.beta_end < 1, "need 0 < beta_start <= beta_end < 1");
  check(c.k >= 1 && c.length > c.k, "need 1 <= k < length");
  check(c.local.nx > 0 && c.local.ny > 0 && c.local.nz > 0 && c.local.cell > 0, "local grid dims must be positive");
  check(c.patch > 0 && c.local.nx % c.patch == 0 && c.local.ny % c.patch == 0, "patch side must divide the local grid");
  check(c.n_actions >= 1, "n_actions must be at least 1");
  check(c.port >= 0 && c.port <= 65535, "port out of range");
  for (const auto* p : {&c.grid_path, &c.skeleton_path, &c.checkpoint_path})
    if (!p->empty()) require(fs::exists(*p), ErrorCode::IoError, "config: missing file " + *p);
}

inline ProjectConfig config_from_json(const json& j, const fs::path& base = {}) {
  ProjectConfig c;
  reading("config", [&] {
    auto path = [&](const json& o, const char* key, std::string& dst) {
      if (!o.contains(key)) return;
      fs::path p = o.at(key).get<std::string>();
      dst = (p.is_relative() && !base.empty() ? base / p : p).string();
    };
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      path(p, "grid", c.grid_path);
      path(p, "skeleton", c.skeleton_path);
      path(p, "checkpoint", c.checkpoint_path);
    }
    if (j.contains("diffusion")) {
      const auto& d = j.at("diffusion");
      c.diffusion_steps = d.value("steps", c.diffusion_steps);
      c.beta_start = d.value("beta_start", c.beta_start);
      c.beta_end = d.value("beta_end", c.beta_end);
      c.length = d.value("length", c.length);
      c.k = d.value("k", c.k);
    }
    if (j.contains("scene")) {
      const auto& s = j.at("scene");
      c.local.nx = s.value("nx", c.local.nx);
      c.local.ny = s.value("ny", c.local.ny);
      c.local.nz = s.value("nz", c.local.nz);
      c.local.cell = s.value("cell", c.local.cell);
      c.patch = s.value("patch", c.patch);
    }
    if (j.contains("actions")) c.n_actions = j.at("actions").value("n_actions", c.n_actions);
    if (j.contains("service")) {
      c.bind = j.at("service").value("bind", c.bind);
      c.port = j.at("service").value("port", c.port);
    }
    return 0;
  });
  validate_config(c);
  return c;
}

// Relative paths inside the file resolve against the file's directory.
inline ProjectConfig load_config(const std::string& path) {
  return config_from_json(load_json(path), fs::path(path).parent_path());
}

inline GeneratorConfig generator_config(const ProjectConfig& p, const DenoiserConfig& base = {}) {
  GeneratorConfig g;
  g.model = base;
  g.model.diffusion_steps = p.diffusion_steps;
  g.model.max_frames = p.length;
  g.model.n_actions = p.n_actions;
  g.model.scene_token_dim = p.patch * p.patch * p.local.nz;
  g.model.scene_tokens = (p.local.nx / p.patch) * (p.local.ny / p.patch);
  g.k = p.k;
  g.local = p.local;
  g.patch = p.patch;
  g.beta_start = p.beta_start;
  g.beta_end = p.beta_end;
  return g;
}

}  // namespace motionforge::io
