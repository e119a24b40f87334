// motionforge command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error (anything the library
// rejects, plus I/O failures).

#include "motionforge/augment.hpp"
#include "motionforge/camera.hpp"
#include "motionforge/generator.hpp"
#include "motionforge/interact.hpp"
#include "motionforge/io.hpp"
#include "motionforge/service.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace motionforge;
using io::json;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

struct Globals {
  std::string config;
  std::optional<io::ProjectConfig> project;

  const io::ProjectConfig* load() {
    if (!project) {
      const std::string path = io::config_path(config);
      if (path.empty()) return nullptr;
      project = io::load_config(path);
    }
    return &*project;
  }
};

Vec2 vec2_of(const std::vector<double>& v) { return Vec2(v.at(0), v.at(1)); }
Vec3 vec3_of(const std::vector<double>& v) { return Vec3(v.at(0), v.at(1), v.at(2)); }

Skeleton resolve_skeleton(const std::string& flag, Globals& g) {
  if (!flag.empty()) return io::load_skeleton(flag);
  if (const auto* p = g.load(); p && !p->skeleton_path.empty()) return io::load_skeleton(p->skeleton_path);
  return default_humanoid();
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string pick(const std::string& flag, Globals& g, std::string io::ProjectConfig::*field) {
  if (!flag.empty()) return flag;
  if (const auto* p = g.load()) return p->*field;
  return {};
}

std::string need(const std::string& flag, Globals& g, std::string io::ProjectConfig::*field, const char* name) {
  std::string v = pick(flag, g, field);
  if (v.empty()) throw UsageError(std::string(name) + " is required (flag or project config)");
  return v;
}

io::MotionFile load_motion_for(const std::string& path, const Skeleton& skel) {
  auto m = io::load_motion(path);
  require(m.joints == io::joint_names(skel), ErrorCode::ShapeMismatch, path + ": joints do not match the skeleton");
  require(!m.frames.empty(), ErrorCode::InvalidInput, path + ": no frames");
  return m;
}

std::optional<OccupancyGrid> maybe_grid(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_grid(path);
}

// ---- subcommands ----

struct VoxelizeArgs {
  std::string obj, out;
  std::vector<double> lo, hi;
  double cell = 0.1;
  double pad = 0.0;
};

int run_voxelize(const VoxelizeArgs& a) {
  const TriangleMesh mesh = load_obj(a.obj);
  Vec3 lo, hi;
  if (!a.lo.empty()) {
    lo = vec3_of(a.lo);
    hi = vec3_of(a.hi);
  } else {
    require(!mesh.vertices.empty(), ErrorCode::InvalidInput, "empty mesh needs --lo/--hi");
    std::tie(lo, hi) = mesh.bounds();
    lo.array() -= a.pad;
    hi.array() += a.pad;
  }
  const auto r = voxelize(mesh, lo, hi, a.cell);
  io::save_grid(a.out, r.grid);
  if (r.degenerate_triangles > 0) std::fprintf(stderr, "warning: %d degenerate triangles\n", r.degenerate_triangles);
  return 0;
}

struct ModelArgs {
  int width = 64, layers = 2, heads = 4, ffn = 128;
  int length = 16, k = 2, steps = 50;
  CLI::App* cmd = nullptr;

  bool set(const char* name) const { return cmd->get_option(name)->count() > 0; }

  void add(CLI::App* c) {
    cmd = c;
    c->add_option("--width", width, "denoiser width");
    c->add_option("--layers", layers, "denoiser layers");
    c->add_option("--heads", heads, "attention heads");
    c->add_option("--ffn", ffn, "feed-forward width");
    c->add_option("--length", length, "episode length L");
    c->add_option("--k", k, "transition frames");
    c->add_option("--diffusion-steps", steps, "diffusion steps T");
  }

  GeneratorConfig config(Globals& g) const {
    GeneratorConfig c;
    if (const auto* p = g.load()) c = io::generator_config(*p);
    c.model.width = width;
    c.model.layers = layers;
    c.model.heads = heads;
    c.model.ffn = ffn;
    c.model.encoder_heads = heads;
    if (!g.load() || set("--length")) c.model.max_frames = length;
    if (!g.load() || set("--k")) c.k = k;
    if (!g.load() || set("--diffusion-steps")) c.model.diffusion_steps = steps;
    c.model.validate();
    return c;
  }
};

struct TrainArgs {
  ModelArgs model;
  std::string out, grid_out, scene_out;
  std::vector<std::string> motions;
  int clips = 200;
  int steps = 2000, batch = 16;
  double lr = 1e-3, final_lr = 1e-4, budget = 0;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a, Globals& g) {
  const GeneratorConfig cfg = a.model.config(g);
  std::vector<MatX> clips;
  std::optional<OccupancyGrid> grid;
  if (a.motions.empty()) {
    CorridorConfig cc;
    cc.clips = a.clips;
    const auto corpus = make_corridor_corpus(cc, a.seed);
    clips = corpus.clips;
    grid = corpus.grid;
    if (!a.grid_out.empty()) io::save_grid(a.grid_out, corpus.grid);
    if (!a.scene_out.empty()) io::write_file_atomic(a.scene_out, to_obj(corpus.scene));
  } else {
    const Skeleton skel = resolve_skeleton("", g);
    for (const auto& p : a.motions) clips.push_back(motion_to_matrix(load_motion_for(p, skel).frames));
    if (const auto* p = g.load(); p && !p->grid_path.empty()) grid = load_grid(p->grid_path);
  }
  MotionGenerator gen = make_generator(cfg, clips, a.seed);
  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.learning_rate = a.lr;
  tc.final_learning_rate = a.final_lr;
  tc.time_budget_s = a.budget;
  tc.log_every = std::max(1, std::min(100, a.steps / 10));
  Rng rng(a.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto rep = train_generator(gen, clips, grid ? &*grid : nullptr, tc, rng, [](int step, double loss) {
    std::fprintf(stderr, "step %d loss %.5f\n", step, loss);
  });
  io::save_checkpoint(a.out, gen, {a.seed, rep.steps});
  std::fprintf(stderr, "trained %d steps in %.1f s\n", rep.steps, rep.seconds);
  return 0;
}

struct SampleArgs {
  std::string checkpoint, grid, out, actions, skeleton;
  std::vector<double> start{0, 0}, goal;
  std::uint64_t seed = 0;
};

std::vector<ActionSegment> maybe_actions(const std::string& path) {
  return path.empty() ? std::vector<ActionSegment>{} : io::load_actions(path).segments;
}

int run_sample(const SampleArgs& a, Globals& g) {
  const MotionGenerator gen = io::load_checkpoint(need(a.checkpoint, g, &io::ProjectConfig::checkpoint_path, "--checkpoint"));
  const auto grid = maybe_grid(pick(a.grid, g, &io::ProjectConfig::grid_path));
  const Skeleton skel = resolve_skeleton(a.skeleton, g);
  require(skel.joint_count() == gen.config().joint_count(), ErrorCode::ShapeMismatch, "skeleton does not fit the model");
  EpisodeRequest req;
  req.spec.length = gen.config().length();
  req.spec.joint_count = skel.joint_count();
  req.spec.transition = starting_frames(skel, vec2_of(a.start), gen.config().k);
  req.spec.goal = Subgoal::navigation(vec2_of(a.goal));
  req.actions = maybe_actions(a.actions);
  Rng rng(a.seed);
  const MatX out = gen.sample(req, grid ? &*grid : nullptr, rng);
  io::save_motion(a.out, io::make_motion_file(skel, matrix_to_motion(out)));
  return 0;
}

struct GenerateArgs {
  std::string checkpoint, grid, out, subgoals, actions, skeleton;
  std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a, Globals& g) {
  const MotionGenerator gen = io::load_checkpoint(need(a.checkpoint, g, &io::ProjectConfig::checkpoint_path, "--checkpoint"));
  const auto grid = maybe_grid(pick(a.grid, g, &io::ProjectConfig::grid_path));
  const Skeleton skel = resolve_skeleton(a.skeleton, g);
  require(skel.joint_count() == gen.config().joint_count(), ErrorCode::ShapeMismatch, "skeleton does not fit the model");
  const auto goals = io::subgoals_from_json(io::load_json(a.subgoals), &skel);
  const auto actions = maybe_actions(a.actions);
  const int len = gen.config().length(), k = gen.config().k;
  std::vector<EpisodeSpec> specs;
  for (const auto& s : goals.subgoals) {
    EpisodeSpec spec;
    spec.length = len;
    spec.joint_count = skel.joint_count();
    spec.goal = s;
    specs.push_back(spec);
  }
  specs.front().transition = starting_frames(skel, goals.start, k);
  int episode = 0;
  auto sample = [&](const EpisodeSpec& spec, Rng& rng) {
    EpisodeRequest req{spec, episode++ * (len - k), actions};
    return gen.sample(req, grid ? &*grid : nullptr, rng);
  };
  Rng rng(a.seed);
  const MatX out = generate_long(sample, specs, k, rng);
  io::save_motion(a.out, io::make_motion_file(skel, matrix_to_motion(out)));
  return 0;
}

struct AugmentArgs {
  std::string motion, events, out, skeleton;
  int window = kDefaultAugmentWindow;
};

int run_augment(const AugmentArgs& a, Globals& g) {
  const Skeleton skel = resolve_skeleton(a.skeleton, g);
  const auto m = load_motion_for(a.motion, skel);
  const auto events = io::events_from_json(io::load_json(a.events), &skel);
  RetargetConfig rc;
  rc.window = a.window;
  const auto r = retarget_motion(m.frames, skel, events, rc);
  io::save_motion(a.out, {m.fps, m.joints, r.motion});
  std::size_t failed = 0;
  for (bool c : r.converged) failed += !c;
  if (failed) std::fprintf(stderr, "warning: IK did not converge on %zu frames\n", failed);
  return 0;
}

struct SceneMotionArgs {
  std::string motion, scene, out, skeleton;
};

std::vector<std::vector<Vec3>> surfaces(const Skeleton& skel, const Motion& m) {
  std::vector<std::vector<Vec3>> out;
  for (const auto& f : m) out.push_back(body_surface(skel, f).vertices);
  return out;
}

void emit(const std::string& out, const json& j) {
  if (out.empty() || out == "-")
    std::cout << j.dump(1) << "\n";
  else
    io::save_json(out, j);
}

struct AnnotateArgs : SceneMotionArgs {
  double distance = 0.02;
  double angle = kPi / 3;
};

int run_annotate(const AnnotateArgs& a, Globals& g) {
  const Skeleton skel = resolve_skeleton(a.skeleton, g);
  const auto m = load_motion_for(a.motion, skel);
  ContactConfig cc;
  cc.dist_threshold = a.distance;
  cc.angle_threshold = a.angle;
  emit(a.out, io::contacts_to_json(annotate_motion_contacts(skel, m.frames, load_obj(a.scene), cc)));
  return 0;
}

json stats_json(const PenetrationStats& s) { return {{"max", s.max}, {"mean", s.mean}, {"median", s.median}}; }

int run_stats(const SceneMotionArgs& a, Globals& g) {
  const Skeleton skel = resolve_skeleton(a.skeleton, g);
  const auto m = load_motion_for(a.motion, skel);
  const TriangleMesh scene = load_obj(a.scene);
  const auto verts = surfaces(skel, m.frames);
  json frames = json::array();
  for (const auto& s : penetration_stats(verts, scene)) frames.push_back(stats_json(s));
  std::vector<Vec3> all;
  for (const auto& v : verts) all.insert(all.end(), v.begin(), v.end());
  const auto contacts = annotate_motion_contacts(skel, m.frames, scene);
  std::size_t touching = 0;
  for (const auto& c : contacts) touching += std::find(c.begin(), c.end(), true) != c.end();
  emit(a.out, {{"frames", frames},
               {"overall", stats_json(penetration_stats(all, scene))},
               {"contact_frame_fraction", static_cast<double>(touching) / static_cast<double>(contacts.size())}});
  return 0;
}

struct CameraArgs : SceneMotionArgs {
  std::string track, object;
  int interval = 30;
  int proposals = 20;
};

int run_camera(const CameraArgs& a, Globals& g) {
  const Skeleton skel = resolve_skeleton(a.skeleton, g);
  const auto m = load_motion_for(a.motion, skel);
  std::vector<std::vector<Vec3>> objects;
  if (!a.track.empty()) {
    require(!a.object.empty(), ErrorCode::InvalidInput, "--track needs --object");
    const auto t = io::load_track(a.track, load_obj(a.object).vertices);
    t.validate();
    require(t.frames() == static_cast<int>(m.frames.size()), ErrorCode::ShapeMismatch, "track and motion lengths differ");
    for (int f = 0; f < t.frames(); ++f) {
      std::vector<Vec3> pts;
      for (const auto& p : t.points) pts.push_back(t.world(f, p));
      objects.push_back(std::move(pts));
    }
  }
  CameraConfig cc;
  cc.keyframe_interval = a.interval;
  cc.proposals = a.proposals;
  const auto plan = plan_camera_track(m.frames, objects, load_obj(a.scene), cc);
  json hands = json::array(), frames = json::array();
  for (Hand h : plan.hands) hands.push_back(h == Hand::Left ? "left" : "right");
  for (const auto& f : plan.frames)
    frames.push_back({{"yaw", f.yaw}, {"position", io::vec_json(f.position)}, {"look_at", io::vec_json(f.look_at)}});
  emit(a.out, {{"keyframes", plan.keyframes}, {"chosen", plan.chosen}, {"hands", hands}, {"counts", plan.counts},
               {"frames", frames}});
  return 0;
}

struct ServeArgs {
  std::string checkpoint, grid, bind, skeleton;
  int port = -1;
};

int run_serve(const ServeArgs& a, Globals& g) {
  const io::ProjectConfig* p = g.load();
  const MotionGenerator gen = io::load_checkpoint(need(a.checkpoint, g, &io::ProjectConfig::checkpoint_path, "--checkpoint"));
  const auto grid = maybe_grid(pick(a.grid, g, &io::ProjectConfig::grid_path));
  service::ServiceContext ctx;
  ctx.skeleton = resolve_skeleton(a.skeleton, g);
  require(ctx.skeleton.joint_count() == gen.config().joint_count(), ErrorCode::ShapeMismatch, "skeleton does not fit the model");
  ctx.grid = grid ? &*grid : nullptr;
  ctx.session.length = gen.config().length();
  ctx.session.k = gen.config().k;
  ctx.session.joint_count = gen.config().joint_count();
  ctx.sampler = gen.sampler(ctx.grid);
  ctx.n_actions = gen.config().model.n_actions;
  const std::string bind = !a.bind.empty() ? a.bind : p ? p->bind : "127.0.0.1";
  const int port = a.port >= 0 ? a.port : p ? p->port : 8765;
  require(port <= 65535, ErrorCode::InvalidInput, "port out of range");
  service::Server server(ctx, bind, static_cast<unsigned short>(port));
  std::printf("listening on %s:%u\n", bind.c_str(), server.port());
  std::fflush(stdout);
  server.run(true);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motionforge: scene-aware motion synthesis tools"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "project config JSON (default: $MOTIONFORGE_CONFIG)");

  std::function<int()> action;

  VoxelizeArgs vx;
  auto* cvx = app.add_subcommand("voxelize", "OBJ scene -> occupancy grid");
  cvx->add_option("--obj", vx.obj, "scene mesh")->required()->check(CLI::ExistingFile);
  cvx->add_option("--out", vx.out, "grid file")->required();
  cvx->add_option("--cell", vx.cell, "cell size (m)")->check(CLI::PositiveNumber);
  auto* lo = cvx->add_option("--lo", vx.lo, "lower corner x y z")->expected(3);
  auto* hi = cvx->add_option("--hi", vx.hi, "upper corner x y z")->expected(3);
  lo->needs(hi);
  hi->needs(lo);
  cvx->add_option("--pad", vx.pad, "padding around the mesh bounds when --lo/--hi are absent");
  cvx->callback([&] { action = [&] { return run_voxelize(vx); }; });

  TrainArgs tr;
  auto* ctr = app.add_subcommand("train", "train the generator");
  tr.model.add(ctr);
  ctr->add_option("--out", tr.out, "checkpoint manifest (.json); weights go next to it (.bin)")->required();
  ctr->add_option("--motion", tr.motions, "training motion files (default: synthetic corridor corpus)");
  ctr->add_option("--clips", tr.clips, "synthetic clips")->check(CLI::PositiveNumber);
  ctr->add_option("--grid-out", tr.grid_out, "write the synthetic corridor grid");
  ctr->add_option("--scene-out", tr.scene_out, "write the synthetic corridor mesh (OBJ)");
  ctr->add_option("--steps", tr.steps)->check(CLI::PositiveNumber);
  ctr->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
  ctr->add_option("--lr", tr.lr);
  ctr->add_option("--final-lr", tr.final_lr);
  ctr->add_option("--time-budget", tr.budget, "seconds, 0 = unlimited");
  ctr->add_option("--seed", tr.seed);
  ctr->callback([&] { action = [&] { return run_train(tr, g); }; });

  SampleArgs sm;
  auto* csm = app.add_subcommand("sample", "one episode toward a goal");
  csm->add_option("--checkpoint", sm.checkpoint);
  csm->add_option("--grid", sm.grid);
  csm->add_option("--skeleton", sm.skeleton);
  csm->add_option("--start", sm.start, "start pelvis x y")->expected(2);
  csm->add_option("--goal", sm.goal, "goal pelvis x y")->expected(2)->required();
  csm->add_option("--actions", sm.actions, "action segments JSON");
  csm->add_option("--out", sm.out)->required();
  csm->add_option("--seed", sm.seed);
  csm->callback([&] { action = [&] { return run_sample(sm, g); }; });

  GenerateArgs gn;
  auto* cgn = app.add_subcommand("generate", "long-form motion through a subgoal file");
  cgn->add_option("--checkpoint", gn.checkpoint);
  cgn->add_option("--grid", gn.grid);
  cgn->add_option("--skeleton", gn.skeleton);
  cgn->add_option("--subgoals", gn.subgoals)->required()->check(CLI::ExistingFile);
  cgn->add_option("--actions", gn.actions);
  cgn->add_option("--out", gn.out)->required();
  cgn->add_option("--seed", gn.seed);
  cgn->callback([&] { action = [&] { return run_generate(gn, g); }; });

  AugmentArgs au;
  auto* cau = app.add_subcommand("augment", "retarget a motion to moved contacts");
  cau->add_option("--motion", au.motion)->required()->check(CLI::ExistingFile);
  cau->add_option("--events", au.events)->required()->check(CLI::ExistingFile);
  cau->add_option("--skeleton", au.skeleton);
  cau->add_option("--window", au.window)->check(CLI::PositiveNumber);
  cau->add_option("--out", au.out)->required();
  cau->callback([&] { action = [&] { return run_augment(au, g); }; });

  AnnotateArgs an;
  auto* can = app.add_subcommand("annotate", "per-frame body-scene contacts");
  can->add_option("--motion", an.motion)->required()->check(CLI::ExistingFile);
  can->add_option("--scene", an.scene)->required()->check(CLI::ExistingFile);
  can->add_option("--skeleton", an.skeleton);
  can->add_option("--distance", an.distance);
  can->add_option("--angle", an.angle, "radians");
  can->add_option("--out", an.out, "default stdout");
  can->callback([&] { action = [&] { return run_annotate(an, g); }; });

  SceneMotionArgs st;
  auto* cst = app.add_subcommand("stats", "penetration statistics");
  cst->add_option("--motion", st.motion)->required()->check(CLI::ExistingFile);
  cst->add_option("--scene", st.scene)->required()->check(CLI::ExistingFile);
  cst->add_option("--skeleton", st.skeleton);
  cst->add_option("--out", st.out, "default stdout");
  cst->callback([&] { action = [&] { return run_stats(st, g); }; });

  CameraArgs cm;
  auto* ccm = app.add_subcommand("camera-track", "hand-following camera path");
  ccm->add_option("--motion", cm.motion)->required()->check(CLI::ExistingFile);
  ccm->add_option("--scene", cm.scene)->required()->check(CLI::ExistingFile);
  ccm->add_option("--skeleton", cm.skeleton);
  ccm->add_option("--track", cm.track, "object track JSON");
  ccm->add_option("--object", cm.object, "object OBJ (canonical frame)");
  ccm->add_option("--interval", cm.interval)->check(CLI::PositiveNumber);
  ccm->add_option("--proposals", cm.proposals)->check(CLI::PositiveNumber);
  ccm->add_option("--out", cm.out, "default stdout");
  ccm->callback([&] { action = [&] { return run_camera(cm, g); }; });

  ServeArgs sv;
  auto* csv = app.add_subcommand("serve", "WebSocket steering service");
  csv->add_option("--checkpoint", sv.checkpoint);
  csv->add_option("--grid", sv.grid);
  csv->add_option("--skeleton", sv.skeleton);
  csv->add_option("--bind", sv.bind);
  csv->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
  csv->callback([&] { action = [&] { return run_serve(sv, g); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    std::cerr << "\n" << app.help();
    return kUsageError;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
}
