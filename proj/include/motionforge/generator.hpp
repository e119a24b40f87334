#pragma once

// World-space episodes around the denoiser. Each episode is expressed in a
// canonical frame (last transition pelvis at the origin, facing +x) and
// standardized per feature before diffusion; the scene condition is the
// yaw-aligned local grid at the subgoal.

#include "motionforge/action.hpp"
#include "motionforge/control.hpp"
#include "motionforge/corpus.hpp"
#include "motionforge/diffusion.hpp"
#include "motionforge/scene.hpp"

#include <chrono>
#include <functional>

namespace motionforge {

struct EpisodeFrame {
  Vec2 anchor = Vec2::Zero();
  double yaw = 0;
};

inline EpisodeFrame episode_frame(const MatX& transition, int pelvis = joints::kPelvis) {
  require(transition.rows() >= 1, ErrorCode::InvalidInput, "need a transition frame");
  const Eigen::Index r = transition.rows() - 1;
  return {Vec2(transition(r, pelvis * 3), transition(r, pelvis * 3 + 1)), pelvis_yaw(transition, r)};
}

inline MatX to_canonical(const MatX& world, const EpisodeFrame& f) {
  const double c = std::cos(f.yaw), s = std::sin(f.yaw);
  MatX out = world;
  for (Eigen::Index j = 0; j < world.cols(); j += 3) {
    const auto dx = world.col(j).array() - f.anchor.x();
    const auto dy = world.col(j + 1).array() - f.anchor.y();
    out.col(j) = (c * dx + s * dy).matrix();
    out.col(j + 1) = (-s * dx + c * dy).matrix();
  }
  return out;
}

inline MatX to_world(const MatX& canon, const EpisodeFrame& f) {
  const double c = std::cos(f.yaw), s = std::sin(f.yaw);
  MatX out = canon;
  for (Eigen::Index j = 0; j < canon.cols(); j += 3) {
    out.col(j) = (c * canon.col(j).array() - s * canon.col(j + 1).array() + f.anchor.x()).matrix();
    out.col(j + 1) = (s * canon.col(j).array() + c * canon.col(j + 1).array() + f.anchor.y()).matrix();
  }
  return out;
}

// Per-entry standardization of canonical episodes: every (frame, feature)
// cell has its own mean and scale.
struct Normalizer {
  MatX mean;
  MatX scale;

  static Normalizer identity(int rows, int width) { return {MatX::Zero(rows, width), MatX::Ones(rows, width)}; }

  static Normalizer fit(const std::vector<MatX>& canonical, double floor = 1e-2) {
    require(!canonical.empty(), ErrorCode::InvalidInput, "no data to fit the normalizer");
    const Eigen::Index r = canonical.front().rows(), w = canonical.front().cols();
    MatX sum = MatX::Zero(r, w), sq = MatX::Zero(r, w);
    for (const auto& m : canonical) {
      require(m.rows() == r && m.cols() == w, ErrorCode::ShapeMismatch, "ragged normalizer input");
      sum += m;
      sq += m.cwiseAbs2();
    }
    const double n = static_cast<double>(canonical.size());
    Normalizer out;
    out.mean = sum / n;
    out.scale = (sq / n - out.mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(floor);
    return out;
  }

  MatX encode(const MatX& x) const {
    require(x.rows() == mean.rows() && x.cols() == mean.cols(), ErrorCode::ShapeMismatch, "normalizer shape mismatch");
    return ((x - mean).array() / scale.array()).matrix();
  }
  MatX decode(const MatX& z) const {
    require(z.rows() == mean.rows() && z.cols() == mean.cols(), ErrorCode::ShapeMismatch, "normalizer shape mismatch");
    return (z.array() * scale.array()).matrix() + mean;
  }
};

struct GeneratorConfig {
  DenoiserConfig model;
  int k = 2;
  LocalGridSpec local;
  int patch = 8;
  double beta_start = 1e-4;  // at 1000 steps; rescaled to model.diffusion_steps
  double beta_end = 0.02;
  double clip_x0 = 6.0;  // in standardized units; 0 disables

  int length() const { return model.max_frames; }
  int joint_count() const { return model.joint_dim / 3; }
};

inline DiffusionSchedule generator_schedule(const GeneratorConfig& c) {
  const double scale = 1000.0 / c.model.diffusion_steps;
  return make_schedule(c.model.diffusion_steps, std::min(c.beta_start * scale, 0.999),
                       std::min(c.beta_end * scale, 0.999));
}

inline Vec2 goal_center(const Subgoal& g) { return g.kind == Subgoal::Kind::Navigation ? g.xy : Vec2(g.xyz.head<2>()); }

class MotionGenerator {
 public:
  MotionGenerator() = default;
  MotionGenerator(const GeneratorConfig& cfg, Normalizer norm, std::uint64_t init_seed = 0)
      : cfg_(cfg), model_(cfg.model), norm_(std::move(norm)), schedule_(generator_schedule(cfg)) {
    require(norm_.mean.rows() == cfg.model.max_frames && norm_.mean.cols() == cfg.model.joint_dim,
            ErrorCode::ShapeMismatch, "normalizer shape mismatch");
    require(cfg.local.nx % cfg.patch == 0 && cfg.local.ny % cfg.patch == 0, ErrorCode::ShapeMismatch,
            "patch side must divide the local grid");
    require(cfg.model.scene_token_dim == cfg.patch * cfg.patch * cfg.local.nz, ErrorCode::ShapeMismatch,
            "scene token width does not match the local grid");
    require(cfg.model.scene_tokens == (cfg.local.nx / cfg.patch) * (cfg.local.ny / cfg.patch), ErrorCode::ShapeMismatch,
            "scene token count does not match the local grid");
    model_.init(init_seed);
  }

  const GeneratorConfig& config() const { return cfg_; }
  MotionModel& model() { return model_; }
  const MotionModel& model() const { return model_; }
  const Normalizer& normalizer() const { return norm_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

  MatX scene_tokens(const OccupancyGrid* grid, const Vec2& center, double yaw) const {
    if (!grid) return MatX::Zero(cfg_.model.scene_tokens, cfg_.model.scene_token_dim);
    return patchify(query_local_grid(*grid, center, yaw, cfg_.local), cfg_.patch).tokens;
  }

  MatX action_labels(const std::vector<ActionSegment>& actions, int first_frame) const {
    return add_progress_indicator(actions, cfg_.length(), cfg_.model.n_actions, first_frame).labels;
  }

  // A world-space training window; its own frames supply transition and goal.
  TrainingExample make_example(const MatX& window, const Subgoal& goal, const OccupancyGrid* grid,
                               const std::vector<ActionSegment>& actions = {}, int first_frame = 0) const {
    require(window.rows() == cfg_.length() && window.cols() == cfg_.model.joint_dim, ErrorCode::ShapeMismatch,
            "training window shape");
    const EpisodeFrame f = episode_frame(window.topRows(cfg_.k));
    TrainingExample ex;
    ex.x0 = norm_.encode(to_canonical(window, f));
    ex.mask = make_episode_mask(cfg_.length(), cfg_.joint_count(), cfg_.k, goal, joints::kPelvis);
    ex.scene_tokens = scene_tokens(grid, goal_center(goal), f.yaw);
    ex.action_labels = action_labels(actions, first_frame);
    return ex;
  }

  // Navigation example whose goal is the window's own final pelvis xy.
  TrainingExample make_navigation_example(const MatX& window, const OccupancyGrid* grid) const {
    const Eigen::Index last = window.rows() - 1;
    const Subgoal g = Subgoal::navigation(Vec2(window(last, 0), window(last, 1)));
    return make_example(window, g, grid);
  }

  // Returns world coordinates. Masked entries are copied from the world
  // conditioning, so transition rows and the goal are reproduced exactly.
  MatX sample(const EpisodeRequest& req, const OccupancyGrid* grid, Rng& rng, const StepObserver& observer = {}) const {
    const EpisodeSpec& spec = req.spec;
    require(spec.length == cfg_.length() && spec.joint_count == cfg_.joint_count() && spec.k() == cfg_.k,
            ErrorCode::ShapeMismatch, "episode request does not match the generator");
    const EpisodeFrame f = episode_frame(spec.transition, spec.pelvis);
    const MatX world_cond = episode_conditioning(spec);
    const EpisodeMask mask = make_episode_mask(spec.length, spec.joint_count, spec.k(), spec.goal, spec.pelvis);
    const MatX cond = norm_.encode(to_canonical(world_cond, f));

    const VecX scene = model_.encode_scene(scene_tokens(grid, goal_center(spec.goal), f.yaw));
    const VecX action = model_.encode_actions(action_labels(req.actions, req.first_frame));
    const NoisePredictor predict = [&](const MatX& x, int t) { return model_.denoise(x, t, scene, action); };
    SamplerOptions opts;
    if (cfg_.clip_x0 > 0) opts.clip_x0 = cfg_.clip_x0;
    const MatX z = sample_masked(predict, cond, mask, schedule_, rng, observer, opts);
    MatX out = to_world(norm_.decode(z), f);
    for (Eigen::Index i = 0; i < out.size(); ++i)
      if (mask.data()[i]) out.data()[i] = world_cond.data()[i];
    return out;
  }

  EpisodeSampler sampler(const OccupancyGrid* grid) const {
    return [this, grid](const EpisodeRequest& req, Rng& rng) { return sample(req, grid, rng); };
  }

 private:
  GeneratorConfig cfg_;
  MotionModel model_;
  Normalizer norm_;
  DiffusionSchedule schedule_;
};

// ---- Training on a clip corpus -------------------------------------------

struct TrainConfig {
  int steps = 2000;
  int batch = 16;
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-4;  // cosine decay target
  double time_budget_s = 0;           // 0 = no limit
  LossKind loss = LossKind::Huber;
  int log_every = 100;
};

struct TrainReport {
  int steps = 0;
  double seconds = 0;
  std::vector<double> losses;  // running mean at each log point
};

// Canonical windows of every clip, used to fit the normalizer.
inline std::vector<MatX> canonical_windows(const std::vector<MatX>& clips, int length, int k, int stride = 4) {
  std::vector<MatX> out;
  for (const auto& c : clips)
    for (Eigen::Index s = 0; s + length <= c.rows(); s += stride) {
      const MatX w = c.middleRows(s, length);
      out.push_back(to_canonical(w, episode_frame(w.topRows(k))));
    }
  return out;
}

inline TrainReport train_generator(MotionGenerator& gen, const std::vector<MatX>& clips, const OccupancyGrid* grid,
                                   const TrainConfig& cfg, Rng& rng,
                                   const std::function<void(int, double)>& progress = {}) {
  const int len = gen.config().length();
  std::vector<std::pair<std::size_t, Eigen::Index>> windows;
  for (std::size_t c = 0; c < clips.size(); ++c)
    for (Eigen::Index s = 0; s + len <= clips[c].rows(); ++s) windows.emplace_back(c, s);
  require(!windows.empty(), ErrorCode::InvalidInput, "no clip is long enough for one episode");
  require(cfg.batch > 0 && cfg.steps > 0, ErrorCode::InvalidInput, "train config must be positive");

  nn::Adam opt(gen.model().params().size());
  TrainReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  double running = 0;
  int since_log = 0;
  std::vector<TrainingExample> batch(static_cast<std::size_t>(cfg.batch));
  for (int step = 0; step < cfg.steps; ++step) {
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.time_budget_s > 0 && elapsed > cfg.time_budget_s) break;
    for (auto& ex : batch) {
      const auto& [c, s] = windows[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(windows.size()) - 1))];
      ex = gen.make_navigation_example(clips[c].middleRows(s, len), grid);
    }
    const double progress_frac = static_cast<double>(step) / cfg.steps;
    const double lr = cfg.final_learning_rate +
                      0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1 + std::cos(kPi * progress_frac));
    running += train_step(gen.model(), opt, batch, gen.schedule(), lr, rng, cfg.loss).loss;
    ++since_log;
    rep.steps = step + 1;
    if (since_log == cfg.log_every) {
      rep.losses.push_back(running / since_log);
      if (progress) progress(rep.steps, rep.losses.back());
      running = 0;
      since_log = 0;
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// Generator sized for a corpus: normalizer fitted on its canonical windows.
inline MotionGenerator make_generator(const GeneratorConfig& cfg, const std::vector<MatX>& clips,
                                      std::uint64_t init_seed) {
  return MotionGenerator(cfg, Normalizer::fit(canonical_windows(clips, cfg.length(), cfg.k)), init_seed);
}

}  // namespace motionforge
