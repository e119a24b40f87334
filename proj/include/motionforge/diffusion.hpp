#pragma once

// DDPM machinery for masked episode inpainting: variance schedule, masked
// forward noising, the training objective, the ancestral sampler that
// re-imposes conditioning after every step, autoregressive stitching of
// episodes and the joint-to-pose refinement.

#include "motionforge/core.hpp"
#include "motionforge/kinematics.hpp"
#include "motionforge/model.hpp"
#include "motionforge/nn.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

namespace motionforge {

struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

inline DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
  require(steps >= 1, ErrorCode::InvalidSchedule, "need at least one step");
  require(beta_start > 0 && beta_start <= beta_end && beta_end < 1, ErrorCode::InvalidSchedule,
          "betas must satisfy 0 < start <= end < 1");
  DiffusionSchedule s;
  s.steps = steps;
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double b = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  return s;
}

// The usual [1e-4, 0.02] linear range is defined for 1000 steps; shorter
// chains scale both ends by 1000 / steps so the chain still ends near pure
// noise.
inline DiffusionSchedule default_schedule(int steps = 50) {
  const double scale = 1000.0 / steps;
  return make_schedule(steps, 1e-4 * scale, std::min(0.02 * scale, 0.999));
}

// Boolean mask over an L x (J*3) episode tensor; true = conditioned.
using EpisodeMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Subgoal {
  enum class Kind { Navigation, Joint };
  Kind kind = Kind::Navigation;
  Vec2 xy = Vec2::Zero();   // pelvis xy in the final frame
  int joint = -1;           // for Kind::Joint
  Vec3 xyz = Vec3::Zero();  // joint position in the final frame

  static Subgoal navigation(const Vec2& xy) { return {Kind::Navigation, xy, -1, Vec3::Zero()}; }
  static Subgoal reach(int joint, const Vec3& xyz) { return {Kind::Joint, Vec2::Zero(), joint, xyz}; }
};

// Transition part (first k frames, all joints) plus goal part (final-frame
// pelvis xy, or all three coordinates of the goal joint).
inline EpisodeMask make_episode_mask(int length, int joint_count, int k, const Subgoal& goal, int pelvis = 0) {
  require(k >= 0 && k < length, ErrorCode::InvalidInput, "transition frames must be fewer than the episode length");
  EpisodeMask m = EpisodeMask::Constant(length, joint_count * 3, false);
  m.topRows(k).setConstant(true);
  if (goal.kind == Subgoal::Kind::Navigation) {
    m(length - 1, pelvis * 3 + 0) = true;
    m(length - 1, pelvis * 3 + 1) = true;
  } else {
    require(goal.joint >= 0 && goal.joint < joint_count, ErrorCode::InvalidInput, "goal joint out of range");
    for (int c = 0; c < 3; ++c) m(length - 1, goal.joint * 3 + c) = true;
  }
  return m;
}

struct NoisedSample {
  MatX x_t;
  MatX noise;  // zero on masked entries
};

// Closed-form marginal q(x_t | x_0) on unmasked entries; masked entries keep
// x_0 exactly.
inline NoisedSample forward_noise(const MatX& x0, int t, const DiffusionSchedule& s, const EpisodeMask& mask, Rng& rng) {
  require(t >= 0 && t < s.steps, ErrorCode::InvalidInput, "t out of range");
  require(mask.rows() == x0.rows() && mask.cols() == x0.cols(), ErrorCode::ShapeMismatch, "mask shape mismatch");
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  NoisedSample out{x0, MatX::Zero(x0.rows(), x0.cols())};
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    if (mask.data()[i]) continue;
    const double e = rng.normal();
    out.noise.data()[i] = e;
    out.x_t.data()[i] = a * x0.data()[i] + b * e;
  }
  return out;
}

// One transition q(x_t | x_{t-1}) on unmasked entries.
inline MatX forward_step(const MatX& x_prev, int t, const DiffusionSchedule& s, const EpisodeMask& mask, Rng& rng) {
  const double a = std::sqrt(s.alpha[t]);
  const double b = std::sqrt(1.0 - s.alpha[t]);
  MatX out = x_prev;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (!mask.data()[i]) out.data()[i] = a * x_prev.data()[i] + b * rng.normal();
  return out;
}

enum class LossKind { Huber, L2 };

// One supervised example in model space.
struct TrainingExample {
  MatX x0;             // L x J*3
  EpisodeMask mask;    // conditioned entries
  MatX scene_tokens;   // patch tokens
  MatX action_labels;  // L x N_A
};

struct LossResult {
  double loss = 0.0;
  VecX grad;  // parameter gradient, same layout as the model's ParamStore
  int t = 0;
};

namespace detail {

inline double huber(double r) { return std::abs(r) <= 1.0 ? 0.5 * r * r : std::abs(r) - 0.5; }
inline double huber_grad(double r) { return std::abs(r) <= 1.0 ? r : (r > 0 ? 1.0 : -1.0); }

}  // namespace detail

struct MaskedLoss {
  double loss = 0.0;
  MatX dpred;  // d loss / d prediction, zero on masked entries
};

// Mean Huber (delta 1) or squared error between predicted and injected noise
// over unmasked entries.
inline MaskedLoss masked_loss(const MatX& pred, const MatX& eps, const EpisodeMask& mask, LossKind kind) {
  require(pred.rows() == eps.rows() && pred.cols() == eps.cols() && mask.rows() == pred.rows() &&
              mask.cols() == pred.cols(),
          ErrorCode::ShapeMismatch, "loss operand shapes differ");
  const auto unmasked = static_cast<double>((!mask).count());
  require(unmasked > 0, ErrorCode::InvalidInput, "example has no unmasked entries");
  MaskedLoss out{0.0, MatX::Zero(pred.rows(), pred.cols())};
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (mask.data()[i]) continue;
    const double r = pred.data()[i] - eps.data()[i];
    if (kind == LossKind::Huber) {
      out.loss += detail::huber(r);
      out.dpred.data()[i] = detail::huber_grad(r) / unmasked;
    } else {
      out.loss += r * r;
      out.dpred.data()[i] = 2.0 * r / unmasked;
    }
  }
  out.loss /= unmasked;
  return out;
}

// Loss on unmasked entries for a fixed step and fixed noise; gradients are
// accumulated into result.grad (allocated when empty).
inline LossResult training_loss_at(const MotionModel& model, const TrainingExample& ex, int t, const MatX& noise,
                                   const DiffusionSchedule& s, LossKind kind = LossKind::Huber, bool want_grad = true,
                                   double dropout = 0.0, Rng* dropout_rng = nullptr) {
  require(ex.x0.rows() == ex.mask.rows() && ex.x0.cols() == ex.mask.cols(), ErrorCode::ShapeMismatch, "mask shape");
  require(noise.rows() == ex.x0.rows() && noise.cols() == ex.x0.cols(), ErrorCode::ShapeMismatch, "noise shape");
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  MatX x_t = ex.x0;
  MatX eps = MatX::Zero(ex.x0.rows(), ex.x0.cols());
  for (Eigen::Index i = 0; i < x_t.size(); ++i)
    if (!ex.mask.data()[i]) {
      eps.data()[i] = noise.data()[i];
      x_t.data()[i] = a * ex.x0.data()[i] + b * noise.data()[i];
    }

  MotionModel::SceneCache sc;
  MotionModel::ActionCache ac;
  MotionModel::DenoiseCache dc;
  const VecX se = model.encode_scene(ex.scene_tokens, want_grad ? &sc : nullptr, dropout, dropout_rng);
  const VecX ae = model.encode_actions(ex.action_labels, want_grad ? &ac : nullptr, dropout, dropout_rng);
  const MatX pred = model.denoise(x_t, t, se, ae, want_grad ? &dc : nullptr, dropout, dropout_rng);

  const MaskedLoss ml = masked_loss(pred, eps, ex.mask, kind);
  LossResult res;
  res.t = t;
  res.loss = ml.loss;
  if (!std::isfinite(res.loss)) throw Error(ErrorCode::NumericalError, "non-finite loss at diffusion step " + std::to_string(t));
  if (!want_grad) return res;

  res.grad = model.params().zeros();
  const auto cg = model.backward_denoise(res.grad, dc, ml.dpred);
  model.backward_scene(res.grad, sc, cg.scene);
  model.backward_actions(res.grad, ac, cg.action);
  return res;
}

// Samples t uniformly over the chain and fresh noise, then evaluates the loss.
inline LossResult training_loss(const MotionModel& model, const TrainingExample& ex, const DiffusionSchedule& s, Rng& rng,
                                LossKind kind = LossKind::Huber, double dropout = 0.0) {
  const int t = static_cast<int>(rng.uniform_int(0, s.steps - 1));
  MatX noise(ex.x0.rows(), ex.x0.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
  return training_loss_at(model, ex, t, noise, s, kind, true, dropout, dropout > 0 ? &rng : nullptr);
}

struct TrainStepResult {
  double loss = 0.0;
};

// Mean loss and gradient over the batch, then one Adam update.
inline TrainStepResult train_step(MotionModel& model, nn::Adam& opt, const std::vector<TrainingExample>& batch,
                                  const DiffusionSchedule& s, double lr, Rng& rng, LossKind kind = LossKind::Huber) {
  require(!batch.empty(), ErrorCode::InvalidInput, "empty batch");
  VecX grad = model.params().zeros();
  double loss = 0.0;
  for (const auto& ex : batch) {
    auto r = training_loss(model, ex, s, rng, kind, model.config().dropout);
    grad += r.grad;
    loss += r.loss;
  }
  grad /= static_cast<double>(batch.size());
  loss /= static_cast<double>(batch.size());
  if (!std::isfinite(loss) || !grad.allFinite()) throw Error(ErrorCode::NumericalError, "non-finite loss or gradient");
  opt.step(model.params().values(), grad, lr);
  return {loss};
}

// Predicts the noise in x_t at step t; conditions are bound by the caller.
using NoisePredictor = std::function<MatX(const MatX& x_t, int t)>;
// Called with the state after each reverse step (and once before the first).
using StepObserver = std::function<void(int t, const MatX& x)>;

struct SamplerOptions {
  // When finite, the implied clean sample (x_t - sqrt(1 - abar) eps) / sqrt(abar)
  // is clamped to [-clip_x0, clip_x0] and the posterior mean is formed from it.
  double clip_x0 = std::numeric_limits<double>::infinity();
};

// Ancestral DDPM inpainting. Masked entries start at and are reset to the
// conditioning after every step; the reverse variance is beta_t.
inline MatX sample_masked(const NoisePredictor& predict, const MatX& conditioning, const EpisodeMask& mask,
                          const DiffusionSchedule& s, Rng& rng, const StepObserver& observer = {},
                          const SamplerOptions& opts = {}) {
  require(mask.rows() == conditioning.rows() && mask.cols() == conditioning.cols(), ErrorCode::ShapeMismatch,
          "mask shape mismatch");
  require(opts.clip_x0 > 0, ErrorCode::InvalidInput, "clip bound must be positive");
  const bool clip = std::isfinite(opts.clip_x0);
  MatX x = conditioning;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!mask.data()[i]) x.data()[i] = rng.normal();
  if (observer) observer(s.steps, x);
  for (int t = s.steps - 1; t >= 0; --t) {
    const MatX eps = predict(x, t);
    const double ab = s.alpha_bar[t];
    const double ab_prev = t > 0 ? s.alpha_bar[t - 1] : 1.0;
    const double coef = s.beta[t] / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
    const double c0 = std::sqrt(ab_prev) * s.beta[t] / (1.0 - ab);
    const double ct = std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(s.beta[t]);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (mask.data()[i]) continue;
      double v;
      if (clip) {
        const double x0 = std::clamp((x.data()[i] - std::sqrt(1.0 - ab) * eps.data()[i]) / std::sqrt(ab),
                                     -opts.clip_x0, opts.clip_x0);
        v = c0 * x0 + ct * x.data()[i];
      } else {
        v = inv_sqrt_alpha * (x.data()[i] - coef * eps.data()[i]);
      }
      if (t > 0) v += sigma * rng.normal();
      x.data()[i] = v;
    }
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (mask.data()[i]) x.data()[i] = conditioning.data()[i];
    if (!x.allFinite()) throw Error(ErrorCode::NumericalError, "non-finite sampler state at step " + std::to_string(t));
    if (observer) observer(t, x);
  }
  return x;
}

// One generation unit in model space.
struct EpisodeSpec {
  int length = 16;
  int joint_count = 24;
  MatX transition;  // k x J*3
  Subgoal goal;
  VecX scene_embedding;
  VecX action_embedding;
  int pelvis = 0;

  int k() const { return static_cast<int>(transition.rows()); }
};

inline MatX episode_conditioning(const EpisodeSpec& spec) {
  require(spec.transition.cols() == spec.joint_count * 3, ErrorCode::ShapeMismatch, "transition width mismatch");
  require(spec.transition.allFinite(), ErrorCode::InvalidInput, "non-finite transition frames");
  MatX c = MatX::Zero(spec.length, spec.joint_count * 3);
  c.topRows(spec.k()) = spec.transition;
  if (spec.goal.kind == Subgoal::Kind::Navigation) {
    c(spec.length - 1, spec.pelvis * 3 + 0) = spec.goal.xy.x();
    c(spec.length - 1, spec.pelvis * 3 + 1) = spec.goal.xy.y();
  } else {
    for (int d = 0; d < 3; ++d) c(spec.length - 1, spec.goal.joint * 3 + d) = spec.goal.xyz[d];
  }
  return c;
}

inline MatX sample_episode(const NoisePredictor& predict, const EpisodeSpec& spec, const DiffusionSchedule& s, Rng& rng,
                           const StepObserver& observer = {}) {
  const EpisodeMask mask = make_episode_mask(spec.length, spec.joint_count, spec.k(), spec.goal, spec.pelvis);
  return sample_masked(predict, episode_conditioning(spec), mask, s, rng, observer);
}

inline MatX sample_episode(const MotionModel& model, const EpisodeSpec& spec, const DiffusionSchedule& s, Rng& rng,
                           const StepObserver& observer = {}) {
  const NoisePredictor predict = [&](const MatX& x, int t) {
    return model.denoise(x, t, spec.scene_embedding, spec.action_embedding);
  };
  return sample_episode(predict, spec, s, rng, observer);
}

// Autoregressive stitching. Episode n > 0 takes the last k frames of episode
// n - 1 as its transition; the output drops those k duplicated rows, so its
// length is N * L - (N - 1) * k. `sample_fn(spec, rng)` returns one L-row
// episode.
template <typename EpisodeFn>
MatX generate_long(EpisodeFn&& sample_fn, std::vector<EpisodeSpec> seeds, int k, Rng& rng) {
  require(!seeds.empty(), ErrorCode::InvalidInput, "no subgoals");
  require(seeds.front().k() == k, ErrorCode::InvalidInput, "first episode must supply k transition frames");
  std::vector<MatX> episodes;
  Eigen::Index total = 0;
  for (std::size_t n = 0; n < seeds.size(); ++n) {
    EpisodeSpec spec = seeds[n];
    if (n > 0) spec.transition = episodes.back().bottomRows(k);
    MatX ep = sample_fn(spec, rng);
    require(ep.rows() == spec.length, ErrorCode::ShapeMismatch, "episode sampler returned wrong length");
    total += n == 0 ? ep.rows() : ep.rows() - k;
    episodes.push_back(std::move(ep));
  }
  MatX out(total, episodes.front().cols());
  Eigen::Index row = 0;
  for (std::size_t n = 0; n < episodes.size(); ++n) {
    const Eigen::Index skip = n == 0 ? 0 : k;
    const Eigen::Index len = episodes[n].rows() - skip;
    out.middleRows(row, len) = episodes[n].bottomRows(len);
    row += len;
  }
  return out;
}

// ---- joint positions -> pose parameters ----

struct FitConfig {
  int max_iters = 200;
  double learning_rate = 1.0;  // scale on the damped Gauss-Newton step
  double damping = 1e-3;
  double tol = 1e-5;  // stop when every joint is within tol (meters)
  int divergence_patience = 10;
};

struct FitResult {
  Pose pose;
  double max_residual = 0.0;
  int iterations = 0;
};

namespace detail {

inline VecX pack_pose(const Pose& p) {
  VecX v(3 + 6 * p.rotations.size());
  v.head<3>() = p.root_translation;
  for (std::size_t i = 0; i < p.rotations.size(); ++i) {
    v.segment<3>(3 + 6 * i) = p.rotations[i].a;
    v.segment<3>(6 + 6 * i) = p.rotations[i].b;
  }
  return v;
}

inline Pose unpack_pose(const VecX& v, int joints) {
  Pose p = Pose::identity(joints);
  p.root_translation = v.head<3>();
  for (int i = 0; i < joints; ++i) {
    p.rotations[i].a = v.segment<3>(3 + 6 * i);
    p.rotations[i].b = v.segment<3>(6 + 6 * i);
  }
  return p;
}

inline VecX pack_gradient(const PoseGradient& g) {
  VecX v(3 + 6 * g.rotations.size());
  v.head<3>() = g.root_translation;
  for (std::size_t i = 0; i < g.rotations.size(); ++i) {
    v.segment<3>(3 + 6 * i) = g.rotations[i].a;
    v.segment<3>(6 + 6 * i) = g.rotations[i].b;
  }
  return v;
}

inline double max_joint_error(const Skeleton& skel, const Pose& pose, const JointFrame& target) {
  return (forward_kinematics(skel, pose) - target).rowwise().norm().maxCoeff();
}

// Rows are joint coordinates, columns packed pose parameters. Uses the
// FK gradient with unit residuals: grad(0.5|e_i|^2) = J^T e_i.
inline MatX fk_jacobian(const Skeleton& skel, const Pose& pose) {
  const int n = skel.joint_count();
  const JointFrame base = forward_kinematics(skel, pose);
  MatX jac(3 * n, 3 + 6 * n);
  PoseGradient g;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      JointFrame target = base;
      target(i, c) -= 1.0;
      fk_loss_and_gradient(skel, pose, target, &g);
      jac.row(3 * i + c) = pack_gradient(g).transpose();
    }
  return jac;
}

// Snap every 6D pair back to orthonormal columns. FK is unchanged.
inline void canonicalize_rot6d(VecX& params, int joints) {
  for (int i = 0; i < joints; ++i) {
    const Rot6D r = matrix_to_rot6d(rot6d_to_matrix(Rot6D{params.segment<3>(3 + 6 * i), params.segment<3>(6 + 6 * i)}));
    params.segment<3>(3 + 6 * i) = r.a;
    params.segment<3>(6 + 6 * i) = r.b;
  }
}

}  // namespace detail

// Refines the pose of the middle frame of a 3-frame window (sequence ends
// duplicate the middle frame) against the squared joint error, starting
// from `init`. Levenberg-Marquardt: every step is taken, damping grows
// when the loss went up and shrinks when it went down.
inline FitResult fit_pose_params(const std::array<JointFrame, 3>& window, const Skeleton& skel, const Pose& init,
                                 const FitConfig& cfg = {}) {
  const JointFrame& target = window[1];
  const int n = skel.joint_count();
  require(target.rows() == n, ErrorCode::ShapeMismatch, "joint frame size mismatch");
  require(target.allFinite(), ErrorCode::InvalidInput, "non-finite joints");
  require(cfg.damping > 0 && cfg.learning_rate > 0, ErrorCode::InvalidInput, "fit config must be positive");

  FitResult res{init, detail::max_joint_error(skel, init, target), 0};
  if (res.max_residual < cfg.tol) return res;

  VecX params = detail::pack_pose(init);
  double mu = cfg.damping;
  double prev_loss = std::numeric_limits<double>::infinity();
  double best_loss = prev_loss;
  VecX best = params;
  int increases = 0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const Pose pose = detail::unpack_pose(params, n);
    PoseGradient g;
    const double loss = fk_loss_and_gradient(skel, pose, target, &g);
    if (!std::isfinite(loss)) throw Error(ErrorCode::OptimizationDiverged, "non-finite fitting loss");
    if (loss < best_loss) {
      best_loss = loss;
      best = params;
    }
    if (loss > prev_loss) {
      ++increases;
      mu *= 4.0;
    } else {
      increases = 0;
      mu = std::max(mu / 3.0, 1e-12);
    }
    if (increases >= cfg.divergence_patience)
      throw Error(ErrorCode::OptimizationDiverged, "loss increased for " + std::to_string(increases) + " steps");
    prev_loss = loss;
    res.iterations = it;
    if (detail::max_joint_error(skel, pose, target) < cfg.tol) break;

    const MatX jac = detail::fk_jacobian(skel, pose);
    MatX h = jac.transpose() * jac;
    h.diagonal().array() += mu * (1.0 + h.diagonal().array());
    const VecX step = h.ldlt().solve(detail::pack_gradient(g));
    params -= cfg.learning_rate * step;
    try {
      detail::canonicalize_rot6d(params, n);
    } catch (const Error&) {
      throw Error(ErrorCode::OptimizationDiverged, "step produced a degenerate rotation");
    }
  }
  res.pose = detail::unpack_pose(best, n);
  res.max_residual = detail::max_joint_error(skel, res.pose, target);
  return res;
}

// Windows for every frame of a sequence with duplicated edges.
inline std::array<JointFrame, 3> fitting_window(const Motion& motion, std::size_t i) {
  const std::size_t n = motion.size();
  return {motion[i == 0 ? i : i - 1], motion[i], motion[i + 1 < n ? i + 1 : i]};
}

}  // namespace motionforge
