#include "motionforge/diffusion.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace motionforge;

namespace {

MatX random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  MatX m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

EpisodeMask random_mask(Eigen::Index r, Eigen::Index c, Rng& rng, double p) {
  EpisodeMask m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p;
  return m;
}

const NoisePredictor kZeroPredictor = [](const MatX& x, int) { return MatX::Zero(x.rows(), x.cols()); };

}  // namespace

TEST(Schedule, SingleStep) {
  const auto s = make_schedule(1, 0.1, 0.1);
  ASSERT_EQ(s.alpha.size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha[0], 0.9);
  EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.9);
}

TEST(Schedule, ConstantBeta) {
  const double b = 0.03;
  const auto s = make_schedule(20, b, b);
  for (int t = 0; t < 20; ++t) {
    EXPECT_DOUBLE_EQ(s.alpha[t], 1 - b);
    EXPECT_NEAR(s.alpha_bar[t], std::pow(1 - b, t + 1), 1e-14);
  }
}

TEST(Schedule, ProductMatchesHighPrecisionLoop) {
  const auto s = make_schedule(50, 1e-4, 0.02);
  long double prod = 1.0L;
  for (int t = 0; t < 50; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * t / 49.0L;
    prod *= 1.0L - beta;
    EXPECT_NEAR(s.alpha_bar[t], static_cast<double>(prod), 1e-12);
    EXPECT_GT(s.alpha[t], 0.0);
    EXPECT_LT(s.alpha[t], 1.0);
    if (t > 0) EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
  }
  EXPECT_NEAR(s.beta.front(), 1e-4, 1e-18);
  EXPECT_NEAR(s.beta.back(), 0.02, 1e-17);
}

TEST(Schedule, InvalidRangesThrow) {
  for (auto [t, b0, b1] : std::vector<std::tuple<int, double, double>>{
           {0, 0.1, 0.2}, {10, 0.0, 0.2}, {10, 0.3, 0.2}, {10, 0.1, 1.0}, {10, -0.1, 0.2}}) {
    try {
      make_schedule(t, b0, b1);
      FAIL() << t << " " << b0 << " " << b1;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidSchedule);
    }
  }
}

TEST(Schedule, DefaultEndsNearNoise) {
  const auto s = default_schedule(50);
  EXPECT_LT(s.alpha_bar.back(), 1e-3);
  EXPECT_NEAR(s.beta.front(), 2e-3, 1e-15);
  EXPECT_NEAR(s.beta.back(), 0.4, 1e-15);
}

TEST(EpisodeMaskTest, TransitionAndGoalParts) {
  const auto nav = make_episode_mask(16, 24, 2, Subgoal::navigation(Vec2(1, 2)));
  EXPECT_EQ(nav.count(), 2 * 72 + 2);
  EXPECT_TRUE(nav(15, 0) && nav(15, 1) && !nav(15, 2));
  const auto hand = make_episode_mask(16, 24, 2, Subgoal::reach(15, Vec3(1, 2, 3)));
  EXPECT_EQ(hand.count(), 2 * 72 + 3);
  EXPECT_TRUE(hand(15, 45) && hand(15, 46) && hand(15, 47));
  EXPECT_THROW(make_episode_mask(4, 24, 4, Subgoal::navigation(Vec2::Zero())), Error);
}

TEST(ForwardNoise, FullMaskIsBitExact) {
  Rng rng(1);
  const MatX x0 = random_matrix(16, 72, rng);
  const auto s = default_schedule();
  const auto r = forward_noise(x0, 30, s, EpisodeMask::Constant(16, 72, true), rng);
  EXPECT_TRUE((r.x_t.array() == x0.array()).all());
  EXPECT_EQ(r.noise.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ForwardNoise, NoNoiseLimit) {
  Rng rng(2);
  const MatX x0 = random_matrix(16, 72, rng);
  const auto s = make_schedule(10, 1e-8, 1e-2);
  const auto r = forward_noise(x0, 0, s, EpisodeMask::Constant(16, 72, false), rng);
  const double ab = s.alpha_bar[0];
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    EXPECT_NEAR(r.x_t.data()[i], std::sqrt(ab) * x0.data()[i] + std::sqrt(1 - ab) * r.noise.data()[i], 1e-15);
    EXPECT_LT(std::abs(r.x_t.data()[i] - x0.data()[i]), 1e-3 * (1 + std::abs(x0.data()[i])));
  }
}

TEST(ForwardNoise, MonteCarloMoments) {
  Rng rng(3);
  const auto s = default_schedule();
  const int t = 40;
  const Eigen::Index n = 100000;
  const auto r = forward_noise(MatX::Zero(1, n), t, s, EpisodeMask::Constant(1, n, false), rng);
  const double mean = r.x_t.mean();
  const double var = (r.x_t.array() - mean).square().sum() / (n - 1);
  const double target_var = 1 - s.alpha_bar[t];
  EXPECT_LT(std::abs(mean), 3 * std::sqrt(target_var / n));
  EXPECT_LT(std::abs(var - target_var), 3 * target_var * std::sqrt(2.0 / (n - 1)));
}

TEST(ForwardNoise, StepwiseCompositionMatchesClosedForm) {
  Rng rng(4);
  const auto s = default_schedule(50);
  const Eigen::Index n = 100000;
  const double x0 = 1.5;
  MatX x = MatX::Constant(1, n, x0);
  const EpisodeMask open = EpisodeMask::Constant(1, n, false);
  for (int t = 0; t < 50; ++t) {
    x = forward_step(x, t, s, open, rng);
    if (t == 4 || t == 19 || t == 49) {
      const double mean = x.mean();
      const double var = (x.array() - mean).square().sum() / (n - 1);
      const double m_ref = std::sqrt(s.alpha_bar[t]) * x0, v_ref = 1 - s.alpha_bar[t];
      EXPECT_LT(std::abs(mean - m_ref), 3 * std::sqrt(v_ref / n)) << "t=" << t;
      EXPECT_LT(std::abs(var - v_ref), 3 * v_ref * std::sqrt(2.0 / (n - 1))) << "t=" << t;
    }
  }
}

TEST(MaskedLossTest, PerfectPredictionIsZero) {
  Rng rng(5);
  const MatX eps = random_matrix(16, 72, rng);
  const auto mask = make_episode_mask(16, 24, 2, Subgoal::navigation(Vec2::Zero()));
  const auto l = masked_loss(eps, eps, mask, LossKind::Huber);
  EXPECT_EQ(l.loss, 0.0);
  EXPECT_EQ(l.dpred.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MaskedLossTest, QuadraticRegimeIsHalfMse) {
  Rng rng(6);
  const MatX eps = random_matrix(16, 72, rng);
  MatX pred = eps;
  for (Eigen::Index i = 0; i < pred.size(); ++i) pred.data()[i] += rng.uniform(-0.9, 0.9);
  const auto mask = make_episode_mask(16, 24, 2, Subgoal::navigation(Vec2::Zero()));
  double sq = 0;
  int count = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    if (!mask.data()[i]) {
      sq += std::pow(pred.data()[i] - eps.data()[i], 2);
      ++count;
    }
  EXPECT_NEAR(masked_loss(pred, eps, mask, LossKind::Huber).loss, 0.5 * sq / count, 1e-14);
  EXPECT_NEAR(masked_loss(pred, eps, mask, LossKind::L2).loss, sq / count, 1e-14);
}

TEST(MaskedLossTest, MaskedEntriesIgnored) {
  Rng rng(7);
  const MatX eps = random_matrix(4, 6, rng);
  MatX pred = eps;
  const auto mask = make_episode_mask(4, 2, 1, Subgoal::navigation(Vec2::Zero()));
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    if (mask.data()[i]) pred.data()[i] += 100;
  EXPECT_EQ(masked_loss(pred, eps, mask, LossKind::Huber).loss, 0.0);
}

TEST(TrainingLoss, NonFiniteLossReportsStep) {
  MotionModel m(DenoiserConfig{8, 1, 2, 8, 0.0, 4, 6, 5, 6, 2, 2, 1, 2, 8, true});
  m.init(1);
  TrainingExample ex;
  ex.x0 = MatX::Zero(4, 6);
  ex.x0(3, 4) = std::numeric_limits<double>::quiet_NaN();
  ex.mask = make_episode_mask(4, 2, 1, Subgoal::navigation(Vec2::Zero()));
  ex.scene_tokens = MatX::Zero(2, 6);
  ex.action_labels = MatX::Zero(4, 2);
  try {
    training_loss_at(m, ex, 3, MatX::Zero(4, 6), make_schedule(5, 0.01, 0.2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NumericalError);
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos);
  }
}

TEST(Sampler, FullMaskReturnsConditioning) {
  Rng rng(8);
  const MatX cond = random_matrix(16, 72, rng);
  const NoisePredictor wild = [](const MatX& x, int) { return MatX::Constant(x.rows(), x.cols(), 1e3); };
  const MatX out = sample_masked(wild, cond, EpisodeMask::Constant(16, 72, true), default_schedule(), rng);
  EXPECT_TRUE((out.array() == cond.array()).all());
}

TEST(Sampler, ZeroPredictorMatchesScalarOracle) {
  const auto s = default_schedule(50);
  Rng data(9);
  const MatX cond = random_matrix(6, 9, data);
  const EpisodeMask mask = random_mask(6, 9, data, 0.3);

  Rng rng(123);
  const MatX out = sample_masked(kZeroPredictor, cond, mask, s, rng);

  // Independent cascade: x_T ~ N(0, 1); x_{t-1} = x_t / sqrt(alpha_t) + sqrt(beta_t) z (t > 0).
  Rng oracle_rng(123);
  std::vector<double> state(cond.size());
  for (Eigen::Index i = 0; i < cond.size(); ++i) state[i] = mask.data()[i] ? cond.data()[i] : oracle_rng.normal();
  for (int t = 49; t >= 0; --t)
    for (Eigen::Index i = 0; i < cond.size(); ++i) {
      if (mask.data()[i]) continue;
      state[i] = state[i] / std::sqrt(1.0 - s.beta[t]);
      if (t > 0) state[i] += std::sqrt(s.beta[t]) * oracle_rng.normal();
    }
  for (Eigen::Index i = 0; i < cond.size(); ++i) EXPECT_NEAR(out.data()[i], state[i], 1e-12 * (1 + std::abs(state[i])));
}

TEST(Sampler, MaskPreservedAtEveryStep) {
  const auto s = default_schedule(20);
  Rng rng(10);
  for (int run = 0; run < 20; ++run) {
    const MatX cond = random_matrix(16, 72, rng);
    const EpisodeMask mask = random_mask(16, 72, rng, rng.uniform(0.05, 0.9));
    const NoisePredictor noisy = [&](const MatX& x, int t) { return 0.3 * x + MatX::Constant(x.rows(), x.cols(), 0.01 * t); };
    int observed = 0;
    sample_masked(noisy, cond, mask, s, rng, [&](int, const MatX& x) {
      ++observed;
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (mask.data()[i]) ASSERT_EQ(x.data()[i], cond.data()[i]);
    });
    EXPECT_EQ(observed, 21);
  }
}

TEST(Sampler, SubgoalReachedExactlyAndDeterministic) {
  const auto s = default_schedule(10);
  Rng data(11);
  EpisodeSpec spec;
  spec.length = 16;
  spec.joint_count = 24;
  spec.transition = random_matrix(2, 72, data);
  spec.goal = Subgoal::navigation(Vec2(0.123456789, -2.5));
  Rng a(5), b(5);
  const MatX x1 = sample_episode(kZeroPredictor, spec, s, a);
  const MatX x2 = sample_episode(kZeroPredictor, spec, s, b);
  EXPECT_EQ(x1(15, 0), 0.123456789);
  EXPECT_EQ(x1(15, 1), -2.5);
  EXPECT_TRUE((x1.topRows(2).array() == spec.transition.array()).all());
  EXPECT_TRUE((x1.array() == x2.array()).all());

  spec.goal = Subgoal::reach(joints::kRightHand, Vec3(0.4, 0.5, 1.1));
  const MatX x3 = sample_episode(kZeroPredictor, spec, s, a);
  EXPECT_EQ(x3(15, 45), 0.4);
  EXPECT_EQ(x3(15, 46), 0.5);
  EXPECT_EQ(x3(15, 47), 1.1);
}

TEST(Sampler, NonFiniteStateThrows) {
  const NoisePredictor bad = [](const MatX& x, int) {
    return MatX::Constant(x.rows(), x.cols(), std::numeric_limits<double>::infinity());
  };
  Rng rng(1);
  EXPECT_THROW(sample_masked(bad, MatX::Zero(4, 3), EpisodeMask::Constant(4, 3, false), default_schedule(5), rng), Error);
}

TEST(GenerateLong, LengthsAndOverlaps) {
  const auto s = default_schedule(5);
  Rng data(12);
  EpisodeSpec seed;
  seed.transition = random_matrix(2, 72, data);
  auto fn = [&](const EpisodeSpec& spec, Rng& rng) { return sample_episode(kZeroPredictor, spec, s, rng); };

  for (int n : {1, 3, 5}) {
    std::vector<EpisodeSpec> seeds(n, seed);
    for (int i = 0; i < n; ++i) seeds[i].goal = Subgoal::navigation(Vec2(i, -i));
    Rng rng(13);
    const MatX out = generate_long(fn, seeds, 2, rng);
    EXPECT_EQ(out.rows(), n * 16 - (n - 1) * 2);
    // Re-run episode by episode to compare boundaries.
    Rng replay(13);
    MatX prev;
    for (int i = 0; i < n; ++i) {
      EpisodeSpec spec = seeds[i];
      if (i > 0) spec.transition = prev.bottomRows(2);
      const MatX ep = fn(spec, replay);
      if (i > 0) EXPECT_TRUE((ep.topRows(2).array() == prev.bottomRows(2).array()).all());
      const Eigen::Index row = i == 0 ? 0 : 16 + (i - 1) * 14;
      const Eigen::Index skip = i == 0 ? 0 : 2;
      EXPECT_TRUE((out.middleRows(row, 16 - skip).array() == ep.bottomRows(16 - skip).array()).all());
      EXPECT_EQ(out(i == 0 ? 15 : row + 13, 0), i);
      prev = ep;
    }
  }
  Rng rng(1);
  EXPECT_THROW(generate_long(fn, {}, 2, rng), Error);
}

TEST(FitPose, FixedPointIsExact) {
  const Skeleton skel = default_humanoid();
  Rng rng(14);
  const Pose p = mftest::random_pose(skel, rng, 0.5, 0.5);
  const JointFrame j = forward_kinematics(skel, p);
  const auto r = fit_pose_params({j, j, j}, skel, p);
  EXPECT_TRUE(r.pose == p);
  EXPECT_EQ(r.iterations, 0);
}

TEST(FitPose, RestJointsGiveIdentity) {
  const Skeleton skel = default_humanoid();
  const JointFrame j = forward_kinematics(skel, Pose::identity(24));
  const auto r = fit_pose_params({j, j, j}, skel, Pose::identity(24));
  EXPECT_TRUE(r.pose == Pose::identity(24));
  for (const auto& rot : r.pose.rotations) EXPECT_TRUE(rot6d_to_matrix(rot).isApprox(Mat3::Identity(), 0));
  EXPECT_EQ(r.pose.root_translation, Vec3::Zero());
}

TEST(FitPose, RecoversJointsFromRestInit) {
  const Skeleton skel = default_humanoid();
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = mftest::random_pose(skel, rng, 0.6, 0.5);
    const JointFrame j = forward_kinematics(skel, p);
    const auto r = fit_pose_params({j, j, j}, skel, Pose::identity(24));
    EXPECT_LT(r.max_residual, 1e-3);
    EXPECT_LT((forward_kinematics(skel, r.pose) - j).rowwise().norm().maxCoeff(), 1e-3) << "trial " << trial;
  }
}

TEST(FitPose, DivergenceIsReported) {
  const Skeleton skel = default_humanoid();
  Rng rng(16);
  const JointFrame j = forward_kinematics(skel, mftest::random_pose(skel, rng, 0.5, 0.3));
  FitConfig cfg;
  cfg.learning_rate = 1e6;
  try {
    fit_pose_params({j, j, j}, skel, Pose::identity(24), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OptimizationDiverged);
  }
}
