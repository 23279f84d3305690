#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "stepwise/random.hpp"
#include "stepwise/tracker.hpp"

using namespace stepwise;

namespace {

FrameObservation onehot(double t, std::size_t n, StepId s) {
  FrameObservation f;
  f.t = t;
  f.probs.assign(n, 0.0);
  f.probs[s - 1] = 1.0;
  return f;
}

FrameObservation random_obs(double t, std::size_t n, SplitMix64& rng) {
  FrameObservation f;
  f.t = t;
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += f.probs.emplace_back(rng.uniform() + 1e-3);
  for (double& p : f.probs) p /= z;
  return f;
}

}  // namespace

TEST(TrackerConfig, DerivedWindows) {
  TrackerConfig c;
  EXPECT_EQ(c.smooth_frames(), 5u);
  EXPECT_EQ(c.window_frames(), 25u);
  c.frame_length = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Tracker, InitialBeliefFollowsInitialDistribution) {
  auto g = fixtures::fork();
  g.initial = {{1, 0.25}, {3, 0.75}};
  const auto b = init_belief(g);
  EXPECT_EQ(b.posterior, (std::vector<double>{0.25, 0.0, 0.75, 0.0}));
  EXPECT_EQ(b.decoded_step, 3);
  EXPECT_EQ(b.t, 0.0);
}

TEST(Tracker, UniformObservationLeavesPriorPrediction) {
  const auto g = fixtures::chain({1.0, 1.0, 1.0});
  TrackerConfig cfg;
  FrameObservation f{0.2, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  const auto b = update_belief(init_belief(g), f, g, cfg);
  // stay = max(0.5, 1 - 0.2/1) = 0.8
  EXPECT_NEAR(b.posterior[0], 0.8, 1e-12);
  EXPECT_NEAR(b.posterior[1], 0.2, 1e-12);
  EXPECT_NEAR(b.elapsed_in_step[0], 0.2, 1e-12);
  EXPECT_NEAR(b.elapsed_in_step[1], 0.0, 1e-12);
}

TEST(Tracker, SelfTransitionFloorAppliesToShortSteps) {
  const auto g = fixtures::chain({0.2, 5.0});
  TrackerConfig cfg;
  const FrameTransitionModel m(g, cfg);
  EXPECT_DOUBLE_EQ(m.stay(0), 0.5);
  EXPECT_DOUBLE_EQ(m.stay(1), 1.0);  // terminal without edges is absorbing
}

TEST(Tracker, TimestampMustAdvanceOneFrame) {
  const auto g = fixtures::fork();
  TrackerConfig cfg;
  EXPECT_THROW(update_belief(init_belief(g), onehot(0.4, 4, 1), g, cfg), Error);
  EXPECT_THROW(update_belief(init_belief(g), onehot(0.0, 4, 1), g, cfg), Error);
  EXPECT_NO_THROW(update_belief(init_belief(g), onehot(0.2, 4, 1), g, cfg));
}

TEST(Tracker, RejectsMalformedObservations) {
  const auto g = fixtures::fork();
  TrackerConfig cfg;
  const auto b = init_belief(g);
  EXPECT_THROW(update_belief(b, FrameObservation{0.2, {0.5, 0.5}}, g, cfg), Error);
  EXPECT_THROW(update_belief(b, FrameObservation{0.2, {0.5, 0.5, 0.5, 0.5}}, g, cfg), Error);
  EXPECT_THROW(update_belief(b, FrameObservation{0.2, {1.5, -0.5, 0.0, 0.0}}, g, cfg), Error);
  // N + 1 columns: background.
  EXPECT_NO_THROW(update_belief(b, FrameObservation{0.2, {0.2, 0.2, 0.2, 0.2, 0.2}}, g, cfg));
}

TEST(Tracker, BackgroundFoldAndDrop) {
  const auto g = fixtures::chain({1.0, 1.0});
  TrackerConfig fold;
  TrackerConfig drop;
  drop.background = BackgroundMode::drop;
  const FrameObservation f{0.2, {0.1, 0.1, 0.8}};
  const auto a = update_belief(init_belief(g), f, g, fold);
  const auto b = update_belief(init_belief(g), f, g, drop);
  // Folding renormalizes (0.1, 0.1) to (0.5, 0.5); dropping keeps (0.1, 0.1)
  // which is the same ratio, so both agree here.
  EXPECT_NEAR(a.posterior[0], b.posterior[0], 1e-12);
  // All mass on background: fold gives a uniform emission.
  const auto c = update_belief(init_belief(g), FrameObservation{0.2, {0.0, 0.0, 1.0}}, g, fold);
  EXPECT_NEAR(c.posterior[0], 0.8, 1e-12);
}

// Property: the sparse recursion equals a dense matrix forward pass.
TEST(Tracker, PropertyMatchesDenseForwardRecursion) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto g = seed % 2 ? fixtures::double_fork() : fixtures::two_branch();
    TrackerConfig cfg;
    const auto a = oracle::transition_matrix(g, cfg);
    SplitMix64 rng(seed);
    auto b = init_belief(g);
    auto dense = b.posterior;
    for (int k = 1; k <= 300; ++k) {
      const auto obs = random_obs(k * cfg.frame_length, g.size(), rng);
      b = update_belief(b, obs, g, cfg);
      dense = oracle::forward_step(a, dense, obs.probs, cfg.emission_smoothing);
      double z = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) {
        ASSERT_NEAR(b.posterior[j], dense[j], 1e-9) << "seed " << seed << " frame " << k;
        ASSERT_GE(b.elapsed_in_step[j], 0.0);
        ASSERT_LE(b.elapsed_in_step[j], b.t + 1e-9);
        z += b.posterior[j];
      }
      ASSERT_NEAR(z, 1.0, 1e-9);
    }
  }
}

TEST(Tracker, ElapsedTracksTimeInStepUnderCleanObservations) {
  const auto g = fixtures::chain({10.0, 10.0, 10.0});
  TrackerConfig cfg;
  Tracker tr(g, cfg);
  int frame = 0;
  for (int k = 0; k < 30; ++k) tr.update(onehot(++frame * 0.2, 3, 1));
  EXPECT_EQ(tr.belief().decoded_step, 1);
  EXPECT_NEAR(tr.belief().elapsed_in_step[0], 6.0, 0.05);
  for (int k = 0; k < 20; ++k) tr.update(onehot(++frame * 0.2, 3, 2));
  EXPECT_EQ(tr.belief().decoded_step, 2);
  EXPECT_NEAR(tr.belief().elapsed_in_step[1], 4.0, 0.25);
}

TEST(Tracker, PredictionKeepsDistributionNormalized) {
  const auto g = fixtures::fork();
  TrackerConfig cfg;
  Tracker tr(g, cfg);
  for (int k = 0; k < 100; ++k) tr.predict();
  double z = 0.0;
  for (double p : tr.belief().posterior) z += p;
  EXPECT_NEAR(z, 1.0, 1e-12);
  EXPECT_NEAR(tr.belief().t, 20.0, 1e-9);
}

TEST(Detection, NeedsFiveSecondsOfHistory) {
  const auto g = fixtures::chain({100.0, 100.0});
  TrackerConfig cfg;
  std::vector<BeliefState> h;
  auto b = init_belief(g);
  for (int k = 1; k <= 24; ++k) h.push_back(b = update_belief(b, onehot(k * 0.2, 2, 1), g, cfg));
  EXPECT_FALSE(detect_step_completion(h, 1, cfg).has_value());
  h.push_back(b = update_belief(b, onehot(25 * 0.2, 2, 1), g, cfg));
  ASSERT_TRUE(detect_step_completion(h, 1, cfg).has_value());
  EXPECT_TRUE(*detect_step_completion(h, 1, cfg));
  EXPECT_FALSE(*detect_step_completion(h, 2, cfg));
}

TEST(Detection, FourPointEightSecondsIsNotEnough) {
  const auto g = fixtures::chain({100.0, 100.0});
  TrackerConfig cfg;
  CompletionDetector det(2, cfg);
  for (int k = 0; k < 24; ++k) det.push(std::vector<double>{0.0, 1.0});
  EXPECT_FALSE(det.ever_detected(2));
  det.push(std::vector<double>{0.0, 1.0});
  EXPECT_TRUE(det.ever_detected(2));
  EXPECT_TRUE(det.detected_since(2, 24));
}

TEST(Detection, TiesGoToLowestId) {
  TrackerConfig cfg;
  CompletionDetector det(2, cfg);
  for (int k = 0; k < 30; ++k) det.push(std::vector<double>{0.5, 0.5});
  EXPECT_TRUE(det.ever_detected(1));
  EXPECT_FALSE(det.ever_detected(2));
}

// Property: the online detector and the batch rule agree with a naive
// recomputation on noisy posterior streams.
TEST(Detection, PropertyOnlineBatchAndOracleAgree) {
  TrackerConfig cfg;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    SplitMix64 rng(seed);
    const std::size_t n = 3;
    std::vector<std::vector<double>> posts;
    std::vector<BeliefState> hist;
    CompletionDetector det(n, cfg);
    StepId favoured = 1;
    for (int k = 0; k < 200; ++k) {
      if (rng.uniform() < 0.03) favoured = static_cast<StepId>(1 + (favoured % n));
      std::vector<double> p(n);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += p[j] = rng.uniform() + (static_cast<StepId>(j + 1) == favoured ? 0.8 : 0.0);
      for (double& x : p) x /= z;
      posts.push_back(p);
      BeliefState b;
      b.posterior = p;
      hist.push_back(b);
      det.push(p);
    }
    for (StepId s = 1; s <= static_cast<StepId>(n); ++s) {
      const long first = oracle::first_detection(posts, s, cfg.smooth_frames(), cfg.window_frames());
      EXPECT_EQ(det.ever_detected(s), first >= 0) << "seed " << seed << " step " << s;
      EXPECT_EQ(*detect_step_completion(hist, s, cfg), first >= 0);
      if (first >= 0) {
        // Batch rule over the prefix ending one frame early must not fire.
        std::span<const BeliefState> prefix(hist.data(), static_cast<std::size_t>(first));
        const auto r = detect_step_completion(prefix, s, cfg);
        EXPECT_TRUE(!r || !*r);
      }
    }
  }
}
