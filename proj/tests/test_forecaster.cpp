#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "stepwise/forecaster.hpp"
#include "stepwise/random.hpp"

using namespace stepwise;

namespace {

BeliefState at_step(const TransitionGraph& g, StepId s, double elapsed = 0.0) {
  auto b = init_belief(g);
  std::fill(b.posterior.begin(), b.posterior.end(), 0.0);
  b.posterior[s - 1] = 1.0;
  b.elapsed_in_step[s - 1] = elapsed;
  return b;
}

BeliefState random_belief(const TransitionGraph& g, SplitMix64& rng) {
  auto b = init_belief(g);
  double z = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    b.posterior[i] = rng.uniform() < 0.4 ? 0.0 : rng.uniform();
    z += b.posterior[i];
    b.elapsed_in_step[i] = rng.uniform() * g.steps[i].mean_duration * 1.2;
  }
  if (z == 0.0) b.posterior[0] = z = 1.0;
  for (double& p : b.posterior) p /= z;
  return b;
}

}  // namespace

TEST(Forecaster, DeterministicChainGivesExactSum) {
  const auto g = fixtures::chain({10.0, 20.0, 30.0});
  ForecastConfig cfg;
  cfg.n_samples = 500;
  const auto d = sample_remaining_time(g, at_step(g, 1), 3, cfg);
  EXPECT_EQ(d.samples.size(), 500u);
  EXPECT_DOUBLE_EQ(d.expectation, 30.0);
  EXPECT_DOUBLE_EQ(d.entropy, 0.0);
  EXPECT_DOUBLE_EQ(d.reachable_mass, 1.0);
  EXPECT_DOUBLE_EQ(sample_remaining_time(g, at_step(g, 1, 4.0), 3, cfg).expectation, 26.0);
}

TEST(Forecaster, ForkSplitsIntoTwoOutcomes) {
  const auto g = fixtures::fork();
  ForecastConfig cfg;
  cfg.seed = 11;
  const auto d = sample_remaining_time(g, at_step(g, 1), 4, cfg);
  // 20 or 30 s with equal odds.
  for (double x : d.samples) ASSERT_TRUE(x == 20.0 || x == 30.0);
  EXPECT_NEAR(d.expectation, 25.0, 0.2);
  EXPECT_NEAR(d.entropy, std::log(2.0), 1e-3);
  const auto h = d.histogram();
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[0].first, 20.0);
  EXPECT_NEAR(h[0].second + h[1].second, 1.0, 1e-12);
}

TEST(Forecaster, TargetIsCurrentStep) {
  const auto g = fixtures::fork();
  ForecastConfig cfg;
  cfg.n_samples = 100;
  const auto d = sample_remaining_time(g, at_step(g, 3, 5.0), 3, cfg);
  EXPECT_DOUBLE_EQ(d.expectation, 0.0);
}

TEST(Forecaster, ElapsedBeyondMeanFloorsResidualAtZero) {
  const auto g = fixtures::chain({10.0, 20.0, 30.0});
  EXPECT_DOUBLE_EQ(exact_expected_remaining_time(g, at_step(g, 1, 50.0), 3), 20.0);
}

TEST(Forecaster, UnreachableTargetThrows) {
  const auto g = fixtures::fork();
  ForecastConfig cfg;
  cfg.n_samples = 100;
  EXPECT_THROW(sample_remaining_time(g, at_step(g, 4), 2, cfg), UnreachableTarget);
  EXPECT_THROW(exact_expected_remaining_time(g, at_step(g, 3), 2), UnreachableTarget);
  EXPECT_THROW(sample_remaining_time(g, at_step(g, 1), 9, cfg), Error);
}

TEST(Forecaster, ReachableMassExcludesDeadEnds) {
  const auto g = fixtures::fork();
  auto b = at_step(g, 1);
  b.posterior = {0.5, 0.0, 0.5, 0.0};
  Forecaster f(g, ForecastConfig{});
  EXPECT_DOUBLE_EQ(f.reachable_mass(b, 2), 0.5);
  const auto d = f.sample(b, 2, 3);
  EXPECT_NEAR(d.reachable_mass, 0.5, 0.03);
  // Only the s1 -> s2 path remains: 10 s.
  EXPECT_DOUBLE_EQ(d.expectation, 10.0);
}

TEST(Forecaster, SameSeedSameSamples) {
  const auto g = fixtures::double_fork();
  ForecastConfig cfg;
  cfg.n_samples = 2000;
  cfg.seed = 99;
  const auto a = sample_remaining_time(g, at_step(g, 1), 7, cfg);
  const auto b = sample_remaining_time(g, at_step(g, 1), 7, cfg);
  EXPECT_EQ(a.samples, b.samples);
  cfg.seed = 100;
  EXPECT_NE(sample_remaining_time(g, at_step(g, 1), 7, cfg).samples, a.samples);
}

TEST(Forecaster, FixedMeanModelMatchesExactEnumeration) {
  const auto g = fixtures::double_fork();
  ForecastConfig cfg;
  cfg.duration_model = DurationModel::fixed_mean;
  cfg.n_samples = 20000;
  // With mean durations the only randomness is the path choice.
  const double exact = exact_expected_remaining_time(g, at_step(g, 1), 7);
  EXPECT_NEAR(sample_remaining_time(g, at_step(g, 1), 7, cfg).expectation, exact, 0.01 * exact);
}

// Property: the library's exact expectation equals a brute-force path scan.
TEST(Forecaster, PropertyExactExpectationMatchesOracle) {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = trial % 3 == 0 ? fixtures::fork() : trial % 3 == 1 ? fixtures::two_branch() : fixtures::double_fork();
    const auto b = random_belief(g, rng);
    const auto target = static_cast<StepId>(g.size());
    const double want = oracle::expected_remaining(g, b.posterior, b.elapsed_in_step, target);
    EXPECT_NEAR(exact_expected_remaining_time(g, b, target), want, 1e-9) << "trial " << trial;
  }
}

// Property: Monte Carlo agrees with the oracle within 2% at 10,000 samples.
TEST(Forecaster, PropertyMonteCarloWithinTwoPercent) {
  SplitMix64 rng(17);
  const auto g = fixtures::double_fork();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto b = random_belief(g, rng);
    std::fill(b.elapsed_in_step.begin(), b.elapsed_in_step.end(), 0.0);
    ForecastConfig cfg;
    cfg.seed = seed;
    const double want = oracle::expected_remaining(g, b.posterior, b.elapsed_in_step, 7);
    const auto d = sample_remaining_time(g, b, 7, cfg);
    EXPECT_NEAR(d.expectation, want, 0.02 * want) << "seed " << seed;
  }
}

TEST(Entropy, MatchesOracleAndBounds) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(1 + trial * 37);
    for (double& x : xs) x = rng.uniform() * 60.0;
    const double h = histogram_entropy(xs, 1.0);
    EXPECT_NEAR(h, oracle::histogram_entropy(xs, 1.0), 1e-9);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(60.0) + 1e-12);
    std::reverse(xs.begin(), xs.end());
    EXPECT_NEAR(histogram_entropy(xs, 1.0), h, 1e-12);
  }
  EXPECT_EQ(histogram_entropy(std::vector<double>(10, 4.2), 1.0), 0.0);
  EXPECT_TRUE(std::isnan(histogram_entropy(std::vector<double>{}, 1.0)));
}

TEST(Entropy, WiderBinsNeverIncreaseEntropy) {
  SplitMix64 rng(8);
  std::vector<double> xs(5000);
  for (double& x : xs) x = rng.uniform() * 100.0;
  EXPECT_LE(histogram_entropy(xs, 2.0), histogram_entropy(xs, 1.0));
}

TEST(ForecastConfig, RejectsBadValues) {
  ForecastConfig c;
  c.n_samples = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.bin_width = 0.0;
  EXPECT_THROW(c.validate(), Error);
}
