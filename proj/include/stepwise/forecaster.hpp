#pragma once

// Remaining-time forecasting. For a belief over the current step, the time
// until a target step begins is sampled by drawing the current step from the
// posterior, a trajectory to the target from the graph, and a duration for
// every step still to be spent on the way.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>

#include "stepwise/error.hpp"
#include "stepwise/graph.hpp"
#include "stepwise/random.hpp"
#include "stepwise/tracker.hpp"

namespace stepwise {

enum class DurationModel { truncated_normal, fixed_mean };

struct ForecastConfig {
  std::size_t n_samples = 10000;
  double bin_width = 1.0;      // seconds per entropy histogram bin
  DurationModel duration_model = DurationModel::truncated_normal;
  double min_duration = 0.2;   // lower truncation of duration draws
  std::uint64_t seed = 0;
  std::size_t max_paths = kDefaultMaxPaths;

  void validate() const {
    if (n_samples < 1) throw Error("forecaster", "n_samples must be >= 1");
    if (!(bin_width > 0.0)) throw Error("forecaster", "bin_width must be > 0");
    if (!(min_duration > 0.0)) throw Error("forecaster", "min_duration must be > 0");
    if (max_paths < 1) throw Error("forecaster", "max_paths must be >= 1");
  }
};

struct RemainingTimeDistribution {
  StepId target = 0;
  double t = 0.0;
  std::vector<double> samples;  // seconds, reachable portion only
  double bin_width = 1.0;
  double expectation = std::numeric_limits<double>::quiet_NaN();
  double entropy = std::numeric_limits<double>::quiet_NaN();  // nats
  double reachable_mass = 0.0;

  bool defined() const noexcept { return !samples.empty(); }

  // (bin start in seconds, probability) for every occupied bin.
  std::vector<std::pair<double, double>> histogram() const {
    std::map<long, std::size_t> counts;
    for (double x : samples) counts[static_cast<long>(std::floor(x / bin_width))] += 1;
    std::vector<std::pair<double, double>> out;
    out.reserve(counts.size());
    for (const auto& [bin, c] : counts)
      out.emplace_back(static_cast<double>(bin) * bin_width,
                       static_cast<double>(c) / static_cast<double>(samples.size()));
    return out;
  }
};

// -Σ p ln p over `bin_width`-wide bins of the samples.
inline double histogram_entropy(std::span<const double> samples, double bin_width) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
  std::vector<long> bins(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    bins[i] = static_cast<long>(std::floor(samples[i] / bin_width));
    lo = std::min(lo, bins[i]);
    hi = std::max(hi, bins[i]);
  }
  std::vector<std::uint32_t> counts(static_cast<std::size_t>(hi - lo + 1), 0);
  for (long b : bins) counts[static_cast<std::size_t>(b - lo)] += 1;
  const double n = static_cast<double>(samples.size());
  double h = 0.0;
  for (auto c : counts)
    if (c) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
  return std::max(0.0, h);
}

struct ForecastSummary {
  double expectation = 0.0;  // seconds
  double entropy = 0.0;      // nats
};

inline ForecastSummary summarize(const RemainingTimeDistribution& dist) {
  if (dist.samples.empty()) throw Error("forecaster", "cannot summarize an empty distribution");
  double sum = 0.0;
  for (double x : dist.samples) sum += x;
  return {sum / static_cast<double>(dist.samples.size()), histogram_entropy(dist.samples, dist.bin_width)};
}

// Duration draw for one step: normal(mean, std) truncated below at
// min_duration by rejection, or the plain mean.
template <class Rng>
double draw_duration(const StepDef& s, DurationModel model, double min_duration, Rng& rng) {
  if (model == DurationModel::fixed_mean || s.std_duration <= 0.0) return std::max(s.mean_duration, min_duration);
  boost::random::normal_distribution<double> normal(s.mean_duration, s.std_duration);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double d = normal(rng);
    if (d >= min_duration) return d;
  }
  return min_duration;
}

// Samples remaining time for one graph, caching enumerated trajectories per
// (origin, target). One instance per session; not safe for concurrent use.
class Forecaster {
 public:
  Forecaster(const TransitionGraph& g, ForecastConfig cfg)
      : graph_(g), cfg_(cfg), adj_(adjacency(g)), cache_(g.size() * g.size()) {
    cfg_.validate();
    reach_.assign(g.size(), std::vector<char>(g.size(), 0));
    for (StepId s = 1; s <= static_cast<StepId>(g.size()); ++s)
      for (StepId r : reachable_from(adj_, s)) reach_[s - 1][r - 1] = 1;
  }

  const TransitionGraph& graph() const noexcept { return graph_; }
  const ForecastConfig& config() const noexcept { return cfg_; }

  bool reaches(StepId from, StepId to) const { return reach_[from - 1][to - 1] != 0; }

  // Posterior mass on steps from which the target can still be reached.
  double reachable_mass(const BeliefState& b, StepId target) const {
    double m = 0.0;
    for (std::size_t i = 0; i < b.posterior.size(); ++i)
      if (reach_[i][target - 1]) m += b.posterior[i];
    return m;
  }

  const TrajectorySet& trajectories(StepId from, StepId to) const { return entry(from, to).set; }

  RemainingTimeDistribution sample(const BeliefState& b, StepId target, std::uint64_t seed) const {
    if (!graph_.has_step(target)) throw Error("forecaster", "unknown target step " + std::to_string(target));
    if (b.posterior.size() != graph_.size()) throw Error("forecaster", "belief dimension does not match the graph");

    RemainingTimeDistribution dist;
    dist.target = target;
    dist.t = b.t;
    dist.bin_width = cfg_.bin_width;

    std::vector<double> cum(b.posterior.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < cum.size(); ++i) cum[i] = (acc += b.posterior[i]);
    if (!(acc > 0.0)) return dist;

    dist.samples.reserve(cfg_.n_samples);
    for (std::size_t i = 0; i < cfg_.n_samples; ++i) {
      SplitMix64 rng(derive_seed(seed, i));
      const double u = rng.uniform() * acc;
      auto at = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      at = std::min(at, cum.size() - 1);
      while (at > 0 && b.posterior[at] == 0.0) --at;  // u landed on an empty cell edge
      const auto s = static_cast<StepId>(at + 1);
      if (s == target) {
        dist.samples.push_back(0.0);
        continue;
      }
      if (!reach_[at][target - 1]) continue;
      const auto& e = entry(s, target);
      const double v = rng.uniform();
      auto k = static_cast<std::size_t>(std::upper_bound(e.cumulative.begin(), e.cumulative.end(), v) -
                                        e.cumulative.begin());
      k = std::min(k, e.cumulative.size() - 1);

      const double d0 = draw_duration(graph_.steps[at], cfg_.duration_model, cfg_.min_duration, rng);
      double remaining = std::max(0.0, d0 - b.elapsed_in_step[at]);
      const auto& path = e.set.trajectories[k].path;
      for (std::size_t j = 1; j + 1 < path.size(); ++j)
        remaining += draw_duration(graph_.steps[path[j] - 1], cfg_.duration_model, cfg_.min_duration, rng);
      dist.samples.push_back(remaining);
    }
    dist.reachable_mass = static_cast<double>(dist.samples.size()) / static_cast<double>(cfg_.n_samples);
    if (!dist.samples.empty()) {
      const auto s = summarize(dist);
      dist.expectation = s.expectation;
      dist.entropy = s.entropy;
    }
    return dist;
  }

 private:
  struct Entry {
    TrajectorySet set;
    std::vector<double> cumulative;
  };

  const Entry& entry(StepId from, StepId to) const {
    auto& slot = cache_[static_cast<std::size_t>(from - 1) * graph_.size() + static_cast<std::size_t>(to - 1)];
    if (!slot) {
      Entry e;
      e.set = detail::enumerate_simple_paths(graph_, adj_, from, to, cfg_.max_paths);
      double acc = 0.0;
      for (const auto& t : e.set.trajectories) e.cumulative.push_back(acc += t.prob);
      slot = std::move(e);
    }
    return *slot;
  }

  TransitionGraph graph_;
  ForecastConfig cfg_;
  Adjacency adj_;
  std::vector<std::vector<char>> reach_;
  mutable std::vector<std::optional<Entry>> cache_;
};

// Monte Carlo distribution of the remaining time to `target`. Throws
// UnreachableTarget when no sample lands on a step that can reach it.
inline RemainingTimeDistribution sample_remaining_time(const TransitionGraph& g, const BeliefState& belief,
                                                       StepId target, const ForecastConfig& cfg) {
  Forecaster f(g, cfg);
  auto dist = f.sample(belief, target, cfg.seed);
  if (!dist.defined())
    throw UnreachableTarget("forecaster", "s" + std::to_string(target) + " unreachable from the current belief");
  return dist;
}

// Deterministic expectation with mean durations, over the same trajectory
// sets the sampler uses. Current-step residual is mean - elapsed, floored at
// zero; mass on steps that cannot reach the target is excluded.
inline double exact_expected_remaining_time(const TransitionGraph& g, const BeliefState& belief, StepId target,
                                            std::size_t max_paths = kDefaultMaxPaths) {
  if (!g.has_step(target)) throw Error("forecaster", "unknown target step " + std::to_string(target));
  const auto adj = adjacency(g);
  double mass = 0.0, total = 0.0;
  for (std::size_t i = 0; i < belief.posterior.size(); ++i) {
    const double p = belief.posterior[i];
    if (p <= 0.0) continue;
    const auto s = static_cast<StepId>(i + 1);
    if (s == target) {
      mass += p;
      continue;
    }
    const auto set = detail::enumerate_simple_paths(g, adj, s, target, max_paths);
    if (set.empty()) continue;
    double through = 0.0;
    for (const auto& t : set.trajectories) through += t.prob * t.mean_transit_time;
    const double residual = std::max(0.0, g.steps[i].mean_duration - belief.elapsed_in_step[i]);
    mass += p;
    total += p * (residual + through);
  }
  if (!(mass > 0.0))
    throw UnreachableTarget("forecaster", "s" + std::to_string(target) + " unreachable from the current belief");
  return total / mass;
}

}  // namespace stepwise
