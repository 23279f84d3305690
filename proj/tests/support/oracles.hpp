#pragma once

// Reference implementations written independently of the library code, used
// to compute expected values. They favour obviousness over speed.

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "stepwise/graph.hpp"
#include "stepwise/tracker.hpp"

namespace oracle {

using namespace stepwise;

struct Path {
  std::vector<StepId> steps;
  double prob = 1.0;
};

// Every simple path from `from` to `to`, scanning the raw edge list.
inline std::vector<Path> all_simple_paths(const TransitionGraph& g, StepId from, StepId to) {
  std::vector<Path> out;
  Path cur{{from}, 1.0};
  auto rec = [&](auto&& self, StepId at) -> void {
    if (at == to) {
      out.push_back(cur);
      return;
    }
    for (const auto& e : g.edges) {
      if (e.from != at) continue;
      bool seen = false;
      for (StepId s : cur.steps) seen = seen || s == e.to;
      if (seen) continue;
      cur.steps.push_back(e.to);
      const double before = cur.prob;
      cur.prob *= e.prob;
      self(self, e.to);
      cur.prob = before;
      cur.steps.pop_back();
    }
  };
  rec(rec, from);
  return out;
}

// Σ_s P(s) Σ_τ P(τ) (residual(s) + Σ intermediate means), over steps that
// reach the target, renormalized by their mass.
inline double expected_remaining(const TransitionGraph& g, const std::vector<double>& posterior,
                                 const std::vector<double>& elapsed, StepId target) {
  double mass = 0.0, total = 0.0;
  for (std::size_t i = 0; i < posterior.size(); ++i) {
    if (posterior[i] <= 0.0) continue;
    const StepId s = static_cast<StepId>(i + 1);
    if (s == target) {
      mass += posterior[i];
      continue;
    }
    const auto paths = all_simple_paths(g, s, target);
    if (paths.empty()) continue;
    double z = 0.0;
    for (const auto& p : paths) z += p.prob;
    double through = 0.0;
    for (const auto& p : paths) {
      double t = 0.0;
      for (std::size_t k = 1; k + 1 < p.steps.size(); ++k) t += g.steps[p.steps[k] - 1].mean_duration;
      through += p.prob / z * t;
    }
    const double residual = std::max(0.0, g.steps[i].mean_duration - elapsed[i]);
    mass += posterior[i];
    total += posterior[i] * (residual + through);
  }
  return total / mass;
}

// Dense frame-level transition matrix.
inline std::vector<std::vector<double>> transition_matrix(const TransitionGraph& g, const TrackerConfig& cfg) {
  const auto n = g.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double out = 0.0;
    for (const auto& e : g.edges)
      if (e.from == static_cast<StepId>(i + 1) && e.to != e.from) out += e.prob;
    if (out == 0.0) {
      a[i][i] = 1.0;
      continue;
    }
    const double stay = std::max(cfg.self_transition_floor, 1.0 - cfg.frame_length / g.steps[i].mean_duration);
    a[i][i] = stay;
    for (const auto& e : g.edges)
      if (e.from == static_cast<StepId>(i + 1) && e.to != e.from) a[i][e.to - 1] += (1.0 - stay) * e.prob / out;
  }
  return a;
}

// One predict/correct step with a dense matrix; observation has N entries.
inline std::vector<double> forward_step(const std::vector<std::vector<double>>& a, const std::vector<double>& prior,
                                        const std::vector<double>& obs, double eps) {
  const auto n = prior.size();
  std::vector<double> post(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) post[j] += prior[i] * a[i][j];
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    post[j] *= (1.0 - eps) * obs[j] + eps / static_cast<double>(n);
    z += post[j];
  }
  for (double& p : post) p /= z;
  return post;
}

// Frame index at which `step` first holds the trailing-average argmax for
// `need` frames in a row, or -1.
inline long first_detection(const std::vector<std::vector<double>>& posteriors, StepId step, std::size_t k,
                            std::size_t need) {
  long run = 0;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    const std::size_t lo = i + 1 >= k ? i + 1 - k : 0;
    std::vector<double> avg(posteriors[i].size(), 0.0);
    for (std::size_t f = lo; f <= i; ++f)
      for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += posteriors[f][j] / static_cast<double>(i + 1 - lo);
    std::size_t best = 0;
    for (std::size_t j = 1; j < avg.size(); ++j)
      if (avg[j] > avg[best]) best = j;
    run = static_cast<StepId>(best + 1) == step ? run + 1 : 0;
    if (run == static_cast<long>(need)) return static_cast<long>(i);
  }
  return -1;
}

inline double histogram_entropy(const std::vector<double>& xs, double width) {
  std::map<long long, double> counts;
  for (double x : xs) counts[static_cast<long long>(std::floor(x / width))] += 1.0;
  double h = 0.0;
  for (const auto& [bin, c] : counts) {
    const double p = c / static_cast<double>(xs.size());
    h -= p * std::log(p);
  }
  return h;
}

// Macro-averaged F1 over classes 1..n.
inline double macro_f1(const std::vector<StepId>& truth, const std::vector<StepId>& pred, int n) {
  double sum = 0.0;
  int classes = 0;
  for (int c = 1; c <= n; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += truth[i] == c && pred[i] == c;
      fp += truth[i] != c && pred[i] == c;
      fn += truth[i] == c && pred[i] != c;
    }
    if (tp + fp + fn == 0) continue;
    sum += 2 * tp / (2 * tp + fp + fn);
    ++classes;
  }
  return sum / classes;
}

}  // namespace oracle
