#pragma once

// Synthetic sessions: a Markov walk over the graph with optional intentional
// skips, frame-quantized durations, and confusion-matrix observation noise.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <boost/random/gamma_distribution.hpp>

#include "stepwise/error.hpp"
#include "stepwise/forecaster.hpp"
#include "stepwise/graph.hpp"
#include "stepwise/random.hpp"
#include "stepwise/tracker.hpp"

namespace stepwise {

using Matrix = std::vector<std::vector<double>>;

struct Scenario {
  TransitionGraph graph;
  std::map<StepId, double> skip;  // step -> probability of skipping it
  // Row i: distribution of the frame classifier's top class given true step
  // i. N or N+1 columns (the extra one is a background class).
  Matrix confusion;
  double duration_jitter = 1.0;  // multiplier on each step's std
  double kappa = 50.0;           // Dirichlet concentration; infinity = no jitter
  double peak = 0.5;             // weight of the drawn class in the frame vector
  std::uint64_t seed = 0;
  double frame_length = 0.2;
  double max_session_length = 3600.0;
  // Extra idle time appended when the final step was skipped, so a
  // notify-if-forgotten timer for it can run out.
  double tail_if_terminal_skipped = 0.0;

  std::size_t columns() const { return confusion.empty() ? 0 : confusion.front().size(); }

  void validate() const {
    const auto violations = validate_graph(graph);
    if (!violations.empty())
      throw Error("simulator", "scenario graph invalid: " + violations.front().rule + " at " +
                                   violations.front().subject);
    const auto n = graph.size();
    if (confusion.size() != n) throw Error("simulator", "confusion must have one row per step");
    for (const auto& row : confusion) {
      if (row.size() != n && row.size() != n + 1)
        throw Error("simulator", "confusion rows must have N or N+1 columns");
      if (row.size() != confusion.front().size()) throw Error("simulator", "ragged confusion matrix");
      double s = 0.0;
      for (double x : row) {
        if (!(x >= 0.0)) throw Error("simulator", "negative confusion entry");
        s += x;
      }
      if (std::abs(s - 1.0) > 1e-9) throw Error("simulator", "confusion row does not sum to 1");
    }
    for (const auto& [s, p] : skip) {
      if (!graph.has_step(s)) throw Error("simulator", "skip entry for unknown step " + std::to_string(s));
      if (!(p >= 0.0 && p <= 1.0)) throw Error("simulator", "skip probability outside [0,1]");
    }
    if (!(duration_jitter >= 0.0)) throw Error("simulator", "duration_jitter must be >= 0");
    if (!(kappa > 0.0)) throw Error("simulator", "kappa must be > 0");
    if (!(peak >= 0.0 && peak <= 1.0)) throw Error("simulator", "peak must be in [0,1]");
    if (!(frame_length > 0.0)) throw Error("simulator", "frame_length must be > 0");
  }
};

struct SimulatedSession {
  SessionLog log;
  std::vector<FrameObservation> frames;
  std::vector<StepId> truth;  // generating step of each frame
  long tail_frames = 0;       // trailing idle frames not covered by the log
};

inline Matrix identity_confusion(std::size_t n) {
  Matrix m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

// Diagonal accuracy per step, remaining mass spread evenly over other steps.
inline Matrix confusion_from_accuracy(const std::vector<double>& accuracy) {
  const auto n = accuracy.size();
  Matrix m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (!(accuracy[i] >= 0.0 && accuracy[i] <= 1.0)) throw Error("simulator", "accuracy outside [0,1]");
    for (std::size_t j = 0; j < n; ++j)
      m[i][j] = i == j ? accuracy[i] : (n > 1 ? (1.0 - accuracy[i]) / static_cast<double>(n - 1) : 0.0);
    if (n == 1) m[0][0] = 1.0;
  }
  return m;
}

inline Matrix uniform_confusion(std::size_t n, double diagonal) {
  return confusion_from_accuracy(std::vector<double>(n, diagonal));
}

namespace detail {

inline std::uint64_t walk_seed(const Scenario& sc, std::uint64_t session) { return derive_seed(sc.seed, session, 0x77616c6bULL); }

inline std::uint64_t frame_seed(const Scenario& sc, std::uint64_t session, long frame) {
  return derive_seed(sc.seed, session, static_cast<std::uint64_t>(frame), 0x6f6273ULL);
}

template <class Rng>
std::size_t draw_index(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return 0;
}

}  // namespace detail

// Observation for one frame: a class j is drawn from the true step's
// confusion row, and the frame vector is Dirichlet(kappa * base) with
// base = peak * onehot(j) + (1 - peak) * row. Its expectation is the row.
inline FrameObservation emit_observation(StepId true_step, const Scenario& sc, std::uint64_t session, long frame_index) {
  const auto& row = sc.confusion.at(true_step - 1);
  SplitMix64 rng(detail::frame_seed(sc, session, frame_index));
  const std::size_t drawn = detail::draw_index(row, rng);
  std::vector<double> base(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) base[j] = (1.0 - sc.peak) * row[j] + (j == drawn ? sc.peak : 0.0);

  FrameObservation obs;
  obs.t = static_cast<double>(frame_index + 1) * sc.frame_length;
  obs.probs.assign(row.size(), 0.0);
  if (!std::isfinite(sc.kappa)) {
    obs.probs = base;
    return obs;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double alpha = sc.kappa * base[j];
    if (alpha <= 0.0) continue;
    boost::random::gamma_distribution<double> gamma(alpha, 1.0);
    obs.probs[j] = gamma(rng);
    total += obs.probs[j];
  }
  if (total > 0.0) {
    for (double& p : obs.probs) p /= total;
  } else {
    obs.probs = base;
  }
  return obs;
}

inline SimulatedSession simulate_session(const Scenario& sc, std::uint64_t session = 0) {
  sc.validate();
  const auto& g = sc.graph;
  const auto adj = adjacency(g);
  SplitMix64 rng(detail::walk_seed(sc, session));

  SimulatedSession out;
  char id[64];
  std::snprintf(id, sizeof id, "sim-%llu-%04llu", static_cast<unsigned long long>(sc.seed),
                static_cast<unsigned long long>(session));
  out.log.id = id;

  std::vector<double> init_w;
  std::vector<StepId> init_s;
  for (const auto& [s, p] : g.initial) {
    init_s.push_back(s);
    init_w.push_back(p);
  }
  StepId at = init_s[detail::draw_index(init_w, rng)];

  std::set<StepId> decided_skip, decided_keep;
  long frame = 0;
  StepId last_performed = 0;
  bool last_was_skipped = false;
  const long max_frames = std::lround(sc.max_session_length / sc.frame_length);

  while (true) {
    bool skip = decided_skip.count(at) != 0;
    if (!skip && !decided_keep.count(at)) {
      const auto it = sc.skip.find(at);
      const double p = it == sc.skip.end() ? 0.0 : it->second;
      skip = p > 0.0 && rng.uniform() < p;
      (skip ? decided_skip : decided_keep).insert(at);
      if (skip) out.log.skipped.push_back(at);
    }
    last_was_skipped = skip;
    if (!skip) {
      StepDef jittered = g.step(at);
      jittered.std_duration *= sc.duration_jitter;
      const double d = draw_duration(jittered, DurationModel::truncated_normal, sc.frame_length, rng);
      const long n = std::max(1L, std::lround(d / sc.frame_length));
      out.log.annotations.push_back({at, static_cast<double>(frame) * sc.frame_length,
                                     static_cast<double>(frame + n) * sc.frame_length});
      for (long k = 0; k < n; ++k, ++frame) {
        out.frames.push_back(emit_observation(at, sc, session, frame));
        out.truth.push_back(at);
      }
      last_performed = at;
      if (frame > max_frames)
        throw Error("simulator", "session exceeded max length of " + std::to_string(sc.max_session_length) +
                                     " s (absorbing non-terminal cycle?)");
    }
    const auto& next = adj[at - 1];
    if (next.empty()) break;
    std::vector<double> w;
    for (const auto& [to, p] : next) w.push_back(p);
    at = next[detail::draw_index(w, rng)].first;
  }

  if (last_performed == 0) throw Error("simulator", "every step of the session was skipped");
  if (last_was_skipped && sc.tail_if_terminal_skipped > 0.0) {
    out.tail_frames = std::lround(sc.tail_if_terminal_skipped / sc.frame_length);
    for (long k = 0; k < out.tail_frames; ++k, ++frame) {
      out.frames.push_back(emit_observation(last_performed, sc, session, frame));
      out.truth.push_back(last_performed);
    }
  }
  return out;
}

}  // namespace stepwise
