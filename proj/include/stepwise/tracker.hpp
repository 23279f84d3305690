#pragma once

// Online belief tracking over steps from frame-level class probabilities.
//
// The hidden process is a frame-rate Markov chain derived from the graph:
// a step keeps itself with probability max(floor, 1 - frame/mean_duration),
// so its expected dwell matches the graph's mean duration, and the rest of
// its mass leaves along graph edges in proportion to their probabilities.
// Each frame runs one predict/correct step of the forward recursion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepwise/error.hpp"
#include "stepwise/graph.hpp"

namespace stepwise {

enum class BackgroundMode { fold, drop };

struct TrackerConfig {
  double frame_length = 0.2;            // seconds
  double self_transition_floor = 0.5;
  double emission_smoothing = 0.01;     // epsilon of the uniform mix
  double detection_window = 5.0;        // seconds the smoothed argmax must hold
  double detection_smooth = 1.0;        // moving-average width, seconds
  BackgroundMode background = BackgroundMode::fold;

  void validate() const {
    if (!(frame_length > 0.0)) throw Error("tracker", "frame_length must be > 0");
    if (!(self_transition_floor >= 0.0 && self_transition_floor < 1.0))
      throw Error("tracker", "self_transition_floor must be in [0,1)");
    if (!(emission_smoothing >= 0.0 && emission_smoothing < 0.5))
      throw Error("tracker", "emission_smoothing must be in [0,0.5)");
    if (!(detection_window > 0.0) || !(detection_smooth > 0.0))
      throw Error("tracker", "detection windows must be > 0");
  }

  std::size_t smooth_frames() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(detection_smooth / frame_length)));
  }
  std::size_t window_frames() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(detection_window / frame_length - 1e-9)));
  }
};

struct FrameObservation {
  double t = 0.0;             // seconds since session start
  std::vector<double> probs;  // one per step, optionally + background
};

struct BeliefState {
  long frame = 0;  // frames consumed; t == frame * frame_length
  double t = 0.0;
  std::vector<double> posterior;        // P(s), index = step id - 1
  std::vector<double> elapsed_in_step;  // expected seconds spent, given in step
  StepId decoded_step = 0;
};

// Lowest id wins ties.
inline StepId argmax_step(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<StepId>(best + 1);
}

inline BeliefState init_belief(const TransitionGraph& g) {
  BeliefState b;
  b.posterior.assign(g.size(), 0.0);
  b.elapsed_in_step.assign(g.size(), 0.0);
  for (const auto& [id, p] : g.initial) b.posterior.at(id - 1) = p;
  b.decoded_step = argmax_step(b.posterior);
  return b;
}

// Frame-level transition matrix in sparse form.
class FrameTransitionModel {
 public:
  FrameTransitionModel(const TransitionGraph& g, const TrackerConfig& cfg) : n_(g.size()) {
    cfg.validate();
    stay_.resize(n_);
    leave_.resize(n_);
    const auto adj = adjacency(g);
    for (std::size_t i = 0; i < n_; ++i) {
      double total = 0.0;
      for (const auto& [to, p] : adj[i])
        if (to != static_cast<StepId>(i + 1)) total += p;
      if (total <= 0.0) {
        stay_[i] = 1.0;  // absorbing terminal
        continue;
      }
      stay_[i] = std::max(cfg.self_transition_floor,
                          1.0 - cfg.frame_length / g.steps[i].mean_duration);
      for (const auto& [to, p] : adj[i])
        if (to != static_cast<StepId>(i + 1)) leave_[i].emplace_back(to - 1, (1.0 - stay_[i]) * p / total);
    }
  }

  std::size_t size() const noexcept { return n_; }
  double stay(std::size_t i) const { return stay_[i]; }
  const std::vector<std::pair<std::size_t, double>>& leave(std::size_t i) const { return leave_[i]; }

 private:
  std::size_t n_;
  std::vector<double> stay_;
  std::vector<std::vector<std::pair<std::size_t, double>>> leave_;
};

namespace detail {

inline void check_observation(const FrameObservation& obs, std::size_t n) {
  if (obs.probs.size() != n && obs.probs.size() != n + 1)
    throw Error("tracker", "observation has " + std::to_string(obs.probs.size()) + " entries, graph has " +
                               std::to_string(n) + " steps");
  double sum = 0.0;
  for (double p : obs.probs) {
    if (!(p >= 0.0)) throw Error("tracker", "observation has a negative or NaN entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw Error("tracker", "observation probabilities sum to " + std::to_string(sum));
}

// Epsilon-smoothed emission likelihood per step.
inline std::vector<double> emission(const FrameObservation& obs, std::size_t n, const TrackerConfig& cfg) {
  std::vector<double> e(obs.probs.begin(), obs.probs.begin() + static_cast<std::ptrdiff_t>(n));
  if (obs.probs.size() == n + 1 && cfg.background == BackgroundMode::fold) {
    double step_mass = 0.0;
    for (double p : e) step_mass += p;
    if (step_mass > 0.0)
      for (double& p : e) p /= step_mass;
    else
      std::fill(e.begin(), e.end(), 1.0 / static_cast<double>(n));
  }
  const double eps = cfg.emission_smoothing;
  for (double& p : e) p = (1.0 - eps) * p + eps / static_cast<double>(n);
  return e;
}

inline BeliefState advance(const BeliefState& b, const FrameTransitionModel& m, const std::vector<double>* emit,
                           double frame_length) {
  const std::size_t n = m.size();
  BeliefState next;
  next.frame = b.frame + 1;
  next.t = static_cast<double>(next.frame) * frame_length;
  next.posterior.assign(n, 0.0);
  next.elapsed_in_step.assign(n, 0.0);

  std::vector<double> stayed(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double mass = b.posterior[i];
    if (mass == 0.0) continue;
    stayed[i] = mass * m.stay(i);
    next.posterior[i] += stayed[i];
    for (const auto& [j, p] : m.leave(i)) next.posterior[j] += mass * p;
  }
  for (std::size_t j = 0; j < n; ++j)
    if (next.posterior[j] > 0.0)
      next.elapsed_in_step[j] = std::min(next.t, stayed[j] * (b.elapsed_in_step[j] + frame_length) / next.posterior[j]);

  if (emit) {
    std::vector<double> corrected(n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      corrected[j] = next.posterior[j] * (*emit)[j];
      z += corrected[j];
    }
    if (z > 0.0) {
      for (std::size_t j = 0; j < n; ++j) next.posterior[j] = corrected[j] / z;
    }
  }
  double z = 0.0;
  for (double p : next.posterior) z += p;
  if (z > 0.0)
    for (double& p : next.posterior) p /= z;
  next.decoded_step = argmax_step(next.posterior);
  return next;
}

}  // namespace detail

// One frame of the forward recursion. `obs.t` must be exactly one frame after
// `belief.t`.
inline BeliefState update_belief(const BeliefState& belief, const FrameObservation& obs, const FrameTransitionModel& model,
                                 const TrackerConfig& cfg) {
  if (belief.posterior.size() != model.size())
    throw Error("tracker", "belief dimension does not match the graph");
  detail::check_observation(obs, model.size());
  const double expected = belief.t + cfg.frame_length;
  if (std::abs(obs.t - expected) > 1e-6)
    throw Error("tracker", "non-monotonic timestamp: got t=" + std::to_string(obs.t) + ", expected " +
                               std::to_string(expected));
  const auto e = detail::emission(obs, model.size(), cfg);
  return detail::advance(belief, model, &e, cfg.frame_length);
}

inline BeliefState update_belief(const BeliefState& belief, const FrameObservation& obs, const TransitionGraph& g,
                                 const TrackerConfig& cfg) {
  return update_belief(belief, obs, FrameTransitionModel(g, cfg), cfg);
}

// Prediction without evidence, used to bridge frames the sensors did not
// deliver (e.g. while an intervention is playing).
inline BeliefState predict_belief(const BeliefState& belief, const FrameTransitionModel& model, const TrackerConfig& cfg) {
  return detail::advance(belief, model, nullptr, cfg.frame_length);
}

// ---------------------------------------------------------------------------
// Step completion detection: the moving-average posterior of `step` must be
// the argmax for at least detection_window seconds in a row.

// nullopt means the history is too short to judge.
inline std::optional<bool> detect_step_completion(std::span<const BeliefState> history, StepId step,
                                                  const TrackerConfig& cfg) {
  const double covered = static_cast<double>(history.size()) * cfg.frame_length;
  if (covered + 1e-9 < cfg.detection_window) return std::nullopt;
  const std::size_t k = cfg.smooth_frames();
  const std::size_t need = cfg.window_frames();
  const std::size_t n = history.front().posterior.size();
  if (step < 1 || static_cast<std::size_t>(step) > n) throw Error("tracker", "unknown step " + std::to_string(step));

  std::vector<double> avg(n);
  std::size_t run = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const std::size_t lo = i + 1 >= k ? i + 1 - k : 0;
    std::fill(avg.begin(), avg.end(), 0.0);
    for (std::size_t f = lo; f <= i; ++f)
      for (std::size_t j = 0; j < n; ++j) avg[j] += history[f].posterior[j];
    run = argmax_step(avg) == step ? run + 1 : 0;
    if (run >= need) return true;
  }
  return false;
}

// Incremental form of the same rule, fed one posterior per frame.
class CompletionDetector {
 public:
  CompletionDetector(std::size_t n_steps, const TrackerConfig& cfg)
      : n_(n_steps), k_(cfg.smooth_frames()), need_(cfg.window_frames()), reached_at_(n_steps, -1) {}

  void push(std::span<const double> posterior) {
    window_.emplace_back(posterior.begin(), posterior.end());
    if (window_.size() > k_) window_.erase(window_.begin());
    std::vector<double> avg(n_, 0.0);
    for (const auto& p : window_)
      for (std::size_t j = 0; j < n_; ++j) avg[j] += p[j];
    const StepId top = argmax_step(avg);
    run_ = top == leader_ ? run_ + 1 : 1;
    leader_ = top;
    if (run_ == need_) reached_at_[leader_ - 1] = frame_;
    ++frame_;
  }

  // True if `step` reached the full window at a frame index >= since_frame,
  // or currently holds it.
  bool detected_since(StepId step, long since_frame) const {
    if (leader_ == step && run_ >= need_) return true;
    return reached_at_[step - 1] >= since_frame;
  }

  bool ever_detected(StepId step) const { return reached_at_[step - 1] >= 0 || (leader_ == step && run_ >= need_); }
  long frames() const noexcept { return frame_; }

 private:
  std::size_t n_;
  std::size_t k_;
  std::size_t need_;
  std::vector<std::vector<double>> window_;
  std::vector<long> reached_at_;
  StepId leader_ = 0;
  std::size_t run_ = 0;
  long frame_ = 0;
};

// Owns the transition model and current belief for one session.
class Tracker {
 public:
  Tracker(const TransitionGraph& g, TrackerConfig cfg)
      : cfg_(cfg), model_(g, cfg_), belief_(init_belief(g)), detector_(g.size(), cfg_) {}

  const BeliefState& update(const FrameObservation& obs) {
    belief_ = update_belief(belief_, obs, model_, cfg_);
    detector_.push(belief_.posterior);
    return belief_;
  }

  const BeliefState& predict() {
    belief_ = predict_belief(belief_, model_, cfg_);
    detector_.push(belief_.posterior);
    return belief_;
  }

  const BeliefState& belief() const noexcept { return belief_; }
  const CompletionDetector& detector() const noexcept { return detector_; }
  const TrackerConfig& config() const noexcept { return cfg_; }

 private:
  TrackerConfig cfg_;
  FrameTransitionModel model_;
  BeliefState belief_;
  CompletionDetector detector_;
};

}  // namespace stepwise
