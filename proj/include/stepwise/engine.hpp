#pragma once

// Per-session pipeline: tracker -> forecaster -> one policy per spec.
// Offline runs and the network service both drive this class, which is what
// makes their event streams identical.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stepwise/error.hpp"
#include "stepwise/forecaster.hpp"
#include "stepwise/graph.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/random.hpp"
#include "stepwise/tracker.hpp"

namespace stepwise {

namespace detail {

// Number of frame slots from the last processed frame to `t` (1 for the
// next frame, more across a gap).
inline long frame_slots(double last_t, double t, double fl) {
  const double gap = t - last_t;
  const double slots = std::round(gap / fl);
  if (slots < 1.0 || std::abs(gap - slots * fl) > 1e-6)
    throw Error("engine", "out-of-order or off-grid timestamp t=" + std::to_string(t) + " (expected " +
                              std::to_string(last_t + fl) + ")");
  return static_cast<long>(slots);
}

}  // namespace detail

struct EngineConfig {
  TrackerConfig tracker;
  ForecastConfig forecast;
  PolicyConfig policy;
  // Forecasts whose posterior mass on steps that can still reach the target
  // falls below this are treated as undefined.
  double min_reachable_mass = 0.5;
  // Keep forecasting a target after its policy finished (for plotting).
  bool forecast_after_finish = false;

  std::string preset = "laptop";

  // Policy evaluated every frame.
  static EngineConfig laptop() { return EngineConfig{}; }

  // Tracker at full frame rate, policy once per 3 s.
  static EngineConfig watch() {
    EngineConfig c;
    c.policy.tick = 3.0;
    c.preset = "watch";
    return c;
  }

  // Offline evaluation: policy once per second.
  static EngineConfig evaluation() {
    EngineConfig c;
    c.policy.tick = 1.0;
    c.preset = "evaluation";
    return c;
  }

  static EngineConfig from_preset(const std::string& name) {
    if (name == "laptop") return laptop();
    if (name == "watch") return watch();
    if (name == "evaluation") return evaluation();
    throw Error("engine", "unknown preset '" + name + "' (expected laptop|watch|evaluation)");
  }

  long frames_per_tick() const {
    return std::max(1L, std::lround(policy.tick / tracker.frame_length));
  }

  std::size_t smoothing_ticks() const {
    return static_cast<std::size_t>(std::max(1L, std::lround(policy.entropy_smooth / policy.tick)));
  }

  void validate() const {
    tracker.validate();
    forecast.validate();
    policy.validate();
    if (!(min_reachable_mass > 0.0 && min_reachable_mass <= 1.0))
      throw Error("engine", "min_reachable_mass must be in (0,1]");
  }
};

// Snapshot of one target at one tick.
struct TargetTick {
  StepId target = 0;
  std::optional<double> expectation;
  double entropy = std::numeric_limits<double>::quiet_NaN();           // raw
  double entropy_smoothed = std::numeric_limits<double>::quiet_NaN();  // w-smoothed
  double reachable_mass = 0.0;
  Phase phase = Phase::watching;
};

struct TickRecord {
  double t = 0.0;
  std::vector<TargetTick> targets;
};

struct ArmingRecord {
  StepId target = 0;
  double armed_at = 0.0;
  double armed_estimate = 0.0;
  bool survived = true;  // false once its stability check cancelled it
};

struct SessionResult {
  std::vector<InterventionEvent> events;
  std::vector<TickRecord> ticks;
  std::vector<ArmingRecord> armings;
  std::vector<std::pair<StepId, double>> suppressions;  // (target, t)
};

// Forecast + entropy smoothing for a single target.
class TargetMonitor {
 public:
  TargetMonitor(StepId target, std::size_t smoothing_ticks) : target_(target), width_(smoothing_ticks) {}

  StepId target() const noexcept { return target_; }

  // Computes this tick's policy input; `since_frame` is the detector frame
  // index of the previous tick.
  PolicyTick observe(const Tracker& tracker, const Forecaster& forecaster, const EngineConfig& cfg, long tick_index,
                     long since_frame, bool run_forecast, TargetTick* log = nullptr) {
    const auto& b = tracker.belief();
    PolicyTick in;
    in.t = b.t;
    in.detected = tracker.detector().detected_since(target_, since_frame);

    TargetTick snap;
    snap.target = target_;
    if (run_forecast) {
      snap.reachable_mass = forecaster.reachable_mass(b, target_);
      if (snap.reachable_mass >= cfg.min_reachable_mass) {
        const auto seed = derive_seed(cfg.forecast.seed, static_cast<std::uint64_t>(target_),
                                      static_cast<std::uint64_t>(tick_index));
        const auto dist = forecaster.sample(b, target_, seed);
        if (dist.defined()) {
          snap.expectation = dist.expectation;
          snap.entropy = dist.entropy;
        }
      }
    }
    if (snap.expectation) {
      recent_.push_back(snap.entropy);
      if (recent_.size() > width_) recent_.pop_front();
      double s = 0.0;
      for (double h : recent_) s += h;
      snap.entropy_smoothed = s / static_cast<double>(recent_.size());
    } else {
      recent_.clear();
    }
    in.expectation = snap.expectation;
    in.entropy = snap.entropy_smoothed;
    if (log) *log = snap;
    return in;
  }

 private:
  StepId target_;
  std::size_t width_;
  std::deque<double> recent_;
};

class SessionEngine {
 public:
  struct FrameOutput {
    std::vector<InterventionEvent> events;
    std::optional<TickRecord> tick;
  };

  SessionEngine(const TransitionGraph& g, std::vector<InterventionSpec> specs, EngineConfig cfg)
      : graph_(g), specs_(std::move(specs)), cfg_(std::move(cfg)), tracker_(g, cfg_.tracker), forecaster_(g, cfg_.forecast) {
    cfg_.validate();
    std::set<StepId> seen;
    for (auto& s : specs_) {
      s.validate();
      if (!g.has_step(s.target)) throw Error("engine", "spec targets unknown step " + std::to_string(s.target));
      if (!seen.insert(s.target).second)
        throw Error("engine", "two specs target s" + std::to_string(s.target));
      if (s.label.empty()) s.label = g.step(s.target).name;
      monitors_.emplace_back(s.target, cfg_.smoothing_ticks());
      states_.emplace_back();
    }
  }

  const EngineConfig& config() const noexcept { return cfg_; }
  const std::vector<InterventionSpec>& specs() const noexcept { return specs_; }
  const Tracker& tracker() const noexcept { return tracker_; }
  const SessionResult& result() const noexcept { return result_; }
  const PolicyState& policy_state(std::size_t i) const { return states_.at(i); }

  // Time of the next expected frame.
  double next_frame_time() const { return tracker_.belief().t + cfg_.tracker.frame_length; }

  // Consumes one observation. A timestamp beyond the next frame slot is
  // allowed: the missing frames are bridged by prediction (sensors mute while
  // an intervention plays).
  FrameOutput push(const FrameObservation& obs) {
    const long slots = detail::frame_slots(tracker_.belief().t, obs.t, cfg_.tracker.frame_length);
    FrameOutput out;
    for (long k = 1; k < slots; ++k) {
      tracker_.predict();
      after_frame(out);
    }
    tracker_.update(obs);
    after_frame(out);
    return out;
  }

 private:
  void after_frame(FrameOutput& out) {
    const long frame = tracker_.belief().frame;
    if (frame % cfg_.frames_per_tick() != 0) return;
    const long tick_index = frame / cfg_.frames_per_tick();
    TickRecord rec;
    rec.t = tracker_.belief().t;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      TargetTick snap;
      const bool run = cfg_.forecast_after_finish || !states_[i].finished();
      const auto in = monitors_[i].observe(tracker_, forecaster_, cfg_, tick_index, last_tick_frame_, run, &snap);
      const Phase before = states_[i].phase;
      auto step = step_policy(std::move(states_[i]), in, specs_[i], cfg_.policy);
      states_[i] = std::move(step.state);
      const Phase after = states_[i].phase;
      if (after == Phase::pending_stability && (before == Phase::watching || before == Phase::cancelled))
        result_.armings.push_back({specs_[i].target, in.t, states_[i].armed_estimate, true});
      else if (after == Phase::fired && (before == Phase::watching || before == Phase::cancelled))
        result_.armings.push_back({specs_[i].target, in.t, *in.expectation, true});
      if (after == Phase::cancelled) mark_cancelled(specs_[i].target);
      if (after == Phase::suppressed && before != Phase::suppressed)
        result_.suppressions.emplace_back(specs_[i].target, in.t);
      if (step.event) {
        out.events.push_back(*step.event);
        result_.events.push_back(*step.event);
      }
      snap.phase = after;
      rec.targets.push_back(snap);
    }
    last_tick_frame_ = tracker_.detector().frames();
    result_.ticks.push_back(rec);
    out.tick = std::move(rec);
  }

  void mark_cancelled(StepId target) {
    for (auto it = result_.armings.rbegin(); it != result_.armings.rend(); ++it)
      if (it->target == target) {
        it->survived = false;
        return;
      }
  }

  TransitionGraph graph_;
  std::vector<InterventionSpec> specs_;
  EngineConfig cfg_;
  Tracker tracker_;
  Forecaster forecaster_;
  std::vector<TargetMonitor> monitors_;
  std::vector<PolicyState> states_;
  long last_tick_frame_ = 0;
  SessionResult result_;
};

// Offline replay of a whole frame stream.
inline SessionResult run_session(const TransitionGraph& g, const std::vector<InterventionSpec>& specs,
                                 std::span<const FrameObservation> frames, const EngineConfig& cfg) {
  SessionEngine engine(g, specs, cfg);
  for (const auto& f : frames) engine.push(f);
  return engine.result();
}

}  // namespace stepwise
