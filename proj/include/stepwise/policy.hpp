#pragma once

// Intervention timer policy. One state machine per (session, target):
//
//   watching --H<h, E stable--> pending_stability --p s elapsed--> running
//       ^                            |      |                         |
//       +------- cancelled <---------+      +---- fires_at ---> fired <+
//                                    (E drifted by > e)
//
// Detection of the target in any live phase ends the machine in suppressed.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "stepwise/error.hpp"
#include "stepwise/forecaster.hpp"
#include "stepwise/graph.hpp"
#include "stepwise/tracker.hpp"

namespace stepwise {

enum class InterventionKind { remind_in_advance, notify_if_forgotten };

inline std::string to_string(InterventionKind k) {
  return k == InterventionKind::remind_in_advance ? "remind-in-advance" : "notify-if-forgotten";
}

inline InterventionKind parse_intervention_kind(const std::string& s) {
  if (s == "remind-in-advance") return InterventionKind::remind_in_advance;
  if (s == "notify-if-forgotten") return InterventionKind::notify_if_forgotten;
  throw Error("policy", "unknown intervention kind '" + s + "'");
}

struct InterventionSpec {
  StepId target = 0;
  InterventionKind kind = InterventionKind::remind_in_advance;
  double k_minus = 15.0;  // seconds before the forecast moment
  double k_plus = 15.0;   // seconds after it
  double h = 3.0;         // entropy threshold, nats
  std::string label;      // step name used in messages; falls back to "s<id>"

  void validate() const {
    if (target < 1) throw Error("policy", "spec target must be a step id");
    if (!(k_minus >= 0.0) || !(k_plus >= 0.0)) throw Error("policy", "K offsets must be >= 0");
    if (!(h > 0.0)) throw Error("policy", "entropy threshold h must be > 0");
  }

  std::string display_name() const { return label.empty() ? "s" + std::to_string(target) : label; }
};

struct PolicyConfig {
  double stability_horizon = 10.0;    // p
  double stability_tolerance = 30.0;  // e
  double entropy_smooth = 2.0;        // w
  double tick = 0.2;                  // policy evaluation period

  void validate() const {
    if (!(stability_horizon > 0.0) || !(stability_tolerance > 0.0) || !(entropy_smooth > 0.0) || !(tick > 0.0))
      throw Error("policy", "p, e, w and tick must all be > 0");
  }
};

enum class Phase { watching, pending_stability, running, fired, suppressed, cancelled };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::watching: return "watching";
    case Phase::pending_stability: return "timer-pending-stability";
    case Phase::running: return "timer-running";
    case Phase::fired: return "fired";
    case Phase::suppressed: return "suppressed";
    case Phase::cancelled: return "cancelled";
  }
  return "?";
}

struct PolicyState {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

  Phase phase = Phase::watching;
  double timer_started_at = kUnset;
  double fires_at = kUnset;
  double armed_estimate = kUnset;
  double last_t = -std::numeric_limits<double>::infinity();
  std::deque<std::pair<double, double>> recent_estimates;  // (t, E) over the last p seconds
  int armings = 0;
  int cancellations = 0;

  bool timer_live() const noexcept { return phase == Phase::pending_stability || phase == Phase::running; }
  bool finished() const noexcept { return phase == Phase::fired || phase == Phase::suppressed; }
};

// Inputs for one policy tick.
struct PolicyTick {
  double t = 0.0;
  std::optional<double> expectation;  // E[D], absent when the forecast is undefined
  double entropy = std::numeric_limits<double>::quiet_NaN();  // w-smoothed H[D]
  bool detected = false;  // target completion detected since the previous tick
};

enum class Disposition { tp, fp, fn, tn };

inline std::string to_string(Disposition d) {
  switch (d) {
    case Disposition::tp: return "TP";
    case Disposition::fp: return "FP";
    case Disposition::fn: return "FN";
    case Disposition::tn: return "TN";
  }
  return "?";
}

struct InterventionEvent {
  double t = 0.0;
  StepId target = 0;
  InterventionKind kind = InterventionKind::remind_in_advance;
  std::string message;
  std::optional<Disposition> disposition;  // filled in by evaluation
};

inline std::string intervention_message(InterventionKind kind, const std::string& step) {
  return kind == InterventionKind::remind_in_advance ? "Don't forget to do " + step : "Have you done " + step + "?";
}

struct PolicyStep {
  PolicyState state;
  std::optional<InterventionEvent> event;
};

inline PolicyStep step_policy(PolicyState st, const PolicyTick& in, const InterventionSpec& spec,
                              const PolicyConfig& cfg) {
  spec.validate();
  cfg.validate();
  constexpr double tol = 1e-9;
  if (in.t < st.last_t - tol)
    throw Error("policy", "non-monotonic tick: t=" + std::to_string(in.t) + " after " + std::to_string(st.last_t));
  st.last_t = in.t;

  if (in.expectation) {
    st.recent_estimates.emplace_back(in.t, *in.expectation);
    while (!st.recent_estimates.empty() && st.recent_estimates.front().first < in.t - cfg.stability_horizon - tol)
      st.recent_estimates.pop_front();
  } else {
    st.recent_estimates.clear();
  }

  PolicyStep out;
  if (st.finished()) {
    out.state = std::move(st);
    return out;
  }
  if (st.phase == Phase::cancelled) st.phase = Phase::watching;

  if (in.detected) {
    st.phase = Phase::suppressed;
    out.state = std::move(st);
    return out;
  }

  if (st.phase == Phase::watching) {
    bool arm = in.expectation && std::isfinite(in.entropy) && in.entropy < spec.h;
    if (arm) {
      const auto [lo, hi] = std::minmax_element(st.recent_estimates.begin(), st.recent_estimates.end(),
                                                [](const auto& a, const auto& b) { return a.second < b.second; });
      arm = hi->second - lo->second <= cfg.stability_tolerance;
    }
    if (!arm) {
      out.state = std::move(st);
      return out;
    }
    const double e = *in.expectation;
    st.phase = Phase::pending_stability;
    st.timer_started_at = in.t;
    st.armed_estimate = e;
    st.fires_at = spec.kind == InterventionKind::remind_in_advance ? std::max(in.t, in.t + e - spec.k_minus)
                                                                   : in.t + e + spec.k_plus;
    st.armings += 1;
  } else if (st.phase == Phase::pending_stability && in.expectation) {
    const double predicted = st.armed_estimate - (in.t - st.timer_started_at);
    if (std::abs(*in.expectation - predicted) > cfg.stability_tolerance) {
      st.phase = Phase::cancelled;
      st.timer_started_at = st.fires_at = st.armed_estimate = PolicyState::kUnset;
      st.cancellations += 1;
      out.state = std::move(st);
      return out;
    }
  }

  if (in.t + tol >= st.fires_at) {
    st.phase = Phase::fired;
    out.event = InterventionEvent{in.t, spec.target, spec.kind, intervention_message(spec.kind, spec.display_name()),
                                  std::nullopt};
  } else if (st.phase == Phase::pending_stability && in.t - st.timer_started_at + tol >= cfg.stability_horizon) {
    st.phase = Phase::running;
  }
  out.state = std::move(st);
  return out;
}

// Sensor-free trigger time: the expected remaining time at session start,
// shifted by the spec's offset.
inline double baseline_trigger(const TransitionGraph& g, const InterventionSpec& spec) {
  spec.validate();
  const double e0 = exact_expected_remaining_time(g, init_belief(g), spec.target);
  return spec.kind == InterventionKind::remind_in_advance ? std::max(0.0, e0 - spec.k_minus) : e0 + spec.k_plus;
}

}  // namespace stepwise
