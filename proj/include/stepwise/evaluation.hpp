#pragma once

// Offline evaluation: forecast timing error of the entropy-gated policy
// against the sensor-free baseline under leave-one-session-out CV, and
// TP/FP/FN/TN tallies for notify-if-forgotten specs.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepwise/engine.hpp"
#include "stepwise/error.hpp"
#include "stepwise/forecaster.hpp"
#include "stepwise/graph.hpp"
#include "stepwise/io.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/simulator.hpp"
#include "stepwise/tracker.hpp"

namespace stepwise {

struct RecordedSession {
  SessionLog log;
  std::vector<FrameObservation> frames;
};

inline RecordedSession recorded(SimulatedSession s) { return {std::move(s.log), std::move(s.frames)}; }

inline std::vector<RecordedSession> simulate_dataset(const Scenario& sc, std::size_t n) {
  std::vector<RecordedSession> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(recorded(simulate_session(sc, i)));
  return out;
}

// |E at arming - actual remaining time at arming|.
inline double timing_error(double armed_estimate, double armed_at, double actual_step_start) {
  if (!(actual_step_start >= 0.0)) throw Error("evaluation", "actual_step_start must be >= 0");
  return std::abs(armed_estimate - (actual_step_start - armed_at));
}

// ---------------------------------------------------------------------------
// Statistics

struct MeanSe {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

// Sample mean and standard error (sample std / sqrt(n); 0 for n = 1).
inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe r;
  r.n = xs.size();
  if (xs.empty()) return r;
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / static_cast<double>(xs.size());
  if (xs.size() < 2) {
    r.se = 0.0;
    return r;
  }
  double v = 0.0;
  for (double x : xs) v += (x - r.mean) * (x - r.mean);
  v /= static_cast<double>(xs.size() - 1);
  r.se = std::sqrt(v / static_cast<double>(xs.size()));
  return r;
}

// Two-sided paired t-test p-value. NaN below two pairs.
inline double paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("evaluation", "paired samples differ in length");
  if (a.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto m = mean_se(d);
  if (m.se == 0.0) return m.mean == 0.0 ? 1.0 : 0.0;
  const double t = m.mean / m.se;
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

// ---------------------------------------------------------------------------
// Arming replay

struct Arming {
  double at = 0.0;
  double estimate = 0.0;
};

// First arming that was not cancelled by its stability check, per target and
// per candidate threshold.
struct ArmingTable {
  std::vector<StepId> targets;
  std::vector<std::vector<double>> thresholds;                // [target][candidate]
  std::vector<std::vector<std::optional<Arming>>> first;      // [target][candidate]
  std::size_t forecasts = 0;

  std::size_t index_of(StepId target) const {
    const auto it = std::find(targets.begin(), targets.end(), target);
    if (it == targets.end()) throw Error("evaluation", "target s" + std::to_string(target) + " not in table");
    return static_cast<std::size_t>(it - targets.begin());
  }
};

// Replays frames through the tracker and forecaster and runs one policy per
// (target, candidate h) in lockstep. Every candidate sees exactly the inputs a
// SessionEngine with that single spec would see, so the arming it records is
// the same. Forecasting for a target stops once all of its candidates have
// either survived an arming or been suppressed.
inline ArmingTable replay_armings(const TransitionGraph& g, std::span<const FrameObservation> frames,
                                  std::vector<StepId> targets, std::vector<std::vector<double>> thresholds,
                                  const EngineConfig& cfg, const InterventionSpec& probe) {
  cfg.validate();
  if (targets.size() != thresholds.size()) throw Error("evaluation", "one threshold list per target required");
  ArmingTable table;
  table.targets = std::move(targets);
  table.thresholds = std::move(thresholds);

  Tracker tracker(g, cfg.tracker);
  Forecaster forecaster(g, cfg.forecast);
  const auto nt = table.targets.size();
  std::vector<TargetMonitor> monitors;
  std::vector<std::vector<InterventionSpec>> specs(nt);
  std::vector<std::vector<PolicyState>> states(nt);
  std::vector<std::vector<std::optional<Arming>>> candidate(nt);
  std::vector<std::vector<char>> resolved(nt);
  std::vector<std::size_t> open(nt);
  table.first.resize(nt);
  for (std::size_t i = 0; i < nt; ++i) {
    if (!g.has_step(table.targets[i])) throw Error("evaluation", "unknown target s" + std::to_string(table.targets[i]));
    monitors.emplace_back(table.targets[i], cfg.smoothing_ticks());
    for (double h : table.thresholds[i]) {
      auto spec = probe;
      spec.target = table.targets[i];
      spec.h = h;
      spec.validate();
      specs[i].push_back(spec);
    }
    const auto k = table.thresholds[i].size();
    states[i].resize(k);
    candidate[i].resize(k);
    resolved[i].assign(k, 0);
    table.first[i].resize(k);
    open[i] = k;
  }
  std::size_t open_targets = static_cast<std::size_t>(std::count_if(open.begin(), open.end(), [](auto c) { return c > 0; }));

  const long per_tick = cfg.frames_per_tick();
  long last_tick_frame = 0;
  auto on_frame = [&] {
    const long frame = tracker.belief().frame;
    if (frame % per_tick != 0) return;
    const long tick_index = frame / per_tick;
    for (std::size_t i = 0; i < nt; ++i) {
      if (open[i] == 0) continue;
      const auto in = monitors[i].observe(tracker, forecaster, cfg, tick_index, last_tick_frame, true);
      ++table.forecasts;
      for (std::size_t k = 0; k < specs[i].size(); ++k) {
        if (resolved[i][k]) continue;
        const Phase before = states[i][k].phase;
        auto step = step_policy(std::move(states[i][k]), in, specs[i][k], cfg.policy);
        states[i][k] = std::move(step.state);
        const Phase after = states[i][k].phase;
        const bool from_idle = before == Phase::watching || before == Phase::cancelled;
        if (from_idle && after == Phase::pending_stability)
          candidate[i][k] = Arming{in.t, states[i][k].armed_estimate};
        else if (from_idle && after == Phase::fired)
          candidate[i][k] = Arming{in.t, *in.expectation};
        if (after == Phase::cancelled) candidate[i][k].reset();
        if (after == Phase::running || after == Phase::fired || after == Phase::suppressed) {
          resolved[i][k] = 1;
          table.first[i][k] = candidate[i][k];
          if (--open[i] == 0) --open_targets;
        }
      }
    }
    last_tick_frame = tracker.detector().frames();
  };

  for (const auto& f : frames) {
    if (open_targets == 0) break;
    const long slots = detail::frame_slots(tracker.belief().t, f.t, cfg.tracker.frame_length);
    for (long k = 1; k < slots; ++k) {
      tracker.predict();
      on_frame();
    }
    tracker.update(f);
    on_frame();
  }
  // A timer still inside its stability window at session end was never
  // cancelled.
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t k = 0; k < specs[i].size(); ++k)
      if (!resolved[i][k]) table.first[i][k] = candidate[i][k];
  return table;
}

// ---------------------------------------------------------------------------
// Threshold search

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 8; ++i) g.push_back(2.0 + 0.5 * i);
  return g;
}

struct ThresholdChoice {
  double h = 0.0;
  double training_error = std::numeric_limits<double>::quiet_NaN();
  bool never_armed = false;  // fell back to the grid median
};

// Expected remaining time to each target at session start; absent when the
// target is unreachable from the initial distribution.
inline std::map<StepId, double> baseline_estimates(const TransitionGraph& g, std::span<const StepId> targets) {
  std::map<StepId, double> out;
  const auto b0 = init_belief(g);
  for (StepId t : targets) {
    try {
      out[t] = exact_expected_remaining_time(g, b0, t);
    } catch (const UnreachableTarget&) {
    }
  }
  return out;
}

inline double grid_median(std::vector<double> grid) {
  std::sort(grid.begin(), grid.end());
  return grid[(grid.size() - 1) / 2];
}

// Picks, per target, the candidate with the lowest mean training error. A
// session where a candidate never armed is scored with the baseline estimate
// armed at t = 0. Ties go to the smaller h.
inline std::map<StepId, ThresholdChoice> select_thresholds(std::span<const ArmingTable> tables,
                                                           std::span<const SessionLog> logs,
                                                           const std::map<StepId, double>& baseline,
                                                           const std::vector<double>& grid) {
  if (grid.empty()) throw Error("evaluation", "threshold grid is empty");
  if (tables.size() != logs.size()) throw Error("evaluation", "one arming table per training session required");
  std::map<StepId, ThresholdChoice> out;
  if (tables.empty()) return out;
  for (StepId target : tables.front().targets) {
    ThresholdChoice best;
    best.training_error = std::numeric_limits<double>::infinity();
    bool any_armed = false;
    const auto base = baseline.find(target);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t s = 0; s < tables.size(); ++s) {
        const auto start = logs[s].first_start(target);
        if (!start) continue;
        const auto& first = tables[s].first[tables[s].index_of(target)].at(k);
        double err;
        if (first) {
          any_armed = true;
          err = timing_error(first->estimate, first->at, *start);
        } else if (base != baseline.end()) {
          err = timing_error(base->second, 0.0, *start);
        } else {
          continue;
        }
        sum += err;
        ++n;
      }
      if (n == 0) continue;
      const double mean = sum / static_cast<double>(n);
      const double h = grid[k];
      if (mean < best.training_error - 1e-9 || (std::abs(mean - best.training_error) <= 1e-9 && h < best.h)) {
        best.training_error = mean;
        best.h = h;
      }
    }
    if (!any_armed) {
      best.h = grid_median(grid);
      best.never_armed = true;
      best.training_error = std::numeric_limits<double>::quiet_NaN();
    }
    out[target] = best;
  }
  return out;
}

struct EvalConfig {
  std::string task = "task";
  EngineConfig engine = EngineConfig::evaluation();
  BuildOptions build;
  std::vector<double> grid = default_threshold_grid();
  // Spec used to drive each target's policy; target and h are overwritten.
  InterventionSpec probe{0, InterventionKind::notify_if_forgotten, 15.0, 15.0, 3.0, ""};
  // Cap on training sessions replayed for the threshold search (0 = all).
  std::size_t max_tuning_sessions = 0;
  double alpha = 0.05;
};

// Replays training sessions on `g` and picks a threshold per target.
inline std::map<StepId, ThresholdChoice> grid_search_thresholds(const TransitionGraph& g,
                                                                std::span<const RecordedSession> training,
                                                                const std::vector<StepId>& targets,
                                                                const EvalConfig& cfg) {
  if (cfg.grid.empty()) throw Error("evaluation", "threshold grid is empty");
  std::vector<ArmingTable> tables;
  std::vector<SessionLog> logs;
  const std::vector<std::vector<double>> grids(targets.size(), cfg.grid);
  for (const auto& s : training) {
    tables.push_back(replay_armings(g, s.frames, targets, grids, cfg.engine, cfg.probe));
    logs.push_back(s.log);
  }
  std::vector<StepId> ts(targets.begin(), targets.end());
  return select_thresholds(tables, logs, baseline_estimates(g, ts), cfg.grid);
}

// ---------------------------------------------------------------------------
// Leave-one-session-out evaluation

struct SessionError {
  std::string session;
  StepId step = 0;
  double actual_start = 0.0;
  double baseline_error = 0.0;
  double proposed_error = 0.0;
  bool fallback = false;  // proposed policy never armed; scored as baseline
  double h = 0.0;
  std::optional<Arming> arming;
};

struct StepCell {
  StepId step = 0;
  std::string name;
  MeanSe proposed;
  MeanSe baseline;
  double p_value = std::numeric_limits<double>::quiet_NaN();
  std::size_t fallbacks = 0;
};

struct FoldRecord {
  std::string held_out;
  std::map<StepId, ThresholdChoice> thresholds;
  std::vector<std::string> notes;
};

struct DispositionTally {
  StepId target = 0;
  std::string label;
  long tp = 0, fp = 0, fn = 0, tn = 0;

  long total() const noexcept { return tp + fp + fn + tn; }
  double precision() const { return tp + fp ? double(tp) / double(tp + fp) : std::numeric_limits<double>::quiet_NaN(); }
  double recall() const { return tp + fn ? double(tp) / double(tp + fn) : std::numeric_limits<double>::quiet_NaN(); }
  double correct_rate() const { return total() ? double(tp + tn) / double(total()) : std::numeric_limits<double>::quiet_NaN(); }
};

struct EvalReport {
  std::string task;
  std::vector<StepCell> cells;
  std::vector<SessionError> errors;
  std::vector<FoldRecord> folds;
  std::vector<DispositionTally> dispositions;
  double overall_proposed = std::numeric_limits<double>::quiet_NaN();  // mean of per-step means
  double overall_baseline = std::numeric_limits<double>::quiet_NaN();
  double overall_p_value = std::numeric_limits<double>::quiet_NaN();
  Json metadata = Json::object();
};

namespace detail {

inline std::vector<std::string> universe_names(std::span<const RecordedSession> sessions, const BuildOptions& build) {
  if (!build.step_names.empty()) return build.step_names;
  StepId n = 0;
  for (const auto& s : sessions) {
    for (const auto& a : s.log.annotations) n = std::max(n, a.step);
    for (StepId k : s.log.skipped) n = std::max(n, k);
  }
  std::vector<std::string> names;
  for (StepId i = 1; i <= n; ++i) names.push_back("s" + std::to_string(i));
  return names;
}

inline std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

}  // namespace detail

inline void aggregate(EvalReport& r, std::span<const StepDef> steps, double alpha) {
  r.cells.clear();
  std::vector<double> pm, bm;
  for (const auto& s : steps) {
    StepCell c;
    c.step = s.id;
    c.name = s.name;
    std::vector<double> p, b;
    for (const auto& e : r.errors)
      if (e.step == s.id) {
        p.push_back(e.proposed_error);
        b.push_back(e.baseline_error);
        c.fallbacks += e.fallback ? 1 : 0;
      }
    c.proposed = mean_se(p);
    c.baseline = mean_se(b);
    c.p_value = paired_t_test(p, b);
    if (c.proposed.n > 0) {
      pm.push_back(c.proposed.mean);
      bm.push_back(c.baseline.mean);
    }
    r.cells.push_back(std::move(c));
  }
  r.overall_proposed = mean_se(pm).mean;
  r.overall_baseline = mean_se(bm).mean;
  r.overall_p_value = paired_t_test(pm, bm);
  r.metadata["alpha"] = alpha;
}

inline EvalReport loso_evaluate(std::span<const RecordedSession> sessions, EvalConfig cfg) {
  if (sessions.size() < 3) throw Error("evaluation", "leave-one-session-out needs at least 3 sessions");
  if (cfg.grid.empty()) throw Error("evaluation", "threshold grid is empty");
  cfg.engine.validate();
  cfg.build.step_names = detail::universe_names(sessions, cfg.build);
  cfg.build.allow_unseen = true;
  const auto n_steps = static_cast<StepId>(cfg.build.step_names.size());
  std::vector<StepId> targets;
  for (StepId s = 1; s <= n_steps; ++s) targets.push_back(s);

  EvalReport report;
  report.task = cfg.task;
  const auto n = sessions.size();
  const auto tuning = cfg.max_tuning_sessions == 0 ? n - 1 : std::min(cfg.max_tuning_sessions, n - 1);

  for (std::size_t fold = 0; fold < n; ++fold) {
    const auto& held = sessions[fold];
    FoldRecord rec;
    rec.held_out = held.log.id;

    std::vector<SessionLog> train_logs;
    for (std::size_t i = 0; i < n; ++i)
      if (i != fold) train_logs.push_back(sessions[i].log);
    const auto g = build_graph(train_logs, cfg.build);
    const auto base = baseline_estimates(g, targets);
    for (StepId t : targets)
      if (!base.count(t)) rec.notes.push_back("s" + std::to_string(t) + " unreachable in the fold graph; cell absent");

    // Tuning sessions: the `tuning` sessions following the held-out one,
    // cyclically.
    std::vector<RecordedSession> tune;
    for (std::size_t k = 1; k <= tuning; ++k) tune.push_back(sessions[(fold + k) % n]);
    rec.thresholds = grid_search_thresholds(g, tune, targets, cfg);
    for (const auto& [t, c] : rec.thresholds)
      if (c.never_armed)
        rec.notes.push_back("s" + std::to_string(t) + " never armed at any grid value; using grid median");

    std::vector<std::vector<double>> chosen;
    for (StepId t : targets) chosen.push_back({rec.thresholds.at(t).h});
    const auto table = replay_armings(g, held.frames, targets, chosen, cfg.engine, cfg.probe);

    for (std::size_t i = 0; i < targets.size(); ++i) {
      const StepId t = targets[i];
      const auto start = held.log.first_start(t);
      if (!start || !base.count(t)) continue;
      SessionError e;
      e.session = held.log.id;
      e.step = t;
      e.actual_start = *start;
      e.baseline_error = timing_error(base.at(t), 0.0, *start);
      e.h = rec.thresholds.at(t).h;
      e.arming = table.first[i][0];
      if (e.arming) {
        e.proposed_error = timing_error(e.arming->estimate, e.arming->at, *start);
      } else {
        e.fallback = true;
        e.proposed_error = e.baseline_error;
      }
      report.errors.push_back(std::move(e));
    }
    report.folds.push_back(std::move(rec));
  }

  std::vector<StepDef> steps;
  for (StepId s = 1; s <= n_steps; ++s) {
    StepDef d;
    d.id = s;
    d.name = cfg.build.step_names[s - 1];
    steps.push_back(d);
  }
  aggregate(report, steps, cfg.alpha);
  report.metadata["sessions"] = n;
  report.metadata["tuning_sessions_per_fold"] = tuning;
  report.metadata["grid"] = cfg.grid;
  report.metadata["tick_s"] = cfg.engine.policy.tick;
  report.metadata["n_samples"] = cfg.engine.forecast.n_samples;
  report.metadata["forecast_seed"] = cfg.engine.forecast.seed;
  report.metadata["probe_kind"] = to_string(cfg.probe.kind);
  return report;
}

// ---------------------------------------------------------------------------
// Dispositions

inline Disposition classify_disposition(bool fired, bool skipped) {
  if (fired) return skipped ? Disposition::tp : Disposition::fp;
  return skipped ? Disposition::fn : Disposition::tn;
}

inline bool fired_for(std::span<const InterventionEvent> events, const InterventionSpec& spec) {
  return std::any_of(events.begin(), events.end(),
                     [&](const InterventionEvent& e) { return e.target == spec.target && e.kind == spec.kind; });
}

// Events with their notify-if-forgotten disposition filled in.
inline std::vector<InterventionEvent> annotate_dispositions(std::vector<InterventionEvent> events, const SessionLog& log) {
  for (auto& e : events)
    if (e.kind == InterventionKind::notify_if_forgotten)
      e.disposition = classify_disposition(true, log.was_skipped(e.target));
  return events;
}

// One disposition per (notify spec, session).
inline std::vector<DispositionTally> tally_dispositions(std::span<const InterventionSpec> specs,
                                                        std::span<const std::vector<InterventionEvent>> events,
                                                        std::span<const SessionLog> logs) {
  if (events.size() != logs.size()) throw Error("evaluation", "one event list per session log required");
  std::vector<DispositionTally> out;
  for (const auto& spec : specs) {
    if (spec.kind != InterventionKind::notify_if_forgotten) continue;
    DispositionTally t;
    t.target = spec.target;
    t.label = spec.display_name();
    for (std::size_t s = 0; s < logs.size(); ++s) {
      switch (classify_disposition(fired_for(events[s], spec), logs[s].was_skipped(spec.target))) {
        case Disposition::tp: ++t.tp; break;
        case Disposition::fp: ++t.fp; break;
        case Disposition::fn: ++t.fn; break;
        case Disposition::tn: ++t.tn; break;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Runs every session through the engine and tallies dispositions.
inline std::vector<DispositionTally> evaluate_dispositions(const TransitionGraph& g,
                                                           const std::vector<InterventionSpec>& specs,
                                                           std::span<const RecordedSession> sessions,
                                                           const EngineConfig& cfg,
                                                           std::vector<std::vector<InterventionEvent>>* events_out = nullptr) {
  std::vector<std::vector<InterventionEvent>> events;
  std::vector<SessionLog> logs;
  for (const auto& s : sessions) {
    events.push_back(run_session(g, specs, s.frames, cfg).events);
    logs.push_back(s.log);
  }
  auto tallies = tally_dispositions(specs, events, logs);
  if (events_out) *events_out = std::move(events);
  return tallies;
}

// ---------------------------------------------------------------------------
// Report files

inline Json to_json(const MeanSe& m) { return Json{{"mean_s", m.mean}, {"se_s", m.se}, {"n", m.n}}; }

inline Json to_json(const DispositionTally& t) {
  return Json{{"target", t.target}, {"label", t.label}, {"tp", t.tp},           {"fp", t.fp},
              {"fn", t.fn},         {"tn", t.tn},       {"precision", t.precision()},
              {"recall", t.recall()}, {"correct_rate", t.correct_rate()}};
}

inline Json to_json(const EvalReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"step", c.step},
                     {"name", c.name},
                     {"proposed", to_json(c.proposed)},
                     {"baseline", to_json(c.baseline)},
                     {"p_value", c.p_value},
                     {"fallbacks", c.fallbacks}});
  Json errors = Json::array();
  for (const auto& e : r.errors) {
    Json j{{"session", e.session},
           {"step", e.step},
           {"actual_start_s", e.actual_start},
           {"baseline_error_s", e.baseline_error},
           {"proposed_error_s", e.proposed_error},
           {"fallback", e.fallback},
           {"h", e.h}};
    j["armed_at_s"] = e.arming ? Json(e.arming->at) : Json(nullptr);
    j["armed_estimate_s"] = e.arming ? Json(e.arming->estimate) : Json(nullptr);
    errors.push_back(std::move(j));
  }
  Json folds = Json::array();
  for (const auto& f : r.folds) {
    Json th = Json::object();
    for (const auto& [s, c] : f.thresholds) th["s" + std::to_string(s)] = c.h;
    folds.push_back({{"held_out", f.held_out}, {"thresholds", th}, {"notes", f.notes}});
  }
  Json disp = Json::array();
  for (const auto& t : r.dispositions) disp.push_back(to_json(t));
  return Json{{"task", r.task},
              {"steps", cells},
              {"sessions", errors},
              {"folds", folds},
              {"dispositions", disp},
              {"overall", {{"proposed_mean_s", r.overall_proposed},
                           {"baseline_mean_s", r.overall_baseline},
                           {"p_value", r.overall_p_value}}},
              {"metadata", r.metadata}};
}

inline std::string report_table(const EvalReport& r) {
  const double alpha = r.metadata.contains("alpha") ? r.metadata["alpha"].get<double>() : 0.05;
  std::string out = "task: " + r.task + "\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-28s %4s %18s %18s %8s %4s\n", "step", "name", "n", "proposed (s)",
                "baseline (s)", "p", "fb");
  out += line;
  auto cell = [](const MeanSe& m) {
    if (m.n == 0) return std::string("-");
    return detail::fmt("%.1f", m.mean) + " +/- " + detail::fmt("%.1f", m.se);
  };
  for (const auto& c : r.cells) {
    const std::string p = std::isnan(c.p_value) ? "-" : detail::fmt("%.3f", c.p_value) + (c.p_value < alpha ? "*" : "");
    std::snprintf(line, sizeof line, "%-6s %-28.28s %4zu %18s %18s %8s %4zu\n", ("s" + std::to_string(c.step)).c_str(),
                  c.name.c_str(), c.proposed.n, cell(c.proposed).c_str(), cell(c.baseline).c_str(), p.c_str(),
                  c.fallbacks);
    out += line;
  }
  out += "\noverall (mean of step means): proposed " + detail::fmt("%.1f", r.overall_proposed) + " s, baseline " +
         detail::fmt("%.1f", r.overall_baseline) + " s";
  if (!std::isnan(r.overall_p_value)) out += ", p = " + detail::fmt("%.3f", r.overall_p_value);
  out += "\n";
  if (!r.dispositions.empty()) {
    out += "\n";
    std::snprintf(line, sizeof line, "%-6s %-28s %4s %4s %4s %4s %8s\n", "step", "label", "TP", "FP", "FN", "TN", "correct");
    out += line;
    for (const auto& t : r.dispositions) {
      std::snprintf(line, sizeof line, "%-6s %-28.28s %4ld %4ld %4ld %4ld %8.3f\n",
                    ("s" + std::to_string(t.target)).c_str(), t.label.c_str(), t.tp, t.fp, t.fn, t.tn, t.correct_rate());
      out += line;
    }
  }
  return out;
}

// Plot data: one row per (step, policy).
inline std::string report_errors_csv(const EvalReport& r) {
  std::string out = "step,name,policy,mean_s,se_s,n\n";
  for (const auto& c : r.cells)
    for (const auto& [policy, m] : {std::pair{"proposed", c.proposed}, std::pair{"baseline", c.baseline}})
      out += std::to_string(c.step) + "," + c.name + "," + policy + "," + format_double(m.mean) + "," +
             format_double(m.se) + "," + std::to_string(m.n) + "\n";
  return out;
}

}  // namespace stepwise
