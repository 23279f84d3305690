#pragma once

// Step-transition graph: construction from annotated sessions, validation,
// and trajectory enumeration between steps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/error.hpp"

namespace stepwise {

using StepId = int;

struct StepDef {
  StepId id = 0;
  std::string name;
  double mean_duration = 0.0;  // seconds
  double std_duration = 0.0;   // seconds
  std::optional<double> detectability_f1;
};

struct Edge {
  StepId from = 0;
  StepId to = 0;
  double prob = 0.0;
};

struct TransitionGraph {
  std::vector<StepDef> steps;  // steps[i].id == i + 1
  std::vector<Edge> edges;
  std::map<StepId, double> initial;
  std::set<StepId> terminals;

  std::size_t size() const noexcept { return steps.size(); }

  bool has_step(StepId id) const noexcept {
    return id >= 1 && static_cast<std::size_t>(id) <= steps.size() && steps[id - 1].id == id;
  }

  const StepDef& step(StepId id) const {
    if (!has_step(id)) throw Error("graph", "unknown step " + std::to_string(id));
    return steps[id - 1];
  }

  bool is_terminal(StepId id) const { return terminals.count(id) != 0; }

  // Outgoing edges of `id`, ordered by destination.
  std::vector<Edge> out_edges(StepId id) const {
    std::vector<Edge> out;
    for (const auto& e : edges)
      if (e.from == id) out.push_back(e);
    std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) { return a.to < b.to; });
    return out;
  }
};

// Successor lists indexed by step id - 1, each ordered by destination.
using Adjacency = std::vector<std::vector<std::pair<StepId, double>>>;

inline Adjacency adjacency(const TransitionGraph& g) {
  Adjacency adj(g.size());
  for (const auto& e : g.edges)
    if (g.has_step(e.from) && g.has_step(e.to)) adj[e.from - 1].emplace_back(e.to, e.prob);
  for (auto& row : adj) std::sort(row.begin(), row.end());
  return adj;
}

inline std::set<StepId> reachable_from(const Adjacency& adj, StepId from) {
  std::set<StepId> seen{from};
  std::vector<StepId> stack{from};
  while (!stack.empty()) {
    StepId s = stack.back();
    stack.pop_back();
    for (const auto& [to, p] : adj[s - 1])
      if (seen.insert(to).second) stack.push_back(to);
  }
  return seen;
}

// ---------------------------------------------------------------------------
// Sessions

struct Annotation {
  StepId step = 0;
  double start = 0.0;  // seconds
  double end = 0.0;
};

struct SessionLog {
  std::string id;
  std::vector<Annotation> annotations;
  std::vector<StepId> skipped;  // ground-truth intentional omissions

  bool performed(StepId s) const {
    return std::any_of(annotations.begin(), annotations.end(),
                       [s](const Annotation& a) { return a.step == s; });
  }

  bool was_skipped(StepId s) const {
    return std::find(skipped.begin(), skipped.end(), s) != skipped.end();
  }

  std::optional<double> first_start(StepId s) const {
    for (const auto& a : annotations)
      if (a.step == s) return a.start;
    return std::nullopt;
  }

  double end_time() const { return annotations.empty() ? 0.0 : annotations.back().end; }
};

inline void validate_session(const SessionLog& log) {
  const std::string who = "session '" + log.id + "'";
  double prev_end = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log.annotations.size(); ++i) {
    const auto& a = log.annotations[i];
    if (a.step < 1) throw Error("graph", who + ": invalid step id " + std::to_string(a.step));
    if (!(a.end > a.start))
      throw Error("graph", who + ": annotation " + std::to_string(i) + " has end <= start");
    if (a.start < prev_end)
      throw Error("graph", who + ": annotation " + std::to_string(i) + " overlaps its predecessor");
    prev_end = a.end;
  }
  for (StepId s : log.skipped)
    if (log.performed(s))
      throw Error("graph", who + ": skipped step " + std::to_string(s) + " also annotated");
}

// ---------------------------------------------------------------------------
// Construction

struct BuildOptions {
  // Explicit step universe; when empty the universe is 1..max annotated id.
  std::vector<std::string> step_names;
  double laplace_alpha = 0.0;  // additive edge smoothing over all b != a
  int min_edge_count = 1;      // transitions seen fewer times are pruned
  // Keep steps that no session annotates (one-frame placeholder duration,
  // no edges) instead of failing; they end up unreachable.
  bool allow_unseen = false;
};

inline TransitionGraph build_graph(std::span<const SessionLog> sessions, const BuildOptions& opt = {}) {
  if (sessions.empty()) throw Error("graph", "cannot build a graph from an empty session list");
  if (opt.laplace_alpha < 0.0) throw Error("graph", "laplace_alpha must be >= 0");

  StepId max_id = 0;
  for (const auto& s : sessions) {
    validate_session(s);
    if (s.annotations.empty()) throw Error("graph", "session '" + s.id + "' has no annotations");
    for (const auto& a : s.annotations) max_id = std::max(max_id, a.step);
  }
  const auto n = opt.step_names.empty() ? static_cast<std::size_t>(max_id) : opt.step_names.size();
  if (static_cast<std::size_t>(max_id) > n)
    throw Error("graph", "inconsistent step universe: step " + std::to_string(max_id) +
                             " outside 1.." + std::to_string(n));

  std::vector<std::vector<double>> spans(n);
  std::map<std::pair<StepId, StepId>, long> transitions;
  std::map<StepId, long> first_counts;
  std::set<StepId> terminals;

  for (const auto& s : sessions) {
    const auto& ann = s.annotations;
    first_counts[ann.front().step] += 1;
    terminals.insert(ann.back().step);
    for (std::size_t i = 0; i < ann.size(); ++i) {
      spans[ann[i].step - 1].push_back(ann[i].end - ann[i].start);
      if (i + 1 < ann.size() && ann[i + 1].step != ann[i].step)
        transitions[{ann[i].step, ann[i + 1].step}] += 1;
    }
  }

  TransitionGraph g;
  g.steps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<StepId>(i + 1);
    const auto& d = spans[i];
    if (d.empty() && !opt.allow_unseen)
      throw Error("graph", "inconsistent step universe: step " + std::to_string(id) +
                               " never annotated in any session");
    double mean = d.empty() ? 0.2 : 0.0;
    for (double x : d) mean += x;
    if (!d.empty()) mean /= static_cast<double>(d.size());
    double var = 0.0;
    if (d.size() > 1) {
      for (double x : d) var += (x - mean) * (x - mean);
      var /= static_cast<double>(d.size() - 1);
    }
    StepDef def;
    def.id = id;
    def.name = opt.step_names.empty() ? "s" + std::to_string(id) : opt.step_names[i];
    def.mean_duration = mean;
    def.std_duration = std::sqrt(var);
    g.steps.push_back(std::move(def));
  }

  for (StepId a = 1; a <= static_cast<StepId>(n); ++a) {
    std::map<StepId, long> kept;
    long total = 0;
    for (auto it = transitions.lower_bound({a, 0}); it != transitions.end() && it->first.first == a; ++it) {
      if (it->second < opt.min_edge_count) continue;
      kept[it->first.second] = it->second;
      total += it->second;
    }
    if (kept.empty()) continue;
    if (opt.laplace_alpha > 0.0) {
      const double denom = static_cast<double>(total) + opt.laplace_alpha * static_cast<double>(n - 1);
      for (StepId b = 1; b <= static_cast<StepId>(n); ++b) {
        if (b == a) continue;
        const auto it = kept.find(b);
        const double c = it == kept.end() ? 0.0 : static_cast<double>(it->second);
        g.edges.push_back({a, b, (c + opt.laplace_alpha) / denom});
      }
    } else {
      for (const auto& [b, c] : kept)
        g.edges.push_back({a, b, static_cast<double>(c) / static_cast<double>(total)});
    }
  }

  const auto n_sessions = static_cast<double>(sessions.size());
  for (const auto& [s, c] : first_counts) g.initial[s] = static_cast<double>(c) / n_sessions;
  g.terminals = std::move(terminals);
  return g;
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string rule;     // e.g. "out-sum", "reachability"
  std::string subject;  // step or edge the rule is about, e.g. "s3" or "s1->s4"
  std::string detail;
};

inline std::vector<Violation> validate_graph(const TransitionGraph& g) {
  std::vector<Violation> out;
  auto sname = [](StepId id) { return "s" + std::to_string(id); };
  auto ename = [&](const Edge& e) { return sname(e.from) + "->" + sname(e.to); };

  if (g.steps.empty()) {
    out.push_back({"empty", "graph", "graph has no steps"});
    return out;
  }
  for (std::size_t i = 0; i < g.steps.size(); ++i) {
    const auto& s = g.steps[i];
    if (s.id != static_cast<StepId>(i + 1))
      out.push_back({"step-id", sname(s.id), "expected id " + std::to_string(i + 1) + " at position " +
                                                 std::to_string(i)});
    if (!(s.mean_duration > 0.0)) out.push_back({"duration", sname(s.id), "mean_duration must be > 0"});
    if (!(s.std_duration >= 0.0)) out.push_back({"duration", sname(s.id), "std_duration must be >= 0"});
    if (s.detectability_f1 && !(*s.detectability_f1 >= 0.0 && *s.detectability_f1 <= 1.0))
      out.push_back({"f1", sname(s.id), "detectability_f1 outside [0,1]"});
  }
  if (!out.empty()) return out;  // ids are unusable below

  std::map<StepId, double> out_sum;
  std::set<std::pair<StepId, StepId>> seen;
  for (const auto& e : g.edges) {
    if (!g.has_step(e.from) || !g.has_step(e.to)) {
      out.push_back({"edge-endpoint", ename(e), "edge references an unknown step"});
      continue;
    }
    if (!(e.prob > 0.0 && e.prob <= 1.0)) out.push_back({"edge-prob", ename(e), "prob outside (0,1]"});
    if (e.from == e.to) out.push_back({"self-loop", ename(e), "self transitions are implicit in durations"});
    if (!seen.insert({e.from, e.to}).second) out.push_back({"duplicate-edge", ename(e), "edge listed twice"});
    out_sum[e.from] += e.prob;
  }
  for (const auto& s : g.steps) {
    const auto it = out_sum.find(s.id);
    const bool has_out = it != out_sum.end();
    if (g.is_terminal(s.id) && !has_out) continue;
    const double sum = has_out ? it->second : 0.0;
    if (std::abs(sum - 1.0) > 1e-9)
      out.push_back({"out-sum", sname(s.id), "outgoing probabilities sum to " + std::to_string(sum)});
  }

  double init_sum = 0.0;
  for (const auto& [id, p] : g.initial) {
    if (!g.has_step(id)) {
      out.push_back({"initial", sname(id), "initial mass on unknown step"});
      continue;
    }
    if (!(p >= 0.0 && p <= 1.0)) out.push_back({"initial", sname(id), "initial mass outside [0,1]"});
    init_sum += p;
  }
  if (std::abs(init_sum - 1.0) > 1e-9)
    out.push_back({"initial", "graph", "initial distribution sums to " + std::to_string(init_sum)});
  if (g.terminals.empty()) out.push_back({"terminal", "graph", "no terminal steps"});
  for (StepId t : g.terminals)
    if (!g.has_step(t)) out.push_back({"terminal", sname(t), "terminal is not a step"});

  const auto adj = adjacency(g);
  std::set<StepId> reachable;
  for (const auto& [id, p] : g.initial)
    if (p > 0.0 && g.has_step(id)) {
      auto r = reachable_from(adj, id);
      reachable.insert(r.begin(), r.end());
    }
  for (const auto& s : g.steps) {
    if (!reachable.count(s.id)) {
      out.push_back({"reachability", sname(s.id), "not reachable from the initial distribution"});
      continue;
    }
    const auto r = reachable_from(adj, s.id);
    const bool exits = std::any_of(g.terminals.begin(), g.terminals.end(),
                                   [&](StepId t) { return r.count(t) != 0; });
    if (!exits) out.push_back({"no-exit", sname(s.id), "no terminal step reachable"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories

struct Trajectory {
  std::vector<StepId> path;  // origin ... target, no repeated step
  double raw_prob = 0.0;     // product of edge probabilities
  double prob = 0.0;         // after renormalization over the set
  double mean_transit_time = 0.0;  // sum of mean durations of intermediate steps
};

struct TrajectorySet {
  StepId origin = 0;
  StepId target = 0;
  std::vector<Trajectory> trajectories;  // descending prob
  bool renormalized = false;
  bool truncated = false;
  double raw_total = 0.0;  // sum of raw probabilities of kept paths

  bool empty() const noexcept { return trajectories.empty(); }
};

inline constexpr std::size_t kDefaultMaxPaths = 10000;
inline constexpr std::size_t kUnlimitedPaths = std::numeric_limits<std::size_t>::max();

namespace detail {

// Depth-first enumeration of simple paths with branch-and-bound once
// `max_paths` candidates are held: extensions never increase a prefix's
// probability, so a prefix no better than the current worst kept path is cut.
// Returns an empty set when the target is unreachable.
inline TrajectorySet enumerate_simple_paths(const TransitionGraph& g, const Adjacency& adj, StepId from,
                                            StepId to, std::size_t max_paths) {
  TrajectorySet set;
  set.origin = from;
  set.target = to;
  if (from == to) {
    set.trajectories.push_back({{from}, 1.0, 1.0, 0.0});
    set.raw_total = 1.0;
    set.renormalized = true;
    return set;
  }

  struct Kept {
    double prob;
    std::size_t order;
    std::vector<StepId> path;
  };
  // Worst first: lowest prob, and among equals the latest discovered.
  auto worse = [](const Kept& a, const Kept& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.order < b.order;
  };
  std::priority_queue<Kept, std::vector<Kept>, decltype(worse)> heap(worse);
  std::size_t discovered = 0;

  std::vector<char> on_path(g.size() + 1, 0);
  std::vector<StepId> path{from};
  on_path[from] = 1;

  std::function<void(StepId, double)> dfs = [&](StepId at, double prob) {
    for (const auto& [next, p] : adj[at - 1]) {
      if (on_path[next]) continue;
      const double q = prob * p;
      if (heap.size() >= max_paths && q <= heap.top().prob) {
        set.truncated = true;
        continue;
      }
      if (next == to) {
        path.push_back(next);
        heap.push({q, discovered++, path});
        path.pop_back();
        if (heap.size() > max_paths) {
          heap.pop();
          set.truncated = true;
        }
        continue;
      }
      on_path[next] = 1;
      path.push_back(next);
      dfs(next, q);
      path.pop_back();
      on_path[next] = 0;
    }
  };
  dfs(from, 1.0);

  std::vector<Kept> kept;
  kept.reserve(heap.size());
  while (!heap.empty()) {
    kept.push_back(heap.top());
    heap.pop();
  }
  std::sort(kept.begin(), kept.end(), [](const Kept& a, const Kept& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.path < b.path;
  });
  for (auto& k : kept) {
    Trajectory t;
    t.raw_prob = k.prob;
    for (std::size_t i = 1; i + 1 < k.path.size(); ++i) t.mean_transit_time += g.steps[k.path[i] - 1].mean_duration;
    t.path = std::move(k.path);
    set.raw_total += t.raw_prob;
    set.trajectories.push_back(std::move(t));
  }
  if (!set.trajectories.empty()) {
    for (auto& t : set.trajectories) t.prob = t.raw_prob / set.raw_total;
    set.renormalized = true;
  }
  return set;
}

}  // namespace detail

// All simple paths from -> to, renormalized to sum to 1. Throws
// UnreachableTarget when no path exists.
inline TrajectorySet enumerate_trajectories(const TransitionGraph& g, StepId from, StepId to,
                                            std::size_t max_paths = kDefaultMaxPaths) {
  if (!g.has_step(from)) throw Error("graph", "unknown origin step " + std::to_string(from));
  if (!g.has_step(to)) throw Error("graph", "unknown target step " + std::to_string(to));
  if (max_paths < 1) throw Error("graph", "max_paths must be >= 1");
  auto set = detail::enumerate_simple_paths(g, adjacency(g), from, to, max_paths);
  if (set.empty())
    throw UnreachableTarget("graph", "no path from s" + std::to_string(from) + " to s" + std::to_string(to));
  return set;
}

}  // namespace stepwise
