#pragma once

// Small graphs and scenarios shared by the unit and acceptance suites.

#include <string>
#include <vector>

#include "stepwise/graph.hpp"
#include "stepwise/simulator.hpp"

namespace fixtures {

using namespace stepwise;

inline StepDef step(StepId id, double mean, double sd = 0.0, std::string name = "") {
  StepDef s;
  s.id = id;
  s.name = name.empty() ? "s" + std::to_string(id) : std::move(name);
  s.mean_duration = mean;
  s.std_duration = sd;
  return s;
}

// s1 -> s2 -> ... -> sN, every step `mean` seconds.
inline TransitionGraph chain(std::vector<double> means, double sd_fraction = 0.0) {
  TransitionGraph g;
  for (std::size_t i = 0; i < means.size(); ++i)
    g.steps.push_back(step(static_cast<StepId>(i + 1), means[i], sd_fraction * means[i]));
  for (std::size_t i = 0; i + 1 < means.size(); ++i)
    g.edges.push_back({static_cast<StepId>(i + 1), static_cast<StepId>(i + 2), 1.0});
  g.initial[1] = 1.0;
  g.terminals.insert(static_cast<StepId>(means.size()));
  return g;
}

// s1(10) -> {s2(10) | s3(20)} at 0.5 each -> s4. From s1, s4 starts after
// 10 + 10 or 10 + 20 seconds.
inline TransitionGraph fork() {
  TransitionGraph g;
  g.steps = {step(1, 10), step(2, 10), step(3, 20), step(4, 5)};
  g.edges = {{1, 2, 0.5}, {1, 3, 0.5}, {2, 4, 1.0}, {3, 4, 1.0}};
  g.initial[1] = 1.0;
  g.terminals = {4};
  return g;
}

// s1 20 s -> {s2 short 20 s | s3 long 80 s} -> s4 merge 20 s -> s5 end 20 s.
inline TransitionGraph two_branch(double sd_fraction = 0.2) {
  TransitionGraph g;
  g.steps = {step(1, 20, 20 * sd_fraction, "prepare"), step(2, 20, 20 * sd_fraction, "short branch"),
             step(3, 80, 80 * sd_fraction, "long branch"), step(4, 20, 20 * sd_fraction, "merge"),
             step(5, 20, 20 * sd_fraction, "finish")};
  g.edges = {{1, 2, 0.5}, {1, 3, 0.5}, {2, 4, 1.0}, {3, 4, 1.0}, {4, 5, 1.0}};
  g.initial[1] = 1.0;
  g.terminals = {5};
  return g;
}

// Diamond with a cycle-free second fork: s1 -> {s2, s3} -> s4 -> {s5, s6} -> s7.
inline TransitionGraph double_fork() {
  TransitionGraph g;
  g.steps = {step(1, 12, 2), step(2, 30, 5), step(3, 8, 1), step(4, 15, 3),
             step(5, 40, 6), step(6, 10, 2), step(7, 20, 3)};
  g.edges = {{1, 2, 0.3}, {1, 3, 0.7}, {2, 4, 1.0}, {3, 4, 1.0}, {4, 5, 0.6}, {4, 6, 0.4}, {5, 7, 1.0}, {6, 7, 1.0}};
  g.initial[1] = 1.0;
  g.terminals = {7};
  return g;
}

inline Scenario scenario(TransitionGraph g, Matrix confusion, std::uint64_t seed) {
  Scenario sc;
  sc.graph = std::move(g);
  sc.confusion = std::move(confusion);
  sc.seed = seed;
  return sc;
}

}  // namespace fixtures
