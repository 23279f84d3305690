#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "fixtures.hpp"
#include "stepwise/engine.hpp"
#include "stepwise/io.hpp"
#include "stepwise/random.hpp"

using namespace stepwise;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "stepwise_test_io";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Io, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Io, DoublesRoundTripExactly) {
  SplitMix64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<int>(rng.uniform() * 20) - 10);
    EXPECT_EQ(parse_double(format_double(x), "x"), x);
  }
  EXPECT_EQ(format_double(0.2), "0.2");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_THROW(parse_double("1.5x", "x"), Error);
}

TEST(Io, GraphRoundTripAndCanonicalHash) {
  auto g = fixtures::double_fork();
  g.steps[2].detectability_f1 = 0.83;
  const auto back = graph_from_json(parse_json(to_json(g).dump(), "g"));
  EXPECT_EQ(canonical_graph(back), canonical_graph(g));
  EXPECT_EQ(back.steps[2].detectability_f1, 0.83);
  EXPECT_FALSE(back.steps[0].detectability_f1.has_value());
  auto shuffled = g;
  std::reverse(shuffled.edges.begin(), shuffled.edges.end());
  EXPECT_EQ(graph_hash(shuffled), graph_hash(g));
  shuffled.steps[0].mean_duration += 1.0;
  EXPECT_NE(graph_hash(shuffled), graph_hash(g));
}

TEST(Io, LoadGraphValidates) {
  auto g = fixtures::fork();
  g.edges.pop_back();  // s3 becomes a dead end
  const auto p = scratch("bad_graph.json");
  write_text(p, dump_json(to_json(g)));
  EXPECT_THROW(load_graph(p), Error);
  EXPECT_THROW(load_graph(scratch("absent.json")), MissingInput);
  write_text(p, "{\"steps\": []");
  EXPECT_THROW(load_graph(p), Error);
  write_text(p, "{\"steps\": [], \"edges\": []}");
  EXPECT_THROW(load_graph(p), Error);
}

TEST(Io, SessionRoundTrip) {
  SessionLog s;
  s.id = "a";
  s.annotations = {{1, 0.0, 4.2}, {3, 4.2, 9.0}};
  s.skipped = {2};
  const auto back = session_from_json(to_json(s));
  EXPECT_EQ(back.id, "a");
  ASSERT_EQ(back.annotations.size(), 2u);
  EXPECT_EQ(back.annotations[1].end, 9.0);
  EXPECT_EQ(back.skipped, std::vector<StepId>{2});
  auto j = to_json(s);
  j["annotations"][1]["start_s"] = 3.0;  // overlap
  EXPECT_THROW(session_from_json(j), Error);
}

TEST(Io, FramesCsvRoundTripIsExact) {
  auto sc = fixtures::scenario(fixtures::fork(), uniform_confusion(4, 0.7), 2);
  const auto s = simulate_session(sc);
  const auto text = frames_to_csv(s.frames, 4);
  EXPECT_EQ(text.substr(0, text.find('\n')), "t,p1,p2,p3,p4");
  const auto back = frames_from_csv(text);
  ASSERT_EQ(back.size(), s.frames.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    ASSERT_EQ(back[i].t, s.frames[i].t);
    ASSERT_EQ(back[i].probs, s.frames[i].probs);
  }
  EXPECT_EQ(frames_to_csv(back, 4), text);
}

TEST(Io, FramesCsvBackgroundAndErrors) {
  const auto f = frames_from_csv("t,p1,p2,p_bg\r\n0.2,0.1,0.2,0.7\r\n");
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].probs.size(), 3u);
  EXPECT_EQ(frames_to_csv(f, 2).substr(0, 13), "t,p1,p2,p_bg\n");
  EXPECT_THROW(frames_from_csv("x,p1\n0.2,1\n"), Error);
  EXPECT_THROW(frames_from_csv("t,p1,p2\n0.2,1\n"), Error);
  EXPECT_THROW(frames_from_csv(""), Error);
}

TEST(Io, SpecsRoundTripAndDefaults) {
  std::vector<InterventionSpec> specs(2);
  specs[0].target = 2;
  specs[0].kind = InterventionKind::notify_if_forgotten;
  specs[0].label = "rinse";
  specs[1].target = 6;
  specs[1].h = 4.5;
  const auto back = specs_from_json(specs_to_json(specs));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].kind, InterventionKind::notify_if_forgotten);
  EXPECT_EQ(back[1].h, 4.5);
  const auto d = specs_from_json(parse_json(R"({"specs":[{"target":3,"kind":"remind-in-advance"}]})", "s"));
  EXPECT_EQ(d[0].k_minus, 15.0);
  EXPECT_EQ(d[0].h, 3.0);
  EXPECT_THROW(specs_from_json(parse_json(R"({"specs":[{"target":3,"kind":"ping"}]})", "s")), Error);
  EXPECT_THROW(specs_from_json(parse_json(R"({"specs":[{"kind":"ping"}]})", "s")), Error);
}

TEST(Io, ScenarioRoundTrip) {
  auto sc = fixtures::scenario(fixtures::fork(), uniform_confusion(4, 0.6), 42);
  sc.kappa = std::numeric_limits<double>::infinity();
  sc.skip[2] = 0.5;
  sc.tail_if_terminal_skipped = 20.0;
  const auto back = scenario_from_json(parse_json(to_json(sc).dump(), "sc"));
  EXPECT_TRUE(std::isinf(back.kappa));
  EXPECT_EQ(back.skip.at(2), 0.5);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.confusion, sc.confusion);
  EXPECT_EQ(back.tail_if_terminal_skipped, 20.0);
  auto j = to_json(fixtures::fork());
  j["accuracy"] = {0.9, 0.5, 0.5, 0.9};
  EXPECT_NEAR(scenario_from_json(j).confusion[1][0], 0.5 / 3, 1e-15);
  j.erase("accuracy");
  EXPECT_THROW(scenario_from_json(j), Error);
}

TEST(Io, EventsAndTicks) {
  std::vector<InterventionEvent> ev{{12.4, 2, InterventionKind::remind_in_advance, "Don't forget to do s2", std::nullopt},
                                    {30.0, 5, InterventionKind::notify_if_forgotten, "Have you done s5?", Disposition::tp}};
  const auto text = events_to_jsonl(ev);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            R"({"kind":"remind-in-advance","message":"Don't forget to do s2","t":12.4,"target":2})");
  EXPECT_NE(text.find(R"("disposition":"TP")"), std::string::npos);
  const auto back = events_from_jsonl(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].t, 30.0);

  TickRecord t;
  t.t = 1.0;
  TargetTick x;
  x.target = 3;
  x.entropy = 0.5;
  x.entropy_smoothed = 0.25;
  x.reachable_mass = 1.0;
  t.targets.push_back(x);
  EXPECT_EQ(ticks_to_csv({t}), "t,target,expectation_s,entropy,entropy_smoothed,reachable_mass,phase\n"
                               "1,3,nan,0.5,0.25,1,watching\n");
}

TEST(Io, WriteTextCreatesDirectories) {
  const auto p = scratch("nested/a/b.txt");
  fs::remove_all(p.parent_path());
  write_text(p, "hi");
  EXPECT_EQ(read_text(p), "hi");
  EXPECT_EQ(sha256_file(p), sha256_hex("hi"));
}
