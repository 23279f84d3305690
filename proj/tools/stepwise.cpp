// stepwise: command-line front end.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error (including unknown
// subcommands), 66 missing input file, 69 server unreachable (replay), 70
// rerun from a manifest produced different outputs.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "stepwise/stepwise.hpp"

namespace fs = std::filesystem;
using namespace stepwise;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNoInput = 66;
constexpr int kExitUnavailable = 69;
constexpr int kExitMismatch = 70;

std::string default_out() {
  const char* env = std::getenv("STEPWISE_OUT");
  return env && *env ? env : "out";
}

// Inputs, outputs and resolved configuration of one invocation; written as
// manifest.json into the output directory.
class Manifest {
 public:
  Manifest(std::string subcommand, std::vector<std::string> argv, fs::path out)
      : subcommand_(std::move(subcommand)), argv_(std::move(argv)), out_(std::move(out)) {}

  void input(const fs::path& p) { inputs_[p.string()] = sha256_file(p); }
  void set_argv(std::vector<std::string> argv) { argv_ = std::move(argv); }
  Json& config() { return config_; }
  const fs::path& dir() const { return out_; }

  void output(const std::string& rel, std::string_view content) {
    write_text(out_ / rel, content);
    outputs_[rel] = sha256_hex(content);
  }

  void write() {
    Json j{{"tool", "stepwise"},
           {"subcommand", subcommand_},
           {"argv", argv_},
           {"cwd", fs::current_path().string()},
           {"config", config_},
           {"inputs", inputs_},
           {"outputs", outputs_}};
    write_text(out_ / "manifest.json", dump_json(j));
  }

 private:
  std::string subcommand_;
  std::vector<std::string> argv_;
  fs::path out_;
  Json config_ = Json::object();
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

Json engine_json(const EngineConfig& c) {
  return Json{{"preset", c.preset},
              {"frame_length_s", c.tracker.frame_length},
              {"self_transition_floor", c.tracker.self_transition_floor},
              {"emission_smoothing", c.tracker.emission_smoothing},
              {"detection_window_s", c.tracker.detection_window},
              {"n_samples", c.forecast.n_samples},
              {"bin_width_s", c.forecast.bin_width},
              {"forecast_seed", c.forecast.seed},
              {"stability_horizon_s", c.policy.stability_horizon},
              {"stability_tolerance_s", c.policy.stability_tolerance},
              {"entropy_smooth_s", c.policy.entropy_smooth},
              {"tick_s", c.policy.tick},
              {"min_reachable_mass", c.min_reachable_mass}};
}

// Session files in a directory: <stem>.json logs with <stem>.csv frames.
std::vector<fs::path> session_logs(const fs::path& dir) {
  if (!fs::exists(dir)) throw MissingInput(dir.string());
  std::vector<fs::path> out;
  if (fs::is_regular_file(dir)) return {dir};
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error("io", "no session logs (*.json) in " + dir.string());
  return out;
}

std::vector<InterventionSpec> maybe_specs(const std::string& path, Manifest& m) {
  if (path.empty()) return {};
  m.input(path);
  return load_specs(path);
}

// ---------------------------------------------------------------------------

struct BuildGraphArgs {
  std::string sessions, out = default_out(), names;
  double laplace = 0.0;
  int min_edge_count = 1;
};

int cmd_build_graph(const BuildGraphArgs& a, const std::vector<std::string>& argv) {
  Manifest m("build-graph", argv, a.out);
  std::vector<SessionLog> logs;
  for (const auto& p : session_logs(a.sessions)) {
    m.input(p);
    logs.push_back(load_session(p));
  }
  BuildOptions opt;
  opt.laplace_alpha = a.laplace;
  opt.min_edge_count = a.min_edge_count;
  if (!a.names.empty()) {
    m.input(a.names);
    opt.step_names = read_json(a.names).get<std::vector<std::string>>();
  }
  const auto g = build_graph(logs, opt);
  for (const auto& v : validate_graph(g)) std::cerr << "warning: " << v.rule << " at " << v.subject << ": " << v.detail << "\n";
  m.config() = {{"laplace_alpha", a.laplace}, {"min_edge_count", a.min_edge_count}, {"sessions", logs.size()}};
  m.output("graph.json", dump_json(to_json(g)));
  m.write();
  std::cout << "graph: " << g.size() << " steps, " << g.edges.size() << " edges, hash " << graph_hash(g) << "\n";
  return 0;
}

struct SimulateArgs {
  std::string scenario, out = default_out();
  std::size_t count = 10;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& a, const std::vector<std::string>& argv) {
  Manifest m("simulate", argv, a.out);
  m.input(a.scenario);
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.seed = *a.seed;
  m.config() = {{"seed", sc.seed}, {"count", a.count}, {"kappa", std::isfinite(sc.kappa) ? Json(sc.kappa) : Json("inf")}};
  m.output("graph.json", dump_json(to_json(sc.graph)));
  for (std::size_t i = 0; i < a.count; ++i) {
    const auto s = simulate_session(sc, i);
    m.output("sessions/" + s.log.id + ".json", dump_json(to_json(s.log)));
    m.output("sessions/" + s.log.id + ".csv", frames_to_csv(s.frames, sc.graph.size()));
  }
  m.write();
  std::cout << "simulated " << a.count << " sessions (seed " << sc.seed << ") into " << a.out << "\n";
  return 0;
}

struct RunArgs {
  std::string graph, specs, frames, session, out = default_out(), preset = "laptop";
  std::uint64_t seed = 0;
};

int cmd_run(const RunArgs& a, const std::vector<std::string>& argv) {
  Manifest m("run", argv, a.out);
  m.input(a.graph);
  const auto g = load_graph(a.graph);
  const auto specs = maybe_specs(a.specs, m);
  m.input(a.frames);
  const auto frames = load_frames(a.frames);
  auto cfg = EngineConfig::from_preset(a.preset);
  cfg.forecast.seed = a.seed;
  m.config() = engine_json(cfg);
  m.config()["specs"] = specs_to_json(specs)["specs"];
  const auto result = run_session(g, specs, frames, cfg);
  auto events = result.events;
  if (!a.session.empty()) {
    m.input(a.session);
    events = annotate_dispositions(events, load_session(a.session));
  }
  m.output("events.jsonl", events_to_jsonl(events));
  m.output("ticks.csv", ticks_to_csv(result.ticks));
  m.write();
  for (const auto& e : events) std::cout << format_double(e.t) << " s  " << e.message << "\n";
  std::cout << events.size() << " events, " << result.ticks.size() << " ticks\n";
  return 0;
}

struct EvaluateArgs {
  std::string sessions, out = default_out(), task = "task", graph, specs, preset = "evaluation";
  std::vector<double> grid = default_threshold_grid();
  std::uint64_t seed = 0;
  std::size_t tuning = 0;
  std::size_t samples = 10000;
};

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv) {
  Manifest m("evaluate", argv, a.out);
  std::vector<RecordedSession> data;
  for (const auto& p : session_logs(a.sessions)) {
    auto csv = p;
    csv.replace_extension(".csv");
    m.input(p);
    m.input(csv);
    data.push_back({load_session(p), load_frames(csv)});
  }
  EvalConfig cfg;
  cfg.task = a.task;
  cfg.engine = EngineConfig::from_preset(a.preset);
  cfg.engine.forecast.seed = a.seed;
  cfg.engine.forecast.n_samples = a.samples;
  cfg.grid = a.grid;
  cfg.max_tuning_sessions = a.tuning;
  auto report = loso_evaluate(data, cfg);

  if (!a.specs.empty()) {
    if (a.graph.empty()) throw Error("cli", "--specs needs --graph for disposition tallies");
    m.input(a.graph);
    const auto g = load_graph(a.graph);
    const auto specs = maybe_specs(a.specs, m);
    auto run_cfg = EngineConfig::from_preset(a.preset == "evaluation" ? "laptop" : a.preset);
    run_cfg.forecast.seed = a.seed;
    report.dispositions = evaluate_dispositions(g, specs, data, run_cfg);
  }
  m.config() = engine_json(cfg.engine);
  m.config()["grid"] = cfg.grid;
  m.config()["tuning_sessions"] = a.tuning;
  m.output("report.json", dump_json(to_json(report)));
  m.output("report.txt", report_table(report));
  m.output("errors.csv", report_errors_csv(report));
  m.write();
  std::cout << report_table(report);
  return 0;
}

struct ServeArgs {
  std::string config, graph, specs, preset = "laptop", address = "127.0.0.1", port_file, out;
  int port = 7000;
  std::size_t max_sessions = 0;
  std::uint64_t seed = 0;
};

int cmd_serve(ServeArgs a, const std::vector<std::string>& argv) {
  if (!a.config.empty()) {
    // Flags given on the command line win over the config file.
    const auto j = read_json(a.config);
    if (a.graph.empty()) a.graph = j.value("graph", "");
    if (a.specs.empty()) a.specs = j.value("specs", "");
    a.address = j.value("address", a.address);
    a.port = j.value("port", a.port);
    a.preset = j.value("preset", a.preset);
  }
  if (a.graph.empty()) throw Error("cli", "serve needs --graph (or a config file naming one)");
  Manifest m("serve", argv, a.out.empty() ? fs::path(default_out()) : fs::path(a.out));
  m.input(a.graph);
  ServerConfig sc;
  sc.graph = load_graph(a.graph);
  sc.specs = maybe_specs(a.specs, m);
  sc.engine = EngineConfig::from_preset(a.preset);
  sc.engine.forecast.seed = a.seed;
  sc.address = a.address;
  sc.port = static_cast<unsigned short>(a.port);
  sc.max_sessions = a.max_sessions;
  Server server(sc);
  if (!a.port_file.empty()) write_text(a.port_file, std::to_string(server.port()) + "\n");
  std::cerr << Json{{"level", "info"}, {"msg", "listening"}, {"port", server.port()}, {"graph_hash", server.graph_hash_hex()}}.dump()
            << std::endl;
  server.run();

  if (!a.out.empty()) {
    auto stats = server.stats();
    std::sort(stats.begin(), stats.end(), [](const auto& x, const auto& y) { return x.session < y.session; });
    std::string lines;
    for (const auto& s : stats)
      lines += Json{{"session", s.session}, {"frames", s.frames}, {"events", s.events}, {"completed", s.completed}}.dump() + "\n";
    m.config() = engine_json(sc.engine);
    m.output("sessions.jsonl", lines);
    m.write();
  }
  return 0;
}

struct ReplayArgs {
  std::string graph, specs, host = "127.0.0.1", out = default_out();
  std::vector<std::string> frames;
  int port = 7000;
  double speed = 1.0;
};

int cmd_replay(const ReplayArgs& a, const std::vector<std::string>& argv) {
  Manifest m("replay", argv, a.out);
  m.input(a.graph);
  const auto g = load_graph(a.graph);
  std::optional<std::vector<InterventionSpec>> specs;
  if (!a.specs.empty()) specs = maybe_specs(a.specs, m);

  std::vector<std::vector<FrameObservation>> streams;
  for (const auto& f : a.frames) {
    m.input(f);
    streams.push_back(load_frames(f));
  }
  std::vector<ReplayResult> results(streams.size());
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < streams.size(); ++i)
    workers.emplace_back([&, i] {
      ReplayOptions opt;
      opt.host = a.host;
      opt.port = static_cast<unsigned short>(a.port);
      opt.session = fs::path(a.frames[i]).stem().string();
      opt.graph_hash = graph_hash(g);
      opt.speed = a.speed;
      opt.specs = specs;
      results[i] = replay(streams[i], opt);
    });
  for (auto& w : workers) w.join();

  int status = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const auto stem = fs::path(a.frames[i]).stem().string();
    m.output(stem + ".events.jsonl", events_to_jsonl(r.events));
    if (r.bye) std::cerr << stem << ": " << r.bye->dump() << "\n";
    if (r.status != 0) {
      std::cerr << stem << ": " << r.error << "\n";
      status = std::max(status, r.status == 2 ? kExitUnavailable : kExitError);
    }
    std::cout << stem << ": " << r.events.size() << " events\n";
  }
  m.config() = {{"speed", a.speed}, {"host", a.host}, {"port", a.port}};
  m.write();
  return status;
}

struct LiveArgs {
  std::string graph, specs, preset = "laptop", script, out;
  std::uint64_t seed = 0;
  double speed = 0.0;
};

// Reads "STEP [SECONDS]" lines (SECONDS defaults to the step's mean
// duration) and "end"; feeds one-hot frames for each and prints
// interventions as they fire.
int cmd_live(const LiveArgs& a, std::vector<std::string> argv) {
  Manifest m("live", argv, a.out.empty() ? fs::path(default_out()) : fs::path(a.out));
  m.input(a.graph);
  const auto g = load_graph(a.graph);
  const auto specs = maybe_specs(a.specs, m);
  auto cfg = EngineConfig::from_preset(a.preset);
  cfg.forecast.seed = a.seed;
  SessionEngine engine(g, specs, cfg);

  std::string script;
  if (!a.script.empty()) {
    m.input(a.script);
    script = read_text(a.script);
  }
  std::istringstream scripted(script);
  std::istream& in = a.script.empty() ? std::cin : scripted;

  std::string consumed;
  std::cout << "begin the task (" << g.size() << " steps; type a step id and optional seconds, 'end' to finish)\n";
  std::string line;
  long frame = 0;
  const auto start = std::chrono::steady_clock::now();
  while (std::getline(in, line)) {
    consumed += line + "\n";
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    if (head == "end") break;
    StepId step = 0;
    try {
      step = std::stoi(head);
    } catch (...) {
      std::cout << "? expected a step id or 'end'\n";
      continue;
    }
    if (!g.has_step(step)) {
      std::cout << "? unknown step " << step << "\n";
      continue;
    }
    double seconds = g.step(step).mean_duration;
    ls >> seconds;
    const long n = std::max(1L, std::lround(seconds / cfg.tracker.frame_length));
    std::cout << "doing s" << step << " (" << g.step(step).name << ") for " << format_double(n * cfg.tracker.frame_length)
              << " s\n";
    for (long k = 0; k < n; ++k) {
      FrameObservation f;
      f.t = static_cast<double>(++frame) * cfg.tracker.frame_length;
      f.probs.assign(g.size(), 0.0);
      f.probs[step - 1] = 1.0;
      if (a.speed > 0.0)
        std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                  std::chrono::duration<double>(f.t / a.speed)));
      for (const auto& e : engine.push(f).events) std::cout << "[" << format_double(e.t) << " s] " << e.message << std::endl;
    }
  }
  std::cout << "end the task (" << engine.result().events.size() << " interventions)\n";
  if (!a.out.empty()) {
    if (a.script.empty()) {
      // Record stdin so the manifest can replay it.
      m.output("live_input.txt", consumed);
      argv.push_back("--script");
      argv.push_back((fs::path(a.out) / "live_input.txt").string());
      m.set_argv(argv);
    }
    m.config() = engine_json(cfg);
    m.output("events.jsonl", events_to_jsonl(engine.result().events));
    m.write();
  }
  return 0;
}

int dispatch(const std::vector<std::string>& args);

// Re-executes the invocation recorded in a manifest and compares outputs.
int rerun_manifest(const fs::path& path) {
  const auto j = read_json(path);
  const auto argv = j.at("argv").get<std::vector<std::string>>();
  const auto expected = j.at("outputs").get<std::map<std::string, std::string>>();
  const auto dir = fs::absolute(path).parent_path();
  const auto cwd = fs::current_path();
  fs::current_path(j.at("cwd").get<std::string>());
  const int rc = dispatch(argv);
  fs::current_path(cwd);
  if (rc != 0) return rc;
  int mismatches = 0;
  for (const auto& [rel, hash] : expected) {
    const auto p = dir / rel;
    if (!fs::exists(p) || sha256_file(p) != hash) {
      std::cerr << "differs: " << rel << "\n";
      ++mismatches;
    }
  }
  std::cerr << "rerun: " << expected.size() - static_cast<std::size_t>(mismatches) << "/" << expected.size()
            << " outputs identical\n";
  return mismatches ? kExitMismatch : 0;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Step tracking, remaining-time forecasting and intervention timing"};
  app.set_version_flag("--version", "stepwise 0.1.0");
  std::string from_manifest;
  app.add_option("--from-manifest", from_manifest, "Rerun the invocation recorded in a manifest.json");
  app.require_subcommand(0, 1);

  BuildGraphArgs bg;
  auto* c_bg = app.add_subcommand("build-graph", "Build a transition graph from annotated session logs");
  c_bg->add_option("--sessions", bg.sessions, "Directory of session logs (*.json) or one log")->required();
  c_bg->add_option("--out", bg.out, "Output directory");
  c_bg->add_option("--names", bg.names, "JSON array of step names");
  c_bg->add_option("--laplace", bg.laplace, "Additive edge smoothing");
  c_bg->add_option("--min-edge-count", bg.min_edge_count, "Prune transitions seen fewer times");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate synthetic sessions from a scenario");
  c_sim->add_option("--scenario", sim.scenario, "Scenario file")->required();
  c_sim->add_option("-n,--count", sim.count, "Number of sessions");
  c_sim->add_option("--seed", sim.seed, "Override the scenario seed");
  c_sim->add_option("--out", sim.out, "Output directory");

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Run the engine offline over one frame stream");
  c_run->add_option("--graph", run.graph, "Graph file")->required();
  c_run->add_option("--specs", run.specs, "Intervention spec file");
  c_run->add_option("--frames", run.frames, "Frame stream (CSV)")->required();
  c_run->add_option("--session", run.session, "Session log, to label notify events with dispositions");
  c_run->add_option("--out", run.out, "Output directory");
  c_run->add_option("--preset", run.preset, "laptop|watch");
  c_run->add_option("--seed", run.seed, "Forecast seed");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Leave-one-session-out timing evaluation");
  c_ev->add_option("--sessions", ev.sessions, "Directory of <id>.json logs with <id>.csv frames")->required();
  c_ev->add_option("--out", ev.out, "Output directory");
  c_ev->add_option("--grid", ev.grid, "Entropy thresholds to search (nats)")->delimiter(',');
  c_ev->add_option("--seed", ev.seed, "Forecast seed");
  c_ev->add_option("--task", ev.task, "Task name for the report");
  c_ev->add_option("--tuning-sessions", ev.tuning, "Training sessions replayed per fold for the search (0 = all)");
  c_ev->add_option("--samples", ev.samples, "Monte Carlo samples per forecast");
  c_ev->add_option("--preset", ev.preset, "evaluation|laptop|watch");
  c_ev->add_option("--graph", ev.graph, "Graph for disposition tallies");
  c_ev->add_option("--specs", ev.specs, "Specs for disposition tallies");

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "Serve sessions over TCP");
  c_sv->add_option("--config", sv.config, "JSON config: address, port, preset, graph, specs");
  c_sv->add_option("--graph", sv.graph, "Graph file");
  c_sv->add_option("--specs", sv.specs, "Intervention spec file");
  c_sv->add_option("--preset", sv.preset, "laptop|watch");
  c_sv->add_option("--address", sv.address, "Bind address");
  c_sv->add_option("--port", sv.port, "Port (0 = any free port)");
  c_sv->add_option("--port-file", sv.port_file, "Write the bound port here");
  c_sv->add_option("--max-sessions", sv.max_sessions, "Exit after serving this many sessions");
  c_sv->add_option("--seed", sv.seed, "Forecast seed");
  c_sv->add_option("--out", sv.out, "Write a session summary and manifest here on exit");

  ReplayArgs rp;
  auto* c_rp = app.add_subcommand("replay", "Stream recorded frames to a server");
  c_rp->add_option("--graph", rp.graph, "Graph file (for the hello hash)")->required();
  c_rp->add_option("--frames", rp.frames, "Frame streams (CSV); each is one concurrent session")->required();
  c_rp->add_option("--specs", rp.specs, "Spec file sent with hello (server default otherwise)");
  c_rp->add_option("--host", rp.host, "Server host");
  c_rp->add_option("--port", rp.port, "Server port");
  c_rp->add_option("--speed", rp.speed, "Pacing multiplier (0 = as fast as possible)");
  c_rp->add_option("--out", rp.out, "Output directory");

  LiveArgs lv;
  auto* c_lv = app.add_subcommand("live", "Type step ids, watch interventions fire");
  c_lv->add_option("--graph", lv.graph, "Graph file")->required();
  c_lv->add_option("--specs", lv.specs, "Intervention spec file");
  c_lv->add_option("--preset", lv.preset, "laptop|watch");
  c_lv->add_option("--seed", lv.seed, "Forecast seed");
  c_lv->add_option("--script", lv.script, "Read commands from this file instead of stdin");
  c_lv->add_option("--speed", lv.speed, "Real-time pacing multiplier (0 = instant)");
  c_lv->add_option("--out", lv.out, "Write events and a manifest here");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "stepwise: " << e.what() << "\n";
    return kExitUsage;
  }

  if (!from_manifest.empty()) return rerun_manifest(from_manifest);
  if (c_bg->parsed()) return cmd_build_graph(bg, args);
  if (c_sim->parsed()) return cmd_simulate(sim, args);
  if (c_run->parsed()) return cmd_run(run, args);
  if (c_ev->parsed()) return cmd_evaluate(ev, args);
  if (c_sv->parsed()) return cmd_serve(sv, args);
  if (c_rp->parsed()) return cmd_replay(rp, args);
  if (c_lv->parsed()) return cmd_live(lv, args);
  std::cerr << app.help();
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const MissingInput& e) {
    std::cerr << "stepwise: " << e.what() << "\n";
    return kExitNoInput;
  } catch (const std::exception& e) {
    std::cerr << "stepwise: " << e.what() << "\n";
    return kExitError;
  }
}
