#pragma once

// File formats. Structured records are JSON with sorted keys, so a dump of a
// parsed file is canonical and byte-stable. Frame streams and tick logs are
// CSV. Doubles use shortest round-trip formatting everywhere.

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stepwise/engine.hpp"
#include "stepwise/error.hpp"
#include "stepwise/graph.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/simulator.hpp"
#include "stepwise/tracker.hpp"

namespace stepwise {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Plain files

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("io", "short write to " + path.string());
}

inline Json parse_json(std::string_view text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error("io", what + ": " + e.what());
  }
}

inline Json read_json(const std::filesystem::path& path) { return parse_json(read_text(path), path.string()); }

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("io", "sha256 failed");
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
  double x = 0.0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, x);
  if (r.ec != std::errc() || r.ptr != end) throw Error("io", what + ": not a number '" + std::string(s) + "'");
  return x;
}

namespace detail {

template <class T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw Error("io", where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error("io", where + ": field '" + key + "': " + e.what());
  }
}

template <class T>
T field_or(const Json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(sep, pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::vector<std::string_view> lines(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto l : split(text, '\n')) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph

inline Json to_json(const TransitionGraph& g) {
  Json steps = Json::array();
  for (const auto& s : g.steps) {
    Json j{{"id", s.id}, {"name", s.name}, {"mean_duration_s", s.mean_duration}, {"std_duration_s", s.std_duration}};
    j["f1"] = s.detectability_f1 ? Json(*s.detectability_f1) : Json(nullptr);
    steps.push_back(std::move(j));
  }
  auto edges = g.edges;
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return std::tie(a.from, a.to) < std::tie(b.from, b.to); });
  Json ej = Json::array();
  for (const auto& e : edges) ej.push_back({{"from", e.from}, {"to", e.to}, {"prob", e.prob}});
  Json init = Json::array();
  for (const auto& [s, p] : g.initial) init.push_back({{"step", s}, {"prob", p}});
  return Json{{"steps", steps}, {"edges", ej}, {"initial", init}, {"terminals", g.terminals}};
}

inline TransitionGraph graph_from_json(const Json& j, const std::string& where = "graph") {
  TransitionGraph g;
  for (const auto& s : detail::field<Json>(j, "steps", where)) {
    StepDef d;
    d.id = detail::field<StepId>(s, "id", where + ".steps");
    d.name = detail::field_or<std::string>(s, "name", "s" + std::to_string(d.id));
    d.mean_duration = detail::field<double>(s, "mean_duration_s", where + ".steps");
    d.std_duration = detail::field_or<double>(s, "std_duration_s", 0.0);
    if (s.contains("f1") && !s.at("f1").is_null()) d.detectability_f1 = s.at("f1").get<double>();
    g.steps.push_back(std::move(d));
  }
  std::sort(g.steps.begin(), g.steps.end(), [](const StepDef& a, const StepDef& b) { return a.id < b.id; });
  for (const auto& e : detail::field<Json>(j, "edges", where))
    g.edges.push_back({detail::field<StepId>(e, "from", where + ".edges"), detail::field<StepId>(e, "to", where + ".edges"),
                       detail::field<double>(e, "prob", where + ".edges")});
  for (const auto& i : detail::field<Json>(j, "initial", where))
    g.initial[detail::field<StepId>(i, "step", where + ".initial")] = detail::field<double>(i, "prob", where + ".initial");
  for (const auto& t : detail::field<Json>(j, "terminals", where)) g.terminals.insert(t.get<StepId>());
  return g;
}

// Loads and validates; any rule violation is an error.
inline TransitionGraph load_graph(const std::filesystem::path& path) {
  auto g = graph_from_json(read_json(path), path.string());
  const auto v = validate_graph(g);
  if (!v.empty()) throw Error("graph", path.string() + ": " + v.front().rule + " violation at " + v.front().subject + ": " + v.front().detail);
  return g;
}

inline std::string canonical_graph(const TransitionGraph& g) { return to_json(g).dump(); }

// Identity of a graph for the wire protocol: sha256 of the canonical dump.
inline std::string graph_hash(const TransitionGraph& g) { return sha256_hex(canonical_graph(g)); }

// ---------------------------------------------------------------------------
// Session logs

inline Json to_json(const SessionLog& s) {
  Json ann = Json::array();
  for (const auto& a : s.annotations) ann.push_back({{"step", a.step}, {"start_s", a.start}, {"end_s", a.end}});
  return Json{{"id", s.id}, {"annotations", ann}, {"skipped", s.skipped}};
}

inline SessionLog session_from_json(const Json& j, const std::string& where = "session") {
  SessionLog s;
  s.id = detail::field<std::string>(j, "id", where);
  for (const auto& a : detail::field<Json>(j, "annotations", where))
    s.annotations.push_back({detail::field<StepId>(a, "step", where), detail::field<double>(a, "start_s", where),
                             detail::field<double>(a, "end_s", where)});
  s.skipped = detail::field_or<std::vector<StepId>>(j, "skipped", {});
  validate_session(s);
  return s;
}

inline SessionLog load_session(const std::filesystem::path& path) {
  return session_from_json(read_json(path), path.string());
}

// ---------------------------------------------------------------------------
// Frame streams: header "t,p1,...,pN[,p_bg]", one frame per row.

inline std::string frames_to_csv(const std::vector<FrameObservation>& frames, std::size_t n_steps) {
  std::string out = "t";
  const std::size_t cols = frames.empty() ? n_steps : frames.front().probs.size();
  for (std::size_t j = 0; j < cols; ++j) out += j < n_steps ? ",p" + std::to_string(j + 1) : std::string(",p_bg");
  out += '\n';
  for (const auto& f : frames) {
    if (f.probs.size() != cols) throw Error("io", "frame stream has inconsistent column counts");
    out += format_double(f.t);
    for (double p : f.probs) {
      out += ',';
      out += format_double(p);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<FrameObservation> frames_from_csv(std::string_view text, const std::string& where = "frames") {
  const auto rows = detail::lines(text);
  if (rows.empty()) throw Error("io", where + ": missing header");
  const auto header = detail::split(rows.front(), ',');
  if (header.empty() || header.front() != "t") throw Error("io", where + ": header must start with 't'");
  const auto cols = header.size() - 1;
  std::vector<FrameObservation> frames;
  frames.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto cells = detail::split(rows[r], ',');
    if (cells.size() != cols + 1) throw Error("io", where + ": row " + std::to_string(r) + " has wrong column count");
    FrameObservation f;
    f.t = parse_double(cells[0], where);
    f.probs.reserve(cols);
    for (std::size_t j = 1; j < cells.size(); ++j) f.probs.push_back(parse_double(cells[j], where));
    frames.push_back(std::move(f));
  }
  return frames;
}

inline std::vector<FrameObservation> load_frames(const std::filesystem::path& path) {
  return frames_from_csv(read_text(path), path.string());
}

// ---------------------------------------------------------------------------
// Intervention specs

inline Json to_json(const InterventionSpec& s) {
  return Json{{"target", s.target}, {"kind", to_string(s.kind)}, {"k_minus_s", s.k_minus},
              {"k_plus_s", s.k_plus}, {"h", s.h}, {"label", s.label}};
}

inline Json specs_to_json(const std::vector<InterventionSpec>& specs) {
  Json arr = Json::array();
  for (const auto& s : specs) arr.push_back(to_json(s));
  return Json{{"specs", arr}};
}

inline std::vector<InterventionSpec> specs_from_json(const Json& j, const std::string& where = "specs") {
  std::vector<InterventionSpec> out;
  for (const auto& s : detail::field<Json>(j, "specs", where)) {
    InterventionSpec spec;
    spec.target = detail::field<StepId>(s, "target", where);
    try {
      spec.kind = parse_intervention_kind(detail::field<std::string>(s, "kind", where));
    } catch (const Error& e) {
      throw Error("io", where + ": " + e.what());
    }
    spec.k_minus = detail::field_or<double>(s, "k_minus_s", 15.0);
    spec.k_plus = detail::field_or<double>(s, "k_plus_s", 15.0);
    spec.h = detail::field_or<double>(s, "h", 3.0);
    spec.label = detail::field_or<std::string>(s, "label", "");
    spec.validate();
    out.push_back(std::move(spec));
  }
  return out;
}

inline std::vector<InterventionSpec> load_specs(const std::filesystem::path& path) {
  return specs_from_json(read_json(path), path.string());
}

// ---------------------------------------------------------------------------
// Scenario: graph fields plus a confusion block. The confusion block is
// either a full matrix ("confusion") or per-step diagonal accuracies
// ("accuracy"), off-diagonal mass spread evenly.

inline Json to_json(const Scenario& sc) {
  Json j = to_json(sc.graph);
  j["confusion"] = sc.confusion;
  Json skip = Json::array();
  for (const auto& [s, p] : sc.skip) skip.push_back({{"step", s}, {"prob", p}});
  j["skip"] = skip;
  j["duration_jitter"] = sc.duration_jitter;
  j["kappa"] = std::isfinite(sc.kappa) ? Json(sc.kappa) : Json("inf");
  j["peak"] = sc.peak;
  j["seed"] = sc.seed;
  j["frame_length_s"] = sc.frame_length;
  j["max_session_length_s"] = sc.max_session_length;
  j["tail_if_terminal_skipped_s"] = sc.tail_if_terminal_skipped;
  return j;
}

inline Scenario scenario_from_json(const Json& j, const std::string& where = "scenario") {
  Scenario sc;
  sc.graph = graph_from_json(j, where);
  if (j.contains("confusion")) {
    sc.confusion = j.at("confusion").get<Matrix>();
  } else if (j.contains("accuracy")) {
    sc.confusion = confusion_from_accuracy(j.at("accuracy").get<std::vector<double>>());
  } else {
    throw Error("io", where + ": needs a 'confusion' matrix or an 'accuracy' list");
  }
  if (j.contains("skip"))
    for (const auto& s : j.at("skip"))
      sc.skip[detail::field<StepId>(s, "step", where + ".skip")] = detail::field<double>(s, "prob", where + ".skip");
  sc.duration_jitter = detail::field_or<double>(j, "duration_jitter", 1.0);
  if (j.contains("kappa") && j.at("kappa").is_string()) {
    if (j.at("kappa").get<std::string>() != "inf") throw Error("io", where + ": kappa must be a number or \"inf\"");
    sc.kappa = std::numeric_limits<double>::infinity();
  } else {
    sc.kappa = detail::field_or<double>(j, "kappa", 50.0);
  }
  sc.peak = detail::field_or<double>(j, "peak", 0.5);
  sc.seed = detail::field_or<std::uint64_t>(j, "seed", 0);
  sc.frame_length = detail::field_or<double>(j, "frame_length_s", 0.2);
  sc.max_session_length = detail::field_or<double>(j, "max_session_length_s", 3600.0);
  sc.tail_if_terminal_skipped = detail::field_or<double>(j, "tail_if_terminal_skipped_s", 0.0);
  sc.validate();
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_json(path), path.string());
}

// ---------------------------------------------------------------------------
// Event and tick logs

inline Json to_json(const InterventionEvent& e) {
  Json j{{"t", e.t}, {"target", e.target}, {"kind", to_string(e.kind)}, {"message", e.message}};
  if (e.disposition) j["disposition"] = to_string(*e.disposition);
  return j;
}

inline InterventionEvent event_from_json(const Json& j, const std::string& where = "event") {
  InterventionEvent e;
  e.t = detail::field<double>(j, "t", where);
  e.target = detail::field<StepId>(j, "target", where);
  e.kind = parse_intervention_kind(detail::field<std::string>(j, "kind", where));
  e.message = detail::field<std::string>(j, "message", where);
  return e;
}

inline std::string events_to_jsonl(const std::vector<InterventionEvent>& events) {
  std::string out;
  for (const auto& e : events) out += to_json(e).dump() + "\n";
  return out;
}

inline std::vector<InterventionEvent> events_from_jsonl(std::string_view text, const std::string& where = "events") {
  std::vector<InterventionEvent> out;
  for (auto line : detail::lines(text)) out.push_back(event_from_json(parse_json(line, where), where));
  return out;
}

// One row per (tick, target): t,target,expectation_s,entropy,entropy_smoothed,reachable_mass,phase
inline std::string ticks_to_csv(const std::vector<TickRecord>& ticks) {
  std::string out = "t,target,expectation_s,entropy,entropy_smoothed,reachable_mass,phase\n";
  for (const auto& tick : ticks)
    for (const auto& x : tick.targets) {
      out += format_double(tick.t) + "," + std::to_string(x.target) + ",";
      out += x.expectation ? format_double(*x.expectation) : std::string("nan");
      out += "," + format_double(x.entropy) + "," + format_double(x.entropy_smoothed) + "," +
             format_double(x.reachable_mass) + "," + to_string(x.phase) + "\n";
    }
  return out;
}

}  // namespace stepwise
