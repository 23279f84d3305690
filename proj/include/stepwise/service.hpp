#pragma once

// Streaming service. One TCP connection carries one session as
// newline-delimited JSON records (each at most 64 KiB).
//
//   client -> server   {"kind":"hello","session":ID,"graph_hash":H[,"ticks":bool][,"specs":[...]]}
//                      {"kind":"frame","session":ID,"t":T,"probs":[...]}
//                      {"kind":"bye","session":ID}
//   server -> client   {"kind":"hello","session":ID,"graph_hash":H,"preset":P,"specs":[...]}
//                      {"kind":"event","session":ID,"t":T,"target":S,"intervention":K,"message":M}
//                      {"kind":"tick","session":ID,"t":T,"targets":[...]}
//                      {"kind":"error","session":ID,"code":C,"message":M}
//                      {"kind":"bye","session":ID,"frames":N,"events":N,"proc_p99_s":X,"proc_max_s":X}
//
// Error codes: bad-message, graph-mismatch, bad-frame, message-too-large.
// Frames may skip timestamps (sensors pause while an intervention plays);
// the gap is bridged by prediction. A reconnect is a new session.

#include <boost/asio.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <iostream>
#include <list>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "stepwise/engine.hpp"
#include "stepwise/error.hpp"
#include "stepwise/io.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/tracker.hpp"

namespace stepwise {

inline constexpr std::size_t kMaxMessageBytes = 64 * 1024;

// ---------------------------------------------------------------------------
// Wire records

inline Json hello_message(const std::string& session, const std::string& graph_hash, bool ticks,
                          const std::optional<std::vector<InterventionSpec>>& specs = std::nullopt) {
  Json j{{"kind", "hello"}, {"session", session}, {"graph_hash", graph_hash}, {"ticks", ticks}};
  if (specs) j["specs"] = specs_to_json(*specs)["specs"];
  return j;
}

inline Json frame_message(const std::string& session, const FrameObservation& f) {
  return Json{{"kind", "frame"}, {"session", session}, {"t", f.t}, {"probs", f.probs}};
}

inline Json event_message(const std::string& session, const InterventionEvent& e) {
  return Json{{"kind", "event"},  {"session", session},          {"t", e.t},
              {"target", e.target}, {"intervention", to_string(e.kind)}, {"message", e.message}};
}

inline InterventionEvent event_from_message(const Json& j) {
  InterventionEvent e;
  e.t = detail::field<double>(j, "t", "event");
  e.target = detail::field<StepId>(j, "target", "event");
  e.kind = parse_intervention_kind(detail::field<std::string>(j, "intervention", "event"));
  e.message = detail::field<std::string>(j, "message", "event");
  return e;
}

inline Json tick_message(const std::string& session, const TickRecord& tick) {
  Json targets = Json::array();
  for (const auto& x : tick.targets)
    targets.push_back({{"target", x.target},
                       {"expectation_s", x.expectation ? Json(*x.expectation) : Json(nullptr)},
                       {"entropy", x.entropy_smoothed},
                       {"phase", to_string(x.phase)}});
  return Json{{"kind", "tick"}, {"session", session}, {"t", tick.t}, {"targets", targets}};
}

inline Json error_message(const std::string& session, const std::string& code, const std::string& message) {
  return Json{{"kind", "error"}, {"session", session}, {"code", code}, {"message", message}};
}

inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
  return xs[std::clamp<std::size_t>(rank, 1, xs.size()) - 1];
}

namespace detail {

using boost::asio::ip::tcp;

// Reads one newline-terminated record; nullopt on clean EOF. Throws
// Error("service", "message-too-large") past the size limit.
inline std::optional<std::string> read_record(tcp::socket& sock, boost::asio::streambuf& buf) {
  boost::system::error_code ec;
  const auto n = boost::asio::read_until(sock, buf, '\n', ec);
  if (ec == boost::asio::error::not_found) throw Error("service", "message-too-large");
  if (ec) {
    if (buf.size() == 0 || ec == boost::asio::error::eof || ec == boost::asio::error::connection_reset) return std::nullopt;
    throw Error("service", ec.message());
  }
  std::string line(boost::asio::buffers_begin(buf.data()), boost::asio::buffers_begin(buf.data()) + static_cast<std::ptrdiff_t>(n));
  buf.consume(n);
  line.pop_back();
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline void write_record(tcp::socket& sock, const Json& j) {
  const auto s = j.dump() + "\n";
  boost::asio::write(sock, boost::asio::buffer(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Server

struct ServerConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  TransitionGraph graph;
  std::vector<InterventionSpec> specs;
  EngineConfig engine;
  std::size_t max_sessions = 0;  // stop accepting after this many (0 = unlimited)
};

struct SessionStats {
  std::string session;
  long frames = 0;
  long events = 0;
  std::vector<double> proc_s;  // per-frame processing time
  bool completed = false;
};

class Server {
 public:
  explicit Server(ServerConfig cfg, std::ostream& log = std::cerr)
      : cfg_(std::move(cfg)), log_(log), hash_(graph_hash(cfg_.graph)), acceptor_(io_) {
    cfg_.engine.validate();
    const auto v = validate_graph(cfg_.graph);
    if (!v.empty()) throw Error("service", "invalid graph: " + v.front().rule + " at " + v.front().subject);
    SessionEngine probe(cfg_.graph, cfg_.specs, cfg_.engine);  // validates specs
    const detail::tcp::endpoint ep(boost::asio::ip::make_address(cfg_.address), cfg_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(boost::asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
  }

  ~Server() {
    stop();
    join_sessions();
  }

  unsigned short port() const noexcept { return port_; }
  const std::string& graph_hash_hex() const noexcept { return hash_; }

  // Accepts connections until stop() or max_sessions, then waits for the
  // in-flight sessions to finish.
  void run() {
    accept_next();
    io_.run();
    join_sessions();
  }

  void stop() {
    boost::asio::post(io_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
    });
  }

  std::vector<SessionStats> stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

 private:
  void log(const std::string& level, const std::string& msg, const std::string& session = "") {
    Json j{{"level", level}, {"msg", msg}};
    if (!session.empty()) j["session"] = session;
    std::lock_guard lock(log_mu_);
    log_ << j.dump() << '\n' << std::flush;
  }

  void accept_next() {
    acceptor_.async_accept([this](boost::system::error_code ec, detail::tcp::socket sock) {
      if (ec) return;  // acceptor closed
      ++accepted_;
      {
        std::lock_guard lock(threads_mu_);
        threads_.emplace_back([this, s = std::move(sock)]() mutable { handle(std::move(s)); });
      }
      if (cfg_.max_sessions && accepted_ >= cfg_.max_sessions) {
        boost::system::error_code ignore;
        acceptor_.close(ignore);
        return;
      }
      accept_next();
    });
  }

  void join_sessions() {
    std::list<std::thread> threads;
    {
      std::lock_guard lock(threads_mu_);
      threads.swap(threads_);
    }
    for (auto& t : threads)
      if (t.joinable()) t.join();
  }

  void handle(detail::tcp::socket sock) {
    boost::asio::streambuf buf(kMaxMessageBytes + 1);
    SessionStats st;
    std::string session;
    auto fail = [&](const std::string& code, const std::string& msg) {
      log("warn", code + ": " + msg, session);
      try {
        detail::write_record(sock, error_message(session, code, msg));
      } catch (...) {
      }
    };
    try {
      const auto first = detail::read_record(sock, buf);
      if (!first) return;
      Json hello;
      try {
        hello = Json::parse(*first);
      } catch (const Json::exception& e) {
        return fail("bad-message", e.what());
      }
      if (!hello.is_object() || hello.value("kind", "") != "hello" || !hello.contains("session") ||
          !hello["session"].is_string())
        return fail("bad-message", "expected hello with a session id");
      session = hello["session"].get<std::string>();
      if (hello.value("graph_hash", "") != hash_) return fail("graph-mismatch", "graph hash does not match the served graph");
      auto specs = cfg_.specs;
      if (hello.contains("specs")) {
        try {
          specs = specs_from_json(Json{{"specs", hello["specs"]}}, "hello.specs");
        } catch (const Error& e) {
          return fail("bad-message", e.what());
        }
      }
      const bool ticks = hello.value("ticks", false);
      std::optional<SessionEngine> engine;
      try {
        engine.emplace(cfg_.graph, specs, cfg_.engine);
      } catch (const Error& e) {
        return fail("bad-message", e.what());
      }
      detail::write_record(sock, Json{{"kind", "hello"},
                                      {"session", session},
                                      {"graph_hash", hash_},
                                      {"preset", cfg_.engine.preset},
                                      {"specs", specs_to_json(engine->specs())["specs"]}});
      log("info", "session opened", session);
      st.session = session;

      while (true) {
        const auto line = detail::read_record(sock, buf);
        if (!line) {
          log("warn", "client disconnected without bye; session aborted", session);
          break;
        }
        Json msg;
        try {
          msg = Json::parse(*line);
        } catch (const Json::exception& e) {
          fail("bad-message", e.what());
          break;
        }
        const auto kind = msg.is_object() ? msg.value("kind", "") : std::string();
        if (kind == "bye") {
          st.completed = true;
          detail::write_record(sock, Json{{"kind", "bye"},
                                          {"session", session},
                                          {"frames", st.frames},
                                          {"events", st.events},
                                          {"proc_p99_s", percentile(st.proc_s, 0.99)},
                                          {"proc_max_s", percentile(st.proc_s, 1.0)}});
          log("info", "session closed after " + std::to_string(st.frames) + " frames", session);
          break;
        }
        if (kind != "frame") {
          fail("bad-message", "unexpected record kind '" + kind + "'");
          break;
        }
        if (msg.value("session", "") != session) {
          fail("bad-message", "frame for a different session");
          break;
        }
        FrameObservation obs;
        SessionEngine::FrameOutput out;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          obs.t = detail::field<double>(msg, "t", "frame");
          obs.probs = detail::field<std::vector<double>>(msg, "probs", "frame");
          out = engine->push(obs);
        } catch (const Error& e) {
          fail("bad-frame", e.what());
          break;
        }
        st.proc_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        ++st.frames;
        for (const auto& e : out.events) {
          ++st.events;
          detail::write_record(sock, event_message(session, e));
        }
        if (ticks && out.tick) detail::write_record(sock, tick_message(session, *out.tick));
      }
    } catch (const Error& e) {
      if (std::string(e.what()).find("message-too-large") != std::string::npos)
        fail("message-too-large", "record exceeds " + std::to_string(kMaxMessageBytes) + " bytes");
      else
        log("warn", e.what(), session);
    } catch (const std::exception& e) {
      log("warn", e.what(), session);
    }
    boost::system::error_code ignore;
    sock.shutdown(detail::tcp::socket::shutdown_both, ignore);
    sock.close(ignore);
    std::lock_guard lock(mu_);
    stats_.push_back(std::move(st));
  }

  ServerConfig cfg_;
  std::ostream& log_;
  std::string hash_;
  boost::asio::io_context io_;
  detail::tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::size_t accepted_ = 0;
  std::mutex threads_mu_;
  std::list<std::thread> threads_;
  mutable std::mutex mu_;
  std::vector<SessionStats> stats_;
  std::mutex log_mu_;
};

// ---------------------------------------------------------------------------
// Replay client

struct ReplayOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 0;
  std::string session = "replay";
  std::string graph_hash;
  double speed = 1.0;  // 0 sends as fast as possible
  bool ticks = false;
  std::optional<std::vector<InterventionSpec>> specs;
};

struct ReplayResult {
  int status = 0;  // 0 ok, 1 server error, 2 connection failure
  std::vector<InterventionEvent> events;
  std::vector<double> received_at;  // client seconds since the first frame was sent
  std::vector<Json> ticks;
  std::optional<Json> bye;
  std::string error;
};

inline ReplayResult replay(std::span<const FrameObservation> frames, const ReplayOptions& opt) {
  using clock = std::chrono::steady_clock;
  ReplayResult res;
  boost::asio::io_context io;
  detail::tcp::socket sock(io);
  try {
    detail::tcp::resolver resolver(io);
    boost::asio::connect(sock, resolver.resolve(opt.host, std::to_string(opt.port)));
    sock.set_option(detail::tcp::no_delay(true));
  } catch (const std::exception& e) {
    res.status = 2;
    res.error = std::string("connect: ") + e.what();
    return res;
  }

  boost::asio::streambuf buf(kMaxMessageBytes + 1);
  try {
    detail::write_record(sock, hello_message(opt.session, opt.graph_hash, opt.ticks, opt.specs));
    const auto ack = detail::read_record(sock, buf);
    if (!ack) throw Error("service", "connection closed before hello ack");
    const auto j = Json::parse(*ack);
    if (j.value("kind", "") != "hello") {
      res.status = 1;
      res.error = j.value("code", "unknown") + ": " + j.value("message", "");
      return res;
    }
  } catch (const std::exception& e) {
    res.status = 2;
    res.error = e.what();
    return res;
  }

  const auto start = clock::now();
  std::mutex mu;
  std::thread reader([&] {
    try {
      while (true) {
        const auto line = detail::read_record(sock, buf);
        if (!line) {
          std::lock_guard lock(mu);
          if (!res.bye && res.status == 0) {
            res.status = 2;
            res.error = "connection closed before bye";
          }
          return;
        }
        const auto j = Json::parse(*line);
        const auto kind = j.value("kind", "");
        std::lock_guard lock(mu);
        if (kind == "event") {
          res.events.push_back(event_from_message(j));
          res.received_at.push_back(std::chrono::duration<double>(clock::now() - start).count());
        } else if (kind == "tick") {
          res.ticks.push_back(j);
        } else if (kind == "bye") {
          res.bye = j;
          return;
        } else if (kind == "error") {
          res.status = 1;
          res.error = j.value("code", "unknown") + ": " + j.value("message", "");
          return;
        }
      }
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      if (res.status == 0) {
        res.status = 2;
        res.error = e.what();
      }
    }
  });

  try {
    const double t0 = frames.empty() ? 0.0 : frames.front().t;
    for (const auto& f : frames) {
      if (opt.speed > 0.0)
        std::this_thread::sleep_until(start + std::chrono::duration_cast<clock::duration>(
                                                  std::chrono::duration<double>((f.t - t0) / opt.speed)));
      {
        std::lock_guard lock(mu);
        if (res.status != 0) break;
      }
      detail::write_record(sock, frame_message(opt.session, f));
    }
    detail::write_record(sock, Json{{"kind", "bye"}, {"session", opt.session}});
  } catch (const std::exception& e) {
    std::lock_guard lock(mu);
    if (res.status == 0) {
      res.status = 2;
      res.error = std::string("send: ") + e.what();
    }
    boost::system::error_code ignore;
    sock.shutdown(detail::tcp::socket::shutdown_both, ignore);
  }
  reader.join();
  boost::system::error_code ignore;
  sock.close(ignore);
  return res;
}

}  // namespace stepwise
