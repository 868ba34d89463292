#pragma once

#include "bowtrace/feedback.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace bowtrace::feedback {

/// One client's view of the event stream.
class Subscription {
public:
  /// Next serialized line, or nullopt on timeout or once closed and drained.
  std::optional<std::string> next(std::chrono::milliseconds timeout);
  bool closed() const;

private:
  friend class EventHub;
  void push(std::string line);
  void close();

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
};

/// Fans events out to any number of read-only clients. A new client first
/// receives hello and a snapshot of the current feedback state, then every
/// event published after it joined. Thread-safe.
class EventHub {
public:
  explicit EventHub(std::size_t max_queue = 100000);
  ~EventHub();

  void publish(const Event& e);
  std::shared_ptr<Subscription> subscribe();
  void unsubscribe(const std::shared_ptr<Subscription>& s);
  void close();
  std::size_t clients() const;
  Event snapshot() const;

private:
  void track(const Event& e);

  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Subscription>> subs_;
  std::size_t max_queue_;
  std::optional<double> pressure_;
  bool pressure_ok_ = false;
  std::size_t trips_ = 0;
  Event last_trip_ = nullptr;
  analytics::Thresholds thresholds_;
  bool closed_ = false;
};

/// Where a served session takes its samples from. `open` is called on each
/// start-session; the returned source may block and must return nullopt once
/// `stop` is set.
struct SessionSource {
  TraceHeader header;
  std::function<SampleSource(const std::atomic<bool>& stop)> open;
};

/// Replays a recording paced at speed x real time (0: unpaced).
SessionSource replay_source(Trace trace, double speed);

/// Session control behind the command channel. Commands are JSON objects
/// with a "command" field: start-session, stop-session, set-thresholds
/// (optional "floor" and "ceiling"). Each returns a reply object; malformed
/// commands get an error reply.
class FeedbackService {
public:
  FeedbackService(EngineConfig config, SessionSource source);
  ~FeedbackService();

  EventHub& hub() noexcept { return hub_; }
  Event handle_command(std::string_view body);
  /// False when a session is already running.
  bool start_session();
  void stop_session();
  void set_thresholds(const analytics::Thresholds& t);
  bool running() const;
  /// Blocks until the current session ends by itself or is stopped.
  void wait();
  std::optional<SessionSummary> last_summary() const;

private:
  void run();

  EngineConfig config_;
  SessionSource source_;
  EventHub hub_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::unique_ptr<SessionEngine> engine_;
  std::optional<SessionSummary> summary_;
  std::thread worker_;
  std::atomic<bool> stop_{false};
  bool running_ = false;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8765;
};

/// Default port, overridable with BOWTRACE_PORT.
int default_port();

/// HTTP front end: GET /events streams newline-delimited JSON, POST /command
/// runs a command, GET / answers with hello. Blocks until stop().
class HttpServer {
public:
  HttpServer(FeedbackService& service, ServerConfig config);
  ~HttpServer();

  /// Binds and serves on a background thread. Throws IoError when the
  /// address cannot be bound. Returns the bound port.
  int start();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bowtrace::feedback
