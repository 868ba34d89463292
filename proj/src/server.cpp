#include "bowtrace/server.hpp"

#include "bowtrace/errors.hpp"

#include <httplib.h>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>

namespace bowtrace::feedback {

std::optional<std::string> Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  std::string line = std::move(queue_.front());
  queue_.pop_front();
  return line;
}

bool Subscription::closed() const {
  std::lock_guard lock(mu_);
  return closed_ && queue_.empty();
}

void Subscription::push(std::string line) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(line));
  }
  cv_.notify_one();
}

void Subscription::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

EventHub::EventHub(std::size_t max_queue) : max_queue_(max_queue) {}

EventHub::~EventHub() { close(); }

void EventHub::track(const Event& e) {
  const auto kind = e.value("kind", std::string{});
  if (kind == "pressure-tick") {
    pressure_ = e["pressure"].get<double>();
    pressure_ok_ = e["ok"].get<bool>();
  } else if (kind == "trip-complete") {
    ++trips_;
    last_trip_ = e;
    last_trip_.erase("kind");
    last_trip_.erase(kWallClockField);
  } else if (kind == "session-mark") {
    const auto& t = e["thresholds"];
    thresholds_.pressure_floor = t["floor"].get<double>();
    thresholds_.diff_ceiling = t["ceiling"].get<double>();
    if (e["mark"] == "start") {
      pressure_.reset();
      pressure_ok_ = false;
      trips_ = 0;
      last_trip_ = nullptr;
    }
  }
}

void EventHub::publish(const Event& e) {
  const std::string line = transcript_line(e);
  std::lock_guard lock(mu_);
  track(e);
  for (const auto& s : subs_) {
    std::lock_guard sub_lock(s->mu_);
    if (s->queue_.size() >= max_queue_) {
      s->queue_.pop_front();
      ++s->dropped_;
    }
    s->queue_.push_back(line);
    s->cv_.notify_one();
  }
}

std::shared_ptr<Subscription> EventHub::subscribe() {
  auto s = std::make_shared<Subscription>();
  std::lock_guard lock(mu_);
  s->push(transcript_line(hello_event()));
  s->push(transcript_line(snapshot_event(pressure_, pressure_ok_, trips_, last_trip_, thresholds_)));
  if (closed_) s->close();
  else subs_.push_back(s);
  return s;
}

void EventHub::unsubscribe(const std::shared_ptr<Subscription>& s) {
  std::lock_guard lock(mu_);
  subs_.erase(std::remove(subs_.begin(), subs_.end(), s), subs_.end());
}

void EventHub::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
  for (const auto& s : subs_) s->close();
  subs_.clear();
}

std::size_t EventHub::clients() const {
  std::lock_guard lock(mu_);
  return subs_.size();
}

Event EventHub::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_event(pressure_, pressure_ok_, trips_, last_trip_, thresholds_);
}

SessionSource replay_source(Trace trace, double speed) {
  if (speed < 0.0) throw InvariantError("replay speed must be >= 0");
  SessionSource src;
  src.header = trace.header();
  auto shared = std::make_shared<const Trace>(std::move(trace));
  src.open = [shared, speed](const std::atomic<bool>& stop) -> SampleSource {
    using clock = std::chrono::steady_clock;
    auto next = std::make_shared<std::size_t>(0);
    const auto start = clock::now();
    return [shared, speed, &stop, next, start]() -> std::optional<SourceItem> {
      if (*next >= shared->size()) return std::nullopt;
      const Sample& s = (*shared)[*next];
      if (speed > 0.0) {
        const auto due = start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(s.t / speed));
        while (clock::now() < due) {
          if (stop) return std::nullopt;
          std::this_thread::sleep_until(std::min(due, clock::now() + std::chrono::milliseconds(20)));
        }
      }
      if (stop) return std::nullopt;
      ++*next;
      return SourceItem{s};
    };
  };
  return src;
}

FeedbackService::FeedbackService(EngineConfig config, SessionSource source)
    : config_(std::move(config)), source_(std::move(source)) {
  config_.thresholds.validate();
  if (!source_.open) throw InvariantError("session source has no opener");
  hub_.publish(mark_event("idle", config_.thresholds));
}

FeedbackService::~FeedbackService() {
  stop_session();
  hub_.close();
}

bool FeedbackService::start_session() {
  std::unique_lock lock(mu_);
  if (running_) return false;
  if (worker_.joinable()) {
    lock.unlock();
    worker_.join();
    lock.lock();
  }
  stop_ = false;
  running_ = true;
  engine_ = std::make_unique<SessionEngine>(config_, [this](const Event& e) { hub_.publish(e); });
  engine_->begin(source_.header);
  worker_ = std::thread([this] { run(); });
  return true;
}

void FeedbackService::run() {
  const SampleSource src = source_.open(stop_);
  bool partial = false;
  while (true) {
    std::optional<SourceItem> item;
    try {
      item = src();
    } catch (const Error& e) {
      std::lock_guard lock(mu_);
      engine_->on_fault({0, 0.0, "source", e.what()});
      partial = true;
      break;
    }
    if (!item) break;
    std::lock_guard lock(mu_);
    if (const auto* s = std::get_if<Sample>(&*item)) engine_->on_sample(*s);
    else engine_->on_fault(std::get<ingestion::StreamFault>(*item));
  }
  std::lock_guard lock(mu_);
  summary_ = engine_->finish(partial || stop_);
  running_ = false;
  cv_.notify_all();
}

void FeedbackService::stop_session() {
  stop_ = true;
  if (worker_.joinable() && worker_.get_id() != std::this_thread::get_id()) worker_.join();
}

void FeedbackService::wait() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return !running_; });
}

bool FeedbackService::running() const {
  std::lock_guard lock(mu_);
  return running_;
}

std::optional<SessionSummary> FeedbackService::last_summary() const {
  std::lock_guard lock(mu_);
  return summary_;
}

void FeedbackService::set_thresholds(const analytics::Thresholds& t) {
  t.validate();
  std::lock_guard lock(mu_);
  config_.thresholds = t;
  if (engine_ && engine_->active()) engine_->set_thresholds(t);
  else hub_.publish(mark_event("thresholds", t));
}

Event FeedbackService::handle_command(std::string_view body) {
  nlohmann::json cmd;
  try {
    cmd = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    return error_event("malformed command: not valid JSON");
  }
  if (!cmd.is_object() || !cmd.contains("command") || !cmd["command"].is_string())
    return error_event("malformed command: missing \"command\"");
  const auto name = cmd["command"].get<std::string>();
  Event reply;
  reply["kind"] = "reply";
  reply["command"] = name;
  if (name == "start-session") {
    reply["ok"] = start_session();
    if (!reply["ok"].get<bool>()) reply["message"] = "session already running";
  } else if (name == "stop-session") {
    const bool was_running = running();
    stop_session();
    reply["ok"] = was_running;
    if (!was_running) reply["message"] = "no session running";
  } else if (name == "set-thresholds") {
    analytics::Thresholds t;
    {
      std::lock_guard lock(mu_);
      t = config_.thresholds;
    }
    for (const auto* key : {"floor", "ceiling"}) {
      if (!cmd.contains(key)) continue;
      if (!cmd[key].is_number()) return error_event(fmt::format("malformed command: \"{}\" must be a number", key));
      (std::string_view(key) == "floor" ? t.pressure_floor : t.diff_ceiling) = cmd[key].get<double>();
    }
    try {
      set_thresholds(t);
    } catch (const InvariantError& e) {
      return error_event(fmt::format("malformed command: {}", e.what()));
    }
    reply["ok"] = true;
  } else {
    return error_event(fmt::format("unknown command '{}'", name));
  }
  return reply;
}

int default_port() {
  if (const char* env = std::getenv("BOWTRACE_PORT")) {
    int port = 0;
    const std::string_view v(env);
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), port);
    if (ec == std::errc{} && ptr == v.data() + v.size() && port > 0 && port < 65536) return port;
  }
  return 8765;
}

struct HttpServer::Impl {
  Impl(FeedbackService& s, ServerConfig c) : service(s), config(std::move(c)) {}
  FeedbackService& service;
  ServerConfig config;
  httplib::Server server;
  std::thread thread;
};

HttpServer::HttpServer(FeedbackService& service, ServerConfig config)
    : impl_(std::make_unique<Impl>(service, std::move(config))) {
  auto& svr = impl_->server;
  auto& svc = impl_->service;
  // No SO_REUSEPORT: a second server on a taken port must fail to bind.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  svr.Get("/", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(transcript_line(hello_event()) + "\n", "application/x-ndjson");
  });
  svr.Get("/events", [&svc](const httplib::Request&, httplib::Response& res) {
    auto sub = svc.hub().subscribe();
    res.set_chunked_content_provider(
        "application/x-ndjson",
        [sub](std::size_t, httplib::DataSink& sink) {
          if (auto line = sub->next(std::chrono::milliseconds(200))) {
            *line += '\n';
            return sink.write(line->data(), line->size());
          }
          if (sub->closed()) {
            sink.done();
            return true;
          }
          return sink.is_writable();
        },
        [&svc, sub](bool) { svc.hub().unsubscribe(sub); });
  });
  svr.Post("/command", [&svc](const httplib::Request& req, httplib::Response& res) {
    const Event reply = svc.handle_command(req.body);
    res.status = reply["kind"] == "error" ? 400 : 200;
    res.set_content(transcript_line(reply) + "\n", "application/json");
  });
  svr.Options("/command", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "POST");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
  auto& svr = impl_->server;
  int port = impl_->config.port;
  if (port == 0) {
    port = svr.bind_to_any_port(impl_->config.host);
    if (port < 0) throw IoError(fmt::format("cannot bind {}", impl_->config.host), 0);
  } else if (!svr.bind_to_port(impl_->config.host, port)) {
    throw IoError(fmt::format("cannot bind {}:{}", impl_->config.host, port), 0);
  }
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return port;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->service.hub().close();
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace bowtrace::feedback
