// ============================================================================
// service_test.cpp
//
// Event hub, command channel, HTTP front end and live UDP input.
// ============================================================================

#include "helpers.hpp"

#include "bowtrace/errors.hpp"
#include "bowtrace/live.hpp"
#include "bowtrace/server.hpp"
#include "bowtrace/synth.hpp"

#include <doctest.h>
#include <httplib.h>

#include <cstdlib>
#include <thread>

using namespace bowtrace;
using namespace bowtrace::feedback;
using namespace std::chrono_literals;

namespace {

nlohmann::json parse(const std::string& line) { return nlohmann::json::parse(line); }

/// Drains a subscription until `pred` accepts a line or the timeout expires.
std::vector<std::string> drain_until(Subscription& sub, const std::function<bool(const nlohmann::json&)>& pred,
                                     std::chrono::milliseconds timeout = 10s) {
  std::vector<std::string> out;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    auto line = sub.next(100ms);
    if (!line) {
      if (sub.closed()) break;
      continue;
    }
    out.push_back(*line);
    if (pred(parse(*line))) break;
  }
  return out;
}

bool is_stop(const nlohmann::json& e) { return e["kind"] == "session-mark" && e["mark"] == "stop"; }

Trace short_trace(double seconds) {
  synth::TraceSpec spec;
  spec.duration = seconds;
  return synth::generate_trace(synth::expert_profile(), spec);
}

}  // namespace

TEST_SUITE("service") {

// ---------------------------------------------------------------------------
// EventHub
// ---------------------------------------------------------------------------

TEST_CASE("late joiner gets hello and the current state first") {
  EventHub hub;
  hub.publish(mark_event("start", {}));
  hub.publish(tick_event(0.1, 0.42, false));
  auto sub = hub.subscribe();
  const auto hello = parse(*sub->next(0ms));
  CHECK(hello["kind"] == "hello");
  const auto snap = parse(*sub->next(0ms));
  CHECK(snap["kind"] == "snapshot");
  CHECK(snap["state"] == "no-data");
  CHECK(snap["pressure"] == 0.42);
  CHECK(snap["ok"] == false);
  CHECK_FALSE(sub->next(0ms).has_value());
  hub.publish(tick_event(0.2, 0.6, true));
  CHECK(parse(*sub->next(0ms))["pressure"] == 0.6);
  CHECK(hub.clients() == 1);
  hub.unsubscribe(sub);
  CHECK(hub.clients() == 0);
}

TEST_CASE("snapshot carries the last trip and resets on start") {
  EventHub hub;
  analytics::TripMetrics trip;
  trip.trip_index = 4;
  trip.diff = 0.1;
  hub.publish(trip_event(trip, {}));
  auto snap = hub.snapshot();
  CHECK(snap["state"] == "live");
  CHECK(snap["trips"] == 1);
  CHECK(snap["last_trip"]["index"] == 4);
  CHECK_FALSE(snap["last_trip"].contains("kind"));
  hub.publish(mark_event("start", {0.7, 0.2}));
  snap = hub.snapshot();
  CHECK(snap["state"] == "no-data");
  CHECK(snap["thresholds"]["floor"] == 0.7);
}

TEST_CASE("clients see identical sequences") {
  EventHub hub;
  auto a = hub.subscribe();
  auto b = hub.subscribe();
  std::thread producer([&] {
    for (int i = 0; i < 500; ++i) hub.publish(tick_event(i / 60.0, 0.5 + (i % 7) * 0.06, i % 3 != 0));
    hub.close();
  });
  std::vector<std::string> la, lb;
  while (auto l = a->next(2s)) la.push_back(*l);
  while (auto l = b->next(2s)) lb.push_back(*l);
  producer.join();
  CHECK(la.size() == 502);
  CHECK(la == lb);
  CHECK(a->closed());
}

TEST_CASE("a slow client drops its oldest lines") {
  EventHub hub(10);
  auto sub = hub.subscribe();
  for (int i = 0; i < 50; ++i) hub.publish(tick_event(i, 0.5, true));
  std::vector<std::string> lines;
  while (auto l = sub->next(0ms)) lines.push_back(*l);
  REQUIRE(lines.size() == 10);
  CHECK(parse(lines.back())["t"] == 49);
}

// ---------------------------------------------------------------------------
// FeedbackService
// ---------------------------------------------------------------------------

TEST_CASE("service runs a replayed session to completion") {
  const auto trace = short_trace(8.0);
  FeedbackService service({}, replay_source(trace, 0.0));
  auto sub = service.hub().subscribe();
  const auto reply = service.handle_command(R"({"command":"start-session"})");
  CHECK(reply["kind"] == "reply");
  CHECK(reply["command"] == "start-session");
  CHECK(reply["ok"] == true);
  service.wait();
  const auto lines = drain_until(*sub, is_stop);
  REQUIRE(lines.size() >= 2);
  CHECK(parse(lines[0])["kind"] == "hello");
  CHECK(parse(lines[1])["kind"] == "snapshot");

  // The session section of the stream equals a standalone replay transcript.
  std::vector<std::string> session(lines.begin() + 2, lines.end());
  while (!session.empty() && parse(session.front())["mark"] != "start") session.erase(session.begin());
  auto expected = replay_transcript(trace);
  expected.erase(expected.begin());
  CHECK(session == expected);

  const auto summary = service.last_summary();
  REQUIRE(summary);
  CHECK(summary->samples == trace.size());
  CHECK_FALSE(summary->partial);
  CHECK_FALSE(service.running());
}

TEST_CASE("stop-session ends a paced session early") {
  FeedbackService service({}, replay_source(short_trace(25.0), 1.0));
  CHECK(service.handle_command(R"({"command":"stop-session"})")["ok"] == false);
  CHECK(service.start_session());
  CHECK_FALSE(service.start_session());
  CHECK(service.handle_command(R"({"command":"start-session"})")["ok"] == false);
  std::this_thread::sleep_for(200ms);
  CHECK(service.handle_command(R"({"command":"stop-session"})")["ok"] == true);
  const auto summary = service.last_summary();
  REQUIRE(summary);
  CHECK(summary->partial);
  CHECK(summary->samples < 1500);
  CHECK(service.start_session());
  service.stop_session();
}

TEST_CASE("set-thresholds command") {
  FeedbackService service({}, replay_source(short_trace(2.0), 0.0));
  auto sub = service.hub().subscribe();
  const auto reply = service.handle_command(R"({"command":"set-thresholds","floor":0.62})");
  CHECK(reply["ok"] == true);
  const auto lines = drain_until(*sub, [](const nlohmann::json& e) { return e["mark"] == "thresholds"; }, 1s);
  REQUIRE_FALSE(lines.empty());
  const auto mark = parse(lines.back());
  CHECK(mark["thresholds"]["floor"] == 0.62);
  CHECK(mark["thresholds"]["ceiling"] == 0.17);
  CHECK(service.hub().snapshot()["thresholds"]["floor"] == 0.62);
}

TEST_CASE("malformed and unknown commands") {
  FeedbackService service({}, replay_source(short_trace(2.0), 0.0));
  auto message = [&](std::string_view body) {
    const auto e = service.handle_command(body);
    CHECK(e["kind"] == "error");
    return e["message"].get<std::string>();
  };
  CHECK(message("{not json").rfind("malformed command", 0) == 0);
  CHECK(message(R"({"cmd":"start-session"})").rfind("malformed command", 0) == 0);
  CHECK(message(R"([1,2])").rfind("malformed command", 0) == 0);
  CHECK(message(R"({"command":"set-thresholds","floor":"high"})").rfind("malformed command", 0) == 0);
  CHECK(message(R"({"command":"set-thresholds","floor":-3})").rfind("malformed command", 0) == 0);
  CHECK(message(R"({"command":"dance"})") == "unknown command 'dance'");
  CHECK_FALSE(service.running());
}

TEST_CASE("an idle service reports no data") {
  FeedbackService service({}, replay_source(short_trace(2.0), 0.0));
  auto sub = service.hub().subscribe();
  sub->next(0ms);
  CHECK(parse(*sub->next(0ms))["state"] == "no-data");
  CHECK_THROWS_AS(FeedbackService({}, SessionSource{}), InvariantError);
}

TEST_CASE("default port honours the environment") {
  ::unsetenv("BOWTRACE_PORT");
  CHECK(default_port() == 8765);
  ::setenv("BOWTRACE_PORT", "9123", 1);
  CHECK(default_port() == 9123);
  ::setenv("BOWTRACE_PORT", "nonsense", 1);
  CHECK(default_port() == 8765);
  ::unsetenv("BOWTRACE_PORT");
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

TEST_CASE("http front end") {
  const auto trace = short_trace(6.0);
  FeedbackService service({}, replay_source(trace, 0.0));
  HttpServer server(service, {"127.0.0.1", 0});
  const int port = server.start();
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(10, 0);

  const auto root = client.Get("/");
  REQUIRE(root);
  CHECK(root->status == 200);
  CHECK(parse(root->body)["kind"] == "hello");
  CHECK(root->get_header_value("Access-Control-Allow-Origin") == "*");

  const auto bad = client.Post("/command", "{oops", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(parse(bad->body)["kind"] == "error");

  const auto opts = client.Options("/command");
  REQUIRE(opts);
  CHECK(opts->get_header_value("Access-Control-Allow-Methods") == "POST");

  // Stream /events on a second connection while a session runs.
  std::vector<std::string> streamed;
  std::string buffer;
  std::thread reader([&] {
    httplib::Client events("127.0.0.1", port);
    events.set_read_timeout(10, 0);
    events.Get("/events", [&](const char* data, std::size_t len) {
      buffer.append(data, len);
      for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n')) {
        streamed.push_back(buffer.substr(0, nl));
        buffer.erase(0, nl + 1);
        if (is_stop(parse(streamed.back()))) return false;
      }
      return true;
    });
  });
  const auto deadline = std::chrono::steady_clock::now() + 5s;
  while (service.hub().clients() == 0 && std::chrono::steady_clock::now() < deadline) std::this_thread::sleep_for(5ms);
  REQUIRE(service.hub().clients() == 1);

  const auto ok = client.Post("/command", R"({"command":"start-session"})", "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(parse(ok->body)["ok"] == true);
  service.wait();
  reader.join();

  REQUIRE(streamed.size() > trace.size());
  CHECK(parse(streamed[0])["kind"] == "hello");
  CHECK(parse(streamed[1])["kind"] == "snapshot");
  CHECK(is_stop(parse(streamed.back())));
  std::size_t ticks = 0;
  for (const auto& l : streamed) ticks += parse(l)["kind"] == "pressure-tick";
  CHECK(ticks == trace.size());
  server.stop();
}

TEST_CASE("binding a taken port fails") {
  FeedbackService service({}, replay_source(short_trace(2.0), 0.0));
  HttpServer first(service, {"127.0.0.1", 0});
  const int port = first.start();
  HttpServer second(service, {"127.0.0.1", port});
  CHECK_THROWS_AS(second.start(), IoError);
}

// ---------------------------------------------------------------------------
// Live input
// ---------------------------------------------------------------------------

TEST_CASE("udp pressure stream feeds a live session") {
  ingestion::FuseConfig fc;
  fc.calibration_factor = 0.01;
  live::LiveFusion fusion(fc);
  live::UdpLineListener pressure(0, [&](std::string_view l) {
    if (!l.empty()) fusion.push_pressure_line(l);
  });
  REQUIRE(pressure.port() > 0);

  FeedbackService service({}, fusion.source(testing::header()));
  auto sub = service.hub().subscribe();
  REQUIRE(service.start_session());
  for (std::uint32_t seq = 0; seq < 30; ++seq) {
    live::send_udp(pressure.port(), ingestion::format_pressure_line({seq, 60.0}) + "\n");
    std::this_thread::sleep_for(16ms);
  }
  live::send_udp(pressure.port(), "garbage\n");

  // Silence: the pressure stream goes stale and raises a single fault.
  const auto lines = drain_until(*sub, [](const nlohmann::json& e) { return e["kind"] == "fault"; }, 5s);
  REQUIRE_FALSE(lines.empty());
  const auto fault = parse(lines.back());
  CHECK(fault["kind"] == "fault");
  CHECK(fault["source"] == "pressure");
  CHECK(fault["reason"] == "sensor disconnected");

  std::size_t ticks = 0;
  for (const auto& l : lines) {
    const auto e = parse(l);
    if (e["kind"] != "pressure-tick") continue;
    ++ticks;
    CHECK(e["pressure"].get<double>() == doctest::Approx(0.6));
  }
  CHECK(ticks >= 20);
  service.stop_session();
  const auto summary = service.last_summary();
  REQUIRE(summary);
  CHECK(summary->faults == 1);
  CHECK(fusion.rejected_lines() == 1);
}

TEST_CASE("udp listener splits datagrams into lines") {
  std::mutex mu;
  std::vector<std::string> got;
  live::UdpLineListener listener(0, [&](std::string_view l) {
    std::lock_guard lock(mu);
    got.emplace_back(l);
  });
  live::send_udp(listener.port(), "a\r\nb\n\nc");
  const auto deadline = std::chrono::steady_clock::now() + 2s;
  while (std::chrono::steady_clock::now() < deadline) {
    {
      std::lock_guard lock(mu);
      if (got.size() >= 4) break;
    }
    std::this_thread::sleep_for(5ms);
  }
  CHECK_THROWS_AS(live::UdpLineListener(listener.port(), {}), IoError);
  listener.stop();
  CHECK(got == std::vector<std::string>{"a", "b", "c", ""});
}

}  // TEST_SUITE
