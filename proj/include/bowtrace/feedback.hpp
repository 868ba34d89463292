#pragma once

#include "bowtrace/analytics.hpp"
#include "bowtrace/ingestion.hpp"
#include "bowtrace/kinematics.hpp"
#include "bowtrace/trace.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace bowtrace::feedback {

inline constexpr int kProtocolVersion = 1;

// Wire protocol: one JSON object per line. Keys keep insertion order so the
// serialized form is stable. Every message has "kind":
//
//   hello          {"kind":"hello","protocol":1,"service":"bowtrace"}
//   snapshot       current FeedbackState; "state" is "no-data" before the first trip
//   pressure-tick  {"kind":"pressure-tick","t":..,"pressure":..,"ok":true}
//   trip-complete  {"kind":"trip-complete","index":..,"valid":..,"regions":[tip, middle, frog],"diff":..,"ok":..}
//   fault          {"kind":"fault","t":..,"source":..,"reason":..}
//   session-mark   {"kind":"session-mark","mark":"start"|"stop"|"thresholds",..}
//   error          reply to a malformed command
//
// Messages may carry a "wall_clock" field; transcripts leave it out.
using Event = nlohmann::ordered_json;
using EventSink = std::function<void(const Event&)>;

inline constexpr const char* kWallClockField = "wall_clock";

struct FeedbackState {
  std::optional<double> current_pressure;
  bool pressure_ok = false;
  std::vector<analytics::TripMetrics> trip_history;
  std::optional<double> last_diff;
  bool diff_ok = true;
};

Event hello_event();
Event tick_event(double t, double pressure, bool ok);
Event trip_event(const analytics::TripMetrics& trip, const analytics::Thresholds& thresholds);
Event fault_event(const ingestion::StreamFault& fault);
Event mark_event(std::string_view mark, const analytics::Thresholds& thresholds);
Event snapshot_event(const FeedbackState& state, const analytics::Thresholds& thresholds);
/// Snapshot from its parts; `last_trip` is a trip-complete payload or null.
Event snapshot_event(std::optional<double> pressure, bool ok, std::size_t trips, const Event& last_trip,
                     const analytics::Thresholds& thresholds);
Event error_event(std::string_view message);

/// Serialized line without the trailing newline; drops wall-clock fields.
std::string transcript_line(const Event& e);

struct EngineConfig {
  analytics::Thresholds thresholds;
  analytics::RegionConfig regions;
  kinematics::KinematicsConfig kinematics;
  double tail_window = 3.0;  // s, incremental turn detection window
  bool wall_clock = false;   // stamp events with the system clock
};

struct SessionSummary {
  std::size_t samples = 0;
  std::optional<double> achievement_rate;  // absent for an empty session
  std::optional<double> improvement_rate;
  std::vector<analytics::TripMetrics> trips;
  std::size_t faults = 0;
  bool partial = false;  // ended by a source fault or truncation
};

/// The live practice loop. Single-threaded: the caller feeds samples in
/// order and every event is delivered synchronously to the sink.
class SessionEngine {
public:
  SessionEngine(EngineConfig config, EventSink sink);

  /// Emits the session-mark "start" and resets all state.
  void begin(const TraceHeader& header);
  void on_sample(const Sample& sample);
  void on_fault(const ingestion::StreamFault& fault);
  /// Applies to subsequent samples and trips; recorded as a session-mark.
  void set_thresholds(const analytics::Thresholds& thresholds);
  /// Confirms turns still pending in the tail window, emits the remaining
  /// trips and the "stop" mark, and returns the summary.
  SessionSummary finish(bool partial = false);

  const FeedbackState& state() const noexcept { return state_; }
  const analytics::Thresholds& thresholds() const noexcept { return config_.thresholds; }
  Event snapshot() const { return snapshot_event(state_, config_.thresholds); }
  /// Everything fed so far as a trace.
  Trace recorded() const;
  bool active() const noexcept { return active_; }

private:
  void emit(Event e);
  void update_turns(bool final);
  void close_trips();

  EngineConfig config_;
  EventSink sink_;
  TraceHeader header_;
  std::vector<Sample> samples_;
  std::vector<kinematics::TurnPoint> turns_;
  std::size_t trips_emitted_ = 0;
  std::size_t next_trip_turn_ = 0;  // first turn not yet consumed as a trip start
  analytics::ImprovementTracker tracker_;
  FeedbackState state_;
  std::size_t faults_ = 0;
  bool active_ = false;
};

using SourceItem = std::variant<Sample, ingestion::StreamFault>;
/// Returns nullopt at the end of the stream.
using SampleSource = std::function<std::optional<SourceItem>()>;

/// Drives an engine from a pull source until it is exhausted.
SessionSummary run_session(const SampleSource& source, const TraceHeader& header, const EngineConfig& config,
                           const EventSink& sink);

struct LatencyStats {
  std::size_t ticks = 0;
  double p50 = 0.0;  // s
  double p99 = 0.0;
  double max = 0.0;
};

LatencyStats latency_stats(std::vector<double> durations);

struct ReplayResult {
  SessionSummary summary;
  LatencyStats latency;
};

/// Replays a recording through a fresh engine, emitting hello first. With
/// speed > 0 samples are paced at speed x real time; speed 0 runs as fast
/// as possible. The event sequence does not depend on the speed.
ReplayResult replay_session(const Trace& trace, double speed, const EngineConfig& config, const EventSink& sink);

/// Transcript lines of a complete replay.
std::vector<std::string> replay_transcript(const Trace& trace, const EngineConfig& config = {});

}  // namespace bowtrace::feedback
