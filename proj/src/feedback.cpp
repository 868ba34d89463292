#include "bowtrace/feedback.hpp"

#include "bowtrace/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

namespace bowtrace::feedback {

using analytics::Region;
using analytics::Thresholds;
using analytics::TripMetrics;
using kinematics::Direction;
using kinematics::TurnKind;

namespace {

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json thresholds_json(const Thresholds& t) {
  nlohmann::ordered_json j;
  j["floor"] = t.pressure_floor;
  j["ceiling"] = t.diff_ceiling;
  return j;
}

nlohmann::ordered_json trip_payload(const TripMetrics& trip, const Thresholds& thresholds) {
  nlohmann::ordered_json regions = nlohmann::ordered_json::array();
  for (const Region r : {Region::Tip, Region::Middle, Region::Frog}) {
    const auto& s = trip[r];
    nlohmann::ordered_json j;
    j["name"] = analytics::to_string(r);
    j["n"] = s.n();
    if (s.box) {
      j["min"] = s.box->min;
      j["q1"] = s.box->q1;
      j["median"] = s.box->median;
      j["q3"] = s.box->q3;
      j["max"] = s.box->max;
      j["mean"] = s.box->mean;
    }
    regions.push_back(std::move(j));
  }
  nlohmann::ordered_json j;
  j["index"] = trip.trip_index;
  j["valid"] = trip.valid();
  j["regions"] = std::move(regions);
  j["diff"] = optional_number(trip.diff);
  j["ok"] = trip.diff ? nlohmann::ordered_json(*trip.diff <= thresholds.diff_ceiling) : nlohmann::ordered_json(nullptr);
  return j;
}

double excursion_of(std::span<const Sample> samples, std::size_t first, std::size_t last) {
  last = std::min(last, samples.size());
  std::optional<double> lo, hi;
  for (std::size_t k = first; k < last; ++k) {
    const auto& p = samples[k].position;
    if (!p) continue;
    lo = lo ? std::min(*lo, *p) : *p;
    hi = hi ? std::max(*hi, *p) : *p;
  }
  return lo ? *hi - *lo : 0.0;
}

}  // namespace

Event hello_event() {
  Event e;
  e["kind"] = "hello";
  e["protocol"] = kProtocolVersion;
  e["service"] = "bowtrace";
  return e;
}

Event tick_event(double t, double pressure, bool ok) {
  Event e;
  e["kind"] = "pressure-tick";
  e["t"] = t;
  e["pressure"] = pressure;
  e["ok"] = ok;
  return e;
}

Event trip_event(const TripMetrics& trip, const Thresholds& thresholds) {
  Event e;
  e["kind"] = "trip-complete";
  const auto payload = trip_payload(trip, thresholds);
  for (const auto& [key, value] : payload.items()) e[key] = value;
  return e;
}

Event fault_event(const ingestion::StreamFault& fault) {
  Event e;
  e["kind"] = "fault";
  e["t"] = fault.t;
  e["tick"] = fault.tick;
  e["source"] = fault.source;
  e["reason"] = fault.reason;
  return e;
}

Event mark_event(std::string_view mark, const Thresholds& thresholds) {
  Event e;
  e["kind"] = "session-mark";
  e["mark"] = mark;
  e["thresholds"] = thresholds_json(thresholds);
  return e;
}

Event snapshot_event(std::optional<double> pressure, bool ok, std::size_t trips, const Event& last_trip,
                     const Thresholds& thresholds) {
  Event e;
  e["kind"] = "snapshot";
  e["state"] = trips == 0 ? "no-data" : "live";
  e["thresholds"] = thresholds_json(thresholds);
  e["pressure"] = optional_number(pressure);
  e["ok"] = ok;
  e["trips"] = trips;
  e["last_trip"] = last_trip;
  return e;
}

Event snapshot_event(const FeedbackState& state, const Thresholds& thresholds) {
  return snapshot_event(state.current_pressure, state.pressure_ok, state.trip_history.size(),
                        state.trip_history.empty() ? Event(nullptr) : trip_payload(state.trip_history.back(), thresholds),
                        thresholds);
}

Event error_event(std::string_view message) {
  Event e;
  e["kind"] = "error";
  e["message"] = message;
  return e;
}

std::string transcript_line(const Event& e) {
  if (!e.contains(kWallClockField)) return e.dump();
  Event copy = e;
  copy.erase(kWallClockField);
  return copy.dump();
}

SessionEngine::SessionEngine(EngineConfig config, EventSink sink) : config_(std::move(config)), sink_(std::move(sink)) {
  config_.thresholds.validate();
  config_.regions.validate();
}

void SessionEngine::emit(Event e) {
  if (config_.wall_clock) {
    e[kWallClockField] = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
  }
  if (sink_) sink_(e);
}

void SessionEngine::begin(const TraceHeader& header) {
  header_ = header;
  samples_.clear();
  turns_.clear();
  trips_emitted_ = 0;
  next_trip_turn_ = 0;
  tracker_ = {};
  state_ = {};
  faults_ = 0;
  active_ = true;
  Event e = mark_event("start", config_.thresholds);
  e["participant"] = header.meta.participant;
  e["session"] = header.meta.session;
  e["trial"] = header.meta.trial;
  emit(std::move(e));
}

void SessionEngine::on_sample(const Sample& sample) {
  if (!active_) throw InvariantError("sample outside an active session");
  if (!samples_.empty() && !(sample.t > samples_.back().t))
    throw InvariantError("non-monotonic timestamp in session stream");
  validate_sample(sample, samples_.size());
  samples_.push_back(sample);
  state_.current_pressure = sample.pressure;
  state_.pressure_ok = sample.pressure >= config_.thresholds.pressure_floor;
  emit(tick_event(sample.t, sample.pressure, state_.pressure_ok));
  if (sample.position) update_turns(false);
}

void SessionEngine::on_fault(const ingestion::StreamFault& fault) {
  ++faults_;
  emit(fault_event(fault));
}

void SessionEngine::set_thresholds(const Thresholds& thresholds) {
  thresholds.validate();
  config_.thresholds = thresholds;
  if (state_.current_pressure) state_.pressure_ok = *state_.current_pressure >= thresholds.pressure_floor;
  if (state_.last_diff) state_.diff_ok = *state_.last_diff <= thresholds.diff_ceiling;
  emit(mark_event("thresholds", thresholds));
}

Trace SessionEngine::recorded() const { return Trace(header_, samples_); }

void SessionEngine::update_turns(bool final) {
  if (samples_.size() < 3) return;
  const double t_now = samples_.back().t;
  const auto begin_it = std::lower_bound(samples_.begin(), samples_.end(), t_now - config_.tail_window,
                                         [](const Sample& s, double t) { return s.t < t; });
  const auto first = static_cast<std::size_t>(begin_it - samples_.begin());
  if (samples_.size() - first < 3) return;

  TraceHeader h = header_;
  const Trace window(h, std::vector<Sample>(begin_it, samples_.end()));
  auto cfg = config_.kinematics;
  cfg.curvature_half_window = 0;  // curvature is not used on the live path
  const auto found = kinematics::detect_turns(window, cfg);

  bool added = false;
  for (const auto& turn : found) {
    const std::size_t idx = first + turn.idx;
    const double t_turn = samples_[idx].t;
    if (!final && t_turn > t_now - config_.kinematics.min_separation) break;
    if (!turns_.empty()) {
      const auto& last = turns_.back();
      if (idx <= last.idx || turn.kind == last.kind) continue;
      if (t_turn - samples_[last.idx].t < config_.kinematics.min_separation) continue;
    }
    turns_.push_back({idx, turn.kind, std::nullopt});
    added = true;
  }
  if (added) close_trips();
}

void SessionEngine::close_trips() {
  const std::span<const Sample> all(samples_);
  auto span_of = [&](std::size_t a, std::size_t b) { return excursion_of(all, a, std::min(b + 1, all.size())); };

  double reference = 0.0;
  for (std::size_t i = 0; i + 1 < turns_.size(); ++i)
    reference = std::max(reference, span_of(turns_[i].idx, turns_[i + 1].idx));

  for (std::size_t j = std::max<std::size_t>(next_trip_turn_, 1); j < turns_.size(); ++j) {
    next_trip_turn_ = j + 1;
    if (turns_[j].kind != TurnKind::FrogValley || turns_[j - 1].kind != TurnKind::TipPeak) continue;
    const std::size_t peak = turns_[j - 1].idx;
    std::size_t start = 0;
    if (j >= 2) {
      start = turns_[j - 2].idx;
    } else if (peak == 0 || span_of(0, peak) < config_.kinematics.completion_ratio * reference) {
      continue;
    }
    const std::size_t end = turns_[j].idx;

    // Trip metrics are computed on a copy of the trip's own samples.
    const Trace piece(header_, std::vector<Sample>(samples_.begin() + static_cast<std::ptrdiff_t>(start),
                                                   samples_.begin() + static_cast<std::ptrdiff_t>(end)));
    kinematics::RoundTrip trip;
    trip.down = {Direction::Down, 0, peak - start, piece[0].t, piece[peak - start].t, true, false};
    trip.up = {Direction::Up, peak - start, end - start, piece[peak - start].t, samples_[end].t, true, false};
    trip.index = trips_emitted_;
    auto metrics = analytics::trip_metrics(trip, piece, config_.regions, config_.thresholds);
    ++trips_emitted_;

    tracker_.add(metrics);
    state_.trip_history.push_back(metrics);
    state_.last_diff = metrics.diff;
    state_.diff_ok = !metrics.diff || *metrics.diff <= config_.thresholds.diff_ceiling;
    emit(trip_event(metrics, config_.thresholds));
  }
}

SessionSummary SessionEngine::finish(bool partial) {
  if (!active_) throw InvariantError("finish outside an active session");
  update_turns(true);
  SessionSummary s;
  s.samples = samples_.size();
  if (!samples_.empty()) {
    const auto above = std::count_if(samples_.begin(), samples_.end(), [&](const Sample& x) {
      return x.pressure >= config_.thresholds.pressure_floor;
    });
    s.achievement_rate = static_cast<double>(above) / static_cast<double>(samples_.size());
  }
  s.improvement_rate = tracker_.rate();
  s.trips = state_.trip_history;
  s.faults = faults_;
  s.partial = partial;
  Event e = mark_event("stop", config_.thresholds);
  e["samples"] = s.samples;
  e["trips"] = s.trips.size();
  e["achievement_rate"] = optional_number(s.achievement_rate);
  e["improvement_rate"] = optional_number(s.improvement_rate);
  e["partial"] = partial;
  emit(std::move(e));
  active_ = false;
  return s;
}

SessionSummary run_session(const SampleSource& source, const TraceHeader& header, const EngineConfig& config,
                           const EventSink& sink) {
  SessionEngine engine(config, sink);
  engine.begin(header);
  while (auto item = source()) {
    if (const auto* s = std::get_if<Sample>(&*item)) engine.on_sample(*s);
    else engine.on_fault(std::get<ingestion::StreamFault>(*item));
  }
  return engine.finish();
}

LatencyStats latency_stats(std::vector<double> durations) {
  LatencyStats s;
  s.ticks = durations.size();
  if (durations.empty()) return s;
  std::sort(durations.begin(), durations.end());
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(durations.size())));
    return durations[std::min(durations.size() - 1, k == 0 ? 0 : k - 1)];
  };
  s.p50 = rank(0.5);
  s.p99 = rank(0.99);
  s.max = durations.back();
  return s;
}

ReplayResult replay_session(const Trace& trace, double speed, const EngineConfig& config, const EventSink& sink) {
  if (speed < 0.0) throw InvariantError("replay speed must be >= 0");
  SessionEngine engine(config, sink);
  if (sink) sink(hello_event());
  engine.begin(trace.header());

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::vector<double> durations;
  durations.reserve(trace.size());
  for (const auto& sample : trace.samples()) {
    if (speed > 0.0) {
      std::this_thread::sleep_until(start + std::chrono::duration_cast<clock::duration>(
                                                std::chrono::duration<double>(sample.t / speed)));
    }
    const auto t0 = clock::now();
    engine.on_sample(sample);
    durations.push_back(std::chrono::duration<double>(clock::now() - t0).count());
  }
  ReplayResult r;
  r.summary = engine.finish();
  r.latency = latency_stats(std::move(durations));
  return r;
}

std::vector<std::string> replay_transcript(const Trace& trace, const EngineConfig& config) {
  std::vector<std::string> lines;
  replay_session(trace, 0.0, config, [&](const Event& e) { lines.push_back(transcript_line(e)); });
  return lines;
}

}  // namespace bowtrace::feedback
