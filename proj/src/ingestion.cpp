#include "bowtrace/ingestion.hpp"

#include "bowtrace/errors.hpp"
#include "bowtrace/recording.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

namespace bowtrace::ingestion {

namespace {

constexpr double kTimeEps = 1e-9;

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
T parse_number(std::string_view cell, std::string_view what) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
  T value{};
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError(fmt::format("bad {} '{}'", what, cell));
  return value;
}

}  // namespace

double decode_pressure(double raw, double calibration_factor) {
  if (!std::isfinite(raw)) throw DecodeError("non-finite pressure reading");
  if (!(calibration_factor > 0.0) || !std::isfinite(calibration_factor))
    throw DecodeError("calibration factor must be finite and > 0");
  return raw * calibration_factor;
}

TareState capture_tare(std::span<const double> frames, double captured_at, double spread_limit) {
  if (frames.empty()) throw InsufficientDataError("tare capture needs at least one frame");
  for (const double f : frames) {
    if (!std::isfinite(f)) throw DecodeError("non-finite tare frame");
  }
  TareState tare;
  tare.n_frames = frames.size();
  tare.offset = std::accumulate(frames.begin(), frames.end(), 0.0) / static_cast<double>(frames.size());
  const auto [lo, hi] = std::minmax_element(frames.begin(), frames.end());
  tare.spread = *hi - *lo;
  tare.unstable = tare.spread > spread_limit;
  tare.captured_at = captured_at;
  return tare;
}

Trace apply_tare(const Trace& untared, const TareState& tare) {
  if (untared.tared()) throw InvariantError("trace is already tared");
  auto header = untared.header();
  header.tare_offset = tare.offset;
  std::vector<Sample> samples(untared.samples().begin(), untared.samples().end());
  for (auto& s : samples) s.pressure = apply_tare(s.pressure, tare);
  return Trace(std::move(header), std::move(samples));
}

PressureLine parse_pressure_line(std::string_view line) {
  const auto cells = split_commas(line);
  if (cells.size() != 2) throw ParseError(fmt::format("pressure line '{}' is not seq,raw", line));
  PressureLine p;
  p.seq = parse_number<std::uint32_t>(cells[0], "pressure seq");
  p.raw = parse_number<double>(cells[1], "pressure reading");
  if (!std::isfinite(p.raw)) throw DecodeError("non-finite pressure reading");
  return p;
}

std::string format_pressure_line(const PressureLine& p) { return fmt::format("{},{}", p.seq, format_number(p.raw)); }

MarkerLine parse_marker_line(std::string_view line) {
  const auto cells = split_commas(line);
  if (cells.size() != 5) throw ParseError(fmt::format("marker line '{}' is not t,label,x,y,z", line));
  MarkerLine m;
  m.t = parse_number<double>(cells[0], "marker time");
  auto label = cells[1];
  while (!label.empty() && label.front() == ' ') label.remove_prefix(1);
  while (!label.empty() && label.back() == ' ') label.remove_suffix(1);
  const auto slot = marker_slot(label);
  if (!slot) throw ParseError(fmt::format("unknown marker label '{}'", label));
  m.slot = *slot;
  m.point = Vec3(parse_number<double>(cells[2], "marker x"), parse_number<double>(cells[3], "marker y"),
                 parse_number<double>(cells[4], "marker z"));
  if (!m.point.allFinite()) throw DecodeError("non-finite marker coordinate");
  return m;
}

std::string format_marker_line(const MarkerLine& m) {
  return fmt::format("{},{},{},{},{}", format_number(m.t), marker_label(m.slot), format_number(m.point.x()),
                     format_number(m.point.y()), format_number(m.point.z()));
}

std::optional<MarkerFrame> MarkerFrameAssembler::feed(const MarkerLine& line, double t_rx) {
  std::optional<MarkerFrame> done;
  if (current_t_ && *current_t_ != line.t) done = flush();
  if (!current_t_) {
    current_t_ = line.t;
    current_ = MarkerFrame{t_rx, {}};
  }
  if (current_.points[line.slot])
    throw ParseError(fmt::format("marker {} appears twice in frame t={}", marker_label(line.slot), line.t));
  current_.points[line.slot] = line.point;
  return done;
}

std::optional<MarkerFrame> MarkerFrameAssembler::flush() {
  if (!current_t_) return std::nullopt;
  current_t_.reset();
  return std::exchange(current_, MarkerFrame{});
}

Fuser::Fuser(FuseConfig config, SampleSink on_sample, FaultSink on_fault)
    : config_(std::move(config)), on_sample_(std::move(on_sample)), on_fault_(std::move(on_fault)) {
  if (!(config_.rate > 0.0)) throw InvariantError("fusion rate must be > 0");
  if (!(config_.calibration_factor > 0.0)) throw InvariantError("calibration factor must be > 0");
  if (config_.model) config_.model->validate();
}

double Fuser::tick_time(std::size_t k) const { return *origin_ + static_cast<double>(k) / config_.rate; }

void Fuser::fault(std::size_t tick, std::string source, std::string reason) {
  if (on_fault_) on_fault_(StreamFault{tick, static_cast<double>(tick) / config_.rate, std::move(source), std::move(reason)});
}

void Fuser::push(const PressureFrame& frame) {
  if (!std::isfinite(frame.t_rx) || !std::isfinite(frame.raw)) throw DecodeError("non-finite pressure frame");
  if (pressure_) {
    const std::uint32_t delta = frame.seq - pressure_->seq;  // modulo 2^32
    if (delta == 0 || delta > 0x80000000u) {
      fault(next_tick_, "pressure", fmt::format("out-of-order frame seq {} after {}", frame.seq, pressure_->seq));
      return;
    }
  }
  if (!origin_) origin_ = frame.t_rx;
  emit_until(frame.t_rx, false);
  pressure_ = frame;
  if (pressure_fault_active_) pressure_fault_active_ = false;
  newest_rx_ = std::max(newest_rx_, frame.t_rx);
}

void Fuser::push(const MarkerFrame& frame) {
  if (!std::isfinite(frame.t_rx)) throw DecodeError("non-finite marker frame time");
  if (origin_) emit_until(frame.t_rx, false);
  markers_ = frame;
  newest_rx_ = std::max(newest_rx_, frame.t_rx);
}

void Fuser::advance_to(double t_rx) {
  if (!origin_) return;
  emit_until(t_rx, true);
}

void Fuser::finish() {
  if (!origin_) return;
  emit_until(newest_rx_, true);
}

void Fuser::emit_until(double t_abs, bool inclusive) {
  if (!origin_) return;
  while (true) {
    const double tk = tick_time(next_tick_);
    const bool due = inclusive ? tk <= t_abs + kTimeEps : tk < t_abs - kTimeEps;
    if (!due) return;
    emit_tick(next_tick_);
    ++next_tick_;
  }
}

void Fuser::emit_tick(std::size_t k) {
  const double tk = tick_time(k);
  Sample s;
  s.t = static_cast<double>(k) / config_.rate;

  const double p_age = (tk - pressure_->t_rx) * config_.rate;
  if (p_age > config_.pressure_stale_ticks + kTimeEps && !pressure_fault_active_) {
    pressure_fault_active_ = true;
    fault(k, "pressure", "sensor disconnected");
  }
  s.pressure = decode_pressure(pressure_->raw, config_.calibration_factor) - config_.tare_offset;

  if (markers_) {
    const double m_age = (tk - markers_->t_rx) * config_.rate;
    if (m_age <= config_.marker_stale_ticks + kTimeEps) s.markers = markers_->points;
  }
  if (config_.model) {
    try {
      s.position = geometry::solve(s.markers, *config_.model).position;
      s.valid_position = true;
    } catch (const OcclusionError&) {
    } catch (const DegenerateGeometryError&) {
    }
  }
  on_sample_(s);
}

FuseResult fuse(std::span<const PressureFrame> pressure, std::span<const MarkerFrame> markers,
                const FuseConfig& config) {
  FuseResult result;
  Fuser fuser(
      config, [&](const Sample& s) { result.samples.push_back(s); },
      [&](const StreamFault& f) { result.faults.push_back(f); });

  std::vector<PressureFrame> p(pressure.begin(), pressure.end());
  std::vector<MarkerFrame> m(markers.begin(), markers.end());
  std::stable_sort(p.begin(), p.end(), [](const auto& a, const auto& b) { return a.t_rx < b.t_rx; });
  std::stable_sort(m.begin(), m.end(), [](const auto& a, const auto& b) { return a.t_rx < b.t_rx; });

  std::size_t i = 0, j = 0;
  while (i < p.size() || j < m.size()) {
    if (j >= m.size() || (i < p.size() && p[i].t_rx <= m[j].t_rx)) fuser.push(p[i++]);
    else fuser.push(m[j++]);
  }
  fuser.finish();
  return result;
}

ReplayFrames replay_frames(const Trace& trace, std::optional<geometry::InstrumentModel> model) {
  ReplayFrames out;
  out.config.rate = trace.header().nominal_rate;
  out.config.calibration_factor = 1.0;
  out.config.tare_offset = 0.0;
  out.config.model = std::move(model);
  out.pressure.reserve(trace.size());
  out.markers.reserve(trace.size());
  std::uint32_t seq = 0;
  for (const auto& s : trace.samples()) {
    out.pressure.push_back(PressureFrame{seq++, s.pressure, s.t});
    out.markers.push_back(MarkerFrame{s.t, s.markers});
  }
  return out;
}

}  // namespace bowtrace::ingestion
