#pragma once

#include "bowtrace/geometry.hpp"
#include "bowtrace/trace.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bowtrace::ingestion {

/// Converts raw load-cell counts to newtons (untared).
double decode_pressure(double raw, double calibration_factor);

inline constexpr double kDefaultTareSpread = 0.2;  // N, about 3x the 0.06 N sensor step
inline constexpr std::size_t kDefaultTareFrames = 30;

struct TareState {
  double offset = 0.0;  // N
  std::size_t n_frames = 0;
  double captured_at = 0.0;  // s
  double spread = 0.0;       // max - min over the captured frames, N
  bool unstable = false;     // spread exceeded the configured limit
};

/// Mean of at-rest readings taken with the bow off the string.
TareState capture_tare(std::span<const double> untared_newtons, double captured_at = 0.0,
                       double spread_limit = kDefaultTareSpread);

inline double apply_tare(double untared, const TareState& tare) { return untared - tare.offset; }

/// Subtracts the tare offset from every sample and records it in the header.
/// Throws InvariantError when the trace is already tared.
Trace apply_tare(const Trace& untared, const TareState& tare);

struct PressureFrame {
  std::uint32_t seq = 0;
  double raw = 0.0;   // sensor counts
  double t_rx = 0.0;  // receive time, s
};

struct MarkerFrame {
  double t_rx = 0.0;
  MarkerSet points{};
};

// Wire formats. Pressure: one `seq,raw` line per reading. Markers: one
// `t,label,x,y,z` line per marker; lines sharing `t` form one frame.

struct PressureLine {
  std::uint32_t seq = 0;
  double raw = 0.0;
};
PressureLine parse_pressure_line(std::string_view line);
std::string format_pressure_line(const PressureLine& p);

struct MarkerLine {
  double t = 0.0;
  std::size_t slot = 0;
  Vec3 point = Vec3::Zero();
};
MarkerLine parse_marker_line(std::string_view line);
std::string format_marker_line(const MarkerLine& m);

/// Groups per-marker lines into frames. A frame is complete once a line with
/// a different timestamp arrives, or on flush().
class MarkerFrameAssembler {
public:
  /// Returns the previous frame when `line` starts a new one. Throws
  /// ParseError when a label repeats within one frame.
  std::optional<MarkerFrame> feed(const MarkerLine& line, double t_rx);
  std::optional<MarkerFrame> flush();

private:
  std::optional<double> current_t_;
  MarkerFrame current_;
};

struct FuseConfig {
  double rate = 60.0;
  double calibration_factor = 1.0;
  double tare_offset = 0.0;
  double marker_stale_ticks = 2.0;
  double pressure_stale_ticks = 10.0;
  /// Without a model, fused samples carry markers but no position.
  std::optional<geometry::InstrumentModel> model;
};

struct StreamFault {
  std::size_t tick = 0;
  double t = 0.0;
  std::string source;  // "pressure" or "markers"
  std::string reason;

  friend bool operator==(const StreamFault&, const StreamFault&) = default;
};

/// Zero-order-hold alignment of the pressure and marker streams onto a fixed
/// 1/rate grid. The grid starts at the first pressure frame. Frames must be
/// pushed in receive-time order; each tick k (t = k/rate) uses the latest
/// frame of each stream not newer than the tick.
class Fuser {
public:
  using SampleSink = std::function<void(const Sample&)>;
  using FaultSink = std::function<void(const StreamFault&)>;

  Fuser(FuseConfig config, SampleSink on_sample, FaultSink on_fault = {});

  void push(const PressureFrame& frame);
  void push(const MarkerFrame& frame);
  /// Emits every pending tick not later than `t_rx` (absolute receive time).
  void advance_to(double t_rx);
  /// Emits the remaining ticks up to the newest frame seen.
  void finish();

  std::size_t ticks_emitted() const noexcept { return next_tick_; }
  const FuseConfig& config() const noexcept { return config_; }

private:
  double tick_time(std::size_t k) const;
  void emit_until(double t_abs, bool inclusive);
  void emit_tick(std::size_t k);
  void fault(std::size_t tick, std::string source, std::string reason);

  FuseConfig config_;
  SampleSink on_sample_;
  FaultSink on_fault_;
  std::optional<double> origin_;
  std::size_t next_tick_ = 0;
  std::optional<PressureFrame> pressure_;
  std::optional<MarkerFrame> markers_;
  double newest_rx_ = 0.0;
  bool pressure_fault_active_ = false;
};

struct FuseResult {
  std::vector<Sample> samples;
  std::vector<StreamFault> faults;
};

/// Single-threaded reference fusion: merges both streams by receive time
/// (pressure first on ties) and drives a Fuser to completion.
FuseResult fuse(std::span<const PressureFrame> pressure, std::span<const MarkerFrame> markers,
                const FuseConfig& config);

struct ReplayFrames {
  std::vector<PressureFrame> pressure;
  std::vector<MarkerFrame> markers;
  FuseConfig config;
};

/// Turns a recorded trace back into the two input streams. Pressure frames
/// carry tared newtons with a unit calibration and zero tare, and every
/// sample yields one marker frame (empty when the sample had no markers), so
/// fusing them with the same model reproduces the samples exactly.
ReplayFrames replay_frames(const Trace& trace, std::optional<geometry::InstrumentModel> model);

}  // namespace bowtrace::ingestion
