#pragma once

#include "bowtrace/trace.hpp"

#include <optional>
#include <span>
#include <vector>

namespace bowtrace::kinematics {

enum class Direction { Down, Up };  // down: frog -> tip, position increasing
enum class TurnKind { TipPeak, FrogValley };

struct Stroke {
  Direction direction = Direction::Down;
  std::size_t start_idx = 0;  // first sample of the stroke
  std::size_t end_idx = 0;    // one past the last sample
  double t_start = 0.0;
  double t_end = 0.0;
  bool complete = false;        // bounded by reversals at both ends
  bool low_confidence = false;  // borders a long occlusion gap

  friend bool operator==(const Stroke&, const Stroke&) = default;
};

struct RoundTrip {
  Stroke down;
  Stroke up;
  std::size_t index = 0;

  std::size_t start_idx() const noexcept { return down.start_idx; }
  std::size_t end_idx() const noexcept { return up.end_idx; }
  friend bool operator==(const RoundTrip&, const RoundTrip&) = default;
};

struct TurnPoint {
  std::size_t idx = 0;
  TurnKind kind = TurnKind::TipPeak;
  std::optional<double> curvature;

  friend bool operator==(const TurnPoint&, const TurnPoint&) = default;
};

struct KinematicsConfig {
  std::size_t smoothing_window = 5;   // frames, moving average before differencing
  double prominence = 0.1;            // normalized position
  double min_separation = 1.0;        // s
  std::size_t curvature_half_window = 9;  // frames
  double max_gap = 0.5;               // s; turns are not detected across longer gaps
  double completion_ratio = 0.95;     // see segment()
};

/// Per-sample unsigned speed: central difference of the moving-average
/// smoothed position over the timestamps. Absent wherever the difference
/// would reach an invalid sample or the trace edge.
std::vector<std::optional<double>> speed(const Trace& trace, std::size_t smoothing_window = 5);

/// Copy of the trace with Sample::speed filled from speed().
Trace with_speed(const Trace& trace, std::size_t smoothing_window = 5);

/// Local position extrema with topographic prominence >= `prominence`,
/// at least `min_separation` seconds from any more extreme turn of the same
/// kind, forced to alternate between tip peaks and frog valleys. Runs of
/// valid samples separated by gaps longer than `max_gap` are searched
/// independently. Curvature is filled with curvature_at().
std::vector<TurnPoint> detect_turns(const Trace& trace, const KinematicsConfig& config = {});

/// Same search over the sample range [first, last).
std::vector<TurnPoint> detect_turns(const Trace& trace, std::size_t first, std::size_t last,
                                    const KinematicsConfig& config);

/// Curvature of (t, x(t)) at the turn sample from a least-squares quadratic
/// over +-half_window samples: |2a| / (1 + x'(t_turn)^2)^(3/2). Absent with
/// fewer than five valid samples in the window.
std::optional<double> curvature_at(const Trace& trace, std::size_t idx, std::size_t half_window = 9);

struct Segmentation {
  std::vector<Stroke> strokes;
  std::vector<RoundTrip> round_trips;
};

/// Splits the trace into strokes at the turns and pairs each complete
/// down-bow with the complete up-bow that follows it.
///
/// Strokes between two turns are complete. The strokes before the first turn
/// and after the last turn are complete only when their position excursion is
/// at least `completion_ratio` times the largest excursion among the
/// turn-bounded strokes (or the other boundary stroke when there are none).
Segmentation segment(const Trace& trace, std::span<const TurnPoint> turns, const KinematicsConfig& config = {});

/// Position excursion (max - min over valid samples) of [first, last).
double excursion(const Trace& trace, std::size_t first, std::size_t last);

}  // namespace bowtrace::kinematics
