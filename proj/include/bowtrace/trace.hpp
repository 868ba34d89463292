#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bowtrace {

using Vec3 = Eigen::Vector3d;

// Marker slots: 0-4 are violin markers v0..v4, 5-9 are bow markers b0..b4.
inline constexpr std::size_t kMarkerCount = 10;
inline constexpr std::size_t kViolinMarkers = 5;

using MarkerSet = std::array<std::optional<Vec3>, kMarkerCount>;

/// "v0".."v4", "b0".."b4".
std::string marker_label(std::size_t slot);
/// Inverse of marker_label; nullopt for unknown labels.
std::optional<std::size_t> marker_slot(std::string_view label);

/// One fused observation on the sample clock.
struct Sample {
  double t = 0.0;         // seconds since trace start
  double pressure = 0.0;  // newtons, tared
  MarkerSet markers{};
  std::optional<double> position;  // frog = 0, tip = 1
  std::optional<double> speed;     // position units per second
  bool valid_position = false;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct TraceMeta {
  std::string participant;
  std::string session;
  int trial = 0;
  double tempo_bpm = 75.0;
  std::string wall_clock_start;  // informational only, never used for timing

  friend bool operator==(const TraceMeta&, const TraceMeta&) = default;
};

struct TraceHeader {
  TraceMeta meta;
  double nominal_rate = 60.0;         // frames per second
  double calibration_factor = 1.0;    // newtons per raw count
  std::optional<double> tare_offset;  // absent until the trace has been tared

  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

/// An immutable, validated sequence of samples from one measurement.
///
/// Construction enforces: nominal_rate > 0, calibration_factor > 0, sample
/// times non-negative and strictly increasing, positions in [0, 1], and no
/// position or speed on samples flagged invalid.
class Trace {
public:
  Trace() = default;
  Trace(TraceHeader header, std::vector<Sample> samples);

  const TraceHeader& header() const noexcept { return header_; }
  const TraceMeta& meta() const noexcept { return header_.meta; }
  std::span<const Sample> samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  bool tared() const noexcept { return header_.tare_offset.has_value(); }

  /// Copy of this trace with new samples (validated again).
  Trace with_samples(std::vector<Sample> samples) const;
  Trace with_header(TraceHeader header) const;

  friend bool operator==(const Trace&, const Trace&) = default;

private:
  TraceHeader header_;
  std::vector<Sample> samples_;
};

/// Checks a single sample against the Sample invariants; throws InvariantError.
void validate_sample(const Sample& s, std::size_t index);

enum class PracticeGroup { ExplanationOnly, ExplanationPlusSystem };

std::string_view to_string(PracticeGroup g);
PracticeGroup parse_group(std::string_view text);

/// Session label of the form S<n>; ordered by n.
class SessionLabel {
public:
  explicit SessionLabel(std::string_view text);
  const std::string& name() const noexcept { return name_; }
  int ordinal() const noexcept { return ordinal_; }
  friend auto operator<=>(const SessionLabel& a, const SessionLabel& b) { return a.ordinal_ <=> b.ordinal_; }
  friend bool operator==(const SessionLabel& a, const SessionLabel& b) { return a.ordinal_ == b.ordinal_; }

private:
  std::string name_;
  int ordinal_ = 0;
};

struct Session {
  SessionLabel label{"S0"};
  PracticeGroup group = PracticeGroup::ExplanationOnly;
  std::vector<Trace> traces;

  /// Every trace must carry this session's label.
  void validate() const;
};

}  // namespace bowtrace
