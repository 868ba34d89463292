#pragma once

#include "bowtrace/trace.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bowtrace::geometry {

/// A 3D line: origin plus unit direction.
struct Line3 {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();

  Vec3 at(double s) const { return origin + s * direction; }
};

/// Which marker slots define the string axis and the bow axis.
///
/// Lines are oriented from the first listed marker toward the last: list the
/// string markers bridge first and the bow markers frog first.
///
/// The bow-axis parameter is measured from a bow-fixed origin. When
/// `bow_offsets` is given (one along-axis coordinate per bow marker, metres,
/// in the bow's own frame) the origin is the average of
/// `projection(marker) - offset` over the visible markers, which tolerates
/// occlusion of any subset. Without offsets the origin is the projection of
/// the first listed bow marker, which must then be visible.
struct MarkerAssignment {
  std::vector<std::size_t> string_markers{0, 1, 2};
  std::vector<std::size_t> bow_markers{5, 6, 7, 8, 9};
  std::vector<double> bow_offsets;

  void validate() const;
};

struct InstrumentModel {
  MarkerAssignment assignment;
  double frog_param = 0.0;  // bow-axis parameter of the hair at the frog
  double tip_param = 1.0;   // bow-axis parameter of the hair at the tip
  double gap_warning = 0.05;  // metres
  double parallel_tolerance = 1e-6;  // radians

  void validate() const;
};

struct ContactSolution {
  double position = 0.0;   // clamped to [0, 1]
  double gap = 0.0;        // closest distance between the axes, metres
  double raw_param = 0.0;  // bow-axis parameter of the closest point
  bool gap_warning = false;
};

struct Axes {
  Line3 string_line;
  Line3 bow_line;
};

/// Least-squares line through `points`, oriented from the first point toward
/// the last. Requires at least two distinct points.
Line3 fit_line(std::span<const Vec3> points);

/// Fits both axes from one marker set. The bow line's origin is the
/// bow-fixed origin described on MarkerAssignment. Throws OcclusionError when
/// fewer than two assigned markers are visible on either axis.
Axes fit_axes(const MarkerSet& markers, const MarkerAssignment& assignment);

/// Closest-point contact between the string line and the bow line.
ContactSolution contact(const Line3& string_line, const Line3& bow_line, const InstrumentModel& model);

/// fit_axes followed by contact.
ContactSolution solve(const MarkerSet& markers, const InstrumentModel& model);

struct Calibration {
  double frog_param = 0.0;
  double tip_param = 1.0;
};

/// Medians of the contact parameter over frames held at the frog and at the
/// tip. Throws CalibrationError when the two groups overlap (median distance
/// below 10x the larger spread) or when the frog lies beyond the tip along
/// the configured bow direction.
Calibration calibrate(std::span<const MarkerSet> frog_frames, std::span<const MarkerSet> tip_frames,
                      const InstrumentModel& model);

/// Text key=value configuration: string_markers, bow_markers, bow_offsets,
/// frog_param, tip_param, gap_warning_m.
InstrumentModel load_model(const std::filesystem::path& path);
void save_model(const InstrumentModel& model, const std::filesystem::path& path);
std::string format_model(const InstrumentModel& model);
InstrumentModel parse_model(std::string_view text);

}  // namespace bowtrace::geometry
