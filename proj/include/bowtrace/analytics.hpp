#pragma once

#include "bowtrace/kinematics.hpp"
#include "bowtrace/stats.hpp"
#include "bowtrace/trace.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bowtrace::analytics {

enum class Region { Frog = 0, Middle = 1, Tip = 2 };
inline constexpr std::array<Region, 3> kRegions{Region::Frog, Region::Middle, Region::Tip};

std::string_view to_string(Region r);

/// Splits [exclusion, 1 - exclusion] into three equal regions of length
/// L = (1 - 2 exclusion) / 3: frog [e, e+L), middle [e+L, e+2L), tip [e+2L, 1-e].
struct RegionConfig {
  double exclusion = 0.05;

  void validate() const;
  double length() const { return (1.0 - 2.0 * exclusion) / 3.0; }
  /// nullopt for positions inside the exclusion margins.
  std::optional<Region> classify(double position) const;
};

struct Thresholds {
  double pressure_floor = 0.5;  // N
  double diff_ceiling = 0.17;   // N

  void validate() const;
};

/// Min-max scaling to [0, 1]. Throws InsufficientDataError when fewer than
/// two distinct values are present.
std::vector<double> normalize(std::span<const double> values);

enum class DirectionFilter { Both, Down, Up };

struct RegionSet {
  std::vector<double> pressure;
  std::vector<double> speed;  // only samples that have a speed
};

struct RegionBins {
  std::array<RegionSet, 3> regions;
  std::size_t valid = 0;      // samples with a position that were considered
  std::size_t discarded = 0;  // of those, inside the exclusion margins

  const RegionSet& operator[](Region r) const { return regions[static_cast<std::size_t>(r)]; }
  RegionSet& operator[](Region r) { return regions[static_cast<std::size_t>(r)]; }
};

/// Bins the samples of `strokes` (every sample when `strokes` is empty and
/// the filter is Both) by region of bow position.
RegionBins bin_regions(const Trace& trace, std::span<const kinematics::Stroke> strokes, const RegionConfig& config,
                       DirectionFilter filter = DirectionFilter::Both);

/// Fraction of samples with pressure >= floor. Throws on an empty trace.
double achievement_rate(const Trace& trace, double floor);

struct RegionSummary {
  Region region = Region::Frog;
  std::optional<stats::BoxSummary> box;  // absent when the region had no samples

  std::size_t n() const { return box ? box->n : 0; }
  friend bool operator==(const RegionSummary&, const RegionSummary&) = default;
};

struct TripMetrics {
  std::size_t trip_index = 0;
  std::array<RegionSummary, 3> summaries;  // frog, middle, tip
  std::optional<double> diff;  // max - min of the region means; absent when invalid
  bool exceeds = false;        // diff > diff_ceiling

  bool valid() const noexcept { return diff.has_value(); }
  const RegionSummary& operator[](Region r) const { return summaries[static_cast<std::size_t>(r)]; }
  friend bool operator==(const TripMetrics&, const TripMetrics&) = default;
};

TripMetrics trip_metrics(const kinematics::RoundTrip& trip, const Trace& trace, const RegionConfig& config,
                         const Thresholds& thresholds);

/// Among trips whose diff exceeded the ceiling and that have a valid
/// successor, the fraction whose successor's diff is smaller. Absent when
/// no trip qualifies.
std::optional<double> improvement_rate(std::span<const TripMetrics> trips, const Thresholds& thresholds);

/// Streaming form of improvement_rate; uses each trip's own `exceeds` flag,
/// i.e. the feedback actually shown when the trip completed.
class ImprovementTracker {
public:
  void add(const TripMetrics& trip);
  std::optional<double> rate() const;
  std::size_t feedback_events() const noexcept { return denominator_; }
  std::size_t improvements() const noexcept { return numerator_; }

private:
  std::optional<TripMetrics> last_;
  std::size_t numerator_ = 0;
  std::size_t denominator_ = 0;
};

struct PairwiseComparison {
  std::string first;
  std::string second;
  std::optional<stats::TestResult> test;  // absent when every difference was zero
  double p_value = 1.0;
  double p_adjusted = 1.0;
  bool significant = false;
  double mean_first = 0.0;
  double mean_second = 0.0;
};

struct ComparisonReport {
  std::vector<PairwiseComparison> pairs;
  std::size_t comparisons = 0;  // Bonferroni factor
  double alpha = 0.05;

  const PairwiseComparison* find(std::string_view a, std::string_view b) const;
};

/// Wilcoxon signed-rank for every pair of labelled metric vectors (paired by
/// participant, so all vectors must have equal length), Bonferroni-adjusted
/// by the number of pairs.
ComparisonReport compare_sessions(std::span<const std::pair<std::string, std::vector<double>>> sessions,
                                  double alpha = 0.05);

struct CohortConfig {
  RegionConfig regions;
  kinematics::KinematicsConfig kinematics;
  double alpha = 0.05;
};

struct ReportRow {
  std::string family;      // pressure-extremes, region-pressure, region-speed, tercile-speed, turn-curvature
  std::string group;       // expert, beginner, expert-vs-beginner
  std::string direction;   // down, up, or empty
  std::string comparison;  // e.g. frog-tip, max, tip
  std::string method;      // brunner-munzel or wilcoxon
  std::size_t n_first = 0;
  std::size_t n_second = 0;
  double center_first = 0.0;  // mean of the first quantity
  double center_second = 0.0;
  std::optional<double> statistic;
  double p_value = 1.0;
  double p_adjusted = 1.0;
  bool significant = false;
  std::string note;
};

struct CohortReport {
  std::vector<ReportRow> rows;

  const ReportRow* find(std::string_view family, std::string_view group, std::string_view direction,
                        std::string_view comparison) const;
  std::string to_csv() const;
};

/// The full between-group and within-group analysis battery over expert and
/// beginner traces. Participants are identified by trace metadata. Throws
/// InsufficientDataError when a group has fewer than two traces or fewer than
/// two participants.
CohortReport cohort_report(std::span<const Trace> experts, std::span<const Trace> beginners,
                           const CohortConfig& config = {});

}  // namespace bowtrace::analytics
