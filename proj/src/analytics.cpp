#include "bowtrace/analytics.hpp"

#include "bowtrace/errors.hpp"
#include "bowtrace/recording.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace bowtrace::analytics {

using kinematics::Direction;

std::string_view to_string(Region r) {
  switch (r) {
    case Region::Frog:
      return "frog";
    case Region::Middle:
      return "middle";
    case Region::Tip:
      return "tip";
  }
  return "?";
}

void RegionConfig::validate() const {
  if (!(exclusion >= 0.0 && exclusion < 0.5)) throw InvariantError("region exclusion must be in [0, 0.5)");
}

std::optional<Region> RegionConfig::classify(double position) const {
  const double lo = exclusion;
  const double hi = 1.0 - exclusion;
  if (position < lo || position > hi) return std::nullopt;
  const double len = length();
  if (position < lo + len) return Region::Frog;
  if (position < lo + 2.0 * len) return Region::Middle;
  return Region::Tip;
}

void Thresholds::validate() const {
  if (!(pressure_floor > 0.0) || !(diff_ceiling > 0.0)) throw InvariantError("thresholds must be > 0");
}

std::vector<double> normalize(std::span<const double> values) {
  if (values.size() < 2) throw InsufficientDataError("normalization needs at least two values");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  if (!(range > 0.0)) throw InsufficientDataError("degenerate normalization: all values equal");
  std::vector<double> out;
  out.reserve(values.size());
  for (const double v : values) out.push_back((v - min) / range);
  return out;
}

RegionBins bin_regions(const Trace& trace, std::span<const kinematics::Stroke> strokes, const RegionConfig& config,
                       DirectionFilter filter) {
  config.validate();
  RegionBins bins;
  const auto samples = trace.samples();
  auto take = [&](std::size_t first, std::size_t last) {
    for (std::size_t k = first; k < std::min(last, samples.size()); ++k) {
      const auto& s = samples[k];
      if (!s.valid_position || !s.position) continue;
      ++bins.valid;
      const auto region = config.classify(*s.position);
      if (!region) {
        ++bins.discarded;
        continue;
      }
      bins[*region].pressure.push_back(s.pressure);
      if (s.speed) bins[*region].speed.push_back(*s.speed);
    }
  };
  if (strokes.empty()) {
    if (filter == DirectionFilter::Both) take(0, samples.size());
    return bins;
  }
  for (const auto& stroke : strokes) {
    if (filter == DirectionFilter::Down && stroke.direction != Direction::Down) continue;
    if (filter == DirectionFilter::Up && stroke.direction != Direction::Up) continue;
    take(stroke.start_idx, stroke.end_idx);
  }
  return bins;
}

double achievement_rate(const Trace& trace, double floor) {
  if (trace.empty()) throw InsufficientDataError("achievement rate of an empty trace");
  const auto samples = trace.samples();
  const auto above = std::count_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.pressure >= floor; });
  return static_cast<double>(above) / static_cast<double>(samples.size());
}

TripMetrics trip_metrics(const kinematics::RoundTrip& trip, const Trace& trace, const RegionConfig& config,
                         const Thresholds& thresholds) {
  if (trip.end_idx() > trace.size() || trip.start_idx() >= trip.end_idx())
    throw InvariantError("round trip indices outside the trace");
  const std::array<kinematics::Stroke, 2> strokes{trip.down, trip.up};
  const auto bins = bin_regions(trace, strokes, config);

  TripMetrics m;
  m.trip_index = trip.index;
  bool complete = true;
  double lo = 0.0, hi = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    m.summaries[r].region = kRegions[r];
    const auto& p = bins.regions[r].pressure;
    if (p.empty()) {
      complete = false;
      continue;
    }
    m.summaries[r].box = stats::box_summary(p);
    const double mean = m.summaries[r].box->mean;
    if (r == 0 || mean < lo) lo = mean;
    if (r == 0 || mean > hi) hi = mean;
  }
  if (complete) {
    m.diff = hi - lo;
    m.exceeds = *m.diff > thresholds.diff_ceiling;
  }
  return m;
}

std::optional<double> improvement_rate(std::span<const TripMetrics> trips, const Thresholds& thresholds) {
  std::size_t numerator = 0, denominator = 0;
  for (std::size_t i = 0; i + 1 < trips.size(); ++i) {
    const auto& a = trips[i];
    const auto& b = trips[i + 1];
    if (!a.diff || !b.diff) continue;
    if (!(*a.diff > thresholds.diff_ceiling)) continue;
    ++denominator;
    if (*b.diff < *a.diff) ++numerator;
  }
  if (denominator == 0) return std::nullopt;
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

void ImprovementTracker::add(const TripMetrics& trip) {
  if (last_ && last_->diff && trip.diff && last_->exceeds) {
    ++denominator_;
    if (*trip.diff < *last_->diff) ++numerator_;
  }
  last_ = trip;
}

std::optional<double> ImprovementTracker::rate() const {
  if (denominator_ == 0) return std::nullopt;
  return static_cast<double>(numerator_) / static_cast<double>(denominator_);
}

const PairwiseComparison* ComparisonReport::find(std::string_view a, std::string_view b) const {
  for (const auto& p : pairs) {
    if ((p.first == a && p.second == b) || (p.first == b && p.second == a)) return &p;
  }
  return nullptr;
}

namespace {

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ComparisonReport compare_sessions(std::span<const std::pair<std::string, std::vector<double>>> sessions, double alpha) {
  ComparisonReport report;
  report.alpha = alpha;
  const std::size_t k = sessions.size();
  report.comparisons = k * (k - 1) / 2;
  if (k < 2) return report;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const auto& [la, a] = sessions[i];
      const auto& [lb, b] = sessions[j];
      if (a.size() != b.size())
        throw InvariantError(fmt::format("sessions {} and {} have different participant counts", la, lb));
      PairwiseComparison c;
      c.first = la;
      c.second = lb;
      c.mean_first = mean_of(a);
      c.mean_second = mean_of(b);
      try {
        c.test = stats::wilcoxon_paired(b, a, alpha);
        c.p_value = c.test->p_value;
      } catch (const NoEffectError&) {
        c.p_value = 1.0;
      }
      report.pairs.push_back(std::move(c));
    }
  }
  for (auto& c : report.pairs) {
    const double p = c.p_value;
    c.p_adjusted = stats::bonferroni(std::span(&p, 1), report.comparisons).front();
    c.significant = c.p_adjusted < alpha;
  }
  return report;
}

const ReportRow* CohortReport::find(std::string_view family, std::string_view group, std::string_view direction,
                                    std::string_view comparison) const {
  for (const auto& r : rows) {
    if (r.family == family && r.group == group && r.direction == direction && r.comparison == comparison) return &r;
  }
  return nullptr;
}

std::string CohortReport::to_csv() const {
  std::string out =
      "family,group,direction,comparison,method,n_first,n_second,center_first,center_second,statistic,p,p_adjusted,"
      "significant,note\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{:.6g},{:.6g},{},{:.6g},{:.6g},{},{}\n", r.family, r.group, r.direction,
                       r.comparison, r.method, r.n_first, r.n_second, r.center_first, r.center_second,
                       r.statistic ? fmt::format("{:.6g}", *r.statistic) : std::string{}, r.p_value, r.p_adjusted,
                       r.significant ? 1 : 0, r.note);
  }
  return out;
}

namespace {

using RegionMeans = std::array<std::optional<double>, 3>;

struct Participant {
  std::string id;
  double max_pressure = 0.0;
  double min_pressure = 0.0;
  // [direction][region] means of normalized pressure / speed.
  std::array<RegionMeans, 2> pressure_means;
  std::array<RegionMeans, 2> speed_means;
  RegionMeans tercile_speed;  // low, mid, high pressure stage
};

struct GroupData {
  std::vector<Participant> participants;
  std::vector<double> tip_curvatures;
  std::vector<double> frog_curvatures;
};

struct Accumulator {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> mean() const { return n ? std::optional(sum / static_cast<double>(n)) : std::nullopt; }
};

std::optional<std::pair<double, double>> bounds(std::span<const double> v) {
  if (v.empty()) return std::nullopt;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (!(*hi > *lo)) return std::nullopt;
  return std::pair{*lo, *hi};
}

GroupData analyse_group(std::span<const Trace> traces, const CohortConfig& config, std::string_view name) {
  if (traces.size() < 2) throw InsufficientDataError(fmt::format("insufficient group size for {} group", name));

  std::vector<std::string> order;
  std::map<std::string, std::vector<const Trace*>> by_participant;
  for (const auto& t : traces) {
    auto& list = by_participant[t.meta().participant];
    if (list.empty()) order.push_back(t.meta().participant);
    list.push_back(&t);
  }
  if (order.size() < 2) throw InsufficientDataError(fmt::format("insufficient group size for {} group", name));

  GroupData group;
  for (const auto& id : order) {
    struct Prepared {
      const Trace* trace;
      std::vector<std::optional<double>> speed;
      kinematics::Segmentation seg;
    };
    std::vector<Prepared> prepared;
    std::vector<double> pressures, speeds;
    for (const Trace* trace : by_participant[id]) {
      Prepared p{trace, kinematics::speed(*trace, config.kinematics.smoothing_window), {}};
      const auto turns = kinematics::detect_turns(*trace, config.kinematics);
      for (const auto& turn : turns) {
        if (!turn.curvature) continue;
        (turn.kind == kinematics::TurnKind::TipPeak ? group.tip_curvatures : group.frog_curvatures)
            .push_back(*turn.curvature);
      }
      p.seg = kinematics::segment(*trace, turns, config.kinematics);
      for (const auto& s : trace->samples()) pressures.push_back(s.pressure);
      for (const auto& v : p.speed) {
        if (v) speeds.push_back(*v);
      }
      prepared.push_back(std::move(p));
    }

    Participant part;
    part.id = id;
    if (!pressures.empty()) {
      const auto [lo, hi] = std::minmax_element(pressures.begin(), pressures.end());
      part.min_pressure = *lo;
      part.max_pressure = *hi;
    }
    const auto p_bounds = bounds(pressures);
    const auto s_bounds = bounds(speeds);

    std::array<std::array<Accumulator, 3>, 2> p_acc{}, s_acc{};
    std::vector<std::pair<double, double>> pressure_speed;  // normalized
    for (const auto& prep : prepared) {
      const auto samples = prep.trace->samples();
      for (const auto& stroke : prep.seg.strokes) {
        const std::size_t dir = stroke.direction == Direction::Down ? 0 : 1;
        for (std::size_t k = stroke.start_idx; k < std::min(stroke.end_idx, samples.size()); ++k) {
          const auto& s = samples[k];
          if (!s.position) continue;
          std::optional<double> pn, sn;
          if (p_bounds) pn = (s.pressure - p_bounds->first) / (p_bounds->second - p_bounds->first);
          if (s_bounds && prep.speed[k]) sn = (*prep.speed[k] - s_bounds->first) / (s_bounds->second - s_bounds->first);
          if (pn && sn) pressure_speed.emplace_back(*pn, *sn);
          const auto region = config.regions.classify(*s.position);
          if (!region) continue;
          const auto r = static_cast<std::size_t>(*region);
          if (pn) p_acc[dir][r].add(*pn);
          if (sn) s_acc[dir][r].add(*sn);
        }
      }
    }
    for (std::size_t d = 0; d < 2; ++d) {
      for (std::size_t r = 0; r < 3; ++r) {
        part.pressure_means[d][r] = p_acc[d][r].mean();
        part.speed_means[d][r] = s_acc[d][r].mean();
      }
    }
    if (!pressure_speed.empty()) {
      std::vector<double> pn;
      for (const auto& [p, s] : pressure_speed) pn.push_back(p);
      std::sort(pn.begin(), pn.end());
      const double cut1 = stats::quantile_sorted(pn, 1.0 / 3.0);
      const double cut2 = stats::quantile_sorted(pn, 2.0 / 3.0);
      std::array<Accumulator, 3> stage{};
      for (const auto& [p, s] : pressure_speed) stage[p <= cut1 ? 0 : (p <= cut2 ? 1 : 2)].add(s);
      for (std::size_t i = 0; i < 3; ++i) part.tercile_speed[i] = stage[i].mean();
    }
    group.participants.push_back(std::move(part));
  }
  return group;
}

ReportRow between_groups(std::string family, std::string comparison, std::span<const double> experts,
                         std::span<const double> beginners, double alpha) {
  ReportRow row;
  row.family = std::move(family);
  row.group = "expert-vs-beginner";
  row.comparison = std::move(comparison);
  row.method = "brunner-munzel";
  row.n_first = experts.size();
  row.n_second = beginners.size();
  row.center_first = mean_of(experts);
  row.center_second = mean_of(beginners);
  try {
    const auto r = stats::brunner_munzel(experts, beginners, alpha);
    row.statistic = r.statistic;
    row.p_value = r.p_value;
    row.p_adjusted = r.p_value;
    row.significant = r.significant();
    row.note = fmt::format("p_hat={:.4g}", *r.p_hat);
  } catch (const DegenerateStatisticError&) {
    // Complete separation: the statistic diverges and its p-value tends to 0.
    row.p_value = 0.0;
    row.p_adjusted = 0.0;
    row.significant = true;
    row.note = "complete separation";
  } catch (const InsufficientDataError& e) {
    row.note = e.what();
  }
  return row;
}

void within_group(std::vector<ReportRow>& rows, std::string family, std::string group, std::string direction,
                  const std::array<std::string_view, 3>& names, const std::vector<RegionMeans>& means, double alpha) {
  static constexpr std::array<std::pair<std::size_t, std::size_t>, 3> kPairs{{{0, 1}, {1, 2}, {0, 2}}};
  const std::size_t first_row = rows.size();
  for (const auto& [a, b] : kPairs) {
    std::vector<double> va, vb;
    for (const auto& m : means) {
      if (m[a] && m[b]) {
        va.push_back(*m[a]);
        vb.push_back(*m[b]);
      }
    }
    ReportRow row;
    row.family = family;
    row.group = group;
    row.direction = direction;
    row.comparison = fmt::format("{}-{}", names[a], names[b]);
    row.method = "wilcoxon";
    row.n_first = va.size();
    row.n_second = vb.size();
    row.center_first = mean_of(va);
    row.center_second = mean_of(vb);
    if (va.empty()) {
      row.note = "no paired data";
    } else {
      try {
        const auto r = stats::wilcoxon_paired(va, vb, alpha);
        row.statistic = r.statistic;
        row.p_value = r.p_value;
      } catch (const NoEffectError&) {
        row.note = "all differences zero";
      }
    }
    rows.push_back(std::move(row));
  }
  for (std::size_t i = first_row; i < rows.size(); ++i) {
    const double p = rows[i].p_value;
    rows[i].p_adjusted = stats::bonferroni(std::span(&p, 1), kPairs.size()).front();
    rows[i].significant = rows[i].p_adjusted < alpha;
  }
}

}  // namespace

CohortReport cohort_report(std::span<const Trace> experts, std::span<const Trace> beginners,
                           const CohortConfig& config) {
  config.regions.validate();
  const auto ex = analyse_group(experts, config, "expert");
  const auto be = analyse_group(beginners, config, "beginner");
  CohortReport report;

  auto collect = [](const GroupData& g, auto field) {
    std::vector<double> v;
    for (const auto& p : g.participants) v.push_back(field(p));
    return v;
  };
  auto max_of = [](const Participant& p) { return p.max_pressure; };
  auto min_of = [](const Participant& p) { return p.min_pressure; };
  auto range_of = [](const Participant& p) { return p.max_pressure - p.min_pressure; };
  report.rows.push_back(between_groups("pressure-extremes", "max", collect(ex, max_of), collect(be, max_of), config.alpha));
  report.rows.push_back(between_groups("pressure-extremes", "min", collect(ex, min_of), collect(be, min_of), config.alpha));
  report.rows.push_back(
      between_groups("pressure-extremes", "range", collect(ex, range_of), collect(be, range_of), config.alpha));

  static constexpr std::array<std::string_view, 3> kRegionNames{"frog", "middle", "tip"};
  static constexpr std::array<std::string_view, 3> kStageNames{"low", "mid", "high"};
  static constexpr std::array<std::string_view, 2> kDirections{"down", "up"};
  for (const auto* g : {&ex, &be}) {
    const std::string name = g == &ex ? "expert" : "beginner";
    for (std::size_t d = 0; d < 2; ++d) {
      std::vector<RegionMeans> pm, sm;
      for (const auto& p : g->participants) {
        pm.push_back(p.pressure_means[d]);
        sm.push_back(p.speed_means[d]);
      }
      within_group(report.rows, "region-pressure", name, std::string(kDirections[d]), kRegionNames, pm, config.alpha);
      within_group(report.rows, "region-speed", name, std::string(kDirections[d]), kRegionNames, sm, config.alpha);
    }
    std::vector<RegionMeans> tm;
    for (const auto& p : g->participants) tm.push_back(p.tercile_speed);
    within_group(report.rows, "tercile-speed", name, "", kStageNames, tm, config.alpha);
  }

  report.rows.push_back(
      between_groups("turn-curvature", "tip", ex.tip_curvatures, be.tip_curvatures, config.alpha));
  report.rows.push_back(
      between_groups("turn-curvature", "frog", ex.frog_curvatures, be.frog_curvatures, config.alpha));
  return report;
}

}  // namespace bowtrace::analytics
