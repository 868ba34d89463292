#include "bowtrace/kinematics.hpp"

#include "bowtrace/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace bowtrace::kinematics {

std::vector<std::optional<double>> speed(const Trace& trace, std::size_t smoothing_window) {
  const auto samples = trace.samples();
  const std::size_t n = samples.size();
  const std::size_t half = smoothing_window / 2;

  std::vector<std::optional<double>> smoothed(n);
  for (std::size_t i = half; i + half < n; ++i) {
    double sum = 0.0;
    bool ok = true;
    for (std::size_t j = i - half; j <= i + half; ++j) {
      if (!samples[j].position) {
        ok = false;
        break;
      }
      sum += *samples[j].position;
    }
    if (ok) smoothed[i] = sum / static_cast<double>(2 * half + 1);
  }

  std::vector<std::optional<double>> out(n);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (!smoothed[i - 1] || !smoothed[i + 1] || !samples[i].position) continue;
    out[i] = std::abs(*smoothed[i + 1] - *smoothed[i - 1]) / (samples[i + 1].t - samples[i - 1].t);
  }
  return out;
}

Trace with_speed(const Trace& trace, std::size_t smoothing_window) {
  const auto v = speed(trace, smoothing_window);
  std::vector<Sample> samples(trace.samples().begin(), trace.samples().end());
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].speed = v[i];
  return trace.with_samples(std::move(samples));
}

std::optional<double> curvature_at(const Trace& trace, std::size_t idx, std::size_t half_window) {
  const auto samples = trace.samples();
  if (idx >= samples.size()) return std::nullopt;
  const std::size_t lo = idx >= half_window ? idx - half_window : 0;
  const std::size_t hi = std::min(samples.size() - 1, idx + half_window);
  const double t0 = samples[idx].t;

  std::vector<double> tau, x;
  for (std::size_t j = lo; j <= hi; ++j) {
    if (!samples[j].position) continue;
    tau.push_back(samples[j].t - t0);
    x.push_back(*samples[j].position);
  }
  if (tau.size() < 5) return std::nullopt;

  Eigen::MatrixXd design(tau.size(), 3);
  Eigen::VectorXd rhs(tau.size());
  for (std::size_t r = 0; r < tau.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    design(row, 0) = tau[r] * tau[r];
    design(row, 1) = tau[r];
    design(row, 2) = 1.0;
    rhs(row) = x[r];
  }
  const Eigen::Vector3d coef = design.colPivHouseholderQr().solve(rhs);
  const double slope = coef(1);
  return std::abs(2.0 * coef(0)) / std::pow(1.0 + slope * slope, 1.5);
}

namespace {

struct Candidate {
  std::size_t idx;  // trace sample index
  double value;     // position, negated for valleys
  double t;
  double prominence;
  TurnKind kind;
};

// Peaks of `v` (plateaus collapse to their middle sample) with topographic
// prominence: height above the higher of the two lowest points reached before
// meeting higher ground on either side.
std::vector<Candidate> find_peaks(std::span<const double> v, std::span<const std::size_t> idx,
                                  std::span<const double> t, TurnKind kind, double min_prominence) {
  std::vector<Candidate> out;
  const std::size_t n = v.size();
  std::size_t i = 1;
  while (i + 1 < n) {
    if (!(v[i] > v[i - 1])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < n && v[j + 1] == v[i]) ++j;
    if (j + 1 >= n) break;
    if (v[j + 1] < v[i]) {
      const std::size_t peak = (i + j) / 2;
      const double height = v[peak];
      double left_min = height;
      for (std::size_t k = i; k-- > 0;) {
        if (v[k] > height) break;
        left_min = std::min(left_min, v[k]);
      }
      double right_min = height;
      for (std::size_t k = j + 1; k < n; ++k) {
        if (v[k] > height) break;
        right_min = std::min(right_min, v[k]);
      }
      const double prominence = height - std::max(left_min, right_min);
      if (prominence >= min_prominence) out.push_back({idx[peak], height, t[peak], prominence, kind});
    }
    i = j + 1;
  }
  return out;
}

// Keeps the most extreme candidates first, dropping any within `separation`
// seconds of an already kept one.
std::vector<Candidate> enforce_distance(std::vector<Candidate> peaks, double separation) {
  std::vector<Candidate> order = peaks;
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.value > b.value; });
  std::vector<Candidate> kept;
  for (const auto& c : order) {
    const bool clash = std::any_of(kept.begin(), kept.end(),
                                   [&](const auto& k) { return std::abs(k.t - c.t) < separation; });
    if (!clash) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.idx < b.idx; });
  return kept;
}

void enforce_alternation(std::vector<Candidate>& turns) {
  std::vector<Candidate> out;
  for (const auto& c : turns) {
    if (!out.empty() && out.back().kind == c.kind) {
      if (c.value > out.back().value) out.back() = c;
      continue;
    }
    out.push_back(c);
  }
  turns = std::move(out);
}

}  // namespace

std::vector<TurnPoint> detect_turns(const Trace& trace, std::size_t first, std::size_t last,
                                    const KinematicsConfig& config) {
  const auto samples = trace.samples();
  last = std::min(last, samples.size());

  std::vector<Candidate> all;
  auto flush_run = [&](const std::vector<std::size_t>& run) {
    if (run.size() < 3) return;
    std::vector<double> up, down, t;
    for (const auto k : run) {
      up.push_back(*samples[k].position);
      down.push_back(-*samples[k].position);
      t.push_back(samples[k].t);
    }
    auto peaks = enforce_distance(find_peaks(up, run, t, TurnKind::TipPeak, config.prominence), config.min_separation);
    auto valleys =
        enforce_distance(find_peaks(down, run, t, TurnKind::FrogValley, config.prominence), config.min_separation);
    all.insert(all.end(), peaks.begin(), peaks.end());
    all.insert(all.end(), valleys.begin(), valleys.end());
  };

  std::vector<std::size_t> run;
  for (std::size_t k = first; k < last; ++k) {
    if (!samples[k].position) continue;
    if (!run.empty() && samples[k].t - samples[run.back()].t > config.max_gap) {
      flush_run(run);
      run.clear();
    }
    run.push_back(k);
  }
  flush_run(run);

  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.idx < b.idx; });
  enforce_alternation(all);

  // Opposite-kind turns closer than the separation: drop the weaker one.
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i + 1 < all.size(); ++i) {
      if (all[i + 1].t - all[i].t < config.min_separation) {
        const std::size_t drop = all[i].prominence < all[i + 1].prominence ? i : i + 1;
        all.erase(all.begin() + static_cast<std::ptrdiff_t>(drop));
        enforce_alternation(all);
        changed = true;
        break;
      }
    }
  }

  std::vector<TurnPoint> turns;
  turns.reserve(all.size());
  for (const auto& c : all) turns.push_back({c.idx, c.kind, curvature_at(trace, c.idx, config.curvature_half_window)});
  return turns;
}

std::vector<TurnPoint> detect_turns(const Trace& trace, const KinematicsConfig& config) {
  return detect_turns(trace, 0, trace.size(), config);
}

double excursion(const Trace& trace, std::size_t first, std::size_t last) {
  const auto samples = trace.samples();
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

Segmentation segment(const Trace& trace, std::span<const TurnPoint> turns, const KinematicsConfig& config) {
  Segmentation seg;
  const auto samples = trace.samples();
  const std::size_t n = samples.size();
  if (n < 2) return seg;

  // Occlusion gaps longer than max_gap, as [last valid before, first valid after].
  std::vector<std::pair<std::size_t, std::size_t>> gaps;
  std::optional<std::size_t> prev_valid;
  for (std::size_t k = 0; k < n; ++k) {
    if (!samples[k].position) continue;
    if (prev_valid && samples[k].t - samples[*prev_valid].t > config.max_gap) gaps.emplace_back(*prev_valid, k);
    prev_valid = k;
  }

  auto make_stroke = [&](std::size_t start, std::size_t end, Direction dir, bool complete) {
    Stroke s;
    s.direction = dir;
    s.start_idx = start;
    s.end_idx = end;
    s.t_start = samples[start].t;
    s.t_end = samples[std::min(end, n - 1)].t;
    s.complete = complete;
    for (const auto& [a, b] : gaps) {
      if (a < end && b >= start) s.low_confidence = true;
    }
    return s;
  };
  auto span_of = [&](std::size_t start, std::size_t end) { return excursion(trace, start, std::min(end + 1, n)); };

  if (turns.empty()) {
    std::optional<double> first_pos, last_pos;
    for (const auto& s : samples) {
      if (!s.position) continue;
      if (!first_pos) first_pos = s.position;
      last_pos = s.position;
    }
    const Direction dir = first_pos && *last_pos < *first_pos ? Direction::Up : Direction::Down;
    seg.strokes.push_back(make_stroke(0, n, dir, false));
    return seg;
  }

  auto leaving = [](TurnKind k) { return k == TurnKind::FrogValley ? Direction::Down : Direction::Up; };
  auto arriving = [](TurnKind k) { return k == TurnKind::TipPeak ? Direction::Down : Direction::Up; };

  double reference = 0.0;
  for (std::size_t i = 0; i + 1 < turns.size(); ++i)
    reference = std::max(reference, span_of(turns[i].idx, turns[i + 1].idx));
  const double lead_span = span_of(0, turns.front().idx);
  const double tail_span = span_of(turns.back().idx, n);
  if (turns.size() == 1) reference = std::max(lead_span, tail_span);

  const bool enough_turns = turns.size() >= 2;
  if (turns.front().idx > 0) {
    const bool complete = enough_turns && lead_span >= config.completion_ratio * reference;
    seg.strokes.push_back(make_stroke(0, turns.front().idx, arriving(turns.front().kind), complete));
  }
  for (std::size_t i = 0; i + 1 < turns.size(); ++i)
    seg.strokes.push_back(make_stroke(turns[i].idx, turns[i + 1].idx, leaving(turns[i].kind), true));
  if (turns.back().idx + 1 < n) {
    const bool complete = enough_turns && tail_span >= config.completion_ratio * reference;
    seg.strokes.push_back(make_stroke(turns.back().idx, n, leaving(turns.back().kind), complete));
  }

  if (!enough_turns) return seg;
  for (std::size_t i = 0; i + 1 < seg.strokes.size();) {
    const auto& a = seg.strokes[i];
    const auto& b = seg.strokes[i + 1];
    if (a.direction == Direction::Down && b.direction == Direction::Up && a.complete && b.complete) {
      seg.round_trips.push_back(RoundTrip{a, b, seg.round_trips.size()});
      i += 2;
    } else {
      ++i;
    }
  }
  return seg;
}

}  // namespace bowtrace::kinematics
