#include "bowtrace/stats.hpp"

#include "bowtrace/errors.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bowtrace::stats {

std::string_view to_string(Method m) { return m == Method::Exact ? "exact" : "approximate"; }

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

TestResult brunner_munzel(std::span<const double> x, std::span<const double> y, double alpha) {
  const std::size_t nx = x.size();
  const std::size_t ny = y.size();
  if (nx < 2 || ny < 2) throw InsufficientDataError("Brunner-Munzel needs at least two values per group");

  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const auto pooled_ranks = midranks(pooled);
  const auto rx = midranks(x);
  const auto ry = midranks(y);

  const double fx = static_cast<double>(nx);
  const double fy = static_cast<double>(ny);
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < nx; ++i) mean_x += pooled_ranks[i];
  for (std::size_t j = 0; j < ny; ++j) mean_y += pooled_ranks[nx + j];
  mean_x /= fx;
  mean_y /= fy;

  double var_x = 0.0, var_y = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    const double d = pooled_ranks[i] - rx[i] - mean_x + (fx + 1.0) / 2.0;
    var_x += d * d;
  }
  for (std::size_t j = 0; j < ny; ++j) {
    const double d = pooled_ranks[nx + j] - ry[j] - mean_y + (fy + 1.0) / 2.0;
    var_y += d * d;
  }
  var_x /= fx - 1.0;
  var_y /= fy - 1.0;

  TestResult r;
  r.method = Method::Approximate;
  r.n_x = nx;
  r.n_y = ny;
  r.alpha = alpha;
  r.p_hat = (mean_y - (fy + 1.0) / 2.0) / fx;

  const double spread = fx * var_x + fy * var_y;
  if (spread <= 0.0) {
    if (*r.p_hat == 0.5) {
      r.statistic = 0.0;
      r.p_value = 1.0;
      return r;
    }
    throw DegenerateStatisticError(
        fmt::format("Brunner-Munzel rank variance is zero with p_hat = {} (complete separation)", *r.p_hat));
  }

  r.statistic = fx * fy * (mean_y - mean_x) / ((fx + fy) * std::sqrt(spread));
  r.df = spread * spread / ((fx * var_x) * (fx * var_x) / (fx - 1.0) + (fy * var_y) * (fy * var_y) / (fy - 1.0));
  const boost::math::students_t dist(*r.df);
  const double lower = boost::math::cdf(dist, r.statistic);
  const double upper = boost::math::cdf(boost::math::complement(dist, r.statistic));
  r.p_value = std::min(1.0, 2.0 * std::min(lower, upper));
  return r;
}

TestResult wilcoxon_signed_rank(std::span<const double> differences, double alpha, WilcoxonPath path) {
  std::vector<double> nonzero;
  for (const double d : differences) {
    if (!std::isfinite(d)) throw InvariantError("non-finite difference in Wilcoxon input");
    if (d != 0.0) nonzero.push_back(d);
  }
  if (nonzero.empty()) throw NoEffectError("all paired differences are zero");

  const std::size_t n = nonzero.size();
  std::vector<double> magnitudes(n);
  std::transform(nonzero.begin(), nonzero.end(), magnitudes.begin(), [](double d) { return std::abs(d); });
  const auto ranks = midranks(magnitudes);

  double w_plus = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (nonzero[i] > 0.0) w_plus += ranks[i];
  }

  TestResult r;
  r.statistic = w_plus;
  r.n_x = n;
  r.alpha = alpha;

  const bool exact = path == WilcoxonPath::ForceExact || (path == WilcoxonPath::Auto && n <= kExactWilcoxonLimit);
  if (exact) {
    if (n > 30) throw InvariantError("exact signed-rank enumeration limited to n <= 30");
    // Midranks are multiples of 1/2, so doubled ranks are integers and the
    // null distribution of 2 W+ is a subset-sum count.
    std::vector<std::size_t> doubled(n);
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      doubled[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
      total += doubled[i];
    }
    std::vector<double> counts(total + 1, 0.0);
    counts[0] = 1.0;
    for (const auto r2 : doubled) {
      for (std::size_t s = total; s >= r2; --s) counts[s] += counts[s - r2];
    }
    const auto observed = static_cast<std::size_t>(std::llround(2.0 * w_plus));
    double lower = 0.0, upper = 0.0;
    for (std::size_t s = 0; s <= total; ++s) {
      if (s <= observed) lower += counts[s];
      if (s >= observed) upper += counts[s];
    }
    const double patterns = std::ldexp(1.0, static_cast<int>(n));
    r.method = Method::Exact;
    r.p_value = std::min(1.0, 2.0 * std::min(lower / patterns, upper / patterns));
    return r;
  }

  const double fn = static_cast<double>(n);
  const double mean = fn * (fn + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double variance = fn * (fn + 1.0) * (2.0 * fn + 1.0) / 24.0 - tie_term / 48.0;
  const double deviation = std::max(0.0, std::abs(w_plus - mean) - 0.5);
  const double z = variance > 0.0 ? deviation / std::sqrt(variance) : 0.0;
  r.method = Method::Approximate;
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

TestResult wilcoxon_paired(std::span<const double> x, std::span<const double> y, double alpha) {
  if (x.size() != y.size()) throw InvariantError("paired vectors differ in length");
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
  return wilcoxon_signed_rank(d, alpha);
}

std::vector<double> bonferroni(std::span<const double> p_values, std::size_t m) {
  if (m < 1 || m < p_values.size()) throw InvariantError("Bonferroni count must be >= 1 and >= number of p-values");
  std::vector<double> out;
  out.reserve(p_values.size());
  for (const double p : p_values) out.push_back(std::min(1.0, p * static_cast<double>(m)));
  return out;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InsufficientDataError("quantile of empty data");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

BoxSummary box_summary(std::span<const double> values) {
  if (values.empty()) throw InsufficientDataError("box summary of empty data");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  BoxSummary b;
  b.n = sorted.size();
  b.min = sorted.front();
  b.max = sorted.back();
  b.q1 = quantile_sorted(sorted, 0.25);
  b.median = quantile_sorted(sorted, 0.5);
  b.q3 = quantile_sorted(sorted, 0.75);
  b.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return b;
}

}  // namespace bowtrace::stats
