#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace bowtrace::stats {

enum class Method { Exact, Approximate };

std::string_view to_string(Method m);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;  // two-sided
  Method method = Method::Exact;
  std::size_t n_x = 0;
  std::size_t n_y = 0;  // 0 for one-sample tests
  double alpha = 0.05;
  /// Brunner-Munzel only: estimate of P(X < Y) + 0.5 P(X = Y).
  std::optional<double> p_hat;
  /// Brunner-Munzel only: Satterthwaite-type degrees of freedom.
  std::optional<double> df;

  bool significant() const noexcept { return p_value < alpha; }
};

/// Midranks (1-based) of `values`; ties share the mean of their ranks.
std::vector<double> midranks(std::span<const double> values);

/// Two-sided Brunner-Munzel test of P(X<Y) + P(X=Y)/2 = 1/2 with the
/// t-approximation. Requires |x|, |y| >= 2. Throws DegenerateStatisticError
/// when the rank variance is zero and p_hat != 1/2 (complete separation);
/// when the variance is zero with p_hat == 1/2 (all values tied) the result
/// is statistic 0, p 1.
TestResult brunner_munzel(std::span<const double> x, std::span<const double> y, double alpha = 0.05);

/// Largest n for which the signed-rank p-value is computed exactly.
inline constexpr std::size_t kExactWilcoxonLimit = 15;

enum class WilcoxonPath { Auto, ForceExact, ForceApproximate };

/// Wilcoxon signed-rank test on paired differences. Zeros are dropped,
/// tied magnitudes get midranks. The statistic is W+ (sum of positive
/// ranks). Exact two-sided p = min(1, 2 min(P(W+ <= w), P(W+ >= w))) over
/// all 2^n sign assignments for n <= 15; otherwise the normal approximation
/// with tie and continuity corrections. Throws NoEffectError when every
/// difference is zero.
TestResult wilcoxon_signed_rank(std::span<const double> differences, double alpha = 0.05,
                                WilcoxonPath path = WilcoxonPath::Auto);

/// Convenience: differences x[i] - y[i].
TestResult wilcoxon_paired(std::span<const double> x, std::span<const double> y, double alpha = 0.05);

/// p -> min(1, p * m). Requires m >= 1 and m >= p_values.size().
std::vector<double> bonferroni(std::span<const double> p_values, std::size_t m);

struct BoxSummary {
  std::size_t n = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;

  friend bool operator==(const BoxSummary&, const BoxSummary&) = default;
};

/// Quantile by linear interpolation between order statistics:
/// h = (n - 1) q, result = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
double quantile_sorted(std::span<const double> sorted, double q);

/// Five-number summary plus mean. Throws InsufficientDataError on empty input.
BoxSummary box_summary(std::span<const double> values);

}  // namespace bowtrace::stats
