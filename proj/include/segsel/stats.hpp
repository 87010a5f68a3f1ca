#pragma once

#include <cstddef>
#include <span>

namespace segsel {

struct WilcoxonResult {
  std::size_t n = 0;       ///< pairs with a non-zero difference
  double w_plus = 0.0;     ///< rank sum of positive differences (x - y > 0)
  double w_minus = 0.0;
  double statistic = 0.0;  ///< min(w_plus, w_minus)
  double p_value = 1.0;    ///< two-sided
  bool exact = false;
};

/// Two-sided paired Wilcoxon signed-rank test on x - y. Zero differences are dropped and
/// tied magnitudes share their average rank. Exact null distribution for n <= 20 (ties
/// included), normal approximation with tie-corrected variance above that.
/// Throws std::invalid_argument for unequal lengths or fewer than 5 non-zero differences.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  ///< sample standard deviation (n - 1); 0 for a single value
  double median = 0.0;
  double max = 0.0;
  double min = 0.0;
};

Summary summarize(std::span<const double> values);

}  // namespace segsel
