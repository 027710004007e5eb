#pragma once

#include <optional>
#include <string_view>

namespace dwols {

enum class BmiCategory { underweight, normal, overweight, obese };

inline BmiCategory bmi_category(double bmi) {
  if (bmi < 18.5) return BmiCategory::underweight;
  if (bmi < 25.0) return BmiCategory::normal;
  if (bmi < 30.0) return BmiCategory::overweight;
  return BmiCategory::obese;
}

inline std::string_view to_string(BmiCategory c) {
  switch (c) {
    case BmiCategory::underweight: return "underweight";
    case BmiCategory::normal: return "normal";
    case BmiCategory::overweight: return "overweight";
    case BmiCategory::obese: return "obese";
  }
  return "?";
}

inline constexpr double kBmiValidMin = 15.0;
inline constexpr double kBmiValidMax = 50.0;

// A move into a different category counts as detrimental unless it ends in the
// normal range or goes from obese to overweight.
inline bool detrimental_change(double bmi0, double bmi_t) {
  const auto from = bmi_category(bmi0);
  const auto to = bmi_category(bmi_t);
  return from != to && to != BmiCategory::normal &&
         !(from == BmiCategory::obese && to == BmiCategory::overweight);
}

// Weight-change utility; higher is better. Missing when either BMI falls
// outside the valid measurement range.
inline std::optional<double> bmi_utility(double bmi0, double bmi_t) {
  const auto valid = [](double b) { return b >= kBmiValidMin && b <= kBmiValidMax; };
  if (!valid(bmi0) || !valid(bmi_t)) return std::nullopt;

  const double pct_increase = 100.0 * (bmi_t - bmi0) / bmi0;
  const bool normal0 = bmi0 >= 18.5 && bmi0 <= 24.9;
  const bool reward_gain = bmi0 < 18.5 || (normal0 && bmi_t < 20.0);
  const bool penalize_gain = bmi0 >= 25.0 || (normal0 && bmi_t > 23.5);

  double u = 100.0;
  if (detrimental_change(bmi0, bmi_t)) u -= 5.0;
  if (reward_gain) u += pct_increase;
  if (penalize_gain) u -= pct_increase;
  return u;
}

}  // namespace dwols
