#pragma once

// Scalar statistics shared across modules: standard normal cdf / quantile and
// small descriptive helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace eivsc::stats {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

// Inverse standard normal cdf. Rational approximation (Wichura's PPND16),
// accurate to well below 1e-8 over (0, 1).
inline double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) {
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
  }
  const double q = prob - 0.5;
  double r;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                 45921.953931549871457) *
                    r +
                13731.693765509461125) *
                   r +
               1971.5909503065514427) *
                  r +
              133.14166789178437745) *
                 r +
             3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                 21213.794301586595867) *
                    r +
                5394.1960214247511077) *
                   r +
               687.1870074920579083) *
                  r +
              42.313330701600911252) *
                 r +
             1.0);
  }
  r = (q < 0.0) ? prob : 1.0 - prob;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
                  1.27045825245236838258) *
                     r +
                 3.64784832476320460504) *
                    r +
                5.7694972214606914055) *
                   r +
               4.6303378461565452959) *
                  r +
              1.42343711074968357734) /
            (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
                  0.14810397642748007459) *
                     r +
                 0.68976733498510000455) *
                    r +
                1.6763848301838038494) *
                   r +
               2.05319162663775882187) *
                  r +
              1.0);
  } else {
    r -= 5.0;
    value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
                  0.026532189526576123093) *
                     r +
                 0.29656057182850489123) *
                    r +
                1.7848265399172913358) *
                   r +
               5.4637849111641143699) *
                  r +
              6.6579046435011037772) /
            (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
                  7.868691311456132591e-4) *
                     r +
                 0.0148753612908506148525) *
                    r +
                0.13692988092273580531) *
                   r +
               0.59983220655588793769) *
                  r +
              1.0);
  }
  return (q < 0.0) ? -value : value;
}

// Two-sided normal critical value z_{alpha/2}.
inline double normal_two_sided_z(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
  return normal_quantile(1.0 - alpha / 2.0);
}

inline double mean(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("mean of empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_variance(const std::vector<double>& x) {
  if (x.size() < 2) throw std::invalid_argument("sample_variance needs >= 2 points");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline double median(std::vector<double> x) {
  if (x.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(x.begin(), x.end());
  const std::size_t m = x.size();
  return (m % 2 == 1) ? x[m / 2] : 0.5 * (x[m / 2 - 1] + x[m / 2]);
}

// Empirical quantile with linear interpolation between order statistics.
inline double percentile(std::vector<double> x, double level) {
  if (x.empty()) throw std::invalid_argument("percentile of empty sample");
  if (!(level >= 0.0 && level <= 1.0)) throw std::invalid_argument("percentile level in [0,1]");
  std::sort(x.begin(), x.end());
  const double pos = level * static_cast<double>(x.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= x.size()) return x.back();
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * x[lo] + w * x[lo + 1];
}

}  // namespace eivsc::stats
