#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace cpd {

/// Smoothing window for training curves (episodes).
inline constexpr std::size_t kSmoothingWindow = 20;

/// Trailing moving average; the first window-1 points average what is available.
inline std::vector<double> moving_average(std::span<const double> xs, std::size_t window = kSmoothingWindow) {
    std::vector<double> out(xs.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sum += xs[i];
        if (i >= window) sum -= xs[i - window];
        out[i] = sum / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

inline double mean(std::span<const double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Population standard deviation (denominator n).
inline double population_std(std::span<const double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace cpd
