#pragma once

// Naive reference computations used to cross-check the library. Written
// directly from the metric definitions with no shared code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

inline bool in_equal_width_bin(double r, std::size_t m, std::size_t bins) {
  const double lo = static_cast<double>(m) / static_cast<double>(bins);
  const double hi = static_cast<double>(m + 1) / static_cast<double>(bins);
  if (m + 1 == bins) return r >= lo && r <= 1.0;
  return r >= lo && r < hi;
}

/// Rank of the first member of r's tie group = number of strictly smaller scores.
inline std::size_t quantile_bin(const std::vector<double>& scores, std::size_t i, std::size_t bins) {
  std::size_t smaller = 0;
  for (double s : scores) smaller += s < scores[i] ? 1 : 0;
  return smaller * bins / scores.size();
}

inline std::vector<std::vector<std::size_t>> members(const std::vector<double>& scores,
                                                     std::size_t bins, bool quantile) {
  std::vector<std::vector<std::size_t>> out(bins);
  for (std::size_t m = 0; m < bins; ++m) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool in = quantile ? quantile_bin(scores, i, bins) == m : in_equal_width_bin(scores[i], m, bins);
      if (in) out[m].push_back(i);
    }
  }
  return out;
}

inline double ece(const std::vector<double>& r, const std::vector<int>& y, std::size_t bins, bool quantile) {
  double total = 0.0;
  for (const auto& bin : members(r, bins, quantile)) {
    double sy = 0.0;
    double sr = 0.0;
    for (std::size_t i : bin) {
      sy += y[i];
      sr += r[i];
    }
    total += std::fabs(sy - sr);
  }
  return total / static_cast<double>(r.size());
}

inline double brier(const std::vector<double>& r, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) total += (r[i] - y[i]) * (r[i] - y[i]);
  return total / static_cast<double>(r.size());
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counted half.
inline double auc(const std::vector<double>& r, const std::vector<int>& y) {
  double good = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (r[i] > r[j]) good += 1.0;
      if (r[i] == r[j]) good += 0.5;
    }
  }
  return good / pairs;
}

inline double accuracy(const std::vector<double>& r, const std::vector<int>& y, double tau) {
  double correct = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) correct += ((r[i] > tau ? 1 : 0) == y[i]) ? 1.0 : 0.0;
  return correct / static_cast<double>(r.size());
}

inline double sce(const std::vector<double>& r, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) total += r[i] - y[i];
  return total / static_cast<double>(r.size());
}

inline double confidence_bias(const std::vector<double>& r, const std::vector<int>& y, std::size_t bins,
                              double tau) {
  double total = 0.0;
  for (const auto& bin : members(r, bins, false)) {
    if (bin.empty()) continue;
    double conf = 0.0;
    double acc = 0.0;
    for (std::size_t i : bin) {
      conf += r[i] > 1.0 - r[i] ? r[i] : 1.0 - r[i];
      acc += ((r[i] > tau ? 1 : 0) == y[i]) ? 1.0 : 0.0;
    }
    const double size = static_cast<double>(bin.size());
    total += size / static_cast<double>(r.size()) * (conf / size - acc / size);
  }
  return total;
}

/// Exhaustive scan of every threshold candidate with the documented tie-break.
inline double best_threshold(const std::vector<double>& r, const std::vector<int>& y) {
  std::vector<double> sorted = r;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> candidates = {0.0, 0.5, 1.0};
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] != sorted[i - 1]) candidates.push_back(sorted[i - 1] + (sorted[i] - sorted[i - 1]) / 2.0);
  }
  double best = 0.5;
  double best_acc = -1.0;
  for (double t : candidates) {
    const double acc = accuracy(r, y, t);
    const double d = std::fabs(t - 0.5);
    const double bd = std::fabs(best - 0.5);
    if (acc > best_acc || (acc == best_acc && (d < bd || (d == bd && t < best)))) {
      best = t;
      best_acc = acc;
    }
  }
  return best;
}

}  // namespace oracle
