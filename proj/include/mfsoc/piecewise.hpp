#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mfsoc/time_grid.hpp"

namespace mfsoc {

/// Piecewise-constant path: segment i holds `value(i)` on
/// [start(i), start(i+1)), the last segment extending to the horizon.
///
/// Sampling convention (used everywhere): the value attached to a grid
/// interval (t_k, t_{k+1}) is the left-limit at any interior point, which for
/// breakpoints aligned with nodes is simply the segment containing the
/// interval. `at_node(grid, k)` reports the value of the interval right of
/// node k (the last node reports the final interval), so reported node paths
/// are right-continuous.
template <class Value>
class Piecewise {
 public:
  Piecewise() = default;

  Piecewise(std::vector<double> starts, std::vector<Value> values)
      : starts_(std::move(starts)), values_(std::move(values)) {
    if (starts_.empty() || starts_.size() != values_.size())
      throw std::invalid_argument("Piecewise: need one value per segment start");
    if (starts_.front() != 0.0)
      throw std::invalid_argument("Piecewise: first segment must start at t = 0");
    if (std::adjacent_find(starts_.begin(), starts_.end(),
                           [](double a, double b) { return a >= b; }) != starts_.end())
      throw std::invalid_argument("Piecewise: segment starts must be strictly increasing");
  }

  static Piecewise constant(Value v) {
    return Piecewise({0.0}, {std::move(v)});
  }

  [[nodiscard]] int n_segments() const { return static_cast<int>(starts_.size()); }
  [[nodiscard]] double start(int i) const { return starts_[i]; }
  [[nodiscard]] const Value& value(int i) const { return values_[i]; }
  [[nodiscard]] const std::vector<double>& starts() const { return starts_; }

  /// Right-continuous lookup: segment with the greatest start <= t.
  [[nodiscard]] const Value& at_time(double t) const {
    auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
    auto idx = static_cast<int>(it - starts_.begin()) - 1;
    return values_[idx < 0 ? 0 : idx];
  }

  /// Value on the open grid interval (t_k, t_{k+1}).
  [[nodiscard]] const Value& on_interval(const TimeGrid& grid, int k) const {
    return at_time(grid.node(k) + 0.5 * grid.dt());
  }

  /// Node-sampled value (right-continuous; last node = last interval).
  [[nodiscard]] const Value& at_node(const TimeGrid& grid, int k) const {
    return on_interval(grid, grid.node_interval(k));
  }

  /// True if every breakpoint coincides with a grid node (within
  /// 1e-9 * dt). Required before sampling onto the grid.
  [[nodiscard]] bool aligned_with(const TimeGrid& grid) const {
    for (double s : starts_) {
      const double steps = s / grid.dt();
      if (std::abs(steps - std::round(steps)) > 1e-9) return false;
      if (s >= grid.horizon()) return false;
    }
    return true;
  }

 private:
  std::vector<double> starts_;
  std::vector<Value> values_;
};

/// Combine piecewise paths through `f`, segment-wise on the union of their
/// breakpoints: result(t) = f(ps.at_time(t)...).
template <class Result, class F, class... Paths>
[[nodiscard]] Piecewise<Result> combine(F&& f, const Paths&... ps) {
  std::vector<double> merged;
  (merged.insert(merged.end(), ps.starts().begin(), ps.starts().end()), ...);
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  std::vector<Result> values;
  values.reserve(merged.size());
  for (double s : merged) values.push_back(f(ps.at_time(s)...));
  return Piecewise<Result>(std::move(merged), std::move(values));
}

}  // namespace mfsoc
