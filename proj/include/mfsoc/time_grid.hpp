#pragma once

#include <cmath>
#include <stdexcept>

namespace mfsoc {

/// Uniform grid on [0, T] with `steps` intervals and `steps + 1` nodes.
///
/// Every solver and every evaluation in this project shares one grid:
/// backward sweeps store values at the nodes, forward sweeps read them back
/// at the nodes, and piecewise-constant data is sampled once per interval.
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw std::invalid_argument("TimeGrid: horizon must be positive and finite");
    if (steps < 1) throw std::invalid_argument("TimeGrid: steps must be >= 1");
  }

  [[nodiscard]] double horizon() const { return horizon_; }
  [[nodiscard]] int steps() const { return steps_; }
  [[nodiscard]] int n_nodes() const { return steps_ + 1; }
  [[nodiscard]] double dt() const { return horizon_ / steps_; }
  [[nodiscard]] double node(int k) const { return horizon_ * k / steps_; }

  /// Interval whose node-sampled data represents node `k` (last node maps to
  /// the last interval; see the left-limit convention in Piecewise).
  [[nodiscard]] int node_interval(int k) const { return k < steps_ ? k : steps_ - 1; }

 private:
  double horizon_;
  int steps_;
};

}  // namespace mfsoc
