#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsoc/linalg.hpp"
#include "mfsoc/time_grid.hpp"

namespace mfsoc {

/// Thrown when a solve leaves the trusted numerical range (non-finite values
/// or a Frobenius norm above the blow-up cap). `node` is the grid node at
/// which the state was last evaluated.
struct SolverError : std::runtime_error {
  SolverError(const std::string& what, int node_index)
      : std::runtime_error(what + " at node " + std::to_string(node_index)),
        node(node_index) {}
  int node;
};

/// Stage position within one RK4 step. Piecewise-constant data must be read
/// per interval (identical at all three positions); continuous node-stored
/// paths are read at the two nodes and averaged at kMid.
enum class Stage { kLeft, kMid, kRight };

struct StagePoint {
  double t;      ///< stage time
  int interval;  ///< grid interval (t_k, t_{k+1}) the step covers
  Stage pos;
};

/// Heterogeneous solver state: a list of dense blocks (vectors are n x 1).
using BlockState = std::vector<Matrix>;

struct IntegrateOptions {
  double norm_cap = 1e6;  ///< per-block Frobenius cap; exceeded => SolverError
};

namespace detail {

inline void check_state(const BlockState& y, int node, double cap) {
  for (const Matrix& blk : y) {
    if (!blk.allFinite()) throw SolverError("integrate: non-finite state", node);
    if (blk.norm() > cap) throw SolverError("integrate: state norm above blow-up cap", node);
  }
}

inline void set_sum(BlockState& dst, const BlockState& y, double c, const BlockState& k) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].noalias() = y[i] + c * k[i];
}

inline void accumulate_rk4(BlockState& y, double h, const BlockState& k1,
                           const BlockState& k2, const BlockState& k3,
                           const BlockState& k4) {
  const double c = h / 6.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i].noalias() += c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

}  // namespace detail

/// Classic RK4 over the grid, forward in time. `rhs(sp, y, dy)` writes the
/// time-derivative of `y` at the stage point `sp`; `visit(node, y)` is called
/// at every node including node 0. State blocks keep their shapes throughout.
template <class Rhs, class Visit>
void rk4_forward(const TimeGrid& grid, BlockState y, Rhs&& rhs, Visit&& visit,
                 const IntegrateOptions& opts = {}) {
  const double h = grid.dt();
  BlockState k1 = y, k2 = y, k3 = y, k4 = y, tmp = y;
  detail::check_state(y, 0, opts.norm_cap);
  visit(0, static_cast<const BlockState&>(y));
  for (int k = 0; k < grid.steps(); ++k) {
    const double t = grid.node(k);
    rhs(StagePoint{t, k, Stage::kLeft}, y, k1);
    detail::set_sum(tmp, y, 0.5 * h, k1);
    rhs(StagePoint{t + 0.5 * h, k, Stage::kMid}, tmp, k2);
    detail::set_sum(tmp, y, 0.5 * h, k2);
    rhs(StagePoint{t + 0.5 * h, k, Stage::kMid}, tmp, k3);
    detail::set_sum(tmp, y, h, k3);
    rhs(StagePoint{grid.node(k + 1), k, Stage::kRight}, tmp, k4);
    detail::accumulate_rk4(y, h, k1, k2, k3, k4);
    detail::check_state(y, k + 1, opts.norm_cap);
    visit(k + 1, static_cast<const BlockState&>(y));
  }
}

/// RK4 backward in time from terminal data at the last node. `rhs` is the
/// mathematical dy/dt (the reversal happens here); `visit` is called at every
/// node from `steps` down to 0.
template <class Rhs, class Visit>
void rk4_backward(const TimeGrid& grid, BlockState y, Rhs&& rhs, Visit&& visit,
                  const IntegrateOptions& opts = {}) {
  const double h = grid.dt();
  BlockState k1 = y, k2 = y, k3 = y, k4 = y, tmp = y;
  detail::check_state(y, grid.steps(), opts.norm_cap);
  visit(grid.steps(), static_cast<const BlockState&>(y));
  for (int k = grid.steps() - 1; k >= 0; --k) {
    const double t1 = grid.node(k + 1);
    rhs(StagePoint{t1, k, Stage::kRight}, y, k1);
    detail::set_sum(tmp, y, -0.5 * h, k1);
    rhs(StagePoint{t1 - 0.5 * h, k, Stage::kMid}, tmp, k2);
    detail::set_sum(tmp, y, -0.5 * h, k2);
    rhs(StagePoint{t1 - 0.5 * h, k, Stage::kMid}, tmp, k3);
    detail::set_sum(tmp, y, -h, k3);
    rhs(StagePoint{grid.node(k), k, Stage::kLeft}, tmp, k4);
    detail::accumulate_rk4(y, -h, k1, k2, k3, k4);
    detail::check_state(y, k, opts.norm_cap);
    visit(k, static_cast<const BlockState&>(y));
  }
}

/// Backward solve that stores the whole path, indexed by node.
template <class Rhs>
[[nodiscard]] std::vector<BlockState> rk4_backward_path(const TimeGrid& grid,
                                                        BlockState terminal, Rhs&& rhs,
                                                        const IntegrateOptions& opts = {}) {
  std::vector<BlockState> path(grid.n_nodes());
  rk4_backward(
      grid, std::move(terminal), rhs,
      [&](int node, const BlockState& y) { path[node] = y; }, opts);
  return path;
}

/// Forward solve that stores the whole path, indexed by node.
template <class Rhs>
[[nodiscard]] std::vector<BlockState> rk4_forward_path(const TimeGrid& grid, BlockState init,
                                                       Rhs&& rhs,
                                                       const IntegrateOptions& opts = {}) {
  std::vector<BlockState> path(grid.n_nodes());
  rk4_forward(
      grid, std::move(init), rhs,
      [&](int node, const BlockState& y) { path[node] = y; }, opts);
  return path;
}

}  // namespace mfsoc
