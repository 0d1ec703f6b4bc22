#pragma once

// Time-grid machinery: sequences indexed 0..T with an index-0 anchor,
// injection restriction / piecewise-constant prolongation, and the level
// hierarchy used by the multigrid cycles.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pintgru/numerics.hpp"

namespace pintgru {

// A time-indexed sequence of equal-dimension states. Entry 0 is the anchor
// (initial state); steps() is the number of time steps, so there are
// steps()+1 entries.
class Sequence {
 public:
  Sequence() = default;
  Sequence(std::size_t steps, std::size_t dim) : entries_(steps + 1, DenseVector(dim)) {}

  std::size_t steps() const { return entries_.empty() ? 0 : entries_.size() - 1; }
  std::size_t dim() const { return entries_.empty() ? 0 : entries_.front().dim(); }

  DenseVector& operator[](std::size_t t) { return entries_[t]; }
  const DenseVector& operator[](std::size_t t) const { return entries_[t]; }

  std::vector<DenseVector>& entries() { return entries_; }
  const std::vector<DenseVector>& entries() const { return entries_; }

  void fill(double v) {
    for (auto& e : entries_)
      for (auto& x : e.values) x = v;
  }

 private:
  std::vector<DenseVector> entries_;
};

// L2 norm over time indices >= 1 (the anchor is fixed data, not part of the
// unknowns). Per-index squared norms are folded in time order.
inline double seq_l2_norm(const Sequence& s) {
  std::vector<double> parts;
  parts.reserve(s.steps());
  for (std::size_t t = 1; t <= s.steps(); ++t) parts.push_back(squared_norm(s[t]));
  return std::sqrt(ordered_sum({parts.data(), parts.size()}));
}

// Injection: keep every cf-th entry. Anchor maps to anchor.
inline Sequence restrict_seq(const Sequence& s, std::size_t cf) {
  if (cf == 0) throw std::invalid_argument("restrict_seq: cf must be >= 1");
  if (cf == 1) return s;
  if (s.steps() % cf != 0)
    throw std::invalid_argument("restrict_seq: steps not divisible by coarsening factor");
  Sequence out(s.steps() / cf, s.dim());
  for (std::size_t t = 0; t <= out.steps(); ++t) out[t] = s[t * cf];
  return out;
}

// Piecewise-constant prolongation: fine entry t takes coarse entry floor(t/cf).
inline Sequence prolong_seq(const Sequence& coarse, std::size_t cf, std::size_t fine_steps) {
  if (cf == 0) throw std::invalid_argument("prolong_seq: cf must be >= 1");
  if (fine_steps != coarse.steps() * cf)
    throw std::invalid_argument("prolong_seq: fine step count must be coarse steps * cf");
  Sequence out(fine_steps, coarse.dim());
  for (std::size_t t = 0; t <= fine_steps; ++t) out[t] = coarse[t / cf];
  return out;
}

struct TimeGridLevel {
  std::size_t level = 0;   // 0 = finest
  double gamma = 1.0;      // step size multiplier cf^level
  std::size_t steps = 0;   // time steps on this level
};

struct Hierarchy {
  std::size_t coarsening = 4;
  std::vector<TimeGridLevel> levels;

  std::size_t depth() const { return levels.size(); }
  std::size_t fine_steps() const { return levels.front().steps; }
  std::size_t coarsest_steps() const { return levels.back().steps; }
};

// Coarsen while the next level keeps at least 4 steps, divides evenly, and the
// level budget is not exhausted.
inline Hierarchy build_hierarchy(std::size_t fine_steps, std::size_t cf,
                                 std::size_t max_levels) {
  if (fine_steps < 4) throw std::invalid_argument("build_hierarchy: need at least 4 steps");
  if (cf < 2) throw std::invalid_argument("build_hierarchy: coarsening factor must be >= 2");
  if (max_levels == 0) throw std::invalid_argument("build_hierarchy: max_levels must be >= 1");
  Hierarchy h;
  h.coarsening = cf;
  std::size_t steps = fine_steps;
  double gamma = 1.0;
  for (std::size_t l = 0; l < max_levels; ++l) {
    h.levels.push_back({l, gamma, steps});
    if (l + 1 == max_levels) break;
    if (steps % cf != 0 || steps / cf < 4) break;
    steps /= cf;
    gamma *= static_cast<double>(cf);
  }
  return h;
}

// Round up to the next multiple of cf^(levels-1); sequences are zero-padded to
// this length so every level divides evenly.
inline std::size_t padded_steps(std::size_t steps, std::size_t cf, std::size_t levels) {
  std::size_t unit = 1;
  for (std::size_t l = 1; l < levels; ++l) unit *= cf;
  return ((steps + unit - 1) / unit) * unit;
}

// Residual of serial propagation: r_t = h_t - step(t, h_{t-1}), r_0 = 0.
// `step` is any callable (t, h_prev) -> DenseVector.
template <class StepFn>
Sequence propagation_residual(const StepFn& step, const Sequence& h) {
  Sequence r(h.steps(), h.dim());
  for (std::size_t t = 1; t <= h.steps(); ++t) {
    DenseVector ph = step(t, h[t - 1]);
    require_shape(ph.dim() == h.dim(), "propagation_residual state");
    for (std::size_t i = 0; i < h.dim(); ++i) r[t][i] = h[t][i] - ph[i];
  }
  return r;
}

}  // namespace pintgru
