#pragma once

// Multigrid-reduction-in-time over one-step recurrences h_t = Phi(x_t, h_{t-1}).
// A problem is posed as a MultilevelSystem (a family of step maps, one per
// grid level); the same V-cycle then serves forward propagation, the
// time-reversed adjoint, and the demo ODE. Coarse corrections solve the
// forced system f_c(h*) = f_c(R h) - R f(h), carried here as an explicit
// per-level forcing sequence g so that every level sees the same shape of
// problem: h_t = Phi_level(x_t, h_{t-1}) + g_t.

#include <chrono>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "pintgru/grid.hpp"
#include "pintgru/gru_cell.hpp"
#include "pintgru/numerics.hpp"

namespace pintgru {

enum class RelaxKind { kF, kFCF };

struct CycleConfig {
  std::size_t coarsening = 4;
  std::size_t max_levels = 3;
  std::size_t fwd_iters = 2;
  std::size_t bwd_iters = 1;
  RelaxKind fine_relax = RelaxKind::kFCF;  // coarse levels always relax FCF
};

struct IterationRecord {
  std::size_t iteration = 0;
  double residual = 0.0;
  double wall_seconds = 0.0;
};

struct SolveTrace {
  std::size_t levels = 0;
  std::vector<IterationRecord> iterations;
  std::vector<double> level_seconds;  // cumulative per-level wall time
};

// Per-thread scratch owned by whoever drives a system; subclassed per system.
struct SystemScratch {
  virtual ~SystemScratch() = default;
};

// A time-stepping problem plus its coarse-level step maps. step() must be
// safe to call concurrently on distinct scratch objects.
class MultilevelSystem {
 public:
  virtual ~MultilevelSystem() = default;
  virtual const Hierarchy& hierarchy() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::unique_ptr<SystemScratch> make_scratch() const = 0;
  // Step ending at index t (1-based) on `level`, reading h_prev at t-1.
  virtual void step(std::size_t level, std::size_t t, std::span<const double> h_prev,
                    std::span<double> out, SystemScratch& ws) const = 0;
};

// Window onto consecutive entries of a level sequence; slot i holds global
// index base+i. The serial path views whole sequences, worker lanes view
// their owned slice plus the left-boundary slot.
struct SeqView {
  std::size_t base = 0;
  DenseVector* slots = nullptr;
  std::size_t count = 0;

  DenseVector& at(std::size_t global) const { return slots[global - base]; }
  bool covers(std::size_t global) const { return global >= base && global < base + count; }
};

inline SeqView view_of(Sequence& s) { return {0, s.entries().data(), s.entries().size()}; }

enum class SweepKind { kF, kC };

namespace detail {

inline void forced_step(const MultilevelSystem& sys, std::size_t level, const SeqView* forcing,
                        std::size_t t, std::span<const double> h_prev, std::span<double> out,
                        SystemScratch& ws) {
  sys.step(level, t, h_prev, out, ws);
  if (forcing != nullptr) {
    const DenseVector& g = forcing->at(t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i];
  }
}

}  // namespace detail

// Relaxation chunks [chunk_begin, chunk_end) on one level. An F-sweep chunk
// reads the C-point seed k*cf and serially fills the F-points k*cf+1 ..
// k*cf+cf-1; a C-sweep chunk writes the single C-point k*cf+cf from the
// F-point to its left. Neither kind writes anything another chunk of the same
// sweep reads, so chunks of one sweep can run in any order or concurrently;
// that independence is exactly what the worker lanes exploit.
inline void sweep_chunks(const MultilevelSystem& sys, std::size_t level, SweepKind kind,
                         const SeqView* forcing, const SeqView& h, std::size_t chunk_begin,
                         std::size_t chunk_end, std::size_t cf, SystemScratch& ws) {
  for (std::size_t k = chunk_begin; k < chunk_end; ++k) {
    const std::size_t seed = k * cf;
    if (kind == SweepKind::kF) {
      for (std::size_t off = 1; off < cf; ++off) {
        const std::size_t t = seed + off;
        detail::forced_step(sys, level, forcing, t, h.at(t - 1).span(), h.at(t).span(), ws);
      }
    } else {
      const std::size_t t = seed + cf;
      detail::forced_step(sys, level, forcing, t, h.at(t - 1).span(), h.at(t).span(), ws);
    }
  }
}

// r_t = h_t - Phi(t, h_{t-1}) - g_t over t in [t_begin, t_end].
inline void residual_range(const MultilevelSystem& sys, std::size_t level, const SeqView* forcing,
                           const SeqView& h, const SeqView& r, std::size_t t_begin,
                           std::size_t t_end, SystemScratch& ws) {
  for (std::size_t t = t_begin; t <= t_end; ++t) {
    DenseVector& out = r.at(t);
    detail::forced_step(sys, level, forcing, t, h.at(t - 1).span(), out.span(), ws);
    const DenseVector& ht = h.at(t);
    for (std::size_t i = 0; i < out.dim(); ++i) out[i] = ht[i] - out[i];
  }
}

// Exact solve by forward substitution from the anchor in h.at(0).
inline void solve_forward(const MultilevelSystem& sys, std::size_t level, const SeqView* forcing,
                          const SeqView& h, std::size_t steps, SystemScratch& ws) {
  for (std::size_t t = 1; t <= steps; ++t)
    detail::forced_step(sys, level, forcing, t, h.at(t - 1).span(), h.at(t).span(), ws);
}

// Standalone relaxation sweeps over a whole sequence driven by any step
// callable (t, h_prev) -> DenseVector. Wraps the chunk kernel above.
namespace detail {

template <class StepFn>
class CallableSystem : public MultilevelSystem {
 public:
  CallableSystem(const StepFn& fn, std::size_t steps, std::size_t dim)
      : fn_(fn), dim_(dim) {
    hier_.coarsening = 1;
    hier_.levels = {{0, 1.0, steps}};
  }
  const Hierarchy& hierarchy() const override { return hier_; }
  std::size_t state_dim() const override { return dim_; }
  std::unique_ptr<SystemScratch> make_scratch() const override {
    return std::make_unique<SystemScratch>();
  }
  void step(std::size_t, std::size_t t, std::span<const double> h_prev, std::span<double> out,
            SystemScratch&) const override {
    DenseVector hp(h_prev.size());
    for (std::size_t i = 0; i < h_prev.size(); ++i) hp[i] = h_prev[i];
    DenseVector r = fn_(t, hp);
    require_shape(r.dim() == out.size(), "CallableSystem step");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = r[i];
  }

 private:
  const StepFn& fn_;
  std::size_t dim_;
  Hierarchy hier_;
};

}  // namespace detail

template <class StepFn>
void f_relax(const StepFn& step, Sequence& h, std::size_t cf) {
  if (cf < 1 || h.steps() % cf != 0)
    throw std::invalid_argument("f_relax: cf must divide the step count");
  detail::CallableSystem<StepFn> sys(step, h.steps(), h.dim());
  auto ws = sys.make_scratch();
  SeqView view = view_of(h);
  sweep_chunks(sys, 0, SweepKind::kF, nullptr, view, 0, h.steps() / cf, cf, *ws);
}

template <class StepFn>
void c_relax(const StepFn& step, Sequence& h, std::size_t cf) {
  if (cf < 1 || h.steps() % cf != 0)
    throw std::invalid_argument("c_relax: cf must divide the step count");
  detail::CallableSystem<StepFn> sys(step, h.steps(), h.dim());
  auto ws = sys.make_scratch();
  SeqView view = view_of(h);
  sweep_chunks(sys, 0, SweepKind::kC, nullptr, view, 0, h.steps() / cf, cf, *ws);
}

template <class StepFn>
void fcf_relax(const StepFn& step, Sequence& h, std::size_t cf) {
  f_relax(step, h, cf);
  c_relax(step, h, cf);
  f_relax(step, h, cf);
}

// ---------------------------------------------------------------------------
// Serial V-cycle engine. This is the single-lane reference path; the worker
// runtime mirrors it slice-by-slice and reuses it verbatim for gathered
// coarse levels, which is what keeps iterates identical across worker counts.

class MgritSolver {
 public:
  struct LevelWork {
    Sequence h;   // current iterate
    Sequence h0;  // restricted guess (levels >= 1), kept for the correction
    Sequence g;   // forcing (levels >= 1, or injected top-level forcing)
    Sequence r;   // fine residual buffer (levels < coarsest)
    bool has_forcing = false;
  };

  MgritSolver(const MultilevelSystem& sys, CycleConfig cfg,
              const Sequence* top_forcing = nullptr)
      : sys_(sys), cfg_(cfg) {
    const Hierarchy& hier = sys.hierarchy();
    const std::size_t dim = sys.state_dim();
    work_.resize(hier.depth());
    for (std::size_t l = 0; l < hier.depth(); ++l) {
      const std::size_t steps = hier.levels[l].steps;
      work_[l].h = Sequence(steps, dim);
      if (l + 1 < hier.depth()) work_[l].r = Sequence(steps, dim);
      if (l > 0) {
        work_[l].h0 = Sequence(steps, dim);
        work_[l].g = Sequence(steps, dim);
        work_[l].has_forcing = true;
      }
    }
    if (top_forcing != nullptr) {
      require_shape(top_forcing->steps() == hier.fine_steps() && top_forcing->dim() == dim,
                    "top-level forcing");
      work_[0].g = *top_forcing;
      work_[0].has_forcing = true;
    }
    scratch_ = sys.make_scratch();
    level_seconds_.assign(hier.depth(), 0.0);
  }

  const MultilevelSystem& system() const { return sys_; }
  const CycleConfig& config() const { return cfg_; }
  LevelWork& level_work(std::size_t level) { return work_[level]; }
  const std::vector<double>& level_seconds() const { return level_seconds_; }

  // One V-cycle on the iterate stored in level_work(level).h.
  void cycle_at(std::size_t level) {
    const Hierarchy& hier = sys_.hierarchy();
    const std::size_t depth = hier.depth();
    LevelWork& lw = work_[level];
    const SeqView h = view_of(lw.h);
    const SeqView* forcing = lw.has_forcing ? &forcing_view(level) : nullptr;
    const std::size_t steps = hier.levels[level].steps;
    auto t0 = std::chrono::steady_clock::now();
    if (level + 1 == depth) {
      solve_forward(sys_, level, forcing, h, steps, *scratch_);
      level_seconds_[level] += elapsed_since(t0);
      return;
    }
    const std::size_t cf = hier.coarsening;
    const std::size_t chunks = steps / cf;
    // FCF-relaxation (F only on the fine level when configured so).
    if (level > 0 || cfg_.fine_relax == RelaxKind::kFCF) {
      sweep_chunks(sys_, level, SweepKind::kF, forcing, h, 0, chunks, cf, *scratch_);
      sweep_chunks(sys_, level, SweepKind::kC, forcing, h, 0, chunks, cf, *scratch_);
    }
    sweep_chunks(sys_, level, SweepKind::kF, forcing, h, 0, chunks, cf, *scratch_);
    // Residual at C-points (the trailing F-sweep zeroed the F-point residuals
    // and injection restriction reads nothing else), then the coarse forced
    // system.
    const SeqView r = view_of(lw.r);
    LevelWork& cw = work_[level + 1];
    const std::size_t csteps = hier.levels[level + 1].steps;
    for (std::size_t tc = 1; tc <= csteps; ++tc)
      residual_range(sys_, level, forcing, h, r, tc * cf, tc * cf, *scratch_);
    for (std::size_t tc = 0; tc <= csteps; ++tc) {
      cw.h[tc] = lw.h[tc * cf];
      cw.h0[tc] = cw.h[tc];
    }
    for (std::size_t tc = 1; tc <= csteps; ++tc) {
      DenseVector& g = cw.g[tc];
      sys_.step(level + 1, tc, cw.h0[tc - 1].span(), g.span(), *scratch_);
      const DenseVector& hc = cw.h0[tc];
      const DenseVector& rc = lw.r[tc * cf];
      for (std::size_t i = 0; i < g.dim(); ++i) g[i] = hc[i] - g[i] - rc[i];
    }
    level_seconds_[level] += elapsed_since(t0);
    cycle_at(level + 1);
    auto t1 = std::chrono::steady_clock::now();
    // Correction at C-points, then F-relaxation rebuilds the F-points. The
    // piecewise-constant prolongation also writes F-points in exact
    // arithmetic, but the trailing F-sweep recomputes every one of them from
    // its left C-point, so only C-point corrections can influence the result.
    for (std::size_t tc = 1; tc <= csteps; ++tc) {
      const DenseVector& hs = cw.h[tc];
      const DenseVector& h0 = cw.h0[tc];
      DenseVector& target = lw.h[tc * cf];
      for (std::size_t i = 0; i < target.dim(); ++i) target[i] += hs[i] - h0[i];
    }
    sweep_chunks(sys_, level, SweepKind::kF, forcing, h, 0, chunks, cf, *scratch_);
    level_seconds_[level] += elapsed_since(t1);
  }

  // Residual norm of the top-level iterate currently in level_work(0).h.
  double residual_norm() {
    LevelWork& lw = work_[0];
    const SeqView h = view_of(lw.h);
    const SeqView* forcing = lw.has_forcing ? &forcing_view(0) : nullptr;
    const std::size_t steps = sys_.hierarchy().fine_steps();
    Sequence res(steps, sys_.state_dim());
    const SeqView r = view_of(res);
    residual_range(sys_, 0, forcing, h, r, 1, steps, *scratch_);
    return seq_l2_norm(res);
  }

  // Runs `iters` V-cycles on `h` (in/out), recording post-cycle residuals.
  SolveTrace solve(Sequence& h, std::size_t iters, bool record_residuals = true) {
    require_shape(h.steps() == sys_.hierarchy().fine_steps() && h.dim() == sys_.state_dim(),
                  "solve iterate");
    std::swap(work_[0].h, h);
    SolveTrace trace;
    trace.levels = sys_.hierarchy().depth();
    auto start = std::chrono::steady_clock::now();
    for (std::size_t it = 1; it <= iters; ++it) {
      cycle_at(0);
      IterationRecord rec;
      rec.iteration = it;
      rec.residual = record_residuals ? residual_norm() : -1.0;
      rec.wall_seconds = elapsed_since(start);
      trace.iterations.push_back(rec);
    }
    trace.level_seconds = level_seconds_;
    std::swap(work_[0].h, h);
    return trace;
  }

 private:
  const SeqView& forcing_view(std::size_t level) {
    forcing_views_.resize(work_.size());
    forcing_views_[level] = view_of(work_[level].g);
    return forcing_views_[level];
  }

  static double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  const MultilevelSystem& sys_;
  CycleConfig cfg_;
  std::vector<LevelWork> work_;
  std::vector<SeqView> forcing_views_;
  std::unique_ptr<SystemScratch> scratch_;
  std::vector<double> level_seconds_;
};

// ---------------------------------------------------------------------------
// GRU-backed systems.

struct StackSystemScratch : SystemScratch {
  StackScratch stack;
};

// Forward propagation of a (possibly batched) GRU stack. Level l steps with
// gamma = cf^l and consumes the injected input x at fine index gamma * t.
class GruForwardSystem : public MultilevelSystem {
 public:
  GruForwardSystem(const GruStack& stack, StepKind kind, const Sequence& x_fine,
                   Hierarchy hier)
      : stack_(&stack), kind_(kind), hier_(std::move(hier)) {
    require_shape(x_fine.steps() == hier_.fine_steps(), "forward system input steps");
    require_shape(x_fine.dim() % stack.input_dim == 0, "forward system input dim");
    batch_ = x_fine.dim() / stack.input_dim;
    x_levels_.reserve(hier_.depth());
    x_levels_.push_back(x_fine);
    for (std::size_t l = 1; l < hier_.depth(); ++l)
      x_levels_.push_back(restrict_seq(x_levels_[l - 1], hier_.coarsening));
  }

  const Hierarchy& hierarchy() const override { return hier_; }
  std::size_t state_dim() const override { return batch_ * stack_->state_dim(); }
  std::size_t batch() const { return batch_; }
  const Sequence& inputs(std::size_t level) const { return x_levels_[level]; }
  const GruStack& stack() const { return *stack_; }
  StepKind kind() const { return kind_; }

  std::unique_ptr<SystemScratch> make_scratch() const override {
    return std::make_unique<StackSystemScratch>();
  }

  void step(std::size_t level, std::size_t t, std::span<const double> h_prev,
            std::span<double> out, SystemScratch& ws) const override {
    auto& s = static_cast<StackSystemScratch&>(ws);
    batch_step(*stack_, kind_, hier_.levels[level].gamma, x_levels_[level][t].span(), h_prev,
               out, s.stack);
  }

 private:
  const GruStack* stack_;
  StepKind kind_;
  Hierarchy hier_;
  std::size_t batch_ = 1;
  std::vector<Sequence> x_levels_;
};

// Time-reversed adjoint of the forward system, linearized about a stored
// forward trajectory. Reversed index s on a level with T steps corresponds to
// the forward step ending at t = T - s + 1; the level-l step applies the
// transposed Jacobian of Phi_{cf^l} at (x_l[t], restrict^l(h_stored)[t-1]).
class GruAdjointSystem : public MultilevelSystem {
 public:
  GruAdjointSystem(const GruStack& stack, StepKind kind, const Sequence& x_fine,
                   const Sequence& h_stored, Hierarchy hier)
      : stack_(&stack), kind_(kind), hier_(std::move(hier)) {
    require_shape(h_stored.steps() == hier_.fine_steps(), "adjoint system state steps");
    batch_ = x_fine.dim() / stack.input_dim;
    require_shape(h_stored.dim() == batch_ * stack.state_dim(), "adjoint system state dim");
    x_levels_.push_back(x_fine);
    h_levels_.push_back(h_stored);
    for (std::size_t l = 1; l < hier_.depth(); ++l) {
      x_levels_.push_back(restrict_seq(x_levels_[l - 1], hier_.coarsening));
      h_levels_.push_back(restrict_seq(h_levels_[l - 1], hier_.coarsening));
    }
  }

  const Hierarchy& hierarchy() const override { return hier_; }
  std::size_t state_dim() const override { return batch_ * stack_->state_dim(); }

  std::unique_ptr<SystemScratch> make_scratch() const override {
    return std::make_unique<StackSystemScratch>();
  }

  void step(std::size_t level, std::size_t s, std::span<const double> v_prev,
            std::span<double> out, SystemScratch& ws) const override {
    auto& scr = static_cast<StackSystemScratch&>(ws);
    const std::size_t steps = hier_.levels[level].steps;
    const std::size_t t = steps - s + 1;  // forward step index being transposed
    batch_adjoint_step(*stack_, kind_, hier_.levels[level].gamma, x_levels_[level][t].span(),
                       h_levels_[level][t - 1].span(), v_prev, out, nullptr, scr.stack);
  }

 private:
  const GruStack* stack_;
  StepKind kind_;
  Hierarchy hier_;
  std::size_t batch_ = 1;
  std::vector<Sequence> x_levels_, h_levels_;
};

inline Sequence reverse_sequence(const Sequence& s) {
  Sequence out(s.steps(), s.dim());
  for (std::size_t t = 0; t <= s.steps(); ++t) out[t] = s[s.steps() - t];
  return out;
}

// ---------------------------------------------------------------------------
// Gradient assembly: g = sum_t (d h_t / d theta)^T w_t evaluated at the stored
// trajectory. Contributions are accumulated per cf-sized time block and the
// blocks folded left to right, the same fixed order the worker reduction uses.

inline void stack_add(GruStack& dst, const GruStack& src) {
  for (std::size_t l = 0; l < dst.num_layers(); ++l) {
    GruParams& a = dst.layers[l];
    const GruParams& b = src.layers[l];
    auto add = [](std::vector<double>& x, const std::vector<double>& y) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
    };
    add(a.w_ir.values, b.w_ir.values);
    add(a.w_iz.values, b.w_iz.values);
    add(a.w_in.values, b.w_in.values);
    add(a.w_hr.values, b.w_hr.values);
    add(a.w_hz.values, b.w_hz.values);
    add(a.w_hn.values, b.w_hn.values);
    add(a.b_ir.values, b.b_ir.values);
    add(a.b_hr.values, b.b_hr.values);
    add(a.b_iz.values, b.b_iz.values);
    add(a.b_hz.values, b.b_hz.values);
    add(a.b_in.values, b.b_in.values);
    add(a.b_hn.values, b.b_hn.values);
  }
}

// Parameter contributions of steps ending in [t_begin, t_end], accumulated
// into `grads`. w holds cotangents in natural time order.
inline void accumulate_gradient_range(const GruStack& stack, StepKind kind, double gamma,
                                      const Sequence& x, const Sequence& h_stored,
                                      const Sequence& w, std::size_t t_begin, std::size_t t_end,
                                      GruStack& grads, StackScratch& ws,
                                      DenseVector& w_prev_scratch) {
  const std::size_t sd = h_stored.dim();
  if (w_prev_scratch.dim() != sd) w_prev_scratch = DenseVector(sd);
  for (std::size_t t = t_begin; t <= t_end; ++t)
    batch_adjoint_step(stack, kind, gamma, x[t].span(), h_stored[t - 1].span(), w[t].span(),
                       w_prev_scratch.span(), &grads, ws);
}

inline GruStack assemble_gradient(const GruStack& stack, StepKind kind, const Sequence& x,
                                  const Sequence& h_stored, const Sequence& w,
                                  std::size_t block) {
  GruStack total = stack_zeros_like(stack);
  GruStack part = stack_zeros_like(stack);
  StackScratch ws;
  DenseVector w_prev;
  const std::size_t steps = h_stored.steps();
  if (block == 0) block = steps;
  for (std::size_t b0 = 1; b0 <= steps; b0 += block) {
    const std::size_t b1 = std::min(steps, b0 + block - 1);
    GruStack fresh = stack_zeros_like(stack);
    std::swap(part, fresh);
    accumulate_gradient_range(stack, kind, 1.0, x, h_stored, w, b0, b1, part, ws, w_prev);
    stack_add(total, part);
  }
  return total;
}

// ---------------------------------------------------------------------------

struct CostModel {
  double level_sum = 0.0;  // sum over levels of T / (P * cf^l)
  double bound = 0.0;      // (T/P) * cf / (cf - 1)
};

inline CostModel cost_model(std::size_t fine_steps, std::size_t workers, std::size_t cf,
                            std::size_t levels) {
  if (workers == 0 || cf < 2 || levels == 0)
    throw std::invalid_argument("cost_model: need workers >= 1, cf >= 2, levels >= 1");
  CostModel m;
  double denom = static_cast<double>(workers);
  for (std::size_t l = 0; l < levels; ++l) {
    m.level_sum += static_cast<double>(fine_steps) / denom;
    denom *= static_cast<double>(cf);
  }
  m.bound = (static_cast<double>(fine_steps) / static_cast<double>(workers)) *
            static_cast<double>(cf) / (static_cast<double>(cf) - 1.0);
  return m;
}

}  // namespace pintgru
