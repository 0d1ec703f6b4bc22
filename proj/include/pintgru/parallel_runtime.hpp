#pragma once

// Time-domain decomposition across worker lanes. Lane p owns a contiguous,
// C-point-aligned block of time steps on every level it participates in, plus
// one slot caching its left neighbor's terminating C-point. All cross-lane
// data flow is explicit messages over in-process channels: boundary exchanges
// before each F-sub-sweep, gathers/scatters between a distributed level and
// worker 0 for levels too coarse to split. Per-index evaluation order matches
// MgritSolver exactly, and gathered levels reuse it verbatim, so iterates,
// residual traces, and results are bitwise identical for every feasible lane
// count.

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pintgru/grid.hpp"
#include "pintgru/mgrit.hpp"

namespace pintgru {

inline constexpr std::uint8_t kProtocolVersion = 1;

// Wire tags. F, FC, and final-F mark the boundary exchange that precedes the
// matching F-sub-sweep; gather and scatter move level slices to and from
// worker 0.
enum class SweepTag : std::uint8_t { kF = 0, kFC = 1, kFinalF = 2, kGather = 3, kScatter = 4 };
inline constexpr std::size_t kSweepTagCount = 5;

inline const char* sweep_tag_name(SweepTag t) {
  switch (t) {
    case SweepTag::kF: return "F";
    case SweepTag::kFC: return "FC";
    case SweepTag::kFinalF: return "final-F";
    case SweepTag::kGather: return "gather";
    case SweepTag::kScatter: return "scatter";
  }
  return "?";
}

struct ProtocolFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BoundaryMessage {
  std::uint8_t version = kProtocolVersion;
  SweepTag tag = SweepTag::kF;
  std::uint16_t level = 0;
  std::uint32_t sweep = 0;  // strictly increasing per channel
  std::uint32_t sender = 0;
  std::uint64_t index = 0;  // global index of the first carried state
  std::vector<double> state;
};

using TagCounters = std::array<std::atomic<std::size_t>, kSweepTagCount>;

// Single-producer single-consumer queue with a receive watchdog. post() never
// blocks; take() validates every protocol field and converts a stall, a
// duplicate, or any mismatch into a ProtocolFault.
class Channel {
 public:
  Channel(std::uint32_t sender, std::uint32_t receiver, std::chrono::milliseconds timeout,
          TagCounters* counters = nullptr)
      : sender_(sender), receiver_(receiver), timeout_(timeout), counters_(counters) {}

  void post(BoundaryMessage m) {
    m.sweep = next_post_++;
    post_raw(std::move(m));
  }

  // Test hook: enqueue exactly as given, bypassing the sequence stamp.
  void post_raw(BoundaryMessage m) {
    if (counters_ != nullptr) (*counters_)[static_cast<std::size_t>(m.tag)]++;
    {
      std::lock_guard<std::mutex> lock(mu_);
      queue_.push_back(std::move(m));
    }
    cv_.notify_one();
  }

  BoundaryMessage take(SweepTag tag, std::size_t level, std::uint64_t index) {
    BoundaryMessage m;
    {
      std::unique_lock<std::mutex> lock(mu_);
      if (!cv_.wait_for(lock, timeout_, [&] { return poisoned_ || !queue_.empty(); }))
        fail(tag, level, "timed out waiting");
      if (poisoned_) fail(tag, level, "channel poisoned");
      m = std::move(queue_.front());
      queue_.pop_front();
    }
    if (m.version != kProtocolVersion) fail(tag, level, "protocol version mismatch");
    if (m.sweep != next_take_)
      fail(tag, level,
           m.sweep < next_take_ ? "duplicate or replayed message" : "missing message");
    next_take_++;
    if (m.tag != tag) fail(tag, level, std::string("unexpected tag ") + sweep_tag_name(m.tag));
    if (m.level != level) fail(tag, level, "level mismatch");
    if (m.sender != sender_) fail(tag, level, "sender mismatch");
    if (m.index != index) fail(tag, level, "boundary index mismatch");
    return m;
  }

  void poison() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      poisoned_ = true;
    }
    cv_.notify_all();
  }

 private:
  [[noreturn]] void fail(SweepTag tag, std::size_t level, const std::string& what) {
    throw ProtocolFault("channel " + std::to_string(sender_) + "->" +
                        std::to_string(receiver_) + " (" + sweep_tag_name(tag) + ", level " +
                        std::to_string(level) + "): " + what);
  }

  std::uint32_t sender_;
  std::uint32_t receiver_;
  std::chrono::milliseconds timeout_;
  TagCounters* counters_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<BoundaryMessage> queue_;
  bool poisoned_ = false;
  std::uint32_t next_post_ = 0;
  std::uint32_t next_take_ = 0;
};

// Channels for one run: a rightward boundary chain plus a star to/from worker
// 0. A socket transport could replace this without touching the sweep logic.
class InProcessTransport {
 public:
  InProcessTransport(std::size_t workers, std::chrono::milliseconds timeout) : workers_(workers) {
    for (auto& c : counters_) c.store(0);
    for (std::size_t p = 0; p + 1 < workers; ++p)
      boundary_.push_back(std::make_unique<Channel>(p, p + 1, timeout, &counters_));
    to_root_.push_back(nullptr);
    from_root_.push_back(nullptr);
    for (std::size_t p = 1; p < workers; ++p) {
      to_root_.push_back(std::make_unique<Channel>(p, 0, timeout, &counters_));
      from_root_.push_back(std::make_unique<Channel>(0, p, timeout, &counters_));
    }
  }

  std::size_t workers() const { return workers_; }
  Channel& boundary(std::size_t left) { return *boundary_.at(left); }
  Channel& to_root(std::size_t from) { return *to_root_.at(from); }
  Channel& from_root(std::size_t to) { return *from_root_.at(to); }

  void poison_all() {
    for (auto& c : boundary_) c->poison();
    for (std::size_t p = 1; p < workers_; ++p) {
      to_root_[p]->poison();
      from_root_[p]->poison();
    }
  }

  std::size_t sent(SweepTag tag) const {
    return counters_[static_cast<std::size_t>(tag)].load();
  }

 private:
  std::size_t workers_;
  TagCounters counters_;
  std::vector<std::unique_ptr<Channel>> boundary_;
  std::vector<std::unique_ptr<Channel>> to_root_;
  std::vector<std::unique_ptr<Channel>> from_root_;
};

// Contiguous per-lane ranges over fine steps 1..T, every boundary on a
// C-point. Balanced in whole coarse intervals (sizes differ by at most one
// interval); an infeasible lane count is clamped, not rejected.
struct TimePartition {
  std::size_t requested = 1;
  std::size_t workers = 1;
  std::vector<std::size_t> bounds;  // size workers+1, bounds[0] = 0, bounds[workers] = T

  bool clamped() const { return workers != requested; }
  std::size_t begin(std::size_t p) const { return bounds[p]; }  // exclusive left edge
  std::size_t end(std::size_t p) const { return bounds[p + 1]; }
};

inline TimePartition make_partition(std::size_t steps, std::size_t cf, std::size_t workers) {
  if (workers < 1) throw std::invalid_argument("make_partition: need at least one worker");
  if (cf < 1 || steps == 0 || steps % cf != 0)
    throw std::invalid_argument("make_partition: steps must be a positive multiple of cf");
  TimePartition part;
  part.requested = workers;
  const std::size_t chunks = steps / cf;
  part.workers = std::min(workers, chunks);
  part.bounds.resize(part.workers + 1);
  part.bounds[0] = 0;
  const std::size_t base = chunks / part.workers;
  const std::size_t extra = chunks % part.workers;
  std::size_t edge = 0;
  for (std::size_t p = 0; p < part.workers; ++p) {
    edge += (base + (p < extra ? 1 : 0)) * cf;
    part.bounds[p + 1] = edge;
  }
  return part;
}

// Which levels run distributed. Level l needs every lane boundary aligned to
// whole level-l relaxation chunks and at least min_steps level-l steps per
// lane; the coarsest level always gathers to worker 0, whose exact solve is
// inherently sequential.
inline std::vector<bool> plan_levels(const Hierarchy& hier, const TimePartition& part,
                                     std::size_t min_steps = 4) {
  std::vector<bool> dist(hier.depth(), false);
  if (hier.depth() > 1) dist[0] = true;
  std::size_t unit = hier.coarsening;  // cf^(l+1)
  for (std::size_t l = 1; l + 1 < hier.depth(); ++l) {
    unit *= hier.coarsening;
    bool aligned = hier.levels[l].steps >= min_steps * part.workers;
    for (std::size_t p = 1; aligned && p < part.workers; ++p)
      aligned = part.bounds[p] % unit == 0;
    dist[l] = dist[l - 1] && aligned;
  }
  return dist;
}

struct ParallelOptions {
  std::size_t workers = 1;
  std::chrono::milliseconds recv_timeout{30000};
  std::size_t min_distributed_steps = 4;
  bool record_residuals = true;
};

struct ParallelOutcome {
  SolveTrace trace;
  TimePartition partition;
  std::vector<bool> distributed;
  std::array<std::size_t, kSweepTagCount> messages{};
};

namespace detail {

// One lane's slice of one level: slots 0..(hi-lo) hold global indices lo..hi,
// slot 0 being the left-boundary cache (lane 0's copy of the anchor).
struct LaneLevel {
  bool active = false;
  std::size_t lo = 0;
  std::size_t hi = 0;
  Sequence h, h0, g, r;
  bool has_forcing = false;

  SeqView hv() { return {lo, h.entries().data(), h.entries().size()}; }
  SeqView h0v() { return {lo, h0.entries().data(), h0.entries().size()}; }
  SeqView gv() { return {lo, g.entries().data(), g.entries().size()}; }
  SeqView rv() { return {lo, r.entries().data(), r.entries().size()}; }
};

// Everything the lanes share for one solve. The engine and root buffers are
// touched by lane 0 only.
struct SolveShared {
  const MultilevelSystem* sys = nullptr;
  CycleConfig cfg;
  TimePartition part;
  std::vector<bool> distributed;
  std::vector<std::size_t> scale;  // scale[l] = cf^l in fine steps
  InProcessTransport* net = nullptr;
  const Sequence* input = nullptr;
  const Sequence* top_forcing = nullptr;
  Sequence* output = nullptr;
  std::size_t iterations = 0;
  bool record_residuals = true;
  MgritSolver* engine = nullptr;
  SolveTrace* trace = nullptr;
  std::mutex fault_mu;
  std::exception_ptr fault;
};

class WorkerLane {
 public:
  WorkerLane(SolveShared& shared, std::size_t id)
      : sh_(shared), p_(id), lanes_(shared.sys->hierarchy().depth()) {
    ws_ = sh_.sys->make_scratch();
    const Hierarchy& hier = sh_.sys->hierarchy();
    const std::size_t dim = sh_.sys->state_dim();
    for (std::size_t l = 0; l < hier.depth(); ++l) {
      LaneLevel& L = lanes_[l];
      L.active = sh_.distributed[l];
      // A lane holds a slice wherever it sweeps (active levels) and at the
      // child of an active level, where it stages h0 and corrections even if
      // the child itself is gathered.
      const bool staged = l == 0 || L.active || sh_.distributed[l - 1];
      if (!staged) continue;
      L.lo = sh_.part.begin(p_) / sh_.scale[l];
      L.hi = sh_.part.end(p_) / sh_.scale[l];
      const std::size_t n = L.hi - L.lo;
      L.h = Sequence(n, dim);
      if (l == 0) {
        L.r = Sequence(n, dim);
        if (sh_.top_forcing != nullptr) {
          L.g = Sequence(n, dim);
          for (std::size_t t = L.lo + 1; t <= L.hi; ++t) L.g[t - L.lo] = (*sh_.top_forcing)[t];
          L.has_forcing = true;
        }
      } else {
        L.h0 = Sequence(n, dim);
        if (L.active) {
          L.g = Sequence(n, dim);
          L.r = Sequence(n, dim);
          L.has_forcing = true;
        }
      }
    }
    // Fine-level iterate slice, boundary cache included.
    LaneLevel& L0 = lanes_[0];
    for (std::size_t t = L0.lo; t <= L0.hi; ++t) L0.h[t - L0.lo] = (*sh_.input)[t];
  }

  void run() {
    try {
      auto start = std::chrono::steady_clock::now();
      for (std::size_t it = 1; it <= sh_.iterations; ++it) {
        if (sh_.distributed[0])
          cycle(0);
        else
          gathered_root_cycle();
        double res = -1.0;
        if (sh_.record_residuals) res = residual_phase();
        if (p_ == 0) {
          IterationRecord rec;
          rec.iteration = it;
          rec.residual = res;
          rec.wall_seconds =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          sh_.trace->iterations.push_back(rec);
        }
      }
      collect_result();
    } catch (...) {
      {
        std::lock_guard<std::mutex> lock(sh_.fault_mu);
        if (!sh_.fault) sh_.fault = std::current_exception();
      }
      sh_.net->poison_all();
    }
  }

 private:
  std::size_t workers() const { return sh_.part.workers; }
  std::size_t cf() const { return sh_.sys->hierarchy().coarsening; }

  // Send my terminating C-point right, refresh my left-boundary cache, then
  // run the matching sub-sweep over my chunks.
  void exchange_and_sweep(std::size_t level, SweepTag tag, SweepKind kind) {
    LaneLevel& L = lanes_[level];
    const SeqView h = L.hv();
    if (p_ + 1 < workers()) {
      BoundaryMessage m;
      m.tag = tag;
      m.level = static_cast<std::uint16_t>(level);
      m.sender = static_cast<std::uint32_t>(p_);
      m.index = L.hi;
      m.state = h.at(L.hi).values;
      sh_.net->boundary(p_).post(std::move(m));
    }
    if (p_ > 0) {
      BoundaryMessage m = sh_.net->boundary(p_ - 1).take(tag, level, L.lo);
      if (m.state.size() != h.at(L.lo).dim())
        throw ProtocolFault("boundary state dimension mismatch");
      h.at(L.lo).values = std::move(m.state);
    }
    const SeqView g = L.gv();
    const SeqView* forcing = L.has_forcing ? &g : nullptr;
    sweep_chunks(*sh_.sys, level, kind, forcing, h, L.lo / cf(), L.hi / cf(), cf(), *ws_);
  }

  // Mirrors MgritSolver::cycle_at stage by stage on this lane's slices.
  void cycle(std::size_t level) {
    LaneLevel& L = lanes_[level];
    const SeqView h = L.hv();
    const SeqView g = L.gv();
    const SeqView* forcing = L.has_forcing ? &g : nullptr;

    if (level > 0 || sh_.cfg.fine_relax == RelaxKind::kFCF) {
      exchange_and_sweep(level, SweepTag::kF, SweepKind::kF);
      sweep_chunks(*sh_.sys, level, SweepKind::kC, forcing, h, L.lo / cf(), L.hi / cf(), cf(),
                   *ws_);
      exchange_and_sweep(level, SweepTag::kFC, SweepKind::kF);
    } else {
      exchange_and_sweep(level, SweepTag::kF, SweepKind::kF);
    }

    const std::size_t child = level + 1;
    LaneLevel& C = lanes_[child];
    const SeqView r = L.rv();
    for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc)
      residual_range(*sh_.sys, level, forcing, h, r, tc * cf(), tc * cf(), *ws_);
    for (std::size_t tc = C.lo; tc <= C.hi; ++tc) C.h0[tc - C.lo] = h.at(tc * cf());

    if (C.active) {
      for (std::size_t tc = C.lo; tc <= C.hi; ++tc) C.h[tc - C.lo] = C.h0[tc - C.lo];
      const SeqView ch0 = C.h0v();
      for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc) {
        DenseVector& gc = C.g[tc - C.lo];
        sh_.sys->step(child, tc, ch0.at(tc - 1).span(), gc.span(), *ws_);
        const DenseVector& hc = C.h0[tc - C.lo];
        const DenseVector& rc = L.r[tc * cf() - L.lo];
        for (std::size_t i = 0; i < gc.dim(); ++i) gc[i] = hc[i] - gc[i] - rc[i];
      }
      cycle(child);
    } else {
      gathered_child_solve(level);
    }

    for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc) {
      const DenseVector& hs = C.h[tc - C.lo];
      const DenseVector& h0 = C.h0[tc - C.lo];
      DenseVector& target = L.h[tc * cf() - L.lo];
      for (std::size_t i = 0; i < target.dim(); ++i) target[i] += hs[i] - h0[i];
    }
    exchange_and_sweep(level, SweepTag::kFinalF, SweepKind::kF);
  }

  // The child level is too coarse to split: ship restricted states and
  // residuals to worker 0, let the serial engine run the whole remaining
  // cycle, and scatter the corrected child states back.
  void gathered_child_solve(std::size_t level) {
    const std::size_t child = level + 1;
    LaneLevel& L = lanes_[level];
    LaneLevel& C = lanes_[child];
    const std::size_t dim = sh_.sys->state_dim();

    if (p_ > 0) {
      BoundaryMessage m;
      m.tag = SweepTag::kGather;
      m.level = static_cast<std::uint16_t>(child);
      m.sender = static_cast<std::uint32_t>(p_);
      m.index = C.lo + 1;
      m.state.reserve(2 * (C.hi - C.lo) * dim);
      for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc)
        m.state.insert(m.state.end(), C.h0[tc - C.lo].values.begin(),
                       C.h0[tc - C.lo].values.end());
      for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc) {
        const DenseVector& rc = L.r[tc * cf() - L.lo];
        m.state.insert(m.state.end(), rc.values.begin(), rc.values.end());
      }
      sh_.net->to_root(p_).post(std::move(m));
      BoundaryMessage back = sh_.net->from_root(p_).take(SweepTag::kScatter, child, C.lo + 1);
      if (back.state.size() != (C.hi - C.lo) * dim)
        throw ProtocolFault("scatter payload size mismatch");
      const double* src = back.state.data();
      for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc, src += dim)
        C.h[tc - C.lo].values.assign(src, src + dim);
      return;
    }

    // Worker 0: assemble the full child level in the serial engine's work
    // arrays, with forcing computed exactly as the serial path computes it.
    const std::size_t csteps = sh_.sys->hierarchy().levels[child].steps;
    std::vector<DenseVector> h0c(csteps + 1), rc(csteps + 1, DenseVector(dim));
    for (std::size_t tc = C.lo; tc <= C.hi; ++tc) h0c[tc] = C.h0[tc - C.lo];
    for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc) rc[tc] = L.r[tc * cf() - L.lo];
    for (std::size_t q = 1; q < workers(); ++q) {
      const std::size_t qlo = sh_.part.begin(q) / sh_.scale[child];
      const std::size_t qhi = sh_.part.end(q) / sh_.scale[child];
      BoundaryMessage m = sh_.net->to_root(q).take(SweepTag::kGather, child, qlo + 1);
      if (m.state.size() != 2 * (qhi - qlo) * dim)
        throw ProtocolFault("gather payload size mismatch");
      const double* src = m.state.data();
      for (std::size_t tc = qlo + 1; tc <= qhi; ++tc, src += dim)
        h0c[tc].values.assign(src, src + dim);
      for (std::size_t tc = qlo + 1; tc <= qhi; ++tc, src += dim)
        rc[tc].values.assign(src, src + dim);
    }
    MgritSolver::LevelWork& cw = sh_.engine->level_work(child);
    for (std::size_t tc = 0; tc <= csteps; ++tc) cw.h[tc] = h0c[tc];
    for (std::size_t tc = 1; tc <= csteps; ++tc) {
      DenseVector& gc = cw.g[tc];
      sh_.sys->step(child, tc, h0c[tc - 1].span(), gc.span(), *ws_);
      for (std::size_t i = 0; i < gc.dim(); ++i) gc[i] = h0c[tc][i] - gc[i] - rc[tc][i];
    }
    sh_.engine->cycle_at(child);
    for (std::size_t q = 1; q < workers(); ++q) {
      const std::size_t qlo = sh_.part.begin(q) / sh_.scale[child];
      const std::size_t qhi = sh_.part.end(q) / sh_.scale[child];
      BoundaryMessage m;
      m.tag = SweepTag::kScatter;
      m.level = static_cast<std::uint16_t>(child);
      m.sender = 0;
      m.index = qlo + 1;
      m.state.reserve((qhi - qlo) * dim);
      for (std::size_t tc = qlo + 1; tc <= qhi; ++tc)
        m.state.insert(m.state.end(), cw.h[tc].values.begin(), cw.h[tc].values.end());
      sh_.net->from_root(q).post(std::move(m));
    }
    for (std::size_t tc = C.lo + 1; tc <= C.hi; ++tc) C.h[tc - C.lo] = cw.h[tc];
  }

  // Single-level hierarchy: the whole problem gathers to worker 0 and the
  // engine's exact solve stands in for the cycle.
  void gathered_root_cycle() {
    LaneLevel& L0 = lanes_[0];
    const std::size_t dim = sh_.sys->state_dim();
    if (p_ > 0) {
      BoundaryMessage m;
      m.tag = SweepTag::kGather;
      m.level = 0;
      m.sender = static_cast<std::uint32_t>(p_);
      m.index = L0.lo + 1;
      for (std::size_t t = L0.lo + 1; t <= L0.hi; ++t)
        m.state.insert(m.state.end(), L0.h[t - L0.lo].values.begin(),
                       L0.h[t - L0.lo].values.end());
      sh_.net->to_root(p_).post(std::move(m));
      // The scatter starts at the left boundary so the cached slot is fresh
      // when the residual pass reads it.
      BoundaryMessage back = sh_.net->from_root(p_).take(SweepTag::kScatter, 0, L0.lo);
      const double* src = back.state.data();
      for (std::size_t t = L0.lo; t <= L0.hi; ++t, src += dim)
        L0.h[t - L0.lo].values.assign(src, src + dim);
      return;
    }
    MgritSolver::LevelWork& lw = sh_.engine->level_work(0);
    for (std::size_t t = L0.lo; t <= L0.hi; ++t) lw.h[t] = L0.h[t - L0.lo];
    for (std::size_t q = 1; q < workers(); ++q) {
      const std::size_t qlo = sh_.part.begin(q);
      BoundaryMessage m = sh_.net->to_root(q).take(SweepTag::kGather, 0, qlo + 1);
      const double* src = m.state.data();
      for (std::size_t t = qlo + 1; t <= sh_.part.end(q); ++t, src += dim)
        lw.h[t].values.assign(src, src + dim);
    }
    sh_.engine->cycle_at(0);
    for (std::size_t q = 1; q < workers(); ++q) {
      BoundaryMessage m;
      m.tag = SweepTag::kScatter;
      m.level = 0;
      m.sender = 0;
      m.index = sh_.part.begin(q);
      for (std::size_t t = sh_.part.begin(q); t <= sh_.part.end(q); ++t)
        m.state.insert(m.state.end(), lw.h[t].values.begin(), lw.h[t].values.end());
      sh_.net->from_root(q).post(std::move(m));
    }
    for (std::size_t t = L0.lo; t <= L0.hi; ++t) L0.h[t - L0.lo] = lw.h[t];
  }

  // Fine residual slices gathered to worker 0, which folds them in the same
  // time order as the serial norm.
  double residual_phase() {
    LaneLevel& L0 = lanes_[0];
    const SeqView h = L0.hv();
    const SeqView r = L0.rv();
    const SeqView g = L0.gv();
    const SeqView* forcing = L0.has_forcing ? &g : nullptr;
    residual_range(*sh_.sys, 0, forcing, h, r, L0.lo + 1, L0.hi, *ws_);
    const std::size_t dim = sh_.sys->state_dim();
    if (p_ > 0) {
      BoundaryMessage m;
      m.tag = SweepTag::kGather;
      m.level = 0;
      m.sender = static_cast<std::uint32_t>(p_);
      m.index = L0.lo + 1;
      for (std::size_t t = L0.lo + 1; t <= L0.hi; ++t)
        m.state.insert(m.state.end(), L0.r[t - L0.lo].values.begin(),
                       L0.r[t - L0.lo].values.end());
      sh_.net->to_root(p_).post(std::move(m));
      return -1.0;
    }
    Sequence res(sh_.sys->hierarchy().fine_steps(), dim);
    for (std::size_t t = L0.lo + 1; t <= L0.hi; ++t) res[t] = L0.r[t - L0.lo];
    for (std::size_t q = 1; q < workers(); ++q) {
      const std::size_t qlo = sh_.part.begin(q);
      BoundaryMessage m = sh_.net->to_root(q).take(SweepTag::kGather, 0, qlo + 1);
      const double* src = m.state.data();
      for (std::size_t t = qlo + 1; t <= sh_.part.end(q); ++t, src += dim)
        res[t].values.assign(src, src + dim);
    }
    return seq_l2_norm(res);
  }

  void collect_result() {
    LaneLevel& L0 = lanes_[0];
    const std::size_t dim = sh_.sys->state_dim();
    if (p_ > 0) {
      BoundaryMessage m;
      m.tag = SweepTag::kGather;
      m.level = 0;
      m.sender = static_cast<std::uint32_t>(p_);
      m.index = L0.lo + 1;
      for (std::size_t t = L0.lo + 1; t <= L0.hi; ++t)
        m.state.insert(m.state.end(), L0.h[t - L0.lo].values.begin(),
                       L0.h[t - L0.lo].values.end());
      sh_.net->to_root(p_).post(std::move(m));
      return;
    }
    Sequence& out = *sh_.output;
    for (std::size_t t = L0.lo; t <= L0.hi; ++t) out[t] = L0.h[t - L0.lo];
    for (std::size_t q = 1; q < workers(); ++q) {
      const std::size_t qlo = sh_.part.begin(q);
      BoundaryMessage m = sh_.net->to_root(q).take(SweepTag::kGather, 0, qlo + 1);
      const double* src = m.state.data();
      for (std::size_t t = qlo + 1; t <= sh_.part.end(q); ++t, src += dim)
        out[t].values.assign(src, src + dim);
    }
  }

  SolveShared& sh_;
  std::size_t p_;
  std::vector<LaneLevel> lanes_;
  std::unique_ptr<SystemScratch> ws_;
};

}  // namespace detail

// Runs `iterations` V-cycles on `h` (in/out) across opt.workers lanes.
// Identical arithmetic to MgritSolver::solve for every feasible lane count.
inline ParallelOutcome parallel_solve(const MultilevelSystem& sys, const CycleConfig& cfg,
                                      const ParallelOptions& opt, Sequence& h,
                                      std::size_t iterations,
                                      const Sequence* top_forcing = nullptr) {
  const Hierarchy& hier = sys.hierarchy();
  require_shape(h.steps() == hier.fine_steps() && h.dim() == sys.state_dim(),
                "parallel_solve iterate");
  ParallelOutcome out;
  out.partition = make_partition(hier.fine_steps(), hier.coarsening, opt.workers);
  out.distributed = plan_levels(hier, out.partition, opt.min_distributed_steps);
  out.trace.levels = hier.depth();

  InProcessTransport net(out.partition.workers, opt.recv_timeout);
  MgritSolver engine(sys, cfg, top_forcing);
  Sequence input = h;

  detail::SolveShared shared;
  shared.sys = &sys;
  shared.cfg = cfg;
  shared.part = out.partition;
  shared.distributed = out.distributed;
  shared.scale.assign(hier.depth(), 1);
  for (std::size_t l = 1; l < hier.depth(); ++l)
    shared.scale[l] = shared.scale[l - 1] * hier.coarsening;
  shared.net = &net;
  shared.input = &input;
  shared.top_forcing = top_forcing;
  shared.output = &h;
  shared.iterations = iterations;
  shared.record_residuals = opt.record_residuals;
  shared.engine = &engine;
  shared.trace = &out.trace;

  std::vector<detail::WorkerLane> lanes;
  lanes.reserve(out.partition.workers);
  for (std::size_t p = 0; p < out.partition.workers; ++p) lanes.emplace_back(shared, p);
  std::vector<std::thread> threads;
  threads.reserve(out.partition.workers);
  for (std::size_t p = 0; p < out.partition.workers; ++p)
    threads.emplace_back([&lanes, p] { lanes[p].run(); });
  for (auto& t : threads) t.join();
  if (shared.fault) std::rethrow_exception(shared.fault);

  out.trace.level_seconds = engine.level_seconds();
  for (std::size_t i = 0; i < kSweepTagCount; ++i)
    out.messages[i] = net.sent(static_cast<SweepTag>(i));
  return out;
}

}  // namespace pintgru
