#pragma once

// Classification head, Adam, the exact BPTT baseline, and the time-parallel
// training loop. One optimizer step per batch: restart the state at zero, run
// a few forward cycles, read the loss at each example's last real time index,
// run backward cycles on the reversed grid with the loss cotangents as
// forcing, assemble parameter gradients from the stored trajectory, update.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pintgru/data.hpp"
#include "pintgru/grid.hpp"
#include "pintgru/gru_cell.hpp"
#include "pintgru/mgrit.hpp"
#include "pintgru/numerics.hpp"
#include "pintgru/parallel_runtime.hpp"

namespace pintgru {

// ---------------------------------------------------------------------------
// Loss head

struct ClassifierHead {
  DenseMatrix w;  // (num_classes x hidden)
  DenseVector b;

  std::size_t num_classes() const { return w.rows; }
  std::size_t hidden_dim() const { return w.cols; }

  static ClassifierHead zeros(std::size_t classes, std::size_t hidden) {
    ClassifierHead h;
    h.w = DenseMatrix(classes, hidden);
    h.b = DenseVector(classes);
    return h;
  }

  static ClassifierHead random(std::size_t classes, std::size_t hidden, Rng& rng) {
    ClassifierHead h = zeros(classes, hidden);
    const double s = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& v : h.w.values) v = rng.uniform(-s, s);
    return h;
  }
};

inline DenseVector head_logits(const ClassifierHead& head, std::span<const double> h) {
  require_shape(h.size() == head.hidden_dim(), "head_logits");
  DenseVector z(head.num_classes());
  matvec_into(head.w, h, z.span());
  for (std::size_t k = 0; k < z.dim(); ++k) z[k] += head.b[k];
  return z;
}

struct LossOut {
  double loss = 0.0;
  DenseVector h_cotangent;  // exact gradient of (weight * loss) w.r.t. h
};

// Softmax cross-entropy of head(h) against the label. Head gradients, when
// requested, are accumulated scaled by `weight` (1/batch for a mean loss);
// the returned cotangent carries the same scale.
inline LossOut loss_and_terminal_cotangent(const ClassifierHead& head, std::span<const double> h,
                                           std::size_t label, ClassifierHead* head_grads = nullptr,
                                           double weight = 1.0) {
  if (label >= head.num_classes())
    throw std::invalid_argument("loss: label " + std::to_string(label) + " out of range");
  DenseVector z = head_logits(head, h);
  double zmax = z[0];
  for (std::size_t k = 1; k < z.dim(); ++k) zmax = std::max(zmax, z[k]);
  double sum = 0.0;
  for (std::size_t k = 0; k < z.dim(); ++k) sum += std::exp(z[k] - zmax);
  LossOut out;
  out.loss = std::log(sum) - (z[label] - zmax);
  DenseVector d(z.dim());  // softmax - onehot, scaled
  for (std::size_t k = 0; k < z.dim(); ++k)
    d[k] = weight * (std::exp(z[k] - zmax) / sum - (k == label ? 1.0 : 0.0));
  out.h_cotangent = DenseVector(head.hidden_dim());
  matvec_transpose_acc(head.w, d.span(), out.h_cotangent.span());
  if (head_grads != nullptr) {
    outer_acc(head_grads->w, d.span(), h);
    for (std::size_t k = 0; k < d.dim(); ++k) head_grads->b[k] += d[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;
};

// Standard bias-corrected update; the state lazily adopts the parameter shape
// on first use and rejects any later mismatch.
inline void adam_step(AdamState& st, std::span<double> params, std::span<const double> grads,
                      double lr, const AdamConfig& cfg = {}) {
  require_shape(params.size() == grads.size(), "adam_step params/grads");
  if (st.m.empty() && st.v.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  require_shape(st.m.size() == params.size() && st.v.size() == params.size(), "adam_step state");
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    params[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + cfg.eps);
  }
}

// Halve every `every` epochs, never below the floor.
inline double scheduled_lr(double base, std::size_t epoch, std::size_t every = 5,
                           double floor = 1.25e-4) {
  const double lr = base * std::pow(0.5, static_cast<double>(epoch / every));
  return std::max(lr, floor);
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  GruStack stack;
  ClassifierHead head;
  StepKind kind = StepKind::kImplicit;
};

inline void save_model(std::ostream& os, const Model& m) {
  os << "pintgru-model 1\n";
  os << "kind " << step_kind_name(m.kind) << '\n';
  save_stack(os, m.stack);
  os << "head " << m.head.num_classes() << ' ' << m.head.hidden_dim() << '\n';
  detail::write_matrix(os, "w", m.head.w);
  detail::write_vector(os, "b", m.head.b);
}

inline Model load_model(std::istream& is) {
  std::string magic, version;
  if (!(is >> magic >> version) || magic != "pintgru-model" || version != "1")
    throw std::runtime_error("checkpoint: bad model header");
  std::string tok, kind;
  if (!(is >> tok >> kind) || tok != "kind")
    throw std::runtime_error("checkpoint: bad kind line");
  Model m;
  m.kind = parse_step_kind(kind);
  m.stack = load_stack(is);
  std::size_t classes = 0, hidden = 0;
  if (!(is >> tok >> classes >> hidden) || tok != "head")
    throw std::runtime_error("checkpoint: bad head line");
  m.head.w = detail::read_matrix(is, "w");
  m.head.b = detail::read_vector(is, "b");
  require_shape(m.head.w.rows == classes && m.head.w.cols == hidden &&
                    m.head.b.dim() == classes && hidden == m.stack.hidden_dim,
                "checkpoint head dims");
  return m;
}

// One Adam state per tensor, stack tensors first then head, all sharing the
// per-batch step count.
struct ModelOptimizer {
  std::vector<AdamState> states;
  AdamConfig cfg;

  void apply(Model& m, const GruStack& g_stack, const ClassifierHead& g_head, double lr) {
    std::vector<std::vector<double>*> params;
    for_each_stack_tensor(m.stack, [&](std::vector<double>& t) { params.push_back(&t); });
    params.push_back(&m.head.w.values);
    params.push_back(&m.head.b.values);
    std::vector<const std::vector<double>*> grads;
    for_each_stack_tensor(g_stack, [&](const std::vector<double>& t) { grads.push_back(&t); });
    grads.push_back(&g_head.w.values);
    grads.push_back(&g_head.b.values);
    require_shape(params.size() == grads.size(), "optimizer tensor count");
    if (states.empty()) states.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      adam_step(states[i], {params[i]->data(), params[i]->size()},
                {grads[i]->data(), grads[i]->size()}, lr, cfg);
  }
};

// ---------------------------------------------------------------------------
// Exact serial baseline

struct GradientBundle {
  double loss = 0.0;
  GruStack stack;
  ClassifierHead head;
};

// Reverse sweep alone: transports injected cotangents (natural time order,
// zero rows where no loss attaches) through the stored trajectory and
// accumulates parameter gradients.
inline GruStack bptt_gradient(const GruStack& stack, StepKind kind, const Sequence& x,
                              const Sequence& h_stored, const Sequence& w_injected) {
  GruStack grads = stack_zeros_like(stack);
  StackScratch ws;
  DenseVector v(h_stored.dim()), vp(h_stored.dim());
  for (std::size_t t = h_stored.steps(); t >= 1; --t) {
    for (std::size_t i = 0; i < v.dim(); ++i) v[i] += w_injected[t][i];
    batch_adjoint_step(stack, kind, 1.0, x[t].span(), h_stored[t - 1].span(), v.span(),
                       vp.span(), &grads, ws);
    std::swap(v, vp);
  }
  return grads;
}

namespace detail {

// Mean loss, head gradients, accuracy hits, and the injected cotangent rows
// at each example's last real index. Shared by the serial and MGRIT paths so
// both differentiate exactly the same objective.
inline double terminal_loss(const GruStack& stack, const ClassifierHead& head, const Sequence& h,
                            std::span<const std::size_t> labels,
                            std::span<const std::size_t> lengths, Sequence& w_injected,
                            ClassifierHead* head_grads, std::size_t* hits) {
  const std::size_t sd = stack.state_dim();
  const std::size_t hd = stack.hidden_dim;
  const std::size_t batch = h.dim() / sd;
  require_shape(labels.size() == batch, "terminal_loss labels");
  require_shape(lengths.empty() || lengths.size() == batch, "terminal_loss lengths");
  const double weight = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t t = lengths.empty() ? h.steps() : lengths[b];
    require_shape(t >= 1 && t <= h.steps(), "terminal_loss length");
    const auto top = h[t].span().subspan(b * sd + sd - hd, hd);
    LossOut lo = loss_and_terminal_cotangent(head, top, labels[b], head_grads, weight);
    loss += weight * lo.loss;
    auto row = w_injected[t].span().subspan(b * sd + sd - hd, hd);
    for (std::size_t i = 0; i < hd; ++i) row[i] += lo.h_cotangent[i];
    if (hits != nullptr) {
      DenseVector z = head_logits(head, top);
      std::size_t arg = 0;
      for (std::size_t k = 1; k < z.dim(); ++k)
        if (z[k] > z[arg]) arg = k;
      *hits += arg == labels[b] ? 1 : 0;
    }
  }
  return loss;
}

}  // namespace detail

// Exact forward propagation plus exact reverse sweep; the reference gradient.
inline GradientBundle serial_bptt(const GruStack& stack, const ClassifierHead& head,
                                  StepKind kind, const Sequence& x,
                                  std::span<const std::size_t> labels,
                                  std::span<const std::size_t> lengths = {}) {
  const std::size_t batch = x.dim() / stack.input_dim;
  Sequence h(x.steps(), batch * stack.state_dim());
  StackScratch ws;
  for (std::size_t t = 1; t <= x.steps(); ++t)
    batch_step(stack, kind, 1.0, x[t].span(), h[t - 1].span(), h[t].span(), ws);

  GradientBundle out;
  out.head = ClassifierHead::zeros(head.num_classes(), head.hidden_dim());
  Sequence w(x.steps(), h.dim());
  out.loss = detail::terminal_loss(stack, head, h, labels, lengths, w, &out.head, nullptr);
  out.stack = bptt_gradient(stack, kind, x, h, w);
  return out;
}

// ---------------------------------------------------------------------------
// Time-parallel gradient step

struct StepStats {
  double loss = 0.0;
  double fwd_residual = -1.0;  // last recorded cycle residual, -1 when unrecorded
  double bwd_residual = -1.0;
  std::size_t hits = 0;  // batch argmax matches at the loss read-out
};

struct TrainStep {
  GradientBundle grads;
  StepStats stats;
};

// One batch of the multigrid training scheme: zero state restart, fwd_iters
// forward cycles, terminal cotangents, bwd_iters backward cycles on the
// reversed grid (cotangent rows ride along as fine-level forcing), gradient
// assembly per coarse block from the stored trajectory.
inline TrainStep mgrit_train_step(const Model& m, const Sequence& x,
                                  std::span<const std::size_t> labels,
                                  std::span<const std::size_t> lengths, const CycleConfig& cycle,
                                  const ParallelOptions& popt) {
  const std::size_t batch = x.dim() / m.stack.input_dim;
  const std::size_t dim = batch * m.stack.state_dim();
  Hierarchy hier = build_hierarchy(x.steps(), cycle.coarsening, cycle.max_levels);

  GruForwardSystem fwd_sys(m.stack, m.kind, x, hier);
  Sequence h(x.steps(), dim);
  ParallelOutcome fwd = parallel_solve(fwd_sys, cycle, popt, h, cycle.fwd_iters);

  TrainStep out;
  out.grads.head = ClassifierHead::zeros(m.head.num_classes(), m.head.hidden_dim());
  Sequence w_nat(x.steps(), dim);
  out.grads.loss = detail::terminal_loss(m.stack, m.head, h, labels, lengths, w_nat,
                                         &out.grads.head, &out.stats.hits);
  out.stats.loss = out.grads.loss;

  GruAdjointSystem adj_sys(m.stack, m.kind, x, h, hier);
  Sequence forcing = reverse_sequence(w_nat);
  Sequence v(x.steps(), dim);
  v[0] = forcing[0];  // cotangent at the final time anchors the reversed grid
  ParallelOutcome bwd = parallel_solve(adj_sys, cycle, popt, v, cycle.bwd_iters, &forcing);
  Sequence w_hat = reverse_sequence(v);

  out.grads.stack = assemble_gradient(m.stack, m.kind, x, h, w_hat, hier.coarsening);
  if (!fwd.trace.iterations.empty()) out.stats.fwd_residual = fwd.trace.iterations.back().residual;
  if (!bwd.trace.iterations.empty()) out.stats.bwd_residual = bwd.trace.iterations.back().residual;
  return out;
}

// ---------------------------------------------------------------------------
// Inference

enum class InferMode { kSerial, kMgrit };

struct InferResult {
  std::vector<std::size_t> labels;
  std::vector<DenseVector> logits;
};

inline InferResult infer(const Model& m, const Sequence& x, std::span<const std::size_t> lengths,
                         InferMode mode, const CycleConfig& cycle = {},
                         const ParallelOptions& popt = {}) {
  const std::size_t sd = m.stack.state_dim();
  const std::size_t hd = m.stack.hidden_dim;
  const std::size_t batch = x.dim() / m.stack.input_dim;
  Sequence h(x.steps(), batch * sd);
  if (mode == InferMode::kSerial) {
    StackScratch ws;
    for (std::size_t t = 1; t <= x.steps(); ++t)
      batch_step(m.stack, m.kind, 1.0, x[t].span(), h[t - 1].span(), h[t].span(), ws);
  } else {
    Hierarchy hier = build_hierarchy(x.steps(), cycle.coarsening, cycle.max_levels);
    GruForwardSystem sys(m.stack, m.kind, x, hier);
    ParallelOptions opt = popt;
    opt.record_residuals = false;
    parallel_solve(sys, cycle, opt, h, cycle.fwd_iters);
  }
  InferResult out;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t t = lengths.empty() ? x.steps() : lengths[b];
    const auto top = h[t].span().subspan(b * sd + sd - hd, hd);
    DenseVector z = head_logits(m.head, top);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < z.dim(); ++k)
      if (z[k] > z[arg]) arg = k;
    out.labels.push_back(arg);
    out.logits.push_back(std::move(z));
  }
  return out;
}

inline double evaluate_accuracy(const Model& m, const LabeledSequenceSet& set, InferMode mode,
                                const CycleConfig& cycle = {}, const ParallelOptions& popt = {},
                                std::size_t batch = 100) {
  if (set.size() == 0) return 0.0;
  std::size_t hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s0 = 0; s0 < set.size(); s0 += batch) {
    const std::size_t s1 = std::min(set.size(), s0 + batch);
    idx.clear();
    for (std::size_t s = s0; s < s1; ++s) idx.push_back(s);
    Sequence x = pack_batch(set, idx);
    std::vector<std::size_t> lengths;
    for (std::size_t s : idx) lengths.push_back(set.lengths[s]);
    InferResult r = infer(m, x, lengths, mode, cycle, popt);
    for (std::size_t b = 0; b < idx.size(); ++b) hits += r.labels[b] == set.labels[idx[b]] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

// ---------------------------------------------------------------------------
// Training loop

enum class PropagationMode { kSerial, kMgrit };

struct TrainConfig {
  std::size_t hidden = 32;
  std::size_t layers = 2;
  StepKind kind = StepKind::kImplicit;
  PropagationMode propagation = PropagationMode::kMgrit;
  double lr = 1e-3;
  std::size_t batch = 100;
  std::size_t epochs = 20;
  bool schedule = true;
  std::size_t halve_every = 5;
  double lr_floor = 1.25e-4;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;  // -1 when no test split
  double fwd_residual = -1.0;
  double bwd_residual = -1.0;
  double seconds = 0.0;
};

inline std::string format_epoch_record(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "epoch=%zu lr=%.6g train_loss=%.8g train_acc=%.4f test_acc=%.4f "
                "fwd_res=%.6g bwd_res=%.6g seconds=%.3f",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc, r.fwd_residual,
                r.bwd_residual, r.seconds);
  return buf;
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> epochs;
};

inline TrainResult mgrit_training(const TrainConfig& tc, const CycleConfig& cycle,
                                  const LabeledSequenceSet& train,
                                  const LabeledSequenceSet* test = nullptr,
                                  std::ostream* log = nullptr) {
  if (tc.lr <= 0.0 || tc.batch == 0 || tc.hidden == 0 || tc.layers == 0)
    throw std::invalid_argument("train config: rates and counts must be positive");
  if (train.size() == 0) throw std::invalid_argument("train config: empty training set");

  Rng rng(tc.seed);
  TrainResult out;
  out.model.kind = tc.kind;
  out.model.stack = GruStack::random(tc.layers, train.feature_dim, tc.hidden, rng);
  out.model.head = ClassifierHead::random(train.num_classes, tc.hidden, rng);
  ModelOptimizer opt;

  ParallelOptions popt;
  popt.workers = tc.workers;

  std::vector<std::size_t> perm(train.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        tc.schedule ? scheduled_lr(tc.lr, epoch, tc.halve_every, tc.lr_floor) : tc.lr;
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[rng.index(i)]);

    double loss_sum = 0.0, fwd_sum = 0.0, bwd_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s0 = 0; s0 < perm.size(); s0 += tc.batch) {
      const std::size_t s1 = std::min(perm.size(), s0 + tc.batch);
      const std::span<const std::size_t> idx(perm.data() + s0, s1 - s0);
      Sequence x = pack_batch(train, idx);
      std::vector<std::size_t> labels, lengths;
      for (std::size_t s : idx) {
        labels.push_back(train.labels[s]);
        lengths.push_back(train.lengths[s]);
      }

      GradientBundle grads;
      StepStats stats;
      if (tc.propagation == PropagationMode::kMgrit) {
        TrainStep step = mgrit_train_step(out.model, x, labels, lengths, cycle, popt);
        grads = std::move(step.grads);
        stats = step.stats;
      } else {
        grads = serial_bptt(out.model.stack, out.model.head, out.model.kind, x, labels, lengths);
        stats.loss = grads.loss;
      }
      if (!std::isfinite(stats.loss))
        throw TrainingDiverged("training loss is not finite at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batches) + ", lr " +
                               std::to_string(lr));
      opt.apply(out.model, grads.stack, grads.head, lr);
      loss_sum += stats.loss;
      fwd_sum += stats.fwd_residual;
      bwd_sum += stats.bwd_residual;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.train_acc = evaluate_accuracy(out.model, train, InferMode::kSerial, cycle, popt, tc.batch);
    rec.test_acc = test != nullptr
                       ? evaluate_accuracy(out.model, *test, InferMode::kSerial, cycle, popt,
                                           tc.batch)
                       : -1.0;
    rec.fwd_residual = fwd_sum / static_cast<double>(batches);
    rec.bwd_residual = bwd_sum / static_cast<double>(batches);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log != nullptr) *log << format_epoch_record(rec) << '\n';
    out.epochs.push_back(rec);
  }
  return out;
}

}  // namespace pintgru
