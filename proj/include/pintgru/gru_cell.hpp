#pragma once

// GRU cell in two time-stepping forms sharing one set of gates:
//   classic:  h_t = h_{t-1} + gamma * ((1-z) .* (n - h_{t-1}))
//   implicit: h_t = (1 + gamma*(1-z))^-1 .* (h_{t-1} + gamma*(1-z) .* n)
// Gates are always evaluated at (x_t, h_{t-1}); the implicit form therefore
// stays a diagonal solve. gamma = 1 in the classic form recovers the textbook
// GRU update z.*h + (1-z).*n.
//
// The reverse-mode kernels below are the single source of truth for every
// gradient in the project: serial backprop through time, the coarse adjoint
// propagators, and gradient assembly all call the same span-level VJP.

#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pintgru/numerics.hpp"

namespace pintgru {

enum class StepKind { kClassic, kImplicit };

inline const char* step_kind_name(StepKind k) {
  return k == StepKind::kClassic ? "classic" : "implicit";
}

inline StepKind parse_step_kind(const std::string& s) {
  if (s == "classic") return StepKind::kClassic;
  if (s == "implicit") return StepKind::kImplicit;
  throw std::invalid_argument("unknown step kind: " + s);
}

struct GruParams {
  DenseMatrix w_ir, w_iz, w_in;  // input-to-hidden, (hidden x input)
  DenseMatrix w_hr, w_hz, w_hn;  // hidden-to-hidden, (hidden x hidden)
  DenseVector b_ir, b_hr, b_iz, b_hz, b_in, b_hn;

  std::size_t hidden_dim() const { return w_hr.rows; }
  std::size_t input_dim() const { return w_ir.cols; }

  static GruParams zeros(std::size_t hidden, std::size_t input) {
    GruParams p;
    p.w_ir = DenseMatrix(hidden, input);
    p.w_iz = DenseMatrix(hidden, input);
    p.w_in = DenseMatrix(hidden, input);
    p.w_hr = DenseMatrix(hidden, hidden);
    p.w_hz = DenseMatrix(hidden, hidden);
    p.w_hn = DenseMatrix(hidden, hidden);
    p.b_ir = DenseVector(hidden);
    p.b_hr = DenseVector(hidden);
    p.b_iz = DenseVector(hidden);
    p.b_hz = DenseVector(hidden);
    p.b_in = DenseVector(hidden);
    p.b_hn = DenseVector(hidden);
    return p;
  }

  // Uniform [-k, k] with k = hidden^-1/2, matching common recurrent-net init.
  static GruParams random(std::size_t hidden, std::size_t input, Rng& rng) {
    GruParams p = zeros(hidden, input);
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto fill = [&](std::vector<double>& v) {
      for (double& x : v) x = rng.uniform(-k, k);
    };
    fill(p.w_ir.values);
    fill(p.w_iz.values);
    fill(p.w_in.values);
    fill(p.w_hr.values);
    fill(p.w_hz.values);
    fill(p.w_hn.values);
    fill(p.b_ir.values);
    fill(p.b_hr.values);
    fill(p.b_iz.values);
    fill(p.b_hz.values);
    fill(p.b_in.values);
    fill(p.b_hn.values);
    return p;
  }
};

struct GateActivations {
  DenseVector r, z, n;
};

// Everything needed to linearize one step: the point (x, h_prev), the gate
// values there, the candidate inner term m = w_hn h_prev + b_hn (the reset
// gate multiplies the whole term, bias included), and the step-map output.
struct StepTape {
  StepKind kind = StepKind::kImplicit;
  double gamma = 1.0;
  DenseVector x, h_prev;
  DenseVector r, z, n, m;
  DenseVector h_out;
};

// Scratch for the span-level kernels, sized on first use.
struct CellScratch {
  DenseVector r, z, n, m;
  DenseVector u_n, u_m, g_r, g_z;

  void resize(std::size_t hidden) {
    for (DenseVector* v : {&r, &z, &n, &m, &u_n, &u_m, &g_r, &g_z})
      if (v->dim() != hidden) *v = DenseVector(hidden);
  }
};

namespace detail {

// Gate evaluation at (x, h_prev) into ws.r/ws.z/ws.n/ws.m.
inline void gates_span(const GruParams& p, std::span<const double> x,
                       std::span<const double> h_prev, CellScratch& ws) {
  const std::size_t hd = p.hidden_dim();
  require_shape(x.size() == p.input_dim() && h_prev.size() == hd, "gru gates");
  ws.resize(hd);
  matvec_into(p.w_ir, x, ws.r.span());
  matvec_acc(p.w_hr, h_prev, ws.r.span());
  matvec_into(p.w_iz, x, ws.z.span());
  matvec_acc(p.w_hz, h_prev, ws.z.span());
  matvec_into(p.w_hn, h_prev, ws.m.span());
  matvec_into(p.w_in, x, ws.n.span());
  for (std::size_t i = 0; i < hd; ++i) {
    ws.r[i] = sigmoid(ws.r[i] + p.b_ir[i] + p.b_hr[i]);
    ws.z[i] = sigmoid(ws.z[i] + p.b_iz[i] + p.b_hz[i]);
    ws.m[i] += p.b_hn[i];
    ws.n[i] = std::tanh(ws.n[i] + p.b_in[i] + ws.r[i] * ws.m[i]);
  }
}

inline void step_from_gates(StepKind kind, double gamma, std::span<const double> h_prev,
                            const CellScratch& ws, std::span<double> h_out) {
  const std::size_t hd = h_prev.size();
  if (kind == StepKind::kClassic) {
    for (std::size_t i = 0; i < hd; ++i) {
      const double a = gamma * (1.0 - ws.z[i]);
      h_out[i] = h_prev[i] + a * (ws.n[i] - h_prev[i]);
    }
  } else {
    for (std::size_t i = 0; i < hd; ++i) {
      const double a = gamma * (1.0 - ws.z[i]);
      h_out[i] = (h_prev[i] + a * ws.n[i]) / (1.0 + a);
    }
  }
}

inline void step_span(const GruParams& p, StepKind kind, double gamma,
                      std::span<const double> x, std::span<const double> h_prev,
                      std::span<double> h_out, CellScratch& ws) {
  gates_span(p, x, h_prev, ws);
  step_from_gates(kind, gamma, h_prev, ws, h_out);
}

// Reverse-mode step through one cell at the tape's linearization point.
//   w       : cotangent of h_out
//   w_prev  : overwritten with (dh_out/dh_prev)^T w
//   w_x_acc : if non-null, accumulated with (dh_out/dx)^T w
//   grad    : if non-null, accumulated with (dh_out/dtheta)^T w
inline void step_vjp_span(const GruParams& p, const StepTape& tape, std::span<const double> w,
                          std::span<double> w_prev, std::span<double>* w_x_acc,
                          GruParams* grad, CellScratch& ws) {
  const std::size_t hd = p.hidden_dim();
  require_shape(w.size() == hd && w_prev.size() == hd, "step_vjp");
  ws.resize(hd);
  const double gamma = tape.gamma;
  for (std::size_t i = 0; i < hd; ++i) {
    const double z = tape.z[i];
    const double n = tape.n[i];
    const double a = gamma * (1.0 - z);
    double u_z, u_n;
    if (tape.kind == StepKind::kClassic) {
      w_prev[i] = (1.0 - a) * w[i];
      u_z = -gamma * (n - tape.h_prev[i]) * w[i];
      u_n = a * w[i];
    } else {
      const double d = 1.0 + a;
      w_prev[i] = w[i] / d;
      u_z = -gamma * (n - tape.h_out[i]) / d * w[i];
      u_n = a / d * w[i];
    }
    const double g_n = (1.0 - n * n) * u_n;        // through tanh
    const double u_r = tape.m[i] * g_n;
    const double r = tape.r[i];
    ws.u_n[i] = g_n;
    ws.u_m[i] = r * g_n;
    ws.g_r[i] = r * (1.0 - r) * u_r;               // through sigma
    ws.g_z[i] = z * (1.0 - z) * u_z;
  }
  matvec_transpose_acc(p.w_hn, ws.u_m.span(), w_prev);
  matvec_transpose_acc(p.w_hr, ws.g_r.span(), w_prev);
  matvec_transpose_acc(p.w_hz, ws.g_z.span(), w_prev);
  if (w_x_acc != nullptr) {
    matvec_transpose_acc(p.w_in, ws.u_n.span(), *w_x_acc);
    matvec_transpose_acc(p.w_ir, ws.g_r.span(), *w_x_acc);
    matvec_transpose_acc(p.w_iz, ws.g_z.span(), *w_x_acc);
  }
  if (grad != nullptr) {
    const auto x = tape.x.span();
    const auto h = tape.h_prev.span();
    outer_acc(grad->w_in, ws.u_n.span(), x);
    outer_acc(grad->w_hn, ws.u_m.span(), h);
    outer_acc(grad->w_ir, ws.g_r.span(), x);
    outer_acc(grad->w_hr, ws.g_r.span(), h);
    outer_acc(grad->w_iz, ws.g_z.span(), x);
    outer_acc(grad->w_hz, ws.g_z.span(), h);
    for (std::size_t i = 0; i < hd; ++i) {
      grad->b_in[i] += ws.u_n[i];
      grad->b_hn[i] += ws.u_m[i];
      grad->b_ir[i] += ws.g_r[i];
      grad->b_hr[i] += ws.g_r[i];
      grad->b_iz[i] += ws.g_z[i];
      grad->b_hz[i] += ws.g_z[i];
    }
  }
}

}  // namespace detail

inline GateActivations gates(const GruParams& p, const DenseVector& x, const DenseVector& h_prev) {
  CellScratch ws;
  detail::gates_span(p, x.span(), h_prev.span(), ws);
  return {ws.r, ws.z, ws.n};
}

inline DenseVector step_classic(const GruParams& p, double gamma, const DenseVector& x,
                                const DenseVector& h_prev) {
  CellScratch ws;
  DenseVector out(p.hidden_dim());
  detail::step_span(p, StepKind::kClassic, gamma, x.span(), h_prev.span(), out.span(), ws);
  return out;
}

inline DenseVector step_implicit(const GruParams& p, double gamma, const DenseVector& x,
                                 const DenseVector& h_prev) {
  CellScratch ws;
  DenseVector out(p.hidden_dim());
  detail::step_span(p, StepKind::kImplicit, gamma, x.span(), h_prev.span(), out.span(), ws);
  return out;
}

inline DenseVector gru_step(const GruParams& p, StepKind kind, double gamma, const DenseVector& x,
                            const DenseVector& h_prev) {
  return kind == StepKind::kClassic ? step_classic(p, gamma, x, h_prev)
                                    : step_implicit(p, gamma, x, h_prev);
}

// Continuous-time right-hand side: dh/dt = -(1-z).*h + (1-z).*n.
inline DenseVector rhs(const GruParams& p, const DenseVector& x, const DenseVector& h) {
  CellScratch ws;
  detail::gates_span(p, x.span(), h.span(), ws);
  DenseVector out(p.hidden_dim());
  for (std::size_t i = 0; i < out.dim(); ++i)
    out[i] = (1.0 - ws.z[i]) * (ws.n[i] - h[i]);
  return out;
}

// Largest stable explicit step for one component: dt <= 2/(1-z); z = 1 means
// the component imposes no restriction.
inline double stable_step_bound_explicit(double z) {
  if (z < 0.0 || z > 1.0)
    throw std::invalid_argument("stable_step_bound_explicit: z must be in [0, 1]");
  if (z == 1.0) return kInf;
  return 2.0 / (1.0 - z);
}

// Rebuilds the linearization record for the step ending with these arguments.
inline void make_tape(const GruParams& p, StepKind kind, double gamma,
                      std::span<const double> x, std::span<const double> h_prev,
                      StepTape& tape, CellScratch& ws) {
  detail::gates_span(p, x, h_prev, ws);
  const std::size_t hd = p.hidden_dim();
  tape.kind = kind;
  tape.gamma = gamma;
  tape.x.values.assign(x.begin(), x.end());
  tape.h_prev.values.assign(h_prev.begin(), h_prev.end());
  tape.r = ws.r;
  tape.z = ws.z;
  tape.n = ws.n;
  tape.m = ws.m;
  if (tape.h_out.dim() != hd) tape.h_out = DenseVector(hd);
  detail::step_from_gates(kind, gamma, h_prev, ws, tape.h_out.span());
}

inline StepTape step_with_tape(const GruParams& p, StepKind kind, double gamma,
                               const DenseVector& x, const DenseVector& h_prev) {
  StepTape tape;
  CellScratch ws;
  make_tape(p, kind, gamma, x.span(), h_prev.span(), tape, ws);
  return tape;
}

// w_prev = (dh_t/dh_{t-1})^T w_t with parameter contributions accumulated
// into `grad` (pass nullptr to skip).
inline DenseVector step_vjp(const GruParams& p, const StepTape& tape, const DenseVector& w_t,
                            GruParams* grad) {
  CellScratch ws;
  DenseVector w_prev(p.hidden_dim());
  detail::step_vjp_span(p, tape, w_t.span(), w_prev.span(), nullptr, grad, ws);
  return w_prev;
}

// ---------------------------------------------------------------------------
// Stacked cells. The MGRIT state for a stack of L layers over a batch of B
// sequences is one flat vector laid out [batch][layer][hidden]; inputs are
// laid out [batch][input_dim]. Layer 0 consumes the data input, layer l > 0
// consumes layer l-1's output at the same time index.

struct GruStack {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<GruParams> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t state_dim() const { return num_layers() * hidden_dim; }

  static GruStack zeros(std::size_t num_layers, std::size_t input, std::size_t hidden) {
    if (num_layers == 0) throw std::invalid_argument("GruStack: need at least one layer");
    GruStack s;
    s.input_dim = input;
    s.hidden_dim = hidden;
    s.layers.reserve(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l)
      s.layers.push_back(GruParams::zeros(hidden, l == 0 ? input : hidden));
    return s;
  }

  static GruStack random(std::size_t num_layers, std::size_t input, std::size_t hidden,
                         Rng& rng) {
    GruStack s = zeros(num_layers, input, hidden);
    for (std::size_t l = 0; l < num_layers; ++l)
      s.layers[l] = GruParams::random(hidden, l == 0 ? input : hidden, rng);
    return s;
  }
};

// Gradient accumulator shaped like the stack's parameters.
inline GruStack stack_zeros_like(const GruStack& s) {
  return GruStack::zeros(s.num_layers(), s.input_dim, s.hidden_dim);
}

struct StackScratch {
  CellScratch cell;
  std::vector<StepTape> tapes;     // one per layer
  DenseVector v;                   // modified cotangent within a step
  DenseVector v_below;             // input cotangent flowing to the layer below
  DenseVector w_prev_layer;

  void resize(std::size_t layers, std::size_t hidden) {
    tapes.resize(layers);
    for (DenseVector* x : {&v, &v_below, &w_prev_layer})
      if (x->dim() != hidden) *x = DenseVector(hidden);
  }
};

namespace detail {

// One forward step of the whole stack for one batch element, writing per-layer
// tapes into ws.tapes.
inline void stack_step_span(const GruStack& s, StepKind kind, double gamma,
                            std::span<const double> x, std::span<const double> h_prev,
                            std::span<double> h_out, StackScratch& ws) {
  const std::size_t hd = s.hidden_dim;
  ws.resize(s.num_layers(), hd);
  std::span<const double> input = x;
  for (std::size_t l = 0; l < s.num_layers(); ++l) {
    make_tape(s.layers[l], kind, gamma, input, h_prev.subspan(l * hd, hd), ws.tapes[l],
              ws.cell);
    auto out_l = h_out.subspan(l * hd, hd);
    for (std::size_t i = 0; i < hd; ++i) out_l[i] = ws.tapes[l].h_out[i];
    input = out_l;
  }
}

// Reverse step of the whole stack for one batch element at the linearization
// point (x, h_prev). Cotangent flow inside a step goes top layer down: the
// value consumed by layer l's parameter VJP is w_l plus whatever layer l+1
// pushed onto its input.
inline void stack_adjoint_step_span(const GruStack& s, StepKind kind, double gamma,
                                    std::span<const double> x, std::span<const double> h_prev,
                                    std::span<const double> w, std::span<double> w_prev,
                                    GruStack* grads, StackScratch& ws) {
  const std::size_t hd = s.hidden_dim;
  const std::size_t nl = s.num_layers();
  ws.resize(nl, hd);
  // Rebuild the in-step forward values; tapes hold each layer's (input, h_prev).
  {
    std::span<const double> input = x;
    for (std::size_t l = 0; l < nl; ++l) {
      make_tape(s.layers[l], kind, gamma, input, h_prev.subspan(l * hd, hd), ws.tapes[l],
                ws.cell);
      input = ws.tapes[l].h_out.span();
    }
  }
  for (std::size_t i = 0; i < hd; ++i) ws.v_below[i] = 0.0;
  for (std::size_t l = nl; l-- > 0;) {
    for (std::size_t i = 0; i < hd; ++i) ws.v[i] = w[l * hd + i] + ws.v_below[i];
    for (std::size_t i = 0; i < hd; ++i) ws.v_below[i] = 0.0;
    std::span<double> sink = ws.v_below.span();
    std::span<double>* input_sink = l > 0 ? &sink : nullptr;
    detail::step_vjp_span(s.layers[l], ws.tapes[l], ws.v.span(),
                          ws.w_prev_layer.span(), input_sink,
                          grads != nullptr ? &grads->layers[l] : nullptr, ws.cell);
    auto wp = w_prev.subspan(l * hd, hd);
    for (std::size_t i = 0; i < hd; ++i) wp[i] = ws.w_prev_layer[i];
  }
}

}  // namespace detail

// Per-layer convenience form used by small-scale callers and tests.
inline std::vector<DenseVector> stack_step(const GruStack& s, StepKind kind, double gamma,
                                           const DenseVector& x,
                                           const std::vector<DenseVector>& h_prev) {
  require_shape(h_prev.size() == s.num_layers(), "stack_step layer count");
  DenseVector flat_prev(s.state_dim());
  for (std::size_t l = 0; l < s.num_layers(); ++l) {
    require_shape(h_prev[l].dim() == s.hidden_dim, "stack_step layer dim");
    for (std::size_t i = 0; i < s.hidden_dim; ++i)
      flat_prev[l * s.hidden_dim + i] = h_prev[l][i];
  }
  DenseVector flat_out(s.state_dim());
  StackScratch ws;
  detail::stack_step_span(s, kind, gamma, x.span(), flat_prev.span(), flat_out.span(), ws);
  std::vector<DenseVector> out(s.num_layers(), DenseVector(s.hidden_dim));
  for (std::size_t l = 0; l < s.num_layers(); ++l)
    for (std::size_t i = 0; i < s.hidden_dim; ++i) out[l][i] = flat_out[l * s.hidden_dim + i];
  return out;
}

// Batched flat-state step: x is [batch][input_dim], h is [batch][state_dim].
inline void batch_step(const GruStack& s, StepKind kind, double gamma,
                       std::span<const double> x, std::span<const double> h_prev,
                       std::span<double> h_out, StackScratch& ws) {
  const std::size_t sd = s.state_dim();
  require_shape(h_prev.size() % sd == 0 && h_prev.size() == h_out.size(), "batch_step state");
  const std::size_t batch = h_prev.size() / sd;
  require_shape(x.size() == batch * s.input_dim, "batch_step input");
  for (std::size_t b = 0; b < batch; ++b)
    detail::stack_step_span(s, kind, gamma, x.subspan(b * s.input_dim, s.input_dim),
                            h_prev.subspan(b * sd, sd), h_out.subspan(b * sd, sd), ws);
}

inline void batch_adjoint_step(const GruStack& s, StepKind kind, double gamma,
                               std::span<const double> x, std::span<const double> h_prev,
                               std::span<const double> w, std::span<double> w_prev,
                               GruStack* grads, StackScratch& ws) {
  const std::size_t sd = s.state_dim();
  require_shape(w.size() == w_prev.size() && w.size() % sd == 0, "batch_adjoint_step state");
  const std::size_t batch = w.size() / sd;
  require_shape(x.size() == batch * s.input_dim && h_prev.size() == batch * sd,
                "batch_adjoint_step input");
  for (std::size_t b = 0; b < batch; ++b)
    detail::stack_adjoint_step_span(s, kind, gamma, x.subspan(b * s.input_dim, s.input_dim),
                                    h_prev.subspan(b * sd, sd), w.subspan(b * sd, sd),
                                    w_prev.subspan(b * sd, sd), grads, ws);
}

// Visits every parameter tensor's value vector in the fixed checkpoint order.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(p.w_ir.values);
  fn(p.w_iz.values);
  fn(p.w_in.values);
  fn(p.w_hr.values);
  fn(p.w_hz.values);
  fn(p.w_hn.values);
  fn(p.b_ir.values);
  fn(p.b_hr.values);
  fn(p.b_iz.values);
  fn(p.b_hz.values);
  fn(p.b_in.values);
  fn(p.b_hn.values);
}

template <class Stack, class Fn>
void for_each_stack_tensor(Stack& s, Fn&& fn) {
  for (auto& layer : s.layers) for_each_tensor(layer, fn);
}

// ---------------------------------------------------------------------------
// Checkpoint text format (documented in README): a "pintgru-stack 1" header,
// the dims line, then per layer the twelve tensors in the fixed order
// w_ir w_iz w_in w_hr w_hz w_hn b_ir b_hr b_iz b_hz b_in b_hn, each as a
// name/shape line followed by rows of %.17g values.

namespace detail {

inline void write_matrix(std::ostream& os, const char* name, const DenseMatrix& m) {
  os << name << ' ' << m.rows << ' ' << m.cols << '\n';
  char buf[32];
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      os << buf << (c + 1 == m.cols ? '\n' : ' ');
    }
  }
}

inline void write_vector(std::ostream& os, const char* name, const DenseVector& v) {
  os << name << ' ' << v.dim() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < v.dim(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    os << buf << (i + 1 == v.dim() ? '\n' : ' ');
  }
}

inline DenseMatrix read_matrix(std::istream& is, const std::string& name) {
  std::string tok;
  std::size_t r = 0, c = 0;
  if (!(is >> tok >> r >> c) || tok != name)
    throw std::runtime_error("checkpoint: expected tensor " + name);
  DenseMatrix m(r, c);
  for (double& x : m.values)
    if (!(is >> x)) throw std::runtime_error("checkpoint: truncated tensor " + name);
  return m;
}

inline DenseVector read_vector(std::istream& is, const std::string& name) {
  std::string tok;
  std::size_t d = 0;
  if (!(is >> tok >> d) || tok != name)
    throw std::runtime_error("checkpoint: expected tensor " + name);
  DenseVector v(d);
  for (double& x : v.values)
    if (!(is >> x)) throw std::runtime_error("checkpoint: truncated tensor " + name);
  return v;
}

}  // namespace detail

inline void save_stack(std::ostream& os, const GruStack& s) {
  os << "pintgru-stack 1\n";
  os << "layers " << s.num_layers() << " input " << s.input_dim << " hidden " << s.hidden_dim
     << '\n';
  for (std::size_t l = 0; l < s.num_layers(); ++l) {
    const GruParams& p = s.layers[l];
    os << "layer " << l << '\n';
    detail::write_matrix(os, "w_ir", p.w_ir);
    detail::write_matrix(os, "w_iz", p.w_iz);
    detail::write_matrix(os, "w_in", p.w_in);
    detail::write_matrix(os, "w_hr", p.w_hr);
    detail::write_matrix(os, "w_hz", p.w_hz);
    detail::write_matrix(os, "w_hn", p.w_hn);
    detail::write_vector(os, "b_ir", p.b_ir);
    detail::write_vector(os, "b_hr", p.b_hr);
    detail::write_vector(os, "b_iz", p.b_iz);
    detail::write_vector(os, "b_hz", p.b_hz);
    detail::write_vector(os, "b_in", p.b_in);
    detail::write_vector(os, "b_hn", p.b_hn);
  }
}

inline GruStack load_stack(std::istream& is) {
  std::string magic, version;
  if (!(is >> magic >> version) || magic != "pintgru-stack" || version != "1")
    throw std::runtime_error("checkpoint: bad stack header");
  std::string t0, t1, t2;
  std::size_t layers = 0, input = 0, hidden = 0;
  if (!(is >> t0 >> layers >> t1 >> input >> t2 >> hidden) || t0 != "layers" || t1 != "input" ||
      t2 != "hidden")
    throw std::runtime_error("checkpoint: bad stack dims line");
  GruStack s = GruStack::zeros(layers, input, hidden);
  for (std::size_t l = 0; l < layers; ++l) {
    std::string tok;
    std::size_t idx = 0;
    if (!(is >> tok >> idx) || tok != "layer" || idx != l)
      throw std::runtime_error("checkpoint: bad layer marker");
    GruParams& p = s.layers[l];
    p.w_ir = detail::read_matrix(is, "w_ir");
    p.w_iz = detail::read_matrix(is, "w_iz");
    p.w_in = detail::read_matrix(is, "w_in");
    p.w_hr = detail::read_matrix(is, "w_hr");
    p.w_hz = detail::read_matrix(is, "w_hz");
    p.w_hn = detail::read_matrix(is, "w_hn");
    p.b_ir = detail::read_vector(is, "b_ir");
    p.b_hr = detail::read_vector(is, "b_hr");
    p.b_iz = detail::read_vector(is, "b_iz");
    p.b_hz = detail::read_vector(is, "b_hz");
    p.b_in = detail::read_vector(is, "b_in");
    p.b_hn = detail::read_vector(is, "b_hn");
    const std::size_t expect_in = l == 0 ? input : hidden;
    require_shape(p.w_ir.rows == hidden && p.w_ir.cols == expect_in, "checkpoint layer dims");
  }
  return s;
}

}  // namespace pintgru
