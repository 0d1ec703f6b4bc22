#pragma once

// Reference problem for the solver: the vector ODE
//   dh/dt = -1/2 h + alpha * sigmoid(A h + B d(t) + b)
// discretized by forward Euler with step dt on the fine grid and gamma * dt on
// the coarser grids. dt must keep the rediscretized coarse operator stable
// (|1 - cf * dt / 2| < 1); at dt = 1, cf = 4 the coarse decay factor is -1 and
// the cycle stalls near 0.2 contraction per iteration, so the default is small
// enough that the coarse grid is both stable and accurate and the solve
// reaches 1e-12 within ten cycles.

#include <cstdint>
#include <ostream>
#include <vector>

#include "pintgru/grid.hpp"
#include "pintgru/mgrit.hpp"
#include "pintgru/numerics.hpp"

namespace pintgru {

struct DemoOdeParams {
  std::size_t dim = 10;
  std::size_t data_dim = 5;
  std::size_t steps = 128;
  double dt = 0.05;
  double alpha = 1.0;
  std::uint64_t seed = 1;
};

// out = -1/2 h + alpha * sigmoid(A h + B d + b)
inline DenseVector demo_rhs(const DenseMatrix& a, const DenseMatrix& b_mat,
                            const DenseVector& bias, double alpha, const DenseVector& h,
                            const DenseVector& d) {
  DenseVector z(a.rows);
  matvec_into(a, h.span(), z.span());
  matvec_acc(b_mat, d.span(), z.span());
  for (std::size_t i = 0; i < z.dim(); ++i)
    z[i] = -0.5 * h[i] + alpha * sigmoid(z[i] + bias[i]);
  return z;
}

struct DemoScratch : SystemScratch {
  DenseVector z;
};

// Forward-Euler step maps for every level: the step ending at level index t
// advances from the left point, reading the data signal at the left point's
// fine time (t-1) * gamma.
class DemoOdeSystem : public MultilevelSystem {
 public:
  DemoOdeSystem(const DemoOdeParams& p, std::size_t cf, std::size_t max_levels)
      : params_(p), hier_(build_hierarchy(p.steps, cf, max_levels)) {
    Rng rng(p.seed);
    const double k = 1.0 / std::sqrt(static_cast<double>(p.dim));
    a_ = DenseMatrix(p.dim, p.dim);
    b_ = DenseMatrix(p.dim, p.data_dim);
    bias_ = DenseVector(p.dim);
    for (double& v : a_.values) v = rng.uniform(-k, k);
    for (double& v : b_.values) v = rng.uniform(-k, k);
    for (double& v : bias_.values) v = rng.uniform(-k, k);
    // Smooth per-channel sinusoids; frequencies and phases drawn once.
    std::vector<double> freq(p.data_dim), phase(p.data_dim);
    for (std::size_t c = 0; c < p.data_dim; ++c) {
      freq[c] = rng.uniform(1.0, 6.0);
      phase[c] = rng.uniform(0.0, 2.0 * M_PI);
    }
    d_.resize(p.steps);
    for (std::size_t t = 0; t < p.steps; ++t) {
      d_[t] = DenseVector(p.data_dim);
      for (std::size_t c = 0; c < p.data_dim; ++c)
        d_[t][c] = std::sin(2.0 * M_PI * freq[c] * static_cast<double>(t) /
                                static_cast<double>(p.steps) +
                            phase[c]);
    }
  }

  const DemoOdeParams& params() const { return params_; }
  const Hierarchy& hierarchy() const override { return hier_; }
  std::size_t state_dim() const override { return params_.dim; }
  const DenseVector& data_signal(std::size_t fine_t) const { return d_[fine_t]; }

  std::unique_ptr<SystemScratch> make_scratch() const override {
    return std::make_unique<DemoScratch>();
  }

  void step(std::size_t level, std::size_t t, std::span<const double> h_prev,
            std::span<double> out, SystemScratch& ws) const override {
    auto& scr = static_cast<DemoScratch&>(ws);
    const double gamma = hier_.levels[level].gamma;
    const double dt = gamma * params_.dt;
    const std::size_t fine_left = static_cast<std::size_t>(gamma) * (t - 1);
    if (scr.z.dim() != params_.dim) scr.z = DenseVector(params_.dim);
    matvec_into(a_, h_prev, scr.z.span());
    matvec_acc(b_, d_[fine_left].span(), scr.z.span());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double f = -0.5 * h_prev[i] + params_.alpha * sigmoid(scr.z[i] + bias_[i]);
      out[i] = h_prev[i] + dt * f;
    }
  }

 private:
  DemoOdeParams params_;
  Hierarchy hier_;
  DenseMatrix a_, b_;
  DenseVector bias_;
  std::vector<DenseVector> d_;
};

// Residual norm of an iterate against one level's propagation equations.
inline double system_residual_norm(const MultilevelSystem& sys, std::size_t level,
                                   const Sequence& h) {
  Sequence r(h.steps(), h.dim());
  auto ws = sys.make_scratch();
  // SeqView carries mutable slots for the sweep kernels; residual_range only
  // reads through this one.
  Sequence& hm = const_cast<Sequence&>(h);
  residual_range(sys, level, nullptr, view_of(hm), view_of(r), 1, h.steps(), *ws);
  return seq_l2_norm(r);
}

// One F-C-F relaxation pass over a level of any system.
inline void fcf_sweep(const MultilevelSystem& sys, std::size_t level, Sequence& h,
                      SystemScratch& ws) {
  const std::size_t cf = sys.hierarchy().coarsening;
  const std::size_t chunks = h.steps() / cf;
  const SeqView v = view_of(h);
  sweep_chunks(sys, level, SweepKind::kF, nullptr, v, 0, chunks, cf, ws);
  sweep_chunks(sys, level, SweepKind::kC, nullptr, v, 0, chunks, cf, ws);
  sweep_chunks(sys, level, SweepKind::kF, nullptr, v, 0, chunks, cf, ws);
}

struct DemoReport {
  std::vector<double> errors;     // entry 0 = initial guess, then one per cycle
  std::vector<double> residuals;  // aligned with errors
  bool converged = false;
  std::size_t iters_to_target = 0;
  double avg_contraction = 1.0;   // geometric mean residual ratio per cycle
};

inline Sequence demo_exact_solution(const DemoOdeSystem& sys) {
  Sequence h(sys.hierarchy().fine_steps(), sys.state_dim());
  auto ws = sys.make_scratch();
  solve_forward(sys, 0, nullptr, view_of(h), h.steps(), *ws);
  return h;
}

inline Sequence demo_random_guess(const DemoOdeSystem& sys, std::uint64_t salt = 0x5eedu) {
  Sequence h(sys.hierarchy().fine_steps(), sys.state_dim());
  Rng rng(sys.params().seed ^ salt);
  for (std::size_t t = 1; t <= h.steps(); ++t)
    for (std::size_t i = 0; i < h.dim(); ++i) h[t][i] = rng.uniform(-0.5, 0.5);
  return h;
}

inline double seq_error_norm(const Sequence& a, const Sequence& b) {
  Sequence diff(a.steps(), a.dim());
  for (std::size_t t = 0; t <= a.steps(); ++t)
    for (std::size_t i = 0; i < a.dim(); ++i) diff[t][i] = a[t][i] - b[t][i];
  return seq_l2_norm(diff);
}

// Two-level solve from a random guess, printing the error/residual table.
inline DemoReport run_demo(const DemoOdeSystem& sys, std::size_t max_iters, std::ostream& os,
                           double target = 1e-12) {
  const Sequence exact = demo_exact_solution(sys);
  Sequence h = demo_random_guess(sys);

  CycleConfig cfg;
  cfg.coarsening = sys.hierarchy().coarsening;
  cfg.max_levels = sys.hierarchy().depth();
  MgritSolver solver(sys, cfg);

  DemoReport rep;
  os << (sys.hierarchy().depth() == 2 ? "Two Level MG\n" : "Multilevel MG\n");
  char line[96];
  auto emit = [&](double err, double res) {
    rep.errors.push_back(err);
    rep.residuals.push_back(res);
    std::snprintf(line, sizeof line, "  error = %.4e, residual = %.4e\n", err, res);
    os << line;
  };
  emit(seq_error_norm(h, exact), system_residual_norm(sys, 0, h));
  for (std::size_t it = 1; it <= max_iters; ++it) {
    solver.solve(h, 1, false);
    emit(seq_error_norm(h, exact), system_residual_norm(sys, 0, h));
    if (rep.residuals.back() < target) {
      rep.converged = true;
      rep.iters_to_target = it;
      break;
    }
  }
  const std::size_t n = rep.residuals.size() - 1;
  if (n > 0 && rep.residuals.front() > 0.0)
    rep.avg_contraction =
        std::pow(rep.residuals.back() / rep.residuals.front(), 1.0 / static_cast<double>(n));
  return rep;
}

// ---------------------------------------------------------------------------
// Error-spectrum study: magnitudes per wavenumber of the error signal, per
// state component, for the initial random guess, after a number of FCF
// sweeps, and after restriction of the relaxed error to the coarse grid.

struct SpectrumReport {
  // [component][wavenumber] magnitude tables.
  std::vector<std::vector<double>> initial;
  std::vector<std::vector<double>> relaxed;
  std::vector<std::vector<double>> coarse;
  double early_time_max_abs = 0.0;  // max |error| at indices 1..cf after one sweep
};

namespace detail {

inline std::vector<std::vector<double>> error_spectra(const Sequence& h, const Sequence& exact) {
  std::vector<std::vector<double>> out(h.dim());
  std::vector<double> sig(h.steps());
  for (std::size_t c = 0; c < h.dim(); ++c) {
    for (std::size_t t = 1; t <= h.steps(); ++t) sig[t - 1] = h[t][c] - exact[t][c];
    out[c] = dft_magnitudes(sig);
  }
  return out;
}

}  // namespace detail

// Energy in the top half of the resolvable wavenumbers (k > N/4 of k = 0..N/2),
// summed over components.
inline double top_half_energy(const std::vector<std::vector<double>>& spectra) {
  double acc = 0.0;
  for (const auto& mags : spectra) {
    const std::size_t half = (mags.size() - 1) / 2;
    for (std::size_t k = half + 1; k < mags.size(); ++k) acc += mags[k] * mags[k];
  }
  return acc;
}

inline SpectrumReport spectrum_report(const DemoOdeSystem& sys, std::size_t sweeps,
                                      Sequence h) {
  const Sequence exact = demo_exact_solution(sys);
  const std::size_t cf = sys.hierarchy().coarsening;
  auto ws = sys.make_scratch();

  SpectrumReport rep;
  rep.initial = detail::error_spectra(h, exact);
  for (std::size_t s = 0; s < sweeps; ++s) {
    fcf_sweep(sys, 0, h, *ws);
    if (s == 0) {
      for (std::size_t t = 1; t <= cf; ++t)
        for (std::size_t i = 0; i < h.dim(); ++i)
          rep.early_time_max_abs =
              std::max(rep.early_time_max_abs, std::fabs(h[t][i] - exact[t][i]));
    }
  }
  rep.relaxed = detail::error_spectra(h, exact);
  rep.coarse = detail::error_spectra(restrict_seq(h, cf), restrict_seq(exact, cf));
  return rep;
}

inline SpectrumReport spectrum_report(const DemoOdeSystem& sys, std::size_t sweeps) {
  return spectrum_report(sys, sweeps, demo_random_guess(sys));
}

}  // namespace pintgru
