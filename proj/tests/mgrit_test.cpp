#include "pintgru/mgrit.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace pintgru;

namespace {

// Scalar affine test problem with an explicit step map per level:
// h_t = a[l] * h_{t-1} + b[l].
class ScalarLinearSystem : public MultilevelSystem {
 public:
  ScalarLinearSystem(std::vector<double> a, std::vector<double> b, Hierarchy hier)
      : a_(std::move(a)), b_(std::move(b)), hier_(std::move(hier)) {}

  const Hierarchy& hierarchy() const override { return hier_; }
  std::size_t state_dim() const override { return 1; }
  std::unique_ptr<SystemScratch> make_scratch() const override {
    return std::make_unique<SystemScratch>();
  }
  void step(std::size_t level, std::size_t, std::span<const double> h_prev,
            std::span<double> out, SystemScratch&) const override {
    out[0] = a_[level] * h_prev[0] + b_[level];
  }

 private:
  std::vector<double> a_, b_;
  Hierarchy hier_;
};

Sequence exact_scalar_solution(double a, double b, std::size_t steps, double anchor) {
  Sequence h(steps, 1);
  h[0][0] = anchor;
  for (std::size_t t = 1; t <= steps; ++t) h[t][0] = a * h[t - 1][0] + b;
  return h;
}

DenseVector scalar_step(double a, double b, const DenseVector& h) {
  DenseVector out(1);
  out[0] = a * h[0] + b;
  return out;
}

// Serial forward propagation of a GRU stack from a zero anchor.
Sequence serial_forward(const GruStack& s, StepKind kind, const Sequence& x) {
  const std::size_t batch = x.dim() / s.input_dim;
  Sequence h(x.steps(), batch * s.state_dim());
  StackScratch ws;
  for (std::size_t t = 1; t <= x.steps(); ++t)
    batch_step(s, kind, 1.0, x[t].span(), h[t - 1].span(), h[t].span(), ws);
  return h;
}

// Serial backprop through time for a terminal cotangent: w[t] = J_{t+1}^T w[t+1].
Sequence serial_adjoint(const GruStack& s, StepKind kind, const Sequence& x,
                        const Sequence& h_stored, const DenseVector& w_terminal) {
  Sequence w(h_stored.steps(), h_stored.dim());
  w[h_stored.steps()] = w_terminal;
  StackScratch ws;
  for (std::size_t t = h_stored.steps(); t >= 1; --t)
    batch_adjoint_step(s, kind, 1.0, x[t].span(), h_stored[t - 1].span(), w[t].span(),
                       w[t - 1].span(), nullptr, ws);
  return w;
}

double dot_span(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST(Relaxation, FSweepZerosFpointResidualsAndKeepsCpoints) {
  Rng rng(3);
  const double a = 0.9, b = 1.0;
  Sequence h = testsup::random_sequence(8, 1, rng, 2.0, false);
  const double c0 = h[0][0], c4 = h[4][0], c8 = h[8][0];
  auto step = [&](std::size_t, const DenseVector& hp) { return scalar_step(a, b, hp); };
  f_relax(step, h, 4);
  EXPECT_DOUBLE_EQ(h[0][0], c0);
  EXPECT_DOUBLE_EQ(h[4][0], c4);
  EXPECT_DOUBLE_EQ(h[8][0], c8);
  Sequence r = propagation_residual(step, h);
  for (std::size_t t : {1u, 2u, 3u, 5u, 6u, 7u}) EXPECT_NEAR(r[t][0], 0.0, 1e-14);
  EXPECT_GT(std::fabs(r[4][0]) + std::fabs(r[8][0]), 1e-3);
}

TEST(Relaxation, CSweepUpdatesCpointsFromLeftFpoint) {
  Rng rng(4);
  const double a = 0.7, b = 0.5;
  Sequence h = testsup::random_sequence(8, 1, rng, 2.0, false);
  Sequence before = h;
  auto step = [&](std::size_t, const DenseVector& hp) { return scalar_step(a, b, hp); };
  c_relax(step, h, 4);
  for (std::size_t t : {1u, 2u, 3u, 5u, 6u, 7u}) EXPECT_DOUBLE_EQ(h[t][0], before[t][0]);
  EXPECT_DOUBLE_EQ(h[4][0], a * before[3][0] + b);
  EXPECT_DOUBLE_EQ(h[8][0], a * before[7][0] + b);
}

TEST(Relaxation, ExactSolutionIsAFixedPoint) {
  Sequence h = exact_scalar_solution(0.9, 1.0, 16, 0.25);
  Sequence before = h;
  auto step = [&](std::size_t, const DenseVector& hp) { return scalar_step(0.9, 1.0, hp); };
  fcf_relax(step, h, 4);
  EXPECT_LE(testsup::max_abs_diff(h, before), 1e-14);
}

TEST(Relaxation, OneFcfSweepIsNotAnExactSolve) {
  // Relaxation chunks must read pre-sweep C-point seeds. A sweep that chained
  // chunk k+1 off chunk k's freshly written C-point would degenerate into
  // forward substitution and "converge" in one pass.
  Sequence h(16, 1);
  auto step = [&](std::size_t, const DenseVector& hp) { return scalar_step(0.9, 1.0, hp); };
  fcf_relax(step, h, 4);
  Sequence exact = exact_scalar_solution(0.9, 1.0, 16, 0.0);
  EXPECT_GT(std::fabs(h[8][0] - exact[8][0]), 0.1);
  EXPECT_GT(std::fabs(h[16][0] - exact[16][0]), 0.1);
}

TEST(Solver, DegenerateSingleLevelIsSerialSolve) {
  Hierarchy hier = build_hierarchy(8, 4, 1);
  ASSERT_EQ(hier.depth(), 1u);
  ScalarLinearSystem sys({0.5}, {1.0}, hier);
  MgritSolver solver(sys, CycleConfig{});
  Sequence h(8, 1);
  h[0][0] = 2.0;
  SolveTrace trace = solver.solve(h, 1);
  Sequence exact = exact_scalar_solution(0.5, 1.0, 8, 2.0);
  EXPECT_EQ(testsup::max_abs_diff(h, exact), 0.0);
  ASSERT_EQ(trace.iterations.size(), 1u);
  EXPECT_LE(trace.iterations[0].residual, 1e-15);
}

TEST(Solver, ForcedSolveKnownValues) {
  // h_t = 0.5 h_{t-1} + g_t with g = (1, 1) from a zero anchor: (1, 1.5).
  Hierarchy hier;
  hier.coarsening = 2;
  hier.levels = {{0, 1.0, 2}};
  ScalarLinearSystem sys({0.5}, {0.0}, hier);
  Sequence g(2, 1);
  g[1][0] = 1.0;
  g[2][0] = 1.0;
  MgritSolver solver(sys, CycleConfig{}, &g);
  Sequence h(2, 1);
  solver.solve(h, 1);
  EXPECT_DOUBLE_EQ(h[1][0], 1.0);
  EXPECT_DOUBLE_EQ(h[2][0], 1.5);
}

TEST(Solver, ExactCoarsePropagatorConvergesInOneCycle) {
  const double a = 0.8, b = 0.3;
  const std::size_t cf = 4;
  Hierarchy hier = build_hierarchy(32, cf, 2);
  // Coarse step is the exact fourfold composition of the fine step.
  const double ac = a * a * a * a;
  const double bc = b * (1.0 + a + a * a + a * a * a);
  ScalarLinearSystem sys({a, ac}, {b, bc}, hier);
  MgritSolver solver(sys, CycleConfig{});
  Sequence h(32, 1);
  SolveTrace trace = solver.solve(h, 1);
  EXPECT_LE(trace.iterations[0].residual, 1e-13);
  Sequence exact = exact_scalar_solution(a, b, 32, 0.0);
  EXPECT_LE(testsup::max_abs_diff(h, exact), 1e-13);
}

TEST(Solver, RediscretizedCoarseOperatorConvergesIteratively) {
  const double a = 0.9, b = 1.0;
  Hierarchy hier = build_hierarchy(32, 4, 2);
  // Perturbed coarse propagation coefficient: convergence must now come from
  // iterating the cycle rather than from a single coarse solve.
  ScalarLinearSystem sys({a, 0.6}, {b, b * (1.0 + a + a * a + a * a * a)}, hier);
  MgritSolver solver(sys, CycleConfig{});
  Sequence h(32, 1);
  SolveTrace trace = solver.solve(h, 25);
  EXPECT_GT(trace.iterations[0].residual, 1e-6);
  EXPECT_LE(trace.iterations.back().residual, 1e-12);
  for (std::size_t i = 1; i < trace.iterations.size(); ++i)
    EXPECT_LE(trace.iterations[i].residual, trace.iterations[i - 1].residual + 1e-15);
  Sequence exact = exact_scalar_solution(a, b, 32, 0.0);
  EXPECT_LE(testsup::max_abs_diff(h, exact), 1e-11);
}

TEST(Solver, GruForwardTwoLevelMatchesSerialPropagation) {
  Rng rng(71);
  GruStack stack = GruStack::random(2, 3, 4, rng);
  const std::size_t steps = 16, batch = 2;
  Sequence x = testsup::random_sequence(steps, batch * 3, rng);
  Hierarchy hier = build_hierarchy(steps, 4, 2);
  GruForwardSystem sys(stack, StepKind::kImplicit, x, hier);

  Sequence serial = serial_forward(stack, StepKind::kImplicit, x);

  Sequence h(steps, sys.state_dim());
  MgritSolver solver(sys, CycleConfig{});
  SolveTrace trace = solver.solve(h, 20);
  EXPECT_LE(trace.iterations.back().residual, 1e-12);
  EXPECT_LE(testsup::max_abs_diff(h, serial), 1e-10);
}

TEST(Solver, SerialSolutionIsACycleFixedPoint) {
  Rng rng(72);
  GruStack stack = GruStack::random(1, 2, 3, rng);
  const std::size_t steps = 16;
  Sequence x = testsup::random_sequence(steps, 2, rng);
  GruForwardSystem sys(stack, StepKind::kImplicit, x, build_hierarchy(steps, 4, 2));
  Sequence h = serial_forward(stack, StepKind::kImplicit, x);
  Sequence before = h;
  MgritSolver solver(sys, CycleConfig{});
  SolveTrace trace = solver.solve(h, 1);
  EXPECT_LE(trace.iterations[0].residual, 1e-13);
  EXPECT_LE(testsup::max_abs_diff(h, before), 1e-13);
}

TEST(Solver, FOnlyFineRelaxationAlsoConverges) {
  Rng rng(73);
  GruStack stack = GruStack::random(1, 2, 3, rng);
  const std::size_t steps = 32;
  Sequence x = testsup::random_sequence(steps, 2, rng);
  GruForwardSystem sys(stack, StepKind::kImplicit, x, build_hierarchy(steps, 4, 3));
  Sequence h(steps, sys.state_dim());
  CycleConfig cfg;
  cfg.fine_relax = RelaxKind::kF;
  MgritSolver solver(sys, cfg);
  SolveTrace trace = solver.solve(h, 30);
  EXPECT_LE(trace.iterations.back().residual, 1e-12);
}

TEST(Solver, ThreeLevelConvergesOnLongerHorizon) {
  Rng rng(74);
  GruStack stack = GruStack::random(2, 2, 3, rng);
  const std::size_t steps = 64;
  Sequence x = testsup::random_sequence(steps, 2, rng);
  GruForwardSystem sys(stack, StepKind::kImplicit, x, build_hierarchy(steps, 4, 3));
  ASSERT_EQ(sys.hierarchy().depth(), 3u);
  Sequence h(steps, sys.state_dim());
  MgritSolver solver(sys, CycleConfig{});
  SolveTrace trace = solver.solve(h, 25);
  EXPECT_LE(trace.iterations.back().residual, 1e-12);
  Sequence serial = serial_forward(stack, StepKind::kImplicit, x);
  EXPECT_LE(testsup::max_abs_diff(h, serial), 1e-10);
}

TEST(ForwardSystem, RestrictsInputsAndScalesStepSize) {
  Rng rng(75);
  GruStack stack = GruStack::random(1, 2, 3, rng);
  Sequence x = testsup::random_sequence(16, 2, rng);
  GruForwardSystem sys(stack, StepKind::kClassic, x, build_hierarchy(16, 4, 2));
  for (std::size_t t = 0; t <= 4; ++t)
    for (std::size_t i = 0; i < 2; ++i)
      EXPECT_DOUBLE_EQ(sys.inputs(1)[t][i], x[4 * t][i]);

  DenseVector h_prev = testsup::random_vector(3, rng);
  DenseVector out(3);
  auto ws = sys.make_scratch();
  sys.step(1, 2, h_prev.span(), out.span(), *ws);
  DenseVector ref = step_classic(stack.layers[0], 4.0, x[8], h_prev);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], ref[i]);
}

TEST(Adjoint, ReversedSystemSolveEqualsBackpropThroughTime) {
  Rng rng(81);
  GruStack stack = GruStack::random(2, 2, 3, rng);
  const std::size_t steps = 16, batch = 2;
  Sequence x = testsup::random_sequence(steps, batch * 2, rng);
  Sequence h_stored = serial_forward(stack, StepKind::kImplicit, x);
  DenseVector w_term(h_stored.dim());
  for (auto& v : w_term.values) v = rng.uniform(-1.0, 1.0);

  Sequence w_ref = serial_adjoint(stack, StepKind::kImplicit, x, h_stored, w_term);

  GruAdjointSystem adj(stack, StepKind::kImplicit, x, h_stored, build_hierarchy(steps, 4, 2));
  Sequence v(steps, h_stored.dim());
  v[0] = w_term;  // reversed-grid anchor is the terminal cotangent
  auto ws = adj.make_scratch();
  solve_forward(adj, 0, nullptr, view_of(v), steps, *ws);
  Sequence w_fwd = reverse_sequence(v);
  EXPECT_EQ(testsup::max_abs_diff(w_fwd, w_ref), 0.0);
}

TEST(Adjoint, MultigridAdjointConvergesToBackpropThroughTime) {
  Rng rng(82);
  GruStack stack = GruStack::random(2, 2, 3, rng);
  const std::size_t steps = 16, batch = 1;
  Sequence x = testsup::random_sequence(steps, batch * 2, rng);
  Sequence h_stored = serial_forward(stack, StepKind::kImplicit, x);
  DenseVector w_term(h_stored.dim());
  for (auto& v : w_term.values) v = rng.uniform(-1.0, 1.0);
  Sequence w_ref = serial_adjoint(stack, StepKind::kImplicit, x, h_stored, w_term);

  GruAdjointSystem adj(stack, StepKind::kImplicit, x, h_stored, build_hierarchy(steps, 4, 2));
  MgritSolver solver(adj, CycleConfig{});
  Sequence v(steps, h_stored.dim());
  v[0] = w_term;
  SolveTrace trace = solver.solve(v, 20);
  EXPECT_LE(trace.iterations.back().residual, 1e-12);
  EXPECT_LE(testsup::max_abs_diff(reverse_sequence(v), w_ref), 1e-10);
}

TEST(Gradient, AssembledGradientMatchesFiniteDifferences) {
  Rng rng(83);
  GruStack stack = GruStack::random(2, 2, 2, rng);
  const std::size_t steps = 8;
  Sequence x = testsup::random_sequence(steps, 2, rng);
  DenseVector w_term(stack.state_dim());
  for (auto& v : w_term.values) v = rng.uniform(-1.0, 1.0);

  for (StepKind kind : {StepKind::kClassic, StepKind::kImplicit}) {
    auto loss = [&]() {
      Sequence h = serial_forward(stack, kind, x);
      return dot_span(w_term.span(), h[steps].span());
    };
    Sequence h_stored = serial_forward(stack, kind, x);
    Sequence w = serial_adjoint(stack, kind, x, h_stored, w_term);
    GruStack grads = assemble_gradient(stack, kind, x, h_stored, w, 4);

    std::vector<std::vector<double>*> pv, gv;
    for_each_stack_tensor(stack, [&](std::vector<double>& vv) { pv.push_back(&vv); });
    for_each_stack_tensor(grads, [&](std::vector<double>& vv) { gv.push_back(&vv); });
    for (std::size_t k = 0; k < pv.size(); ++k)
      EXPECT_LT(testsup::max_grad_rel_err(*pv[k], *gv[k], loss), 1e-4)
          << step_kind_name(kind) << " tensor " << k;
  }
}

TEST(Gradient, BlockFoldIsDeterministicAndBlockSizeInsensitive) {
  Rng rng(84);
  GruStack stack = GruStack::random(2, 2, 3, rng);
  const std::size_t steps = 16;
  Sequence x = testsup::random_sequence(steps, 2, rng);
  Sequence h_stored = serial_forward(stack, StepKind::kImplicit, x);
  DenseVector w_term(stack.state_dim());
  for (auto& v : w_term.values) v = rng.uniform(-1.0, 1.0);
  Sequence w = serial_adjoint(stack, StepKind::kImplicit, x, h_stored, w_term);

  GruStack g1 = assemble_gradient(stack, StepKind::kImplicit, x, h_stored, w, 4);
  GruStack g2 = assemble_gradient(stack, StepKind::kImplicit, x, h_stored, w, 4);
  GruStack g3 = assemble_gradient(stack, StepKind::kImplicit, x, h_stored, w, 16);

  std::vector<std::vector<double>*> a, bb, c;
  for_each_stack_tensor(g1, [&](std::vector<double>& v) { a.push_back(&v); });
  for_each_stack_tensor(g2, [&](std::vector<double>& v) { bb.push_back(&v); });
  for_each_stack_tensor(g3, [&](std::vector<double>& v) { c.push_back(&v); });
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(*a[k], *bb[k]);  // same block size: bitwise repeatable
    for (std::size_t i = 0; i < a[k]->size(); ++i)
      EXPECT_LT(testsup::rel_err((*a[k])[i], (*c[k])[i]), 1e-10);
  }
}

TEST(ReverseSequence, FlipsIndicesAndIsAnInvolution) {
  Rng rng(85);
  Sequence s = testsup::random_sequence(6, 2, rng, 1.0, false);
  Sequence r = reverse_sequence(s);
  for (std::size_t t = 0; t <= 6; ++t)
    for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(r[t][i], s[6 - t][i]);
  EXPECT_EQ(testsup::max_abs_diff(reverse_sequence(r), s), 0.0);
}

TEST(CostModel, KnownValuesAndGuards) {
  CostModel m = cost_model(128, 32, 4, 3);
  EXPECT_DOUBLE_EQ(m.level_sum, 5.25);
  EXPECT_DOUBLE_EQ(m.bound, 16.0 / 3.0);
  EXPECT_LE(m.level_sum, m.bound);
  CostModel deep = cost_model(1024, 8, 4, 6);
  EXPECT_LE(deep.level_sum, deep.bound);
  EXPECT_THROW(cost_model(128, 0, 4, 3), std::invalid_argument);
  EXPECT_THROW(cost_model(128, 8, 1, 3), std::invalid_argument);
}

TEST(SolveTrace, RecordsIterationsAndLevelTimes) {
  Rng rng(86);
  GruStack stack = GruStack::random(1, 2, 2, rng);
  Sequence x = testsup::random_sequence(16, 2, rng);
  GruForwardSystem sys(stack, StepKind::kImplicit, x, build_hierarchy(16, 4, 2));
  Sequence h(16, sys.state_dim());
  MgritSolver solver(sys, CycleConfig{});
  SolveTrace trace = solver.solve(h, 5);
  EXPECT_EQ(trace.levels, 2u);
  ASSERT_EQ(trace.iterations.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(trace.iterations[i].iteration, i + 1);
    EXPECT_GE(trace.iterations[i].residual, 0.0);
  }
  EXPECT_EQ(trace.level_seconds.size(), 2u);
}
