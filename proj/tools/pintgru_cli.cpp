// Command-line front end: demo, train, infer, bench, convergence.
//
// Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numerical failure.
// Every subcommand accepts --config FILE with plain key=value lines; explicit
// flags win over config values. PINTGRU_WORKERS sets the default worker count
// where a --workers flag exists.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pintgru/data.hpp"
#include "pintgru/demo_ode.hpp"
#include "pintgru/mgrit.hpp"
#include "pintgru/parallel_runtime.hpp"
#include "pintgru/training.hpp"

namespace {

using namespace pintgru;

// Plain key=value config files, merged after parsing so explicit flags (and
// environment values) always win over file entries.
void apply_config(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s{detail::trim(line)};
    if (s.empty() || s[0] == '#') continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--config", path + ":" + std::to_string(lineno) +
                                                 ": expected key=value");
    const std::string key{detail::trim(s.substr(0, eq))};
    const std::string val{detail::trim(s.substr(eq + 1))};
    CLI::Option* op = cmd->get_option_no_throw("--" + key);
    if (op == nullptr || op->get_name() == "--config")
      throw CLI::ValidationError("--config", path + ":" + std::to_string(lineno) +
                                                 ": unknown key '" + key + "'");
    if (op->count() > 0) continue;
    op->add_result(val);
    op->run_callback();
  }
}

// ---------------------------------------------------------------------------
// demo

struct DemoOpts {
  std::string config;
  std::size_t dim = 10;
  std::size_t steps = 128;
  std::size_t cf = 4;
  std::size_t levels = 2;
  std::size_t iters = 10;
  double dt = 0.05;
  double alpha = 1.0;
  std::uint64_t seed = 1;
  bool spectrum = false;
};

int cmd_demo(const DemoOpts& o) {
  if (o.steps == 0 || o.steps % o.cf != 0)
    throw CLI::ValidationError("demo", "--steps must be a positive multiple of --cf");
  DemoOdeParams p;
  p.dim = o.dim;
  p.steps = o.steps;
  p.dt = o.dt;
  p.alpha = o.alpha;
  p.seed = o.seed;
  DemoOdeSystem sys(p, o.cf, o.levels);
  DemoReport rep = run_demo(sys, o.iters, std::cout);
  std::printf("converged = %s after %zu iterations, avg contraction = %.4f\n",
              rep.converged ? "yes" : "no", rep.iters_to_target, rep.avg_contraction);
  if (o.spectrum) {
    SpectrumReport sr = spectrum_report(sys, 4);
    const double before = top_half_energy(sr.initial);
    const double after = top_half_energy(sr.relaxed);
    std::printf("spectrum: top-half energy %.4e -> %.4e (x%.4f) after 4 FCF sweeps\n", before,
                after, before > 0.0 ? after / before : 0.0);
    std::printf("spectrum: max early-time error (t <= cf) after one sweep = %.4e\n",
                sr.early_time_max_abs);
  }
  return rep.converged ? 0 : 3;
}

// ---------------------------------------------------------------------------
// shared data source

struct DataOpts {
  std::string data;
  std::string test;
  bool synthetic = false;
  std::size_t classes = 6;
  std::size_t synth_steps = 128;
  std::size_t synth_dim = 9;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 20;
  double noise = 0.3;
  std::uint64_t seed = 1;
};

void add_data_flags(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--data", d.data, "training CSV (id,t,features...,label rows)");
  cmd->add_option("--test", d.test, "held-out CSV in the same layout");
  cmd->add_flag("--synthetic", d.synthetic, "generate the synthetic classification task");
  cmd->add_option("--classes", d.classes, "synthetic class count")->capture_default_str();
  cmd->add_option("--synth-steps", d.synth_steps, "synthetic sequence length")
      ->capture_default_str();
  cmd->add_option("--synth-dim", d.synth_dim, "synthetic feature channels")
      ->capture_default_str();
  cmd->add_option("--train-per-class", d.train_per_class, "synthetic train sequences per class")
      ->capture_default_str();
  cmd->add_option("--test-per-class", d.test_per_class, "synthetic test sequences per class")
      ->capture_default_str();
  cmd->add_option("--noise", d.noise, "synthetic noise amplitude")->capture_default_str();
}

SynthParams synth_of(const DataOpts& d, bool test_split) {
  SynthParams sp;
  sp.num_classes = d.classes;
  sp.steps = d.synth_steps;
  sp.dim = d.synth_dim;
  sp.n_per_class = test_split ? d.test_per_class : d.train_per_class;
  sp.seed = test_split ? d.seed + 1 : d.seed;
  sp.noise = d.noise;
  return sp;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string config;
  DataOpts data;
  std::string mode = "mgrit";
  std::string checkpoint;
  std::string metrics;
  bool standardize = false;
  bool no_schedule = false;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  std::size_t batch = 100;
  std::size_t epochs = 20;
  std::size_t workers = 1;
  std::size_t cf = 4;
  std::size_t levels = 3;
  std::size_t fwd_iters = 2;
  std::size_t bwd_iters = 1;
  double lr = 1e-3;
};

int cmd_train(const TrainOpts& o) {
  LabeledSequenceSet train, test;
  bool have_test = false;
  if (o.data.synthetic) {
    train = synth_generate(synth_of(o.data, false));
    if (o.data.test_per_class > 0) {
      test = synth_generate(synth_of(o.data, true));
      have_test = true;
    }
  } else if (!o.data.data.empty()) {
    train = load_csv(o.data.data);
    if (!o.data.test.empty()) {
      test = load_csv(o.data.test);
      have_test = true;
    }
  } else {
    throw CLI::ValidationError("train", "need --data FILE or --synthetic");
  }
  if (o.standardize) {
    ChannelStats st = channel_stats(train);
    standardize(train, st);
    if (have_test) standardize(test, st);
  }
  pad_to_grid(train, o.cf, o.levels);
  if (have_test) {
    pad_to_grid(test, o.cf, o.levels);
    const std::size_t k = std::max(train.num_classes, test.num_classes);
    train.num_classes = test.num_classes = k;
  }

  TrainConfig tc;
  tc.hidden = o.hidden;
  tc.layers = o.layers;
  tc.lr = o.lr;
  tc.batch = o.batch;
  tc.epochs = o.epochs;
  tc.schedule = !o.no_schedule;
  tc.seed = o.data.seed;
  tc.workers = o.workers;
  if (o.mode == "serial-classic") {
    tc.propagation = PropagationMode::kSerial;
    tc.kind = StepKind::kClassic;
  } else if (o.mode == "serial-implicit") {
    tc.propagation = PropagationMode::kSerial;
    tc.kind = StepKind::kImplicit;
  } else {
    tc.propagation = PropagationMode::kMgrit;
    tc.kind = StepKind::kImplicit;
  }
  CycleConfig cycle;
  cycle.coarsening = o.cf;
  cycle.max_levels = o.levels;
  cycle.fwd_iters = o.fwd_iters;
  cycle.bwd_iters = o.bwd_iters;

  std::ofstream mf;
  std::ostream* log = &std::cout;
  if (!o.metrics.empty()) {
    mf.open(o.metrics);
    if (!mf) throw std::runtime_error("cannot write metrics file '" + o.metrics + "'");
    log = &mf;
  }
  TrainResult r = mgrit_training(tc, cycle, train, have_test ? &test : nullptr, log);
  if (!o.checkpoint.empty()) {
    std::ofstream cp(o.checkpoint);
    if (!cp) throw std::runtime_error("cannot write checkpoint '" + o.checkpoint + "'");
    save_model(cp, r.model);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferOpts {
  std::string config;
  DataOpts data;
  std::string checkpoint;
  std::string mode = "serial";
  std::size_t cf = 4;
  std::size_t levels = 3;
  std::size_t fwd_iters = 2;
  std::size_t workers = 1;
  std::size_t batch = 100;
  bool quiet = false;
};

int cmd_infer(const InferOpts& o) {
  std::ifstream in(o.checkpoint);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + o.checkpoint + "'");
  Model m = load_model(in);

  LabeledSequenceSet set;
  if (o.data.synthetic) {
    set = synth_generate(synth_of(o.data, true));
  } else if (!o.data.data.empty()) {
    set = load_csv(o.data.data);
  } else {
    throw CLI::ValidationError("infer", "need --data FILE or --synthetic");
  }
  pad_to_grid(set, o.cf, o.levels);

  const InferMode mode = o.mode == "mgrit" ? InferMode::kMgrit : InferMode::kSerial;
  CycleConfig cycle;
  cycle.coarsening = o.cf;
  cycle.max_levels = o.levels;
  cycle.fwd_iters = o.fwd_iters;
  ParallelOptions popt;
  popt.workers = o.workers;

  std::size_t hits = 0;
  std::vector<std::size_t> idx, lengths;
  for (std::size_t s0 = 0; s0 < set.size(); s0 += o.batch) {
    const std::size_t s1 = std::min(set.size(), s0 + o.batch);
    idx.clear();
    lengths.clear();
    for (std::size_t s = s0; s < s1; ++s) {
      idx.push_back(s);
      lengths.push_back(set.lengths[s]);
    }
    Sequence x = pack_batch(set, idx);
    InferResult r = infer(m, x, lengths, mode, cycle, popt);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      hits += r.labels[b] == set.labels[idx[b]] ? 1 : 0;
      if (!o.quiet)
        std::printf("id=%zu pred=%zu label=%zu\n", idx[b], r.labels[b], set.labels[idx[b]]);
    }
  }
  std::printf("accuracy=%.4f over %zu sequences\n",
              static_cast<double>(hits) / static_cast<double>(set.size()), set.size());
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
  std::string config;
  std::vector<std::size_t> lengths{128, 256, 512, 1024};
  std::vector<std::size_t> workers{1, 2, 4, 8};
  std::size_t hidden = 32;
  std::size_t layers = 2;
  std::size_t dim = 9;
  std::size_t batch = 4;
  std::size_t cf = 4;
  std::size_t levels = 3;
  std::size_t fwd_iters = 2;
  std::size_t bwd_iters = 1;
  std::size_t samples = 1;
  std::string csv;
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchOpts& o) {
  std::ofstream f;
  std::ostream* out = &std::cout;
  if (!o.csv.empty()) {
    f.open(o.csv);
    if (!f) throw std::runtime_error("cannot write '" + o.csv + "'");
    out = &f;
  }
  *out << "T,workers,workers_used,serial_seconds,mgrit_seconds,speedup\n";

  Rng rng(o.seed);
  for (std::size_t T : o.lengths) {
    Hierarchy hier = build_hierarchy(T, o.cf, o.levels);
    if (T % o.cf != 0 || hier.depth() < 2) {
      *out << "# skip T=" << T << ": cannot coarsen with cf=" << o.cf << '\n';
      continue;
    }
    GruStack stack = GruStack::random(o.layers, o.dim, o.hidden, rng);
    ClassifierHead head = ClassifierHead::random(6, o.hidden, rng);
    Model m{stack, head, StepKind::kImplicit};
    Sequence x(T, o.batch * o.dim);
    for (std::size_t t = 1; t <= T; ++t)
      for (std::size_t i = 0; i < x.dim(); ++i) x[t][i] = rng.uniform(-1.0, 1.0);
    std::vector<std::size_t> labels(o.batch), lengths(o.batch, T);
    for (std::size_t b = 0; b < o.batch; ++b) labels[b] = rng.index(6);

    double serial_s = 1e300;
    for (std::size_t s = 0; s < o.samples; ++s) {
      const auto t0 = std::chrono::steady_clock::now();
      serial_bptt(m.stack, m.head, m.kind, x, labels, lengths);
      serial_s = std::min(
          serial_s, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }

    CycleConfig cycle;
    cycle.coarsening = o.cf;
    cycle.max_levels = o.levels;
    cycle.fwd_iters = o.fwd_iters;
    cycle.bwd_iters = o.bwd_iters;
    for (std::size_t P : o.workers) {
      ParallelOptions popt;
      popt.workers = P;
      popt.record_residuals = false;
      double mg_s = 1e300;
      std::size_t used = P;
      for (std::size_t s = 0; s < o.samples; ++s) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainStep st = mgrit_train_step(m, x, labels, lengths, cycle, popt);
        mg_s = std::min(
            mg_s, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        (void)st;
      }
      used = make_partition(T, o.cf, P).workers;
      char row[160];
      std::snprintf(row, sizeof row, "%zu,%zu,%zu,%.6f,%.6f,%.3f\n", T, P, used, serial_s, mg_s,
                    serial_s / mg_s);
      *out << row;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// convergence

struct ConvOpts {
  std::string config;
  std::vector<std::size_t> cfs{2, 4, 8};
  std::size_t steps = 128;
  std::size_t hidden = 16;
  std::size_t layers = 2;
  std::size_t dim = 4;
  std::size_t batch = 2;
  std::size_t iters = 8;
  std::string csv;
  std::uint64_t seed = 1;
};

int cmd_convergence(const ConvOpts& o) {
  std::ofstream f;
  std::ostream* out = &std::cout;
  if (!o.csv.empty()) {
    f.open(o.csv);
    if (!f) throw std::runtime_error("cannot write '" + o.csv + "'");
    out = &f;
  }
  *out << "cf,levels,iter,fwd_residual,bwd_residual\n";

  for (std::size_t cf : o.cfs) {
    if (cf < 2 || o.steps % cf != 0) {
      *out << "# skip cf=" << cf << ": incompatible with T=" << o.steps << '\n';
      continue;
    }
    Rng rng(o.seed);  // same model and data for every cf
    GruStack stack = GruStack::random(o.layers, o.dim, o.hidden, rng);
    Sequence x(o.steps, o.batch * o.dim);
    for (std::size_t t = 1; t <= o.steps; ++t)
      for (std::size_t i = 0; i < x.dim(); ++i) x[t][i] = rng.uniform(-1.0, 1.0);

    Hierarchy hier = build_hierarchy(o.steps, cf, 64);  // grow until too coarse
    CycleConfig cycle;
    cycle.coarsening = cf;
    cycle.max_levels = hier.depth();

    GruForwardSystem fwd(stack, StepKind::kImplicit, x, hier);
    Sequence h(o.steps, fwd.state_dim());
    MgritSolver fsolve(fwd, cycle);
    SolveTrace ft = fsolve.solve(h, o.iters);

    // Adjoint about the converged trajectory, anchored by a random terminal
    // cotangent, run on the reversed grid.
    Sequence h_exact(o.steps, fwd.state_dim());
    auto ws = fwd.make_scratch();
    solve_forward(fwd, 0, nullptr, view_of(h_exact), o.steps, *ws);
    GruAdjointSystem adj(stack, StepKind::kImplicit, x, h_exact, hier);
    Sequence v(o.steps, fwd.state_dim());
    for (std::size_t i = 0; i < v.dim(); ++i) v[0][i] = rng.uniform(-1.0, 1.0);
    MgritSolver bsolve(adj, cycle);
    SolveTrace bt = bsolve.solve(v, o.iters);

    for (std::size_t i = 0; i < ft.iterations.size(); ++i) {
      char row[160];
      std::snprintf(row, sizeof row, "%zu,%zu,%zu,%.8e,%.8e\n", cf, hier.depth(), i + 1,
                    ft.iterations[i].residual,
                    i < bt.iterations.size() ? bt.iterations[i].residual : -1.0);
      *out << row;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-parallel GRU training workbench"};
  app.require_subcommand(1);

  DemoOpts d;
  CLI::App* demo = app.add_subcommand("demo", "two-level solve of the linear model problem");
  demo->add_option("--config", d.config, "key=value file, flags take precedence");
  demo->add_option("--dim", d.dim, "state dimension")->capture_default_str();
  demo->add_option("--steps", d.steps, "fine time steps")->capture_default_str();
  demo->add_option("--cf", d.cf, "coarsening factor")
      ->capture_default_str()
      ->check(CLI::Range(std::size_t{2}, std::size_t{64}));
  demo->add_option("--levels", d.levels, "grid levels")->capture_default_str();
  demo->add_option("--iters", d.iters, "max cycles")->capture_default_str();
  demo->add_option("--dt", d.dt, "time step")->capture_default_str();
  demo->add_option("--alpha", d.alpha, "data forcing weight")->capture_default_str();
  demo->add_option("--seed", d.seed, "rng seed")->capture_default_str();
  demo->add_flag("--spectrum", d.spectrum, "also print the error-spectrum study");

  TrainOpts t;
  CLI::App* train = app.add_subcommand("train", "train a classifier");
  train->add_option("--config", t.config, "key=value file, flags take precedence");
  add_data_flags(train, t.data);
  train->add_option("--mode", t.mode, "serial-classic | serial-implicit | mgrit")
      ->capture_default_str()
      ->check(CLI::IsMember({"serial-classic", "serial-implicit", "mgrit"}));
  train->add_option("--checkpoint", t.checkpoint, "write the trained model here");
  train->add_option("--metrics", t.metrics, "write per-epoch records here (default stdout)");
  train->add_flag("--standardize", t.standardize, "standardize channels with train-split stats");
  train->add_flag("--no-schedule", t.no_schedule, "disable the halving learning-rate schedule");
  train->add_option("--hidden", t.hidden, "hidden units per layer")->capture_default_str();
  train->add_option("--layers", t.layers, "stacked cells")->capture_default_str();
  train->add_option("--lr", t.lr, "learning rate")->capture_default_str();
  train->add_option("--batch", t.batch, "batch size")->capture_default_str();
  train->add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
  train->add_option("--workers", t.workers, "time-parallel lanes")
      ->capture_default_str()
      ->envname("PINTGRU_WORKERS");
  train->add_option("--cf", t.cf, "coarsening factor")->capture_default_str();
  train->add_option("--levels", t.levels, "max grid levels")->capture_default_str();
  train->add_option("--fwd-iters", t.fwd_iters, "forward cycles per batch")
      ->capture_default_str();
  train->add_option("--bwd-iters", t.bwd_iters, "backward cycles per batch")
      ->capture_default_str();
  train->add_option("--seed", t.data.seed, "rng seed")->capture_default_str();

  InferOpts inf;
  CLI::App* infer_cmd = app.add_subcommand("infer", "classify sequences with a checkpoint");
  infer_cmd->add_option("--config", inf.config, "key=value file, flags take precedence");
  add_data_flags(infer_cmd, inf.data);
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "model file")->required();
  infer_cmd->add_option("--mode", inf.mode, "serial | mgrit")
      ->capture_default_str()
      ->check(CLI::IsMember({"serial", "mgrit"}));
  infer_cmd->add_option("--cf", inf.cf, "coarsening factor")->capture_default_str();
  infer_cmd->add_option("--levels", inf.levels, "max grid levels")->capture_default_str();
  infer_cmd->add_option("--fwd-iters", inf.fwd_iters, "cycles in mgrit mode")
      ->capture_default_str();
  infer_cmd->add_option("--workers", inf.workers, "time-parallel lanes")
      ->capture_default_str()
      ->envname("PINTGRU_WORKERS");
  infer_cmd->add_option("--batch", inf.batch, "evaluation batch size")->capture_default_str();
  infer_cmd->add_flag("--quiet", inf.quiet, "suppress per-sequence lines");
  infer_cmd->add_option("--seed", inf.data.seed, "rng seed")->capture_default_str();

  BenchOpts b;
  CLI::App* bench = app.add_subcommand("bench", "per-batch wall-clock grid, serial vs mgrit");
  bench->add_option("--config", b.config, "key=value file, flags take precedence");
  bench->add_option("--lengths", b.lengths, "sequence lengths")
      ->capture_default_str()
      ->delimiter(',');
  bench->add_option("--workers-list", b.workers, "worker counts")
      ->capture_default_str()
      ->delimiter(',');
  bench->add_option("--hidden", b.hidden, "hidden units")->capture_default_str();
  bench->add_option("--layers", b.layers, "stacked cells")->capture_default_str();
  bench->add_option("--dim", b.dim, "input channels")->capture_default_str();
  bench->add_option("--batch", b.batch, "batch size")->capture_default_str();
  bench->add_option("--cf", b.cf, "coarsening factor")->capture_default_str();
  bench->add_option("--levels", b.levels, "max grid levels")->capture_default_str();
  bench->add_option("--fwd-iters", b.fwd_iters, "forward cycles")->capture_default_str();
  bench->add_option("--bwd-iters", b.bwd_iters, "backward cycles")->capture_default_str();
  bench->add_option("--samples", b.samples, "timing repetitions, best kept")
      ->capture_default_str();
  bench->add_option("--csv", b.csv, "write the table here (default stdout)");
  bench->add_option("--seed", b.seed, "rng seed")->capture_default_str();

  ConvOpts c;
  CLI::App* conv = app.add_subcommand("convergence", "residual-vs-iteration curves per cf");
  conv->add_option("--config", c.config, "key=value file, flags take precedence");
  conv->add_option("--cf-list", c.cfs, "coarsening factors")
      ->capture_default_str()
      ->delimiter(',');
  conv->add_option("--steps", c.steps, "fine time steps")->capture_default_str();
  conv->add_option("--hidden", c.hidden, "hidden units")->capture_default_str();
  conv->add_option("--layers", c.layers, "stacked cells")->capture_default_str();
  conv->add_option("--dim", c.dim, "input channels")->capture_default_str();
  conv->add_option("--batch", c.batch, "batch size")->capture_default_str();
  conv->add_option("--iters", c.iters, "cycles per curve")->capture_default_str();
  conv->add_option("--csv", c.csv, "write the table here (default stdout)");
  conv->add_option("--seed", c.seed, "rng seed")->capture_default_str();

  try {
    app.parse(argc, argv);
    if (demo->parsed()) {
      apply_config(demo, d.config);
      return cmd_demo(d);
    }
    if (train->parsed()) {
      apply_config(train, t.config);
      return cmd_train(t);
    }
    if (infer_cmd->parsed()) {
      apply_config(infer_cmd, inf.config);
      return cmd_infer(inf);
    }
    if (bench->parsed()) {
      apply_config(bench, b.config);
      return cmd_bench(b);
    }
    if (conv->parsed()) {
      apply_config(conv, c.config);
      return cmd_convergence(c);
    }
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
