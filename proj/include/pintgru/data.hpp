#pragma once

// Labeled sequence datasets: a synthetic multichannel-sinusoid generator for
// desk-scale experiments and a CSV reader/writer for real fixed-length
// recordings (one row per time step, long format).
//
// CSV layout, UTF-8, comma separated, '.' decimal point:
//
//   id,t,f0,f1,...,f{d-1},label
//
// `id` groups rows into one sequence, `t` counts 1..len without gaps, the
// features are doubles, and `label` is a non-negative integer constant within
// a sequence. Rows may arrive in any order; sequences are emitted in order of
// first appearance. Malformed input fails with the offending line number.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pintgru/grid.hpp"
#include "pintgru/numerics.hpp"

namespace pintgru {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabeledSequenceSet {
  std::vector<Sequence> sequences;   // inputs padded to a common length
  std::vector<std::size_t> lengths;  // original lengths before padding
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;

  std::size_t size() const { return sequences.size(); }
  std::size_t steps() const { return sequences.empty() ? 0 : sequences.front().steps(); }
};

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthParams {
  std::size_t num_classes = 6;
  std::size_t steps = 128;
  std::size_t dim = 9;
  std::size_t n_per_class = 100;
  std::uint64_t seed = 1;
  double noise = 0.3;
};

// Each class k gets a frequency of k+1 cycles over the window plus a
// per-channel phase and amplitude signature; examples differ from their class
// signal only by added Gaussian noise. The signature depends on (class,
// channel) alone, never on the seed, so independently seeded draws (say a
// train and a test split) describe the same classes. Class-major emission
// keeps the label counts exactly balanced.
inline LabeledSequenceSet synth_generate(const SynthParams& p) {
  if (p.num_classes == 0 || p.steps == 0 || p.dim == 0 || p.n_per_class == 0)
    throw std::invalid_argument("synth_generate: all counts must be positive");
  Rng signature(0xda7aULL);
  std::vector<double> phase(p.num_classes * p.dim);
  std::vector<double> amp(p.num_classes * p.dim);
  for (std::size_t i = 0; i < phase.size(); ++i) {
    phase[i] = signature.uniform(0.0, 2.0 * M_PI);
    amp[i] = signature.uniform(0.6, 1.4);
  }
  Rng rng(p.seed ^ 0x5eedULL);

  LabeledSequenceSet set;
  set.num_classes = p.num_classes;
  set.feature_dim = p.dim;
  set.sequences.reserve(p.num_classes * p.n_per_class);
  for (std::size_t k = 0; k < p.num_classes; ++k) {
    const double freq = 2.0 * M_PI * static_cast<double>(k + 1) / static_cast<double>(p.steps);
    for (std::size_t n = 0; n < p.n_per_class; ++n) {
      Sequence x(p.steps, p.dim);
      for (std::size_t t = 1; t <= p.steps; ++t)
        for (std::size_t c = 0; c < p.dim; ++c) {
          const std::size_t s = k * p.dim + c;
          x[t][c] = amp[s] * std::sin(freq * static_cast<double>(t) + phase[s]) +
                    p.noise * rng.normal();
        }
      set.sequences.push_back(std::move(x));
      set.lengths.push_back(p.steps);
      set.labels.push_back(k);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

[[noreturn]] inline void parse_fail(std::size_t line_no, const std::string& what) {
  throw ParseError("csv parse error at line " + std::to_string(line_no) + ": " + what);
}

inline double parse_double(std::string_view f, std::size_t line_no, const char* what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc{} || ptr != f.data() + f.size())
    parse_fail(line_no, std::string("bad ") + what + " '" + std::string(f) + "'");
  return v;
}

inline long long parse_int(std::string_view f, std::size_t line_no, const char* what) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc{} || ptr != f.data() + f.size())
    parse_fail(line_no, std::string(what) + " must be an integer, got '" + std::string(f) + "'");
  return v;
}

}  // namespace detail

inline LabeledSequenceSet load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");

  struct Row {
    std::size_t t;
    std::size_t line;
    std::vector<double> feat;
  };
  struct Group {
    std::vector<Row> rows;
    long long label = -1;
    std::size_t label_line = 0;
  };
  std::map<long long, Group> groups;
  std::vector<long long> order;

  std::string line;
  std::size_t line_no = 0;
  std::size_t cols = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    auto fields = detail::split_fields(sv);
    if (!have_header) {
      if (fields.size() < 4)
        detail::parse_fail(line_no, "header needs id,t,features...,label");
      cols = fields.size();
      have_header = true;
      continue;
    }
    if (fields.size() != cols)
      detail::parse_fail(line_no, "expected " + std::to_string(cols) + " fields, got " +
                                      std::to_string(fields.size()));
    const long long id = detail::parse_int(fields[0], line_no, "sequence id");
    const long long t = detail::parse_int(fields[1], line_no, "time index");
    if (t < 1) detail::parse_fail(line_no, "time index must be >= 1");
    const long long label = detail::parse_int(fields.back(), line_no, "label");
    if (label < 0) detail::parse_fail(line_no, "label must be non-negative");

    Row row;
    row.t = static_cast<std::size_t>(t);
    row.line = line_no;
    row.feat.reserve(cols - 3);
    for (std::size_t i = 2; i + 1 < fields.size(); ++i)
      row.feat.push_back(detail::parse_double(fields[i], line_no, "feature"));

    auto [it, fresh] = groups.try_emplace(id);
    if (fresh) order.push_back(id);
    Group& g = it->second;
    if (g.label < 0) {
      g.label = label;
      g.label_line = line_no;
    } else if (g.label != label) {
      detail::parse_fail(line_no, "sequence " + std::to_string(id) + " changes label from " +
                                      std::to_string(g.label) + " (line " +
                                      std::to_string(g.label_line) + ")");
    }
    g.rows.push_back(std::move(row));
  }
  if (!have_header) throw ParseError("'" + path + "' is empty");
  if (order.empty()) throw ParseError("'" + path + "' has a header but no rows");

  const std::size_t dim = cols - 3;
  LabeledSequenceSet set;
  set.feature_dim = dim;
  std::size_t max_len = 0;
  for (const long long id : order) {
    Group& g = groups[id];
    std::sort(g.rows.begin(), g.rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    for (std::size_t i = 0; i < g.rows.size(); ++i) {
      if (g.rows[i].t != i + 1)
        detail::parse_fail(g.rows[i].line,
                           "sequence " + std::to_string(id) + " expected time index " +
                               std::to_string(i + 1) + ", found " + std::to_string(g.rows[i].t));
    }
    max_len = std::max(max_len, g.rows.size());
  }
  for (const long long id : order) {
    Group& g = groups[id];
    Sequence x(max_len, dim);
    for (const Row& r : g.rows)
      for (std::size_t c = 0; c < dim; ++c) x[r.t][c] = r.feat[c];
    set.sequences.push_back(std::move(x));
    set.lengths.push_back(g.rows.size());
    set.labels.push_back(static_cast<std::size_t>(g.label));
    set.num_classes = std::max(set.num_classes, static_cast<std::size_t>(g.label) + 1);
  }
  return set;
}

// Only the unpadded region is written, so write-then-read is lossless.
inline void save_csv(const std::string& path, const LabeledSequenceSet& set) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "id,t";
  for (std::size_t c = 0; c < set.feature_dim; ++c) out << ",f" << c;
  out << ",label\n";
  char buf[32];
  for (std::size_t s = 0; s < set.size(); ++s) {
    for (std::size_t t = 1; t <= set.lengths[s]; ++t) {
      out << s << ',' << t;
      for (std::size_t c = 0; c < set.feature_dim; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", set.sequences[s][t][c]);
        out << ',' << buf;
      }
      out << ',' << set.labels[s] << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Post-load shaping

// Extend every sequence with zeros so each hierarchy level divides evenly.
// `lengths` keeps the true endpoints, which is where the loss reads.
inline void pad_to_grid(LabeledSequenceSet& set, std::size_t cf, std::size_t levels) {
  const std::size_t target = padded_steps(set.steps(), cf, levels);
  if (target == set.steps()) return;
  for (Sequence& x : set.sequences) {
    Sequence padded(target, set.feature_dim);
    for (std::size_t t = 1; t <= x.steps(); ++t) padded[t] = x[t];
    x = std::move(padded);
  }
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Per-channel moments over the unpadded region, meant to be computed on the
// training split and applied to both splits.
inline ChannelStats channel_stats(const LabeledSequenceSet& set) {
  ChannelStats st;
  st.mean.assign(set.feature_dim, 0.0);
  st.stddev.assign(set.feature_dim, 0.0);
  std::size_t count = 0;
  for (std::size_t s = 0; s < set.size(); ++s) {
    count += set.lengths[s];
    for (std::size_t t = 1; t <= set.lengths[s]; ++t)
      for (std::size_t c = 0; c < set.feature_dim; ++c) st.mean[c] += set.sequences[s][t][c];
  }
  if (count == 0) return st;
  for (double& m : st.mean) m /= static_cast<double>(count);
  for (std::size_t s = 0; s < set.size(); ++s)
    for (std::size_t t = 1; t <= set.lengths[s]; ++t)
      for (std::size_t c = 0; c < set.feature_dim; ++c) {
        const double d = set.sequences[s][t][c] - st.mean[c];
        st.stddev[c] += d * d;
      }
  for (double& v : st.stddev) v = std::sqrt(v / static_cast<double>(count));
  return st;
}

inline void standardize(LabeledSequenceSet& set, const ChannelStats& st) {
  for (std::size_t s = 0; s < set.size(); ++s)
    for (std::size_t t = 1; t <= set.lengths[s]; ++t)
      for (std::size_t c = 0; c < set.feature_dim; ++c) {
        const double scale = st.stddev[c] > 1e-12 ? st.stddev[c] : 1.0;
        set.sequences[s][t][c] = (set.sequences[s][t][c] - st.mean[c]) / scale;
      }
}

// Interleave the chosen examples into one wide sequence, example-major per
// time step, which is the batch layout the propagation systems expect.
inline Sequence pack_batch(const LabeledSequenceSet& set, std::span<const std::size_t> idx) {
  const std::size_t d = set.feature_dim;
  Sequence x(set.steps(), idx.size() * d);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Sequence& src = set.sequences[idx[b]];
    for (std::size_t t = 1; t <= x.steps(); ++t)
      for (std::size_t c = 0; c < d; ++c) x[t][b * d + c] = src[t][c];
  }
  return x;
}

}  // namespace pintgru
