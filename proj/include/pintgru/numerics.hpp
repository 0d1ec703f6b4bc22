#pragma once

// Minimal dense linear algebra and scalar kernels shared by every module.
// Values are plain doubles with value semantics; nothing here is tuned for
// BLAS-grade throughput, just predictable and allocation-light.

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pintgru {

struct DenseVector {
  std::vector<double> values;

  DenseVector() = default;
  explicit DenseVector(std::size_t dim, double fill = 0.0) : values(dim, fill) {}
  DenseVector(std::initializer_list<double> init) : values(init) {}

  std::size_t dim() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  std::span<double> span() { return {values.data(), values.size()}; }
  std::span<const double> span() const { return {values.data(), values.size()}; }
};

// Row-major dense matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("shape mismatch: " + what);
}

// out = w * x  (spans let callers work on slices of flat state without copies)
inline void matvec_into(const DenseMatrix& w, std::span<const double> x, std::span<double> out) {
  require_shape(w.cols == x.size() && w.rows == out.size(), "matvec");
  const double* row = w.values.data();
  for (std::size_t r = 0; r < w.rows; ++r, row += w.cols) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

// out += w * x
inline void matvec_acc(const DenseMatrix& w, std::span<const double> x, std::span<double> out) {
  require_shape(w.cols == x.size() && w.rows == out.size(), "matvec_acc");
  const double* row = w.values.data();
  for (std::size_t r = 0; r < w.rows; ++r, row += w.cols) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    out[r] += acc;
  }
}

// out += w^T * x
inline void matvec_transpose_acc(const DenseMatrix& w, std::span<const double> x,
                                 std::span<double> out) {
  require_shape(w.rows == x.size() && w.cols == out.size(), "matvec_transpose_acc");
  const double* row = w.values.data();
  for (std::size_t r = 0; r < w.rows; ++r, row += w.cols) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += row[c] * xr;
  }
}

// w += g * x^T  (rank-one update used by parameter VJPs)
inline void outer_acc(DenseMatrix& w, std::span<const double> g, std::span<const double> x) {
  require_shape(w.rows == g.size() && w.cols == x.size(), "outer_acc");
  double* row = w.values.data();
  for (std::size_t r = 0; r < w.rows; ++r, row += w.cols) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < w.cols; ++c) row[c] += gr * x[c];
  }
}

inline double sigmoid(double a) {
  // Split on sign so neither branch exponentiates a large positive value.
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

inline DenseVector affine(const DenseMatrix& w, const DenseVector& x, const DenseVector& b) {
  require_shape(w.rows == b.dim(), "affine bias");
  DenseVector out(w.rows);
  matvec_into(w, x.span(), out.span());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] += b[i];
  return out;
}

inline DenseVector sigmoid(const DenseVector& v) {
  DenseVector out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = sigmoid(v[i]);
  return out;
}

inline DenseVector tanh_act(const DenseVector& v) {
  DenseVector out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = std::tanh(v[i]);
  return out;
}

inline double squared_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

inline double squared_norm(const DenseVector& v) { return squared_norm(v.span()); }

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Left-to-right fold of per-item partial sums. Reductions everywhere in this
// codebase (residual norms, gradient blocks) assemble partials in time order
// and fold with this, so results do not depend on how work was split.
inline double ordered_sum(std::span<const double> parts) {
  double acc = 0.0;
  for (double p : parts) acc += p;
  return acc;
}

// DFT magnitudes |X_k| for k = 0..N/2 of a real signal. Radix-2 FFT when the
// length is a power of two, direct summation otherwise (spectra here are short).
inline std::vector<double> dft_magnitudes(const std::vector<double>& signal) {
  const std::size_t n = signal.size();
  if (n == 0) throw std::invalid_argument("dft_magnitudes: empty signal");
  const bool pow2 = (n & (n - 1)) == 0;
  std::vector<std::complex<double>> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = signal[i];
  if (pow2 && n > 1) {
    // Iterative Cooley-Tukey, bit-reversal order.
    std::size_t j = 0;
    for (std::size_t i = 1; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const double ang = -2.0 * M_PI / static_cast<double>(len);
      const std::complex<double> wlen(std::cos(ang), std::sin(ang));
      for (std::size_t i = 0; i < n; i += len) {
        std::complex<double> w(1.0);
        for (std::size_t k = 0; k < len / 2; ++k) {
          const std::complex<double> u = x[i + k];
          const std::complex<double> v = x[i + k + len / 2] * w;
          x[i + k] = u + v;
          x[i + k + len / 2] = u - v;
          w *= wlen;
        }
      }
    }
  } else if (n > 1) {
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc(0.0);
      for (std::size_t t = 0; t < n; ++t) {
        const double ang = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(t) /
                           static_cast<double>(n);
        acc += signal[t] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      out[k] = acc;
    }
    x = std::move(out);
  }
  std::vector<double> mags(n / 2 + 1);
  for (std::size_t k = 0; k < mags.size(); ++k) mags[k] = std::abs(x[k]);
  return mags;
}

// Deterministic RNG with hand-rolled distributions. std:: distributions are
// implementation-defined, which would make seeds non-portable across stdlibs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next_u64() {
    // xorshift* keeps the header self-contained and reproducible everywhere.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    // Box-Muller; cache the second value.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace pintgru
