#include "synbrain/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace synbrain::kernels {

namespace {

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline double a_at(const GemmShape& s, const double* a, std::size_t i, std::size_t p) {
  return s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
}
inline double b_at(const GemmShape& s, const double* b, std::size_t p, std::size_t j) {
  return s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
}

// Output positions t whose input tap t*stride + tap - pad lands inside [0, length).
struct TapRange {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive
};

inline TapRange valid_outputs(const ConvGeometry& g, std::size_t tap) {
  const auto out_len = static_cast<std::int64_t>(g.out_length());
  const auto shift = static_cast<std::int64_t>(tap) - static_cast<std::int64_t>(g.pad);
  const auto stride = static_cast<std::int64_t>(g.stride);
  const auto length = static_cast<std::int64_t>(g.length);
  // smallest t with t*stride + shift >= 0
  std::int64_t lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  // largest t with t*stride + shift <= length-1
  std::int64_t hi_incl = (length - 1 - shift) >= 0 ? (length - 1 - shift) / stride : -1;
  lo = std::clamp<std::int64_t>(lo, 0, out_len);
  std::int64_t hi = std::clamp<std::int64_t>(hi_incl + 1, lo, out_len);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

void gemm(const GemmShape& s, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = s.accumulate ? c[i * s.n + j] : 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += a_at(s, a, i, p) * b_at(s, b, p, j);
      c[i * s.n + j] = acc;
    }
  }
}

void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, double* y) {
  const std::size_t out_len = g.out_length();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = 0.0;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        for (std::size_t tap = 0; tap < g.kernel; ++tap) {
          const auto pos = static_cast<std::int64_t>(t * g.stride + tap) -
                           static_cast<std::int64_t>(g.pad);
          if (pos < 0 || pos >= static_cast<std::int64_t>(g.length)) continue;
          acc += w[co * g.c_in * g.kernel + ci * g.kernel + tap] * x[ci * g.length + pos];
        }
      }
      y[co * out_len + t] = acc;
    }
  }
}

void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  const std::size_t out_len = g.out_length();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        for (std::size_t tap = 0; tap < g.kernel; ++tap) {
          const auto pos = static_cast<std::int64_t>(t * g.stride + tap) -
                           static_cast<std::int64_t>(g.pad);
          if (pos < 0 || pos >= static_cast<std::int64_t>(g.length)) continue;
          dx[ci * g.length + pos] +=
              w[co * g.c_in * g.kernel + ci * g.kernel + tap] * dy[co * out_len + t];
        }
      }
    }
  }
}

void conv1d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw) {
  const std::size_t out_len = g.out_length();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        for (std::size_t tap = 0; tap < g.kernel; ++tap) {
          const auto pos = static_cast<std::int64_t>(t * g.stride + tap) -
                           static_cast<std::int64_t>(g.pad);
          if (pos < 0 || pos >= static_cast<std::int64_t>(g.length)) continue;
          dw[co * g.c_in * g.kernel + ci * g.kernel + tap] +=
              dy[co * out_len + t] * x[ci * g.length + pos];
        }
      }
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace omp {

void gemm(const GemmShape& s, const double* a, const double* b, double* c) {
  const auto m = static_cast<std::int64_t>(s.m);
  const bool par = s.m * s.n * s.k >= kParallelWork;
  if (s.trans_b) {
    // rows of A against rows of B: contiguous dot products
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = c + i * s.n;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double* brow = b + j * s.k;
        double acc = 0.0;
        if (s.trans_a) {
          for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * brow[p];
        } else {
          const double* arow = a + i * s.k;
#pragma omp simd reduction(+ : acc)
          for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
        }
        crow[j] = s.accumulate ? crow[j] + acc : acc;
      }
    }
    return;
  }
  // i-p-j order streams rows of B into rows of C
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * s.n;
    if (!s.accumulate) std::fill(crow, crow + s.n, 0.0);
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * s.n;
#pragma omp simd
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  }
}

void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, double* y) {
  const std::size_t out_len = g.out_length();
  const auto c_out = static_cast<std::int64_t>(g.c_out);
  const bool par = g.c_out * g.c_in * g.kernel * out_len >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t co = 0; co < c_out; ++co) {
    double* yrow = y + co * out_len;
    std::fill(yrow, yrow + out_len, 0.0);
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      const double* xrow = x + ci * g.length;
      for (std::size_t tap = 0; tap < g.kernel; ++tap) {
        const double wv = w[co * g.c_in * g.kernel + ci * g.kernel + tap];
        const TapRange r = valid_outputs(g, tap);
        if (g.stride == 1) {
          const auto shift = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(g.pad);
#pragma omp simd
          for (std::size_t t = r.lo; t < r.hi; ++t) yrow[t] += wv * xrow[t + shift];
        } else {
          for (std::size_t t = r.lo; t < r.hi; ++t) {
            yrow[t] += wv * xrow[t * g.stride + tap - g.pad];
          }
        }
      }
    }
  }
}

void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  const std::size_t out_len = g.out_length();
  const auto c_in = static_cast<std::int64_t>(g.c_in);
  const bool par = g.c_out * g.c_in * g.kernel * out_len >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t ci = 0; ci < c_in; ++ci) {
    double* dxrow = dx + ci * g.length;
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const double* dyrow = dy + co * out_len;
      for (std::size_t tap = 0; tap < g.kernel; ++tap) {
        const double wv = w[co * g.c_in * g.kernel + ci * g.kernel + tap];
        const TapRange r = valid_outputs(g, tap);
        if (g.stride == 1) {
          const auto shift = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(g.pad);
#pragma omp simd
          for (std::size_t t = r.lo; t < r.hi; ++t) dxrow[t + shift] += wv * dyrow[t];
        } else {
          for (std::size_t t = r.lo; t < r.hi; ++t) {
            dxrow[t * g.stride + tap - g.pad] += wv * dyrow[t];
          }
        }
      }
    }
  }
}

void conv1d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw) {
  const std::size_t out_len = g.out_length();
  const auto c_out = static_cast<std::int64_t>(g.c_out);
  const bool par = g.c_out * g.c_in * g.kernel * out_len >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t co = 0; co < c_out; ++co) {
    const double* dyrow = dy + co * out_len;
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      const double* xrow = x + ci * g.length;
      for (std::size_t tap = 0; tap < g.kernel; ++tap) {
        const TapRange r = valid_outputs(g, tap);
        double acc = 0.0;
        if (g.stride == 1) {
          const auto shift = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(g.pad);
#pragma omp simd reduction(+ : acc)
          for (std::size_t t = r.lo; t < r.hi; ++t) acc += dyrow[t] * xrow[t + shift];
        } else {
          for (std::size_t t = r.lo; t < r.hi; ++t) {
            acc += dyrow[t] * xrow[t * g.stride + tap - g.pad];
          }
        }
        dw[co * g.c_in * g.kernel + ci * g.kernel + tap] += acc;
      }
    }
  }
}

}  // namespace omp

}  // namespace synbrain::kernels
