#pragma once

// Dense inner loops behind the tensor ops. Each kernel has a plain serial
// reference in `serial::` and an OpenMP version in `omp::`; the unqualified
// entry points dispatch to the OpenMP path. Every OpenMP loop partitions
// disjoint output rows, so results do not depend on the thread count.

#include <cstddef>

namespace synbrain::kernels {

struct GemmShape {
  std::size_t m = 0;  // rows of C
  std::size_t n = 0;  // cols of C
  std::size_t k = 0;  // contraction length
  bool trans_a = false;  // A stored k x m instead of m x k
  bool trans_b = false;  // B stored n x k instead of k x n
  bool accumulate = false;  // C += A*B instead of C = A*B
};

struct ConvGeometry {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t length = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_length() const { return (length + 2 * pad - kernel) / stride + 1; }
};

namespace serial {
void gemm(const GemmShape& s, const double* a, const double* b, double* c);
// y: c_out x out_len, w: c_out x (c_in*kernel), x: c_in x length. Bias excluded.
void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, double* y);
// dx += W^T dy scattered back onto the input positions.
void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
// dw += dy x^T gathered over output positions.
void conv1d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw);
}  // namespace serial

namespace omp {
void gemm(const GemmShape& s, const double* a, const double* b, double* c);
void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, double* y);
void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
void conv1d_backward_weight(const ConvGeometry& g, const double* dy, const double* x, double* dw);
}  // namespace omp

inline void gemm(const GemmShape& s, const double* a, const double* b, double* c) {
  omp::gemm(s, a, b, c);
}
inline void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, double* y) {
  omp::conv1d_forward(g, x, w, y);
}
inline void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w,
                                  double* dx) {
  omp::conv1d_backward_input(g, dy, w, dx);
}
inline void conv1d_backward_weight(const ConvGeometry& g, const double* dy, const double* x,
                                   double* dw) {
  omp::conv1d_backward_weight(g, dy, x, dw);
}

}  // namespace synbrain::kernels
