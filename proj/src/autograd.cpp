#include "synbrain/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "synbrain/params.hpp"

namespace synbrain {

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return {this, nodes_.size() - 1};
}

Var Graph::input(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad && grad_enabled_, {}});
  return {this, nodes_.size() - 1};
}

Var Graph::param(ParamTree& tree, std::size_t leaf_index) {
  auto& cache = param_nodes_[&tree];
  if (auto it = cache.find(leaf_index); it != cache.end()) return {this, it->second};
  ParamLeaf& leaf = tree.leaf(leaf_index);
  const bool wants = grad_enabled_ && leaf.trainable;
  nodes_.push_back(Node{leaf.value, {}, wants, {}});
  const std::size_t id = nodes_.size() - 1;
  if (wants) {
    nodes_.back().backward = [&leaf](const Tensor& g) {
      if (leaf.grad.empty()) leaf.grad = Tensor(leaf.value.rows(), leaf.value.cols());
      for (std::size_t i = 0; i < g.size(); ++i) leaf.grad[i] += g[i];
    };
  }
  cache.emplace(leaf_index, id);
  return {this, id};
}

Var Graph::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& p : parents) needs = needs || p.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return {this, nodes_.size() - 1};
}

Tensor& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw std::logic_error("backward on a foreign graph");
  if (loss.value().size() != 1) throw ShapeError("backward needs a scalar loss");
  if (!nodes_[loss.id()].requires_grad) return;
  grad_slot(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(n.grad);
  }
}

namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::logic_error("operation on an empty Var");
  return *a.graph();
}

void accumulate(Var target, const Tensor& g) {
  if (!target.requires_grad()) return;
  Tensor& slot = target.graph()->grad_slot(target.id());
  double* dst = slot.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

// Elementwise op with derivative expressed in terms of input x (and output y).
template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
  Tensor out = map_values(a.value(), f);
  const Var parents[] = {a};
  return graph_of(a).record(std::move(out), parents, [a, dfdx](const Tensor& og) {
    const Tensor& x = a.value();
    Tensor da(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) da[i] = og[i] * dfdx(x[i]);
    accumulate(a, da);
  });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const Var parents[] = {a, b};
  return graph_of(a).record(std::move(out), parents, [a, b](const Tensor& og) {
    accumulate(a, og);
    accumulate(b, og);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const Var parents[] = {a, b};
  return graph_of(a).record(std::move(out), parents, [a, b](const Tensor& og) {
    accumulate(a, og);
    if (b.requires_grad()) accumulate(b, map_values(og, [](double v) { return -v; }));
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const Var parents[] = {a, b};
  return graph_of(a).record(std::move(out), parents, [a, b](const Tensor& og) {
    if (a.requires_grad()) {
      Tensor da = og;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= b.value()[i];
      accumulate(a, da);
    }
    if (b.requires_grad()) {
      Tensor db = og;
      for (std::size_t i = 0; i < db.size(); ++i) db[i] *= a.value()[i];
      accumulate(b, db);
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = map_values(a.value(), [s](double v) { return v * s; });
  const Var parents[] = {a};
  return graph_of(a).record(std::move(out), parents, [a, s](const Tensor& og) {
    accumulate(a, map_values(og, [s](double v) { return v * s; }));
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = map_values(a.value(), [s](double v) { return v + s; });
  const Var parents[] = {a};
  return graph_of(a).record(std::move(out), parents,
                            [a](const Tensor& og) { accumulate(a, og); });
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  if (trans_a && trans_b) throw std::invalid_argument("matmul: double transpose unsupported");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = trans_a ? av.cols() : av.rows();
  const std::size_t k = trans_a ? av.rows() : av.cols();
  const std::size_t kb = trans_b ? bv.cols() : bv.rows();
  const std::size_t n = trans_b ? bv.rows() : bv.cols();
  if (k != kb) {
    throw ShapeError("matmul: inner dims " + av.shape_string() + " x " + bv.shape_string());
  }
  Tensor out(m, n);
  kernels::gemm({m, n, k, trans_a, trans_b, false}, av.data(), bv.data(), out.data());
  const Var parents[] = {a, b};
  return graph_of(a).record(
      std::move(out), parents, [a, b, m, n, k, trans_a, trans_b](const Tensor& og) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (a.requires_grad()) {
          Tensor da(av.rows(), av.cols());
          if (trans_a) {
            // A is k x m; dA = B dC^T
            kernels::gemm({k, m, n, false, true, false}, bv.data(), og.data(), da.data());
          } else if (trans_b) {
            // dA = dC B, B is n x k
            kernels::gemm({m, k, n, false, false, false}, og.data(), bv.data(), da.data());
          } else {
            kernels::gemm({m, k, n, false, true, false}, og.data(), bv.data(), da.data());
          }
          accumulate(a, da);
        }
        if (b.requires_grad()) {
          Tensor db(bv.rows(), bv.cols());
          if (trans_b) {
            // B is n x k; dB = dC^T A
            kernels::gemm({n, k, m, true, false, false}, og.data(), av.data(), db.data());
          } else if (trans_a) {
            // dB = A dC, A is k x m
            kernels::gemm({k, n, m, false, false, false}, av.data(), og.data(), db.data());
          } else {
            kernels::gemm({k, n, m, true, false, false}, av.data(), og.data(), db.data());
          }
          accumulate(b, db);
        }
      });
}

Var transpose(Var a) {
  const Var parents[] = {a};
  return graph_of(a).record(a.value().transposed(), parents,
                            [a](const Tensor& og) { accumulate(a, og.transposed()); });
}

Var add_row_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  if (b.rows() != 1 || b.cols() != xv.cols()) {
    throw ShapeError("add_row_bias: bias " + b.value().shape_string() + " for " +
                     xv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b.value()[c];
  }
  const Var parents[] = {x, b};
  return graph_of(x).record(std::move(out), parents, [x, b](const Tensor& og) {
    accumulate(x, og);
    if (b.requires_grad()) {
      Tensor db(1, og.cols());
      for (std::size_t r = 0; r < og.rows(); ++r) {
        for (std::size_t c = 0; c < og.cols(); ++c) db[c] += og(r, c);
      }
      accumulate(b, db);
    }
  });
}

Var add_col_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  if (b.cols() != 1 || b.rows() != xv.rows()) {
    throw ShapeError("add_col_bias: bias " + b.value().shape_string() + " for " +
                     xv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b.value()[r];
  }
  const Var parents[] = {x, b};
  return graph_of(x).record(std::move(out), parents, [x, b](const Tensor& og) {
    accumulate(x, og);
    if (b.requires_grad()) {
      Tensor db(og.rows(), 1);
      for (std::size_t r = 0; r < og.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < og.cols(); ++c) s += og(r, c);
        db[r] = s;
      }
      accumulate(b, db);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  if (gain.rows() != 1 || gain.cols() != cols || !gain.value().same_shape(bias.value())) {
    throw ShapeError("layer_norm_rows: gain/bias must be 1 x " + std::to_string(cols));
  }
  Tensor xhat(rows, cols);
  Tensor rstd(rows, 1);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xv(r, c);
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      xhat(r, c) = (xv(r, c) - mu) * rs;
      out(r, c) = xhat(r, c) * gain.value()[c] + bias.value()[c];
    }
  }
  const Var parents[] = {x, gain, bias};
  return graph_of(x).record(
      std::move(out), parents,
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor& og) {
        const std::size_t rows = og.rows();
        const std::size_t cols = og.cols();
        if (gain.requires_grad() || bias.requires_grad()) {
          Tensor dg(1, cols);
          Tensor db(1, cols);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              dg[c] += og(r, c) * xhat(r, c);
              db[c] += og(r, c);
            }
          }
          accumulate(gain, dg);
          accumulate(bias, db);
        }
        if (x.requires_grad()) {
          Tensor dx(rows, cols);
          const double inv_n = 1.0 / static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_d = 0.0;
            double sum_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = og(r, c) * gain.value()[c];
              sum_d += d;
              sum_dx += d * xhat(r, c);
            }
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = og(r, c) * gain.value()[c];
              dx(r, c) = rstd[r] * (d - inv_n * sum_d - xhat(r, c) * inv_n * sum_dx);
            }
          }
          accumulate(x, dx);
        }
      });
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Var silu(Var x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var square(Var x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var clamp(Var x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < xv.cols(); ++c) mx = std::max(mx, xv(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      out(r, c) = std::exp(xv(r, c) - mx);
      s += out(r, c);
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) /= s;
  }
  const Var parents[] = {x};
  Tensor probs = out;
  return graph_of(x).record(std::move(out), parents,
                            [x, p = std::move(probs)](const Tensor& og) {
                              Tensor dx(p.rows(), p.cols());
                              for (std::size_t r = 0; r < p.rows(); ++r) {
                                double dot = 0.0;
                                for (std::size_t c = 0; c < p.cols(); ++c) dot += og(r, c) * p(r, c);
                                for (std::size_t c = 0; c < p.cols(); ++c) {
                                  dx(r, c) = p(r, c) * (og(r, c) - dot);
                                }
                              }
                              accumulate(x, dx);
                            });
}

Var log_softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < xv.cols(); ++c) mx = std::max(mx, xv(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) s += std::exp(xv(r, c) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) - lse;
  }
  const Var parents[] = {x};
  Tensor logp = out;
  return graph_of(x).record(std::move(out), parents,
                            [x, lp = std::move(logp)](const Tensor& og) {
                              Tensor dx(lp.rows(), lp.cols());
                              for (std::size_t r = 0; r < lp.rows(); ++r) {
                                double s = 0.0;
                                for (std::size_t c = 0; c < lp.cols(); ++c) s += og(r, c);
                                for (std::size_t c = 0; c < lp.cols(); ++c) {
                                  dx(r, c) = og(r, c) - std::exp(lp(r, c)) * s;
                                }
                              }
                              accumulate(x, dx);
                            });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const Var parents[] = {x};
  return graph_of(x).record(Tensor(1, 1, s), parents, [x](const Tensor& og) {
    accumulate(x, Tensor(x.rows(), x.cols(), og[0]));
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  }
  const double inv = 1.0 / static_cast<double>(xv.rows());
  for (std::size_t c = 0; c < xv.cols(); ++c) out[c] *= inv;
  const Var parents[] = {x};
  return graph_of(x).record(std::move(out), parents, [x, inv](const Tensor& og) {
    Tensor dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < dx.rows(); ++r) {
      for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) = og[c] * inv;
    }
    accumulate(x, dx);
  });
}

Var l2_normalize_rows(Var x, double eps) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  Tensor inv_norm(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) s += xv(r, c) * xv(r, c);
    inv_norm[r] = 1.0 / std::max(std::sqrt(s), eps);
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) * inv_norm[r];
  }
  Tensor y = out;
  const Var parents[] = {x};
  return graph_of(x).record(
      std::move(out), parents,
      [x, y = std::move(y), inv_norm = std::move(inv_norm)](const Tensor& og) {
        Tensor dx(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += og(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) {
            dx(r, c) = inv_norm[r] * (og(r, c) - y(r, c) * dot);
          }
        }
        accumulate(x, dx);
      });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin > end || end > xv.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Tensor out(xv.rows(), w);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < w; ++c) out(r, c) = xv(r, begin + c);
  }
  const Var parents[] = {x};
  return graph_of(x).record(std::move(out), parents, [x, begin, w](const Tensor& og) {
    Tensor dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < og.rows(); ++r) {
      for (std::size_t c = 0; c < w; ++c) dx(r, begin + c) = og(r, c);
    }
    accumulate(x, dx);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, off + c) = p.value()(r, c);
    }
    off += p.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return graph_of(parts[0]).record(std::move(out), parts, [keep](const Tensor& og) {
    std::size_t off = 0;
    for (const Var& p : keep) {
      if (p.requires_grad()) {
        Tensor dp(p.rows(), p.cols());
        for (std::size_t r = 0; r < dp.rows(); ++r) {
          for (std::size_t c = 0; c < dp.cols(); ++c) dp(r, c) = og(r, off + c);
        }
        accumulate(p, dp);
      }
      off += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off * cols);
    off += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return graph_of(parts[0]).record(std::move(out), parts, [keep, cols](const Tensor& og) {
    std::size_t off = 0;
    for (const Var& p : keep) {
      if (p.requires_grad()) {
        Tensor dp(p.rows(), cols);
        std::copy(og.data() + off * cols, og.data() + (off + p.rows()) * cols, dp.data());
        accumulate(p, dp);
      }
      off += p.rows();
    }
  });
}

Var conv1d(Var x, Var w, Var b, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (kernel == 0 || stride == 0) throw ShapeError("conv1d: kernel and stride must be positive");
  if (wv.cols() != xv.rows() * kernel) {
    throw ShapeError("conv1d: weight " + wv.shape_string() + " does not match " +
                     std::to_string(xv.rows()) + " input channels with kernel " +
                     std::to_string(kernel));
  }
  if (xv.cols() + 2 * pad < kernel) throw ShapeError("conv1d: input shorter than kernel");
  const kernels::ConvGeometry geo{xv.rows(), wv.rows(), xv.cols(), kernel, stride, pad};
  Tensor out(geo.c_out, geo.out_length());
  kernels::conv1d_forward(geo, xv.data(), wv.data(), out.data());
  const bool has_bias = b.valid();
  if (has_bias) {
    if (b.rows() != geo.c_out || b.cols() != 1) throw ShapeError("conv1d: bias must be c_out x 1");
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b.value()[r];
    }
  }
  std::vector<Var> parents{x, w};
  if (has_bias) parents.push_back(b);
  return graph_of(x).record(std::move(out), parents, [x, w, b, geo, has_bias](const Tensor& og) {
    if (x.requires_grad()) {
      Tensor dx(geo.c_in, geo.length);
      kernels::conv1d_backward_input(geo, og.data(), w.value().data(), dx.data());
      accumulate(x, dx);
    }
    if (w.requires_grad()) {
      Tensor dw(w.rows(), w.cols());
      kernels::conv1d_backward_weight(geo, og.data(), x.value().data(), dw.data());
      accumulate(w, dw);
    }
    if (has_bias && b.requires_grad()) {
      Tensor db(geo.c_out, 1);
      for (std::size_t r = 0; r < og.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < og.cols(); ++c) s += og(r, c);
        db[r] = s;
      }
      accumulate(b, db);
    }
  });
}

namespace {

struct PoolResult {
  Tensor values;
  std::vector<std::size_t> argmax;
};

PoolResult pool_with_argmax(const Tensor& x, std::size_t out_len) {
  const std::size_t len = x.cols();
  if (len == 0 || out_len == 0) throw ShapeError("adaptive_max_pool: empty input or output");
  PoolResult res{Tensor(x.rows(), out_len), std::vector<std::size_t>(x.rows() * out_len)};
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t start = (i * len) / out_len;
    const std::size_t end = ((i + 1) * len + out_len - 1) / out_len;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      std::size_t best = start;
      for (std::size_t t = start + 1; t < end; ++t) {
        if (x(r, t) > x(r, best)) best = t;
      }
      res.values(r, i) = x(r, best);
      res.argmax[r * out_len + i] = best;
    }
  }
  return res;
}

struct ResampleTap {
  std::size_t left;
  double frac;
};

std::vector<ResampleTap> resample_taps(std::size_t len, std::size_t out_len) {
  if (len < 2) throw ShapeError("linear_resample: need at least 2 input points");
  if (out_len == 0) throw ShapeError("linear_resample: empty output");
  std::vector<ResampleTap> taps(out_len);
  for (std::size_t j = 0; j < out_len; ++j) {
    const double q = out_len == 1
                         ? 0.5 * static_cast<double>(len - 1)
                         : static_cast<double>(j) * static_cast<double>(len - 1) /
                               static_cast<double>(out_len - 1);
    std::size_t left = static_cast<std::size_t>(std::floor(q));
    left = std::min(left, len - 2);
    taps[j] = {left, q - static_cast<double>(left)};
  }
  return taps;
}

}  // namespace

Tensor adaptive_max_pool_values(const Tensor& x, std::size_t out_len) {
  return pool_with_argmax(x, out_len).values;
}

Tensor linear_resample_values(const Tensor& x, std::size_t out_len) {
  const auto taps = resample_taps(x.cols(), out_len);
  Tensor out(x.rows(), out_len);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < out_len; ++j) {
      const auto [left, f] = taps[j];
      out(r, j) = (1.0 - f) * x(r, left) + f * x(r, left + 1);
    }
  }
  return out;
}

Var adaptive_max_pool(Var x, std::size_t out_len) {
  PoolResult res = pool_with_argmax(x.value(), out_len);
  const Var parents[] = {x};
  return graph_of(x).record(std::move(res.values), parents,
                            [x, out_len, arg = std::move(res.argmax)](const Tensor& og) {
                              Tensor dx(x.rows(), x.cols());
                              for (std::size_t r = 0; r < og.rows(); ++r) {
                                for (std::size_t i = 0; i < out_len; ++i) {
                                  dx(r, arg[r * out_len + i]) += og(r, i);
                                }
                              }
                              accumulate(x, dx);
                            });
}

Var linear_resample(Var x, std::size_t out_len) {
  Tensor out = linear_resample_values(x.value(), out_len);
  const Var parents[] = {x};
  return graph_of(x).record(
      std::move(out), parents,
      [x, taps = resample_taps(x.cols(), out_len)](const Tensor& og) {
        Tensor dx(x.rows(), x.cols());
        for (std::size_t r = 0; r < og.rows(); ++r) {
          for (std::size_t j = 0; j < og.cols(); ++j) {
            const auto [left, f] = taps[j];
            dx(r, left) += (1.0 - f) * og(r, j);
            dx(r, left + 1) += f * og(r, j);
          }
        }
        accumulate(x, dx);
      });
}

Var upsample_nearest(Var x, std::size_t factor) {
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be positive");
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols() * factor);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = xv(r, c / factor);
  }
  const Var parents[] = {x};
  return graph_of(x).record(std::move(out), parents, [x, factor](const Tensor& og) {
    Tensor dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < og.rows(); ++r) {
      for (std::size_t c = 0; c < og.cols(); ++c) dx(r, c / factor) += og(r, c);
    }
    accumulate(x, dx);
  });
}

}  // namespace synbrain
