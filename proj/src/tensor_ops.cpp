#include "bvq/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "bvq/errors.hpp"
#include "bvq/parallel.hpp"

namespace bvq {
namespace {

using detail::NodePtr;
using detail::TensorNode;

// Work threshold below which matrix kernels stay on the calling thread.
constexpr std::size_t kParallelFlops = 1u << 17;

Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<NodePtr> parents,
               std::function<void(TensorNode&)> backprop) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool record = grad_enabled();
  if (record) {
    record = false;
    for (const auto& p : parents) {
      if (p->wants_grad()) {
        record = true;
        break;
      }
    }
  }
  if (record) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

// c[m x n] += a[m x k] * b[k x n]
void mm_nn_acc(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  auto rows = [=](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * n;
      for (std::size_t l = 0; l < k; ++l) {
        const double av = arow[l];
        if (av == 0.0) continue;
        const double* brow = b + l * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (m * k * n >= kParallelFlops) {
    parallel_for(0, m, rows);
  } else {
    rows(0, m);
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
               std::size_t n, std::size_t k) {
  auto rows = [=](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* arow = a + i * n;
      double* crow = c + i * k;
      for (std::size_t j = 0; j < k; ++j) {
        const double* brow = b + j * n;
        double acc = 0.0;
        for (std::size_t l = 0; l < n; ++l) acc += arow[l] * brow[l];
        crow[j] += acc;
      }
    }
  };
  if (m * n * k >= kParallelFlops) {
    parallel_for(0, m, rows);
  } else {
    rows(0, m);
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  auto rows = [=](std::size_t lo, std::size_t hi) {
    for (std::size_t l = 0; l < m; ++l) {
      const double* brow = b + l * n;
      const double* arow = a + l * k;
      for (std::size_t i = lo; i < hi; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (m * k * n >= kParallelFlops) {
    parallel_for(0, k, rows);
  } else {
    rows(0, k);
  }
}

void softmax_row(const double* in, double* out, std::size_t n) {
  double hi = in[0];
  for (std::size_t j = 1; j < n; ++j) hi = std::max(hi, in[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - hi);
    total += out[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

void log_softmax_row(const double* in, double* out, std::size_t n) {
  double hi = in[0];
  for (std::size_t j = 1; j < n; ++j) hi = std::max(hi, in[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - hi);
  const double log_total = std::log(total);
  for (std::size_t j = 0; j < n; ++j) out[j] = in[j] - hi - log_total;
}

void check_rows_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " +
                         shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  mm_nn_acc(a.values().data(), b.values().data(), out.data(), m, k, n);

  auto backprop = [m, k, n](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.wants_grad()) {
      pa.ensure_grad();
      mm_nt_acc(self.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
    }
    if (pb.wants_grad()) {
      pb.ensure_grad();
      mm_tn_acc(pa.data.data(), self.grad.data(), pb.grad.data(), m, k, n);
    }
  };
  return make_op({m, n}, std::move(out), {a.node(), b.node()}, backprop);
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  check_defined(input, "conv2d");
  check_defined(kernels, "conv2d");
  if (input.shape().size() != 4 || kernels.shape().size() != 4) {
    throw DimensionError("conv2d expects 4-D input and kernels, got " +
                         shape_to_string(input.shape()) + " and " +
                         shape_to_string(kernels.shape()));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t batch = input.shape()[0];
  const std::size_t cin = input.shape()[1];
  const std::size_t h = input.shape()[2];
  const std::size_t w = input.shape()[3];
  const std::size_t cout = kernels.shape()[0];
  const std::size_t kh = kernels.shape()[2];
  const std::size_t kw = kernels.shape()[3];
  if (kernels.shape()[1] != cin) {
    throw DimensionError("conv2d: input channels " + std::to_string(cin) +
                         " do not match kernel channels " +
                         std::to_string(kernels.shape()[1]));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel " + shape_to_string(kernels.shape()) +
                         " larger than padded input " +
                         shape_to_string(input.shape()) + " with padding " +
                         std::to_string(padding));
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

  std::vector<double> out(batch * cout * oh * ow, 0.0);
  const double* in = input.values().data();
  const double* ker = kernels.values().data();
  const long pad = static_cast<long>(padding);

  auto forward_batches = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        double* oplane = out.data() + ((b * cout + co) * oh) * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            const long y0 = static_cast<long>(oy * stride) - pad;
            const long x0 = static_cast<long>(ox * stride) - pad;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double* iplane = in + ((b * cin + ci) * h) * w;
              const double* kplane = ker + ((co * cin + ci) * kh) * kw;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const long iy = y0 + static_cast<long>(ky);
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const long ix = x0 + static_cast<long>(kx);
                  if (ix < 0 || ix >= static_cast<long>(w)) continue;
                  acc += iplane[iy * static_cast<long>(w) + ix] * kplane[ky * kw + kx];
                }
              }
            }
            oplane[oy * ow + ox] = acc;
          }
        }
      }
    }
  };
  if (batch > 1 && batch * cout * oh * ow * cin * kh * kw >= kParallelFlops) {
    parallel_for(0, batch, forward_batches);
  } else {
    forward_batches(0, batch);
  }

  auto backprop = [batch, cin, h, w, cout, kh, kw, oh, ow, stride,
                   pad](TensorNode& self) {
    TensorNode& pin = *self.parents[0];
    TensorNode& pker = *self.parents[1];
    const bool want_in = pin.wants_grad();
    const bool want_ker = pker.wants_grad();
    if (want_in) pin.ensure_grad();
    if (want_ker) pker.ensure_grad();
    if (!want_in && !want_ker) return;
    const double* gout = self.grad.data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        const double* gplane = gout + ((b * cout + co) * oh) * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double g = gplane[oy * ow + ox];
            if (g == 0.0) continue;
            const long y0 = static_cast<long>(oy * stride) - pad;
            const long x0 = static_cast<long>(ox * stride) - pad;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::size_t ibase = ((b * cin + ci) * h) * w;
              const std::size_t kbase = ((co * cin + ci) * kh) * kw;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const long iy = y0 + static_cast<long>(ky);
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const long ix = x0 + static_cast<long>(kx);
                  if (ix < 0 || ix >= static_cast<long>(w)) continue;
                  const std::size_t ii = ibase + static_cast<std::size_t>(iy) * w +
                                         static_cast<std::size_t>(ix);
                  const std::size_t ki = kbase + ky * kw + kx;
                  if (want_in) pin.grad[ii] += g * pker.data[ki];
                  if (want_ker) pker.grad[ki] += g * pin.data[ii];
                }
              }
            }
          }
        }
      }
    }
  };
  return make_op({batch, cout, oh, ow}, std::move(out),
                 {input.node(), kernels.node()}, backprop);
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu");
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  auto backprop = [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.data[i] > 0.0) p.grad[i] += self.grad[i];
    }
  };
  return make_op(x.shape(), std::move(out), {x.node()}, backprop);
}

Tensor softmax(const Tensor& logits) {
  check_defined(logits, "softmax");
  check_rows_2d(logits, "softmax");
  const std::size_t rows = logits.shape()[0];
  const std::size_t cols = logits.shape()[1];
  if (cols < 2) {
    throw ContractError("softmax requires at least 2 classes, got " +
                        std::to_string(cols));
  }
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    softmax_row(logits.values().data() + i * cols, out.data() + i * cols, cols);
  }
  auto backprop = [rows, cols](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* s = self.data.data() + i * cols;
      const double* g = self.grad.data() + i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[j] * s[j];
      double* pg = p.grad.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) pg[j] += s[j] * (g[j] - dot);
    }
  };
  return make_op(logits.shape(), std::move(out), {logits.node()}, backprop);
}

Tensor log_softmax(const Tensor& logits) {
  check_defined(logits, "log_softmax");
  check_rows_2d(logits, "log_softmax");
  const std::size_t rows = logits.shape()[0];
  const std::size_t cols = logits.shape()[1];
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    log_softmax_row(logits.values().data() + i * cols, out.data() + i * cols, cols);
  }
  auto backprop = [rows, cols](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* lsm = self.data.data() + i * cols;
      const double* g = self.grad.data() + i * cols;
      double gsum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gsum += g[j];
      double* pg = p.grad.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) pg[j] += g[j] - std::exp(lsm[j]) * gsum;
    }
  };
  return make_op(logits.shape(), std::move(out), {logits.node()}, backprop);
}

namespace {

Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name,
                          double (*fwd)(double, double),
                          void (*bwd)(TensorNode&, TensorNode&, TensorNode&)) {
  check_defined(a, name);
  check_defined(b, name);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  auto backprop = [bwd](TensorNode& self) {
    bwd(self, *self.parents[0], *self.parents[1]);
  };
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, backprop);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](TensorNode& self, TensorNode& pa, TensorNode& pb) {
        if (pa.wants_grad()) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.wants_grad()) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](TensorNode& self, TensorNode& pa, TensorNode& pb) {
        if (pa.wants_grad()) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.wants_grad()) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](TensorNode& self, TensorNode& pa, TensorNode& pb) {
        if (pa.wants_grad()) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * pb.data[i];
        }
        if (pb.wants_grad()) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] += self.grad[i] * pa.data[i];
        }
      });
}

Tensor scale(const Tensor& x, double factor) {
  check_defined(x, "scale");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  auto backprop = [factor](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * factor;
  };
  return make_op(x.shape(), std::move(out), {x.node()}, backprop);
}

Tensor add_row_bias(const Tensor& matrix, const Tensor& bias) {
  check_defined(matrix, "add_row_bias");
  check_defined(bias, "add_row_bias");
  check_rows_2d(matrix, "add_row_bias");
  const std::size_t rows = matrix.shape()[0];
  const std::size_t cols = matrix.shape()[1];
  if (bias.size() != cols) {
    throw DimensionError("add_row_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match matrix " + shape_to_string(matrix.shape()));
  }
  std::vector<double> out(rows * cols);
  const auto mv = matrix.values();
  const auto bv = bias.values();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = mv[i * cols + j] + bv[j];
  }
  auto backprop = [rows, cols](TensorNode& self) {
    TensorNode& pm = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pm.wants_grad()) {
      pm.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
    }
    if (pb.wants_grad()) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) pb.grad[j] += self.grad[i * cols + j];
      }
    }
  };
  return make_op(matrix.shape(), std::move(out), {matrix.node(), bias.node()},
                 backprop);
}

Tensor add_channel_bias(const Tensor& maps, const Tensor& bias) {
  check_defined(maps, "add_channel_bias");
  check_defined(bias, "add_channel_bias");
  if (maps.shape().size() != 4) {
    throw DimensionError("add_channel_bias expects a 4-D tensor, got " +
                         shape_to_string(maps.shape()));
  }
  const std::size_t batch = maps.shape()[0];
  const std::size_t ch = maps.shape()[1];
  const std::size_t plane = maps.shape()[2] * maps.shape()[3];
  if (bias.size() != ch) {
    throw DimensionError("add_channel_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match maps " + shape_to_string(maps.shape()));
  }
  std::vector<double> out(maps.size());
  const auto mv = maps.values();
  const auto bv = bias.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = mv[base + i] + bv[c];
    }
  }
  auto backprop = [batch, ch, plane](TensorNode& self) {
    TensorNode& pm = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pm.wants_grad()) {
      pm.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
    }
    if (pb.wants_grad()) {
      pb.ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t base = (b * ch + c) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += self.grad[base + i];
          pb.grad[c] += acc;
        }
      }
    }
  };
  return make_op(maps.shape(), std::move(out), {maps.node(), bias.node()}, backprop);
}

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto backprop = [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  };
  return make_op({1}, {total}, {x.node()}, backprop);
}

Tensor mean(const Tensor& x) {
  check_defined(x, "mean");
  if (x.size() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor avg_pool2(const Tensor& x) {
  check_defined(x, "avg_pool2");
  if (x.shape().size() != 4) {
    throw DimensionError("avg_pool2 expects a 4-D tensor, got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t ch = x.shape()[1];
  const std::size_t h = x.shape()[2];
  const std::size_t w = x.shape()[3];
  if (h < 2 || w < 2) {
    throw DimensionError("avg_pool2 requires spatial dims >= 2, got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  std::vector<double> out(batch * ch * oh * ow);
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t ibase = (b * ch + c) * h * w;
      const std::size_t obase = (b * ch + c) * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t iy = oy * 2;
          const std::size_t ix = ox * 2;
          out[obase + oy * ow + ox] =
              0.25 * (xv[ibase + iy * w + ix] + xv[ibase + iy * w + ix + 1] +
                      xv[ibase + (iy + 1) * w + ix] + xv[ibase + (iy + 1) * w + ix + 1]);
        }
      }
    }
  }
  auto backprop = [batch, ch, h, w, oh, ow](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t ibase = (b * ch + c) * h * w;
        const std::size_t obase = (b * ch + c) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double g = 0.25 * self.grad[obase + oy * ow + ox];
            const std::size_t iy = oy * 2;
            const std::size_t ix = ox * 2;
            p.grad[ibase + iy * w + ix] += g;
            p.grad[ibase + iy * w + ix + 1] += g;
            p.grad[ibase + (iy + 1) * w + ix] += g;
            p.grad[ibase + (iy + 1) * w + ix + 1] += g;
          }
        }
      }
    }
  };
  return make_op({batch, ch, oh, ow}, std::move(out), {x.node()}, backprop);
}

Tensor reshape(const Tensor& x, Shape target) {
  check_defined(x, "reshape");
  if (shape_size(target) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) +
                         " as " + shape_to_string(target));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto backprop = [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  };
  return make_op(std::move(target), std::move(out), {x.node()}, backprop);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_defined(logits, "cross_entropy");
  check_rows_2d(logits, "cross_entropy");
  const std::size_t rows = logits.shape()[0];
  const std::size_t cols = logits.shape()[1];
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
  }
  std::vector<double> probs(rows * cols);
  std::vector<double> lsm(cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= cols) {
      throw ContractError("cross_entropy: label " + std::to_string(label) +
                          " out of range for " + std::to_string(cols) + " classes");
    }
    log_softmax_row(logits.values().data() + i * cols, lsm.data(), cols);
    loss -= lsm[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < cols; ++j) probs[i * cols + j] = std::exp(lsm[j]);
  }
  loss /= static_cast<double>(rows);

  std::vector<int> owned_labels(labels.begin(), labels.end());
  auto backprop = [rows, cols, probs = std::move(probs),
                   owned_labels = std::move(owned_labels)](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    const double g = self.grad[0] / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      double* pg = p.grad.data() + i * cols;
      const double* pr = probs.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) pg[j] += g * pr[j];
      pg[static_cast<std::size_t>(owned_labels[i])] -= g;
    }
  };
  return make_op({1}, {loss}, {logits.node()}, backprop);
}

Tensor confidence_gap_mean(const Tensor& logits, std::span<const int> top1,
                           std::span<const int> top2,
                           std::span<const double> inv_norms) {
  check_defined(logits, "confidence_gap_mean");
  check_rows_2d(logits, "confidence_gap_mean");
  const std::size_t rows = logits.shape()[0];
  const std::size_t cols = logits.shape()[1];
  if (top1.size() != rows || top2.size() != rows || inv_norms.size() != rows) {
    throw DimensionError("confidence_gap_mean: index or norm arrays do not match " +
                         std::to_string(rows) + " rows");
  }
  std::vector<double> probs(rows * cols);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const int a = top1[i];
    const int b = top2[i];
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= cols ||
        static_cast<std::size_t>(b) >= cols) {
      throw ContractError("confidence_gap_mean: class index out of range");
    }
    softmax_row(logits.values().data() + i * cols, probs.data() + i * cols, cols);
    total += (probs[i * cols + static_cast<std::size_t>(a)] -
              probs[i * cols + static_cast<std::size_t>(b)]) *
             inv_norms[i];
  }
  total /= static_cast<double>(rows);

  std::vector<int> t1(top1.begin(), top1.end());
  std::vector<int> t2(top2.begin(), top2.end());
  std::vector<double> inv(inv_norms.begin(), inv_norms.end());
  auto backprop = [rows, cols, probs = std::move(probs), t1 = std::move(t1),
                   t2 = std::move(t2), inv = std::move(inv)](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    const double g = self.grad[0] / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t a = static_cast<std::size_t>(t1[i]);
      const std::size_t b = static_cast<std::size_t>(t2[i]);
      const double* pr = probs.data() + i * cols;
      double* pg = p.grad.data() + i * cols;
      const double c = g * inv[i];
      const double pa = pr[a];
      const double pb = pr[b];
      // d(p_a - p_b)/dlogit_j through the softmax with a, b held fixed.
      for (std::size_t j = 0; j < cols; ++j) pg[j] -= c * (pa - pb) * pr[j];
      pg[a] += c * pa;
      pg[b] -= c * pb;
    }
  };
  return make_op({1}, {total}, {logits.node()}, backprop);
}

Tensor logit_margin(const Tensor& logits, std::size_t row, std::size_t pos,
                    std::size_t neg) {
  check_defined(logits, "logit_margin");
  check_rows_2d(logits, "logit_margin");
  const std::size_t rows = logits.shape()[0];
  const std::size_t cols = logits.shape()[1];
  if (row >= rows || pos >= cols || neg >= cols) {
    throw ContractError("logit_margin: index out of range for " +
                        shape_to_string(logits.shape()));
  }
  const double value =
      logits.values()[row * cols + pos] - logits.values()[row * cols + neg];
  auto backprop = [row, cols, pos, neg](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.wants_grad()) return;
    p.ensure_grad();
    p.grad[row * cols + pos] += self.grad[0];
    p.grad[row * cols + neg] -= self.grad[0];
  };
  return make_op({1}, {value}, {logits.node()}, backprop);
}

}  // namespace bvq
