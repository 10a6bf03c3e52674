#pragma once

// Differentiable primitives. Every 1D op with a kernel uses stride 1 and
// "same" zero padding of floor((k-1)/2) on the left and ceil((k-1)/2) on the
// right, so temporal length is preserved for every k.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mstar/numerics/gemm.hpp"
#include "mstar/numerics/tensor.hpp"

namespace mstar {

struct BatchNormState {
  Array running_mean;
  Array running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels, double momentum_ = 0.1, double eps_ = 1e-5)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0), momentum(momentum_), eps(eps_) {}
};

namespace ops {

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

inline std::string shapes(const Tensor& a) { return shape_str(a.shape()); }
inline std::string shapes(const Tensor& a, const Tensor& b) {
  return shape_str(a.shape()) + " and " + shape_str(b.shape());
}

inline double* gbuf(TensorNode* n) { return n->requires_grad ? n->grad_buffer().data() : nullptr; }

template <class F>
Tensor unary(const char* name, const Tensor& x, F&& f, std::function<double(double, double)> dfdx_from_xy) {
  const auto& xv = x.value();
  Array y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  TensorNode* xn = x.node();
  auto saved = std::make_shared<Array>(y);
  return record_op(name, std::move(y), {x}, [xn, saved, d = std::move(dfdx_from_xy)](const Array& g) {
    double* gx = gbuf(xn);
    if (!gx) return;
    const auto& xv = xn->value;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], (*saved)[i]);
  });
}

inline std::size_t pad_left(std::size_t k) { return (k - 1) / 2; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "add", "shape mismatch " + detail::shapes(a, b));
  Array y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  TensorNode *an = a.node(), *bn = b.node();
  return record_op("add", std::move(y), {a, b}, [an, bn](const Array& g) {
    if (double* ga = detail::gbuf(an))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = detail::gbuf(bn))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

// Sum of any number of equally shaped tensors.
inline Tensor add_n(const std::vector<Tensor>& xs) {
  detail::require(!xs.empty(), "add_n", "no inputs");
  if (xs.size() == 1) return xs.front();
  Array y(xs.front().shape());
  std::vector<TensorNode*> nodes;
  for (const auto& x : xs) {
    detail::require(x.shape() == y.shape(), "add_n", "shape mismatch " + detail::shapes(xs.front(), x));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x.value()[i];
    nodes.push_back(x.node());
  }
  return record_op("add_n", std::move(y), xs, [nodes](const Array& g) {
    for (auto* n : nodes)
      if (double* gn = detail::gbuf(n))
        for (std::size_t i = 0; i < g.size(); ++i) gn[i] += g[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "sub", "shape mismatch " + detail::shapes(a, b));
  Array y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
  TensorNode *an = a.node(), *bn = b.node();
  return record_op("sub", std::move(y), {a, b}, [an, bn](const Array& g) {
    if (double* ga = detail::gbuf(an))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = detail::gbuf(bn))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul", "shape mismatch " + detail::shapes(a, b));
  Array y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  TensorNode *an = a.node(), *bn = b.node();
  return record_op("mul", std::move(y), {a, b}, [an, bn](const Array& g) {
    if (double* ga = detail::gbuf(an))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
    if (double* gb = detail::gbuf(bn))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
  });
}

inline Tensor scale(const Tensor& x, double c) {
  Array y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = c * x.value()[i];
  TensorNode* xn = x.node();
  return record_op("scale", std::move(y), {x}, [xn, c](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

// x * (offset + s) for a one-element tensor s.
inline Tensor scale_by(const Tensor& x, const Tensor& s, double offset = 0.0) {
  detail::require(s.size() == 1, "scale_by", "scale must have one element, got " + detail::shapes(s));
  const double f = offset + s.value()[0];
  Array y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f * x.value()[i];
  TensorNode *xn = x.node(), *sn = s.node();
  return record_op("scale_by", std::move(y), {x, s}, [xn, sn, f](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += f * g[i];
    if (double* gs = detail::gbuf(sn)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xn->value[i];
      gs[0] += acc;
    }
  });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.01) {
  return detail::unary(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  TensorNode* xn = x.node();
  return record_op("sum", Array::scalar(s), {x}, [xn](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g[0];
  });
}

inline Tensor mean(const Tensor& x) {
  detail::require(x.size() > 0, "mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::require(shape_size(shape) == x.size(), "reshape", detail::shapes(x) + " -> " + shape_str(shape));
  TensorNode* xn = x.node();
  return record_op("reshape", x.value().reshaped(std::move(shape)), {x}, [xn](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const auto& in = x.shape();
  const std::size_t r = in.size();
  detail::require(perm.size() == r, "permute", "permutation rank does not match " + detail::shapes(x));
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t d = r; d-- > 1;) in_strides[d - 1] = in_strides[d] * in[d];
  std::vector<bool> used(r, false);
  for (std::size_t d = 0; d < r; ++d) {
    detail::require(perm[d] < r && !used[perm[d]], "permute", "invalid permutation");
    used[perm[d]] = true;
    out_shape[d] = in[perm[d]];
  }
  // Source offset of every destination element, in destination order.
  auto src = std::make_shared<std::vector<std::size_t>>(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < x.size(); ++o) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_strides[perm[d]];
    (*src)[o] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  Array y(out_shape);
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = x.value()[(*src)[o]];
  TensorNode* xn = x.node();
  return record_op("permute", std::move(y), {x}, [xn, src](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t o = 0; o < g.size(); ++o) gx[(*src)[o]] += g[o];
  });
}

inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  detail::require(!xs.empty(), "concat", "no inputs");
  const Shape& s0 = xs.front().shape();
  detail::require(axis < s0.size(), "concat", "axis out of range for " + detail::shapes(xs.front()));
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  std::vector<std::size_t> lens;
  std::vector<TensorNode*> nodes;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
    detail::require(ok, "concat", "incompatible shapes " + detail::shapes(xs.front(), x));
    lens.push_back(s[axis]);
    total += s[axis];
    nodes.push_back(x.node());
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  Array y(out_shape);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto& v = xs[t].value();
    const std::size_t block = lens[t] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * block, block, y.data() + o * total * inner + offset * inner);
    offset += lens[t];
  }
  return record_op("concat", std::move(y), xs, [nodes, lens, outer, inner, total](const Array& g) {
    std::size_t offset = 0;
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      const std::size_t block = lens[t] * inner;
      if (double* gx = detail::gbuf(nodes[t]))
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * total * inner + offset * inner;
          for (std::size_t i = 0; i < block; ++i) gx[o * block + i] += src[i];
        }
      offset += lens[t];
    }
  });
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  detail::require(axis < s.size() && start + length <= s[axis], "slice",
                  "range out of bounds for " + detail::shapes(x));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  Array y(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.value().data() + (o * full + start) * inner, length * inner, y.data() + o * length * inner);
  TensorNode* xn = x.node();
  return record_op("slice", std::move(y), {x}, [xn, outer, inner, full, start, length](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < length * inner; ++i) gx[(o * full + start) * inner + i] += g[o * length * inner + i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul",
                  "incompatible shapes " + detail::shapes(a, b));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array y(Shape{m, n});
  kernels::gemm(false, false, m, n, k, a.value().data(), b.value().data(), y.data(), false);
  TensorNode *an = a.node(), *bn = b.node();
  return record_op("matmul", std::move(y), {a, b}, [an, bn, m, n, k](const Array& g) {
    if (double* ga = detail::gbuf(an)) kernels::gemm(false, true, m, k, n, g.data(), bn->value.data(), ga, true);
    if (double* gb = detail::gbuf(bn)) kernels::gemm(true, false, k, n, m, an->value.data(), g.data(), gb, true);
  });
}

// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1), "bmm",
                  "incompatible shapes " + detail::shapes(a, b));
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Array y(Shape{B, m, n});
  for (std::size_t s = 0; s < B; ++s)
    kernels::gemm(false, false, m, n, k, a.value().data() + s * m * k, b.value().data() + s * k * n,
                  y.data() + s * m * n, false);
  TensorNode *an = a.node(), *bn = b.node();
  return record_op("bmm", std::move(y), {a, b}, [an, bn, B, m, n, k](const Array& g) {
    double* ga = detail::gbuf(an);
    double* gb = detail::gbuf(bn);
    for (std::size_t s = 0; s < B; ++s) {
      if (ga) kernels::gemm(false, true, m, k, n, g.data() + s * m * n, bn->value.data() + s * k * n, ga + s * m * k, true);
      if (gb) kernels::gemm(true, false, k, n, m, an->value.data() + s * m * k, g.data() + s * m * n, gb + s * k * n, true);
    }
  });
}

// Per-sample Gram matrix: [B,m,d] -> [B,m,m], X X^T.
inline Tensor gram(const Tensor& x) {
  detail::require(x.rank() == 3, "gram", "expected [B,m,d], got " + detail::shapes(x));
  const std::size_t B = x.dim(0), m = x.dim(1), d = x.dim(2);
  Array y(Shape{B, m, m});
  for (std::size_t s = 0; s < B; ++s) {
    const double* xs = x.value().data() + s * m * d;
    kernels::gemm(false, true, m, m, d, xs, xs, y.data() + s * m * m, false);
  }
  TensorNode* xn = x.node();
  return record_op("gram", std::move(y), {x}, [xn, B, m, d](const Array& g) {
    double* gx = detail::gbuf(xn);
    if (!gx) return;
    std::vector<double> sym(m * m);
    for (std::size_t s = 0; s < B; ++s) {
      const double* gs = g.data() + s * m * m;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) sym[i * m + j] = gs[i * m + j] + gs[j * m + i];
      kernels::gemm(false, false, m, d, m, sym.data(), xn->value.data() + s * m * d, gx + s * m * d, true);
    }
  });
}

// x [N,in], w [out,in], optional b [out] -> [N,out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1), "linear",
                  "incompatible shapes " + detail::shapes(x, w));
  const std::size_t N = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (b.defined()) detail::require(b.rank() == 1 && b.dim(0) == out, "linear", "bias shape " + detail::shapes(b));
  Array y(Shape{N, out});
  kernels::gemm(false, true, N, out, in, x.value().data(), w.value().data(), y.data(), false);
  if (b.defined())
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < out; ++o) y[n * out + o] += b.value()[o];
  TensorNode *xn = x.node(), *wn = w.node(), *bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return record_op("linear", std::move(y), inputs, [xn, wn, bn, N, in, out](const Array& g) {
    if (double* gx = detail::gbuf(xn)) kernels::gemm(false, false, N, in, out, g.data(), wn->value.data(), gx, true);
    if (double* gw = detail::gbuf(wn)) kernels::gemm(true, false, out, in, N, g.data(), xn->value.data(), gw, true);
    if (bn)
      if (double* gb = detail::gbuf(bn))
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < out; ++o) gb[o] += g[n * out + o];
  });
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + GEMM, stride 1, same padding)

// x [N,Cin,L], w [Cout,Cin,K], optional b [Cout] -> [N,Cout,L].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  detail::require(x.rank() == 3 && w.rank() == 3 && x.dim(1) == w.dim(1), "conv1d",
                  "incompatible input/weight shapes " + detail::shapes(x, w));
  const std::size_t N = x.dim(0), Cin = x.dim(1), L = x.dim(2), Cout = w.dim(0), K = w.dim(2);
  detail::require(K >= 1, "conv1d", "kernel size must be >= 1");
  if (b.defined()) detail::require(b.rank() == 1 && b.dim(0) == Cout, "conv1d", "bias shape " + detail::shapes(b));
  const std::size_t pl = detail::pad_left(K), rows = Cin * K, cols = N * L;
  auto col = std::make_shared<std::vector<double>>(rows * cols, 0.0);
  const double* xv = x.value().data();
  for (std::size_t ci = 0; ci < Cin; ++ci)
    for (std::size_t kk = 0; kk < K; ++kk) {
      double* row = col->data() + (ci * K + kk) * cols;
      for (std::size_t n = 0; n < N; ++n) {
        const double* xs = xv + (n * Cin + ci) * L;
        double* dst = row + n * L;
        // position t reads x[t + kk - pl]
        const long shift = static_cast<long>(kk) - static_cast<long>(pl);
        const long lo = std::max<long>(0, -shift), hi = std::min<long>(static_cast<long>(L), static_cast<long>(L) - shift);
        for (long t = lo; t < hi; ++t) dst[t] = xs[t + shift];
      }
    }
  std::vector<double> prod(Cout * cols);
  kernels::gemm(false, false, Cout, cols, rows, w.value().data(), col->data(), prod.data(), false);
  Array y(Shape{N, Cout, L});
  for (std::size_t co = 0; co < Cout; ++co) {
    const double bias = b.defined() ? b.value()[co] : 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < L; ++t) y[(n * Cout + co) * L + t] = prod[co * cols + n * L + t] + bias;
  }
  TensorNode *xn = x.node(), *wn = w.node(), *bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return record_op("conv1d", std::move(y), inputs, [=](const Array& g) {
    std::vector<double> g2(Cout * cols);
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t n = 0; n < N; ++n)
        std::copy_n(g.data() + (n * Cout + co) * L, L, g2.data() + co * cols + n * L);
    if (double* gw = detail::gbuf(wn)) kernels::gemm(false, true, Cout, rows, cols, g2.data(), col->data(), gw, true);
    if (bn)
      if (double* gb = detail::gbuf(bn))
        for (std::size_t co = 0; co < Cout; ++co) {
          double s = 0.0;
          for (std::size_t i = 0; i < cols; ++i) s += g2[co * cols + i];
          gb[co] += s;
        }
    if (double* gx = detail::gbuf(xn)) {
      std::vector<double> dcol(rows * cols);
      kernels::gemm(true, false, rows, cols, Cout, wn->value.data(), g2.data(), dcol.data(), false);
      for (std::size_t ci = 0; ci < Cin; ++ci)
        for (std::size_t kk = 0; kk < K; ++kk) {
          const double* row = dcol.data() + (ci * K + kk) * cols;
          const long shift = static_cast<long>(kk) - static_cast<long>(pl);
          const long lo = std::max<long>(0, -shift), hi = std::min<long>(static_cast<long>(L), static_cast<long>(L) - shift);
          for (std::size_t n = 0; n < N; ++n) {
            double* gxs = gx + (n * Cin + ci) * L;
            const double* src = row + n * L;
            for (long t = lo; t < hi; ++t) gxs[t + shift] += src[t];
          }
        }
    }
  });
}

// x [N,Cin,H,W], w [Cout,Cin,KH,KW], optional b [Cout] -> [N,Cout,H,W].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  detail::require(x.rank() == 4 && w.rank() == 4 && x.dim(1) == w.dim(1), "conv2d",
                  "incompatible input/weight shapes " + detail::shapes(x, w));
  const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  if (b.defined()) detail::require(b.rank() == 1 && b.dim(0) == Cout, "conv2d", "bias shape " + detail::shapes(b));
  const std::size_t ph = detail::pad_left(KH), pw = detail::pad_left(KW);
  const std::size_t HW = H * W, rows = Cin * KH * KW, cols = N * HW;
  auto col = std::make_shared<std::vector<double>>(rows * cols, 0.0);
  // Flat map from (row, col) to source offset, -1 for padding; reused in backward.
  const double* xv = x.value().data();
  for (std::size_t ci = 0; ci < Cin; ++ci)
    for (std::size_t kh = 0; kh < KH; ++kh)
      for (std::size_t kw = 0; kw < KW; ++kw) {
        double* row = col->data() + ((ci * KH + kh) * KW + kw) * cols;
        const long dh = static_cast<long>(kh) - static_cast<long>(ph), dw = static_cast<long>(kw) - static_cast<long>(pw);
        for (std::size_t n = 0; n < N; ++n) {
          const double* xs = xv + (n * Cin + ci) * HW;
          for (long i = 0; i < static_cast<long>(H); ++i) {
            const long si = i + dh;
            if (si < 0 || si >= static_cast<long>(H)) continue;
            for (long j = 0; j < static_cast<long>(W); ++j) {
              const long sj = j + dw;
              if (sj < 0 || sj >= static_cast<long>(W)) continue;
              row[n * HW + static_cast<std::size_t>(i) * W + static_cast<std::size_t>(j)] =
                  xs[static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)];
            }
          }
        }
      }
  std::vector<double> prod(Cout * cols);
  kernels::gemm(false, false, Cout, cols, rows, w.value().data(), col->data(), prod.data(), false);
  Array y(Shape{N, Cout, H, W});
  for (std::size_t co = 0; co < Cout; ++co) {
    const double bias = b.defined() ? b.value()[co] : 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < HW; ++p) y[(n * Cout + co) * HW + p] = prod[co * cols + n * HW + p] + bias;
  }
  TensorNode *xn = x.node(), *wn = w.node(), *bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return record_op("conv2d", std::move(y), inputs, [=](const Array& g) {
    std::vector<double> g2(Cout * cols);
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t n = 0; n < N; ++n) std::copy_n(g.data() + (n * Cout + co) * HW, HW, g2.data() + co * cols + n * HW);
    if (double* gw = detail::gbuf(wn)) kernels::gemm(false, true, Cout, rows, cols, g2.data(), col->data(), gw, true);
    if (bn)
      if (double* gb = detail::gbuf(bn))
        for (std::size_t co = 0; co < Cout; ++co) {
          double s = 0.0;
          for (std::size_t i = 0; i < cols; ++i) s += g2[co * cols + i];
          gb[co] += s;
        }
    if (double* gx = detail::gbuf(xn)) {
      std::vector<double> dcol(rows * cols);
      kernels::gemm(true, false, rows, cols, Cout, wn->value.data(), g2.data(), dcol.data(), false);
      for (std::size_t ci = 0; ci < Cin; ++ci)
        for (std::size_t kh = 0; kh < KH; ++kh)
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const double* row = dcol.data() + ((ci * KH + kh) * KW + kw) * cols;
            const long dh = static_cast<long>(kh) - static_cast<long>(ph), dw = static_cast<long>(kw) - static_cast<long>(pw);
            for (std::size_t n = 0; n < N; ++n) {
              double* gxs = gx + (n * Cin + ci) * HW;
              for (long i = 0; i < static_cast<long>(H); ++i) {
                const long si = i + dh;
                if (si < 0 || si >= static_cast<long>(H)) continue;
                for (long j = 0; j < static_cast<long>(W); ++j) {
                  const long sj = j + dw;
                  if (sj < 0 || sj >= static_cast<long>(W)) continue;
                  gxs[static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)] +=
                      row[n * HW + static_cast<std::size_t>(i) * W + static_cast<std::size_t>(j)];
                }
              }
            }
          }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation

// x [N,C,...]; statistics per channel over the batch and trailing dims.
// Training mode uses batch statistics and updates the running estimates;
// evaluation mode uses the running estimates.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                         bool training) {
  detail::require(x.rank() >= 2, "batch_norm", "expected [N,C,...], got " + detail::shapes(x));
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.size() / std::max<std::size_t>(1, N * C);
  detail::require(gamma.size() == C && beta.size() == C, "batch_norm",
                  "affine parameters do not match channels " + detail::shapes(x, gamma));
  detail::require(state.running_mean.size() == C, "batch_norm", "running statistics do not match channels");
  const std::size_t M = N * S;
  if (training) detail::require(M > 1, "batch_norm", "training mode needs more than one value per channel");
  std::vector<double> mean(C), invstd(C);
  const double* xv = x.value().data();
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < S; ++p) s += xv[(n * C + c) * S + p];
      const double mu = s / static_cast<double>(M);
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < S; ++p) {
          const double d = xv[(n * C + c) * S + p] - mu;
          v += d * d;
        }
      const double var = v / static_cast<double>(M);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + state.eps);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                             state.momentum * v / static_cast<double>(M - 1);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  auto xhat = std::make_shared<Array>(x.shape());
  Array y(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < S; ++p) {
        const std::size_t i = (n * C + c) * S + p;
        (*xhat)[i] = (xv[i] - mean[c]) * invstd[c];
        y[i] = gamma.value()[c] * (*xhat)[i] + beta.value()[c];
      }
  TensorNode *xn = x.node(), *gn = gamma.node(), *bn = beta.node();
  return record_op("batch_norm", std::move(y), {x, gamma, beta},
                   [xn, gn, bn, xhat, invstd, N, C, S, M, training](const Array& g) {
                     std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
                     for (std::size_t n = 0; n < N; ++n)
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t p = 0; p < S; ++p) {
                           const std::size_t i = (n * C + c) * S + p;
                           sum_g[c] += g[i];
                           sum_gx[c] += g[i] * (*xhat)[i];
                         }
                     if (double* gg = detail::gbuf(gn))
                       for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
                     if (double* gb = detail::gbuf(bn))
                       for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
                     double* gx = detail::gbuf(xn);
                     if (!gx) return;
                     const double inv_m = 1.0 / static_cast<double>(M);
                     for (std::size_t n = 0; n < N; ++n)
                       for (std::size_t c = 0; c < C; ++c) {
                         const double gam = gn->value[c];
                         for (std::size_t p = 0; p < S; ++p) {
                           const std::size_t i = (n * C + c) * S + p;
                           if (training)
                             gx[i] += gam * invstd[c] * (g[i] - inv_m * sum_g[c] - (*xhat)[i] * inv_m * sum_gx[c]);
                           else
                             gx[i] += gam * invstd[c] * g[i];
                         }
                       }
                   });
}

// ---------------------------------------------------------------------------
// Pooling

// Stride-1 max pooling over the last axis of [N,C,L]; padding never wins.
inline Tensor max_pool1d(const Tensor& x, std::size_t k) {
  detail::require(x.rank() == 3 && k >= 1, "max_pool1d", "expected [N,C,L] and k >= 1, got " + detail::shapes(x));
  const std::size_t rowsN = x.dim(0) * x.dim(1), L = x.dim(2), pl = detail::pad_left(k);
  Array y(x.shape());
  auto arg = std::make_shared<std::vector<std::size_t>>(x.size());
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < rowsN; ++r)
    for (std::size_t t = 0; t < L; ++t) {
      const long lo = std::max<long>(0, static_cast<long>(t) - static_cast<long>(pl));
      const long hi = std::min<long>(static_cast<long>(L) - 1, static_cast<long>(t) - static_cast<long>(pl) + static_cast<long>(k) - 1);
      std::size_t best = static_cast<std::size_t>(lo);
      for (long s = lo; s <= hi; ++s)
        if (xv[r * L + static_cast<std::size_t>(s)] > xv[r * L + best]) best = static_cast<std::size_t>(s);
      y[r * L + t] = xv[r * L + best];
      (*arg)[r * L + t] = r * L + best;
    }
  TensorNode* xn = x.node();
  return record_op("max_pool1d", std::move(y), {x}, [xn, arg](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
  });
}

// Stride-1 average pooling; zero padding counts toward the k divisor.
inline Tensor avg_pool1d(const Tensor& x, std::size_t k) {
  detail::require(x.rank() == 3 && k >= 1, "avg_pool1d", "expected [N,C,L] and k >= 1, got " + detail::shapes(x));
  const std::size_t rowsN = x.dim(0) * x.dim(1), L = x.dim(2), pl = detail::pad_left(k);
  const double inv = 1.0 / static_cast<double>(k);
  Array y(x.shape());
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < rowsN; ++r)
    for (std::size_t t = 0; t < L; ++t) {
      const long lo = std::max<long>(0, static_cast<long>(t) - static_cast<long>(pl));
      const long hi = std::min<long>(static_cast<long>(L) - 1, static_cast<long>(t) - static_cast<long>(pl) + static_cast<long>(k) - 1);
      double s = 0.0;
      for (long q = lo; q <= hi; ++q) s += xv[r * L + static_cast<std::size_t>(q)];
      y[r * L + t] = s * inv;
    }
  TensorNode* xn = x.node();
  return record_op("avg_pool1d", std::move(y), {x}, [xn, rowsN, L, pl, k, inv](const Array& g) {
    double* gx = detail::gbuf(xn);
    if (!gx) return;
    for (std::size_t r = 0; r < rowsN; ++r)
      for (std::size_t t = 0; t < L; ++t) {
        const long lo = std::max<long>(0, static_cast<long>(t) - static_cast<long>(pl));
        const long hi = std::min<long>(static_cast<long>(L) - 1, static_cast<long>(t) - static_cast<long>(pl) + static_cast<long>(k) - 1);
        for (long q = lo; q <= hi; ++q) gx[r * L + static_cast<std::size_t>(q)] += g[r * L + t] * inv;
      }
  });
}

// [N,C,...] -> [N,C]
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require(x.rank() >= 3, "global_avg_pool", "expected [N,C,...], got " + detail::shapes(x));
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.size() / (N * C);
  Array y(Shape{N, C});
  for (std::size_t r = 0; r < N * C; ++r) {
    double s = 0.0;
    for (std::size_t p = 0; p < S; ++p) s += x.value()[r * S + p];
    y[r] = s / static_cast<double>(S);
  }
  TensorNode* xn = x.node();
  return record_op("global_avg_pool", std::move(y), {x}, [xn, N, C, S](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t r = 0; r < N * C; ++r)
        for (std::size_t p = 0; p < S; ++p) gx[r * S + p] += g[r] / static_cast<double>(S);
  });
}

inline Tensor global_max_pool(const Tensor& x) {
  detail::require(x.rank() >= 3, "global_max_pool", "expected [N,C,...], got " + detail::shapes(x));
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.size() / (N * C);
  Array y(Shape{N, C});
  auto arg = std::make_shared<std::vector<std::size_t>>(N * C);
  for (std::size_t r = 0; r < N * C; ++r) {
    std::size_t best = r * S;
    for (std::size_t p = 1; p < S; ++p)
      if (x.value()[r * S + p] > x.value()[best]) best = r * S + p;
    y[r] = x.value()[best];
    (*arg)[r] = best;
  }
  TensorNode* xn = x.node();
  return record_op("global_max_pool", std::move(y), {x}, [xn, arg](const Array& g) {
    if (double* gx = detail::gbuf(xn))
      for (std::size_t r = 0; r < g.size(); ++r) gx[(*arg)[r]] += g[r];
  });
}

}  // namespace ops
}  // namespace mstar
