#include <cmath>

#include "harmony/autodiff.hpp"

namespace harmony::ad {

namespace {

using Grads = std::span<Tensor* const>;

Tape& tape_of(const Var& v, const char* op) {
  if (!v.tape()) throw ContractError(std::string(op) + ": unattached Var");
  return *v.tape();
}

void same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() != b.tape()) {
    throw ContractError(std::string(op) + ": operands on different tapes");
  }
}

// One operand may carry a single channel that is replicated over the other's.
struct Broadcast {
  Shape out;
  bool a_single = false;
  bool b_single = false;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {a};
  const std::string ctx = std::string(op) + ": " + a.str() + " vs " + b.str();
  if (a.n != b.n) throw DimensionError("batch", ctx);
  if (a.h != b.h) throw DimensionError("height", ctx);
  if (a.w != b.w) throw DimensionError("width", ctx);
  if (b.c == 1) return {a, false, true};
  if (a.c == 1) return {b, true, false};
  throw DimensionError("channels", ctx + " (only single-channel broadcast)");
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const Broadcast& bc, F f) {
  Tensor out(bc.out);
  const Shape& s = bc.out;
  const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(s.plane());
  const int planes = s.n * s.c;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const int n = pl / s.c;
    const Real* pa = a.ptr() + (bc.a_single ? n : pl) * P;
    const Real* pb = b.ptr() + (bc.b_single ? n : pl) * P;
    Real* po = out.ptr() + pl * P;
    for (std::ptrdiff_t i = 0; i < P; ++i) po[i] = f(pa[i], pb[i]);
  }
  return out;
}

// dst += grad_out (* factor), summed over channels in ascending order when the
// destination is a broadcast single-channel operand.
void accumulate(const Tensor& grad_out, const Tensor* factor,
                bool factor_single, bool dst_single, Tensor& dst) {
  const Shape& s = grad_out.shape();
  const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(s.plane());
  auto fac = [&](int pl, int n) -> const Real* {
    return factor ? factor->ptr() + (factor_single ? n : pl) * P : nullptr;
  };
  if (!dst_single) {
    const int planes = s.n * s.c;
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
      const Real* g = grad_out.ptr() + pl * P;
      const Real* f = fac(pl, pl / s.c);
      Real* d = dst.ptr() + pl * P;
      if (f) {
        for (std::ptrdiff_t i = 0; i < P; ++i) d[i] += g[i] * f[i];
      } else {
        for (std::ptrdiff_t i = 0; i < P; ++i) d[i] += g[i];
      }
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (int n = 0; n < s.n; ++n) {
    Real* d = dst.ptr() + n * P;
    for (std::ptrdiff_t i = 0; i < P; ++i) {
      Real acc = 0;
      for (int c = 0; c < s.c; ++c) {
        const int pl = n * s.c + c;
        const Real g = grad_out.ptr()[pl * P + i];
        const Real* f = fac(pl, n);
        acc += f ? g * f[i] : g;
      }
      d[i] += acc;
    }
  }
}

Real sigmoid_scalar(Real x) {
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1 + e);
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const Var& bias,
           kernels::ConvGeometry geometry) {
  Tape& t = tape_of(input, "conv2d");
  same_tape(input, weight, "conv2d");
  same_tape(input, bias, "conv2d");
  const Tensor* x = &input.value();
  const Tensor* w = &weight.value();
  Tensor out = kernels::conv2d_forward(*x, *w, bias.value(), geometry);
  return t.record(std::move(out), {input, weight, bias},
                  [x, w, geometry](const Tensor&, const Tensor& g, Grads d) {
                    kernels::conv2d_backward(*x, *w, g, geometry, d[0], d[1],
                                             d[2]);
                  });
}

Var upsample_nearest(const Var& input, int factor) {
  Tape& t = tape_of(input, "upsample_nearest");
  Tensor out = kernels::upsample_nearest_forward(input.value(), factor);
  return t.record(std::move(out), {input},
                  [factor](const Tensor&, const Tensor& g, Grads d) {
                    if (d[0]) kernels::upsample_nearest_backward(g, factor, *d[0]);
                  });
}

Var resize_nearest(const Var& input, int h, int w) {
  Tape& t = tape_of(input, "resize_nearest");
  if (h < 1 || w < 1) {
    throw ValidationError("resize_nearest: target size must be >= 1");
  }
  const Shape is = input.shape();
  if (is.h == h && is.w == w) {
    return t.record(input.value(), {input},
                    [](const Tensor&, const Tensor& g, Grads d) {
                      if (d[0]) d[0]->add_inplace(g);
                    });
  }
  if (h % is.h == 0 && w % is.w == 0 && h / is.h == w / is.w) {
    return upsample_nearest(input, h / is.h);
  }
  std::vector<int> ys(h), xs(w);
  for (int y = 0; y < h; ++y) ys[y] = static_cast<int>(static_cast<long>(y) * is.h / h);
  for (int x = 0; x < w; ++x) xs[x] = static_cast<int>(static_cast<long>(x) * is.w / w);
  const Shape os{is.n, is.c, h, w};
  Tensor out(os);
  const Tensor& in = input.value();
  for (int pl = 0; pl < is.n * is.c; ++pl) {
    const Real* src = in.ptr() + pl * is.plane();
    Real* dst = out.ptr() + pl * os.plane();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) dst[y * w + x] = src[ys[y] * is.w + xs[x]];
  }
  return t.record(std::move(out), {input},
                  [is, os, ys, xs](const Tensor&, const Tensor& g, Grads d) {
                    if (!d[0]) return;
                    for (int pl = 0; pl < is.n * is.c; ++pl) {
                      const Real* src = g.ptr() + pl * os.plane();
                      Real* dst = d[0]->ptr() + pl * is.plane();
                      for (int y = 0; y < os.h; ++y)
                        for (int x = 0; x < os.w; ++x)
                          dst[ys[y] * is.w + xs[x]] += src[y * os.w + x];
                    }
                  });
}

Var max_pool2d(const Var& input, int k, int stride) {
  Tape& t = tape_of(input, "max_pool2d");
  kernels::PoolResult r = kernels::max_pool2d_forward(input.value(), k, stride);
  return t.record(std::move(r.output), {input},
                  [argmax = std::move(r.argmax)](const Tensor&, const Tensor& g,
                                                 Grads d) {
                    if (d[0]) kernels::max_pool2d_backward(g, argmax, *d[0]);
                  });
}

Var activation(const Var& input, const Activation& a) {
  Tape& t = tape_of(input, "activation");
  if (a.kind == Activation::Kind::leaky_relu && !(a.alpha > 0 && a.alpha < 1)) {
    throw ValidationError("leaky_relu: alpha must lie in (0, 1)");
  }
  const Tensor* x = &input.value();
  Tensor out(x->shape());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x->size());
  const Real* px = x->ptr();
  Real* po = out.ptr();
  const Real alpha = a.alpha;
  switch (a.kind) {
    case Activation::Kind::relu:
#pragma omp parallel for simd schedule(static)
      for (std::ptrdiff_t i = 0; i < n; ++i) po[i] = px[i] > 0 ? px[i] : 0;
      return t.record(std::move(out), {input},
                      [x](const Tensor&, const Tensor& g, Grads d) {
                        if (!d[0]) return;
                        const Real* v = x->ptr();
                        Real* dst = d[0]->ptr();
                        for (std::size_t i = 0; i < g.size(); ++i)
                          if (v[i] > 0) dst[i] += g[i];
                      });
    case Activation::Kind::leaky_relu:
#pragma omp parallel for simd schedule(static)
      for (std::ptrdiff_t i = 0; i < n; ++i)
        po[i] = px[i] > 0 ? px[i] : alpha * px[i];
      return t.record(std::move(out), {input},
                      [x, alpha](const Tensor&, const Tensor& g, Grads d) {
                        if (!d[0]) return;
                        const Real* v = x->ptr();
                        Real* dst = d[0]->ptr();
                        const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(g.size());
#pragma omp parallel for simd schedule(static)
                        for (std::ptrdiff_t i = 0; i < m; ++i)
                          dst[i] += v[i] > 0 ? g[i] : alpha * g[i];
                      });
    case Activation::Kind::sigmoid:
      break;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) po[i] = sigmoid_scalar(px[i]);
  return t.record(std::move(out), {input},
                  [](const Tensor& y, const Tensor& g, Grads d) {
                    if (!d[0]) return;
                    Real* dst = d[0]->ptr();
                    for (std::size_t i = 0; i < g.size(); ++i)
                      dst[i] += g[i] * y[i] * (1 - y[i]);
                  });
}

Var concat_channels(const Var& a, const Var& b) {
  Tape& t = tape_of(a, "concat_channels");
  same_tape(a, b, "concat_channels");
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const std::string ctx = "concat_channels: " + sa.str() + " vs " + sb.str();
  if (sa.n != sb.n) throw DimensionError("batch", ctx);
  if (sa.h != sb.h) throw DimensionError("height", ctx);
  if (sa.w != sb.w) throw DimensionError("width", ctx);
  Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = sa.c * sa.plane();
  const std::size_t pb = sb.c * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().ptr() + n * pa, pa, out.ptr() + n * (pa + pb));
    std::copy_n(b.value().ptr() + n * pb, pb, out.ptr() + n * (pa + pb) + pa);
  }
  return t.record(std::move(out), {a, b},
                  [pa, pb, batch = sa.n](const Tensor&, const Tensor& g, Grads d) {
                    for (int n = 0; n < batch; ++n) {
                      const Real* src = g.ptr() + n * (pa + pb);
                      if (d[0]) {
                        Real* dst = d[0]->ptr() + n * pa;
                        for (std::size_t i = 0; i < pa; ++i) dst[i] += src[i];
                      }
                      if (d[1]) {
                        Real* dst = d[1]->ptr() + n * pb;
                        for (std::size_t i = 0; i < pb; ++i) dst[i] += src[pa + i];
                      }
                    }
                  });
}

Var slice_channels(const Var& input, int begin, int count) {
  Tape& t = tape_of(input, "slice_channels");
  const Shape s = input.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw DimensionError("channels", "slice_channels: [" +
                                         std::to_string(begin) + ", " +
                                         std::to_string(begin + count) +
                                         ") outside " + std::to_string(s.c) +
                                         " channels");
  }
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(input.value().ptr() + (n * s.c + begin) * plane, count * plane,
                out.ptr() + n * count * plane);
  }
  return t.record(std::move(out), {input},
                  [s, begin, count](const Tensor&, const Tensor& g, Grads d) {
                    if (!d[0]) return;
                    const std::size_t plane = s.plane();
                    for (int n = 0; n < s.n; ++n) {
                      Real* dst = d[0]->ptr() + (n * s.c + begin) * plane;
                      const Real* src = g.ptr() + n * count * plane;
                      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                    }
                  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, "add");
  same_tape(a, b, "add");
  const Broadcast bc = broadcast(a.shape(), b.shape(), "add");
  Tensor out = zip(a.value(), b.value(), bc, [](Real x, Real y) { return x + y; });
  return t.record(std::move(out), {a, b},
                  [bc](const Tensor&, const Tensor& g, Grads d) {
                    if (d[0]) accumulate(g, nullptr, false, bc.a_single, *d[0]);
                    if (d[1]) accumulate(g, nullptr, false, bc.b_single, *d[1]);
                  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, "mul");
  same_tape(a, b, "mul");
  const Broadcast bc = broadcast(a.shape(), b.shape(), "mul");
  const Tensor* va = &a.value();
  const Tensor* vb = &b.value();
  Tensor out = zip(*va, *vb, bc, [](Real x, Real y) { return x * y; });
  return t.record(std::move(out), {a, b},
                  [bc, va, vb](const Tensor&, const Tensor& g, Grads d) {
                    if (d[0]) accumulate(g, vb, bc.b_single, bc.a_single, *d[0]);
                    if (d[1]) accumulate(g, va, bc.a_single, bc.b_single, *d[1]);
                  });
}

Var scalar_affine(const Var& a, Real scale, Real shift) {
  Tape& t = tape_of(a, "scalar_affine");
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * x[i] + shift;
  return t.record(std::move(out), {a},
                  [scale](const Tensor&, const Tensor& g, Grads d) {
                    if (!d[0]) return;
                    Real* dst = d[0]->ptr();
                    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
                  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a, "sum");
  const Tensor& x = a.value();
  Real s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  return t.record(Tensor(Shape{}, s), {a},
                  [](const Tensor&, const Tensor& g, Grads d) {
                    if (!d[0]) return;
                    const Real go = g[0];
                    Real* dst = d[0]->ptr();
                    for (std::size_t i = 0; i < d[0]->size(); ++i) dst[i] += go;
                  });
}

}  // namespace harmony::ad
