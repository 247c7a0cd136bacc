#include <algorithm>
#include <cstring>
#include <optional>
#include <vector>

#include "harmony/kernels.hpp"

namespace harmony::kernels {

namespace {

struct ConvDims {
  int ic, ih, iw;
  int oc, kh, kw;
  int oh, ow;
  int stride, pad;
  std::ptrdiff_t K, P;

  ConvDims(const Shape& is, const Shape& ws, const Shape& os,
           const ConvGeometry& g)
      : ic(is.c), ih(is.h), iw(is.w), oc(ws.n), kh(ws.h), kw(ws.w),
        oh(os.h), ow(os.w), stride(g.stride), pad(g.padding),
        K(static_cast<std::ptrdiff_t>(is.c) * ws.h * ws.w),
        P(static_cast<std::ptrdiff_t>(os.h) * os.w) {}

  // A 1x1/stride-1/unpadded convolution reads its input directly as the
  // column matrix.
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad == 0;
  }

  // Output columns [lo, hi) whose source column is inside the image.
  void valid_x(int kx, int& lo, int& hi) const {
    lo = 0;
    while (lo < ow && lo * stride - pad + kx < 0) ++lo;
    hi = ow;
    while (hi > lo && (hi - 1) * stride - pad + kx >= iw) --hi;
  }
};

constexpr int kPanel = 16;

// The GEMMs below consume B one strip of kPanel columns at a time; a strip
// is materialized as K rows of kPanel values (zero past the last column).

// B[k][p] = src[k*rs + p*cs].
struct DenseStrips {
  const Real* src;
  std::ptrdiff_t rows, cols, rs, cs;

  void operator()(std::ptrdiff_t s, Real* panel) const {
    const std::ptrdiff_t c0 = s * kPanel;
    const int len = static_cast<int>(std::min<std::ptrdiff_t>(kPanel, cols - c0));
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      Real* row = panel + r * kPanel;
      for (int j = 0; j < len; ++j) row[j] = src[r * rs + (c0 + j) * cs];
      for (int j = len; j < kPanel; ++j) row[j] = 0;
    }
  }
};

// Column matrix col[k][p], k = (c*kh + ky)*kw + kx, p = oy*ow + ox.
struct ColStrips {
  const Real* in;
  const ConvDims* d;

  void operator()(std::ptrdiff_t s, Real* panel) const {
    int y0[kPanel], x0[kPanel];
    const std::ptrdiff_t p0 = s * kPanel;
    const int len = static_cast<int>(std::min<std::ptrdiff_t>(kPanel, d->P - p0));
    for (int j = 0; j < kPanel; ++j) {
      const std::ptrdiff_t p = p0 + std::min(j, len - 1);
      y0[j] = static_cast<int>(p / d->ow) * d->stride - d->pad;
      x0[j] = static_cast<int>(p % d->ow) * d->stride - d->pad;
    }
    const bool one_row = d->stride == 1 && len == kPanel && y0[0] == y0[kPanel - 1];
    for (std::ptrdiff_t k = 0; k < d->K; ++k) {
      const int c = static_cast<int>(k / (d->kh * d->kw));
      const int ky = static_cast<int>((k / d->kw) % d->kh);
      const int kx = static_cast<int>(k % d->kw);
      const Real* plane = in + static_cast<std::ptrdiff_t>(c) * d->ih * d->iw;
      Real* row = panel + k * kPanel;
      if (one_row) {
        const int iy = y0[0] + ky;
        const int ix = x0[0] + kx;
        if (iy < 0 || iy >= d->ih) {
          std::fill(row, row + kPanel, Real{0});
          continue;
        }
        const int lo = std::clamp(-ix, 0, kPanel);
        const int hi = std::clamp(d->iw - ix, lo, kPanel);
        std::fill(row, row + lo, Real{0});
        std::copy(plane + iy * d->iw + ix + lo, plane + iy * d->iw + ix + hi, row + lo);
        std::fill(row + hi, row + kPanel, Real{0});
        continue;
      }
      for (int j = 0; j < kPanel; ++j) {
        const int iy = y0[j] + ky;
        const int ix = x0[j] + kx;
        row[j] = (j < len && iy >= 0 && iy < d->ih && ix >= 0 && ix < d->iw)
            ? plane[iy * d->iw + ix] : Real{0};
      }
    }
  }
};

// Transposed column matrix row[p][k]; strips run over k.
struct RowStrips {
  const Real* in;
  const ConvDims* d;

  void operator()(std::ptrdiff_t s, Real* panel) const {
    std::ptrdiff_t off[kPanel];
    int ky[kPanel], kx[kPanel];
    const std::ptrdiff_t k0 = s * kPanel;
    const int len = static_cast<int>(std::min<std::ptrdiff_t>(kPanel, d->K - k0));
    for (int j = 0; j < len; ++j) {
      const std::ptrdiff_t k = k0 + j;
      const std::ptrdiff_t c = k / (d->kh * d->kw);
      ky[j] = static_cast<int>((k / d->kw) % d->kh);
      kx[j] = static_cast<int>(k % d->kw);
      off[j] = c * d->ih * d->iw;
    }
    Real* dst = panel;
    for (int oy = 0; oy < d->oh; ++oy) {
      for (int ox = 0; ox < d->ow; ++ox, dst += kPanel) {
        const int y = oy * d->stride - d->pad;
        const int x = ox * d->stride - d->pad;
        for (int j = 0; j < len; ++j) {
          const int iy = y + ky[j];
          const int ix = x + kx[j];
          dst[j] = (iy >= 0 && iy < d->ih && ix >= 0 && ix < d->iw)
              ? in[off[j] + iy * d->iw + ix] : Real{0};
        }
        for (int j = len; j < kPanel; ++j) dst[j] = 0;
      }
    }
  }
};

// R x kPanel block of C += A * panel, with A(m, k) = a[m*a_row + k*a_col].
template <int R>
void tile(std::ptrdiff_t K, const Real* a, std::ptrdiff_t a_row,
          std::ptrdiff_t a_col, const Real* panel, Real* c, std::ptrdiff_t ldc,
          int len) {
  Real acc[R][kPanel];
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < kPanel; ++j) acc[r][j] = j < len ? c[r * ldc + j] : 0;
  for (std::ptrdiff_t k = 0; k < K; ++k) {
    const Real* b = panel + k * kPanel;
    Real x[R];
    for (int r = 0; r < R; ++r) x[r] = a[r * a_row + k * a_col];
    for (int r = 0; r < R; ++r) {
#pragma omp simd
      for (int j = 0; j < kPanel; ++j) acc[r][j] += x[r] * b[j];
    }
  }
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < len; ++j) c[r * ldc + j] = acc[r][j];
}

// C[m][p] += sum_k A(m, k) * B[k][p]. Each C element starts from its
// current value and adds k in ascending order, independent of the tiling
// and thread count.
template <class Strips>
void gemm(int M, std::ptrdiff_t K, std::ptrdiff_t P, const Real* a,
          std::ptrdiff_t a_row, std::ptrdiff_t a_col, const Strips& strips,
          Real* C) {
  const std::ptrdiff_t count = (P + kPanel - 1) / kPanel;
#pragma omp parallel
  {
    std::vector<Real> panel(static_cast<std::size_t>(K) * kPanel);
#pragma omp for schedule(static)
    for (std::ptrdiff_t s = 0; s < count; ++s) {
      strips(s, panel.data());
      const std::ptrdiff_t p0 = s * kPanel;
      const int len = static_cast<int>(std::min<std::ptrdiff_t>(kPanel, P - p0));
      int m = 0;
      for (; m + 8 <= M; m += 8)
        tile<8>(K, a + m * a_row, a_row, a_col, panel.data(), C + m * P + p0, P, len);
      for (; m + 4 <= M; m += 4)
        tile<4>(K, a + m * a_row, a_row, a_col, panel.data(), C + m * P + p0, P, len);
      for (; m < M; ++m)
        tile<1>(K, a + m * a_row, a_row, a_col, panel.data(), C + m * P + p0, P, len);
    }
  }
}

// out[oc][p] += conv of one image, without bias.
void conv_accumulate(const Real* in, const Real* weight, const ConvDims& d,
                     Real* out) {
  if (d.pointwise()) {
    gemm(d.oc, d.K, d.P, weight, d.K, 1, DenseStrips{in, d.K, d.P, d.P, 1}, out);
  } else {
    gemm(d.oc, d.K, d.P, weight, d.K, 1, ColStrips{in, &d}, out);
  }
}

// Scatter-adds col[k][p] back into the input image layout.
void col2im_add(const Real* col, const ConvDims& d, Real* in) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < d.ic; ++c) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const std::ptrdiff_t k =
            (static_cast<std::ptrdiff_t>(c) * d.kh + ky) * d.kw + kx;
        int lo, hi;
        d.valid_x(kx, lo, hi);
        const Real* row = col + k * d.P;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.ih) continue;
          const Real* src = row + static_cast<std::ptrdiff_t>(oy) * d.ow;
          Real* dst = in + (static_cast<std::ptrdiff_t>(c) * d.ih + iy) * d.iw;
          if (d.stride == 1) {
            const int shift = kx - d.pad;
#pragma omp simd
            for (int ox = lo; ox < hi; ++ox) dst[ox + shift] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox)
              dst[ox * d.stride - d.pad + kx] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, const ConvGeometry& g) {
  const Shape os = conv2d_output_shape(input.shape(), weight.shape(), g);
  check_conv2d_bias(weight.shape(), bias.shape());
  const ConvDims d(input.shape(), weight.shape(), os, g);
  Tensor out(os);
  for (int n = 0; n < os.n; ++n) {
    Real* out_n = out.plane(n, 0);
    for (int oc = 0; oc < d.oc; ++oc) {
      std::fill(out_n + oc * d.P, out_n + (oc + 1) * d.P, bias[oc]);
    }
    conv_accumulate(input.plane(n, 0), weight.ptr(), d, out_n);
  }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight,
                     const Tensor& grad_out, const ConvGeometry& g,
                     Tensor* grad_input, Tensor* grad_weight,
                     Tensor* grad_bias) {
  const Shape os = conv2d_output_shape(input.shape(), weight.shape(), g);
  if (grad_out.shape() != os) {
    throw DimensionError("grad_out", "conv2d_backward: gradient shape " +
                                         grad_out.shape().str() +
                                         " != output shape " + os.str());
  }
  const ConvDims d(input.shape(), weight.shape(), os, g);

  if (grad_bias) {
    Real* gb = grad_bias->ptr();
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < d.oc; ++oc) {
      Real s = 0;
      for (int n = 0; n < os.n; ++n) {
        const Real* go = grad_out.plane(n, oc);
        for (std::ptrdiff_t p = 0; p < d.P; ++p) s += go[p];
      }
      gb[oc] += s;
    }
  }

  if (!grad_input && !grad_weight) return;

  // A stride-1 input gradient is a convolution of grad_out with the
  // flipped, channel-transposed kernel.
  const bool transposed_conv = d.stride == 1 && d.pad <= d.kh - 1 &&
                               d.pad <= d.kw - 1 && d.kh == d.kw;
  std::vector<Real> flipped;
  std::optional<ConvDims> td;
  if (grad_input && transposed_conv) {
    const Shape ts{d.ic, d.oc, d.kh, d.kw};
    flipped.resize(ts.numel());
    for (int o = 0; o < d.oc; ++o)
      for (int c = 0; c < d.ic; ++c)
        for (int y = 0; y < d.kh; ++y)
          for (int x = 0; x < d.kw; ++x)
            flipped[((static_cast<std::size_t>(c) * d.oc + o) * d.kh + y) * d.kw + x] =
                weight[((static_cast<std::size_t>(o) * d.ic + c) * d.kh + d.kh - 1 - y) * d.kw +
                       d.kw - 1 - x];
    td.emplace(Shape{1, d.oc, d.oh, d.ow}, ts, Shape{1, d.ic, d.ih, d.iw},
               ConvGeometry{1, d.kh - 1 - d.pad});
  }
  std::vector<Real> gcol(grad_input && !td ? static_cast<std::size_t>(d.K * d.P) : 0);

  for (int n = 0; n < os.n; ++n) {
    const Real* go_n = grad_out.plane(n, 0);
    const Real* in_n = input.plane(n, 0);

    if (grad_weight) {
      // gw[oc][k] += sum_p G[oc][p] * col[k][p]
      if (d.pointwise()) {
        gemm(d.oc, d.P, d.K, go_n, d.P, 1, DenseStrips{in_n, d.P, d.K, 1, d.P},
             grad_weight->ptr());
      } else {
        gemm(d.oc, d.P, d.K, go_n, d.P, 1, RowStrips{in_n, &d}, grad_weight->ptr());
      }
    }

    if (grad_input) {
      Real* gin = grad_input->plane(n, 0);
      if (td) {
        conv_accumulate(go_n, flipped.data(), *td, gin);
        continue;
      }
      std::fill(gcol.begin(), gcol.end(), Real{0});
      // gcol[k][p] = sum_oc W[oc][k] * G[oc][p]
      gemm(static_cast<int>(d.K), d.oc, d.P, weight.ptr(), 1, d.K,
           DenseStrips{go_n, d.oc, d.P, d.P, 1}, gcol.data());
      if (d.pointwise()) {
        const std::ptrdiff_t total = d.K * d.P;
#pragma omp parallel for simd schedule(static)
        for (std::ptrdiff_t i = 0; i < total; ++i) gin[i] += gcol[i];
      } else {
        col2im_add(gcol.data(), d, gin);
      }
    }
  }
}

Tensor upsample_nearest_forward(const Tensor& input, int factor) {
  if (factor < 1) {
    throw ValidationError("upsample_nearest: factor must be >= 1, got " +
                          std::to_string(factor));
  }
  const Shape& is = input.shape();
  Tensor out(Shape{is.n, is.c, is.h * factor, is.w * factor});
  const int ow = is.w * factor;
  const int planes = is.n * is.c;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const Real* src = input.ptr() + static_cast<std::size_t>(pl) * is.plane();
    Real* dst = out.ptr() + static_cast<std::size_t>(pl) * out.shape().plane();
    for (int y = 0; y < is.h; ++y) {
      Real* row = dst + static_cast<std::size_t>(y) * factor * ow;
      for (int x = 0; x < ow; ++x) row[x] = src[y * is.w + x / factor];
      for (int r = 1; r < factor; ++r) {
        std::memcpy(row + static_cast<std::size_t>(r) * ow, row,
                    sizeof(Real) * ow);
      }
    }
  }
  return out;
}

void upsample_nearest_backward(const Tensor& grad_out, int factor,
                               Tensor& grad_input) {
  if (factor < 1) {
    throw ValidationError("upsample_nearest: factor must be >= 1, got " +
                          std::to_string(factor));
  }
  const Shape& is = grad_input.shape();
  const Shape& os = grad_out.shape();
  const int planes = is.n * is.c;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const Real* src = grad_out.ptr() + static_cast<std::size_t>(pl) * os.plane();
    Real* dst = grad_input.ptr() + static_cast<std::size_t>(pl) * is.plane();
    for (int y = 0; y < is.h; ++y) {
      for (int x = 0; x < is.w; ++x) {
        Real s = 0;
        for (int dy = 0; dy < factor; ++dy) {
          const Real* row = src + static_cast<std::size_t>(y * factor + dy) * os.w;
          for (int dx = 0; dx < factor; ++dx) s += row[x * factor + dx];
        }
        dst[y * is.w + x] += s;
      }
    }
  }
}

PoolResult max_pool2d_forward(const Tensor& input, int k, int stride) {
  const Shape os = max_pool2d_output_shape(input.shape(), k, stride);
  const Shape& is = input.shape();
  PoolResult r{Tensor(os), std::vector<std::uint32_t>(os.numel())};
  const int planes = os.n * os.c;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = static_cast<std::size_t>(pl) * is.plane();
    const std::size_t out_base = static_cast<std::size_t>(pl) * os.plane();
    const Real* src = input.ptr() + in_base;
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        std::size_t best = static_cast<std::size_t>(oy * stride) * is.w + ox * stride;
        Real best_v = src[best];
        for (int dy = 0; dy < k; ++dy) {
          const std::size_t row = static_cast<std::size_t>(oy * stride + dy) * is.w;
          for (int dx = 0; dx < k; ++dx) {
            const std::size_t i = row + ox * stride + dx;
            if (src[i] > best_v) {
              best_v = src[i];
              best = i;
            }
          }
        }
        const std::size_t o = out_base + static_cast<std::size_t>(oy) * os.w + ox;
        r.output[o] = best_v;
        r.argmax[o] = static_cast<std::uint32_t>(in_base + best);
      }
    }
  }
  return r;
}

void max_pool2d_backward(const Tensor& grad_out,
                         const std::vector<std::uint32_t>& argmax,
                         Tensor& grad_input) {
  // Windows may overlap when stride < k, so scatter serially.
  const std::size_t n = grad_out.size();
  Real* gin = grad_input.ptr();
  for (std::size_t o = 0; o < n; ++o) gin[argmax[o]] += grad_out[o];
}

}  // namespace harmony::kernels
