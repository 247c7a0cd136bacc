#include "harmony/kernels.hpp"

namespace harmony::kernels::reference {

namespace {
void check_factor(int factor) {
  if (factor < 1) {
    throw ValidationError("upsample_nearest: factor must be >= 1, got " +
                          std::to_string(factor));
  }
}
}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, const ConvGeometry& g) {
  const Shape os = conv2d_output_shape(input.shape(), weight.shape(), g);
  check_conv2d_bias(weight.shape(), bias.shape());
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  Tensor out(os);
  for (int n = 0; n < os.n; ++n) {
    for (int oc = 0; oc < os.c; ++oc) {
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          Real s = bias[oc];
          for (int ic = 0; ic < is.c; ++ic) {
            for (int ky = 0; ky < ws.h; ++ky) {
              const int iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= is.h) continue;
              for (int kx = 0; kx < ws.w; ++kx) {
                const int ix = ox * g.stride - g.padding + kx;
                if (ix < 0 || ix >= is.w) continue;
                s += weight.at(oc, ic, ky, kx) * input.at(n, ic, iy, ix);
              }
            }
          }
          out.at(n, oc, oy, ox) = s;
        }
      }
    }
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
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  for (int n = 0; n < os.n; ++n) {
    for (int oc = 0; oc < os.c; ++oc) {
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          const Real go = grad_out.at(n, oc, oy, ox);
          if (grad_bias) (*grad_bias)[oc] += go;
          for (int ic = 0; ic < is.c; ++ic) {
            for (int ky = 0; ky < ws.h; ++ky) {
              const int iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= is.h) continue;
              for (int kx = 0; kx < ws.w; ++kx) {
                const int ix = ox * g.stride - g.padding + kx;
                if (ix < 0 || ix >= is.w) continue;
                if (grad_input) {
                  grad_input->at(n, ic, iy, ix) +=
                      weight.at(oc, ic, ky, kx) * go;
                }
                if (grad_weight) {
                  grad_weight->at(oc, ic, ky, kx) +=
                      input.at(n, ic, iy, ix) * go;
                }
              }
            }
          }
        }
      }
    }
  }
}

Tensor upsample_nearest_forward(const Tensor& input, int factor) {
  check_factor(factor);
  const Shape& is = input.shape();
  Tensor out(Shape{is.n, is.c, is.h * factor, is.w * factor});
  const Shape& os = out.shape();
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x)
          out.at(n, c, y, x) = input.at(n, c, y / factor, x / factor);
  return out;
}

void upsample_nearest_backward(const Tensor& grad_out, int factor,
                               Tensor& grad_input) {
  check_factor(factor);
  const Shape& os = grad_out.shape();
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x)
          grad_input.at(n, c, y / factor, x / factor) +=
              grad_out.at(n, c, y, x);
}

PoolResult max_pool2d_forward(const Tensor& input, int k, int stride) {
  const Shape os = max_pool2d_output_shape(input.shape(), k, stride);
  PoolResult r{Tensor(os), std::vector<std::uint32_t>(os.numel())};
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox, ++o) {
          std::size_t best = input.offset(n, c, oy * stride, ox * stride);
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const std::size_t i =
                  input.offset(n, c, oy * stride + dy, ox * stride + dx);
              if (input[i] > input[best]) best = i;
            }
          }
          r.output[o] = input[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

void max_pool2d_backward(const Tensor& grad_out,
                         const std::vector<std::uint32_t>& argmax,
                         Tensor& grad_input) {
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    grad_input[argmax[o]] += grad_out[o];
  }
}

}  // namespace harmony::kernels::reference
