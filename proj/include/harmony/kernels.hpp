#pragma once

#include <cstdint>
#include <vector>

#include "harmony/tensor.hpp"

// Dense NCHW compute kernels.
//
// The functions in harmony::kernels are the OpenMP-parallel versions used by
// the autodiff ops. Work is split only across independent output elements and
// every output keeps a fixed reduction order, so results do not depend on the
// thread count. harmony::kernels::reference holds straightforward serial loops
// with the same signatures; they are kept for tests and the benchmark.

namespace harmony::kernels {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
};

/// Validates operands and returns the output shape. Weight is
/// (out_c, in_c, kh, kw); bias must hold out_c values.
Shape conv2d_output_shape(const Shape& input, const Shape& weight,
                          const ConvGeometry& g);
void check_conv2d_bias(const Shape& weight, const Shape& bias);

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, const ConvGeometry& g);

/// Accumulates into every non-null gradient target.
void conv2d_backward(const Tensor& input, const Tensor& weight,
                     const Tensor& grad_out, const ConvGeometry& g,
                     Tensor* grad_input, Tensor* grad_weight,
                     Tensor* grad_bias);

Tensor upsample_nearest_forward(const Tensor& input, int factor);
void upsample_nearest_backward(const Tensor& grad_out, int factor,
                               Tensor& grad_input);

struct PoolResult {
  Tensor output;
  // Flat input offset of the winning element for every output element.
  std::vector<std::uint32_t> argmax;
};

Shape max_pool2d_output_shape(const Shape& input, int k, int stride);
PoolResult max_pool2d_forward(const Tensor& input, int k, int stride);
void max_pool2d_backward(const Tensor& grad_out,
                         const std::vector<std::uint32_t>& argmax,
                         Tensor& grad_input);

namespace reference {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, const ConvGeometry& g);
void conv2d_backward(const Tensor& input, const Tensor& weight,
                     const Tensor& grad_out, const ConvGeometry& g,
                     Tensor* grad_input, Tensor* grad_weight,
                     Tensor* grad_bias);
Tensor upsample_nearest_forward(const Tensor& input, int factor);
void upsample_nearest_backward(const Tensor& grad_out, int factor,
                               Tensor& grad_input);
PoolResult max_pool2d_forward(const Tensor& input, int k, int stride);
void max_pool2d_backward(const Tensor& grad_out,
                         const std::vector<std::uint32_t>& argmax,
                         Tensor& grad_input);

}  // namespace reference

}  // namespace harmony::kernels
