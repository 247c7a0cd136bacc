#include "harmony/kernels.hpp"

namespace harmony::kernels {

Shape conv2d_output_shape(const Shape& input, const Shape& weight,
                          const ConvGeometry& g) {
  validate_shape(input);
  validate_shape(weight);
  if (g.stride < 1) {
    throw ValidationError("conv2d: stride must be >= 1, got " +
                          std::to_string(g.stride));
  }
  if (g.padding < 0) {
    throw ValidationError("conv2d: padding must be >= 0, got " +
                          std::to_string(g.padding));
  }
  if (weight.c != input.c) {
    throw DimensionError("channels", "conv2d: weight expects " +
                                         std::to_string(weight.c) +
                                         " input channels, input has " +
                                         std::to_string(input.c));
  }
  const int span_h = input.h + 2 * g.padding - weight.h;
  const int span_w = input.w + 2 * g.padding - weight.w;
  if (span_h < 0) {
    throw DimensionError("height", "conv2d: kernel height " +
                                       std::to_string(weight.h) +
                                       " exceeds padded input height " +
                                       std::to_string(input.h + 2 * g.padding));
  }
  if (span_w < 0) {
    throw DimensionError("width", "conv2d: kernel width " +
                                      std::to_string(weight.w) +
                                      " exceeds padded input width " +
                                      std::to_string(input.w + 2 * g.padding));
  }
  return Shape{input.n, weight.n, span_h / g.stride + 1,
               span_w / g.stride + 1};
}

void check_conv2d_bias(const Shape& weight, const Shape& bias) {
  if (bias.numel() != static_cast<std::size_t>(weight.n)) {
    throw DimensionError("bias", "conv2d: bias holds " +
                                     std::to_string(bias.numel()) +
                                     " values, expected " +
                                     std::to_string(weight.n));
  }
}

Shape max_pool2d_output_shape(const Shape& input, int k, int stride) {
  validate_shape(input);
  if (k < 1 || stride < 1) {
    throw ValidationError("max_pool2d: window and stride must be >= 1");
  }
  if (k > input.h) {
    throw DimensionError("height", "max_pool2d: window " + std::to_string(k) +
                                       " larger than input height " +
                                       std::to_string(input.h));
  }
  if (k > input.w) {
    throw DimensionError("width", "max_pool2d: window " + std::to_string(k) +
                                      " larger than input width " +
                                      std::to_string(input.w));
  }
  return Shape{input.n, input.c, (input.h - k) / stride + 1,
               (input.w - k) / stride + 1};
}

}  // namespace harmony::kernels
