#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "harmony/tensor.hpp"

namespace harmony::testing {

inline Tensor random_tensor(const Shape& s, std::uint64_t seed, Real lo = -1,
                            Real hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(lo, hi);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Direct convolution over plain index arithmetic, written independently of
// the library kernels.
inline Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b,
                          int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor out(Shape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          Real acc = b[o];
          for (int c = 0; c < xs.c; ++c)
            for (int u = 0; u < ws.h; ++u)
              for (int v = 0; v < ws.w; ++v) {
                const int y = i * stride + u - pad;
                const int z = j * stride + v - pad;
                const bool inside = y >= 0 && y < xs.h && z >= 0 && z < xs.w;
                const Real px = inside
                    ? x[((static_cast<std::size_t>(n) * xs.c + c) * xs.h + y) * xs.w + z]
                    : 0.0;
                acc += w[((static_cast<std::size_t>(o) * ws.c + c) * ws.h + u) * ws.w + v] * px;
              }
          out[((static_cast<std::size_t>(n) * ws.n + o) * oh + i) * ow + j] = acc;
        }
  return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("harmony_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace harmony::testing
