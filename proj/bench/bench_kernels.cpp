#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "harmony/kernels.hpp"

using namespace harmony;
namespace k = harmony::kernels;

namespace {

Tensor random_tensor(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(-1, 1);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Median wall time in milliseconds.
double time_ms(int reps, const std::function<void()>& fn) {
  fn();
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

void row(const std::string& name, double ref, double par, double diff) {
  std::printf("%-34s %10.3f %10.3f %8.2fx %10.2e\n", name.c_str(), ref, par, ref / par, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial reference kernels against the OpenMP kernels"};
  int reps = 5, batch = 4, channels = 32, size = 64;
  app.add_option("--reps", reps)->check(CLI::PositiveNumber);
  app.add_option("--batch", batch)->check(CLI::PositiveNumber);
  app.add_option("--channels", channels)->check(CLI::PositiveNumber);
  app.add_option("--size", size)->check(CLI::Range(4, 1024));
  CLI11_PARSE(app, argc, argv);

  std::printf("threads %d, input (%d, %d, %d, %d), median of %d\n", omp_get_max_threads(), batch,
              channels, size, size, reps);
  std::printf("%-34s %10s %10s %9s %10s\n", "kernel", "serial ms", "omp ms", "speedup", "max diff");

  const Tensor x = random_tensor(Shape{batch, channels, size, size}, 1);
  for (int stride : {1, 2}) {
    const k::ConvGeometry g{stride, 1};
    const Tensor w = random_tensor(Shape{channels, channels, 3, 3}, 2);
    const Tensor b = random_tensor(Shape{channels}, 3);
    Tensor yr, yp;
    const double tr = time_ms(reps, [&] { yr = k::reference::conv2d_forward(x, w, b, g); });
    const double tp = time_ms(reps, [&] { yp = k::conv2d_forward(x, w, b, g); });
    row("conv3x3 forward s" + std::to_string(stride), tr, tp, max_diff(yr, yp));

    const Tensor go = random_tensor(yr.shape(), 4);
    Tensor gir(x.shape()), gwr(w.shape()), gbr(b.shape());
    Tensor gip(x.shape()), gwp(w.shape()), gbp(b.shape());
    const double br = time_ms(reps, [&] {
      gir.fill(0), gwr.fill(0), gbr.fill(0);
      k::reference::conv2d_backward(x, w, go, g, &gir, &gwr, &gbr);
    });
    const double bp = time_ms(reps, [&] {
      gip.fill(0), gwp.fill(0), gbp.fill(0);
      k::conv2d_backward(x, w, go, g, &gip, &gwp, &gbp);
    });
    row("conv3x3 backward s" + std::to_string(stride), br, bp,
        std::max({max_diff(gir, gip), max_diff(gwr, gwp), max_diff(gbr, gbp)}));
  }

  {
    k::PoolResult pr, pp;
    const double tr = time_ms(reps, [&] { pr = k::reference::max_pool2d_forward(x, 2, 2); });
    const double tp = time_ms(reps, [&] { pp = k::max_pool2d_forward(x, 2, 2); });
    row("max_pool 2x2 forward", tr, tp, max_diff(pr.output, pp.output));
    const Tensor go = random_tensor(pr.output.shape(), 5);
    Tensor gr(x.shape()), gp(x.shape());
    const double br = time_ms(reps, [&] {
      gr.fill(0);
      k::reference::max_pool2d_backward(go, pr.argmax, gr);
    });
    const double bp = time_ms(reps, [&] {
      gp.fill(0);
      k::max_pool2d_backward(go, pp.argmax, gp);
    });
    row("max_pool 2x2 backward", br, bp, max_diff(gr, gp));
  }

  {
    Tensor ur, up;
    const double tr = time_ms(reps, [&] { ur = k::reference::upsample_nearest_forward(x, 2); });
    const double tp = time_ms(reps, [&] { up = k::upsample_nearest_forward(x, 2); });
    row("upsample x2 forward", tr, tp, max_diff(ur, up));
    Tensor gr(x.shape()), gp(x.shape());
    const double br = time_ms(reps, [&] {
      gr.fill(0);
      k::reference::upsample_nearest_backward(ur, 2, gr);
    });
    const double bp = time_ms(reps, [&] {
      gp.fill(0);
      k::upsample_nearest_backward(ur, 2, gp);
    });
    row("upsample x2 backward", br, bp, max_diff(gr, gp));
  }
  return 0;
}
