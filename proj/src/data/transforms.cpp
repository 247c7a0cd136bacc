#include <algorithm>
#include <cmath>
#include <numbers>

#include "harmony/data.hpp"

namespace harmony::data {

namespace {

void check_image(const Tensor& t, const char* what, int channels) {
  const Shape& s = t.shape();
  if (s.n != 1 || s.c != channels)
    throw DimensionError("c", std::string(what) + " must be (1, " +
                         std::to_string(channels) + ", H, W), got " + s.str());
}

void check_same_plane(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape().h != b.shape().h || a.shape().w != b.shape().w)
    throw DimensionError(a.shape().h != b.shape().h ? "h" : "w", std::string(what) + ": " + a.shape().str() + " vs " +
                         b.shape().str());
}

Real uniform(std::mt19937_64& rng, Real lo, Real hi) {
  return std::uniform_real_distribution<Real>(lo, hi)(rng);
}

void check_finite(Real v, const char* name) {
  if (!std::isfinite(v))
    throw ValidationError(std::string("perturbation ") + name + " is not finite");
}

}  // namespace

Real foreground_ratio(const Tensor& mask) {
  std::size_t fg = 0;
  for (Real v : mask.data()) fg += v >= 0.5;
  return static_cast<Real>(fg) / static_cast<Real>(mask.size());
}

std::string to_string(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::channel_affine: return "channel_affine";
    case PerturbationKind::gamma: return "gamma";
    case PerturbationKind::hue_rotate: return "hue_rotate";
  }
  return "?";
}

PerturbationSpec PerturbationSpec::random(PerturbationKind kind,
                                          std::mt19937_64& rng) {
  PerturbationSpec p;
  p.kind = kind;
  switch (kind) {
    case PerturbationKind::channel_affine:
      for (int c = 0; c < 3; ++c) {
        p.scale[c] = uniform(rng, 0.5, 1.5);
        p.shift[c] = uniform(rng, -0.2, 0.2);
      }
      break;
    case PerturbationKind::gamma:
      p.gamma = uniform(rng, 0.5, 2.0);
      break;
    case PerturbationKind::hue_rotate:
      p.hue_degrees = uniform(rng, -30.0, 30.0);
      break;
  }
  return p;
}

void PerturbationSpec::validate() const {
  for (int c = 0; c < 3; ++c) {
    check_finite(scale[c], "scale");
    check_finite(shift[c], "shift");
  }
  check_finite(gamma, "gamma");
  check_finite(hue_degrees, "hue_degrees");
  if (gamma <= 0) throw ValidationError("perturbation gamma must be positive");
}

Tensor perturb(const Tensor& image, const PerturbationSpec& spec) {
  check_image(image, "perturb image", 3);
  spec.validate();
  Tensor out = image;
  const std::size_t plane = image.shape().plane();
  Real* r = out.ptr();
  Real* g = r + plane;
  Real* b = g + plane;

  Real m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  if (spec.kind == PerturbationKind::hue_rotate) {
    const Real th = spec.hue_degrees * std::numbers::pi / 180.0;
    const Real c = std::cos(th), k = (1 - c) / 3, t = std::sin(th) / std::sqrt(3.0);
    const Real rot[3][3] = {{c + k, k - t, k + t}, {k + t, c + k, k - t}, {k - t, k + t, c + k}};
    std::copy(&rot[0][0], &rot[0][0] + 9, &m[0][0]);
  }

  for (std::size_t i = 0; i < plane; ++i) {
    Real v[3] = {r[i] / 255.0, g[i] / 255.0, b[i] / 255.0};
    Real o[3];
    switch (spec.kind) {
      case PerturbationKind::channel_affine:
        for (int c = 0; c < 3; ++c) o[c] = spec.scale[c] * v[c] + spec.shift[c];
        break;
      case PerturbationKind::gamma:
        for (int c = 0; c < 3; ++c) o[c] = std::pow(std::max(v[c], Real(0)), spec.gamma);
        break;
      case PerturbationKind::hue_rotate:
        for (int c = 0; c < 3; ++c) o[c] = m[c][0] * v[0] + m[c][1] * v[1] + m[c][2] * v[2];
        break;
    }
    r[i] = std::clamp(o[0], Real(0), Real(1)) * 255.0;
    g[i] = std::clamp(o[1], Real(0), Real(1)) * 255.0;
    b[i] = std::clamp(o[2], Real(0), Real(1)) * 255.0;
  }
  return out;
}

Synthesis synthesize_composite(const Tensor& real, const Tensor& mask,
                               const PerturbationSpec& spec, std::string id) {
  check_image(real, "real image", 3);
  check_image(mask, "mask", 1);
  check_same_plane(real, mask, "mask does not match image");
  Synthesis out;
  out.sample.id = std::move(id);
  out.sample.real = real;
  out.sample.mask = mask;
  out.sample.fg_ratio = foreground_ratio(mask);
  out.empty_mask = out.sample.fg_ratio == 0;
  Tensor perturbed = perturb(real, spec);
  Tensor comp = real;
  const std::size_t plane = real.shape().plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (mask[i] >= 0.5) comp[c * plane + i] = perturbed[c * plane + i];
  out.sample.composite = std::move(comp);
  return out;
}

namespace {

Tensor flip_w(const Tensor& t) {
  Tensor out(t.shape());
  const Shape& s = t.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y) {
        const Real* src = t.ptr() + t.offset(n, c, y, 0);
        Real* dst = out.ptr() + out.offset(n, c, y, 0);
        for (int x = 0; x < s.w; ++x) dst[x] = src[s.w - 1 - x];
      }
  return out;
}

void check_region(const Tensor& t, int x0, int y0, int sw, int sh, int tw, int th) {
  const Shape& s = t.shape();
  if (sw < 1 || sh < 1 || tw < 1 || th < 1 || x0 < 0 || y0 < 0 ||
      x0 + sw > s.w || y0 + sh > s.h)
    throw ValidationError("resize region (" + std::to_string(x0) + ", " +
                          std::to_string(y0) + ", " + std::to_string(sw) + "x" +
                          std::to_string(sh) + ") -> " + std::to_string(tw) + "x" +
                          std::to_string(th) + " invalid for " + s.str());
}

struct Taps {
  std::vector<int> i0, i1;
  std::vector<Real> f;
};

// Half-pixel-center sampling positions for `out` samples over [start, start + len).
Taps taps(int start, int len, int out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.f.resize(out);
  const Real scale = static_cast<Real>(len) / out;
  for (int o = 0; o < out; ++o) {
    Real src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, Real(0), Real(len - 1));
    int i = static_cast<int>(std::floor(src));
    t.i0[o] = start + i;
    t.i1[o] = start + std::min(i + 1, len - 1);
    t.f[o] = src - i;
  }
  return t;
}

}  // namespace

Sample hflip(const Sample& s) {
  Sample out;
  out.id = s.id;
  out.real = flip_w(s.real);
  out.composite = flip_w(s.composite);
  out.mask = flip_w(s.mask);
  out.fg_ratio = s.fg_ratio;
  return out;
}

Tensor resize_region(const Tensor& image, int x0, int y0, int sw, int sh, int tw,
                     int th) {
  check_region(image, x0, y0, sw, sh, tw, th);
  const Shape& s = image.shape();
  Taps tx = taps(x0, sw, tw), ty = taps(y0, sh, th);
  Tensor out(Shape{s.n, s.c, th, tw});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const Real* src = image.plane(n, c);
      Real* dst = out.plane(n, c);
      for (int y = 0; y < th; ++y) {
        const Real* r0 = src + static_cast<std::size_t>(ty.i0[y]) * s.w;
        const Real* r1 = src + static_cast<std::size_t>(ty.i1[y]) * s.w;
        const Real fy = ty.f[y];
        for (int x = 0; x < tw; ++x) {
          const Real fx = tx.f[x];
          const Real top = r0[tx.i0[x]] * (1 - fx) + r0[tx.i1[x]] * fx;
          const Real bot = r1[tx.i0[x]] * (1 - fx) + r1[tx.i1[x]] * fx;
          dst[static_cast<std::size_t>(y) * tw + x] = top * (1 - fy) + bot * fy;
        }
      }
    }
  return out;
}

Tensor resize_mask_region(const Tensor& mask, int x0, int y0, int sw, int sh,
                          int tw, int th) {
  check_region(mask, x0, y0, sw, sh, tw, th);
  const Shape& s = mask.shape();
  auto nearest = [](int start, int len, int out, int o) {
    int i = static_cast<int>(std::floor((o + 0.5) * len / out));
    return start + std::min(i, len - 1);
  };
  Tensor out(Shape{s.n, s.c, th, tw});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < th; ++y) {
        const int sy = nearest(y0, sh, th, y);
        for (int x = 0; x < tw; ++x)
          out.at(n, c, y, x) = mask.at(n, c, sy, nearest(x0, sw, tw, x)) >= 0.5 ? 1.0 : 0.0;
      }
  return out;
}

Tensor resize_image(const Tensor& image, int width, int height) {
  return resize_region(image, 0, 0, image.shape().w, image.shape().h, width, height);
}

Tensor resize_mask(const Tensor& mask, int width, int height) {
  return resize_mask_region(mask, 0, 0, mask.shape().w, mask.shape().h, width, height);
}

CropBox draw_crop(int height, int width, std::mt19937_64& rng) {
  const int src = std::min(height, width);
  CropBox b;
  b.side = std::uniform_int_distribution<int>((src + 1) / 2, src)(rng);
  b.x0 = std::uniform_int_distribution<int>(0, width - b.side)(rng);
  b.y0 = std::uniform_int_distribution<int>(0, height - b.side)(rng);
  return b;
}

Sample crop_resize(const Sample& s, const CropBox& box, int target) {
  Sample out;
  out.id = s.id;
  out.real = resize_region(s.real, box.x0, box.y0, box.side, box.side, target, target);
  out.composite =
      resize_region(s.composite, box.x0, box.y0, box.side, box.side, target, target);
  out.mask = resize_mask_region(s.mask, box.x0, box.y0, box.side, box.side, target, target);
  out.fg_ratio = foreground_ratio(out.mask);
  return out;
}

Sample resize_sample(const Sample& s, int target) {
  Sample out;
  out.id = s.id;
  out.real = resize_image(s.real, target, target);
  out.composite = resize_image(s.composite, target, target);
  out.mask = resize_mask(s.mask, target, target);
  out.fg_ratio = foreground_ratio(out.mask);
  return out;
}

Sample random_resized_crop(const Sample& s, int target, std::mt19937_64& rng) {
  return crop_resize(s, draw_crop(s.real.shape().h, s.real.shape().w, rng), target);
}

void restore_background(Sample& s) {
  check_same_plane(s.real, s.mask, "restore_background");
  const std::size_t plane = s.mask.shape().plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (s.mask[i] < 0.5) s.composite[c * plane + i] = s.real[c * plane + i];
}

Sample augment(const Sample& s, const AugmentationConfig& config,
               std::mt19937_64& rng) {
  if (config.target_size < 1)
    throw ValidationError("augmentation target_size must be positive");
  Sample out = s;
  if (config.hflip && std::bernoulli_distribution(0.5)(rng)) out = hflip(out);
  const Shape& sh = out.real.shape();
  if (config.rrc)
    out = random_resized_crop(out, config.target_size, rng);
  else if (sh.h != config.target_size || sh.w != config.target_size)
    out = resize_sample(out, config.target_size);
  restore_background(out);
  return out;
}

Tensor normalize(const Tensor& image) {
  if (image.shape().c != 3)
    throw DimensionError("c", "normalize expects 3 channels, got " + image.shape().str());
  Tensor out = image;
  const Shape& s = image.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < 3; ++c) {
      Real* p = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] = (p[i] / 255.0 - kMean[c]) / kStd[c];
    }
  return out;
}

Tensor denormalize(const Tensor& t) {
  if (t.shape().c != 3)
    throw DimensionError("c", "denormalize expects 3 channels, got " + t.shape().str());
  Tensor out = t;
  const Shape& s = t.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < 3; ++c) {
      Real* p = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] = (p[i] * kStd[c] + kMean[c]) * 255.0;
    }
  return out;
}

Tensor clip_pixels(Tensor t) {
  for (Real& v : t.data()) v = std::clamp(v, Real(0), Real(255));
  return t;
}

}  // namespace harmony::data
