#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "detail/binary_io.hpp"
#include "harmony/data.hpp"
#include "harmony/objectives.hpp"
#include "json.hpp"

namespace harmony::data {

namespace {

constexpr Real kPi = std::numbers::pi;

Real uni(std::mt19937_64& rng, Real lo, Real hi) {
  return std::uniform_real_distribution<Real>(lo, hi)(rng);
}

int uni_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Smooth background: per-channel base color, linear gradient and two low
// frequency waves, with a few soft-edged blobs on top.
Tensor procedural_image(int size, std::mt19937_64& rng) {
  Tensor img(Shape{1, 3, size, size});
  struct Wave {
    Real fx, fy, phase, amp;
  };
  for (int c = 0; c < 3; ++c) {
    const Real base = uni(rng, 50, 205);
    const Real gx = uni(rng, -60, 60), gy = uni(rng, -60, 60);
    Wave waves[2];
    for (Wave& w : waves) w = {uni(rng, -2, 2), uni(rng, -2, 2), uni(rng, 0, 2 * kPi), uni(rng, 0, 25)};
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const Real u = (x + 0.5) / size, v = (y + 0.5) / size;
        Real val = base + gx * (u - 0.5) + gy * (v - 0.5);
        for (const Wave& w : waves)
          val += w.amp * std::cos(2 * kPi * (w.fx * u + w.fy * v) + w.phase);
        img.at(0, c, y, x) = val;
      }
  }
  const int blobs = uni_int(rng, 2, 4);
  for (int b = 0; b < blobs; ++b) {
    const Real cx = uni(rng, 0, size), cy = uni(rng, 0, size);
    const Real rx = uni(rng, 0.1, 0.35) * size, ry = uni(rng, 0.1, 0.35) * size;
    const Real alpha = uni(rng, 0.3, 0.7);
    Real color[3];
    for (Real& col : color) col = uni(rng, 20, 235);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const Real dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const Real d = std::sqrt(dx * dx + dy * dy);
        const Real t = std::clamp((1.3 - d) / 0.6, Real(0), Real(1));
        const Real a = alpha * t * t * (3 - 2 * t);
        for (int c = 0; c < 3; ++c) {
          Real& p = img.at(0, c, y, x);
          p = p * (1 - a) + color[c] * a;
        }
      }
  }
  for (Real& v : img.data()) v = std::round(std::clamp(v, Real(0), Real(255)));
  return img;
}

Tensor rasterize_ellipse(int size, Real cx, Real cy, Real a, Real b, Real theta) {
  Tensor m(Shape{1, 1, size, size});
  const Real ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Real dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const Real u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
      m.at(0, 0, y, x) = u * u + v * v <= 1 ? 1.0 : 0.0;
    }
  return m;
}

Tensor rasterize_polygon(int size, const std::vector<std::pair<Real, Real>>& pts) {
  Tensor m(Shape{1, 1, size, size});
  const std::size_t n = pts.size();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Real px = x + 0.5, py = y + 0.5;
      bool inside = false;
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto [xi, yi] = pts[i];
        const auto [xj, yj] = pts[j];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi)
          inside = !inside;
      }
      m.at(0, 0, y, x) = inside ? 1.0 : 0.0;
    }
  return m;
}

// Ellipse or star-shaped polygon whose rasterized area lands in the bucket.
Tensor procedural_mask(int size, int bucket, std::mt19937_64& rng) {
  static constexpr Real lo[3] = {0.015, 0.07, 0.20};
  static constexpr Real hi[3] = {0.040, 0.13, 0.45};
  const objectives::Bucket& bk = objectives::kBuckets[bucket];
  const Real target = uni(rng, lo[bucket], hi[bucket]);
  const Real area = target * size * size;
  const bool polygon = std::bernoulli_distribution(0.5)(rng);
  const Real aspect = uni(rng, 0.6, 1.6);
  const Real theta = uni(rng, 0, kPi);
  auto ok = [&](const Tensor& m) {
    const Real r = foreground_ratio(m);
    return r > 0 && r >= bk.lower && r < bk.upper;
  };

  if (polygon) {
    const int k = uni_int(rng, 5, 9);
    std::vector<Real> ang(k), rad(k);
    for (int i = 0; i < k; ++i) {
      ang[i] = 2 * kPi * (i + uni(rng, 0.1, 0.9)) / k;
      rad[i] = uni(rng, 0.6, 1.0);
    }
    const Real cx = uni(rng, 0.3, 0.7) * size, cy = uni(rng, 0.3, 0.7) * size;
    Real unit_area = 0;
    for (int i = 0; i < k; ++i) {
      const int j = (i + 1) % k;
      Real d = ang[j] - ang[i];
      if (d < 0) d += 2 * kPi;
      unit_area += 0.5 * rad[i] * rad[j] * std::sin(d);
    }
    Real scale = std::sqrt(area / unit_area);
    for (int iter = 0; iter < 12; ++iter) {
      std::vector<std::pair<Real, Real>> pts(k);
      for (int i = 0; i < k; ++i)
        pts[i] = {cx + scale * rad[i] * aspect * std::cos(ang[i] + theta),
                  cy + scale * rad[i] / aspect * std::sin(ang[i] + theta)};
      Tensor m = rasterize_polygon(size, pts);
      if (ok(m)) return m;
      const Real r = foreground_ratio(m);
      scale *= std::sqrt(target / std::max(r, Real(1) / (size * size)));
    }
  }

  Real a = std::sqrt(area * aspect / kPi), b = std::sqrt(area / (aspect * kPi));
  const Real ex = std::sqrt(a * a * std::cos(theta) * std::cos(theta) +
                            b * b * std::sin(theta) * std::sin(theta));
  const Real ey = std::sqrt(a * a * std::sin(theta) * std::sin(theta) +
                            b * b * std::cos(theta) * std::cos(theta));
  const Real cx = 2 * ex < size ? uni(rng, ex, size - ex) : size / 2.0;
  const Real cy = 2 * ey < size ? uni(rng, ey, size - ey) : size / 2.0;
  Tensor m;
  for (int iter = 0; iter < 12; ++iter) {
    m = rasterize_ellipse(size, cx, cy, a, b, theta);
    if (ok(m)) return m;
    const Real s = std::sqrt(target / std::max(foreground_ratio(m), Real(1) / (size * size)));
    a *= s;
    b *= s;
  }
  return m;
}

Real foreground_mse(const Tensor& a, const Tensor& b, const Tensor& mask) {
  return objectives::fmse_metric(a, b, mask).value;
}

std::string id_for(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "d%05d", i);
  return buf;
}

}  // namespace

Manifest make_desk_dataset(int n, int size, std::uint64_t seed, const fs::path& out_dir) {
  if (n < 1) throw ValidationError("desk dataset needs n >= 1, got " + std::to_string(n));
  if (size < 8) throw ValidationError("desk dataset needs size >= 8, got " + std::to_string(size));
  try {
    for (const char* sub : {"real_images", "composite_images", "masks"})
      fs::create_directories(out_dir / sub);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create dataset directory '" + out_dir.string() + "': " + e.what());
  }

  static constexpr PerturbationKind kinds[3] = {PerturbationKind::channel_affine,
                                                PerturbationKind::gamma,
                                                PerturbationKind::hue_rotate};
  Manifest man;
  man.n = n;
  man.size = size;
  man.seed = seed;
  for (int i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    Tensor real = procedural_image(size, rng);
    Tensor mask = procedural_mask(size, i % 3, rng);

    PerturbationSpec spec;
    Tensor composite;
    for (int attempt = 0; attempt < 20; ++attempt) {
      spec = PerturbationSpec::random(kinds[uni_int(rng, 0, 2)], rng);
      composite = synthesize_composite(real, mask, spec).sample.composite;
      for (Real& v : composite.data()) v = std::round(v);
      if (foreground_mse(composite, real, mask) >= 25) break;
    }
    spec.seed = seed;

    const std::string stem = id_for(i);
    ManifestEntry e;
    e.id = stem + "_1_1";
    e.real = "real_images/" + stem + ".png";
    e.mask = "masks/" + stem + "_1.png";
    e.composite = "composite_images/" + e.id + ".png";
    e.fg_ratio = foreground_ratio(mask);
    e.perturbation = spec;
    write_png(out_dir / e.real, real);
    write_png(out_dir / e.mask, mask_to_pixels(mask));
    write_png(out_dir / e.composite, composite);
    man.samples.push_back(std::move(e));
  }
  detail::write_file((out_dir / "manifest.json").string(), manifest_json(man));
  return man;
}

std::string manifest_json(const Manifest& m) {
  auto arr = nlohmann::ordered_json::array();
  for (const ManifestEntry& e : m.samples) {
    nlohmann::ordered_json p;
    p["kind"] = to_string(e.perturbation.kind);
    switch (e.perturbation.kind) {
      case PerturbationKind::channel_affine:
        p["scale"] = e.perturbation.scale;
        p["shift"] = e.perturbation.shift;
        break;
      case PerturbationKind::gamma:
        p["gamma"] = e.perturbation.gamma;
        break;
      case PerturbationKind::hue_rotate:
        p["hue_degrees"] = e.perturbation.hue_degrees;
        break;
    }
    arr.push_back({{"id", e.id},
                   {"real", e.real},
                   {"composite", e.composite},
                   {"mask", e.mask},
                   {"fg_ratio", e.fg_ratio},
                   {"perturbation", p}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace harmony::data
