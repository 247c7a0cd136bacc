#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "harmony/data.hpp"
#include "harmony/objectives.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace harmony;
using namespace harmony::data;
using harmony::testing::random_tensor;
using harmony::testing::scratch_dir;

namespace {

Tensor random_pixels(int c, int h, int w, std::uint64_t seed) {
  Tensor t = random_tensor({1, c, h, w}, seed, 0, 255);
  for (Real& v : t.data()) v = std::round(v);
  return t;
}

Tensor blob_mask(int h, int w, int x0, int y0, int x1, int y1) {
  Tensor m(Shape{1, 1, h, w});
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(0, 0, y, x) = 1;
  return m;
}

Sample random_sample(int size, std::uint64_t seed) {
  Tensor real = random_pixels(3, size, size, seed);
  Tensor mask = blob_mask(size, size, size / 4, size / 5, size * 3 / 4, size / 2);
  std::mt19937_64 rng(seed);
  auto spec = PerturbationSpec::random(PerturbationKind::channel_affine, rng);
  return synthesize_composite(real, mask, spec, "s").sample;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void background_matches(const Sample& s) {
  const std::size_t plane = s.mask.shape().plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (s.mask[i] < 0.5) REQUIRE(s.composite[c * plane + i] == s.real[c * plane + i]);
}

}  // namespace

TEST_CASE("png round trip is exact for 8-bit values") {
  const auto dir = scratch_dir("data_png");
  Tensor img = random_pixels(3, 7, 11, 1);
  write_png(dir / "a.png", img);
  CHECK(read_png_rgb(dir / "a.png") == img);
  CHECK(png_size(dir / "a.png") == std::pair{11, 7});

  Tensor mask = blob_mask(5, 6, 1, 1, 4, 3);
  write_png(dir / "m.png", mask_to_pixels(mask));
  CHECK(read_png_mask(dir / "m.png") == mask);

  Tensor out_of_range(Shape{1, 1, 1, 3}, std::vector<Real>{-20, 127.6, 400});
  write_png(dir / "clip.png", out_of_range);
  Tensor back = read_png_rgb(dir / "clip.png");
  CHECK(back.at(0, 0, 0, 0) == 0);
  CHECK(back.at(0, 1, 0, 1) == 128);
  CHECK(back.at(0, 2, 0, 2) == 255);

  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png_rgb(dir / "junk.png"), IoError);
  CHECK_THROWS_AS(png_size(dir / "missing.png"), IoError);
  CHECK_THROWS_AS(write_png(dir / "x.png", Tensor(Shape{1, 2, 2, 2})), DimensionError);
}

TEST_CASE("perturbation formulas") {
  Tensor gray(Shape{1, 3, 1, 1}, 0.25 * 255);
  Tensor full(Shape{1, 1, 1, 1}, 1.0);

  PerturbationSpec affine;
  affine.scale = {2, 1, 1};
  Tensor out = synthesize_composite(gray, full, affine).sample.composite;
  CHECK(out[0] == doctest::Approx(0.5 * 255).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(0.25 * 255).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(0.25 * 255).epsilon(1e-12));

  affine.scale = {1.5, 1, 1};
  affine.shift = {0.2, -0.2, 0};
  Tensor white(Shape{1, 3, 1, 1}, 255.0);
  out = perturb(white, affine);
  CHECK(out[0] == 255);  // clipped
  CHECK(out[1] == doctest::Approx(0.8 * 255).epsilon(1e-12));
  CHECK(out[2] == 255);

  PerturbationSpec g;
  g.kind = PerturbationKind::gamma;
  g.gamma = 2;
  Tensor half(Shape{1, 3, 1, 1}, 127.5);
  out = perturb(half, g);
  for (int c = 0; c < 3; ++c) CHECK(out[c] == doctest::Approx(0.25 * 255).epsilon(1e-12));

  // A third of a turn about the gray axis cycles the channels.
  PerturbationSpec h;
  h.kind = PerturbationKind::hue_rotate;
  h.hue_degrees = 120;
  Tensor px(Shape{1, 3, 1, 1}, std::vector<Real>{204, 51, 102});
  out = perturb(px, h);
  CHECK(out[0] == doctest::Approx(102).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(204).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(51).epsilon(1e-12));

  // Gray is on the rotation axis.
  h.hue_degrees = 25;
  out = perturb(half, h);
  for (int c = 0; c < 3; ++c) CHECK(out[c] == doctest::Approx(127.5).epsilon(1e-12));

  PerturbationSpec bad;
  bad.kind = PerturbationKind::gamma;
  bad.gamma = 0;
  CHECK_THROWS_AS(perturb(half, bad), ValidationError);
  bad.gamma = 1;
  bad.shift[1] = std::nan("");
  CHECK_THROWS_AS(perturb(half, bad), ValidationError);
}

TEST_CASE("random perturbations stay within documented ranges") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto a = PerturbationSpec::random(PerturbationKind::channel_affine, rng);
    for (int c = 0; c < 3; ++c) {
      CHECK(a.scale[c] >= 0.5);
      CHECK(a.scale[c] <= 1.5);
      CHECK(a.shift[c] >= -0.2);
      CHECK(a.shift[c] <= 0.2);
    }
    auto g = PerturbationSpec::random(PerturbationKind::gamma, rng);
    CHECK(g.gamma >= 0.5);
    CHECK(g.gamma <= 2.0);
    auto h = PerturbationSpec::random(PerturbationKind::hue_rotate, rng);
    CHECK(std::abs(h.hue_degrees) <= 30);
  }
}

TEST_CASE("synthesize_composite gates on the mask") {
  Tensor real = random_pixels(3, 9, 10, 5);
  Tensor mask = blob_mask(9, 10, 2, 3, 7, 8);
  std::mt19937_64 rng(9);
  for (auto kind : {PerturbationKind::channel_affine, PerturbationKind::gamma,
                    PerturbationKind::hue_rotate}) {
    auto spec = PerturbationSpec::random(kind, rng);
    Synthesis s = synthesize_composite(real, mask, spec, "x");
    CHECK_FALSE(s.empty_mask);
    CHECK(s.sample.real == real);
    CHECK(s.sample.fg_ratio == doctest::Approx(25.0 / 90));
    background_matches(s.sample);
    Tensor p = perturb(real, spec);
    const std::size_t plane = 90;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        if (mask[i] >= 0.5) CHECK(s.sample.composite[c * plane + i] == p[c * plane + i]);
  }

  CHECK(synthesize_composite(real, mask, PerturbationSpec::identity()).sample.composite == real);

  Synthesis empty = synthesize_composite(real, Tensor(Shape{1, 1, 9, 10}),
                                         PerturbationSpec::random(PerturbationKind::gamma, rng));
  CHECK(empty.empty_mask);
  CHECK(empty.sample.composite == real);

  CHECK_THROWS_AS(synthesize_composite(real, Tensor(Shape{1, 1, 9, 9}), {}), DimensionError);
  CHECK_THROWS_AS(synthesize_composite(Tensor(Shape{1, 1, 9, 10}), mask, {}), DimensionError);
}

TEST_CASE("hflip") {
  Sample s;
  s.real = Tensor(Shape{1, 3, 1, 2}, std::vector<Real>{1, 2, 3, 4, 5, 6});
  s.composite = s.real;
  s.mask = Tensor(Shape{1, 1, 1, 2}, std::vector<Real>{1, 0});
  s.fg_ratio = 0.5;
  Sample f = hflip(s);
  CHECK(f.real.data()[0] == 2);
  CHECK(f.real.data()[1] == 1);
  CHECK(f.real.data()[4] == 6);
  CHECK(f.mask.data()[0] == 0);
  CHECK(f.mask.data()[1] == 1);
  CHECK(f.fg_ratio == 0.5);

  Sample r = random_sample(13, 2);
  Sample rr = hflip(hflip(r));
  CHECK(rr.real == r.real);
  CHECK(rr.composite == r.composite);
  CHECK(rr.mask == r.mask);
  CHECK(foreground_ratio(hflip(r).mask) == r.fg_ratio);
}

TEST_CASE("bilinear resize against hand-computed values") {
  Tensor row(Shape{1, 1, 1, 2}, std::vector<Real>{0, 10});
  Tensor up = resize_image(row, 4, 1);
  // Half-pixel centers: sources -0.25, 0.25, 0.75, 1.25, clamped at the edges.
  CHECK(up[0] == doctest::Approx(0));
  CHECK(up[1] == doctest::Approx(2.5));
  CHECK(up[2] == doctest::Approx(7.5));
  CHECK(up[3] == doctest::Approx(10));

  // Halving averages 2x2 blocks.
  Tensor img = random_tensor({1, 3, 6, 8}, 4, 0, 255);
  Tensor half = resize_image(img, 4, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x) {
        const Real avg = (img.at(0, c, 2 * y, 2 * x) + img.at(0, c, 2 * y, 2 * x + 1) +
                          img.at(0, c, 2 * y + 1, 2 * x) + img.at(0, c, 2 * y + 1, 2 * x + 1)) /
                         4;
        CHECK(half.at(0, c, y, x) == doctest::Approx(avg).epsilon(1e-12));
      }

  CHECK(resize_image(img, 8, 6) == img);

  Tensor m = blob_mask(6, 8, 1, 1, 5, 4);
  CHECK(resize_mask(m, 8, 6) == m);
  // Nearest for a 2x downsample picks the pixel at odd offsets.
  Tensor md = resize_mask(m, 4, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) CHECK(md.at(0, 0, y, x) == m.at(0, 0, 2 * y + 1, 2 * x + 1));

  CHECK_THROWS_AS(resize_region(img, 5, 0, 4, 4, 2, 2), ValidationError);
  CHECK_THROWS_AS(resize_region(img, 0, 0, 4, 4, 0, 2), ValidationError);
}

TEST_CASE("random resized crop") {
  Sample s = random_sample(40, 11);

  CropBox full{0, 0, 40};
  Sample a = crop_resize(s, full, 24);
  Sample b = resize_sample(s, 24);
  CHECK(a.real == b.real);
  CHECK(a.composite == b.composite);
  CHECK(a.mask == b.mask);

  std::mt19937_64 r1(5), r2(5);
  Sample c1 = random_resized_crop(s, 24, r1);
  Sample c2 = random_resized_crop(s, 24, r2);
  CHECK(c1.real == c2.real);
  CHECK(c1.mask == c2.mask);

  std::mt19937_64 rng(8);
  std::set<int> sides;
  for (int i = 0; i < 400; ++i) {
    CropBox box = draw_crop(40, 50, rng);
    REQUIRE(box.side >= 20);
    REQUIRE(box.side <= 40);
    REQUIRE(box.x0 >= 0);
    REQUIRE(box.y0 >= 0);
    REQUIRE(box.x0 + box.side <= 50);
    REQUIRE(box.y0 + box.side <= 40);
    sides.insert(box.side);
  }
  CHECK(sides.count(20) == 1);
  CHECK(sides.count(40) == 1);

  for (int i = 0; i < 50; ++i) {
    Sample c = random_resized_crop(s, 17, rng);
    CHECK(c.mask.shape() == Shape{1, 1, 17, 17});
    for (Real v : c.mask.data()) REQUIRE((v == 0 || v == 1));
    CHECK(c.fg_ratio == foreground_ratio(c.mask));
  }
}

TEST_CASE("augmentation keeps composite equal to real outside the mask") {
  Sample s = random_sample(48, 21);
  AugmentationConfig cfg;
  cfg.target_size = 32;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 40; ++i) {
    Sample a = augment(s, cfg, rng);
    CHECK(a.real.shape() == Shape{1, 3, 32, 32});
    background_matches(a);
  }

  std::mt19937_64 r1(77), r2(77);
  Sample a1 = augment(s, cfg, r1), a2 = augment(s, cfg, r2);
  CHECK(a1.composite == a2.composite);
  CHECK(a1.mask == a2.mask);

  AugmentationConfig off;
  off.hflip = false;
  off.rrc = false;
  off.target_size = 48;
  Sample same = augment(s, off, rng);
  CHECK(same.real == s.real);
  CHECK(same.composite == s.composite);
  CHECK(same.mask == s.mask);

  // Flip only: each draw is either the identity or the mirror image.
  AugmentationConfig flip_only = off;
  flip_only.hflip = true;
  int flipped = 0;
  for (int i = 0; i < 64; ++i) {
    Sample f = augment(s, flip_only, rng);
    if (f.real == s.real) continue;
    CHECK(f.real == hflip(s).real);
    ++flipped;
  }
  CHECK(flipped > 10);
  CHECK(flipped < 54);
}

TEST_CASE("normalization constants") {
  Tensor mean_px(Shape{1, 3, 1, 1}, std::vector<Real>{0.485 * 255, 0.456 * 255, 0.406 * 255});
  Tensor z = normalize(mean_px);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(z[c]) < 1e-12);

  Tensor white(Shape{1, 3, 1, 1}, 255.0);
  Tensor w = normalize(white);
  CHECK(w[0] == doctest::Approx(2.2489).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(2.4286).epsilon(1e-4));
  CHECK(w[2] == doctest::Approx(2.6400).epsilon(1e-4));

  Tensor img = random_tensor({2, 3, 5, 4}, 6, 0, 255);
  CHECK(max_abs_diff(denormalize(normalize(img)), img) < 1e-6);

  Tensor wild = random_tensor({1, 3, 3, 3}, 7, -4, 4);
  Tensor clipped = clip_pixels(denormalize(wild));
  for (Real v : clipped.data()) {
    CHECK(v >= 0);
    CHECK(v <= 255);
  }
  CHECK_THROWS_AS(normalize(Tensor(Shape{1, 1, 2, 2})), DimensionError);
}

TEST_CASE("load_dataset layout and report") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/harmony"), IoError);

  const auto root = scratch_dir("data_load");
  CHECK_THROWS_AS(load_dataset(root), IoError);
  for (const char* sub : {"real_images", "composite_images", "masks"})
    fs::create_directories(root / sub);
  Dataset empty = load_dataset(root);
  CHECK(empty.empty());
  CHECK(empty.skipped().empty());

  auto write_triple = [&](const std::string& stem, int w, int h, int cw, std::uint64_t seed) {
    write_png(root / "real_images" / (stem + ".png"), random_pixels(3, h, w, seed));
    write_png(root / "masks" / (stem + "_1.png"), mask_to_pixels(blob_mask(h, w, 1, 1, 3, 3)));
    write_png(root / "composite_images" / (stem + "_1_2.png"), random_pixels(3, h, cw, seed + 1));
  };
  write_triple("c_b", 6, 5, 6, 1);
  write_triple("a", 6, 5, 6, 3);
  write_triple("b", 4, 4, 4, 5);
  write_triple("bad", 6, 5, 7, 7);
  write_png(root / "composite_images" / "ghost_1_1.png", random_pixels(3, 4, 4, 9));
  write_png(root / "composite_images" / "noname.png", random_pixels(3, 4, 4, 9));
  std::ofstream(root / "composite_images" / "a_1_3.jpg") << "jpeg";
  write_png(root / "real_images" / "lonely.png", random_pixels(3, 4, 4, 9));

  Dataset ds = load_dataset(root);
  REQUIRE(ds.size() == 3);
  CHECK(ds.files(0).id == "a_1_2");
  CHECK(ds.files(1).id == "b_1_2");
  CHECK(ds.files(2).id == "c_b_1_2");
  CHECK(ds.files(2).real.filename() == "c_b.png");
  CHECK(ds.files(2).mask.filename() == "c_b_1.png");

  auto reason_for = [&](const std::string& id) {
    for (const LoadIssue& i : ds.skipped())
      if (i.id == id) return i.reason;
    return std::string();
  };
  CHECK(reason_for("bad_1_2").find("dimension mismatch") != std::string::npos);
  CHECK(reason_for("ghost_1_1").find("orphan") != std::string::npos);
  CHECK(reason_for("noname").find("<image>_<mask>_<variant>") != std::string::npos);
  CHECK(reason_for("a_1_3").find("unsupported format") != std::string::npos);
  CHECK(reason_for("lonely").find("orphan") != std::string::npos);

  Sample s = ds.load(0);
  CHECK(s.id == "a_1_2");
  CHECK(s.real == random_pixels(3, 5, 6, 3));
  CHECK(s.composite == random_pixels(3, 5, 6, 4));
  CHECK(s.fg_ratio == doctest::Approx(4.0 / 30));
}

TEST_CASE("desk dataset") {
  const auto a = scratch_dir("data_desk_a");
  const auto b = scratch_dir("data_desk_b");
  Manifest m = make_desk_dataset(30, 64, 7, a);
  make_desk_dataset(30, 64, 7, b);
  REQUIRE(m.samples.size() == 30);

  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), a);
    REQUIRE(slurp(e.path()) == slurp(b / rel));
  }
  CHECK(files == 91);

  const auto c = scratch_dir("data_desk_c");
  make_desk_dataset(30, 64, 8, c);
  CHECK(slurp(a / "manifest.json") != slurp(c / "manifest.json"));

  auto j = nlohmann::json::parse(slurp(a / "manifest.json"));
  REQUIRE(j.is_array());
  REQUIRE(j.size() == 30);
  for (const char* key : {"id", "real", "composite", "mask", "fg_ratio"})
    CHECK(j[0].contains(key));

  Dataset ds = load_dataset(a);
  REQUIRE(ds.size() == 30);
  CHECK(ds.skipped().empty());
  std::array<int, 3> per_bucket{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Sample s = ds.load(i);
    CHECK(s.id == m.samples[i].id);
    CHECK(s.fg_ratio == doctest::Approx(m.samples[i].fg_ratio).epsilon(1e-15));
    REQUIRE(s.fg_ratio > 0);
    ++per_bucket[objectives::bucketize(s.fg_ratio).index];
    background_matches(s);
    const Real p = objectives::psnr(s.composite, s.real);
    CHECK(std::isfinite(p));
    CHECK(p < objectives::kPsnrCap);
  }
  for (int k : per_bucket) CHECK(k == 10);

  CHECK_THROWS_AS(make_desk_dataset(0, 64, 1, a), ValidationError);
  std::ofstream(a / "blocker") << "file";
  CHECK_THROWS_AS(make_desk_dataset(2, 16, 1, a / "blocker" / "sub"), IoError);
}
