#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "harmony/model.hpp"
#include "support.hpp"

using namespace harmony;
using namespace harmony::model;
using harmony::testing::conv_oracle;
using harmony::testing::random_tensor;
using harmony::testing::scratch_dir;

namespace {

ArchitectureConfig small_config() {
  ArchitectureConfig c;
  c.input_size = 16;
  c.base_width = 4;
  c.depth = 2;
  return c;
}

Tensor random_mask(int n, int size, std::uint64_t seed) {
  Tensor m = random_tensor({n, 1, size, size}, seed, 0, 1);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] > 0.6 ? 1.0 : 0.0;
  return m;
}

}  // namespace

TEST_CASE("build produces the documented stage shapes") {
  ArchitectureConfig c;  // depth 4, base width 16, input 64
  auto m = HarmonizationModel::build(c, 3);
  CHECK(m.parameter("encoder.0.weight").value.shape() == Shape{16, 4, 3, 3});
  CHECK(m.parameter("encoder.3.weight").value.shape() == Shape{128, 64, 3, 3});
  // Toy backbone (stride 4, 32 channels) joins stage 2 at 16x16.
  CHECK(c.resolved_injection_stage() == 2);
  CHECK(m.parameter("encoder.2.weight").value.shape() == Shape{64, 32 + 32, 3, 3});
  CHECK(m.parameter("head.rgb.weight").value.shape() == Shape{3, 16, 1, 1});
  CHECK(m.parameter("head.mask.weight").value.shape() == Shape{1, 16, 1, 1});
  CHECK(m.parameter("backbone.stem.rgb.weight").value.shape() == Shape{16, 3, 3, 3});
  CHECK(m.parameter("backbone.stem.mask.weight").value.shape() == Shape{16, 1, 3, 3});

  Tape t;
  const auto r = m.forward(t, random_tensor({1, 3, 64, 64}, 1, 0, 1), random_mask(1, 64, 2));
  CHECK(r.bottleneck.shape() == Shape{1, 128, 4, 4});
  CHECK(r.prediction.shape() == Shape{1, 3, 64, 64});
  CHECK(r.attention.shape() == Shape{1, 1, 64, 64});
  CHECK(r.backbone->shape() == Shape{1, 32, 16, 16});
}

TEST_CASE("initialization is deterministic and follows the stated scheme") {
  const auto c = small_config();
  auto a = HarmonizationModel::build(c, 11);
  auto b = HarmonizationModel::build(c, 11);
  auto other = HarmonizationModel::build(c, 12);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& p = a.parameters()[i];
    CHECK(p.name == b.parameters()[i].name);
    CHECK(p.value == b.parameters()[i].value);
    if (!(p.value == other.parameters()[i].value)) differs = true;
    if (p.name == "head.mask.bias") {
      CHECK(p.value == Tensor(p.value.shape(), kAttentionBiasInit));
    } else if (p.name.ends_with(".bias")) {
      CHECK(p.value == Tensor(p.value.shape()));
    } else if (p.name.starts_with("backbone.stem.mask") || p.name == "head.mask.weight") {
      CHECK(p.value == Tensor(p.value.shape()));
    } else {
      const Shape s = p.value.shape();
      const Real bound = std::sqrt(6.0 / (s.c * s.h * s.w));
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        CHECK(std::abs(p.value[k]) <= bound);
      }
    }
  }
  CHECK(differs);
}

TEST_CASE("parameter registry and learning-rate multipliers") {
  auto m = HarmonizationModel::build(small_config(), 1);
  CHECK(m.has_parameter("decoder.0.bias"));
  CHECK_FALSE(m.has_parameter("decoder.9.bias"));
  CHECK_THROWS_AS(m.parameter("nope"), ValidationError);
  CHECK(m.parameter("backbone.stem.rgb.weight").lr_multiplier == 0.1);
  CHECK(m.parameter("backbone.conv2.bias").lr_multiplier == 0.1);
  CHECK(m.parameter("backbone.stem.mask.weight").lr_multiplier == 1.0);
  CHECK(m.parameter("encoder.0.weight").lr_multiplier == 1.0);

  ArchitectureConfig blind = small_config();
  blind.foreground_aware_backbone = false;
  CHECK_FALSE(HarmonizationModel::build(blind, 1).has_parameter("backbone.stem.mask.weight"));
  ArchitectureConfig none = small_config();
  none.backbone = BackboneKind::none;
  CHECK_FALSE(HarmonizationModel::build(none, 1).has_parameter("backbone.conv2.weight"));
  ArchitectureConfig dih = small_config();
  dih.blend_head = false;
  CHECK_FALSE(HarmonizationModel::build(dih, 1).has_parameter("head.mask.weight"));
}

TEST_CASE("invalid configs list every violated constraint") {
  ArchitectureConfig c;
  c.input_size = 60;
  c.injection_stage = 7;
  try {
    c.validate();
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("divisible by 2^depth") != std::string::npos);
    CHECK(msg.find("injection_stage") != std::string::npos);
  }
  CHECK_THROWS_AS(HarmonizationModel::build(c, 0), ValidationError);
  ArchitectureConfig ok;
  CHECK(ok.violations().empty());
  CHECK(backbone_from_string(to_string(BackboneKind::precomputed)) == BackboneKind::precomputed);
  CHECK_THROWS_AS(backbone_from_string("hrnet"), ValidationError);
}

TEST_CASE("forward validates its inputs") {
  auto m = HarmonizationModel::build(small_config(), 1);
  Tape t;
  const Tensor img = random_tensor({1, 3, 16, 16}, 1, 0, 1);
  Tensor bad_mask(Shape{1, 1, 16, 16}, 0.5);
  bad_mask[7] = 1.5;
  CHECK_THROWS_AS(m.forward(t, img, bad_mask), ValidationError);
  CHECK_THROWS_AS(m.forward(t, random_tensor({1, 3, 32, 32}, 1), Tensor(Shape{1, 1, 32, 32})),
                  DimensionError);
  CHECK_THROWS_AS(m.forward(t, img, Tensor(Shape{1, 1, 8, 16})), DimensionError);
  CHECK_THROWS_AS(m.forward(t, random_tensor({1, 4, 16, 16}, 1), Tensor(Shape{1, 1, 16, 16})),
                  DimensionError);
}

TEST_CASE("blend head: forced attention passes the image or d_rgb through") {
  auto m = HarmonizationModel::build(small_config(), 5);
  const Tensor img = random_tensor({2, 3, 16, 16}, 6, -2, 2);
  const Tensor mask = random_mask(2, 16, 7);
  m.parameter("head.mask.weight").value.fill(0);

  m.parameter("head.mask.bias").value.fill(-20);
  {
    Tape t;
    const auto r = m.forward(t, img, mask);
    CHECK(max_abs_diff(r.prediction.value(), img) < 1e-6);
  }
  m.parameter("head.mask.bias").value.fill(20);
  {
    Tape t;
    const auto r = m.forward(t, img, mask);
    CHECK(max_abs_diff(r.prediction.value(), r.rgb.value()) < 1e-6);
  }
}

TEST_CASE("prediction - image = attention * (rgb - image) on random models") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = HarmonizationModel::build(small_config(), seed);
    // Random head so attention is far from constant.
    m.parameter("head.mask.weight").value = random_tensor({1, 4, 1, 1}, seed + 100, -3, 3);
    const Tensor img = random_tensor({2, 3, 16, 16}, seed + 1, -2, 2);
    Tape t;
    const auto r = m.forward(t, img, random_mask(2, 16, seed + 2));
    const Tensor& pred = r.prediction.value();
    const Tensor& rgb = r.rgb.value();
    const Tensor& att = r.attention.value();
    Real worst = 0;
    for (int n = 0; n < 2; ++n) {
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 16; ++y) {
          for (int x = 0; x < 16; ++x) {
            const Real a = att.at(n, 0, y, x);
            CHECK(a > 0.0);
            CHECK(a < 1.0);
            const Real lhs = pred.at(n, c, y, x) - img.at(n, c, y, x);
            const Real rhs = a * (rgb.at(n, c, y, x) - img.at(n, c, y, x));
            worst = std::max(worst, std::abs(lhs - rhs));
          }
        }
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("without the blend head the prediction is d_rgb(x)") {
  ArchitectureConfig c = small_config();
  c.blend_head = false;
  auto m = HarmonizationModel::build(c, 2);
  Tape t;
  const auto r = m.forward(t, random_tensor({1, 3, 16, 16}, 1), random_mask(1, 16, 2));
  CHECK(r.prediction.value() == r.rgb.value());
  CHECK(r.attention.value() == Tensor(Shape{1, 1, 16, 16}, 1.0));
}

TEST_CASE("fuse_mask_stem sums the two branches") {
  Tape t;
  const Tensor img = random_tensor({2, 3, 8, 8}, 1);
  const Tensor msk = random_mask(2, 8, 2);
  const kernels::ConvGeometry down{2, 1};
  const Tensor wr = random_tensor({5, 3, 3, 3}, 3), br = random_tensor({1, 5, 1, 1}, 4);
  const Tensor wm = random_tensor({5, 1, 3, 3}, 5), bm = random_tensor({1, 5, 1, 1}, 6);
  const ConvVars rgb{t.constant(wr), t.constant(br), down};
  const Tensor rgb_only = conv_oracle(img, wr, br, 2, 1);

  SUBCASE("zero mask branch is foreground-blind") {
    const ConvVars zero{t.constant(Tensor(wm.shape())), t.constant(Tensor(bm.shape())), down};
    const Var out = fuse_mask_stem(rgb, zero, t.constant(img), t.constant(msk));
    CHECK(max_abs_diff(out.value(), ad::conv2d(t.constant(img), rgb.weight, rgb.bias, down).value()) == 0);
  }
  SUBCASE("all-zero mask with zero bias adds nothing") {
    const ConvVars m{t.constant(wm), t.constant(Tensor(bm.shape())), down};
    const Var out = fuse_mask_stem(rgb, m, t.constant(img), t.constant(Tensor(msk.shape())));
    CHECK(max_abs_diff(out.value(), rgb_only) < 1e-12);
  }
  SUBCASE("random weights match two oracle convolutions") {
    const ConvVars m{t.constant(wm), t.constant(bm), down};
    const Var out = fuse_mask_stem(rgb, m, t.constant(img), t.constant(msk));
    Tensor expect = rgb_only;
    expect.add_inplace(conv_oracle(msk, wm, bm, 2, 1));
    CHECK(max_abs_diff(out.value(), expect) < 1e-10);
  }
  SUBCASE("channel mismatch") {
    const ConvVars m{t.constant(random_tensor({4, 1, 3, 3}, 7)),
                     t.constant(Tensor(Shape{1, 4, 1, 1})), down};
    CHECK_THROWS_AS(fuse_mask_stem(rgb, m, t.constant(img), t.constant(msk)), DimensionError);
  }
}

TEST_CASE("inject_features resizes then concatenates") {
  Tape t;
  SUBCASE("matching resolution is a pure concat") {
    const Tensor e = random_tensor({1, 64, 8, 8}, 1), b = random_tensor({1, 32, 8, 8}, 2);
    const Var out = inject_features(t.constant(e), t.constant(b));
    CHECK(out.shape() == Shape{1, 96, 8, 8});
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        CHECK(out.value().at(0, 10, y, x) == e.at(0, 10, y, x));
        CHECK(out.value().at(0, 64 + 5, y, x) == b.at(0, 5, y, x));
      }
    }
  }
  SUBCASE("8x8 features join a 16x16 stage by index mapping") {
    const Tensor e = random_tensor({2, 3, 16, 16}, 3), b = random_tensor({2, 2, 8, 8}, 4);
    const Tensor out = inject_features(t.constant(e), t.constant(b)).value();
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 16; ++y)
          for (int x = 0; x < 16; ++x)
            CHECK(out.at(n, 3 + c, y, x) == b.at(n, c, y / 2, x / 2));
  }
  SUBCASE("batch mismatch") {
    CHECK_THROWS_AS(inject_features(t.constant(random_tensor({2, 3, 8, 8}, 1)),
                                    t.constant(random_tensor({1, 2, 8, 8}, 2))),
                    DimensionError);
  }
}

TEST_CASE("zero-initialized mask conv leaves the backbone mask-blind") {
  auto m = HarmonizationModel::build(small_config(), 9);
  const Tensor img = random_tensor({2, 3, 16, 16}, 1, 0, 1);
  const Tensor mask = random_mask(2, 16, 2);
  const Tensor other_bb = random_mask(2, 16, 3);
  const Tensor ones(Shape{2, 1, 16, 16}, 1.0);

  Tape t1, t2, t3, t4;
  const auto base = m.forward(t1, img, mask);
  const auto varied = m.forward(t2, img, mask, {.backbone_mask = &other_bb});
  const auto full = m.forward(t3, img, mask, {.backbone_mask = &ones});
  CHECK(base.backbone->value() == varied.backbone->value());
  CHECK(base.backbone->value() == full.backbone->value());
  CHECK(base.prediction.value() == varied.prediction.value());
  // The mask concatenated into the encoder input still matters.
  const auto enc = m.forward(t4, img, other_bb);
  CHECK(max_abs_diff(enc.prediction.value(), base.prediction.value()) > 0);

  // Once mask_conv carries weight, the backbone sees the mask.
  m.parameter("backbone.stem.mask.weight").value = random_tensor({4, 1, 3, 3}, 10);
  Tape t5, t6;
  const auto a = m.forward(t5, img, mask);
  const auto b = m.forward(t6, img, mask, {.backbone_mask = &other_bb});
  CHECK(max_abs_diff(a.backbone->value(), b.backbone->value()) > 0);
}

TEST_CASE("precomputed features: file round trip and validation") {
  const auto dir = scratch_dir("model_features");
  Tensor f = random_tensor({1, 6, 4, 4}, 21);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(f[i]);
  save_precomputed_features(feature_path(dir, "a_1_1"), f);
  CHECK(load_precomputed_features(dir, "a_1_1") == f);
  CHECK(load_precomputed_features(dir, "a_1_1", 6) == f);

  try {
    load_precomputed_features(dir, "a_1_1", 8);
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("a_1_1") != std::string::npos);
    CHECK(msg.find("6 channels") != std::string::npos);
    CHECK(msg.find("expected 8") != std::string::npos);
  }
  try {
    load_precomputed_features(dir, "missing_2_1");
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("missing_2_1") != std::string::npos);
  }
  CHECK_THROWS_AS(save_precomputed_features(dir / "x.hfeat", random_tensor({2, 1, 2, 2}, 1)),
                  DimensionError);

  // Header and payload disagree.
  {
    std::string bytes = "HFEAT1";
    for (std::uint32_t v : {2u, 2u, 2u}) bytes.append(reinterpret_cast<const char*>(&v), 4);
    bytes.append(5, '\0');
    std::ofstream(feature_path(dir, "short"), std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_precomputed_features(dir, "short"), IoError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero precomputed features are indistinguishable only behind zero consumer weights") {
  ArchitectureConfig c = small_config();
  c.backbone = BackboneKind::precomputed;
  c.precomputed_channels = 3;
  c.precomputed_stride = 4;
  auto m = HarmonizationModel::build(c, 4);
  const int stage = c.resolved_injection_stage();
  const Tensor img = random_tensor({1, 3, 16, 16}, 1, 0, 1);
  const Tensor mask = random_mask(1, 16, 2);
  const Tensor zeros(Shape{1, 3, 4, 4});
  const Tensor feats = random_tensor({1, 3, 4, 4}, 3);

  auto predict_with = [&](const Tensor& f) {
    return m.predict(img, mask, {.backbone_features = &f}).prediction;
  };
  CHECK(max_abs_diff(predict_with(zeros), predict_with(feats)) > 0);

  // Zero the weights that read the injected channels.
  Tensor& w = m.parameter("encoder." + std::to_string(stage) + ".weight").value;
  const Shape ws = w.shape();
  for (int o = 0; o < ws.n; ++o)
    for (int ch = ws.c - 3; ch < ws.c; ++ch)
      for (int y = 0; y < ws.h; ++y)
        for (int x = 0; x < ws.w; ++x) w.at(o, ch, y, x) = 0;
  CHECK(predict_with(zeros) == predict_with(feats));

  const Tensor wrong(Shape{1, 5, 4, 4});
  CHECK_THROWS_AS(m.predict(img, mask, {.backbone_features = &wrong}), DimensionError);
  CHECK_THROWS_AS(m.predict(img, mask), ContractError);
}

TEST_CASE("the model is fully convolutional") {
  ArchitectureConfig c = small_config();
  auto small = HarmonizationModel::build(c, 8);
  c.input_size *= 2;
  auto big = HarmonizationModel::build(c, 8);
  REQUIRE(small.parameters().size() == big.parameters().size());
  for (std::size_t i = 0; i < small.parameters().size(); ++i) {
    CHECK(small.parameters()[i].value == big.parameters()[i].value);
  }
  const auto p = big.predict(random_tensor({1, 3, 32, 32}, 1), random_mask(1, 32, 2));
  CHECK(p.prediction.shape() == Shape{1, 3, 32, 32});
  CHECK(p.attention.shape() == Shape{1, 1, 32, 32});
}

TEST_CASE("predict matches the training forward bit for bit") {
  auto m = HarmonizationModel::build(small_config(), 13);
  const Tensor img = random_tensor({2, 3, 16, 16}, 1);
  const Tensor mask = random_mask(2, 16, 2);
  Tape t;
  const auto r = m.forward(t, img, mask);
  const auto p = m.predict(img, mask);
  CHECK(p.prediction == r.prediction.value());
  CHECK(p.attention == r.attention.value());
  CHECK(m.predict(img, mask).prediction == p.prediction);
  CHECK(r.prediction.value().all_finite());
}

TEST_CASE("every parameter receives gradient after one backward pass") {
  auto m = HarmonizationModel::build(small_config(), 17);
  const Tensor img = random_tensor({2, 3, 16, 16}, 1, -2, 2);
  const Tensor target = random_tensor({2, 3, 16, 16}, 3, -2, 2);
  Tape t;
  const auto r = m.forward(t, img, random_mask(2, 16, 2));
  const Var diff = ad::add(r.prediction, ad::scalar_affine(t.constant(target), -1, 0));
  t.backward(ad::sum(ad::mul(diff, diff)));
  for (const auto& p : m.parameters()) {
    CAPTURE(p.name);
    bool nonzero = false;
    for (std::size_t i = 0; i < p.grad.size(); ++i) nonzero = nonzero || p.grad[i] != 0;
    CHECK(nonzero);
  }
}

TEST_CASE("whole-model gradients match finite differences") {
  ArchitectureConfig c;
  c.input_size = 8;
  c.base_width = 2;
  c.depth = 2;
  auto m = HarmonizationModel::build(c, 23);
  // Nonzero mask conv so its gradient path is exercised as well.
  m.parameter("backbone.stem.mask.weight").value = random_tensor({2, 1, 3, 3}, 24, -0.5, 0.5);
  const Tensor img = random_tensor({2, 3, 8, 8}, 25, -2, 2);
  const Tensor mask = random_mask(2, 8, 26);
  const Tensor proj = random_tensor({2, 3, 8, 8}, 27);
  std::vector<Parameter*> params;
  for (auto& p : m.parameters()) params.push_back(&p);
  const Real err = ad::grad_check_parameters(
      [&](Tape& t) {
        const auto r = m.forward(t, img, mask);
        return ad::sum(ad::mul(r.prediction, t.constant(proj)));
      },
      params, {.max_coords = 12, .seed = 4});
  CHECK(err < 1e-4);
}
