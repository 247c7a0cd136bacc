#include <cmath>
#include <random>

#include "doctest.h"
#include "harmony/objectives.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace harmony;
using namespace harmony::objectives;
using harmony::ad::Tape;
using harmony::testing::random_tensor;

namespace {

Real loss_value(const Tensor& pred, const Tensor& target, const Tensor& mask,
                Real a_min = 100) {
  Tape t;
  return fn_mse(t.constant(pred), t.constant(target), mask, a_min).value()[0];
}

// Brute-force evaluation written from the formula, one sample at a time.
Real fn_mse_oracle(const Tensor& pred, const Tensor& target, const Tensor& mask,
                   Real a_min) {
  const Shape s = pred.shape();
  Real total = 0;
  for (int n = 0; n < s.n; ++n) {
    Real num = 0;
    Real area = 0;
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        area += mask.at(n, 0, y, x);
        Real pixel = 0;
        for (int c = 0; c < s.c; ++c) {
          const Real d = pred.at(n, c, y, x) - target.at(n, c, y, x);
          pixel += d * d;
        }
        num += pixel;
      }
    }
    total += num / (area > a_min ? area : a_min);
  }
  return total / s.n;
}

Tensor binary_mask(const Shape& s, Real keep, std::uint64_t seed) {
  Tensor m = random_tensor(s, seed, 0, 1);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] < keep ? 1.0 : 0.0;
  return m;
}

// Pads every plane with `extra` columns on the right, filled with `v`.
Tensor pad_right(const Tensor& t, int extra, Real v) {
  const Shape s = t.shape();
  Tensor out(Shape{s.n, s.c, s.h, s.w + extra}, v);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, x);
  return out;
}

}  // namespace

TEST_CASE("fn_mse examples") {
  const Tensor a = random_tensor({2, 3, 8, 8}, 1);
  CHECK(loss_value(a, a, binary_mask({2, 1, 8, 8}, 0.5, 2)) == 0.0);

  // Full 16x16 mask, every pixel-channel differs by 0.5: 192 / 256.
  const Tensor p(Shape{1, 3, 16, 16}, 0.5);
  const Tensor t(Shape{1, 3, 16, 16}, 0.0);
  CHECK(loss_value(p, t, Tensor(Shape{1, 1, 16, 16}, 1.0)) == 0.75);

  // Area 4, squared differences totalling 12 inside the foreground.
  Tensor mask(Shape{1, 1, 16, 16});
  Tensor pred(Shape{1, 3, 16, 16});
  for (int y = 3; y < 5; ++y) {
    for (int x = 7; x < 9; ++x) {
      mask.at(0, 0, y, x) = 1;
      for (int c = 0; c < 3; ++c) pred.at(0, c, y, x) = 1;
    }
  }
  CHECK(loss_value(pred, t, mask) == doctest::Approx(0.12).epsilon(1e-15));
}

TEST_CASE("fn_mse matches the brute-force oracle on random instances") {
  std::mt19937_64 rng(99);
  int clamped = 0;
  for (int i = 0; i < 50; ++i) {
    const int n = 1 + static_cast<int>(rng() % 3);
    const int h = 4 + static_cast<int>(rng() % 13);
    const int w = 4 + static_cast<int>(rng() % 13);
    const Real keep = std::uniform_real_distribution<Real>(0, 1)(rng);
    const Tensor pred = random_tensor({n, 3, h, w}, rng(), -3, 3);
    const Tensor target = random_tensor({n, 3, h, w}, rng(), -3, 3);
    Tensor mask = binary_mask({n, 1, h, w}, keep, rng());
    if (i % 5 == 0) mask = random_tensor({n, 1, h, w}, rng(), 0, 1);  // soft masks
    for (int k = 0; k < n; ++k) {
      Real area = 0;
      for (std::size_t j = 0; j < mask.shape().plane(); ++j) area += mask.plane(k, 0)[j];
      if (area < 100) ++clamped;
    }
    const Real a_min = i % 7 == 0 ? 10.0 : 100.0;
    const Real got = loss_value(pred, target, mask, a_min);
    const Real want = fn_mse_oracle(pred, target, mask, a_min);
    CHECK(std::abs(got - want) <= 1e-10 * std::max(Real{1}, std::abs(want)));
  }
  CHECK(clamped > 10);
}

TEST_CASE("fn_mse ignores extra zero-error background once the foreground is large") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor pred = random_tensor({1, 3, 16, 16}, seed, -1, 1);
    const Tensor target = random_tensor({1, 3, 16, 16}, seed + 50, -1, 1);
    Tensor mask(Shape{1, 1, 16, 16});
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 10; ++x) mask.at(0, 0, y, x) = 1;  // area 120
    const Real before = loss_value(pred, target, mask);
    const Tensor pp = pad_right(pred, 9, 0.25);
    const Tensor tp = pad_right(target, 9, 0.25);
    const Tensor mp = pad_right(mask, 9, 0.0);
    CHECK(loss_value(pp, tp, mp) == before);

    Tape t;
    const Real mse_before = mse_loss(t.constant(pred), t.constant(target)).value()[0];
    const Real mse_after = mse_loss(t.constant(pp), t.constant(tp)).value()[0];
    CHECK(mse_after < mse_before);
  }
}

TEST_CASE("fn_mse times the denominator is the squared-error sum") {
  // A power-of-two area keeps the round trip exact.
  const Tensor pred = random_tensor({1, 3, 16, 16}, 3);
  const Tensor target = random_tensor({1, 3, 16, 16}, 4);
  const Tensor full(Shape{1, 1, 16, 16}, 1.0);
  Real sq = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) sq += (pred[i] - target[i]) * (pred[i] - target[i]);
  CHECK(loss_value(pred, target, full) * 256 == sq);
  // Clamped: area 4 < a_min.
  Tensor small(Shape{1, 1, 16, 16});
  for (int i = 0; i < 4; ++i) small[i] = 1;
  CHECK(loss_value(pred, target, small) * 100 == doctest::Approx(sq).epsilon(1e-14));
}

TEST_CASE("loss gradients match finite differences") {
  // The losses reduce to a scalar, so the central difference carries the
  // rounding of the whole sum; pred and target are drawn from disjoint
  // ranges to keep every gradient entry well above that floor.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor mask = binary_mask({2, 1, 6, 5}, 0.4, seed + 1);
    const Real err = ad::grad_check(
        [&](Tape&, std::span<const ad::Var> v) { return fn_mse(v[0], v[1], mask, 7.0); },
        {random_tensor({2, 3, 6, 5}, seed + 2, 0.5, 1.5),
         random_tensor({2, 3, 6, 5}, seed + 3, -1.5, -0.5)},
        {.seed = seed});
    CHECK(err < 1e-6);
    const Real err_mse = ad::grad_check(
        [&](Tape&, std::span<const ad::Var> v) { return mse_loss(v[0], v[1]); },
        {random_tensor({2, 3, 6, 5}, seed + 4, 0.5, 1.5),
         random_tensor({2, 3, 6, 5}, seed + 5, -1.5, -0.5)},
        {.seed = seed});
    CHECK(err_mse < 1e-6);
  }
}

TEST_CASE("loss validation") {
  Tape t;
  const ad::Var p = t.constant(random_tensor({1, 3, 4, 4}, 1));
  Tensor mask(Shape{1, 1, 4, 4}, 0.5);
  mask[3] = -0.25;
  CHECK_THROWS_AS(fn_mse(p, p, mask, 100), ValidationError);
  CHECK_THROWS_AS(fn_mse(p, p, Tensor(Shape{1, 1, 4, 4}), 0), ValidationError);
  CHECK_THROWS_AS(fn_mse(p, p, Tensor(Shape{1, 1, 4, 5}), 100), DimensionError);
  CHECK_THROWS_AS(fn_mse(p, t.constant(random_tensor({1, 3, 4, 5}, 2)), mask, 100),
                  DimensionError);
  CHECK_THROWS_AS((LossConfig{LossKind::fn_mse, -1}.validate()), ValidationError);
  CHECK(loss_from_string("mse") == LossKind::mse);
  CHECK(to_string(loss_from_string("fn_mse")) == "fn_mse");
  CHECK_THROWS_AS(loss_from_string("l1"), ValidationError);

  const Tensor a = random_tensor({1, 3, 4, 4}, 5);
  const Tensor b = random_tensor({1, 3, 4, 4}, 6);
  const Tensor full(Shape{1, 1, 4, 4}, 1.0);
  CHECK(loss({LossKind::mse}, t.constant(a), t.constant(b), full).value()[0] ==
        mse_loss(t.constant(a), t.constant(b)).value()[0]);
  CHECK(loss({LossKind::fn_mse, 2.0}, t.constant(a), t.constant(b), full).value()[0] ==
        fn_mse(t.constant(a), t.constant(b), full, 2.0).value()[0]);
}

TEST_CASE("mse and fmse metrics") {
  const Tensor a = random_tensor({1, 3, 5, 7}, 1, 0, 255);
  CHECK(mse_metric(a, a) == 0);
  Tensor shifted = a;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 1;
  CHECK(mse_metric(shifted, a) == doctest::Approx(1.0).epsilon(1e-12));

  const Tensor b = random_tensor({1, 3, 5, 7}, 2, 0, 255);
  Real sq = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) sq += std::pow(a.at(0, c, y, x) - b.at(0, c, y, x), 2);
  CHECK(std::abs(mse_metric(a, b) - sq / 105) < 1e-9);

  const Tensor mask = binary_mask({1, 1, 5, 7}, 0.5, 3);
  Real fsq = 0;
  int count = 0;
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 7; ++x) {
      if (mask.at(0, 0, y, x) == 0) continue;
      ++count;
      for (int c = 0; c < 3; ++c) fsq += std::pow(a.at(0, c, y, x) - b.at(0, c, y, x), 2);
    }
  }
  CHECK(std::abs(fmse_metric(a, b, mask).value - fsq / (3 * count)) < 1e-9);
  CHECK(std::abs(mse_metric(a, b) - fmse_metric(a, b, Tensor(Shape{1, 1, 5, 7}, 1.0)).value) <
        1e-9);
  CHECK_THROWS_AS(mse_metric(a, random_tensor({1, 3, 5, 6}, 1)), DimensionError);

  SUBCASE("background-only differences do not count") {
    Tensor p(Shape{1, 3, 4, 4}, 10), t(Shape{1, 3, 4, 4}, 10);
    Tensor m(Shape{1, 1, 4, 4});
    m.at(0, 0, 0, 0) = 1;
    t.at(0, 1, 2, 2) = 200;
    CHECK(fmse_metric(p, t, m).value == 0);
    CHECK_FALSE(fmse_metric(p, t, m).empty_mask);
  }
  SUBCASE("four foreground pixels with per-channel difference 2") {
    Tensor p(Shape{1, 3, 4, 4}, 0), t(Shape{1, 3, 4, 4}, 0);
    Tensor m(Shape{1, 1, 4, 4});
    for (int i = 0; i < 4; ++i) {
      m.at(0, 0, 1, i) = 1;
      for (int c = 0; c < 3; ++c) p.at(0, c, 1, i) = 2;
    }
    CHECK(fmse_metric(p, t, m).value == 4.0);
  }
  SUBCASE("empty mask") {
    const auto r = fmse_metric(a, b, Tensor(Shape{1, 1, 5, 7}));
    CHECK(r.value == 0);
    CHECK(r.empty_mask);
  }
}

TEST_CASE("psnr") {
  const Tensor a = random_tensor({1, 3, 4, 4}, 1, 0, 255);
  CHECK(psnr(a, a) == 100.0);
  CHECK(psnr_from_mse(1.0) == doctest::Approx(48.1308).epsilon(1e-3 / 48.1308));
  CHECK(std::abs(psnr_from_mse(1.0) - 10 * std::log10(65025.0)) < 1e-12);
  CHECK(std::abs(psnr_from_mse(65025.0)) < 1e-12);
  Real prev = psnr_from_mse(1e-5);
  for (Real mse = 2e-5; mse < 1e5; mse *= 1.7) {
    const Real cur = psnr_from_mse(mse);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("bucketize partitions [0, 1]") {
  CHECK(bucketize(0.03).index == 0);
  CHECK(bucketize(0.0).index == 0);
  CHECK(bucketize(0.05).index == 1);
  CHECK(bucketize(0.149999).index == 1);
  CHECK(bucketize(0.15).index == 2);
  CHECK(bucketize(1.0).index == 2);
  CHECK_THROWS_AS(bucketize(-0.01), ValidationError);
  CHECK_THROWS_AS(bucketize(1.01), ValidationError);
  CHECK_THROWS_AS(bucketize(std::nan("")), ValidationError);
  for (int i = 0; i <= 10000; ++i) {
    const Real r = i / 10000.0;
    int hits = 0;
    for (const Bucket& b : kBuckets) {
      const bool in = r >= b.lower && (r < b.upper || (b.upper == 1.0 && r == 1.0));
      hits += in;
      if (in) CHECK(bucketize(r).index == b.index);
    }
    CHECK(hits == 1);
  }
}

TEST_CASE("aggregate") {
  CHECK_THROWS_AS(aggregate({}), ValidationError);

  const SampleRecord one{"s1", 4.0, 9.0, 42.0, 0.3, false};
  const MetricReport single = aggregate({one});
  CHECK(single.overall.count == 1);
  CHECK(single.overall.mse == 4.0);
  CHECK(single.overall.fmse == 9.0);
  CHECK(single.overall.psnr == 42.0);
  CHECK(single.buckets[2].count == 1);
  CHECK(single.buckets[0].count == 0);

  const MetricReport two = aggregate({one, {"s0", 2.0, 5.0, 40.0, 0.01, false}});
  CHECK(two.overall.mse == 3.0);
  CHECK(two.overall.fmse == 7.0);
  CHECK(two.samples[0].id == "s0");

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<Real> u(0, 1);
  std::vector<SampleRecord> recs;
  for (int i = 0; i < 200; ++i) {
    recs.push_back({"r" + std::to_string(1000 + i), 100 * u(rng), 300 * u(rng), 30 + 10 * u(rng),
                    u(rng) * u(rng), false});
  }
  const MetricReport r = aggregate(recs);
  Real sum_mse[3] = {}, sum_fmse[3] = {}, all = 0;
  std::size_t counts[3] = {};
  for (const auto& s : recs) {
    const int b = s.fg_ratio < 0.05 ? 0 : s.fg_ratio < 0.15 ? 1 : 2;
    sum_mse[b] += s.mse;
    sum_fmse[b] += s.fmse;
    ++counts[b];
    all += s.mse;
  }
  std::size_t total = 0;
  Real weighted = 0;
  for (int b = 0; b < 3; ++b) {
    CHECK(r.buckets[b].count == counts[b]);
    CHECK(std::abs(r.buckets[b].mse - sum_mse[b] / counts[b]) < 1e-9);
    CHECK(std::abs(r.buckets[b].fmse - sum_fmse[b] / counts[b]) < 1e-9);
    total += r.buckets[b].count;
    weighted += r.buckets[b].mse * r.buckets[b].count;
  }
  CHECK(total == recs.size());
  CHECK(std::abs(r.overall.mse - all / recs.size()) < 1e-9);
  CHECK(std::abs(r.overall.mse - weighted / total) < 1e-9);
}

TEST_CASE("report layouts") {
  const MetricReport r = aggregate({{"a", 1, 2, 48, 0.02, false},
                                    {"b", 3, 4, 43, 0.10, false},
                                    {"c", 5, 6, 41, 0.50, true}});
  const auto j = nlohmann::json::parse(report_json(r));
  REQUIRE(j["buckets"].size() == 3);
  CHECK(j["buckets"][0]["range"] == "0%-5%");
  CHECK(j["buckets"][1]["range"] == "5%-15%");
  CHECK(j["buckets"][2]["range"] == "15%-100%");
  CHECK(j["overall"]["range"] == "0%-100%");
  CHECK(j["overall"]["count"] == 3);
  CHECK(j["samples"].size() == 3);
  CHECK(j["samples"][2]["empty_mask"] == true);
  CHECK(j["samples"][1]["bucket"] == "5%-15%");

  const std::string table = report_table(r);
  const std::string header = table.substr(0, table.find('\n'));
  int columns = 0;
  for (const char* label : {"0%-5%", "5%-15%", "15%-100%", "0%-100%"}) {
    CHECK(header.find(label) != std::string::npos);
    ++columns;
  }
  CHECK(columns == 4);
  CHECK(std::count(header.begin(), header.end(), '|') == 4);
  const std::string second = table.substr(header.size() + 1, table.find('\n', header.size() + 1) - header.size() - 1);
  std::size_t mse_cols = 0;
  for (std::size_t pos = 0; (pos = second.find("fMSE", pos)) != std::string::npos; ++pos) ++mse_cols;
  CHECK(mse_cols == 4);
}
