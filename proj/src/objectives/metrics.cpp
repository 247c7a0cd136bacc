#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "harmony/objectives.hpp"

namespace harmony::objectives {

namespace {

void check_images(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& p = a.shape();
  const Shape& t = b.shape();
  if (p == t) return;
  const std::string ctx = std::string(op) + ": " + p.str() + " vs " + t.str();
  if (p.n != t.n) throw DimensionError("batch", ctx);
  if (p.c != t.c) throw DimensionError("channels", ctx);
  if (p.h != t.h) throw DimensionError("height", ctx);
  throw DimensionError("width", ctx);
}

std::string fixed(Real v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string center(const std::string& s, std::size_t width) {
  if (s.size() >= width) return s;
  const std::size_t left = (width - s.size()) / 2;
  return std::string(left, ' ') + s + std::string(width - s.size() - left, ' ');
}

}  // namespace

Real mse_metric(const Tensor& pred, const Tensor& target) {
  check_images(pred, target, "mse_metric");
  Real sq = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Real d = pred[i] - target[i];
    sq += d * d;
  }
  return sq / static_cast<Real>(pred.size());
}

ForegroundMse fmse_metric(const Tensor& pred, const Tensor& target,
                          const Tensor& mask) {
  check_images(pred, target, "fmse_metric");
  const Shape& s = pred.shape();
  const Shape& ms = mask.shape();
  if (ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w) {
    throw DimensionError(ms.c != 1 ? "channels" : "height",
                         "fmse_metric: mask " + ms.str() + " vs image " + s.str());
  }
  Real sq = 0;
  std::size_t count = 0;
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      if (m[i] < 0.5) continue;
      ++count;
      for (int c = 0; c < s.c; ++c) {
        const Real d = pred.plane(n, c)[i] - target.plane(n, c)[i];
        sq += d * d;
      }
    }
  }
  if (count == 0) return {0, true};
  return {sq / (static_cast<Real>(count) * s.c), false};
}

Real psnr_from_mse(Real mse, Real peak) {
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10 * std::log10(peak * peak / mse));
}

Real psnr(const Tensor& pred, const Tensor& target, Real peak) {
  return psnr_from_mse(mse_metric(pred, target), peak);
}

const Bucket& bucketize(Real fg_ratio) {
  if (!(fg_ratio >= 0 && fg_ratio <= 1)) {
    throw ValidationError("bucketize: foreground ratio " + std::to_string(fg_ratio) +
                          " outside [0, 1]");
  }
  for (const Bucket& b : kBuckets) {
    if (fg_ratio < b.upper) return b;
  }
  return kBuckets.back();
}

MetricReport aggregate(std::vector<SampleRecord> records) {
  if (records.empty()) throw ValidationError("aggregate: no sample records");
  std::stable_sort(records.begin(), records.end(),
                   [](const SampleRecord& a, const SampleRecord& b) { return a.id < b.id; });
  MetricReport r;
  for (const Bucket& b : kBuckets) {
    r.buckets[b.index] = BucketStats{b.label, b.lower, b.upper};
  }
  r.overall = BucketStats{"0%-100%", 0, 1};
  for (const SampleRecord& s : records) {
    for (BucketStats* t : {&r.buckets[bucketize(s.fg_ratio).index], &r.overall}) {
      ++t->count;
      t->mse += s.mse;
      t->fmse += s.fmse;
      t->psnr += s.psnr;
    }
  }
  for (BucketStats* t : {&r.buckets[0], &r.buckets[1], &r.buckets[2], &r.overall}) {
    if (t->count == 0) continue;
    const Real n = static_cast<Real>(t->count);
    t->mse /= n;
    t->fmse /= n;
    t->psnr /= n;
  }
  r.samples = std::move(records);
  return r;
}

std::string report_json(const MetricReport& report) {
  using nlohmann::ordered_json;
  auto stats = [](const BucketStats& b) {
    return ordered_json{{"range", b.label}, {"lower", b.lower}, {"upper", b.upper},
                        {"count", b.count}, {"mse", b.mse},     {"fmse", b.fmse},
                        {"psnr", b.psnr}};
  };
  ordered_json samples = ordered_json::array();
  for (const SampleRecord& s : report.samples) {
    samples.push_back({{"id", s.id},
                       {"fg_ratio", s.fg_ratio},
                       {"bucket", bucketize(s.fg_ratio).label},
                       {"mse", s.mse},
                       {"fmse", s.fmse},
                       {"psnr", s.psnr},
                       {"empty_mask", s.empty_mask}});
  }
  ordered_json buckets = ordered_json::array();
  for (const BucketStats& b : report.buckets) buckets.push_back(stats(b));
  ordered_json out{{"samples", samples}, {"buckets", buckets}, {"overall", stats(report.overall)}};
  return out.dump(2) + "\n";
}

std::string report_table(const MetricReport& report) {
  constexpr std::size_t kLabel = 18;
  constexpr std::size_t kCell = 10;
  std::vector<const BucketStats*> cols;
  for (const BucketStats& b : report.buckets) cols.push_back(&b);
  cols.push_back(&report.overall);

  std::ostringstream os;
  os << std::string(kLabel, ' ');
  for (const BucketStats* c : cols) os << "|" << center(c->label, 2 * kCell);
  os << "\n" << std::string(kLabel, ' ');
  for (std::size_t i = 0; i < cols.size(); ++i) {
    os << "|" << pad_left("MSE", kCell - 1) << " " << pad_left("fMSE", kCell - 1) << " ";
  }
  os << "\n" << std::string(kLabel + cols.size() * (2 * kCell + 1), '-') << "\n";
  os << std::string("harmonized").append(kLabel - 10, ' ');
  for (const BucketStats* c : cols) {
    os << "|" << pad_left(fixed(c->mse), kCell - 1) << " " << pad_left(fixed(c->fmse), kCell - 1)
       << " ";
  }
  os << "\n" << std::string("samples").append(kLabel - 7, ' ');
  for (const BucketStats* c : cols) os << "|" << center(std::to_string(c->count), 2 * kCell);
  os << "\n" << std::string("PSNR (dB)").append(kLabel - 9, ' ');
  for (const BucketStats* c : cols) os << "|" << center(fixed(c->psnr), 2 * kCell);
  os << "\n";
  return os.str();
}

}  // namespace harmony::objectives
