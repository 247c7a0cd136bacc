#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "harmony/autodiff.hpp"

namespace harmony::objectives {

using ad::Var;

enum class LossKind { mse, fn_mse };

std::string to_string(LossKind k);
LossKind loss_from_string(std::string_view s);

struct LossConfig {
  LossKind kind = LossKind::fn_mse;
  Real a_min = 100;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Per sample: sum over all pixels and channels of (pred - target)^2, divided
/// by max(a_min, sum of mask); then averaged over the batch.
Var fn_mse(const Var& pred, const Var& target, const Tensor& mask, Real a_min);

/// Mean of (pred - target)^2 over every element.
Var mse_loss(const Var& pred, const Var& target);

Var loss(const LossConfig& config, const Var& pred, const Var& target,
         const Tensor& mask);

// ---------------------------------------------------------------------------
// Evaluation metrics, on single images (1, C, H, W) in the 0-255 range.

Real mse_metric(const Tensor& pred, const Tensor& target);

struct ForegroundMse {
  Real value = 0;
  bool empty_mask = false;
};

/// MSE over pixels with mask >= 0.5, all channels. An empty foreground
/// yields 0 with `empty_mask` set.
ForegroundMse fmse_metric(const Tensor& pred, const Tensor& target,
                          const Tensor& mask);

constexpr Real kPsnrCap = 100.0;

Real psnr_from_mse(Real mse, Real peak = 255);
Real psnr(const Tensor& pred, const Tensor& target, Real peak = 255);

/// Foreground-ratio ranges [0, 0.05), [0.05, 0.15), [0.15, 1].
struct Bucket {
  int index;
  Real lower;
  Real upper;
  const char* label;
};

inline constexpr std::array<Bucket, 3> kBuckets{{
    {0, 0.00, 0.05, "0%-5%"},
    {1, 0.05, 0.15, "5%-15%"},
    {2, 0.15, 1.00, "15%-100%"},
}};

const Bucket& bucketize(Real fg_ratio);

struct SampleRecord {
  std::string id;
  Real mse = 0;
  Real fmse = 0;
  Real psnr = 0;
  Real fg_ratio = 0;
  bool empty_mask = false;
};

struct BucketStats {
  std::string label;
  Real lower = 0;
  Real upper = 1;
  std::size_t count = 0;
  Real mse = 0;
  Real fmse = 0;
  Real psnr = 0;
};

struct MetricReport {
  std::vector<SampleRecord> samples;
  std::array<BucketStats, 3> buckets;
  BucketStats overall;
};

/// Bucket and overall means. Empty buckets report zero means.
MetricReport aggregate(std::vector<SampleRecord> records);

std::string report_json(const MetricReport& report);
/// Table with the three ratio ranges plus the overall column, MSE and fMSE
/// for each, followed by counts and PSNR.
std::string report_table(const MetricReport& report);

}  // namespace harmony::objectives
