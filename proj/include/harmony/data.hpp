#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "harmony/tensor.hpp"

// Images are (1, C, H, W) tensors on the 0-255 scale; masks are (1, 1, H, W)
// with values in {0, 1}.

namespace harmony::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG

Tensor read_png_rgb(const fs::path& file);
/// Grayscale mask; pixels >= 128 become 1, the rest 0.
Tensor read_png_mask(const fs::path& file);
/// Width and height from the header without decoding pixels.
std::pair<int, int> png_size(const fs::path& file);
/// Writes 1- or 3-channel images; values are clipped to [0, 255] and rounded.
/// Masks in {0, 1} should be scaled by the caller (see mask_to_pixels).
void write_png(const fs::path& file, const Tensor& image);
Tensor mask_to_pixels(const Tensor& mask);

// ---------------------------------------------------------------------------
// Samples and composite synthesis

struct Sample {
  std::string id;
  Tensor real;       // (1, 3, H, W)
  Tensor composite;  // (1, 3, H, W)
  Tensor mask;       // (1, 1, H, W), binary
  Real fg_ratio = 0;
};

Real foreground_ratio(const Tensor& mask);

enum class PerturbationKind { channel_affine, gamma, hue_rotate };

std::string to_string(PerturbationKind k);

/// Color change applied to the foreground on the [0, 1] scale, then clipped.
/// random() draws scale in [0.5, 1.5], shift in [-0.2, 0.2], gamma in
/// [0.5, 2] and hue in [-30, 30] degrees; explicit specs may go beyond.
struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::channel_affine;
  std::array<Real, 3> scale{1, 1, 1};
  std::array<Real, 3> shift{0, 0, 0};
  Real gamma = 1;
  Real hue_degrees = 0;  // rotation about the gray axis
  std::uint64_t seed = 0;

  static PerturbationSpec identity() { return {}; }
  static PerturbationSpec random(PerturbationKind kind, std::mt19937_64& rng);
  /// Finite parameters and gamma > 0.
  void validate() const;
};

/// Applies the perturbation to every pixel of an image.
Tensor perturb(const Tensor& image, const PerturbationSpec& spec);

struct Synthesis {
  Sample sample;
  bool empty_mask = false;
};

/// Foreground (mask >= 0.5) pixels perturbed, background copied from `real`.
Synthesis synthesize_composite(const Tensor& real, const Tensor& mask,
                               const PerturbationSpec& spec,
                               std::string id = "sample");

// ---------------------------------------------------------------------------
// Augmentation and normalization

Sample hflip(const Sample& s);

/// Bilinear (half-pixel centers) resize of the square region with corner
/// (x0, y0) and side `side` to target x target. Masks use nearest sampling
/// and are re-thresholded at 0.5.
Tensor resize_region(const Tensor& image, int x0, int y0, int side_w, int side_h,
                     int target_w, int target_h);
Tensor resize_mask_region(const Tensor& mask, int x0, int y0, int side_w,
                          int side_h, int target_w, int target_h);
Tensor resize_image(const Tensor& image, int width, int height);
Tensor resize_mask(const Tensor& mask, int width, int height);

struct CropBox {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
};

/// Side uniform over [ceil(min(H, W) / 2), min(H, W)], offsets uniform.
CropBox draw_crop(int height, int width, std::mt19937_64& rng);
Sample crop_resize(const Sample& s, const CropBox& box, int target);
Sample resize_sample(const Sample& s, int target);
Sample random_resized_crop(const Sample& s, int target, std::mt19937_64& rng);

/// Overwrites composite pixels with real ones wherever the mask is 0.
void restore_background(Sample& s);

struct AugmentationConfig {
  bool hflip = true;
  bool rrc = true;
  int target_size = 64;

  friend bool operator==(const AugmentationConfig&, const AugmentationConfig&) = default;
};

/// Flip with probability 1/2 (if enabled), then a random resized crop (if
/// enabled) or a plain resize to target_size; the background is then
/// restored from the real image.
Sample augment(const Sample& s, const AugmentationConfig& config,
               std::mt19937_64& rng);

inline constexpr std::array<Real, 3> kMean{0.485, 0.456, 0.406};
inline constexpr std::array<Real, 3> kStd{0.229, 0.224, 0.225};

/// (x / 255 - mean_c) / std_c per channel, any batch size.
Tensor normalize(const Tensor& image);
/// Exact inverse of normalize, back to the 0-255 scale, unclipped.
Tensor denormalize(const Tensor& t);
Tensor clip_pixels(Tensor t);

// ---------------------------------------------------------------------------
// Datasets on disk:
//   real_images/<stem>.png
//   masks/<stem>_<maskidx>.png
//   composite_images/<stem>_<maskidx>_<variant>.png
// One sample per composite; the sample id is the composite stem.

struct SampleFiles {
  std::string id;
  fs::path real;
  fs::path composite;
  fs::path mask;
  int width = 0;
  int height = 0;
};

struct LoadIssue {
  std::string id;
  std::string reason;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(fs::path root, std::vector<SampleFiles> files, std::vector<LoadIssue> skipped)
      : root_(std::move(root)), files_(std::move(files)), skipped_(std::move(skipped)) {}

  const fs::path& root() const { return root_; }
  std::size_t size() const { return files_.size(); }
  bool empty() const { return files_.empty(); }
  const SampleFiles& files(std::size_t i) const { return files_.at(i); }
  const std::vector<LoadIssue>& skipped() const { return skipped_; }

  /// Decodes sample i.
  Sample load(std::size_t i) const;

 private:
  fs::path root_;
  std::vector<SampleFiles> files_;
  std::vector<LoadIssue> skipped_;
};

/// Scans `root` (headers only). Orphans, unreadable files and size mismatches
/// are skipped and listed. Throws IoError if `root` is not a directory.
Dataset load_dataset(const fs::path& root);

struct ManifestEntry {
  std::string id;
  std::string real;
  std::string composite;
  std::string mask;
  Real fg_ratio = 0;
  PerturbationSpec perturbation;
};

struct Manifest {
  int n = 0;
  int size = 0;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> samples;
};

/// Writes n procedural samples plus manifest.json under out_dir; the output
/// bytes depend only on (n, size, seed). Foreground ratios cycle through the
/// three evaluation buckets.
Manifest make_desk_dataset(int n, int size, std::uint64_t seed,
                           const fs::path& out_dir);

std::string manifest_json(const Manifest& m);

}  // namespace harmony::data
