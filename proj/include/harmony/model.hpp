#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "harmony/autodiff.hpp"

namespace harmony::model {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Initial bias of the attention head; its weights start at zero.
inline constexpr Real kAttentionBiasInit = -2.0;

enum class BackboneKind { none, toy, precomputed };

std::string to_string(BackboneKind k);
BackboneKind backbone_from_string(std::string_view s);

struct ArchitectureConfig {
  int input_size = 64;
  int base_width = 16;
  int depth = 4;
  bool skip_connections = true;
  bool blend_head = true;
  BackboneKind backbone = BackboneKind::toy;
  /// Adds the mask branch to the backbone stem; off gives an RGB-only stem.
  bool foreground_aware_backbone = true;
  /// Encoder stage receiving backbone features; -1 picks the stage whose
  /// resolution matches the backbone output stride.
  int injection_stage = -1;
  /// Channel count and stride of externally produced features.
  int precomputed_channels = 32;
  int precomputed_stride = 4;
  Real leaky_alpha = 0.2;
  Real backbone_lr_multiplier = 0.1;
  Real mask_lr_multiplier = 1.0;

  std::vector<std::string> violations() const;
  /// Throws ValidationError listing every violated constraint.
  void validate() const;

  int resolved_injection_stage() const;
  int backbone_channels() const;
  int backbone_stride() const;
  int stage_channels(int stage) const { return base_width << stage; }

  friend bool operator==(const ArchitectureConfig&,
                         const ArchitectureConfig&) = default;
};

// Conv parameters bound on a tape.
struct ConvVars {
  Var weight;
  Var bias;
  kernels::ConvGeometry geometry;
};

/// rgb_conv(image) + mask_conv(mask). With no mask branch the stem sees RGB
/// only.
Var fuse_mask_stem(const ConvVars& rgb, const std::optional<ConvVars>& mask,
                   const Var& image, const Var& mask_plane);

/// Nearest-resizes backbone features to the encoder map and concatenates
/// them after the encoder channels.
Var inject_features(const Var& encoder_feat, const Var& backbone_feat);

struct ForwardOptions {
  /// Mask fed to the backbone stem instead of the encoder mask.
  const Tensor* backbone_mask = nullptr;
  /// Required for BackboneKind::precomputed, shape (b, C_b, h, w).
  const Tensor* backbone_features = nullptr;
};

struct ForwardResult {
  Var prediction;  // (b, 3, H, W)
  Var attention;   // (b, 1, H, W), the blend mask M_A
  Var rgb;         // d_rgb(x)
  Var features;    // decoder output x
  Var bottleneck;
  std::optional<Var> backbone;
};

struct Prediction {
  Tensor prediction;
  Tensor attention;
};

class HarmonizationModel {
 public:
  static HarmonizationModel build(const ArchitectureConfig& config,
                                  std::uint64_t seed);

  const ArchitectureConfig& config() const { return config_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;
  bool has_parameter(std::string_view name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Training forward: parameters are watched, so tape.backward() fills
  /// their gradients.
  ForwardResult forward(Tape& tape, const Tensor& image, const Tensor& mask,
                        const ForwardOptions& options = {});
  /// Inference forward; safe to call concurrently on a shared model.
  Prediction predict(const Tensor& image, const Tensor& mask,
                     const ForwardOptions& options = {}) const;

 private:
  struct ConvSpec {
    std::size_t weight;
    std::size_t bias;
    kernels::ConvGeometry geometry;
  };
  using Bind = std::function<Var(std::size_t)>;

  HarmonizationModel() = default;
  ConvSpec add_conv(const std::string& name, int in_c, int out_c, int k,
                    kernels::ConvGeometry g, Real lr_multiplier, bool zero_init,
                    std::mt19937_64& rng);
  ConvVars bind_conv(const ConvSpec& c, const Bind& bind) const;
  Var apply_conv(const ConvSpec& c, const Var& x, const Bind& bind) const;
  void check_inputs(const Tensor& image, const Tensor& mask,
                    const ForwardOptions& options) const;
  ForwardResult run(Tape& tape, const Bind& bind, const Tensor& image,
                    const Tensor& mask, const ForwardOptions& options) const;

  ArchitectureConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;

  std::vector<ConvSpec> encoder_;
  ConvSpec bottleneck_{};
  std::vector<ConvSpec> decoder_;
  ConvSpec head_rgb_{};
  std::optional<ConvSpec> head_mask_;
  std::optional<ConvSpec> stem_rgb_;
  std::optional<ConvSpec> stem_mask_;
  std::optional<ConvSpec> backbone_conv_;
};

// Precomputed backbone features: "HFEAT1", u32 C, h, w (little-endian), then
// C*h*w little-endian float32 values in row-major order.
std::filesystem::path feature_path(const std::filesystem::path& dir,
                                   std::string_view sample_id);
void save_precomputed_features(const std::filesystem::path& file,
                               const Tensor& features);
/// Returns a (1, C, h, w) tensor. Throws IoError mentioning `sample_id` when
/// the file is missing or malformed, or when C differs from
/// `expected_channels`.
Tensor load_precomputed_features(const std::filesystem::path& dir,
                                 std::string_view sample_id,
                                 std::optional<int> expected_channels = {});

}  // namespace harmony::model
