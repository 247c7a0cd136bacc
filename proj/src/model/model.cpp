#include "harmony/model.hpp"

#include <cmath>
#include <sstream>

namespace harmony::model {

std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::none: return "none";
    case BackboneKind::toy: return "toy";
    case BackboneKind::precomputed: return "precomputed";
  }
  return "none";
}

BackboneKind backbone_from_string(std::string_view s) {
  if (s == "none") return BackboneKind::none;
  if (s == "toy") return BackboneKind::toy;
  if (s == "precomputed") return BackboneKind::precomputed;
  throw ValidationError("unknown backbone kind '" + std::string(s) +
                        "' (expected none, toy or precomputed)");
}

// ---------------------------------------------------------------------------
// ArchitectureConfig

int ArchitectureConfig::backbone_channels() const {
  switch (backbone) {
    case BackboneKind::none: return 0;
    case BackboneKind::toy: return 2 * base_width;
    case BackboneKind::precomputed: return precomputed_channels;
  }
  return 0;
}

int ArchitectureConfig::backbone_stride() const {
  return backbone == BackboneKind::precomputed ? precomputed_stride : 4;
}

int ArchitectureConfig::resolved_injection_stage() const {
  if (injection_stage >= 0) return injection_stage;
  int stage = 0;
  while ((1 << (stage + 1)) <= backbone_stride()) ++stage;
  return std::min(stage, std::max(depth - 1, 0));
}

std::vector<std::string> ArchitectureConfig::violations() const {
  std::vector<std::string> v;
  if (input_size < 1) v.push_back("input_size must be >= 1");
  if (base_width < 1) v.push_back("base_width must be >= 1");
  if (depth < 1) v.push_back("depth must be >= 1");
  if (depth >= 1 && depth < 16 && input_size >= 1 &&
      input_size % (1 << depth) != 0) {
    v.push_back("input_size " + std::to_string(input_size) +
                " must be divisible by 2^depth = " + std::to_string(1 << depth));
  }
  if (backbone != BackboneKind::none &&
      (injection_stage < -1 || injection_stage >= depth)) {
    v.push_back("injection_stage must satisfy 0 <= stage < depth");
  }
  if (backbone == BackboneKind::toy && input_size % 4 != 0) {
    v.push_back("toy backbone needs input_size divisible by 4");
  }
  if (backbone == BackboneKind::precomputed) {
    if (precomputed_channels < 1) v.push_back("precomputed_channels must be >= 1");
    if (precomputed_stride < 1) v.push_back("precomputed_stride must be >= 1");
  }
  if (!(leaky_alpha > 0 && leaky_alpha < 1)) v.push_back("leaky_alpha must lie in (0, 1)");
  if (!(backbone_lr_multiplier > 0)) v.push_back("backbone_lr_multiplier must be > 0");
  if (!(mask_lr_multiplier > 0)) v.push_back("mask_lr_multiplier must be > 0");
  return v;
}

void ArchitectureConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream os;
  os << "invalid architecture config:";
  for (const auto& s : v) os << "\n  - " << s;
  throw ValidationError(os.str());
}

// ---------------------------------------------------------------------------
// Free ops

Var fuse_mask_stem(const ConvVars& rgb, const std::optional<ConvVars>& mask,
                   const Var& image, const Var& mask_plane) {
  const Var out = ad::conv2d(image, rgb.weight, rgb.bias, rgb.geometry);
  if (!mask) return out;
  if (mask->weight.shape().n != rgb.weight.shape().n) {
    throw DimensionError("channels",
                         "fuse_mask_stem: mask conv produces " +
                             std::to_string(mask->weight.shape().n) +
                             " channels, rgb conv " +
                             std::to_string(rgb.weight.shape().n));
  }
  return ad::add(out, ad::conv2d(mask_plane, mask->weight, mask->bias,
                                 mask->geometry));
}

Var inject_features(const Var& encoder_feat, const Var& backbone_feat) {
  const Shape es = encoder_feat.shape();
  const Shape bs = backbone_feat.shape();
  if (es.n != bs.n) {
    throw DimensionError("batch", "inject_features: encoder batch " +
                                      std::to_string(es.n) + " vs backbone " +
                                      std::to_string(bs.n));
  }
  return ad::concat_channels(encoder_feat,
                             ad::resize_nearest(backbone_feat, es.h, es.w));
}

// ---------------------------------------------------------------------------
// HarmonizationModel

HarmonizationModel::ConvSpec HarmonizationModel::add_conv(
    const std::string& name, int in_c, int out_c, int k,
    kernels::ConvGeometry g, Real lr_multiplier, bool zero_init,
    std::mt19937_64& rng) {
  Tensor w(Shape{out_c, in_c, k, k});
  if (!zero_init) {
    const Real bound = std::sqrt(6.0 / (static_cast<Real>(in_c) * k * k));
    std::uniform_real_distribution<Real> u(-bound, bound);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = u(rng);
  }
  ConvSpec spec{params_.size(), params_.size() + 1, g};
  params_.emplace_back(name + ".weight", std::move(w), lr_multiplier);
  params_.emplace_back(name + ".bias", Tensor(Shape{1, out_c, 1, 1}),
                       lr_multiplier);
  for (std::size_t i : {spec.weight, spec.bias}) {
    if (!index_.emplace(params_[i].name, i).second) {
      throw ContractError("duplicate parameter name " + params_[i].name);
    }
  }
  return spec;
}

HarmonizationModel HarmonizationModel::build(const ArchitectureConfig& config,
                                             std::uint64_t seed) {
  config.validate();
  HarmonizationModel m;
  m.config_ = config;
  std::mt19937_64 rng(seed);
  const kernels::ConvGeometry same{1, 1};
  const kernels::ConvGeometry pointwise{1, 0};
  const kernels::ConvGeometry down{2, 1};
  const int inject = config.backbone == BackboneKind::none
                         ? -1
                         : config.resolved_injection_stage();

  if (config.backbone == BackboneKind::toy) {
    const int s = config.base_width;
    m.stem_rgb_ = m.add_conv("backbone.stem.rgb", 3, s, 3, down,
                             config.backbone_lr_multiplier, false, rng);
    if (config.foreground_aware_backbone) {
      m.stem_mask_ = m.add_conv("backbone.stem.mask", 1, s, 3, down,
                                config.mask_lr_multiplier, true, rng);
    }
    m.backbone_conv_ = m.add_conv("backbone.conv2", s, 2 * s, 3, down,
                                  config.backbone_lr_multiplier, false, rng);
  }

  int in_c = 4;
  for (int i = 0; i < config.depth; ++i) {
    if (i == inject) in_c += config.backbone_channels();
    const int out_c = config.stage_channels(i);
    m.encoder_.push_back(m.add_conv("encoder." + std::to_string(i), in_c, out_c,
                                    3, same, 1.0, false, rng));
    in_c = out_c;
  }
  m.bottleneck_ = m.add_conv("bottleneck", in_c, in_c, 3, same, 1.0, false, rng);

  m.decoder_.resize(config.depth);
  for (int i = config.depth - 1; i >= 0; --i) {
    const int out_c = config.stage_channels(i);
    const int cat = config.skip_connections ? out_c : 0;
    m.decoder_[i] = m.add_conv("decoder." + std::to_string(i), in_c + cat,
                               out_c, 3, same, 1.0, false, rng);
    in_c = out_c;
  }

  m.head_rgb_ = m.add_conv("head.rgb", in_c, 3, 1, pointwise, 1.0, false, rng);
  if (config.blend_head) {
    // Starts close to passing the composite through (M_A = sigmoid(-2)).
    m.head_mask_ = m.add_conv("head.mask", in_c, 1, 1, pointwise, 1.0, true, rng);
    m.params_[m.head_mask_->bias].value.fill(kAttentionBiasInit);
  }
  return m;
}

Parameter& HarmonizationModel::parameter(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ValidationError("no parameter named '" + std::string(name) + "'");
  }
  return params_[it->second];
}

const Parameter& HarmonizationModel::parameter(std::string_view name) const {
  return const_cast<HarmonizationModel*>(this)->parameter(name);
}

bool HarmonizationModel::has_parameter(std::string_view name) const {
  return index_.find(name) != index_.end();
}

std::size_t HarmonizationModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void HarmonizationModel::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

ConvVars HarmonizationModel::bind_conv(const ConvSpec& c,
                                       const Bind& bind) const {
  return {bind(c.weight), bind(c.bias), c.geometry};
}

Var HarmonizationModel::apply_conv(const ConvSpec& c, const Var& x,
                                   const Bind& bind) const {
  return ad::conv2d(x, bind(c.weight), bind(c.bias), c.geometry);
}

void HarmonizationModel::check_inputs(const Tensor& image, const Tensor& mask,
                                      const ForwardOptions& options) const {
  const Shape is = image.shape();
  const int size = config_.input_size;
  if (is.c != 3) {
    throw DimensionError("channels", "forward: image must have 3 channels, got " +
                                         is.str());
  }
  if (is.h != size) {
    throw DimensionError("height", "forward: image height " +
                                       std::to_string(is.h) + " != input_size " +
                                       std::to_string(size));
  }
  if (is.w != size) {
    throw DimensionError("width", "forward: image width " +
                                      std::to_string(is.w) + " != input_size " +
                                      std::to_string(size));
  }
  auto check_mask = [&](const Tensor& m, const char* what) {
    const Shape s = m.shape();
    if (s.n != is.n || s.c != 1 || s.h != is.h || s.w != is.w) {
      throw DimensionError(s.n != is.n ? "batch" : s.c != 1 ? "channels" : "height",
                           std::string("forward: ") + what + " shape " + s.str() +
                               " incompatible with image " + is.str());
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!(m[i] >= 0 && m[i] <= 1)) {
        throw ValidationError(std::string("forward: ") + what +
                              " values must lie in [0, 1]");
      }
    }
  };
  check_mask(mask, "mask");
  if (options.backbone_mask) check_mask(*options.backbone_mask, "backbone mask");
  if (config_.backbone == BackboneKind::precomputed) {
    if (!options.backbone_features) {
      throw ContractError("forward: precomputed backbone needs features");
    }
    const Shape fs = options.backbone_features->shape();
    if (fs.n != is.n) {
      throw DimensionError("batch", "forward: feature batch " + fs.str());
    }
    if (fs.c != config_.precomputed_channels) {
      throw DimensionError("channels",
                           "forward: features have " + std::to_string(fs.c) +
                               " channels, config expects " +
                               std::to_string(config_.precomputed_channels));
    }
  }
}

ForwardResult HarmonizationModel::run(Tape& tape, const Bind& bind,
                                      const Tensor& image, const Tensor& mask,
                                      const ForwardOptions& options) const {
  check_inputs(image, mask, options);
  const Real alpha = config_.leaky_alpha;
  const Var img = tape.constant(image);
  const Var msk = tape.constant(mask);
  ForwardResult r;

  if (config_.backbone == BackboneKind::toy) {
    const Var bmask =
        options.backbone_mask ? tape.constant(*options.backbone_mask) : msk;
    std::optional<ConvVars> mask_branch;
    if (stem_mask_) mask_branch = bind_conv(*stem_mask_, bind);
    Var b = ad::leaky_relu(
        fuse_mask_stem(bind_conv(*stem_rgb_, bind), mask_branch, img, bmask), alpha);
    r.backbone = ad::leaky_relu(apply_conv(*backbone_conv_, b, bind), alpha);
  } else if (config_.backbone == BackboneKind::precomputed) {
    r.backbone = tape.constant(*options.backbone_features);
  }

  const int inject = r.backbone ? config_.resolved_injection_stage() : -1;
  Var x = ad::concat_channels(img, msk);
  std::vector<Var> skips;
  for (int i = 0; i < config_.depth; ++i) {
    if (i == inject) x = inject_features(x, *r.backbone);
    x = ad::leaky_relu(apply_conv(encoder_[i], x, bind), alpha);
    skips.push_back(x);
    x = ad::max_pool2d(x, 2, 2);
  }
  x = ad::leaky_relu(apply_conv(bottleneck_, x, bind), alpha);
  r.bottleneck = x;
  for (int i = config_.depth - 1; i >= 0; --i) {
    x = ad::upsample_nearest(x, 2);
    if (config_.skip_connections) x = ad::concat_channels(x, skips[i]);
    x = ad::leaky_relu(apply_conv(decoder_[i], x, bind), alpha);
  }
  r.features = x;
  r.rgb = apply_conv(head_rgb_, x, bind);

  if (head_mask_) {
    r.attention = ad::sigmoid(apply_conv(*head_mask_, x, bind));
    const Var keep = ad::scalar_affine(r.attention, -1, 1);
    r.prediction = ad::add(ad::mul(img, keep), ad::mul(r.rgb, r.attention));
  } else {
    const Shape s = image.shape();
    r.attention = tape.constant(Tensor(Shape{s.n, 1, s.h, s.w}, 1.0));
    r.prediction = r.rgb;
  }
  return r;
}

ForwardResult HarmonizationModel::forward(Tape& tape, const Tensor& image,
                                          const Tensor& mask,
                                          const ForwardOptions& options) {
  return run(tape, [&](std::size_t i) { return tape.watch(params_[i]); },
             image, mask, options);
}

Prediction HarmonizationModel::predict(const Tensor& image, const Tensor& mask,
                                       const ForwardOptions& options) const {
  Tape tape;
  const ForwardResult r = run(
      tape, [&](std::size_t i) { return tape.constant(params_[i].value); },
      image, mask, options);
  return {r.prediction.value(), r.attention.value()};
}

}  // namespace harmony::model
