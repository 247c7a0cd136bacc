#include <algorithm>
#include <functional>

#include "harmony/training.hpp"

namespace harmony::training {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Field {
  const char* key;
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

template <class T>
T as(const json& j, const char* key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw std::invalid_argument("expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw std::invalid_argument("expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw std::invalid_argument("expected a string");
    }
    return j.get<T>();
  } catch (const std::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

#define HARMONY_FIELD(key, expr, type)                                   \
  Field {                                                                \
    key, [](const TrainConfig& c) { return json(c.expr); },              \
        [](TrainConfig& c, const json& j) { c.expr = as<type>(j, key); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      HARMONY_FIELD("arch.input_size", arch.input_size, int),
      HARMONY_FIELD("arch.base_width", arch.base_width, int),
      HARMONY_FIELD("arch.depth", arch.depth, int),
      HARMONY_FIELD("arch.skip_connections", arch.skip_connections, bool),
      HARMONY_FIELD("arch.blend_head", arch.blend_head, bool),
      Field{"arch.backbone",
            [](const TrainConfig& c) { return json(model::to_string(c.arch.backbone)); },
            [](TrainConfig& c, const json& j) {
              c.arch.backbone = model::backbone_from_string(as<std::string>(j, "arch.backbone"));
            }},
      HARMONY_FIELD("arch.foreground_aware_backbone", arch.foreground_aware_backbone, bool),
      HARMONY_FIELD("arch.injection_stage", arch.injection_stage, int),
      HARMONY_FIELD("arch.precomputed_channels", arch.precomputed_channels, int),
      HARMONY_FIELD("arch.precomputed_stride", arch.precomputed_stride, int),
      HARMONY_FIELD("arch.leaky_alpha", arch.leaky_alpha, Real),
      HARMONY_FIELD("arch.backbone_lr_multiplier", arch.backbone_lr_multiplier, Real),
      HARMONY_FIELD("arch.mask_lr_multiplier", arch.mask_lr_multiplier, Real),
      Field{"loss.kind",
            [](const TrainConfig& c) { return json(objectives::to_string(c.loss.kind)); },
            [](TrainConfig& c, const json& j) {
              c.loss.kind = objectives::loss_from_string(as<std::string>(j, "loss.kind"));
            }},
      HARMONY_FIELD("loss.a_min", loss.a_min, Real),
      HARMONY_FIELD("aug.hflip", hflip, bool),
      HARMONY_FIELD("aug.rrc", rrc, bool),
      HARMONY_FIELD("schedule.base_lr", schedule.base_lr, Real),
      HARMONY_FIELD("schedule.milestones", schedule.milestones, std::vector<int>),
      HARMONY_FIELD("schedule.factor", schedule.factor, Real),
      HARMONY_FIELD("schedule.total_epochs", schedule.total_epochs, int),
      HARMONY_FIELD("adam.beta1", adam.beta1, Real),
      HARMONY_FIELD("adam.beta2", adam.beta2, Real),
      HARMONY_FIELD("adam.eps", adam.eps, Real),
      HARMONY_FIELD("train.batch_size", batch_size, int),
      HARMONY_FIELD("train.seed", seed, std::uint64_t),
      HARMONY_FIELD("train.holdout_fraction", holdout_fraction, Real),
      HARMONY_FIELD("train.checkpoint_every", checkpoint_every, int),
      HARMONY_FIELD("train.features_dir", features_dir, std::string),
  };
  return f;
}

#undef HARMONY_FIELD

}  // namespace

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out = arch.violations();
  try {
    loss.validate();
  } catch (const ValidationError& e) {
    out.push_back(e.what());
  }
  for (auto& v : schedule.violations()) out.push_back(std::move(v));
  if (batch_size < 1) out.push_back("train.batch_size must be >= 1");
  if (!(holdout_fraction >= 0 && holdout_fraction < 1))
    out.push_back("train.holdout_fraction must lie in [0, 1)");
  if (checkpoint_every < 0) out.push_back("train.checkpoint_every must be >= 0");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1)) out.push_back("adam.beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0 && adam.beta2 < 1)) out.push_back("adam.beta2 must lie in [0, 1)");
  if (!(adam.eps > 0)) out.push_back("adam.eps must be positive");
  if (arch.backbone == model::BackboneKind::precomputed) {
    if (features_dir.empty())
      out.push_back("the precomputed backbone needs train.features_dir");
    if (hflip || rrc)
      out.push_back("the precomputed backbone cannot follow flips or crops; disable aug.hflip and aug.rrc");
  }
  return out;
}

void TrainConfig::validate() const {
  auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ValidationError(msg);
}

ordered_json config_to_json(const TrainConfig& c) {
  ordered_json j = ordered_json::object();
  for (const Field& f : fields()) j[f.key] = f.get(c);
  return j;
}

TrainConfig config_from_json(const json& j, TrainConfig base) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields().begin(), fields().end(),
                           [&](const Field& f) { return key == f.key; });
    if (it == fields().end()) throw ValidationError("unknown config key '" + key + "'");
    it->set(base, value);
  }
  if (j.contains("schedule.total_epochs") && !j.contains("schedule.milestones"))
    base.schedule.milestones = LrSchedule::scaled(base.schedule.total_epochs).milestones;
  return base;
}

}  // namespace harmony::training
