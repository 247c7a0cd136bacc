#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "harmony/data.hpp"
#include "harmony/model.hpp"
#include "harmony/objectives.hpp"
#include "json.hpp"

namespace harmony::training {

namespace fs = std::filesystem;
using ad::Parameter;

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct AdamConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
};

AdamState adam_init(const std::vector<Parameter>& params);

/// One bias-corrected Adam update with step size lr * p.lr_multiplier.
/// Every gradient is checked first; a non-finite entry throws
/// DivergenceError naming the parameter and nothing is updated.
void adam_step(std::vector<Parameter>& params, AdamState& state, Real lr,
               const AdamConfig& config = {});

struct LrSchedule {
  Real base_lr = 1e-3;
  std::vector<int> milestones{160, 175};
  Real factor = 0.1;
  int total_epochs = 180;

  /// Milestones at floor(160/180 * E) and floor(175/180 * E), dropping
  /// duplicates and zeros.
  static LrSchedule scaled(int total_epochs, Real base_lr = 1e-3);

  std::vector<std::string> violations() const;
  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// base_lr * factor^(milestones <= epoch). Throws ValidationError for an
/// epoch outside [0, total_epochs).
Real lr_at(int epoch, const LrSchedule& schedule);

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  model::ArchitectureConfig arch;
  objectives::LossConfig loss;
  bool hflip = true;
  bool rrc = true;
  LrSchedule schedule = LrSchedule::scaled(30);
  AdamConfig adam;
  int batch_size = 4;
  std::uint64_t seed = 0;
  /// The last round-down(fraction * n) samples by id are held out.
  Real holdout_fraction = 0.2;
  /// Extra checkpoint every k epochs; 0 disables.
  int checkpoint_every = 0;
  /// Directory of HFEAT files for the precomputed backbone.
  std::string features_dir;

  data::AugmentationConfig augmentation() const {
    return {hflip, rrc, arch.input_size};
  }

  std::vector<std::string> violations() const;
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Flat object with dotted keys ("arch.depth", "loss.kind", ...).
nlohmann::ordered_json config_to_json(const TrainConfig& c);
/// Applies the keys present in `j` on top of `base`. Unknown keys and wrong
/// types throw ValidationError. Setting schedule.total_epochs without
/// schedule.milestones rescales the milestones.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});

// ---------------------------------------------------------------------------
// Checkpoints: "IHCKPT1", u32 version, u64 header length, JSON header,
// little-endian f64 payloads, CRC32 of all preceding bytes.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct EvalSummary {
  Real mse = 0;
  Real fmse = 0;
  Real psnr = 0;
  Real composite_psnr = 0;

  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

struct EpochRecord {
  int epoch = 0;  // zero-based
  Real lr = 0;
  Real train_loss = 0;
  std::int64_t steps = 0;  // cumulative optimizer steps
  std::optional<EvalSummary> eval;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

nlohmann::ordered_json record_to_json(const EpochRecord& r);
EpochRecord record_from_json(const nlohmann::json& j);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  TrainConfig config;
  int epoch = 0;  // completed epochs
  std::vector<NamedTensor> parameters;
  AdamState adam;
  std::vector<EpochRecord> history;
};

Checkpoint make_checkpoint(const TrainConfig& config,
                           const model::HarmonizationModel& model,
                           const AdamState& adam, int epoch,
                           std::vector<EpochRecord> history);
std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const fs::path& file, const Checkpoint& c);
/// Throws ChecksumError for truncated or corrupted files and VersionError
/// for other format versions.
Checkpoint load_checkpoint(const fs::path& file);

/// Builds the checkpoint's architecture and copies its parameters in.
/// Throws VersionError when names or shapes disagree.
model::HarmonizationModel restore_model(const Checkpoint& c);

// ---------------------------------------------------------------------------
// Training and evaluation

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

Split split_dataset(std::size_t n, Real holdout_fraction);

/// Decoded samples kept in memory, indexed like the dataset.
class SampleCache {
 public:
  explicit SampleCache(const data::Dataset& dataset) : dataset_(&dataset) {}
  const data::Sample& get(std::size_t i);
  const data::Dataset& dataset() const { return *dataset_; }

 private:
  const data::Dataset* dataset_;
  std::vector<std::optional<data::Sample>> samples_;
};

struct Batch {
  Tensor composite;  // normalized
  Tensor real;       // normalized
  Tensor mask;
  std::optional<Tensor> features;
};

Batch make_batch(const std::vector<data::Sample>& samples,
                 const std::string& features_dir = {});

struct TrainOptions {
  fs::path out_dir;  // empty: keep everything in memory
  const Checkpoint* resume = nullptr;
  /// Stop after this many completed epochs (simulated interruption).
  std::optional<int> stop_after;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  model::HarmonizationModel model;
  AdamState adam;
  std::vector<EpochRecord> history;
  int epoch = 0;
};

TrainResult train(const TrainConfig& config, const data::Dataset& dataset,
                  const TrainOptions& options = {});

struct EvalOptions {
  std::string features_dir;
};

/// Each sample is resized to the model input, normalized, predicted,
/// denormalized, clipped, and compared with the (resized) real image.
objectives::MetricReport evaluate(const model::HarmonizationModel& model,
                                  SampleCache& samples,
                                  const std::vector<std::size_t>& indices,
                                  const EvalOptions& options = {});
objectives::MetricReport evaluate(const model::HarmonizationModel& model,
                                  const data::Dataset& dataset,
                                  const EvalOptions& options = {});

/// Same protocol with the composite itself as the prediction.
objectives::MetricReport evaluate_composites(SampleCache& samples,
                                             const std::vector<std::size_t>& indices,
                                             int input_size);

/// Mean training loss over the given samples without augmentation.
Real dataset_loss(const model::HarmonizationModel& model, SampleCache& samples,
                  const std::vector<std::size_t>& indices,
                  const objectives::LossConfig& loss,
                  const std::string& features_dir = {});

}  // namespace harmony::training
