#include <algorithm>
#include <cmath>
#include <fstream>

#include "detail/binary_io.hpp"
#include "harmony/training.hpp"

namespace harmony::training {

namespace {

enum Stream : std::uint32_t { kShuffle = 1, kAugment = 2 };

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t a, std::uint32_t b, Stream tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    a, b, static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

Tensor stack(const std::vector<const Tensor*>& parts) {
  const Shape s = parts.front()->shape();
  Tensor out(Shape{static_cast<int>(parts.size()), s.c, s.h, s.w});
  const std::size_t each = s.numel();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i]->shape() != s)
      throw DimensionError("n", "batch members differ in shape: " + s.str() + " vs " +
                                    parts[i]->shape().str());
    std::copy(parts[i]->data().begin(), parts[i]->data().end(), out.ptr() + i * each);
  }
  return out;
}

data::Sample at_model_size(const data::Sample& s, int size) {
  if (s.real.shape().h == size && s.real.shape().w == size) return s;
  data::Sample r = data::resize_sample(s, size);
  r.fg_ratio = s.fg_ratio;
  return r;
}

std::optional<Tensor> sample_features(const std::string& dir, const std::string& id,
                                      const model::ArchitectureConfig& arch) {
  if (arch.backbone != model::BackboneKind::precomputed) return std::nullopt;
  return model::load_precomputed_features(dir, id, arch.precomputed_channels);
}

model::ForwardOptions forward_options(const std::optional<Tensor>& features) {
  model::ForwardOptions o;
  if (features) o.backbone_features = &*features;
  return o;
}

void append_line(const fs::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to '" + file.string() + "'");
  out << line << '\n';
}

}  // namespace

Split split_dataset(std::size_t n, Real holdout_fraction) {
  const auto held = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<Real>(n)));
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i < n - held ? s.train : s.holdout).push_back(i);
  return s;
}

const data::Sample& SampleCache::get(std::size_t i) {
  if (samples_.size() != dataset_->size()) samples_.resize(dataset_->size());
  auto& slot = samples_.at(i);
  if (!slot) slot = dataset_->load(i);
  return *slot;
}

Batch make_batch(const std::vector<data::Sample>& samples, const std::string& features_dir) {
  if (samples.empty()) throw ValidationError("empty batch");
  std::vector<const Tensor*> comp, real, mask;
  for (const data::Sample& s : samples) {
    comp.push_back(&s.composite);
    real.push_back(&s.real);
    mask.push_back(&s.mask);
  }
  Batch b;
  b.composite = data::normalize(stack(comp));
  b.real = data::normalize(stack(real));
  b.mask = stack(mask);
  if (!features_dir.empty()) {
    std::vector<Tensor> feats;
    for (const data::Sample& s : samples)
      feats.push_back(model::load_precomputed_features(features_dir, s.id));
    std::vector<const Tensor*> ptrs;
    for (const Tensor& f : feats) ptrs.push_back(&f);
    b.features = stack(ptrs);
  }
  return b;
}

TrainResult train(const TrainConfig& config, const data::Dataset& dataset,
                  const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw ValidationError("training dataset is empty");
  const Split split = split_dataset(dataset.size(), config.holdout_fraction);
  if (split.train.empty()) throw ValidationError("holdout split leaves no training samples");
  const bool precomputed = config.arch.backbone == model::BackboneKind::precomputed;
  const std::string features_dir = precomputed ? config.features_dir : std::string();

  TrainResult res{model::HarmonizationModel::build(config.arch, config.seed), {}, {}, 0};
  res.adam = adam_init(res.model.parameters());
  if (options.resume) {
    if (!(options.resume->config == config))
      throw VersionError("resume checkpoint was written with a different config");
    res.model = restore_model(*options.resume);
    res.adam = options.resume->adam;
    res.history = options.resume->history;
    res.epoch = options.resume->epoch;
    if (res.adam.m.size() != res.model.parameters().size())
      throw VersionError("resume checkpoint optimizer state does not match the model");
  }

  const bool files = !options.out_dir.empty();
  const fs::path history_file = options.out_dir / "history.jsonl";
  if (files) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + options.out_dir.string() + "'");
    detail::write_file((options.out_dir / "config.json").string(),
                       config_to_json(config).dump(2) + "\n");
    std::string lines;
    for (const EpochRecord& r : res.history) lines += record_to_json(r).dump() + "\n";
    detail::write_file(history_file.string(), lines);
  }
  auto checkpoint = [&](const std::string& name) {
    if (files)
      save_checkpoint(options.out_dir / name,
                      make_checkpoint(config, res.model, res.adam, res.epoch, res.history));
  };

  SampleCache cache(dataset);
  std::optional<Real> composite_psnr;
  const data::AugmentationConfig aug = config.augmentation();
  const int total = config.schedule.total_epochs;

  while (res.epoch < total) {
    if (options.stop_after && res.epoch >= *options.stop_after) break;
    const int epoch = res.epoch;
    const Real lr = lr_at(epoch, config.schedule);

    std::vector<std::size_t> order = split.train;
    auto shuffle_rng = stream(config.seed, static_cast<std::uint32_t>(epoch), 0, kShuffle);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    Real loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<data::Sample> samples;
      for (std::size_t k = start; k < end; ++k) {
        auto rng = stream(config.seed, static_cast<std::uint32_t>(epoch),
                          static_cast<std::uint32_t>(order[k]), kAugment);
        samples.push_back(data::augment(cache.get(order[k]), aug, rng));
      }
      const Batch b = make_batch(samples, features_dir);

      res.model.zero_grad();
      ad::Tape tape;
      model::ForwardOptions fo;
      if (b.features) fo.backbone_features = &*b.features;
      const model::ForwardResult fr = res.model.forward(tape, b.composite, b.mask, fo);
      const ad::Var loss =
          objectives::loss(config.loss, fr.prediction, tape.constant(b.real), b.mask);
      const Real value = loss.value()[0];
      if (!std::isfinite(value))
        throw DivergenceError("training loss became non-finite at epoch " +
                              std::to_string(epoch) + ", step " +
                              std::to_string(res.adam.t + 1) +
                              "; the last saved checkpoint is kept");
      tape.backward(loss);
      adam_step(res.model.parameters(), res.adam, lr, config.adam);
      loss_sum += value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / batches;
    rec.steps = res.adam.t;
    if (!split.holdout.empty()) {
      if (!composite_psnr)
        composite_psnr =
            evaluate_composites(cache, split.holdout, config.arch.input_size).overall.psnr;
      const auto report = evaluate(res.model, cache, split.holdout, {features_dir});
      rec.eval = EvalSummary{report.overall.mse, report.overall.fmse, report.overall.psnr,
                             *composite_psnr};
    }
    res.history.push_back(rec);
    res.epoch = epoch + 1;
    if (files) append_line(history_file, record_to_json(rec).dump());
    if (options.on_epoch) options.on_epoch(rec);
    if (config.checkpoint_every > 0 && res.epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ihc", res.epoch);
      checkpoint(name);
    }
  }

  checkpoint("last.ihc");
  if (res.epoch == total) checkpoint("final.ihc");
  return res;
}

objectives::MetricReport evaluate(const model::HarmonizationModel& model, SampleCache& samples,
                                  const std::vector<std::size_t>& indices,
                                  const EvalOptions& options) {
  if (indices.empty()) throw ValidationError("evaluation set is empty");
  const int size = model.config().input_size;
  std::vector<objectives::SampleRecord> records;
  for (std::size_t i : indices) {
    const data::Sample s = at_model_size(samples.get(i), size);
    const auto feats = sample_features(options.features_dir, s.id, model.config());
    const Tensor pred = model.predict(data::normalize(s.composite), s.mask,
                                      forward_options(feats)).prediction;
    const Tensor out = data::clip_pixels(data::denormalize(pred));
    const auto f = objectives::fmse_metric(out, s.real, s.mask);
    records.push_back({s.id, objectives::mse_metric(out, s.real), f.value,
                       objectives::psnr(out, s.real), s.fg_ratio, f.empty_mask});
  }
  return objectives::aggregate(std::move(records));
}

objectives::MetricReport evaluate(const model::HarmonizationModel& model,
                                  const data::Dataset& dataset, const EvalOptions& options) {
  SampleCache cache(dataset);
  std::vector<std::size_t> all(dataset.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate(model, cache, all, options);
}

objectives::MetricReport evaluate_composites(SampleCache& samples,
                                             const std::vector<std::size_t>& indices,
                                             int input_size) {
  if (indices.empty()) throw ValidationError("evaluation set is empty");
  std::vector<objectives::SampleRecord> records;
  for (std::size_t i : indices) {
    const data::Sample s = at_model_size(samples.get(i), input_size);
    const auto f = objectives::fmse_metric(s.composite, s.real, s.mask);
    records.push_back({s.id, objectives::mse_metric(s.composite, s.real), f.value,
                       objectives::psnr(s.composite, s.real), s.fg_ratio, f.empty_mask});
  }
  return objectives::aggregate(std::move(records));
}

Real dataset_loss(const model::HarmonizationModel& model, SampleCache& samples,
                  const std::vector<std::size_t>& indices, const objectives::LossConfig& loss,
                  const std::string& features_dir) {
  if (indices.empty()) throw ValidationError("loss set is empty");
  Real sum = 0;
  for (std::size_t i : indices) {
    const data::Sample s = at_model_size(samples.get(i), model.config().input_size);
    const auto feats = sample_features(features_dir, s.id, model.config());
    const Tensor pred = model.predict(data::normalize(s.composite), s.mask,
                                      forward_options(feats)).prediction;
    ad::Tape tape;
    sum += objectives::loss(loss, tape.constant(pred), tape.constant(data::normalize(s.real)),
                            s.mask)
               .value()[0];
  }
  return sum / static_cast<Real>(indices.size());
}

}  // namespace harmony::training
