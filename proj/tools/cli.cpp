#include "cli.hpp"

#include <zlib.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "harmony/training.hpp"

namespace harmony::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, std::string message) { throw Failure{code, std::move(message)}; }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
  if (!out) throw IoError("cannot write '" + p.string() + "'");
}

std::string crc_hex(const fs::path& p) {
  const std::string bytes = read_text(p);
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(c));
  return buf;
}

class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& args) {
    j_["command"] = std::move(command);
    j_["args"] = args;
    j_["started_at"] = utc_now();
  }
  ordered_json& operator[](const char* key) { return j_[key]; }

  void artifact(const fs::path& file, const fs::path& base) {
    if (fs::is_regular_file(file))
      j_["artifacts"][fs::relative(file, base).generic_string()] = "crc32:" + crc_hex(file);
  }

  void write(const fs::path& file) {
    j_["finished_at"] = utc_now();
    write_text(file, j_.dump(2) + "\n");
  }

 private:
  ordered_json j_;
};

void require_file(const fs::path& p, const char* what, int code) {
  if (!fs::is_regular_file(p)) fail(code, std::string(what) + " not found: " + p.string());
}

data::Dataset open_dataset(const fs::path& root, std::ostream& err) {
  if (!fs::is_directory(root)) fail(kMissingInput, "dataset not found: " + root.string());
  data::Dataset ds;
  try {
    ds = data::load_dataset(root);
  } catch (const IoError& e) {
    fail(kMissingInput, e.what());
  }
  for (const auto& issue : ds.skipped())
    err << "warning: skipped '" << issue.id << "': " << issue.reason << "\n";
  if (ds.empty()) fail(kDataError, "dataset " + root.string() + " contains no usable samples");
  return ds;
}

training::Checkpoint open_checkpoint(const fs::path& p) {
  require_file(p, "checkpoint", kMissingInput);
  try {
    return training::load_checkpoint(p);
  } catch (const VersionError& e) {
    fail(kCheckpointIncompatible, e.what());
  } catch (const IoError& e) {
    fail(kCheckpointIncompatible, std::string("cannot use checkpoint ") + p.string() + ": " + e.what());
  }
}

model::HarmonizationModel open_model(const training::Checkpoint& ck) {
  try {
    return training::restore_model(ck);
  } catch (const VersionError& e) {
    fail(kCheckpointIncompatible, e.what());
  } catch (const ValidationError& e) {
    fail(kCheckpointIncompatible, std::string("checkpoint config is invalid: ") + e.what());
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(kFailure, "cannot create directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int n = 0;
  int size = 64;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path dir = a.out;
  data::Manifest m;
  try {
    m = data::make_desk_dataset(a.n, a.size, a.seed, dir);
  } catch (const IoError& e) {
    fail(kFailure, e.what());
  }
  RunManifest rm("synth", args);
  rm["seed"] = a.seed;
  rm["config"] = {{"n", a.n}, {"size", a.size}, {"seed", a.seed}};
  rm["outputs"] = {{"dataset", dir.string()}, {"manifest", (dir / "manifest.json").string()}};
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) rm.artifact(f, dir);
  rm.write(dir / "run_manifest.json");
  out << "wrote " << m.samples.size() << " samples to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config, resume, features, backbone, loss;
  int epochs = 0, batch_size = 0, input_size = 0, base_width = 0, depth = 0, checkpoint_every = 0;
  double lr = 0, holdout = 0, a_min = 0;
  std::uint64_t seed = 0;
  bool no_hflip = false, no_rrc = false, no_blend = false, blind_backbone = false;
};

struct TrainOptionsSeen {
  CLI::Option *epochs, *batch_size, *input_size, *base_width, *depth, *checkpoint_every, *lr,
      *holdout, *a_min, *seed, *features, *backbone, *loss;
};

json read_config_file(const fs::path& p) {
  require_file(p, "config file", kMissingInput);
  json j;
  try {
    j = json::parse(read_text(p));
  } catch (const json::exception& e) {
    fail(kUsage, "config file " + p.string() + " is not valid JSON: " + e.what());
  }
  // A run manifest carries its resolved config under "config".
  if (j.is_object() && j.contains("config") && j["config"].is_object()) return j["config"];
  return j;
}

training::TrainConfig resolve_train_config(const TrainArgs& a, const TrainOptionsSeen& seen,
                                           training::TrainConfig base) {
  training::TrainConfig c = base;
  try {
    if (!a.config.empty()) c = training::config_from_json(read_config_file(a.config), c);
    if (seen.epochs->count()) {
      const Real lr = c.schedule.base_lr, factor = c.schedule.factor;
      c.schedule = training::LrSchedule::scaled(a.epochs, lr);
      c.schedule.factor = factor;
    }
    if (seen.lr->count()) c.schedule.base_lr = a.lr;
    if (seen.batch_size->count()) c.batch_size = a.batch_size;
    if (seen.seed->count()) c.seed = a.seed;
    if (seen.input_size->count()) c.arch.input_size = a.input_size;
    if (seen.base_width->count()) c.arch.base_width = a.base_width;
    if (seen.depth->count()) c.arch.depth = a.depth;
    if (seen.checkpoint_every->count()) c.checkpoint_every = a.checkpoint_every;
    if (seen.holdout->count()) c.holdout_fraction = a.holdout;
    if (seen.a_min->count()) c.loss.a_min = a.a_min;
    if (seen.loss->count()) c.loss.kind = objectives::loss_from_string(a.loss);
    if (seen.backbone->count()) c.arch.backbone = model::backbone_from_string(a.backbone);
    if (seen.features->count()) c.features_dir = a.features;
    if (a.no_hflip) c.hflip = false;
    if (a.no_rrc) c.rrc = false;
    if (a.no_blend) c.arch.blend_head = false;
    if (a.blind_backbone) c.arch.foreground_aware_backbone = false;
    c.validate();
  } catch (const ValidationError& e) {
    fail(kUsage, e.what());
  }
  return c;
}

int cmd_train(const TrainArgs& a, const TrainOptionsSeen& seen,
              const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::optional<training::Checkpoint> resume;
  if (!a.resume.empty()) resume = open_checkpoint(a.resume);
  const training::TrainConfig config =
      resolve_train_config(a, seen, resume ? resume->config : training::TrainConfig{});
  const data::Dataset ds = open_dataset(a.data, err);
  const fs::path dir = a.out;
  make_dir(dir);

  training::TrainOptions opts;
  opts.out_dir = dir;
  if (resume) opts.resume = &*resume;
  const int total = config.schedule.total_epochs;
  opts.on_epoch = [&](const training::EpochRecord& r) {
    out << "epoch " << r.epoch + 1 << "/" << total << "  lr " << r.lr << "  loss "
        << std::setprecision(5) << r.train_loss;
    if (r.eval)
      out << "  holdout psnr " << std::fixed << std::setprecision(2) << r.eval->psnr
          << " (composite " << r.eval->composite_psnr << ")" << std::defaultfloat;
    out << std::endl;
  };
  RunManifest rm("train", args);
  rm["seed"] = config.seed;
  rm["config"] = training::config_to_json(config);
  rm["inputs"] = {{"data", a.data}, {"config", a.config}, {"resume", a.resume}};
  int completed = 0;
  try {
    completed = training::train(config, ds, opts).epoch;
  } catch (const VersionError& e) {
    fail(kCheckpointIncompatible, e.what());
  } catch (const DivergenceError& e) {
    fail(kFailure, e.what());
  } catch (const DimensionError& e) {
    fail(kDataError, e.what());
  } catch (const IoError& e) {
    fail(kDataError, e.what());
  }
  rm["outputs"] = {{"dir", dir.string()}, {"epochs_completed", completed}};
  for (const char* f : {"config.json", "history.jsonl", "last.ihc", "final.ihc"})
    rm.artifact(dir / f, dir);
  rm.write(dir / "run_manifest.json");
  out << "trained " << completed << " epochs; checkpoint " << (dir / "final.ihc").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, out, split = "all", features;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  const training::Checkpoint ck = open_checkpoint(a.checkpoint);
  const model::HarmonizationModel m = open_model(ck);
  const data::Dataset ds = open_dataset(a.data, err);
  const training::Split split = training::split_dataset(ds.size(), ck.config.holdout_fraction);
  std::vector<std::size_t> idx;
  if (a.split == "all") {
    for (std::size_t i = 0; i < ds.size(); ++i) idx.push_back(i);
  } else {
    idx = a.split == "train" ? split.train : split.holdout;
  }
  if (idx.empty()) fail(kDataError, "the " + a.split + " split of " + a.data + " is empty");

  training::SampleCache cache(ds);
  training::EvalOptions eo;
  eo.features_dir = a.features.empty() ? ck.config.features_dir : a.features;
  objectives::MetricReport report, baseline;
  try {
    report = training::evaluate(m, cache, idx, eo);
    baseline = training::evaluate_composites(cache, idx, m.config().input_size);
  } catch (const DimensionError& e) {
    fail(kDataError, e.what());
  } catch (const IoError& e) {
    fail(kDataError, e.what());
  }

  const fs::path dir = a.out;
  make_dir(dir);
  const std::string table = objectives::report_table(report);
  write_text(dir / "report.json", objectives::report_json(report));
  write_text(dir / "report.txt", table);
  write_text(dir / "composite_report.json", objectives::report_json(baseline));
  out << table;
  out << "composite baseline PSNR " << std::fixed << std::setprecision(2)
      << baseline.overall.psnr << " dB, harmonized " << report.overall.psnr << " dB\n"
      << std::defaultfloat;

  RunManifest rm("eval", args);
  rm["seed"] = ck.config.seed;
  rm["config"] = training::config_to_json(ck.config);
  rm["inputs"] = {{"checkpoint", a.checkpoint}, {"data", a.data}, {"split", a.split}};
  rm["outputs"] = {{"dir", dir.string()}};
  for (const char* f : {"report.json", "report.txt", "composite_report.json"})
    rm.artifact(dir / f, dir);
  rm.write(dir / "run_manifest.json");
  return kOk;
}

// ---------------------------------------------------------------------------

struct HarmonizeArgs {
  std::string checkpoint, composite, mask, out, attention, features;
};

int cmd_harmonize(const HarmonizeArgs& a, const std::vector<std::string>& args,
                  std::ostream& out) {
  const training::Checkpoint ck = open_checkpoint(a.checkpoint);
  const model::HarmonizationModel m = open_model(ck);
  require_file(a.composite, "composite image", kDataError);
  require_file(a.mask, "mask image", kDataError);
  Tensor comp, mask;
  try {
    comp = data::read_png_rgb(a.composite);
    mask = data::read_png_mask(a.mask);
  } catch (const IoError& e) {
    fail(kDataError, e.what());
  }
  const int h = comp.shape().h, w = comp.shape().w;
  if (mask.shape().h != h || mask.shape().w != w)
    fail(kDataError, "mask " + a.mask + " is " + std::to_string(mask.shape().w) + "x" +
                         std::to_string(mask.shape().h) + " but composite " + a.composite +
                         " is " + std::to_string(w) + "x" + std::to_string(h));

  const int size = m.config().input_size;
  const Tensor comp_r = data::resize_image(comp, size, size);
  const Tensor mask_r = data::resize_mask(mask, size, size);
  std::optional<Tensor> feats;
  model::ForwardOptions fo;
  if (m.config().backbone == model::BackboneKind::precomputed) {
    const std::string dir = a.features.empty() ? ck.config.features_dir : a.features;
    try {
      feats = model::load_precomputed_features(dir, fs::path(a.composite).stem().string(),
                                               m.config().precomputed_channels);
    } catch (const IoError& e) {
      fail(kDataError, e.what());
    }
    fo.backbone_features = &*feats;
  }
  const model::Prediction p = m.predict(data::normalize(comp_r), mask_r, fo);
  Tensor result =
      data::resize_image(data::clip_pixels(data::denormalize(p.prediction)), w, h);
  // Outside the mask the original pixels are kept.
  const std::size_t plane = comp.shape().plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (mask[i] < 0.5) result[c * plane + i] = comp[c * plane + i];

  try {
    data::write_png(a.out, result);
    if (!a.attention.empty()) {
      Tensor att = data::resize_image(p.attention, w, h);
      for (Real& v : att.data()) v *= 255;
      data::write_png(a.attention, att);
    }
  } catch (const IoError& e) {
    fail(kFailure, e.what());
  }

  RunManifest rm("harmonize", args);
  rm["seed"] = ck.config.seed;
  rm["config"] = training::config_to_json(ck.config);
  rm["inputs"] = {{"checkpoint", a.checkpoint}, {"composite", a.composite}, {"mask", a.mask}};
  rm["outputs"] = {{"image", a.out}, {"attention", a.attention}};
  const fs::path base = fs::path(a.out).parent_path().empty() ? fs::path(".") : fs::path(a.out).parent_path();
  rm.artifact(a.out, base);
  if (!a.attention.empty()) rm.artifact(a.attention, base);
  fs::path manifest = a.out;
  manifest.replace_extension(".run_manifest.json");
  rm.write(manifest);
  out << "wrote " << a.out << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Image harmonization: dataset synthesis, training, evaluation"};
  app.name("harmony");
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a procedural desk dataset");
  synth->add_option("--n", sa.n, "Number of samples")->required()->check(CLI::PositiveNumber);
  synth->add_option("--size", sa.size, "Image side in pixels")->check(CLI::Range(8, 4096));
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--data", ta.data, "Dataset root")->required();
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--config", ta.config, "Flat JSON config (or a run manifest)");
  tr->add_option("--resume", ta.resume, "Checkpoint to continue from");
  TrainOptionsSeen seen{};
  seen.epochs = tr->add_option("--epochs", ta.epochs, "Total epochs (milestones rescale)")
                    ->check(CLI::NonNegativeNumber);
  seen.lr = tr->add_option("--lr", ta.lr, "Base learning rate");
  seen.batch_size = tr->add_option("--batch-size", ta.batch_size);
  seen.seed = tr->add_option("--seed", ta.seed, "Seed for init, shuffling and augmentation");
  seen.input_size = tr->add_option("--input-size", ta.input_size);
  seen.base_width = tr->add_option("--base-width", ta.base_width);
  seen.depth = tr->add_option("--depth", ta.depth);
  seen.checkpoint_every = tr->add_option("--checkpoint-every", ta.checkpoint_every);
  seen.holdout = tr->add_option("--holdout", ta.holdout, "Held-out fraction");
  seen.a_min = tr->add_option("--a-min", ta.a_min, "FN-MSE minimum area");
  seen.loss = tr->add_option("--loss", ta.loss)->check(CLI::IsMember({"mse", "fn_mse"}));
  seen.backbone =
      tr->add_option("--backbone", ta.backbone)->check(CLI::IsMember({"none", "toy", "precomputed"}));
  seen.features = tr->add_option("--features", ta.features, "Precomputed feature directory");
  tr->add_flag("--no-hflip", ta.no_hflip, "Disable horizontal flips");
  tr->add_flag("--no-rrc", ta.no_rrc, "Disable random resized crops");
  tr->add_flag("--no-blend", ta.no_blend, "Predict the image directly (no attention blend)");
  tr->add_flag("--blind-backbone", ta.blind_backbone, "Backbone stem without the mask branch");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--data", ea.data, "Dataset root")->required();
  ev->add_option("--out", ea.out, "Report directory")->required();
  ev->add_option("--split", ea.split)->check(CLI::IsMember({"all", "train", "holdout"}));
  ev->add_option("--features", ea.features, "Precomputed feature directory");

  HarmonizeArgs ha;
  auto* hz = app.add_subcommand("harmonize", "Harmonize one composite image");
  hz->add_option("--checkpoint", ha.checkpoint)->required();
  hz->add_option("--composite", ha.composite)->required();
  hz->add_option("--mask", ha.mask)->required();
  hz->add_option("--out", ha.out, "Output PNG")->required();
  hz->add_option("--attention", ha.attention, "Optional attention-mask PNG");
  hz->add_option("--features", ha.features, "Precomputed feature directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(sa, args, out);
    if (tr->parsed()) return cmd_train(ta, seen, args, out, err);
    if (ev->parsed()) return cmd_eval(ea, args, out, err);
    if (hz->parsed()) return cmd_harmonize(ha, args, out);
  } catch (const Failure& f) {
    err << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace harmony::cli
