#include <zlib.h>

#include "detail/binary_io.hpp"
#include "harmony/training.hpp"

namespace harmony::training {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kMagic = "IHCKPT1";

std::uint32_t crc(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(c);
}

ordered_json shape_json(const Shape& s) { return ordered_json::array({s.n, s.c, s.h, s.w}); }

}  // namespace

ordered_json record_to_json(const EpochRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_loss"] = r.train_loss;
  j["steps"] = r.steps;
  if (r.eval) {
    j["eval"] = {{"mse", r.eval->mse},
                 {"fmse", r.eval->fmse},
                 {"psnr", r.eval->psnr},
                 {"composite_psnr", r.eval->composite_psnr}};
  }
  return j;
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<Real>();
  r.train_loss = j.at("train_loss").get<Real>();
  r.steps = j.at("steps").get<std::int64_t>();
  if (j.contains("eval")) {
    const json& e = j["eval"];
    r.eval = EvalSummary{e.at("mse").get<Real>(), e.at("fmse").get<Real>(),
                         e.at("psnr").get<Real>(), e.at("composite_psnr").get<Real>()};
  }
  return r;
}

Checkpoint make_checkpoint(const TrainConfig& config, const model::HarmonizationModel& model,
                           const AdamState& adam, int epoch, std::vector<EpochRecord> history) {
  Checkpoint c;
  c.config = config;
  c.epoch = epoch;
  for (const Parameter& p : model.parameters()) c.parameters.push_back({p.name, p.value});
  c.adam = adam;
  c.history = std::move(history);
  return c;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  if (c.adam.m.size() != c.parameters.size() || c.adam.v.size() != c.parameters.size())
    throw ContractError("checkpoint Adam state does not match its parameters");

  ordered_json h;
  h["config"] = config_to_json(c.config);
  h["epoch"] = c.epoch;
  h["adam"] = {{"t", c.adam.t}};
  h["rng"] = {{"scheme", "mt19937_64 per (seed, epoch, sample index)"},
              {"seed", c.config.seed},
              {"next_epoch", c.epoch}};
  auto& hist = h["history"] = ordered_json::array();
  for (const EpochRecord& r : c.history) hist.push_back(record_to_json(r));

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (std::size_t i = 0; i < c.parameters.size(); ++i)
    tensors.emplace_back("param/" + c.parameters[i].name, &c.parameters[i].value);
  for (std::size_t i = 0; i < c.parameters.size(); ++i)
    tensors.emplace_back("adam.m/" + c.parameters[i].name, &c.adam.m[i]);
  for (std::size_t i = 0; i < c.parameters.size(); ++i)
    tensors.emplace_back("adam.v/" + c.parameters[i].name, &c.adam.v[i]);

  auto& entries = h["tensors"] = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name},
                       {"shape", shape_json(t->shape())},
                       {"dtype", "f64"},
                       {"offset", offset},
                       {"count", t->size()}});
    offset += t->size() * sizeof(Real);
  }

  const std::string header = h.dump();
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(header.size());
  w.bytes(header);
  w.str().reserve(w.str().size() + offset + 4);
  for (const auto& [name, t] : tensors)
    for (Real v : t->data()) w.put<Real>(v);
  w.put<std::uint32_t>(crc(w.str()));
  return std::move(w.str());
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  const std::size_t fixed = kMagic.size() + 4 + 8 + 4;
  if (bytes.size() < fixed)
    throw ChecksumError("checkpoint is truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (bytes.substr(0, kMagic.size()) != kMagic)
    throw IoError("not a checkpoint file (bad magic)");
  detail::ByteReader tail(bytes.substr(bytes.size() - 4));
  if (tail.get<std::uint32_t>() != crc(bytes.substr(0, bytes.size() - 4)))
    throw ChecksumError("checkpoint checksum mismatch (file truncated or corrupted)");

  detail::ByteReader r(bytes.substr(0, bytes.size() - 4));
  r.bytes(kMagic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto header_len = r.get<std::uint64_t>();
  if (!r.has(header_len)) throw ChecksumError("checkpoint header length exceeds file size");
  json h;
  try {
    h = json::parse(r.bytes(header_len));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    c.config = config_from_json(h.at("config"));
    c.epoch = h.at("epoch").get<int>();
    c.adam.t = h.at("adam").at("t").get<std::int64_t>();
    for (const json& rec : h.at("history")) c.history.push_back(record_from_json(rec));

    const json& entries = h.at("tensors");
    if (entries.size() % 3 != 0) throw IoError("checkpoint tensor table is malformed");
    const std::size_t n_params = entries.size() / 3;
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const json& e = entries[i];
      if (e.at("dtype") != "f64") throw IoError("checkpoint tensor dtype must be f64");
      auto dims = e.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw IoError("checkpoint tensor shape must have 4 dims");
      Shape s{dims[0], dims[1], dims[2], dims[3]};
      validate_shape(s);
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto count = e.at("count").get<std::uint64_t>();
      if (offset != expected_offset || count != s.numel())
        throw IoError("checkpoint tensor table is inconsistent at '" +
                      e.at("name").get<std::string>() + "'");
      expected_offset += count * sizeof(Real);
      if (!r.has(count * sizeof(Real))) throw ChecksumError("checkpoint payload is truncated");
      Tensor t(s);
      for (Real& v : t.data()) v = r.get<Real>();

      const std::string name = e.at("name").get<std::string>();
      const std::size_t group = i / n_params;
      static constexpr std::string_view prefixes[3] = {"param/", "adam.m/", "adam.v/"};
      if (name.rfind(prefixes[group], 0) != 0)
        throw IoError("checkpoint tensor '" + name + "' is out of order");
      const std::string pname = name.substr(prefixes[group].size());
      if (group > 0 && pname != c.parameters[i % n_params].name)
        throw IoError("checkpoint optimizer slot '" + name + "' does not match its parameter");
      if (group == 0)
        c.parameters.push_back({pname, std::move(t)});
      else
        (group == 1 ? c.adam.m : c.adam.v).push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header is malformed: ") + e.what());
  }
  if (r.remaining() != 0)
    throw IoError("checkpoint has " + std::to_string(r.remaining()) + " trailing payload bytes");
  return c;
}

void save_checkpoint(const fs::path& file, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  fs::path tmp = file;
  tmp += ".tmp";
  detail::write_file(tmp.string(), bytes);
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + file.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw IoError("checkpoint '" + file.string() + "' not found");
  return parse_checkpoint(detail::read_file(file.string()));
}

model::HarmonizationModel restore_model(const Checkpoint& c) {
  auto m = model::HarmonizationModel::build(c.config.arch, c.config.seed);
  auto& params = m.parameters();
  if (params.size() != c.parameters.size())
    throw VersionError("checkpoint holds " + std::to_string(c.parameters.size()) +
                       " parameters but its config builds " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& src = c.parameters[i];
    if (src.name != params[i].name || src.value.shape() != params[i].value.shape())
      throw VersionError("checkpoint parameter '" + src.name + "' " + src.value.shape().str() +
                         " does not match model parameter '" + params[i].name + "' " +
                         params[i].value.shape().str());
    params[i].value = src.value;
  }
  return m;
}

}  // namespace harmony::training
