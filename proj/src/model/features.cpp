#include <filesystem>

#include "detail/binary_io.hpp"
#include "harmony/model.hpp"

namespace harmony::model {

namespace {
constexpr std::string_view kMagic = "HFEAT1";
}

std::filesystem::path feature_path(const std::filesystem::path& dir,
                                   std::string_view sample_id) {
  return dir / (std::string(sample_id) + ".hfeat");
}

void save_precomputed_features(const std::filesystem::path& file,
                               const Tensor& features) {
  const Shape s = features.shape();
  if (s.n != 1) {
    throw DimensionError("batch", "feature files hold a single map, got " + s.str());
  }
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.c));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.h));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.w));
  for (std::size_t i = 0; i < features.size(); ++i) {
    w.put<float>(static_cast<float>(features[i]));
  }
  detail::write_file(file.string(), w.str());
}

Tensor load_precomputed_features(const std::filesystem::path& dir,
                                 std::string_view sample_id,
                                 std::optional<int> expected_channels) {
  const std::filesystem::path file = feature_path(dir, sample_id);
  const std::string ctx =
      "features for sample '" + std::string(sample_id) + "' (" + file.string() + ")";
  if (!std::filesystem::exists(file)) throw IoError(ctx + ": file not found");
  const std::string data = detail::read_file(file.string());
  detail::ByteReader r(data);
  if (!r.has(kMagic.size() + 12) || r.bytes(kMagic.size()) != kMagic) {
    throw IoError(ctx + ": missing HFEAT1 header");
  }
  const auto c = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  if (c == 0 || h == 0 || w == 0) throw IoError(ctx + ": empty feature map");
  if (expected_channels && static_cast<int>(c) != *expected_channels) {
    throw IoError(ctx + ": header declares " + std::to_string(c) +
                  " channels, expected " + std::to_string(*expected_channels));
  }
  const std::size_t count = static_cast<std::size_t>(c) * h * w;
  if (r.remaining() != count * sizeof(float)) {
    throw IoError(ctx + ": payload holds " + std::to_string(r.remaining()) +
                  " bytes, header requires " + std::to_string(count * sizeof(float)));
  }
  Tensor t(Shape{1, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)});
  for (std::size_t i = 0; i < count; ++i) t[i] = r.get<float>();
  return t;
}

}  // namespace harmony::model
