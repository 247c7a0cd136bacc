#include <algorithm>
#include <cctype>
#include <map>

#include "harmony/data.hpp"

namespace harmony::data {

namespace {

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::string size_str(std::pair<int, int> wh) {
  return std::to_string(wh.first) + "x" + std::to_string(wh.second);
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root))
    throw IoError("dataset root '" + root.string() + "' is not a directory");
  for (const char* sub : {"real_images", "composite_images", "masks"})
    if (!fs::is_directory(root / sub))
      throw IoError("dataset root '" + root.string() + "' has no " + sub + "/ directory");

  std::vector<SampleFiles> files;
  std::vector<LoadIssue> skipped;
  std::map<std::string, bool> reals_used, masks_used;
  for (const auto& e : fs::directory_iterator(root / "real_images"))
    if (e.is_regular_file()) reals_used[e.path().filename().string()] = false;
  for (const auto& e : fs::directory_iterator(root / "masks"))
    if (e.is_regular_file()) masks_used[e.path().filename().string()] = false;

  std::vector<fs::path> composites;
  for (const auto& e : fs::directory_iterator(root / "composite_images"))
    if (e.is_regular_file()) composites.push_back(e.path());
  std::sort(composites.begin(), composites.end());

  for (const fs::path& comp : composites) {
    const std::string stem = comp.stem().string();
    if (!is_png(comp)) {
      skipped.push_back({stem, "unsupported format '" + comp.filename().string() +
                                   "' (only PNG is read)"});
      continue;
    }
    const auto v = stem.rfind('_');
    const auto m = v == std::string::npos || v == 0 ? std::string::npos
                                                    : stem.rfind('_', v - 1);
    if (m == std::string::npos || m == 0) {
      skipped.push_back({stem, "composite name is not <image>_<mask>_<variant>"});
      continue;
    }
    SampleFiles f;
    f.id = stem;
    f.composite = comp;
    f.real = root / "real_images" / (stem.substr(0, m) + ".png");
    f.mask = root / "masks" / (stem.substr(0, v) + ".png");
    if (!fs::is_regular_file(f.real)) {
      skipped.push_back({stem, "orphan: missing real image " + f.real.filename().string()});
      continue;
    }
    if (!fs::is_regular_file(f.mask)) {
      skipped.push_back({stem, "orphan: missing mask " + f.mask.filename().string()});
      continue;
    }
    reals_used[f.real.filename().string()] = true;
    masks_used[f.mask.filename().string()] = true;
    std::pair<int, int> rs, cs, ms;
    try {
      rs = png_size(f.real);
      cs = png_size(f.composite);
      ms = png_size(f.mask);
    } catch (const IoError& e) {
      skipped.push_back({stem, std::string("unreadable: ") + e.what()});
      continue;
    }
    if (rs != cs || rs != ms) {
      skipped.push_back({stem, "dimension mismatch: real " + size_str(rs) +
                                   ", composite " + size_str(cs) + ", mask " +
                                   size_str(ms)});
      continue;
    }
    f.width = rs.first;
    f.height = rs.second;
    files.push_back(std::move(f));
  }
  for (const auto& [name, used] : reals_used)
    if (!used) skipped.push_back({fs::path(name).stem().string(), "orphan: real image without composite"});
  for (const auto& [name, used] : masks_used)
    if (!used) skipped.push_back({fs::path(name).stem().string(), "orphan: mask without composite"});

  std::sort(files.begin(), files.end(),
            [](const SampleFiles& a, const SampleFiles& b) { return a.id < b.id; });
  return Dataset(root, std::move(files), std::move(skipped));
}

Sample Dataset::load(std::size_t i) const {
  const SampleFiles& f = files_.at(i);
  Sample s;
  s.id = f.id;
  s.real = read_png_rgb(f.real);
  s.composite = read_png_rgb(f.composite);
  s.mask = read_png_mask(f.mask);
  const Shape& r = s.real.shape();
  if (s.composite.shape().h != r.h || s.composite.shape().w != r.w ||
      s.mask.shape().h != r.h || s.mask.shape().w != r.w)
    throw DimensionError("h", "sample '" + f.id + "': real, composite and mask sizes differ");
  s.fg_ratio = foreground_ratio(s.mask);
  return s;
}

}  // namespace harmony::data
