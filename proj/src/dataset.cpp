#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "patchrl/harness.hpp"
#include "patchrl/png_io.hpp"
#include "patchrl/rng.hpp"

namespace patchrl::harness {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string identity_label(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "id%02d", i);
  return buf;
}

// Smooth per-identity signature: a gentle color ramp plus a handful of
// localized Gaussian bumps whose placement/contrast distinguish identities.
img::Image identity_base(const DatasetConfig& cfg, int identity) {
  rng::Stream rs(rng::mix(cfg.seed, 0xba5e, static_cast<std::uint64_t>(identity)));
  img::Image base = img::Image::constant(cfg.height, cfg.width, cfg.channels, 0.5);

  const double angle = rs.uniform(0.0, 2.0 * 3.141592653589793);
  std::vector<double> ramp_amp(static_cast<std::size_t>(cfg.channels));
  for (auto& a : ramp_amp) a = rs.uniform(-0.12, 0.12);
  for (int r = 0; r < cfg.height; ++r)
    for (int c = 0; c < cfg.width; ++c) {
      const double proj = (r - cfg.height / 2.0) * std::sin(angle) +
                          (c - cfg.width / 2.0) * std::cos(angle);
      for (int ch = 0; ch < cfg.channels; ++ch)
        base.at(r, c, ch) += ramp_amp[static_cast<std::size_t>(ch)] * proj /
                             std::max(cfg.height, cfg.width);
    }

  const int n_bumps = 4;
  for (int b = 0; b < n_bumps; ++b) {
    const double cy = rs.uniform(2.0, cfg.height - 3.0);
    const double cx = rs.uniform(2.0, cfg.width - 3.0);
    const double sigma = rs.uniform(2.0, 5.0);
    std::vector<double> amp(static_cast<std::size_t>(cfg.channels));
    for (auto& a : amp) a = rs.uniform(-0.55, 0.55);
    for (int r = 0; r < cfg.height; ++r)
      for (int c = 0; c < cfg.width; ++c) {
        const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
        const double g = std::exp(-d2 / (2.0 * sigma * sigma));
        for (int ch = 0; ch < cfg.channels; ++ch)
          base.at(r, c, ch) += amp[static_cast<std::size_t>(ch)] * g;
      }
  }
  for (int i = 0; i < base.size(); ++i)
    base.data[i] = std::clamp(base.data[i], 0.08, 0.92);
  return base;
}

img::Image noisy_copy(const img::Image& base, double noise, std::uint64_t seed) {
  img::Image out = base;
  rng::Stream rs(seed);
  for (int i = 0; i < out.size(); ++i)
    out.data[i] = std::clamp(out.data[i] + rs.uniform(-noise, noise), 0.0, 1.0);
  return out;
}

}  // namespace

models::Dataset generate_synthetic_dataset(const DatasetConfig& cfg,
                                           const std::vector<img::Rect>& exclusions) {
  if (cfg.n_identities < 2)
    throw std::invalid_argument("generate_synthetic_dataset: need >= 2 identities");
  models::Dataset ds;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.channels = cfg.channels;
  ds.exclusions = exclusions;
  for (int i = 0; i < cfg.n_identities; ++i) {
    const std::string label = identity_label(i);
    const img::Image base = identity_base(cfg, i);
    for (int k = 0; k < cfg.per_identity; ++k)
      ds.train.push_back(
          {label, noisy_copy(base, cfg.noise,
                             rng::mix(cfg.seed, 0x7121a11, static_cast<std::uint64_t>(i) * 100000 + k))});
    for (int k = 0; k < cfg.test_per_identity; ++k)
      ds.test.push_back(
          {label, noisy_copy(base, cfg.noise,
                             rng::mix(cfg.seed, 0x7e57, static_cast<std::uint64_t>(i) * 100000 + k))});
  }
  return ds;
}

void save_dataset(const std::string& dir, const models::Dataset& ds) {
  fs::create_directories(fs::path(dir) / "train");
  fs::create_directories(fs::path(dir) / "test");
  ordered_json manifest;
  manifest["dims"] = {{"height", ds.height}, {"width", ds.width}, {"channels", ds.channels}};
  manifest["images"] = ordered_json::array();
  std::map<std::string, int> counters;
  auto dump_split = [&](const std::vector<models::LabeledImage>& items,
                        const std::string& split) {
    for (const auto& li : items) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s/%s_%03d.png", split.c_str(),
                    li.label.c_str(), counters[split + li.label]++);
      io::save_png((fs::path(dir) / name).string(), li.image);
      manifest["images"].push_back(
          {{"file", name}, {"label", li.label}, {"split", split}});
    }
  };
  dump_split(ds.train, "train");
  dump_split(ds.test, "test");
  {
    std::ofstream f(fs::path(dir) / "labels.json");
    f << manifest.dump(2) << "\n";
  }
  io::save_exclusions((fs::path(dir) / "exclusions.json").string(), ds.exclusions);
}

models::Dataset load_dataset(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "labels.json");
  if (!f) throw std::runtime_error("cannot read dataset manifest in " + dir);
  ordered_json manifest = ordered_json::parse(f);
  models::Dataset ds;
  ds.height = manifest.at("dims").at("height").get<int>();
  ds.width = manifest.at("dims").at("width").get<int>();
  ds.channels = manifest.at("dims").at("channels").get<int>();
  for (const auto& e : manifest.at("images")) {
    models::LabeledImage li;
    li.label = e.at("label").get<std::string>();
    li.image = io::load_png((fs::path(dir) / e.at("file").get<std::string>()).string());
    if (e.at("split").get<std::string>() == "train")
      ds.train.push_back(std::move(li));
    else
      ds.test.push_back(std::move(li));
  }
  const auto excl_path = fs::path(dir) / "exclusions.json";
  if (fs::exists(excl_path)) ds.exclusions = io::load_exclusions(excl_path.string());
  return ds;
}

}  // namespace patchrl::harness
