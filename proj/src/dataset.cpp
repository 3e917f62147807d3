#include "sslseg/dataset.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/rng.hpp"
#include "sslseg/synth.hpp"

namespace sslseg {

using nlohmann::json;

Volume preprocess_volume(const Volume& v, const std::optional<std::array<double, 2>>& target_spacing, int height,
                         int width) {
  Volume n = normalize_volume(v);
  const std::array<double, 2> spacing =
      target_spacing ? *target_spacing : std::array<double, 2>{v.spacing[1], v.spacing[2]};
  return resample_and_pad(n, spacing, {height, width});
}

void write_manifest(const std::filesystem::path& dir, const std::vector<Volume>& pre,
                    const std::vector<Volume>& test) {
  std::filesystem::create_directories(dir / "volumes");
  json vols = json::array();
  auto emit = [&](const std::vector<Volume>& list, const char* split) {
    for (const auto& v : list) {
      const std::string rel = "volumes/" + v.id + ".vol";
      write_volume(v, dir / rel);
      vols.push_back({{"id", v.id}, {"split", split}, {"path", rel}});
    }
  };
  emit(pre, "pre");
  emit(test, "test");
  std::ofstream f(dir / "manifest.json");
  if (!f) throw DataError("cannot write manifest in " + dir.string());
  f << json{{"volumes", vols}}.dump(2) << "\n";
}

namespace {

std::pair<std::vector<Volume>, std::vector<Volume>> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  std::vector<Volume> pre, test;
  try {
    for (const auto& e : j.at("volumes")) {
      const std::string split = e.at("split").get<std::string>();
      Volume v = read_volume(path.parent_path() / e.at("path").get<std::string>());
      if (split == "pre") pre.push_back(std::move(v));
      else if (split == "test") test.push_back(std::move(v));
      else throw DataError("unknown split '" + split + "' in manifest");
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  return {std::move(pre), std::move(test)};
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  std::vector<Volume> pre, test;
  if (d.manifest.empty()) {
    auto all = generate_dataset(d.phantom);
    for (int i = 0; i < d.n_pre; ++i) pre.push_back(std::move(all[static_cast<std::size_t>(i)]));
    for (int i = 0; i < d.n_ts; ++i) test.push_back(std::move(all[static_cast<std::size_t>(d.n_pre + i)]));
  } else {
    std::tie(pre, test) = read_manifest(d.manifest);
    if (static_cast<int>(pre.size()) < d.n_pre || static_cast<int>(test.size()) < d.n_ts)
      throw DataError("manifest holds fewer volumes than n_pre / n_ts");
    pre.resize(static_cast<std::size_t>(d.n_pre));
    test.resize(static_cast<std::size_t>(d.n_ts));
  }
  Dataset out;
  const int h = cfg.network.input_height, w = cfg.network.input_width;
  for (const auto& v : pre) out.pre.push_back(preprocess_volume(v, d.target_spacing, h, w));
  for (const auto& v : test) {
    if (!v.has_labels()) throw DataError("test volume " + v.id + " has no labels");
    out.test.push_back(preprocess_volume(v, d.target_spacing, h, w));
  }
  for (const auto& list : {&out.pre, &out.test})
    for (const auto& v : *list)
      if (v.has_labels())
        for (auto l : *v.labels)
          if (l >= cfg.network.num_classes)
            throw DataError("volume " + v.id + " has label " + std::to_string(l) + " >= num_classes");
  return out;
}

Split sample_split(int n_pre, int n_tr, int n_vl, std::uint64_t seed) {
  if (n_tr < 1 || n_vl < 1 || n_tr + n_vl > n_pre) throw ConfigError("invalid split sizes");
  Rng rng(seed);
  auto pick = rng.sample_without_replacement(n_pre, n_tr + n_vl);
  Split s;
  s.train.assign(pick.begin(), pick.begin() + n_tr);
  s.val.assign(pick.begin() + n_tr, pick.end());
  return s;
}

std::vector<double> slice_values(const Volume& v, int d) {
  auto s = v.slice(d);
  return std::vector<double>(s.begin(), s.end());
}

}  // namespace sslseg
