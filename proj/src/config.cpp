#include "sslseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/losses.hpp"

namespace sslseg {

using nlohmann::json;

std::string to_string(GlobalStrategy s) {
  switch (s) {
    case GlobalStrategy::none: return "none";
    case GlobalStrategy::GR: return "GR";
    case GlobalStrategy::GDminus: return "GDminus";
    case GlobalStrategy::GD: return "GD";
  }
  return "?";
}

std::string to_string(LocalStrategy s) {
  switch (s) {
    case LocalStrategy::none: return "none";
    case LocalStrategy::LR: return "LR";
    case LocalStrategy::LD: return "LD";
  }
  return "?";
}

GlobalStrategy parse_global_strategy(const std::string& s) {
  for (auto g : {GlobalStrategy::none, GlobalStrategy::GR, GlobalStrategy::GDminus, GlobalStrategy::GD})
    if (to_string(g) == s) return g;
  throw ConfigError("unknown global strategy '" + s + "' (expected none, GR, GDminus or GD)");
}

LocalStrategy parse_local_strategy(const std::string& s) {
  for (auto l : {LocalStrategy::none, LocalStrategy::LR, LocalStrategy::LD})
    if (to_string(l) == s) return l;
  throw ConfigError("unknown local strategy '" + s + "' (expected none, LR or LD)");
}

namespace {

// Reads the keys of one JSON object and rejects any it did not consume.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }
  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }
  template <typename F>
  void object(const char* key, F&& fn) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    Fields sub(j_.at(key), where(key));
    fn(sub);
    sub.finish();
  }
  const json* raw(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError("unknown config key " + where(k.c_str()));
  }
  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "<root>" : path_;
    if (key) p = path_.empty() ? std::string(key) : path_ + "." + key;
    return p;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_family(Fields& f, TransformFamily& t) {
  f.get("crop_resize", t.crop_resize);
  f.get("crop_area_min", t.crop_area_min);
  f.get("crop_area_max", t.crop_area_max);
  f.get("flip_h", t.flip_h);
  f.get("flip_v", t.flip_v);
  f.get("flip_probability", t.flip_probability);
  f.get("rotate90", t.rotate90);
  f.get("brightness", t.brightness);
  f.get("brightness_max", t.brightness_max);
  f.get("contrast", t.contrast);
  f.get("contrast_min", t.contrast_min);
  f.get("contrast_max", t.contrast_max);
}

json write_family(const TransformFamily& t) {
  return {{"crop_resize", t.crop_resize},     {"crop_area_min", t.crop_area_min},
          {"crop_area_max", t.crop_area_max}, {"flip_h", t.flip_h},
          {"flip_v", t.flip_v},               {"flip_probability", t.flip_probability},
          {"rotate90", t.rotate90},           {"brightness", t.brightness},
          {"brightness_max", t.brightness_max}, {"contrast", t.contrast},
          {"contrast_min", t.contrast_min},   {"contrast_max", t.contrast_max}};
}

std::string exclusion_name(RegionExclusion e) {
  return e == RegionExclusion::same_cell ? "same_cell" : "same_row_or_col";
}
std::string negative_maps_name(RegionNegativeMaps m) {
  return m == RegionNegativeMaps::all_listed ? "all_listed" : "second_only";
}

}  // namespace

void ExperimentConfig::validate() const {
  network.validate();
  const auto& d = dataset;
  if (d.n_pre < 1 || d.n_tr < 1 || d.n_vl < 1 || d.n_ts < 1) throw ConfigError("dataset split sizes must be >= 1");
  if (d.n_tr + d.n_vl > d.n_pre) throw ConfigError("n_tr + n_vl must not exceed n_pre");
  if (d.manifest.empty()) {
    d.phantom.validate();
    if (d.phantom.num_volumes < d.n_pre + d.n_ts)
      throw ConfigError("phantom.num_volumes must be at least n_pre + n_ts");
    if (d.phantom.num_classes != network.num_classes)
      throw ConfigError("phantom.num_classes must equal network.num_classes");
  }
  if (d.target_spacing && ((*d.target_spacing)[0] <= 0.0 || (*d.target_spacing)[1] <= 0.0))
    throw ConfigError("target_spacing must be positive");
  if (partitions < 1) throw ConfigError("partitions must be >= 1");
  if (batch_images < 2) throw ConfigError("batch_images must be >= 2");
  if (finetune_batch < 1) throw ConfigError("finetune_batch must be >= 1");
  if (iterations < 1 || finetune_iterations < 1) throw ConfigError("iteration counts must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  LossConfig{tau}.validate();
  if (region_size < 1) throw ConfigError("region_size must be >= 1");
  if (region_count < 1) throw ConfigError("region_count must be >= 1");
  if (!(lambda_l >= 0.0)) throw ConfigError("lambda_l must be >= 0");
  if (mixup_alpha && !(*mixup_alpha > 0.0)) throw ConfigError("mixup_alpha must be positive");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0))
    throw ConfigError("invalid Adam hyper-parameters");
  if (validation_interval < 1 || log_interval < 1) throw ConfigError("intervals must be >= 1");
  global_transforms.validate();
  local_transforms.validate();
  finetune_transforms.validate();
  if (local_transforms.mode != FamilyMode::local_stage)
    throw ConfigError("local_transforms must be an intensity-only family");
  for (int n : train_sizes)
    if (n < 1 || n + d.n_vl > d.n_pre) throw ConfigError("train_sizes entries must lie in [1, n_pre - n_vl]");
  for (const auto& a : arms)
    if (a.name.empty()) throw ConfigError("arm names must not be empty");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Fields root(j, "");
  root.object("dataset", [&](Fields& f) {
    auto& d = c.dataset;
    f.get("manifest", d.manifest);
    f.get("n_pre", d.n_pre);
    f.get("n_tr", d.n_tr);
    f.get("n_vl", d.n_vl);
    f.get("n_ts", d.n_ts);
    f.get("target_spacing", d.target_spacing);
    f.object("phantom", [&](Fields& p) {
      p.get("num_volumes", d.phantom.num_volumes);
      std::array<int, 3> shape{d.phantom.shape.depth, d.phantom.shape.height, d.phantom.shape.width};
      p.get("shape", shape);
      d.phantom.shape = {shape[0], shape[1], shape[2]};
      p.get("num_classes", d.phantom.num_classes);
      p.get("seed", d.phantom.seed);
      p.get("inter_subject_jitter", d.phantom.inter_subject_jitter);
      p.get("intensity_jitter", d.phantom.intensity_jitter);
    });
  });
  root.object("network", [&](Fields& f) {
    auto& n = c.network;
    f.get("enc_blocks", n.enc_blocks);
    f.get("base_channels", n.base_channels);
    f.get("channel_cap", n.channel_cap);
    f.get("dec_blocks_pretrained", n.dec_blocks_pretrained);
    f.get("g1_dims", n.g1_dims);
    f.get("g2_channels", n.g2_channels);
    f.get("num_classes", n.num_classes);
    std::array<int, 2> size{n.input_height, n.input_width};
    f.get("input_size", size);
    n.input_height = size[0];
    n.input_width = size[1];
  });
  std::string gs = to_string(c.global_strategy), ls = to_string(c.local_strategy);
  root.get("global_strategy", gs);
  root.get("local_strategy", ls);
  c.global_strategy = parse_global_strategy(gs);
  c.local_strategy = parse_local_strategy(ls);
  root.get("partitions", c.partitions);
  root.get("batch_images", c.batch_images);
  root.get("finetune_batch", c.finetune_batch);
  root.get("iterations", c.iterations);
  root.get("finetune_iterations", c.finetune_iterations);
  root.get("learning_rate", c.learning_rate);
  root.get("tau", c.tau);
  root.get("region_size", c.region_size);
  root.get("region_count", c.region_count);
  root.object("region_options", [&](Fields& f) {
    std::string ex = exclusion_name(c.region_options.exclusion);
    std::string nm = negative_maps_name(c.region_options.negative_maps);
    f.get("exclusion", ex);
    f.get("negative_maps", nm);
    if (ex == "same_cell") c.region_options.exclusion = RegionExclusion::same_cell;
    else if (ex == "same_row_or_col") c.region_options.exclusion = RegionExclusion::same_row_or_col;
    else throw ConfigError("region_options.exclusion must be same_cell or same_row_or_col");
    if (nm == "all_listed") c.region_options.negative_maps = RegionNegativeMaps::all_listed;
    else if (nm == "second_only") c.region_options.negative_maps = RegionNegativeMaps::second_only;
    else throw ConfigError("region_options.negative_maps must be all_listed or second_only");
  });
  root.get("lambda_l", c.lambda_l);
  root.get("mixup_alpha", c.mixup_alpha);
  root.get("seeds", c.seeds);
  root.object("adam", [&](Fields& f) {
    f.get("beta1", c.adam.beta1);
    f.get("beta2", c.adam.beta2);
    f.get("eps", c.adam.eps);
  });
  root.get("validation_interval", c.validation_interval);
  root.get("log_interval", c.log_interval);
  root.object("transforms", [&](Fields& f) {
    f.object("global", [&](Fields& t) { read_family(t, c.global_transforms); });
    f.object("local", [&](Fields& t) { read_family(t, c.local_transforms); });
    f.object("finetune", [&](Fields& t) { read_family(t, c.finetune_transforms); });
  });
  if (const json* arms = root.raw("arms")) {
    if (!arms->is_array()) throw ConfigError("arms must be an array");
    for (std::size_t i = 0; i < arms->size(); ++i) {
      Fields f((*arms)[i], "arms[" + std::to_string(i) + "]");
      Arm a;
      std::string g = "none", l = "none";
      f.get("name", a.name);
      f.get("global", g);
      f.get("local", l);
      f.finish();
      a.global = parse_global_strategy(g);
      a.local = parse_local_strategy(l);
      c.arms.push_back(a);
    }
  }
  root.get("train_sizes", c.train_sizes);
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  const auto& n = c.network;
  json arms = json::array();
  for (const auto& a : c.arms)
    arms.push_back({{"name", a.name}, {"global", to_string(a.global)}, {"local", to_string(a.local)}});
  json j = {
      {"dataset",
       {{"manifest", d.manifest},
        {"n_pre", d.n_pre},
        {"n_tr", d.n_tr},
        {"n_vl", d.n_vl},
        {"n_ts", d.n_ts},
        {"target_spacing", d.target_spacing ? json(*d.target_spacing) : json(nullptr)},
        {"phantom",
         {{"num_volumes", d.phantom.num_volumes},
          {"shape", {d.phantom.shape.depth, d.phantom.shape.height, d.phantom.shape.width}},
          {"num_classes", d.phantom.num_classes},
          {"seed", d.phantom.seed},
          {"inter_subject_jitter", d.phantom.inter_subject_jitter},
          {"intensity_jitter", d.phantom.intensity_jitter}}}}},
      {"network",
       {{"enc_blocks", n.enc_blocks},
        {"base_channels", n.base_channels},
        {"channel_cap", n.channel_cap},
        {"dec_blocks_pretrained", n.dec_blocks_pretrained},
        {"g1_dims", n.g1_dims},
        {"g2_channels", n.g2_channels},
        {"num_classes", n.num_classes},
        {"input_size", {n.input_height, n.input_width}}}},
      {"global_strategy", to_string(c.global_strategy)},
      {"local_strategy", to_string(c.local_strategy)},
      {"partitions", c.partitions},
      {"batch_images", c.batch_images},
      {"finetune_batch", c.finetune_batch},
      {"iterations", c.iterations},
      {"finetune_iterations", c.finetune_iterations},
      {"learning_rate", c.learning_rate},
      {"tau", c.tau},
      {"region_size", c.region_size},
      {"region_count", c.region_count},
      {"region_options",
       {{"exclusion", exclusion_name(c.region_options.exclusion)},
        {"negative_maps", negative_maps_name(c.region_options.negative_maps)}}},
      {"lambda_l", c.lambda_l},
      {"mixup_alpha", c.mixup_alpha ? json(*c.mixup_alpha) : json(nullptr)},
      {"seeds", c.seeds},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"validation_interval", c.validation_interval},
      {"log_interval", c.log_interval},
      {"transforms",
       {{"global", write_family(c.global_transforms)},
        {"local", write_family(c.local_transforms)},
        {"finetune", write_family(c.finetune_transforms)}}},
      {"arms", arms},
      {"train_sizes", c.train_sizes},
  };
  return j.dump(2);
}

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.network = NetworkConfig::desk();
  c.partitions = 3;
  c.batch_images = 18;
  c.finetune_batch = 4;
  c.iterations = 2000;
  c.finetune_iterations = 2000;
  c.region_size = 1;
  c.region_count = 13;
  c.arms = {{"random", GlobalStrategy::none, LocalStrategy::none},
            {"GR", GlobalStrategy::GR, LocalStrategy::none},
            {"GD", GlobalStrategy::GD, LocalStrategy::none},
            {"GD+LR", GlobalStrategy::GD, LocalStrategy::LR}};
  c.seeds = {1, 2, 3};
  return c;
}

}  // namespace sslseg
