#include "sslseg/voldata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sslseg/errors.hpp"

namespace sslseg {

static_assert(std::endian::native == std::endian::little,
              "the .vol codec assumes a little-endian host");

void Volume::validate() const {
  if (shape.depth <= 0 || shape.height <= 0 || shape.width <= 0)
    throw DataError("volume '" + id + "': non-positive shape");
  if (voxels.size() != shape.voxels())
    throw DataError("volume '" + id + "': voxel count does not match shape");
  if (labels && labels->size() != shape.voxels())
    throw DataError("volume '" + id + "': label count does not match shape");
  for (float s : spacing)
    if (!(s > 0.0f) || !std::isfinite(s)) throw DataError("volume '" + id + "': spacing must be positive");
  for (float x : voxels)
    if (!std::isfinite(x)) throw DataError("volume '" + id + "': non-finite voxel");
}

int Partitioning::partition_of(int d) const {
  for (int s = 0; s < count(); ++s)
    if (d >= bounds[static_cast<std::size_t>(s)].begin && d < bounds[static_cast<std::size_t>(s)].end)
      return s;
  throw ConfigError("slice index outside partitioning");
}

Partitioning partition_volume(int depth, int partitions) {
  if (partitions < 1 || partitions > depth)
    throw ConfigError("partition_volume: need 1 <= S <= D (S=" + std::to_string(partitions) +
                      ", D=" + std::to_string(depth) + ")");
  Partitioning p;
  p.depth = depth;
  const int base = depth / partitions;
  const int extra = depth % partitions;
  int begin = 0;
  for (int s = 0; s < partitions; ++s) {
    const int len = base + (s < extra ? 1 : 0);
    p.bounds.push_back({begin, begin + len});
    begin += len;
  }
  return p;
}

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  template <typename T>
  void put_array(const std::vector<T>& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(T));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  template <typename T>
  void get_array(std::vector<T>& v, std::size_t n, const char* what) {
    // Compare element counts to avoid overflow on absurd headers.
    if (n > (bytes.size() - pos) / sizeof(T))
      throw FormatError(std::string("truncated payload: ") + what, pos);
    v.resize(n);
    std::memcpy(v.data(), bytes.data() + pos, n * sizeof(T));
    pos += n * sizeof(T);
  }
  void need(std::size_t n, const char* what) const {
    if (bytes.size() - pos < n) throw FormatError(std::string("truncated header: ") + what, pos);
  }
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  v.validate();
  Writer w;
  for (char c : kVolMagic) w.put(c);
  w.put(kVolVersion);
  w.put(static_cast<std::uint32_t>(v.shape.depth));
  w.put(static_cast<std::uint32_t>(v.shape.height));
  w.put(static_cast<std::uint32_t>(v.shape.width));
  for (float s : v.spacing) w.put(s);
  w.put(static_cast<std::uint8_t>(v.labels ? 1 : 0));
  w.put_array(v.voxels);
  if (v.labels) w.put_array(*v.labels);
  return std::move(w.out);
}

Volume decode_volume(std::span<const std::uint8_t> bytes, std::string id) {
  Reader r(bytes);
  r.need(4, "magic");
  if (!std::equal(kVolMagic.begin(), kVolMagic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }))
    throw FormatError("bad magic, expected \"SSLV\"", 0);
  r.pos = 4;
  const std::size_t version_at = r.pos;
  if (r.get<std::uint32_t>("version") != kVolVersion)
    throw FormatError("unsupported format version", version_at);

  Volume v;
  v.id = std::move(id);
  const std::size_t shape_at = r.pos;
  const auto d = r.get<std::uint32_t>("depth");
  const auto h = r.get<std::uint32_t>("height");
  const auto wd = r.get<std::uint32_t>("width");
  if (d == 0 || h == 0 || wd == 0 || d > (1u << 16) || h > (1u << 16) || wd > (1u << 16))
    throw FormatError("inconsistent shape", shape_at);
  v.shape = {static_cast<int>(d), static_cast<int>(h), static_cast<int>(wd)};
  for (auto& s : v.spacing) {
    const std::size_t at = r.pos;
    s = r.get<float>("spacing");
    if (!(s > 0.0f) || !std::isfinite(s)) throw FormatError("non-positive spacing", at);
  }
  const std::size_t flag_at = r.pos;
  const auto has_labels = r.get<std::uint8_t>("has_labels");
  if (has_labels > 1) throw FormatError("has_labels must be 0 or 1", flag_at);
  r.get_array(v.voxels, v.shape.voxels(), "voxels");
  if (has_labels) {
    std::vector<std::uint8_t> labels;
    r.get_array(labels, v.shape.voxels(), "labels");
    v.labels = std::move(labels);
  }
  if (r.pos != bytes.size()) throw FormatError("trailing bytes after payload", r.pos);
  for (std::size_t i = 0; i < v.voxels.size(); ++i)
    if (!std::isfinite(v.voxels[i]))
      throw FormatError("non-finite voxel", 33 + i * sizeof(float));
  return v;
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  const auto bytes = encode_volume(v);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open volume: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_volume(bytes, path.stem().string());
}

double percentile(std::span<const float> values, double p) {
  if (values.empty()) throw DataError("percentile of empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("percentile outside [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Volume normalize_volume(const Volume& v) {
  v.validate();
  const double p1 = percentile(v.voxels, 1.0);
  const double p99 = percentile(v.voxels, 99.0);
  if (!(p99 > p1)) throw DataError("volume '" + v.id + "' is degenerate: 99th percentile equals 1st");
  Volume out = v;
  const double range = p99 - p1;
  for (float& x : out.voxels) {
    const double y = (static_cast<double>(x) - p1) / range;
    x = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

namespace {

int resampled_extent(int n, double spacing_in, double spacing_out) {
  return std::max(1, static_cast<int>(std::lround(static_cast<double>(n) * spacing_in / spacing_out)));
}

// Center-aligned source coordinate of output sample `i`.
double source_coord(int i, double ratio) { return (static_cast<double>(i) + 0.5) * ratio - 0.5; }

}  // namespace

Volume resample_and_pad(const Volume& v, std::array<double, 2> target_spacing,
                        std::array<int, 2> target_size) {
  if (!(target_spacing[0] > 0.0) || !(target_spacing[1] > 0.0))
    throw ConfigError("resample_and_pad: target spacing must be positive");
  if (target_size[0] <= 0 || target_size[1] <= 0)
    throw ConfigError("resample_and_pad: target size must be positive");
  v.validate();

  const int h_in = v.shape.height, w_in = v.shape.width;
  const bool same_spacing = static_cast<float>(target_spacing[0]) == v.spacing[1] &&
                            static_cast<float>(target_spacing[1]) == v.spacing[2];
  const int h_rs = same_spacing ? h_in : resampled_extent(h_in, v.spacing[1], target_spacing[0]);
  const int w_rs = same_spacing ? w_in : resampled_extent(w_in, v.spacing[2], target_spacing[1]);
  const double ry = static_cast<double>(h_in) / h_rs;
  const double rx = static_cast<double>(w_in) / w_rs;

  // Resampled (pre crop/pad) slice stack.
  const std::size_t rs_slice = static_cast<std::size_t>(h_rs) * static_cast<std::size_t>(w_rs);
  std::vector<float> vox(rs_slice * static_cast<std::size_t>(v.shape.depth));
  std::vector<std::uint8_t> lab;
  if (v.labels) lab.resize(vox.size());

  for (int d = 0; d < v.shape.depth; ++d) {
    float* vs = vox.data() + static_cast<std::size_t>(d) * rs_slice;
    std::uint8_t* ls = v.labels ? lab.data() + static_cast<std::size_t>(d) * rs_slice : nullptr;
    if (same_spacing) {
      std::copy_n(v.voxels.begin() + static_cast<std::ptrdiff_t>(d * v.shape.slice_size()), rs_slice, vs);
      if (ls) std::copy_n(v.labels->begin() + static_cast<std::ptrdiff_t>(d * v.shape.slice_size()), rs_slice, ls);
      continue;
    }
    for (int y = 0; y < h_rs; ++y) {
      const double sy = std::clamp(source_coord(y, ry), 0.0, static_cast<double>(h_in - 1));
      const int y0 = static_cast<int>(std::floor(sy));
      const int y1 = std::min(y0 + 1, h_in - 1);
      const double fy = sy - y0;
      const int ny = std::clamp(static_cast<int>(std::floor((y + 0.5) * ry)), 0, h_in - 1);
      for (int x = 0; x < w_rs; ++x) {
        const double sx = std::clamp(source_coord(x, rx), 0.0, static_cast<double>(w_in - 1));
        const int x0 = static_cast<int>(std::floor(sx));
        const int x1 = std::min(x0 + 1, w_in - 1);
        const double fx = sx - x0;
        const double a = v.voxels[v.index(d, y0, x0)], b = v.voxels[v.index(d, y0, x1)];
        const double c = v.voxels[v.index(d, y1, x0)], e = v.voxels[v.index(d, y1, x1)];
        const double top = a + fx * (b - a);
        const double bot = c + fx * (e - c);
        vs[static_cast<std::size_t>(y) * static_cast<std::size_t>(w_rs) + static_cast<std::size_t>(x)] =
            static_cast<float>(top + fy * (bot - top));
        if (ls) {
          const int nx = std::clamp(static_cast<int>(std::floor((x + 0.5) * rx)), 0, w_in - 1);
          ls[static_cast<std::size_t>(y) * static_cast<std::size_t>(w_rs) + static_cast<std::size_t>(x)] =
              (*v.labels)[v.index(d, ny, nx)];
        }
      }
    }
  }

  Volume out;
  out.id = v.id;
  out.shape = {v.shape.depth, target_size[0], target_size[1]};
  out.spacing = {v.spacing[0], static_cast<float>(target_spacing[0]), static_cast<float>(target_spacing[1])};
  out.voxels.assign(out.shape.voxels(), 0.0f);
  if (v.labels) out.labels = std::vector<std::uint8_t>(out.shape.voxels(), 0);

  // Source offset (crop) or destination offset (pad) per axis, center anchored.
  const int crop_y = std::max(0, (h_rs - target_size[0]) / 2);
  const int crop_x = std::max(0, (w_rs - target_size[1]) / 2);
  const int pad_y = std::max(0, (target_size[0] - h_rs) / 2);
  const int pad_x = std::max(0, (target_size[1] - w_rs) / 2);
  const int copy_h = std::min(h_rs, target_size[0]);
  const int copy_w = std::min(w_rs, target_size[1]);
  for (int d = 0; d < v.shape.depth; ++d) {
    for (int y = 0; y < copy_h; ++y) {
      const std::size_t src = static_cast<std::size_t>(d) * rs_slice +
                              static_cast<std::size_t>(y + crop_y) * static_cast<std::size_t>(w_rs) +
                              static_cast<std::size_t>(crop_x);
      const std::size_t dst = out.index(d, y + pad_y, pad_x);
      std::copy_n(vox.begin() + static_cast<std::ptrdiff_t>(src), copy_w,
                  out.voxels.begin() + static_cast<std::ptrdiff_t>(dst));
      if (v.labels)
        std::copy_n(lab.begin() + static_cast<std::ptrdiff_t>(src), copy_w,
                    out.labels->begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  return out;
}

}  // namespace sslseg
