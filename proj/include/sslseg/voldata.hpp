#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sslseg {

struct Shape3 {
  int depth = 0;   // number of 2D slices
  int height = 0;
  int width = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(depth) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t slice_size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// A stack of D in-plane slices with optional integer labels. Voxels are stored
// row-major with W fastest, matching the on-disk layout.
struct Volume {
  std::string id;
  Shape3 shape;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};  // mm per (slice, row, column)
  std::vector<float> voxels;
  std::optional<std::vector<std::uint8_t>> labels;

  std::size_t index(int d, int h, int w) const {
    return (static_cast<std::size_t>(d) * static_cast<std::size_t>(shape.height) +
            static_cast<std::size_t>(h)) *
               static_cast<std::size_t>(shape.width) +
           static_cast<std::size_t>(w);
  }
  std::span<const float> slice(int d) const {
    return std::span<const float>(voxels).subspan(static_cast<std::size_t>(d) * shape.slice_size(),
                                                  shape.slice_size());
  }
  std::span<const std::uint8_t> label_slice(int d) const {
    return std::span<const std::uint8_t>(*labels).subspan(
        static_cast<std::size_t>(d) * shape.slice_size(), shape.slice_size());
  }
  bool has_labels() const { return labels.has_value(); }

  // Throws DataError if any invariant (shape agreement, positive spacing,
  // finite voxels) is violated.
  void validate() const;
};

// Half-open slice range [begin, end).
struct SliceRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  friend bool operator==(const SliceRange&, const SliceRange&) = default;
};

// Split of D consecutive slices into S contiguous groups.
struct Partitioning {
  int depth = 0;
  std::vector<SliceRange> bounds;

  int count() const { return static_cast<int>(bounds.size()); }
  // Partition that owns slice `d`.
  int partition_of(int d) const;
};

// Balanced split; the D mod S remainder slices go to the earliest partitions.
// Throws ConfigError unless 1 <= S <= D.
Partitioning partition_volume(int depth, int partitions);

// .vol container: "SSLV", u32 version = 1, u32 D/H/W, 3 x f32 spacing,
// u8 has_labels, f32 voxels, optional u8 labels. Little-endian, no padding.
inline constexpr std::array<char, 4> kVolMagic{'S', 'S', 'L', 'V'};
inline constexpr std::uint32_t kVolVersion = 1;

std::vector<std::uint8_t> encode_volume(const Volume& v);
// `id` is attached to the decoded volume (the container does not store it).
Volume decode_volume(std::span<const std::uint8_t> bytes, std::string id = {});

void write_volume(const Volume& v, const std::filesystem::path& path);
// The volume id is the file stem.
Volume read_volume(const std::filesystem::path& path);

// Percentile with linear interpolation between order statistics
// (rank = p/100 * (n - 1)), p in [0, 100].
double percentile(std::span<const float> values, double p);

// (x - p1) / (p99 - p1) over the whole volume, clipped to [0, 1].
// Throws DataError when p99 == p1.
Volume normalize_volume(const Volume& v);

// In-plane resampling to `target_spacing` (row, column mm) with bilinear
// interpolation for voxels and nearest neighbour for labels, followed by a
// centered crop or symmetric zero pad to `target_size` (rows, columns).
Volume resample_and_pad(const Volume& v, std::array<double, 2> target_spacing,
                        std::array<int, 2> target_size);

}  // namespace sslseg
