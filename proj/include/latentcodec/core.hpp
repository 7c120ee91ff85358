#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latentcodec/errors.hpp"

namespace lc {

// Bin grid shared by every probability table in the toolkit. Bins are
// unit-width and centered on the integers of [y_min, y_max]; bin i (1-based)
// has center y_min + i - 1. Storage elsewhere is 0-based; the 1-based
// convention only surfaces through bin_index().
struct HistogramSpec {
  int32_t y_min = 0;
  int32_t y_max = 0;

  int num_bins() const { return static_cast<int>(y_max) - y_min + 1; }
  int32_t bin_center(int i) const { return y_min + i - 1; }  // i in 1..B

  bool operator==(const HistogramSpec&) const = default;

  void validate() const {
    if (y_max < y_min) {
      throw BadShapeError("histogram spec has y_max < y_min");
    }
  }
};

// Integer-quantized latent tensor, shape C x H_y x W_y, with its value
// support and the image-to-latent downscale factor s (image dims are
// s*H_y x s*W_y).
struct LatentTensor {
  std::vector<int32_t> data;  // row-major [c][y][x]
  HistogramSpec spec;
  uint32_t channels = 0;
  uint32_t height = 0;
  uint32_t width = 0;
  uint32_t downscale = 1;  // s

  size_t elems_per_channel() const { return size_t(height) * width; }
  size_t image_pixels() const {
    return size_t(downscale) * downscale * height * width;
  }
  std::span<const int32_t> channel(uint32_t c) const {
    return {data.data() + size_t(c) * elems_per_channel(), elems_per_channel()};
  }
  std::span<int32_t> channel(uint32_t c) {
    return {data.data() + size_t(c) * elems_per_channel(), elems_per_channel()};
  }
};

// Discrete probability distribution over the spec's B bins.
struct Pmf {
  HistogramSpec spec;
  std::vector<double> mass;  // length B, entries >= 0, sum 1 within 1e-9

  void validate() const;
};

// One Pmf per latent channel; all share a single spec.
struct PmfBank {
  std::vector<Pmf> pmfs;

  size_t channels() const { return pmfs.size(); }
  const HistogramSpec& spec() const { return pmfs.at(0).spec; }
  void validate() const;
};

// Probability floor applied wherever a pmf feeds a log or a frequency
// table. Matches the 16-bit coder precision.
inline constexpr double kPmfFloor = 1.0 / 65536.0;  // 2^-16

// Returns p with every entry raised to at least kPmfFloor, renormalized.
Pmf floored(const Pmf& p);

// round-half-away-from-zero, the global tie rule for quantization.
inline double round_half_away(double v) { return std::round(v); }

struct ClampResult {
  LatentTensor tensor;
  uint64_t clamps = 0;  // number of values that fell outside the support
};

// Rounds a real tensor to integers and clamps into [y_min, y_max].
// Total: out-of-support inputs are clamped and counted, never rejected.
ClampResult clamp_to_support(std::span<const double> raw, const HistogramSpec& spec,
                             uint32_t channels, uint32_t height, uint32_t width,
                             uint32_t downscale);

// 1-based bin index of an in-support integer value: value - y_min + 1.
int bin_index(int32_t value, const HistogramSpec& spec);

// ---------------------------------------------------------------------------
// LTF tensor file format (little-endian):
//   magic "LTF1"
//   u8  dtype        0 = i32, 1 = f32
//   u32 C, u32 H_y, u32 W_y
//   i32 y_min, i32 y_max
//   u32 s
//   payload, row-major [c][y][x]
// f32 files are ingested through clamp_to_support; i32 files must already
// be in support.
// ---------------------------------------------------------------------------

void write_ltf(const std::filesystem::path& path, const LatentTensor& t);
void write_ltf_f32(const std::filesystem::path& path, std::span<const float> raw,
                   const HistogramSpec& spec, uint32_t channels, uint32_t height,
                   uint32_t width, uint32_t downscale);

struct LtfReadResult {
  LatentTensor tensor;
  uint64_t clamps = 0;  // nonzero only for f32 ingestion
};

LtfReadResult read_ltf(const std::filesystem::path& path);

// Serialized LTF payload bytes (used by the CLI round-trip check).
std::vector<uint8_t> ltf_bytes(const LatentTensor& t);

}  // namespace lc
