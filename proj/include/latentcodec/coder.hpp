#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latentcodec/core.hpp"

// Entropy coding layer: quantized frequency tables, a byte-wise rANS coder
// over them, and the DCS1 bitstream container. Everything here is integer
// arithmetic, so identical inputs produce identical bytes on any platform.

namespace lc::coder {

inline constexpr int kFreqPrecision = 16;  // frequencies sum to 2^16
inline constexpr uint32_t kFreqTotal = 1u << kFreqPrecision;

// Frequency table over B bins. Every bin has freq >= 1 so every in-support
// symbol is codable; the cumulative table has B+1 entries with cum[B] = 2^16.
struct FreqTable {
  std::vector<uint32_t> freqs;
  std::vector<uint32_t> cum;  // cum[0] = 0, cum[B] = kFreqTotal

  size_t num_bins() const { return freqs.size(); }

  // Ideal code length of symbol s in bits, -log2(freq/2^16).
  double bits_for(size_t s) const;
};

// Largest-remainder quantization of p * 2^16 with a floor of 1 per bin.
// Deterministic: remainder ties and the donors for the floor are both
// resolved by lower index first.
FreqTable quantize_pmf(const Pmf& p);

// Symbols are 0-based bin indices in [0, B).
std::vector<uint8_t> encode_channel(std::span<const int32_t> symbols,
                                    const FreqTable& table);
std::vector<int32_t> decode_channel(std::span<const uint8_t> bytes,
                                    const FreqTable& table, size_t count);

// Multi-table variant: one rANS stream over several symbol runs, switching
// tables between runs (used for side-info payloads where per-run length
// prefixes would be wasteful). Decode must pass the same run lengths.
std::vector<uint8_t> encode_interleaved(
    std::span<const std::span<const int32_t>> runs,
    std::span<const FreqTable* const> tables);
std::vector<std::vector<int32_t>> decode_interleaved(
    std::span<const uint8_t> bytes, std::span<const FreqTable* const> tables,
    std::span<const size_t> counts);

// ---------------------------------------------------------------------------
// DCS1 bitstream container (little-endian):
//   magic "DCS1"
//   u8  version (1)
//   u8  codec tag       0 = static, 1 = gmm, 2 = learned
//   i32 y_min, i32 y_max
//   u32 C, u32 H_y, u32 W_y, u32 s
//   u32 side_len,   side-info bytes
//   u32 latent_len, latent payload bytes
// A header-only stream (both payloads empty) is exactly 38 bytes.
// ---------------------------------------------------------------------------

inline constexpr uint8_t kContainerVersion = 1;
inline constexpr size_t kHeaderOnlyStreamBytes = 38;

enum class CodecTag : uint8_t { kStatic = 0, kGmm = 1, kLearned = 2 };

struct StreamHeader {
  uint8_t version = kContainerVersion;
  CodecTag codec = CodecTag::kStatic;
  HistogramSpec spec;
  uint32_t channels = 0;
  uint32_t height = 0;
  uint32_t width = 0;
  uint32_t downscale = 1;

  bool operator==(const StreamHeader&) const = default;
};

struct CodedStream {
  StreamHeader header;
  std::vector<uint8_t> side_info;
  std::vector<uint8_t> latent_payload;

  uint64_t side_bits() const { return 8 * uint64_t(side_info.size()); }
  uint64_t latent_bits() const { return 8 * uint64_t(latent_payload.size()); }
  uint64_t total_bits() const {
    return 8 * (kHeaderOnlyStreamBytes + side_info.size() + latent_payload.size());
  }

  bool operator==(const CodedStream&) const = default;
};

std::vector<uint8_t> pack_stream(const CodedStream& s);
CodedStream unpack_stream(std::span<const uint8_t> bytes);

}  // namespace lc::coder
