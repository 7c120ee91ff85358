#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "latentcodec/coder.hpp"
#include "latentcodec/core.hpp"
#include "latentcodec/nn.hpp"

// The three encoding-distribution back-ends behind one codec interface:
//   static  — one amortized default bank, zero side information;
//   gmm     — per-image quantized Gaussian-mixture parameters as side info;
//   learned — per-image compressed latents of a distribution autoencoder.
// All three plug into codec_compress/codec_decompress, which frame the
// latent payload per channel behind the DCS1 container.

namespace lc::dist {

// --- static (amortized) back-end ---------------------------------------------

struct StaticModel {
  PmfBank default_bank;
};

// Per-channel arithmetic mean of the banks: the unique minimizer of expected
// cross-entropy among static distributions.
StaticModel static_fit(std::span<const PmfBank> banks);

// --- quantized-GMM back-end ---------------------------------------------------

inline constexpr double kGmmSigmaMin = 0.05;
inline constexpr uint32_t kGmmMaxComponents = 3;

struct GmmComponent {
  double w = 1.0;
  double mu = 0.0;
  double sigma = kGmmSigmaMin;
};

// Quantized per-channel mixture. Every parameter is one byte; the last
// weight is implicit (one minus the sum of the others), giving 3*K-1 bytes
// per channel on the wire, component tuples (w, mu, sigma) channel-major.
struct GmmParams {
  uint32_t k_g = 1;
  std::vector<uint8_t> w_codes;      // k_g - 1 entries
  std::vector<uint8_t> mu_codes;     // k_g entries
  std::vector<uint8_t> sigma_codes;  // k_g entries
};

// 8-bit grids: w uniform on [0,1]; mu uniform on [y_min, y_max]; sigma
// log-uniform on [kGmmSigmaMin, gmm_sigma_max(spec)].
double gmm_sigma_max(const HistogramSpec& spec);
double gmm_dequant_w(uint8_t code);
double gmm_dequant_mu(uint8_t code, const HistogramSpec& spec);
double gmm_dequant_sigma(uint8_t code, const HistogramSpec& spec);

// Deterministic EM on bin centers weighted by mass (at most 200 iterations
// or log-likelihood improvement below 1e-8), with Sheppard's correction
// sigma <- sqrt(max(sigma_min^2, sigma^2 - 1/12)) in every M step. A channel
// with a single occupied bin short-circuits to one component at that bin
// with sigma_min (padded with zero-weight copies so the wire size is fixed).
std::vector<GmmComponent> gmm_fit_em(const Pmf& p, uint32_t k_g);

GmmParams gmm_quantize(std::span<const GmmComponent> comps,
                       const HistogramSpec& spec);
std::vector<GmmComponent> gmm_dequantize(const GmmParams& params,
                                         const HistogramSpec& spec);

// gmm_quantize(gmm_fit_em(p, k_g)).
GmmParams gmm_fit(const Pmf& p, uint32_t k_g);

// Mixture pmf over the spec's bins: per bin the normal-cdf difference across
// the bin edges, tails folded into the edge bins, then floored at the pmf
// floor and renormalized.
Pmf gmm_pmf(std::span<const GmmComponent> comps, const HistogramSpec& spec);
Pmf gmm_reconstruct(const GmmParams& params, const HistogramSpec& spec);

// Exactly (3*k_g - 1) * channels * 8.
uint64_t gmm_side_bits(uint32_t k_g, uint32_t channels);

struct GmmModel {
  HistogramSpec spec;
  uint32_t k_g = 1;
};

// --- learned back-end -----------------------------------------------------------

struct LearnedModel {
  nn::DistNet net;
  HistogramSpec spec;  // latent support; num_bins() == net.cfg.bins
};

// side bytes = rANS-coded rounded q under the model's per-channel q pmfs
// (one interleaved stream, channel-major runs); the returned bank is the
// synthesized p-hat, floored and renormalized exactly as the coder uses it.
std::pair<std::vector<uint8_t>, PmfBank> learned_encode(
    const PmfBank& bank, const LearnedModel& model);

// Bit-exact reproduction of the encoder's p-hat from the side bytes alone.
PmfBank learned_decode(std::span<const uint8_t> side, const LearnedModel& model);

// --- unified codec ---------------------------------------------------------------

using DistModel = std::variant<StaticModel, GmmModel, LearnedModel>;

coder::CodecTag model_tag(const DistModel& model);

// Lossless: codec_decompress(codec_compress(x, m), m) == x for any in-support
// latent. The stream separates side bits (R_q) from latent payload bits (R_y).
coder::CodedStream codec_compress(const LatentTensor& latent,
                                  const DistModel& model);
LatentTensor codec_decompress(const coder::CodedStream& stream,
                              const DistModel& model);

// --- DCM1 model container --------------------------------------------------------
//
//   magic "DCM1", u8 version (1), u8 codec tag
//   i32 y_min, i32 y_max
//   hyperparameters:  static -> u32 C
//                     gmm    -> u32 K_g
//                     learned-> u32 C, N_q, M_q, kernel, groups, bins
//   u32 manifest count, entries: u16 name length, name, u32 rows, u32 cols,
//                                u64 byte offset into the blob
//   u64 blob length, raw little-endian f32 blob
//
// Learned weights round-trip bit-exactly (training canonicalizes through
// f32); the static bank is stored as f32 and renormalized per channel on
// load.

std::vector<uint8_t> model_bytes(const DistModel& model);
DistModel parse_model(std::span<const uint8_t> bytes);
void save_model(const std::filesystem::path& path, const DistModel& model);
DistModel load_model(const std::filesystem::path& path);

}  // namespace lc::dist
