#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentcodec/core.hpp"
#include "latentcodec/dist_codecs.hpp"

// Rate accounting: entropy/cross-entropy/KL in bits, the potential-savings
// bound, gap reports built from real bitstreams, and the synthetic latent
// corpus generator used throughout the tests and the CLI.

namespace lc::eval {

// All in bits. p_hat is floored at kPmfFloor before any log, so KL terms
// where p > 0 meets zero predicted mass stay finite (p * log2(p / eps)).
double entropy_bits(const Pmf& p);
double cross_entropy_bits(const Pmf& p, const Pmf& p_hat);
double kl_bits(const Pmf& p, const Pmf& p_hat);

// (1/s^2) * sum_j KL(p_j || default_j): the per-pixel rate that an oracle
// per-image distribution would save over the shared default. Non-negative.
double potential_savings_bpp(const PmfBank& bank, const PmfBank& defaults,
                             uint32_t downscale);
// Averaged over a corpus of per-image banks.
double potential_savings_bpp(std::span<const PmfBank> banks,
                             const PmfBank& defaults, uint32_t downscale);

// One gap-analysis row. Gains are deltas against the static baseline, so
// negative values mean the evaluated model is better. bpp figures count
// side-info plus latent payload bits over the image pixels s^2*H_y*W_y;
// the fixed container header is format plumbing and excluded.
struct GapRow {
  uint64_t image = 0;  // image id; for the aggregate row, the image count
  double original_bpp = 0.0;
  double potential_gain_bpp = 0.0;  // -(1/s^2) sum_j KL, always <= 0
  double potential_gain_pct = 0.0;
  double achieved_bpp = 0.0;
  double achieved_gain_bpp = 0.0;
  double achieved_gain_pct = 0.0;
  double side_info_bpp = 0.0;
};

struct GapReport {
  std::vector<GapRow> rows;  // one per image, in corpus order
  GapRow aggregate;          // uniform mean over images, including the pcts
};

// Runs real compression under both models; potential numbers come from the
// KL bound against the baseline's bank.
GapReport gap_report(std::span<const LatentTensor> corpus,
                     const dist::DistModel& model,
                     const dist::StaticModel& baseline);

// CSV columns, in order: image, original_bpp, potential_gain_bpp,
// potential_gain_pct, achieved_bpp, achieved_gain_bpp, achieved_gain_pct,
// side_info_bpp. The aggregate row uses "*" as its image id.
std::string report_csv(const GapReport& report);
// Fixed-width table with the same columns.
std::string report_text(const GapReport& report);

// Per-channel-per-bin negative log likelihood grid, -log2 of the floored
// mass: header "channel,bin_0..bin_{B-1}", one CSV row per channel.
std::string nll_grid_csv(const PmfBank& bank);

// --- synthetic corpus ---------------------------------------------------------

// Each image draws per-channel distributions from a channel-specific base
// family (a mixture of 1..3 discretized Gaussians) jittered per image in
// shift, scale, and weights, then samples the latent i.i.d. from them.
struct SyntheticCorpusSpec {
  HistogramSpec spec;
  uint32_t channels = 0;
  uint32_t images = 0;
  uint32_t height = 0;  // H_y
  uint32_t width = 0;   // W_y
  uint32_t downscale = 4;
  uint64_t seed = 1;
};

struct SyntheticCorpus {
  std::vector<LatentTensor> latents;
  std::vector<PmfBank> truths;  // the generating pmfs, per image
};

SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& spec);

}  // namespace lc::eval
