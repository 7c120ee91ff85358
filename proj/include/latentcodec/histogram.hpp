#pragma once

#include <span>
#include <vector>

#include "latentcodec/core.hpp"

// Per-channel histogram estimation. The hard histogram is the exact
// normalized histogram of the quantized channel; the soft histogram replaces
// nearest-bin counting with a triangular kernel of width one bin, making the
// mass piecewise differentiable in the samples. The STE variant uses the
// hard values forward and the soft gradient backward.

namespace lc::hist {

enum class Mode { kHard, kSoft, kSte };

struct HistogramResult {
  PmfBank bank;
  Mode mode = Mode::kHard;
  size_t samples_per_channel = 0;  // N
};

// Triangular kernel, max{0, 1 - |u|}. Unit mass regardless of where the
// sample falls, which is what keeps the soft histogram normalized.
double kernel_soft(double u);

// Rectangular kernel. Ties at |u| = 0.5 send the mass to the upper bin;
// the histogram path resolves ties on the sample value itself with the
// global round-half-away-from-zero rule instead.
double kernel_hard(double u);

// Exact histogram: counts of round-half-away(y_n) clamped into the support,
// divided by N. Bit-identical to the normalized histogram of the quantized
// tensor.
Pmf hard_histogram(std::span<const double> y, const HistogramSpec& spec);

// Triangular-kernel estimate. Mass that would fall outside bin 1 or bin B
// is folded into that edge bin, so the result always sums to 1.
Pmf soft_histogram(std::span<const double> y, const HistogramSpec& spec);

// Closed-form vector-Jacobian product of the soft histogram: given
// upstream[i] = dL/dp_i, returns dL/dy_n for every sample. Subgradient
// conventions: d|u|/du = 0 at u = 0, and the kernel derivative is 0 at its
// |u| = 1 kinks.
std::vector<double> soft_histogram_grad(std::span<const double> y,
                                        const HistogramSpec& spec,
                                        std::span<const double> upstream);

// Per-channel banks over a full tensor.
HistogramResult hard_bank(std::span<const double> y, const HistogramSpec& spec,
                          uint32_t channels);
HistogramResult soft_bank(std::span<const double> y, const HistogramSpec& spec,
                          uint32_t channels);

// Hard histogram bank of an integer latent tensor (the codec's view of the
// "true" per-channel distributions).
PmfBank bank_of(const LatentTensor& t);

}  // namespace lc::hist
