#include "latentcodec/histogram.hpp"

#include <algorithm>
#include <cmath>

namespace lc::hist {

double kernel_soft(double u) { return std::max(0.0, 1.0 - std::abs(u)); }

double kernel_hard(double u) {
  if (std::abs(u) < 0.5) return 1.0;
  if (u == -0.5) return 1.0;  // tie mass goes to the upper bin
  return 0.0;
}

namespace {

void check_nonempty(std::span<const double> y) {
  if (y.empty()) throw EmptyChannelError("histogram of an empty channel");
}

// 0-based index of the bin holding round-half-away(v), clamped into range.
int hard_bin(double v, const HistogramSpec& spec) {
  double r = round_half_away(v);
  if (r < spec.y_min) r = spec.y_min;
  if (r > spec.y_max) r = spec.y_max;
  return int(r) - spec.y_min;
}

}  // namespace

Pmf hard_histogram(std::span<const double> y, const HistogramSpec& spec) {
  spec.validate();
  check_nonempty(y);
  Pmf p{spec, std::vector<double>(size_t(spec.num_bins()), 0.0)};
  for (double v : y) p.mass[size_t(hard_bin(v, spec))] += 1.0;
  // Divide rather than multiply by 1/N: counts/N is the bit-exact contract.
  for (double& m : p.mass) m /= double(y.size());
  return p;
}

Pmf soft_histogram(std::span<const double> y, const HistogramSpec& spec) {
  spec.validate();
  check_nonempty(y);
  const int b = spec.num_bins();
  Pmf p{spec, std::vector<double>(size_t(b), 0.0)};
  for (double v : y) {
    // Sample mass splits linearly between the two straddling bins; parts
    // falling past the support edges fold into the edge bin.
    double off = v - double(spec.y_min);
    double fl = std::floor(off);
    double frac = off - fl;
    int lo = int(fl);
    int lo_c = std::clamp(lo, 0, b - 1);
    int hi_c = std::clamp(lo + 1, 0, b - 1);
    p.mass[size_t(lo_c)] += 1.0 - frac;
    p.mass[size_t(hi_c)] += frac;
  }
  for (double& m : p.mass) m /= double(y.size());
  return p;
}

std::vector<double> soft_histogram_grad(std::span<const double> y,
                                        const HistogramSpec& spec,
                                        std::span<const double> upstream) {
  spec.validate();
  const int b = spec.num_bins();
  if (upstream.size() != size_t(b)) {
    throw BadShapeError("upstream gradient length does not match bin count");
  }
  const double inv_n = y.empty() ? 0.0 : 1.0 / double(y.size());
  std::vector<double> grad(y.size(), 0.0);
  for (size_t n = 0; n < y.size(); ++n) {
    double off = y[n] - double(spec.y_min);
    double fl = std::floor(off);
    double frac = off - fl;
    if (frac == 0.0) continue;  // exactly on a center: d|u|/du = 0 convention
    int lo = int(fl);
    int lo_c = std::clamp(lo, 0, b - 1);
    int hi_c = std::clamp(lo + 1, 0, b - 1);
    if (lo_c == hi_c) continue;  // folded edge mass is constant 1
    grad[n] = (upstream[size_t(hi_c)] - upstream[size_t(lo_c)]) * inv_n;
  }
  return grad;
}

namespace {

HistogramResult bank_impl(std::span<const double> y, const HistogramSpec& spec,
                          uint32_t channels, Mode mode) {
  if (channels == 0 || y.size() % channels != 0) {
    throw BadShapeError("tensor size is not a multiple of the channel count");
  }
  const size_t n = y.size() / channels;
  HistogramResult res;
  res.mode = mode;
  res.samples_per_channel = n;
  res.bank.pmfs.reserve(channels);
  for (uint32_t c = 0; c < channels; ++c) {
    std::span<const double> ch = y.subspan(size_t(c) * n, n);
    res.bank.pmfs.push_back(mode == Mode::kSoft ? soft_histogram(ch, spec)
                                                : hard_histogram(ch, spec));
  }
  return res;
}

}  // namespace

HistogramResult hard_bank(std::span<const double> y, const HistogramSpec& spec,
                          uint32_t channels) {
  return bank_impl(y, spec, channels, Mode::kHard);
}

HistogramResult soft_bank(std::span<const double> y, const HistogramSpec& spec,
                          uint32_t channels) {
  return bank_impl(y, spec, channels, Mode::kSoft);
}

PmfBank bank_of(const LatentTensor& t) {
  PmfBank bank;
  bank.pmfs.reserve(t.channels);
  const size_t n = t.elems_per_channel();
  if (n == 0) throw EmptyChannelError("latent tensor has no elements");
  for (uint32_t c = 0; c < t.channels; ++c) {
    Pmf p{t.spec, std::vector<double>(size_t(t.spec.num_bins()), 0.0)};
    for (int32_t v : t.channel(c)) {
      p.mass[size_t(bin_index(v, t.spec)) - 1] += 1.0;
    }
    for (double& m : p.mass) m /= double(n);
    bank.pmfs.push_back(std::move(p));
  }
  return bank;
}

}  // namespace lc::hist
