#include "latentcodec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "latentcodec/histogram.hpp"
#include "latentcodec/rng.hpp"

namespace lc::eval {

namespace {

void check_pair(const Pmf& p, const Pmf& p_hat) {
  p.validate();
  p_hat.validate();
  if (p.spec != p_hat.spec) {
    throw SpecMismatchError("pmf pair disagrees on the histogram spec");
  }
}

void check_banks(const PmfBank& a, const PmfBank& b) {
  a.validate();
  b.validate();
  if (a.spec() != b.spec() || a.channels() != b.channels()) {
    throw SpecMismatchError("pmf banks disagree on spec or channels");
  }
}

std::string format_row(const char* image, const GapRow& r, bool csv) {
  char buf[256];
  const char* fmt = csv ? "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n"
                        : "%6s  %12.6f  %14.6f  %10.2f  %12.6f  %14.6f  %10.2f  %12.6f\n";
  std::snprintf(buf, sizeof(buf), fmt, image, r.original_bpp, r.potential_gain_bpp,
                r.potential_gain_pct, r.achieved_bpp, r.achieved_gain_bpp,
                r.achieved_gain_pct, r.side_info_bpp);
  return buf;
}

}  // namespace

double entropy_bits(const Pmf& p) {
  p.validate();
  double h = 0.0;
  for (double m : p.mass) {
    if (m > 0.0) h -= m * std::log2(m);
  }
  return h;
}

double cross_entropy_bits(const Pmf& p, const Pmf& p_hat) {
  check_pair(p, p_hat);
  const Pmf q = floored(p_hat);
  double ce = 0.0;
  for (size_t i = 0; i < p.mass.size(); ++i) {
    if (p.mass[i] > 0.0) ce -= p.mass[i] * std::log2(q.mass[i]);
  }
  return ce;
}

double kl_bits(const Pmf& p, const Pmf& p_hat) {
  check_pair(p, p_hat);
  const Pmf q = floored(p_hat);
  double kl = 0.0;
  for (size_t i = 0; i < p.mass.size(); ++i) {
    if (p.mass[i] > 0.0) kl += p.mass[i] * std::log2(p.mass[i] / q.mass[i]);
  }
  return kl;
}

double potential_savings_bpp(const PmfBank& bank, const PmfBank& defaults,
                             uint32_t downscale) {
  check_banks(bank, defaults);
  if (downscale == 0) throw BadShapeError("downscale must be positive");
  double total = 0.0;
  for (size_t c = 0; c < bank.channels(); ++c) {
    total += kl_bits(bank.pmfs[c], defaults.pmfs[c]);
  }
  return total / (double(downscale) * downscale);
}

double potential_savings_bpp(std::span<const PmfBank> banks,
                             const PmfBank& defaults, uint32_t downscale) {
  if (banks.empty()) throw BadShapeError("corpus of banks is empty");
  double total = 0.0;
  for (const PmfBank& bank : banks) {
    total += potential_savings_bpp(bank, defaults, downscale);
  }
  return total / double(banks.size());
}

GapReport gap_report(std::span<const LatentTensor> corpus,
                     const dist::DistModel& model,
                     const dist::StaticModel& baseline) {
  if (corpus.empty()) throw BadShapeError("gap report needs at least one image");
  const dist::DistModel base_model = baseline;

  GapReport report;
  report.rows.reserve(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    const LatentTensor& latent = corpus[i];
    const coder::CodedStream base = dist::codec_compress(latent, base_model);
    const coder::CodedStream adapted = dist::codec_compress(latent, model);
    const double pixels = double(latent.image_pixels());

    GapRow row;
    row.image = i;
    row.original_bpp = double(base.side_bits() + base.latent_bits()) / pixels;
    row.achieved_bpp =
        double(adapted.side_bits() + adapted.latent_bits()) / pixels;
    row.side_info_bpp = double(adapted.side_bits()) / pixels;
    row.potential_gain_bpp = -potential_savings_bpp(
        hist::bank_of(latent), baseline.default_bank, latent.downscale);
    row.achieved_gain_bpp = row.achieved_bpp - row.original_bpp;
    if (row.original_bpp > 0.0) {
      row.potential_gain_pct = 100.0 * row.potential_gain_bpp / row.original_bpp;
      row.achieved_gain_pct = 100.0 * row.achieved_gain_bpp / row.original_bpp;
    }
    report.rows.push_back(row);
  }

  GapRow& agg = report.aggregate;
  agg.image = report.rows.size();
  for (const GapRow& r : report.rows) {
    agg.original_bpp += r.original_bpp;
    agg.potential_gain_bpp += r.potential_gain_bpp;
    agg.potential_gain_pct += r.potential_gain_pct;
    agg.achieved_bpp += r.achieved_bpp;
    agg.achieved_gain_bpp += r.achieved_gain_bpp;
    agg.achieved_gain_pct += r.achieved_gain_pct;
    agg.side_info_bpp += r.side_info_bpp;
  }
  const double n = double(report.rows.size());
  agg.original_bpp /= n;
  agg.potential_gain_bpp /= n;
  agg.potential_gain_pct /= n;
  agg.achieved_bpp /= n;
  agg.achieved_gain_bpp /= n;
  agg.achieved_gain_pct /= n;
  agg.side_info_bpp /= n;
  return report;
}

std::string report_csv(const GapReport& report) {
  std::string out =
      "image,original_bpp,potential_gain_bpp,potential_gain_pct,achieved_bpp,"
      "achieved_gain_bpp,achieved_gain_pct,side_info_bpp\n";
  for (const GapRow& r : report.rows) {
    out += format_row(std::to_string(r.image).c_str(), r, true);
  }
  out += format_row("*", report.aggregate, true);
  return out;
}

std::string report_text(const GapReport& report) {
  char head[256];
  std::snprintf(head, sizeof(head), "%6s  %12s  %14s  %10s  %12s  %14s  %10s  %12s\n",
                "image", "orig (bpp)", "pot gain (bpp)", "pot (%)", "ach (bpp)",
                "ach gain (bpp)", "ach (%)", "side (bpp)");
  std::string out = head;
  out += std::string(out.size() - 1, '-') + "\n";
  for (const GapRow& r : report.rows) {
    out += format_row(std::to_string(r.image).c_str(), r, false);
  }
  out += format_row("*", report.aggregate, false);
  return out;
}

std::string nll_grid_csv(const PmfBank& bank) {
  bank.validate();
  const size_t bins = bank.pmfs[0].mass.size();
  std::string out = "channel";
  for (size_t i = 0; i < bins; ++i) out += ",bin_" + std::to_string(i);
  out += "\n";
  for (size_t c = 0; c < bank.channels(); ++c) {
    const Pmf q = floored(bank.pmfs[c]);
    out += std::to_string(c);
    char buf[32];
    for (size_t i = 0; i < bins; ++i) {
      std::snprintf(buf, sizeof(buf), ",%.6f", -std::log2(q.mass[i]));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// --- synthetic corpus ------------------------------------------------------------

namespace {

struct Mixture {
  int k = 1;
  double w[3] = {1.0, 0.0, 0.0};
  double mu[3] = {0.0, 0.0, 0.0};
  double sigma[3] = {1.0, 1.0, 1.0};
};

double phi(double z) { return 0.5 * std::erfc(-z / 1.4142135623730951); }

// Unit-bin discretization with the tails folded into the edge bins; no floor
// so the ground truth is exactly the distribution the samples are drawn from.
Pmf mixture_pmf(const Mixture& m, const HistogramSpec& spec) {
  const size_t bins = size_t(spec.num_bins());
  Pmf out{spec, std::vector<double>(bins, 0.0)};
  for (int j = 0; j < m.k; ++j) {
    double prev = 0.0;
    for (size_t i = 0; i < bins; ++i) {
      const double up =
          i + 1 == bins
              ? 1.0
              : phi((double(spec.y_min) + double(i) + 0.5 - m.mu[j]) / m.sigma[j]);
      out.mass[i] += m.w[j] * (up - prev);
      prev = up;
    }
  }
  return out;
}

}  // namespace

SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& cs) {
  cs.spec.validate();
  if (cs.channels == 0 || cs.images == 0 || cs.height == 0 || cs.width == 0 ||
      cs.downscale == 0) {
    throw BadShapeError("synthetic corpus spec has a zero dimension");
  }
  std::mt19937_64 g(cs.seed);
  const double lo = double(cs.spec.y_min);
  const double hi = double(cs.spec.y_max);
  const double range = std::max(1.0, hi - lo);

  // Channel-specific base families; the per-image draws jitter these.
  std::vector<Mixture> bases(cs.channels);
  for (uint32_t c = 0; c < cs.channels; ++c) {
    Mixture& b = bases[c];
    b.k = 1 + int(c % 3);
    double wsum = 0.0;
    for (int j = 0; j < b.k; ++j) {
      b.mu[j] = rng::uniform(g, lo + 0.1 * range, hi - 0.1 * range);
      b.sigma[j] = std::exp(
          rng::uniform(g, std::log(0.6), std::log(std::max(0.7, 0.12 * range))));
      b.w[j] = rng::uniform(g, 0.2, 1.0);
      wsum += b.w[j];
    }
    for (int j = 0; j < b.k; ++j) b.w[j] /= wsum;
  }

  SyntheticCorpus corpus;
  corpus.latents.reserve(cs.images);
  corpus.truths.reserve(cs.images);
  const size_t per_channel = size_t(cs.height) * cs.width;

  for (uint32_t img = 0; img < cs.images; ++img) {
    LatentTensor t;
    t.spec = cs.spec;
    t.channels = cs.channels;
    t.height = cs.height;
    t.width = cs.width;
    t.downscale = cs.downscale;
    t.data.reserve(size_t(cs.channels) * per_channel);
    PmfBank truth;
    truth.pmfs.reserve(cs.channels);

    for (uint32_t c = 0; c < cs.channels; ++c) {
      const Mixture& b = bases[c];
      Mixture m = b;
      const double shift = rng::normal(g, 0.0, 0.05 * range);
      double wsum = 0.0;
      for (int j = 0; j < m.k; ++j) {
        m.mu[j] = std::clamp(b.mu[j] + shift, lo, hi);
        m.sigma[j] = std::clamp(b.sigma[j] * std::exp(rng::normal(g, 0.0, 0.25)),
                                0.3, 0.5 * range);
        m.w[j] = b.w[j] * std::exp(rng::normal(g, 0.0, 0.35));
        wsum += m.w[j];
      }
      for (int j = 0; j < m.k; ++j) m.w[j] /= wsum;

      Pmf pmf = mixture_pmf(m, cs.spec);
      std::vector<double> cum(pmf.mass.size());
      double acc = 0.0;
      for (size_t i = 0; i < pmf.mass.size(); ++i) {
        acc += pmf.mass[i];
        cum[i] = acc;
      }
      cum.back() = 1.0;
      for (size_t i = 0; i < per_channel; ++i) {
        const double u = rng::uniform01(g);
        const size_t bin =
            size_t(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
        t.data.push_back(cs.spec.y_min + int32_t(std::min(bin, cum.size() - 1)));
      }
      truth.pmfs.push_back(std::move(pmf));
    }
    corpus.latents.push_back(std::move(t));
    corpus.truths.push_back(std::move(truth));
  }
  return corpus;
}

}  // namespace lc::eval
