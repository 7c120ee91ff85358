#include "latentcodec/dist_codecs.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <string_view>

#include "latentcodec/bytes.hpp"
#include "latentcodec/histogram.hpp"

namespace lc::dist {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kSqrt2Pi = 2.5066282746310002;
constexpr int kGridSteps = 255;  // 8-bit codes index a 256-point grid
constexpr uint8_t kModelVersion = 1;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

void check_k(uint32_t k_g) {
  if (k_g < 1 || k_g > kGmmMaxComponents) {
    throw BadShapeError("gmm component count must be between 1 and 3");
  }
}

// Canonical component order for the wire: ascending mean, then sigma, then
// weight. Ties are irrelevant to reconstruction but keep fits reproducible.
void sort_components(std::vector<GmmComponent>& cs) {
  std::stable_sort(cs.begin(), cs.end(),
                   [](const GmmComponent& a, const GmmComponent& b) {
                     if (a.mu != b.mu) return a.mu < b.mu;
                     if (a.sigma != b.sigma) return a.sigma < b.sigma;
                     return a.w < b.w;
                   });
}

uint8_t quant_grid(double t) {
  // t in [0, 1] -> nearest of 256 uniform grid points.
  double code = round_half_away(t * kGridSteps);
  return uint8_t(std::clamp(code, 0.0, double(kGridSteps)));
}

}  // namespace

// --- static back-end ---------------------------------------------------------

StaticModel static_fit(std::span<const PmfBank> banks) {
  if (banks.empty()) {
    throw BadShapeError("static_fit needs at least one bank");
  }
  const HistogramSpec spec = banks[0].spec();
  const size_t channels = banks[0].channels();
  const size_t bins = size_t(spec.num_bins());
  for (const PmfBank& b : banks) {
    b.validate();
    if (b.spec() != spec || b.channels() != channels) {
      throw SpecMismatchError("static_fit banks disagree on spec or channels");
    }
  }
  StaticModel model;
  model.default_bank.pmfs.reserve(channels);
  for (size_t c = 0; c < channels; ++c) {
    Pmf mean{spec, std::vector<double>(bins, 0.0)};
    for (const PmfBank& b : banks) {
      for (size_t i = 0; i < bins; ++i) mean.mass[i] += b.pmfs[c].mass[i];
    }
    for (double& m : mean.mass) m /= double(banks.size());
    model.default_bank.pmfs.push_back(std::move(mean));
  }
  return model;
}

// --- GMM grids ------------------------------------------------------------------

double gmm_sigma_max(const HistogramSpec& spec) {
  spec.validate();
  return (double(spec.y_max) - double(spec.y_min)) / 2.0;
}

double gmm_dequant_w(uint8_t code) { return double(code) / kGridSteps; }

double gmm_dequant_mu(uint8_t code, const HistogramSpec& spec) {
  spec.validate();
  const double width = double(spec.y_max) - double(spec.y_min);
  return double(spec.y_min) + double(code) * width / kGridSteps;
}

double gmm_dequant_sigma(uint8_t code, const HistogramSpec& spec) {
  const double smax = gmm_sigma_max(spec);
  if (smax <= kGmmSigmaMin) return kGmmSigmaMin;
  const double ratio = smax / kGmmSigmaMin;
  return kGmmSigmaMin * std::pow(ratio, double(code) / kGridSteps);
}

// --- GMM fitting ----------------------------------------------------------------

std::vector<GmmComponent> gmm_fit_em(const Pmf& p, uint32_t k_g) {
  p.validate();
  check_k(k_g);
  const size_t bins = size_t(p.spec.num_bins());
  const uint32_t k = k_g;

  size_t occupied = 0;
  size_t last_occupied = 0;
  for (size_t i = 0; i < bins; ++i) {
    if (p.mass[i] > 0.0) {
      ++occupied;
      last_occupied = i;
    }
  }
  const double smax = std::max(kGmmSigmaMin, gmm_sigma_max(p.spec));
  auto clamp_sigma = [&](double s) { return std::clamp(s, kGmmSigmaMin, smax); };

  if (occupied == 1) {
    // Point mass: a single component at the occupied bin, padded with
    // zero-weight copies so the quantized form keeps its fixed size.
    std::vector<GmmComponent> out(k);
    for (uint32_t j = 0; j < k; ++j) {
      out[j] = {j == 0 ? 1.0 : 0.0, double(p.spec.bin_center(int(last_occupied) + 1)),
                kGmmSigmaMin};
    }
    return out;
  }

  std::vector<double> x(bins);
  for (size_t i = 0; i < bins; ++i) x[i] = double(p.spec.bin_center(int(i) + 1));

  double mean = 0.0;
  for (size_t i = 0; i < bins; ++i) mean += p.mass[i] * x[i];
  double var = 0.0;
  for (size_t i = 0; i < bins; ++i) {
    var += p.mass[i] * (x[i] - mean) * (x[i] - mean);
  }

  // Initialize means at the (j + 0.5)/k quantiles, spread sigma evenly.
  std::vector<GmmComponent> cs(k);
  {
    const double sigma0 = clamp_sigma(std::sqrt(std::max(var, 1e-4)) / double(k));
    for (uint32_t j = 0; j < k; ++j) {
      const double target = (j + 0.5) / double(k);
      double cum = 0.0;
      size_t pick = bins - 1;
      for (size_t i = 0; i < bins; ++i) {
        cum += p.mass[i];
        if (cum >= target - 1e-15) {
          pick = i;
          break;
        }
      }
      cs[j] = {1.0 / double(k), x[pick], sigma0};
    }
  }

  auto density = [](double xx, double mu, double sg) {
    const double z = (xx - mu) / sg;
    return std::exp(-0.5 * z * z) / (sg * kSqrt2Pi);
  };

  double prev_ll = -std::numeric_limits<double>::infinity();
  std::vector<double> nk(k), sx(k), sxx(k), r(k);
  for (int iter = 0; iter < 200; ++iter) {
    std::fill(nk.begin(), nk.end(), 0.0);
    std::fill(sx.begin(), sx.end(), 0.0);
    std::fill(sxx.begin(), sxx.end(), 0.0);
    double ll = 0.0;
    for (size_t i = 0; i < bins; ++i) {
      if (p.mass[i] <= 0.0) continue;
      double total = 0.0;
      for (uint32_t j = 0; j < k; ++j) {
        r[j] = cs[j].w > 0.0 ? cs[j].w * density(x[i], cs[j].mu, cs[j].sigma) : 0.0;
        total += r[j];
      }
      if (total > 0.0 && std::isfinite(total)) {
        for (uint32_t j = 0; j < k; ++j) r[j] /= total;
        ll += p.mass[i] * std::log(total);
      } else {
        // Numerically unreachable bin: hard-assign to the nearest live mean.
        uint32_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (uint32_t j = 0; j < k; ++j) {
          if (cs[j].w <= 0.0) continue;
          const double d = std::abs(x[i] - cs[j].mu);
          if (d < bd) {
            bd = d;
            best = j;
          }
        }
        std::fill(r.begin(), r.end(), 0.0);
        r[best] = 1.0;
        ll += p.mass[i] * std::log(1e-300);
      }
      // Center the sufficient statistics to keep the variance subtraction
      // well conditioned for narrow components far from zero.
      const double xc = x[i] - mean;
      for (uint32_t j = 0; j < k; ++j) {
        const double mr = p.mass[i] * r[j];
        nk[j] += mr;
        sx[j] += mr * xc;
        sxx[j] += mr * xc * xc;
      }
    }
    double wsum = 0.0;
    for (uint32_t j = 0; j < k; ++j) {
      if (nk[j] < 1e-12) {
        cs[j].w = 0.0;  // dead component; keep its shape parameters
        continue;
      }
      cs[j].w = nk[j];
      const double mu_c = sx[j] / nk[j];
      cs[j].mu = mean + mu_c;
      const double v = std::max(0.0, sxx[j] / nk[j] - mu_c * mu_c);
      // Sheppard's correction removes the variance added by unit binning.
      cs[j].sigma =
          clamp_sigma(std::sqrt(std::max(kGmmSigmaMin * kGmmSigmaMin, v - 1.0 / 12.0)));
    }
    for (uint32_t j = 0; j < k; ++j) wsum += cs[j].w;
    if (wsum > 0.0) {
      for (uint32_t j = 0; j < k; ++j) cs[j].w /= wsum;
    }
    if (std::abs(ll - prev_ll) < 1e-8) break;
    prev_ll = ll;
  }
  sort_components(cs);
  return cs;
}

GmmParams gmm_quantize(std::span<const GmmComponent> comps,
                       const HistogramSpec& spec) {
  check_k(uint32_t(comps.size()));
  spec.validate();
  std::vector<GmmComponent> cs(comps.begin(), comps.end());
  sort_components(cs);
  const uint32_t k = uint32_t(cs.size());

  // Weights: largest-remainder allocation of 255 grid steps, so the implicit
  // last weight is exact and non-negative by construction.
  std::vector<int> wcode(k, 0);
  {
    double wsum = 0.0;
    for (const GmmComponent& c : cs) wsum += std::max(0.0, c.w);
    int used = 0;
    std::vector<std::pair<double, uint32_t>> rem;
    for (uint32_t j = 0; j < k; ++j) {
      const double wj = wsum > 0.0 ? std::max(0.0, cs[j].w) / wsum : 1.0 / k;
      const double ideal = std::clamp(wj, 0.0, 1.0) * kGridSteps;
      wcode[j] = int(std::floor(ideal));
      used += wcode[j];
      rem.push_back({ideal - std::floor(ideal), j});
    }
    int leftover = kGridSteps - used;
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int t = 0; t < leftover; ++t) ++wcode[rem[size_t(t) % k].second];
  }

  GmmParams out;
  out.k_g = k;
  for (uint32_t j = 0; j + 1 < k; ++j) out.w_codes.push_back(uint8_t(wcode[j]));
  const double width = double(spec.y_max) - double(spec.y_min);
  const double smax = gmm_sigma_max(spec);
  const double lratio = smax > kGmmSigmaMin ? std::log(smax / kGmmSigmaMin) : 0.0;
  for (uint32_t j = 0; j < k; ++j) {
    const double tm = width > 0.0 ? (cs[j].mu - double(spec.y_min)) / width : 0.0;
    out.mu_codes.push_back(quant_grid(std::clamp(tm, 0.0, 1.0)));
    double ts = 0.0;
    if (lratio > 0.0) {
      const double s = std::clamp(cs[j].sigma, kGmmSigmaMin, smax);
      ts = std::log(s / kGmmSigmaMin) / lratio;
    }
    out.sigma_codes.push_back(quant_grid(std::clamp(ts, 0.0, 1.0)));
  }
  return out;
}

std::vector<GmmComponent> gmm_dequantize(const GmmParams& params,
                                         const HistogramSpec& spec) {
  check_k(params.k_g);
  spec.validate();
  const uint32_t k = params.k_g;
  if (params.w_codes.size() != k - 1 || params.mu_codes.size() != k ||
      params.sigma_codes.size() != k) {
    throw BadShapeError("gmm parameter vectors disagree with the component count");
  }
  int wsum = 0;
  for (uint8_t c : params.w_codes) wsum += c;
  if (wsum > kGridSteps) {
    throw CorruptStreamError("gmm mixture weights exceed one");
  }
  std::vector<GmmComponent> out(k);
  for (uint32_t j = 0; j < k; ++j) {
    out[j].w = j + 1 < k ? gmm_dequant_w(params.w_codes[j])
                         : double(kGridSteps - wsum) / kGridSteps;
    out[j].mu = gmm_dequant_mu(params.mu_codes[j], spec);
    out[j].sigma = gmm_dequant_sigma(params.sigma_codes[j], spec);
  }
  return out;
}

GmmParams gmm_fit(const Pmf& p, uint32_t k_g) {
  return gmm_quantize(gmm_fit_em(p, k_g), p.spec);
}

Pmf gmm_pmf(std::span<const GmmComponent> comps, const HistogramSpec& spec) {
  spec.validate();
  const size_t bins = size_t(spec.num_bins());
  Pmf out{spec, std::vector<double>(bins, 0.0)};
  for (const GmmComponent& c : comps) {
    if (c.w <= 0.0) continue;
    double prev = 0.0;  // lower tail folds into the first bin
    for (size_t i = 0; i < bins; ++i) {
      const double up =
          i + 1 == bins
              ? 1.0  // upper tail folds into the last bin
              : normal_cdf((double(spec.y_min) + double(i) + 0.5 - c.mu) / c.sigma);
      out.mass[i] += c.w * (up - prev);
      prev = up;
    }
  }
  return floored(out);
}

Pmf gmm_reconstruct(const GmmParams& params, const HistogramSpec& spec) {
  const std::vector<GmmComponent> comps = gmm_dequantize(params, spec);
  return gmm_pmf(comps, spec);
}

uint64_t gmm_side_bits(uint32_t k_g, uint32_t channels) {
  check_k(k_g);
  return uint64_t(3 * k_g - 1) * channels * 8;
}

// --- learned back-end ------------------------------------------------------------

namespace {

void check_learned(const LearnedModel& model) {
  model.spec.validate();
  if (uint32_t(model.spec.num_bins()) != model.net.cfg.bins) {
    throw SpecMismatchError("learned model spec bins disagree with its transform");
  }
}

std::vector<coder::FreqTable> q_tables(const LearnedModel& model) {
  const HistogramSpec qspec{nn::kQSupportMin, nn::kQSupportMax};
  const auto pmfs = model.net.q_pmfs();
  std::vector<coder::FreqTable> tables;
  tables.reserve(pmfs.size());
  for (const auto& pmf : pmfs) {
    tables.push_back(coder::quantize_pmf(Pmf{qspec, pmf}));
  }
  return tables;
}

PmfBank synthesize_bank(const LearnedModel& model, const nn::Tensor& qh) {
  const nn::Tensor ph = model.net.synthesis_infer(qh);
  PmfBank out;
  out.pmfs.reserve(ph.ch);
  for (uint32_t c = 0; c < ph.ch; ++c) {
    Pmf pmf{model.spec, std::vector<double>(ph.len)};
    for (uint32_t i = 0; i < ph.len; ++i) pmf.mass[i] = ph.at(c, i);
    out.pmfs.push_back(floored(pmf));
  }
  return out;
}

}  // namespace

std::pair<std::vector<uint8_t>, PmfBank> learned_encode(const PmfBank& bank,
                                                        const LearnedModel& model) {
  check_learned(model);
  bank.validate();
  if (bank.spec() != model.spec ||
      bank.channels() != size_t(model.net.cfg.channels)) {
    throw SpecMismatchError("bank does not match the learned model");
  }
  const nn::Tensor q = model.net.analysis_infer(nn::preprocess_bank(bank));
  const nn::Tensor qh = nn::round_clamp_q(q);

  std::vector<std::vector<int32_t>> runs(qh.ch);
  for (uint32_t c = 0; c < qh.ch; ++c) {
    runs[c].reserve(qh.len);
    for (uint32_t i = 0; i < qh.len; ++i) {
      runs[c].push_back(int32_t(qh.at(c, i)) - nn::kQSupportMin);
    }
  }
  const std::vector<coder::FreqTable> tables = q_tables(model);
  std::vector<std::span<const int32_t>> run_spans(runs.begin(), runs.end());
  std::vector<const coder::FreqTable*> table_ptrs;
  table_ptrs.reserve(tables.size());
  for (const auto& t : tables) table_ptrs.push_back(&t);

  std::vector<uint8_t> side = coder::encode_interleaved(run_spans, table_ptrs);
  return {std::move(side), synthesize_bank(model, qh)};
}

PmfBank learned_decode(std::span<const uint8_t> side, const LearnedModel& model) {
  check_learned(model);
  const uint32_t m_q = model.net.cfg.m_q;
  const size_t qlen = model.net.cfg.bins / nn::kQDownscale;

  const std::vector<coder::FreqTable> tables = q_tables(model);
  std::vector<const coder::FreqTable*> table_ptrs;
  table_ptrs.reserve(tables.size());
  for (const auto& t : tables) table_ptrs.push_back(&t);
  const std::vector<size_t> counts(m_q, qlen);

  const auto runs = coder::decode_interleaved(side, table_ptrs, counts);
  nn::Tensor qh = nn::Tensor::zeros(m_q, uint32_t(qlen));
  for (uint32_t c = 0; c < m_q; ++c) {
    for (size_t i = 0; i < qlen; ++i) {
      qh.at(c, uint32_t(i)) = double(runs[c][i] + nn::kQSupportMin);
    }
  }
  return synthesize_bank(model, qh);
}

// --- unified codec ----------------------------------------------------------------

coder::CodecTag model_tag(const DistModel& model) {
  if (std::holds_alternative<StaticModel>(model)) return coder::CodecTag::kStatic;
  if (std::holds_alternative<GmmModel>(model)) return coder::CodecTag::kGmm;
  return coder::CodecTag::kLearned;
}

namespace {

void check_latent_shape(const LatentTensor& latent) {
  latent.spec.validate();
  if (latent.channels == 0 || latent.height == 0 || latent.width == 0 ||
      latent.downscale == 0) {
    throw BadShapeError("latent tensor has a zero dimension");
  }
  if (latent.data.size() != size_t(latent.channels) * latent.elems_per_channel()) {
    throw BadShapeError("latent tensor data size disagrees with its dimensions");
  }
}

void append_gmm_wire(std::vector<uint8_t>& out, const GmmParams& p) {
  for (uint32_t j = 0; j < p.k_g; ++j) {
    if (j + 1 < p.k_g) bytes::put_u8(out, p.w_codes[j]);
    bytes::put_u8(out, p.mu_codes[j]);
    bytes::put_u8(out, p.sigma_codes[j]);
  }
}

GmmParams parse_gmm_wire(bytes::Reader& r, uint32_t k_g) {
  GmmParams p;
  p.k_g = k_g;
  for (uint32_t j = 0; j < k_g; ++j) {
    if (j + 1 < k_g) p.w_codes.push_back(r.u8());
    p.mu_codes.push_back(r.u8());
    p.sigma_codes.push_back(r.u8());
  }
  return p;
}

// The coding bank plus side info for one latent under one model.
struct SidePlan {
  std::vector<uint8_t> side;
  PmfBank bank;
};

SidePlan plan_compress(const LatentTensor& latent, const DistModel& model) {
  SidePlan plan;
  if (const auto* m = std::get_if<StaticModel>(&model)) {
    m->default_bank.validate();
    if (m->default_bank.spec() != latent.spec ||
        m->default_bank.channels() != latent.channels) {
      throw SpecMismatchError("latent does not match the static model's bank");
    }
    plan.bank = m->default_bank;
  } else if (const auto* g = std::get_if<GmmModel>(&model)) {
    if (g->spec != latent.spec) {
      throw SpecMismatchError("latent does not match the gmm model's spec");
    }
    const PmfBank bank = hist::bank_of(latent);
    plan.bank.pmfs.reserve(latent.channels);
    for (uint32_t c = 0; c < latent.channels; ++c) {
      const GmmParams params = gmm_fit(bank.pmfs[c], g->k_g);
      append_gmm_wire(plan.side, params);
      plan.bank.pmfs.push_back(gmm_reconstruct(params, latent.spec));
    }
  } else {
    const auto& l = std::get<LearnedModel>(model);
    if (l.spec != latent.spec || l.net.cfg.channels != latent.channels) {
      throw SpecMismatchError("latent does not match the learned model");
    }
    auto [side, bank] = learned_encode(hist::bank_of(latent), l);
    plan.side = std::move(side);
    plan.bank = std::move(bank);
  }
  return plan;
}

PmfBank plan_decompress(const coder::CodedStream& s, const DistModel& model) {
  const coder::StreamHeader& h = s.header;
  if (const auto* m = std::get_if<StaticModel>(&model)) {
    m->default_bank.validate();
    if (m->default_bank.spec() != h.spec ||
        m->default_bank.channels() != h.channels) {
      throw SpecMismatchError("stream does not match the static model's bank");
    }
    if (!s.side_info.empty()) {
      throw CorruptStreamError("static stream carries unexpected side info");
    }
    return m->default_bank;
  }
  if (const auto* g = std::get_if<GmmModel>(&model)) {
    if (g->spec != h.spec) {
      throw SpecMismatchError("stream does not match the gmm model's spec");
    }
    const size_t expected = size_t(3 * g->k_g - 1) * h.channels;
    if (s.side_info.size() != expected) {
      throw CorruptStreamError("gmm side info has the wrong length");
    }
    bytes::Reader r(s.side_info);
    PmfBank bank;
    bank.pmfs.reserve(h.channels);
    for (uint32_t c = 0; c < h.channels; ++c) {
      bank.pmfs.push_back(gmm_reconstruct(parse_gmm_wire(r, g->k_g), h.spec));
    }
    return bank;
  }
  const auto& l = std::get<LearnedModel>(model);
  if (l.spec != h.spec || l.net.cfg.channels != h.channels) {
    throw SpecMismatchError("stream does not match the learned model");
  }
  return learned_decode(s.side_info, l);
}

}  // namespace

coder::CodedStream codec_compress(const LatentTensor& latent,
                                  const DistModel& model) {
  check_latent_shape(latent);
  coder::CodedStream s;
  s.header.version = coder::kContainerVersion;
  s.header.codec = model_tag(model);
  s.header.spec = latent.spec;
  s.header.channels = latent.channels;
  s.header.height = latent.height;
  s.header.width = latent.width;
  s.header.downscale = latent.downscale;

  SidePlan plan = plan_compress(latent, model);
  s.side_info = std::move(plan.side);

  for (uint32_t c = 0; c < latent.channels; ++c) {
    std::vector<int32_t> symbols;
    symbols.reserve(latent.elems_per_channel());
    for (int32_t v : latent.channel(c)) {
      if (v < latent.spec.y_min || v > latent.spec.y_max) {
        throw OutOfSupportError("latent value outside the histogram support");
      }
      symbols.push_back(v - latent.spec.y_min);
    }
    const coder::FreqTable table = coder::quantize_pmf(plan.bank.pmfs[c]);
    const std::vector<uint8_t> chunk = coder::encode_channel(symbols, table);
    bytes::put_u32(s.latent_payload, uint32_t(chunk.size()));
    bytes::put_bytes(s.latent_payload, chunk);
  }
  return s;
}

LatentTensor codec_decompress(const coder::CodedStream& s, const DistModel& model) {
  const coder::StreamHeader& h = s.header;
  if (h.version != coder::kContainerVersion) {
    throw CorruptStreamError("unsupported stream version");
  }
  if (h.codec != model_tag(model)) {
    throw SpecMismatchError("stream codec tag does not match the model");
  }
  h.spec.validate();
  if (h.channels == 0 || h.height == 0 || h.width == 0 || h.downscale == 0) {
    throw CorruptStreamError("stream header has a zero dimension");
  }

  const PmfBank bank = plan_decompress(s, model);

  LatentTensor out;
  out.spec = h.spec;
  out.channels = h.channels;
  out.height = h.height;
  out.width = h.width;
  out.downscale = h.downscale;
  out.data.reserve(size_t(h.channels) * h.height * h.width);

  bytes::Reader r(s.latent_payload);
  const size_t per_channel = size_t(h.height) * h.width;
  for (uint32_t c = 0; c < h.channels; ++c) {
    const uint32_t len = r.u32();
    const std::vector<uint8_t> chunk = r.raw(len);
    const coder::FreqTable table = coder::quantize_pmf(bank.pmfs[c]);
    const std::vector<int32_t> symbols =
        coder::decode_channel(chunk, table, per_channel);
    for (int32_t sym : symbols) out.data.push_back(sym + h.spec.y_min);
  }
  r.expect_end("latent payload");
  return out;
}

// --- DCM1 model container ------------------------------------------------------

namespace {

struct ManifestEntry {
  std::string name;
  uint32_t rows = 0;
  uint32_t cols = 0;
  uint64_t offset = 0;
};

class BlobWriter {
 public:
  void add(std::string name, uint32_t rows, uint32_t cols,
           std::span<const double> values) {
    if (values.size() != size_t(rows) * cols) {
      throw BadShapeError("blob shape disagrees with its data");
    }
    entries_.push_back({std::move(name), rows, cols, blob_.size()});
    for (double v : values) bytes::put_f32(blob_, float(v));
  }

  void finish(std::vector<uint8_t>& out) const {
    bytes::put_u32(out, uint32_t(entries_.size()));
    for (const ManifestEntry& e : entries_) {
      bytes::put_u16(out, uint16_t(e.name.size()));
      out.insert(out.end(), e.name.begin(), e.name.end());
      bytes::put_u32(out, e.rows);
      bytes::put_u32(out, e.cols);
      bytes::put_u64(out, e.offset);
    }
    bytes::put_u64(out, uint64_t(blob_.size()));
    bytes::put_bytes(out, blob_);
  }

 private:
  std::vector<ManifestEntry> entries_;
  std::vector<uint8_t> blob_;
};

class BlobReader {
 public:
  explicit BlobReader(bytes::Reader& r) {
    const uint32_t count = r.u32();
    entries_.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
      ManifestEntry e;
      const uint16_t len = r.u16();
      const std::vector<uint8_t> name = r.raw(len);
      e.name.assign(name.begin(), name.end());
      e.rows = r.u32();
      e.cols = r.u32();
      e.offset = r.u64();
      entries_.push_back(std::move(e));
    }
    const uint64_t blob_len = r.u64();
    blob_ = r.raw(size_t(blob_len));
  }

  // Entries must be consumed in stored order with the expected name and
  // shape; offsets must tile the blob exactly.
  std::vector<double> take(std::string_view name, uint32_t rows, uint32_t cols) {
    if (next_ >= entries_.size()) {
      throw CorruptStreamError("model manifest is missing " + std::string(name));
    }
    const ManifestEntry& e = entries_[next_++];
    if (e.name != name || e.rows != rows || e.cols != cols || e.offset != cursor_) {
      throw CorruptStreamError("model manifest entry mismatch at " +
                               std::string(name));
    }
    const size_t n = size_t(rows) * cols;
    if (e.offset + 4 * n > blob_.size()) {
      throw CorruptStreamError("model blob is too short for " + std::string(name));
    }
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t u = 0;
      std::memcpy(&u, blob_.data() + e.offset + 4 * i, 4);
      out[i] = double(std::bit_cast<float>(u));
    }
    cursor_ = e.offset + 4 * n;
    return out;
  }

  void expect_done() const {
    if (next_ != entries_.size() || cursor_ != blob_.size()) {
      throw CorruptStreamError("model container has unused blob data");
    }
  }

 private:
  std::vector<ManifestEntry> entries_;
  std::vector<uint8_t> blob_;
  size_t next_ = 0;
  uint64_t cursor_ = 0;
};

const HistogramSpec& model_spec(const DistModel& model) {
  if (const auto* m = std::get_if<StaticModel>(&model)) {
    return m->default_bank.spec();
  }
  if (const auto* g = std::get_if<GmmModel>(&model)) return g->spec;
  return std::get<LearnedModel>(model).spec;
}

// Fixed manifest order for learned models: analysis then synthesis weights
// and biases per layer, then the q logits.
template <typename Fn>
void for_each_learned_blob(const nn::DistNet& net, Fn&& fn) {
  for (size_t l = 0; l < net.a_w.size(); ++l) {
    fn("a_w" + std::to_string(l), net.a_w[l]);
    fn("a_b" + std::to_string(l), net.a_b[l]);
  }
  for (size_t l = 0; l < net.s_w.size(); ++l) {
    fn("s_w" + std::to_string(l), net.s_w[l]);
    fn("s_b" + std::to_string(l), net.s_b[l]);
  }
  fn(std::string("q_logits"), net.q_logits);
}

}  // namespace

std::vector<uint8_t> model_bytes(const DistModel& model) {
  std::vector<uint8_t> out;
  bytes::put_magic(out, "DCM1");
  bytes::put_u8(out, kModelVersion);
  bytes::put_u8(out, uint8_t(model_tag(model)));
  const HistogramSpec& spec = model_spec(model);
  spec.validate();
  bytes::put_i32(out, spec.y_min);
  bytes::put_i32(out, spec.y_max);

  BlobWriter blobs;
  if (const auto* m = std::get_if<StaticModel>(&model)) {
    m->default_bank.validate();
    const uint32_t channels = uint32_t(m->default_bank.channels());
    const uint32_t bins = uint32_t(spec.num_bins());
    bytes::put_u32(out, channels);
    std::vector<double> flat;
    flat.reserve(size_t(channels) * bins);
    for (const Pmf& p : m->default_bank.pmfs) {
      flat.insert(flat.end(), p.mass.begin(), p.mass.end());
    }
    blobs.add("default_bank", channels, bins, flat);
  } else if (const auto* g = std::get_if<GmmModel>(&model)) {
    check_k(g->k_g);
    bytes::put_u32(out, g->k_g);
  } else {
    const auto& l = std::get<LearnedModel>(model);
    check_learned(l);
    const nn::TransformConfig& cfg = l.net.cfg;
    bytes::put_u32(out, cfg.channels);
    bytes::put_u32(out, cfg.n_q);
    bytes::put_u32(out, cfg.m_q);
    bytes::put_u32(out, cfg.kernel);
    bytes::put_u32(out, cfg.groups);
    bytes::put_u32(out, cfg.bins);
    for_each_learned_blob(l.net, [&](const std::string& name, const nn::NodePtr& p) {
      blobs.add(name, p->value.ch, p->value.len, p->value.v);
    });
  }
  blobs.finish(out);
  return out;
}

DistModel parse_model(std::span<const uint8_t> data) {
  bytes::Reader r(data);
  r.expect_magic("DCM1", "model container");
  if (r.u8() != kModelVersion) {
    throw CorruptStreamError("unsupported model container version");
  }
  const uint8_t tag = r.u8();
  if (tag > uint8_t(coder::CodecTag::kLearned)) {
    throw CorruptStreamError("unknown codec tag in model container");
  }
  HistogramSpec spec;
  spec.y_min = r.i32();
  spec.y_max = r.i32();
  if (spec.y_max < spec.y_min) {
    throw CorruptStreamError("model container has an invalid spec");
  }

  if (tag == uint8_t(coder::CodecTag::kStatic)) {
    const uint32_t channels = r.u32();
    if (channels == 0) throw CorruptStreamError("static model has no channels");
    BlobReader blobs(r);
    r.expect_end("model container");
    const uint32_t bins = uint32_t(spec.num_bins());
    const std::vector<double> flat = blobs.take("default_bank", channels, bins);
    blobs.expect_done();
    StaticModel m;
    m.default_bank.pmfs.reserve(channels);
    for (uint32_t c = 0; c < channels; ++c) {
      Pmf p{spec, std::vector<double>(flat.begin() + size_t(c) * bins,
                                      flat.begin() + size_t(c + 1) * bins)};
      double sum = 0.0;
      for (double v : p.mass) {
        if (!(v >= 0.0)) {
          throw CorruptStreamError("stored bank has a negative mass");
        }
        sum += v;
      }
      if (sum <= 0.0) throw CorruptStreamError("stored bank has an empty channel");
      for (double& v : p.mass) v /= sum;
      m.default_bank.pmfs.push_back(std::move(p));
    }
    return m;
  }

  if (tag == uint8_t(coder::CodecTag::kGmm)) {
    const uint32_t k_g = r.u32();
    if (k_g < 1 || k_g > kGmmMaxComponents) {
      throw CorruptStreamError("gmm model has an invalid component count");
    }
    BlobReader blobs(r);
    r.expect_end("model container");
    blobs.expect_done();
    return GmmModel{spec, k_g};
  }

  nn::TransformConfig cfg;
  cfg.channels = r.u32();
  cfg.n_q = r.u32();
  cfg.m_q = r.u32();
  cfg.kernel = r.u32();
  cfg.groups = r.u32();
  cfg.bins = r.u32();
  try {
    cfg.validate();
  } catch (const Error&) {
    throw CorruptStreamError("learned model has an invalid transform config");
  }
  if (uint32_t(spec.num_bins()) != cfg.bins) {
    throw CorruptStreamError("learned model spec disagrees with its transform");
  }
  BlobReader blobs(r);
  r.expect_end("model container");

  LearnedModel l{nn::DistNet::init(cfg, 0), spec};
  for_each_learned_blob(l.net, [&](const std::string& name, const nn::NodePtr& p) {
    const std::vector<double> values =
        blobs.take(name, p->value.ch, p->value.len);
    p->value.v = values;
  });
  blobs.expect_done();
  return l;
}

void save_model(const std::filesystem::path& path, const DistModel& model) {
  bytes::write_file(path.string(), model_bytes(model));
}

DistModel load_model(const std::filesystem::path& path) {
  const std::vector<uint8_t> data = bytes::read_file(path.string());
  return parse_model(data);
}

}  // namespace lc::dist
