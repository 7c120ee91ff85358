#include "latentcodec/coder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentcodec/bytes.hpp"

namespace lc::coder {

double FreqTable::bits_for(size_t s) const {
  return -std::log2(double(freqs.at(s)) / double(kFreqTotal));
}

FreqTable quantize_pmf(const Pmf& p) {
  p.validate();
  const size_t b = p.mass.size();
  if (b > kFreqTotal) throw TooManyBinsError("more bins than 2^16 code points");

  // Largest-remainder apportionment of 2^16 units.
  std::vector<uint32_t> freqs(b);
  std::vector<double> remainder(b);
  uint64_t assigned = 0;
  for (size_t i = 0; i < b; ++i) {
    double target = p.mass[i] * double(kFreqTotal);
    double fl = std::floor(target);
    freqs[i] = uint32_t(fl);
    remainder[i] = target - fl;
    assigned += freqs[i];
  }
  // Σ floors <= Σ targets <= 2^16 (pmf sums to 1 within 1e-9), so the
  // leftover is nonnegative; distribute by descending remainder, lower
  // index winning ties via the stable sort.
  std::vector<size_t> order(b);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t c) {
    return remainder[a] > remainder[c];
  });
  int64_t leftover = int64_t(kFreqTotal) - int64_t(assigned);
  for (size_t k = 0; leftover > 0; k = (k + 1) % b) {
    freqs[order[k]] += 1;
    --leftover;
  }

  // Floor of 1 per bin, taking the deficit from the largest bins.
  for (size_t i = 0; i < b; ++i) {
    if (freqs[i] == 0) {
      size_t donor = 0;
      uint32_t best = 0;
      for (size_t j = 0; j < b; ++j) {
        if (freqs[j] > best) {
          best = freqs[j];
          donor = j;
        }
      }
      if (best < 2) throw TooManyBinsError("cannot keep every bin above zero");
      freqs[donor] -= 1;
      freqs[i] = 1;
    }
  }

  FreqTable t;
  t.freqs = std::move(freqs);
  t.cum.resize(b + 1);
  t.cum[0] = 0;
  for (size_t i = 0; i < b; ++i) t.cum[i + 1] = t.cum[i] + t.freqs[i];
  return t;
}

// --- rANS -------------------------------------------------------------------
//
// Byte-wise rANS, 32-bit state normalized to [2^23, 2^31). Symbols are
// encoded in reverse and the byte buffer is reversed once at the end, so the
// decoder consumes the stream strictly forward.

namespace {

constexpr uint32_t kRansLow = 1u << 23;

class RansEncoder {
 public:
  void put(uint32_t start, uint32_t freq) {
    uint32_t x_max = freq << (23 - kFreqPrecision + 8);
    while (state_ >= x_max) {
      out_.push_back(uint8_t(state_));
      state_ >>= 8;
    }
    state_ = ((state_ / freq) << kFreqPrecision) + (state_ % freq) + start;
  }

  std::vector<uint8_t> finish() {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(uint8_t(state_));
      state_ >>= 8;
    }
    std::reverse(out_.begin(), out_.end());
    return std::move(out_);
  }

 private:
  uint32_t state_ = kRansLow;
  std::vector<uint8_t> out_;
};

class RansDecoder {
 public:
  explicit RansDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
    if (bytes.size() < 4) throw CorruptStreamError("rANS stream shorter than its state");
    for (int i = 0; i < 4; ++i) state_ = (state_ << 8) | bytes_[pos_++];
  }

  uint32_t peek() const { return state_ & (kFreqTotal - 1); }

  void advance(uint32_t start, uint32_t freq) {
    state_ = freq * (state_ >> kFreqPrecision) + peek() - start;
    while (state_ < kRansLow) {
      if (pos_ >= bytes_.size()) throw CorruptStreamError("rANS stream truncated");
      state_ = (state_ << 8) | bytes_[pos_++];
    }
  }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
  uint32_t state_ = 0;
};

uint32_t find_symbol(const FreqTable& t, uint32_t slot) {
  // cum is strictly increasing (freq >= 1), so binary search is safe.
  auto it = std::upper_bound(t.cum.begin(), t.cum.end(), slot);
  return uint32_t(it - t.cum.begin()) - 1;
}

void check_symbols(std::span<const int32_t> symbols, const FreqTable& table) {
  for (int32_t s : symbols) {
    if (s < 0 || size_t(s) >= table.num_bins()) {
      throw OutOfSupportError("symbol " + std::to_string(s) +
                              " outside the frequency table");
    }
  }
}

}  // namespace

std::vector<uint8_t> encode_channel(std::span<const int32_t> symbols,
                                    const FreqTable& table) {
  if (symbols.empty()) return {};
  check_symbols(symbols, table);
  RansEncoder enc;
  for (size_t i = symbols.size(); i-- > 0;) {
    uint32_t s = uint32_t(symbols[i]);
    enc.put(table.cum[s], table.freqs[s]);
  }
  return enc.finish();
}

std::vector<int32_t> decode_channel(std::span<const uint8_t> bytes,
                                    const FreqTable& table, size_t count) {
  std::vector<int32_t> out(count);
  if (count == 0) {
    if (!bytes.empty()) throw CorruptStreamError("payload for an empty channel");
    return out;
  }
  RansDecoder dec(bytes);
  for (size_t i = 0; i < count; ++i) {
    uint32_t s = find_symbol(table, dec.peek());
    dec.advance(table.cum[s], table.freqs[s]);
    out[i] = int32_t(s);
  }
  return out;
}

std::vector<uint8_t> encode_interleaved(
    std::span<const std::span<const int32_t>> runs,
    std::span<const FreqTable* const> tables) {
  if (runs.size() != tables.size()) {
    throw BadShapeError("one frequency table per run required");
  }
  size_t total = 0;
  for (size_t r = 0; r < runs.size(); ++r) {
    check_symbols(runs[r], *tables[r]);
    total += runs[r].size();
  }
  if (total == 0) return {};
  RansEncoder enc;
  for (size_t r = runs.size(); r-- > 0;) {
    const FreqTable& t = *tables[r];
    for (size_t i = runs[r].size(); i-- > 0;) {
      uint32_t s = uint32_t(runs[r][i]);
      enc.put(t.cum[s], t.freqs[s]);
    }
  }
  return enc.finish();
}

std::vector<std::vector<int32_t>> decode_interleaved(
    std::span<const uint8_t> bytes, std::span<const FreqTable* const> tables,
    std::span<const size_t> counts) {
  if (counts.size() != tables.size()) {
    throw BadShapeError("one frequency table per run required");
  }
  size_t total = 0;
  for (size_t c : counts) total += c;
  std::vector<std::vector<int32_t>> out(counts.size());
  if (total == 0) {
    if (!bytes.empty()) throw CorruptStreamError("payload for empty runs");
    return out;
  }
  RansDecoder dec(bytes);
  for (size_t r = 0; r < counts.size(); ++r) {
    const FreqTable& t = *tables[r];
    out[r].resize(counts[r]);
    for (size_t i = 0; i < counts[r]; ++i) {
      uint32_t s = find_symbol(t, dec.peek());
      dec.advance(t.cum[s], t.freqs[s]);
      out[r][i] = int32_t(s);
    }
  }
  return out;
}

// --- DCS1 container ----------------------------------------------------------

namespace {
constexpr char kStreamMagic[5] = "DCS1";
}

std::vector<uint8_t> pack_stream(const CodedStream& s) {
  s.header.spec.validate();
  std::vector<uint8_t> out;
  bytes::put_magic(out, kStreamMagic);
  bytes::put_u8(out, s.header.version);
  bytes::put_u8(out, uint8_t(s.header.codec));
  bytes::put_i32(out, s.header.spec.y_min);
  bytes::put_i32(out, s.header.spec.y_max);
  bytes::put_u32(out, s.header.channels);
  bytes::put_u32(out, s.header.height);
  bytes::put_u32(out, s.header.width);
  bytes::put_u32(out, s.header.downscale);
  bytes::put_u32(out, uint32_t(s.side_info.size()));
  bytes::put_bytes(out, s.side_info);
  bytes::put_u32(out, uint32_t(s.latent_payload.size()));
  bytes::put_bytes(out, s.latent_payload);
  return out;
}

CodedStream unpack_stream(std::span<const uint8_t> data) {
  bytes::Reader r(data);
  r.expect_magic(kStreamMagic, "coded stream");
  CodedStream s;
  s.header.version = r.u8();
  if (s.header.version != kContainerVersion) {
    throw CorruptStreamError("unsupported stream version " +
                             std::to_string(s.header.version));
  }
  uint8_t tag = r.u8();
  if (tag > uint8_t(CodecTag::kLearned)) {
    throw CorruptStreamError("unknown codec tag " + std::to_string(tag));
  }
  s.header.codec = CodecTag(tag);
  s.header.spec.y_min = r.i32();
  s.header.spec.y_max = r.i32();
  s.header.spec.validate();
  s.header.channels = r.u32();
  s.header.height = r.u32();
  s.header.width = r.u32();
  s.header.downscale = r.u32();
  uint32_t side_len = r.u32();
  s.side_info = r.raw(side_len);
  uint32_t latent_len = r.u32();
  s.latent_payload = r.raw(latent_len);
  r.expect_end("coded stream");
  return s;
}

}  // namespace lc::coder
