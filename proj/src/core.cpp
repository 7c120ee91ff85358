#include "latentcodec/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "latentcodec/bytes.hpp"

namespace lc {

void Pmf::validate() const {
  spec.validate();
  if (mass.size() != size_t(spec.num_bins())) {
    throw BadShapeError("pmf length does not match bin count");
  }
  double sum = 0.0;
  for (double m : mass) {
    if (!(m >= 0.0)) throw BadShapeError("pmf has a negative or NaN entry");
    sum += m;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw BadShapeError("pmf mass sums to " + std::to_string(sum));
  }
}

void PmfBank::validate() const {
  if (pmfs.empty()) throw BadShapeError("empty pmf bank");
  for (const Pmf& p : pmfs) {
    p.validate();
    if (!(p.spec == pmfs.front().spec)) {
      throw SpecMismatchError("pmf bank mixes histogram specs");
    }
  }
}

Pmf floored(const Pmf& p) {
  Pmf out = p;
  double sum = 0.0;
  for (double& m : out.mass) {
    m = std::max(m, kPmfFloor);
    sum += m;
  }
  for (double& m : out.mass) m /= sum;
  return out;
}

ClampResult clamp_to_support(std::span<const double> raw, const HistogramSpec& spec,
                             uint32_t channels, uint32_t height, uint32_t width,
                             uint32_t downscale) {
  spec.validate();
  if (raw.size() != size_t(channels) * height * width) {
    throw BadShapeError("raw tensor size does not match C*H*W");
  }
  ClampResult res;
  res.tensor.spec = spec;
  res.tensor.channels = channels;
  res.tensor.height = height;
  res.tensor.width = width;
  res.tensor.downscale = downscale;
  res.tensor.data.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    double r = round_half_away(raw[i]);
    if (r < spec.y_min) {
      r = spec.y_min;
      ++res.clamps;
    } else if (r > spec.y_max) {
      r = spec.y_max;
      ++res.clamps;
    }
    res.tensor.data[i] = static_cast<int32_t>(r);
  }
  return res;
}

int bin_index(int32_t value, const HistogramSpec& spec) {
  if (value < spec.y_min || value > spec.y_max) {
    throw OutOfSupportError("value " + std::to_string(value) + " outside [" +
                            std::to_string(spec.y_min) + ", " +
                            std::to_string(spec.y_max) + "]");
  }
  return value - spec.y_min + 1;
}

// --- LTF ------------------------------------------------------------------

namespace {
constexpr char kLtfMagic[5] = "LTF1";

void put_ltf_header(std::vector<uint8_t>& out, uint8_t dtype,
                    const HistogramSpec& spec, uint32_t c, uint32_t h, uint32_t w,
                    uint32_t s) {
  bytes::put_magic(out, kLtfMagic);
  bytes::put_u8(out, dtype);
  bytes::put_u32(out, c);
  bytes::put_u32(out, h);
  bytes::put_u32(out, w);
  bytes::put_i32(out, spec.y_min);
  bytes::put_i32(out, spec.y_max);
  bytes::put_u32(out, s);
}
}  // namespace

std::vector<uint8_t> ltf_bytes(const LatentTensor& t) {
  std::vector<uint8_t> out;
  put_ltf_header(out, 0, t.spec, t.channels, t.height, t.width, t.downscale);
  for (int32_t v : t.data) bytes::put_i32(out, v);
  return out;
}

void write_ltf(const std::filesystem::path& path, const LatentTensor& t) {
  bytes::write_file(path.string(), ltf_bytes(t));
}

void write_ltf_f32(const std::filesystem::path& path, std::span<const float> raw,
                   const HistogramSpec& spec, uint32_t channels, uint32_t height,
                   uint32_t width, uint32_t downscale) {
  if (raw.size() != size_t(channels) * height * width) {
    throw BadShapeError("raw tensor size does not match C*H*W");
  }
  std::vector<uint8_t> out;
  put_ltf_header(out, 1, spec, channels, height, width, downscale);
  for (float v : raw) bytes::put_f32(out, v);
  bytes::write_file(path.string(), out);
}

LtfReadResult read_ltf(const std::filesystem::path& path) {
  std::vector<uint8_t> data = bytes::read_file(path.string());
  bytes::Reader r(data);
  r.expect_magic(kLtfMagic, "LTF file");
  uint8_t dtype = r.u8();
  uint32_t c = r.u32();
  uint32_t h = r.u32();
  uint32_t w = r.u32();
  HistogramSpec spec;
  spec.y_min = r.i32();
  spec.y_max = r.i32();
  uint32_t s = r.u32();
  spec.validate();
  size_t n = size_t(c) * h * w;

  LtfReadResult res;
  if (dtype == 0) {
    res.tensor.spec = spec;
    res.tensor.channels = c;
    res.tensor.height = h;
    res.tensor.width = w;
    res.tensor.downscale = s;
    res.tensor.data.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int32_t v = r.i32();
      if (v < spec.y_min || v > spec.y_max) {
        throw OutOfSupportError("i32 LTF payload value outside support");
      }
      res.tensor.data[i] = v;
    }
  } else if (dtype == 1) {
    std::vector<double> raw(n);
    for (size_t i = 0; i < n; ++i) raw[i] = r.f32();
    ClampResult cr = clamp_to_support(raw, spec, c, h, w, s);
    res.tensor = std::move(cr.tensor);
    res.clamps = cr.clamps;
  } else {
    throw CorruptStreamError("unknown LTF dtype tag");
  }
  r.expect_end("LTF file");
  return res;
}

}  // namespace lc

namespace lc::bytes {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorruptStreamError("cannot open " + path);
  f.seekg(0, std::ios::end);
  std::streamoff len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> data(static_cast<size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(data.data()), len);
  if (!f) throw CorruptStreamError("short read from " + path);
  return data;
}

void write_file(const std::string& path, std::span<const uint8_t> data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CorruptStreamError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(data.data()),
          std::streamsize(data.size()));
  if (!f) throw CorruptStreamError("short write to " + path);
}

}  // namespace lc::bytes
