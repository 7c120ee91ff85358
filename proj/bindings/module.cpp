// Python bindings for the main codec operations: corpus generation, model
// fitting/training, compression, decompression, and rate/gap evaluation.
// Models and coded streams cross the boundary as opaque `bytes`; tensors and
// pmf banks as numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <utility>
#include <vector>

#include "latentcodec/coder.hpp"
#include "latentcodec/core.hpp"
#include "latentcodec/dist_codecs.hpp"
#include "latentcodec/eval.hpp"
#include "latentcodec/histogram.hpp"
#include "latentcodec/nn.hpp"

namespace py = pybind11;
using namespace lc;

namespace {

using IntArray = py::array_t<int32_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

LatentTensor to_tensor(const IntArray& data, int32_t y_min, int32_t y_max,
                       uint32_t downscale) {
  if (data.ndim() != 3) {
    throw BadShapeError("latent array must have shape [channels, height, width]");
  }
  LatentTensor t;
  t.spec = HistogramSpec{y_min, y_max};
  t.channels = uint32_t(data.shape(0));
  t.height = uint32_t(data.shape(1));
  t.width = uint32_t(data.shape(2));
  t.downscale = downscale;
  t.data.assign(data.data(), data.data() + data.size());
  return t;
}

py::array from_tensor(const LatentTensor& t) {
  IntArray out({py::ssize_t(t.channels), py::ssize_t(t.height), py::ssize_t(t.width)});
  std::memcpy(out.mutable_data(), t.data.data(), sizeof(int32_t) * t.data.size());
  return std::move(out);
}

std::vector<LatentTensor> to_tensors(const std::vector<IntArray>& datas,
                                     int32_t y_min, int32_t y_max,
                                     uint32_t downscale) {
  std::vector<LatentTensor> out;
  out.reserve(datas.size());
  for (const IntArray& d : datas) out.push_back(to_tensor(d, y_min, y_max, downscale));
  return out;
}

Pmf to_pmf(const F64Array& mass) {
  if (mass.ndim() != 1 || mass.size() == 0) {
    throw BadShapeError("pmf must be a non-empty 1-d array");
  }
  Pmf p{HistogramSpec{0, int32_t(mass.size()) - 1},
        std::vector<double>(mass.data(), mass.data() + mass.size())};
  p.validate();
  return p;
}

PmfBank to_bank(const F64Array& masses, int32_t y_min, int32_t y_max) {
  if (masses.ndim() != 2) throw BadShapeError("bank must have shape [channels, bins]");
  const HistogramSpec spec{y_min, y_max};
  if (masses.shape(1) != spec.num_bins()) {
    throw SpecMismatchError("bank column count does not match the spec bins");
  }
  PmfBank bank;
  for (py::ssize_t c = 0; c < masses.shape(0); ++c) {
    Pmf p{spec, std::vector<double>(masses.data(c, 0),
                                    masses.data(c, 0) + masses.shape(1))};
    bank.pmfs.push_back(std::move(p));
  }
  bank.validate();
  return bank;
}

py::array from_bank(const PmfBank& bank) {
  const py::ssize_t c = py::ssize_t(bank.channels());
  const py::ssize_t b = py::ssize_t(bank.pmfs.at(0).mass.size());
  F64Array out({c, b});
  for (py::ssize_t i = 0; i < c; ++i) {
    std::memcpy(out.mutable_data(i, 0), bank.pmfs[size_t(i)].mass.data(),
                sizeof(double) * size_t(b));
  }
  return std::move(out);
}

py::bytes to_py_bytes(const std::vector<uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<uint8_t> from_py_bytes(const py::bytes& b) {
  const std::string_view s = b;
  return std::vector<uint8_t>(s.begin(), s.end());
}

dist::DistModel parse(const py::bytes& model) {
  return dist::parse_model(from_py_bytes(model));
}

const char* kind_name(const dist::DistModel& model) {
  if (std::holds_alternative<dist::StaticModel>(model)) return "static";
  if (std::holds_alternative<dist::GmmModel>(model)) return "gmm";
  return "learned";
}

}  // namespace

PYBIND11_MODULE(_latentcodec, m) {
  m.doc() = "lossless codec for quantized latent tensors with input-adaptive "
            "encoding distributions";

  py::register_exception<Error>(m, "CodecError");

  m.attr("PMF_FLOOR") = kPmfFloor;
  m.attr("GMM_SIGMA_MIN") = dist::kGmmSigmaMin;
  m.attr("GMM_MAX_COMPONENTS") = dist::kGmmMaxComponents;
  m.attr("Q_SUPPORT_MIN") = nn::kQSupportMin;
  m.attr("Q_SUPPORT_MAX") = nn::kQSupportMax;

  m.def(
      "generate_corpus",
      [](int32_t y_min, int32_t y_max, uint32_t channels, uint32_t images,
         uint32_t height, uint32_t width, uint32_t downscale, uint64_t seed) {
        eval::SyntheticCorpusSpec cs;
        cs.spec = HistogramSpec{y_min, y_max};
        cs.channels = channels;
        cs.images = images;
        cs.height = height;
        cs.width = width;
        cs.downscale = downscale;
        cs.seed = seed;
        const eval::SyntheticCorpus corpus = eval::generate_corpus(cs);
        py::list latents, truths;
        for (const LatentTensor& t : corpus.latents) latents.append(from_tensor(t));
        for (const PmfBank& b : corpus.truths) truths.append(from_bank(b));
        return py::make_tuple(latents, truths);
      },
      py::arg("y_min"), py::arg("y_max"), py::arg("channels"), py::arg("images"),
      py::arg("height"), py::arg("width"), py::arg("downscale") = 4,
      py::arg("seed") = 1,
      "Synthetic latent corpus; returns (list of [C,H,W] int32 arrays, list of "
      "[C,B] ground-truth pmf arrays).");

  m.def(
      "hard_bank",
      [](const IntArray& data, int32_t y_min, int32_t y_max) {
        return from_bank(hist::bank_of(to_tensor(data, y_min, y_max, 1)));
      },
      py::arg("data"), py::arg("y_min"), py::arg("y_max"),
      "Per-channel normalized histogram of a [C,H,W] int32 latent tensor.");

  m.def(
      "fit_static",
      [](const std::vector<IntArray>& datas, int32_t y_min, int32_t y_max) {
        std::vector<PmfBank> banks;
        banks.reserve(datas.size());
        for (const IntArray& d : datas) {
          banks.push_back(hist::bank_of(to_tensor(d, y_min, y_max, 1)));
        }
        return to_py_bytes(dist::model_bytes(dist::DistModel{dist::static_fit(banks)}));
      },
      py::arg("datas"), py::arg("y_min"), py::arg("y_max"),
      "Fit the static (mean-histogram) model; returns serialized model bytes.");

  m.def(
      "gmm_model",
      [](int32_t y_min, int32_t y_max, uint32_t k_g) {
        return to_py_bytes(dist::model_bytes(
            dist::DistModel{dist::GmmModel{HistogramSpec{y_min, y_max}, k_g}}));
      },
      py::arg("y_min"), py::arg("y_max"), py::arg("k_g") = 2,
      "Per-image GMM side-information model; returns serialized model bytes.");

  m.def(
      "train_model",
      [](const std::vector<IntArray>& datas, int32_t y_min, int32_t y_max,
         uint32_t downscale, uint32_t n_q, uint32_t m_q, uint32_t kernel,
         uint32_t groups, double lr, uint32_t batch, uint64_t seed, double lambda_q,
         uint32_t max_steps, uint32_t plateau_patience) {
        const std::vector<LatentTensor> latents =
            to_tensors(datas, y_min, y_max, downscale);
        if (latents.empty()) throw BadShapeError("training corpus is empty");
        std::vector<PmfBank> banks;
        banks.reserve(latents.size());
        for (const LatentTensor& t : latents) banks.push_back(hist::bank_of(t));

        nn::TransformConfig tc;
        tc.channels = latents[0].channels;
        tc.n_q = n_q;
        tc.m_q = m_q;
        tc.kernel = kernel;
        tc.groups = groups;
        tc.bins = uint32_t(latents[0].spec.num_bins());

        nn::TrainConfig tr;
        tr.lr = lr;
        tr.batch_size = batch;
        tr.seed = seed;
        tr.lambda = lambda_q;
        tr.max_steps = max_steps;
        tr.plateau_patience = plateau_patience;

        const size_t n_val = (banks.size() + 7) / 8;
        const size_t n_train = banks.size() - n_val;
        nn::DistNet net = nn::DistNet::init(tc, seed);
        const nn::TrainResult res =
            nn::train(net, {banks.data(), n_train}, {banks.data() + n_train, n_val},
                      double(latents[0].elems_per_channel()), tr);

        const dist::DistModel model =
            dist::LearnedModel{std::move(net), latents[0].spec};
        return py::make_tuple(to_py_bytes(dist::model_bytes(model)), res.steps,
                              res.best_val);
      },
      py::arg("datas"), py::arg("y_min"), py::arg("y_max"), py::arg("downscale") = 4,
      py::arg("n_q") = 32, py::arg("m_q") = 16, py::arg("kernel") = 15,
      py::arg("groups") = 8, py::arg("lr") = 1e-4, py::arg("batch") = 16,
      py::arg("seed") = 1, py::arg("lambda_q") = 1.0, py::arg("max_steps") = 3000,
      py::arg("plateau_patience") = 10,
      "Train the learned distribution codec on a corpus (last eighth held for "
      "validation); returns (model bytes, steps, best validation loss).");

  m.def(
      "model_kind", [](const py::bytes& model) { return kind_name(parse(model)); },
      py::arg("model"), "One of 'static', 'gmm', 'learned'.");

  m.def(
      "compress",
      [](const py::bytes& model, const IntArray& data, int32_t y_min, int32_t y_max,
         uint32_t downscale) {
        const coder::CodedStream stream = dist::codec_compress(
            to_tensor(data, y_min, y_max, downscale), parse(model));
        return to_py_bytes(coder::pack_stream(stream));
      },
      py::arg("model"), py::arg("data"), py::arg("y_min"), py::arg("y_max"),
      py::arg("downscale") = 4, "Losslessly encode a [C,H,W] int32 latent tensor.");

  m.def(
      "decompress",
      [](const py::bytes& model, const py::bytes& stream) {
        const LatentTensor t = dist::codec_decompress(
            coder::unpack_stream(from_py_bytes(stream)), parse(model));
        return py::make_tuple(from_tensor(t), t.spec.y_min, t.spec.y_max,
                              t.downscale);
      },
      py::arg("model"), py::arg("stream"),
      "Decode a stream; returns (data, y_min, y_max, downscale).");

  m.def(
      "stream_info",
      [](const py::bytes& stream) {
        const coder::CodedStream s = coder::unpack_stream(from_py_bytes(stream));
        py::dict d;
        d["kind"] = uint32_t(s.header.codec);
        d["y_min"] = s.header.spec.y_min;
        d["y_max"] = s.header.spec.y_max;
        d["channels"] = s.header.channels;
        d["height"] = s.header.height;
        d["width"] = s.header.width;
        d["downscale"] = s.header.downscale;
        d["side_bits"] = s.side_bits();
        d["latent_bits"] = s.latent_bits();
        d["total_bits"] = s.total_bits();
        return d;
      },
      py::arg("stream"), "Header fields and bit counts of a coded stream.");

  m.def(
      "entropy_bits", [](const F64Array& p) { return eval::entropy_bits(to_pmf(p)); },
      py::arg("p"));
  m.def(
      "cross_entropy_bits",
      [](const F64Array& p, const F64Array& q) {
        return eval::cross_entropy_bits(to_pmf(p), to_pmf(q));
      },
      py::arg("p"), py::arg("q"));
  m.def(
      "kl_bits",
      [](const F64Array& p, const F64Array& q) {
        return eval::kl_bits(to_pmf(p), to_pmf(q));
      },
      py::arg("p"), py::arg("q"));

  m.def(
      "potential_savings_bpp",
      [](const F64Array& bank, const F64Array& defaults, int32_t y_min,
         int32_t y_max, uint32_t downscale) {
        return eval::potential_savings_bpp(to_bank(bank, y_min, y_max),
                                           to_bank(defaults, y_min, y_max),
                                           downscale);
      },
      py::arg("bank"), py::arg("defaults"), py::arg("y_min"), py::arg("y_max"),
      py::arg("downscale"),
      "Maximum per-pixel rate saving of input-adaptive coding over a default "
      "bank: sum of per-channel KL divergences over downscale^2.");

  m.def(
      "gap_report_csv",
      [](const std::vector<IntArray>& datas, int32_t y_min, int32_t y_max,
         uint32_t downscale, const py::bytes& model, const py::bytes& baseline) {
        const dist::DistModel base = parse(baseline);
        if (!std::holds_alternative<dist::StaticModel>(base)) {
          throw SpecMismatchError("baseline must be a static model");
        }
        return eval::report_csv(
            eval::gap_report(to_tensors(datas, y_min, y_max, downscale),
                             parse(model), std::get<dist::StaticModel>(base)));
      },
      py::arg("datas"), py::arg("y_min"), py::arg("y_max"), py::arg("downscale"),
      py::arg("model"), py::arg("baseline"),
      "Per-image potential/achieved gap rows plus aggregate, as CSV text.");

  m.def(
      "lambda_q",
      [](uint32_t trained_h, uint32_t trained_w, uint32_t target_h,
         uint32_t target_w) {
        return nn::lambda_q(trained_h, trained_w, target_h, target_w);
      },
      py::arg("trained_h"), py::arg("trained_w"), py::arg("target_h"),
      py::arg("target_w"),
      "Side-info rate weight: trained pixel count over target pixel count.");
}
