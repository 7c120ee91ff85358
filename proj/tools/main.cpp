// Command-line surface for the latent codec toolkit: synthetic data
// generation, model fitting/training, compression, decompression, and gap
// analysis. Exit codes: 0 success, 2 usage/config error, 3 data error,
// 4 model or training error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "latentcodec/bytes.hpp"
#include "latentcodec/config.hpp"
#include "latentcodec/dist_codecs.hpp"
#include "latentcodec/eval.hpp"
#include "latentcodec/histogram.hpp"
#include "latentcodec/nn.hpp"

namespace fs = std::filesystem;
using namespace lc;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitModel = 4;

void report(const Error& e) { std::fprintf(stderr, "error: %s\n", e.what()); }

// Runs one phase of a command; on failure prints a one-line diagnostic and
// stores the exit code for the phase's error class.
template <typename Fn>
bool phase(int& rc, int fail_code, Fn&& fn) {
  try {
    fn();
    return true;
  } catch (const cli::ConfigError& e) {
    report(e);
    rc = kExitUsage;
  } catch (const DivergedError& e) {
    report(e);
    rc = kExitModel;
  } catch (const Error& e) {
    report(e);
    rc = fail_code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    rc = fail_code;
  }
  return false;
}

void print_config(const cli::CliConfig& cfg) {
  std::printf("resolved config:\n");
  const std::string text = cli::resolved_text(cfg);
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::printf("  %s\n", text.substr(start, end - start).c_str());
    start = end + 1;
  }
}

std::string image_name(size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%04zu%s", index, ext);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  bytes::write_file(path.string(),
                    {reinterpret_cast<const uint8_t*>(text.data()), text.size()});
}

std::string read_text(const fs::path& path) {
  const std::vector<uint8_t> data = bytes::read_file(path.string());
  return std::string(data.begin(), data.end());
}

// Ground-truth pmf sidecar: full-precision masses, one row per channel.
std::string pmf_csv(const PmfBank& bank) {
  const size_t bins = bank.pmfs.at(0).mass.size();
  std::string out = "channel";
  for (size_t i = 0; i < bins; ++i) out += ",bin_" + std::to_string(i);
  out += "\n";
  char buf[40];
  for (size_t c = 0; c < bank.channels(); ++c) {
    out += std::to_string(c);
    for (double m : bank.pmfs[c].mass) {
      std::snprintf(buf, sizeof(buf), ",%.17g", m);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::vector<LatentTensor> read_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw BadShapeError("data directory " + dir.string() + " does not exist");
  }
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ltf") {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) {
    throw BadShapeError("no .ltf files in " + dir.string());
  }
  std::vector<LatentTensor> out;
  out.reserve(paths.size());
  for (const fs::path& p : paths) {
    LtfReadResult r = read_ltf(p);
    if (r.clamps > 0) {
      std::printf("note: %llu values clamped while reading %s\n",
                  (unsigned long long)r.clamps, p.string().c_str());
    }
    out.push_back(std::move(r.tensor));
  }
  return out;
}

void check_uniform_corpus(const std::vector<LatentTensor>& latents) {
  for (const LatentTensor& t : latents) {
    if (t.spec != latents[0].spec || t.channels != latents[0].channels) {
      throw SpecMismatchError("corpus files disagree on spec or channels");
    }
  }
}

// --- commands -----------------------------------------------------------------

int cmd_gen_data(const std::string& config, const std::vector<std::string>& sets,
                 const std::string& out_dir) {
  int rc = 0;
  cli::CliConfig cfg;
  if (!phase(rc, kExitUsage, [&] { cfg = cli::load_config(config, sets); })) return rc;
  print_config(cfg);

  phase(rc, kExitData, [&] {
    eval::SyntheticCorpusSpec cs;
    cs.spec = cfg.spec();
    cs.channels = cfg.corpus_channels;
    cs.images = cfg.corpus_images;
    cs.height = cfg.corpus_height;
    cs.width = cfg.corpus_width;
    cs.downscale = cfg.corpus_downscale;
    cs.seed = cfg.corpus_seed;
    const eval::SyntheticCorpus corpus = eval::generate_corpus(cs);

    fs::create_directories(out_dir);
    for (size_t i = 0; i < corpus.latents.size(); ++i) {
      const fs::path ltf = fs::path(out_dir) / image_name(i, ".ltf");
      write_ltf(ltf, corpus.latents[i]);
      write_text(fs::path(out_dir) / image_name(i, ".pmf.csv"),
                 pmf_csv(corpus.truths[i]));
      // Post-write verification.
      const LtfReadResult back = read_ltf(ltf);
      if (back.tensor.data != corpus.latents[i].data ||
          back.tensor.spec != corpus.latents[i].spec) {
        throw CorruptStreamError("verification failed for " + ltf.string());
      }
    }
    std::printf("wrote %zu images to %s\n", corpus.latents.size(), out_dir.c_str());
  });
  return rc;
}

int cmd_fit(const std::string& kind, const std::string& config,
            const std::vector<std::string>& sets, const std::string& data_dir,
            const std::string& out_path) {
  int rc = 0;
  cli::CliConfig cfg;
  if (!phase(rc, kExitUsage, [&] { cfg = cli::load_config(config, sets); })) return rc;
  print_config(cfg);

  std::vector<LatentTensor> latents;
  if (!phase(rc, kExitData, [&] {
        latents = read_corpus(data_dir);
        check_uniform_corpus(latents);
      })) {
    return rc;
  }

  phase(rc, kExitModel, [&] {
    dist::DistModel model;
    if (kind == "static") {
      std::vector<PmfBank> banks;
      banks.reserve(latents.size());
      for (const auto& t : latents) banks.push_back(hist::bank_of(t));
      model = dist::static_fit(banks);
    } else {
      model = dist::GmmModel{latents[0].spec, cfg.model_k_g};
    }
    dist::save_model(out_path, model);
    if (dist::model_bytes(dist::load_model(out_path)) != dist::model_bytes(model)) {
      throw CorruptStreamError("verification failed for " + out_path);
    }
    std::printf("fit %s model over %zu images -> %s\n", kind.c_str(),
                latents.size(), out_path.c_str());
  });
  return rc;
}

int cmd_train(const std::string& config, const std::vector<std::string>& sets,
              const std::string& data_dir, const std::string& out_path,
              const std::string& log_path) {
  int rc = 0;
  cli::CliConfig cfg;
  if (!phase(rc, kExitUsage, [&] { cfg = cli::load_config(config, sets); })) return rc;
  print_config(cfg);

  std::vector<LatentTensor> latents;
  std::vector<PmfBank> banks;
  if (!phase(rc, kExitData, [&] {
        latents = read_corpus(data_dir);
        check_uniform_corpus(latents);
        banks.reserve(latents.size());
        for (const auto& t : latents) banks.push_back(hist::bank_of(t));
      })) {
    return rc;
  }

  phase(rc, kExitModel, [&] {
    const HistogramSpec spec = latents[0].spec;
    nn::TransformConfig tc;
    tc.channels = latents[0].channels;
    tc.n_q = cfg.model_n_q;
    tc.m_q = cfg.model_m_q;
    tc.kernel = cfg.model_kernel;
    tc.groups = cfg.model_groups;
    tc.bins = uint32_t(spec.num_bins());

    // Hold out the last ceil(images/8) banks for validation.
    const size_t n_val = (banks.size() + 7) / 8;
    const size_t n_train = banks.size() - n_val;
    const std::span<const PmfBank> train_banks(banks.data(), n_train);
    const std::span<const PmfBank> val_banks(banks.data() + n_train, n_val);

    nn::TrainConfig tr;
    tr.lr = cfg.train_lr;
    tr.batch_size = cfg.train_batch;
    tr.seed = cfg.train_seed;
    tr.lambda = cfg.train_lambda_q;
    tr.max_steps = cfg.train_max_steps;
    tr.plateau_patience = cfg.train_plateau_patience;

    nn::DistNet net = nn::DistNet::init(tc, cfg.train_seed);
    const nn::TrainResult res = nn::train(
        net, train_banks, val_banks, double(latents[0].elems_per_channel()), tr);

    const dist::DistModel model = dist::LearnedModel{std::move(net), spec};
    dist::save_model(out_path, model);
    if (dist::model_bytes(dist::load_model(out_path)) != dist::model_bytes(model)) {
      throw CorruptStreamError("verification failed for " + out_path);
    }

    std::string csv = "step,lr,loss,rate_y,rate_q,val_loss\n";
    char buf[160];
    for (const nn::TrainLogRow& row : res.log) {
      std::snprintf(buf, sizeof(buf), "%llu,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                    (unsigned long long)row.step, row.lr, row.loss, row.rate_y,
                    row.rate_q, row.val_loss);
      csv += buf;
    }
    if (!log_path.empty()) write_text(log_path, csv);
    std::printf("trained %llu steps on %zu/%zu banks, best val loss %.6f bits -> %s\n",
                (unsigned long long)res.steps, n_train, n_val, res.best_val,
                out_path.c_str());
  });
  return rc;
}

int cmd_compress(const std::string& model_path, const std::string& in_path,
                 const std::string& out_path) {
  int rc = 0;
  dist::DistModel model;
  if (!phase(rc, kExitModel, [&] { model = dist::load_model(model_path); })) return rc;

  phase(rc, kExitData, [&] {
    const LtfReadResult in = read_ltf(in_path);
    const coder::CodedStream stream = dist::codec_compress(in.tensor, model);
    bytes::write_file(out_path, coder::pack_stream(stream));

    // Post-write verification: decode what was written and compare.
    const coder::CodedStream back =
        coder::unpack_stream(bytes::read_file(out_path));
    const LatentTensor round = dist::codec_decompress(back, model);
    if (round.data != in.tensor.data || round.spec != in.tensor.spec) {
      throw CorruptStreamError("verification failed for " + out_path);
    }

    const double bpp = double(stream.side_bits() + stream.latent_bits()) /
                       double(in.tensor.image_pixels());
    std::printf("R_q bits: %llu\n", (unsigned long long)stream.side_bits());
    std::printf("R_y bits: %llu\n", (unsigned long long)stream.latent_bits());
    std::printf("bpp: %.6f\n", bpp);
  });
  return rc;
}

int cmd_decompress(const std::string& model_path, const std::string& in_path,
                   const std::string& out_path) {
  int rc = 0;
  dist::DistModel model;
  if (!phase(rc, kExitModel, [&] { model = dist::load_model(model_path); })) return rc;

  phase(rc, kExitData, [&] {
    const coder::CodedStream stream =
        coder::unpack_stream(bytes::read_file(in_path));
    const LatentTensor tensor = dist::codec_decompress(stream, model);
    write_ltf(out_path, tensor);
    const LtfReadResult back = read_ltf(out_path);
    if (back.tensor.data != tensor.data || back.tensor.spec != tensor.spec) {
      throw CorruptStreamError("verification failed for " + out_path);
    }
    std::printf("decoded %u x %u x %u latent -> %s\n", tensor.channels,
                tensor.height, tensor.width, out_path.c_str());
  });
  return rc;
}

int cmd_analyze_gap(const std::string& baseline_path, const std::string& model_path,
                    const std::string& data_dir, const std::string& out_path,
                    const std::string& nll_dir) {
  int rc = 0;
  dist::StaticModel baseline;
  dist::DistModel model;
  if (!phase(rc, kExitModel, [&] {
        dist::DistModel base = dist::load_model(baseline_path);
        if (!std::holds_alternative<dist::StaticModel>(base)) {
          throw SpecMismatchError("baseline must be a static model");
        }
        baseline = std::get<dist::StaticModel>(std::move(base));
        model = dist::load_model(model_path);
      })) {
    return rc;
  }

  phase(rc, kExitData, [&] {
    const std::vector<LatentTensor> latents = read_corpus(data_dir);
    const eval::GapReport report = eval::gap_report(latents, model, baseline);
    const std::string csv = eval::report_csv(report);
    write_text(out_path, csv);
    if (read_text(out_path) != csv) {
      throw CorruptStreamError("verification failed for " + out_path);
    }
    if (!nll_dir.empty()) {
      fs::create_directories(nll_dir);
      for (size_t i = 0; i < latents.size(); ++i) {
        write_text(fs::path(nll_dir) / image_name(i, ".csv"),
                   eval::nll_grid_csv(hist::bank_of(latents[i])));
      }
      write_text(fs::path(nll_dir) / "default.csv",
                 eval::nll_grid_csv(baseline.default_bank));
    }
    std::fputs(eval::report_text(report).c_str(), stdout);
  });
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lossless codec toolkit for quantized latent tensors"};
  app.require_subcommand(1);
  int rc = 0;

  std::string config, out_dir, out_path, in_path, data_dir, model_path;
  std::string kind, baseline_path, log_path, nll_dir;
  std::vector<std::string> sets;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic latent corpus");
  gen->add_option("--config", config, "key=value config file");
  gen->add_option("--set", sets, "config override key=value")->take_all();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->callback([&] { rc = cmd_gen_data(config, sets, out_dir); });

  auto* fit = app.add_subcommand("fit", "fit a static or gmm model to a corpus");
  fit->add_option("--kind", kind, "model kind")
      ->required()
      ->check(CLI::IsMember({"static", "gmm"}));
  fit->add_option("--config", config, "key=value config file");
  fit->add_option("--set", sets, "config override key=value")->take_all();
  fit->add_option("--data", data_dir, "directory of .ltf files")->required();
  fit->add_option("--out", out_path, "output model file")->required();
  fit->callback([&] { rc = cmd_fit(kind, config, sets, data_dir, out_path); });

  auto* train = app.add_subcommand("train", "train a learned model on a corpus");
  train->add_option("--config", config, "key=value config file");
  train->add_option("--set", sets, "config override key=value")->take_all();
  train->add_option("--data", data_dir, "directory of .ltf files")->required();
  train->add_option("--out", out_path, "output model file")->required();
  train->add_option("--log", log_path, "loss curve CSV path");
  train->callback([&] { rc = cmd_train(config, sets, data_dir, out_path, log_path); });

  auto* comp = app.add_subcommand("compress", "compress a latent tensor file");
  comp->add_option("--model", model_path, "model file")->required();
  comp->add_option("--in", in_path, "input .ltf")->required();
  comp->add_option("--out", out_path, "output .dcs")->required();
  comp->callback([&] { rc = cmd_compress(model_path, in_path, out_path); });

  auto* dec = app.add_subcommand("decompress", "decompress a coded stream");
  dec->add_option("--model", model_path, "model file")->required();
  dec->add_option("--in", in_path, "input .dcs")->required();
  dec->add_option("--out", out_path, "output .ltf")->required();
  dec->callback([&] { rc = cmd_decompress(model_path, in_path, out_path); });

  auto* gap = app.add_subcommand("analyze-gap", "gap report for a model vs baseline");
  gap->add_option("--baseline", baseline_path, "static baseline model file")
      ->required();
  gap->add_option("--model", model_path, "evaluated model file")->required();
  gap->add_option("--data", data_dir, "directory of .ltf files")->required();
  gap->add_option("--out", out_path, "report CSV path")->required();
  gap->add_option("--dump-nll", nll_dir, "directory for per-image NLL grids");
  gap->callback([&] {
    rc = cmd_analyze_gap(baseline_path, model_path, data_dir, out_path, nll_dir);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  return rc;
}
