#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "latentcodec/bytes.hpp"
#include "latentcodec/config.hpp"
#include "latentcodec/dist_codecs.hpp"
#include "latentcodec/eval.hpp"
#include "latentcodec/histogram.hpp"

namespace fs = std::filesystem;
using namespace lc;
using cli::CliConfig;

namespace {

// Fresh scratch directory per test case, removed on scope exit.
struct TempDir {
  fs::path path;

  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("lc_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  const std::vector<uint8_t> data = bytes::read_file(p.string());
  return std::string(data.begin(), data.end());
}

void spit(const fs::path& p, const std::string& text) {
  bytes::write_file(p.string(),
                    {reinterpret_cast<const uint8_t*>(text.data()), text.size()});
}

// Runs the CLI binary with the given arguments, capturing exit code and both
// output streams. Paths used in tests contain no shell metacharacters.
RunResult run_cli(const TempDir& dir, const std::string& args) {
  const fs::path out = dir.path / "_stdout.txt";
  const fs::path err = dir.path / "_stderr.txt";
  const std::string cmd = std::string(LC_CLI_BIN) + " " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// The small corpus shared by the end-to-end cases.
const char* kCorpusArgs =
    "--set spec.y_min=-12 --set spec.y_max=11 --set corpus.channels=6 "
    "--set corpus.images=12 --set corpus.height=16 --set corpus.width=16";

eval::SyntheticCorpusSpec corpus_spec() {
  eval::SyntheticCorpusSpec cs;
  cs.spec = HistogramSpec{-12, 11};
  cs.channels = 6;
  cs.images = 12;
  cs.height = 16;
  cs.width = 16;
  cs.downscale = 4;
  cs.seed = 1;
  return cs;
}

const char* kTinyNetArgs =
    "--set model.N_q=8 --set model.M_q=4 --set model.kernel=5 "
    "--set model.groups=2 --set train.batch=4";

}  // namespace

TEST_CASE("config: defaults and assignment basics") {
  CliConfig cfg;
  CHECK(cfg.spec() == HistogramSpec{-32, 31});
  CHECK(cfg.model_kind == "static");

  cli::apply_assignment(cfg, "spec.y_min = -12");
  cli::apply_assignment(cfg, "spec.y_max=11");
  cli::apply_assignment(cfg, "  model.kind =  gmm ");
  cli::apply_assignment(cfg, "model.K_g=3");
  cli::apply_assignment(cfg, "train.lr=2.5e-3");
  cli::apply_assignment(cfg, "train.seed=12345");
  CHECK(cfg.spec() == HistogramSpec{-12, 11});
  CHECK(cfg.model_kind == "gmm");
  CHECK(cfg.model_k_g == 3);
  CHECK(cfg.train_lr == doctest::Approx(2.5e-3));
  CHECK(cfg.train_seed == 12345);

  // Later assignments win.
  cli::apply_assignment(cfg, "model.K_g=1");
  CHECK(cfg.model_k_g == 1);
}

TEST_CASE("config: rejected assignments") {
  CliConfig cfg;
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "bogus.key=1"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "no equals sign"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "= 3"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "spec.y_min ="), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "spec.y_min=1.5"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "spec.y_min=abc"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "corpus.images=-3"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "train.lr=fast"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "model.kind=tabular"), cli::ConfigError);
  CHECK_THROWS_AS(cli::apply_assignment(cfg, "corpus.images=99999999999"),
                  cli::ConfigError);
  // Failed assignments leave the config unchanged.
  CHECK(cfg == CliConfig{});
}

TEST_CASE("config: text parsing with comments and blank lines") {
  const std::string text =
      "# corpus shape\n"
      "spec.y_min = -12\n"
      "spec.y_max = 11   # inclusive\n"
      "\n"
      "   \t\n"
      "corpus.images = 7\n"
      "corpus.images = 9\n";
  const CliConfig cfg = cli::parse_config_text(text);
  CHECK(cfg.spec() == HistogramSpec{-12, 11});
  CHECK(cfg.corpus_images == 9);

  CHECK_THROWS_WITH_AS(cli::parse_config_text("spec.y_min = -1\nwhat\n"),
                       "Config: line 2: expected key=value, got 'what'",
                       cli::ConfigError);
}

TEST_CASE("config: spec.bins is an order-independent consistency check") {
  // bins may precede or follow the bounds it is checked against.
  const CliConfig a =
      cli::parse_config_text("spec.bins=24\nspec.y_min=-12\nspec.y_max=11\n");
  const CliConfig b =
      cli::parse_config_text("spec.y_min=-12\nspec.y_max=11\nspec.bins=24\n");
  CHECK(a == b);
  CHECK(a.spec().num_bins() == 24);

  CHECK_THROWS_AS(
      cli::parse_config_text("spec.bins=25\nspec.y_min=-12\nspec.y_max=11\n"),
      cli::ConfigError);
  // Default bounds are -32..31, so a lone spec.bins must equal 64.
  CHECK_THROWS_AS(cli::parse_config_text("spec.bins=24\n"), cli::ConfigError);
  CHECK_NOTHROW(cli::parse_config_text("spec.bins=64\n"));
}

TEST_CASE("config: load_config layering and resolved_text round trip") {
  TempDir dir;
  spit(dir.path / "base.cfg", "spec.y_min=-8\nspec.y_max=7\ntrain.lr=0.5\n");

  const CliConfig layered =
      cli::load_config(dir.path / "base.cfg", {"train.lr=0.25", "model.kind=learned"});
  CHECK(layered.spec() == HistogramSpec{-8, 7});
  CHECK(layered.train_lr == 0.25);  // override wins over the file
  CHECK(layered.model_kind == "learned");

  CHECK_THROWS_AS(cli::load_config(dir.path / "missing.cfg", {}), cli::ConfigError);
  // Empty path means defaults-plus-overrides.
  CHECK(cli::load_config("", {}) == CliConfig{});

  // The canonical dump parses back to an equal config, including exact doubles.
  CliConfig cfg = layered;
  cfg.train_lr = 1.0 / 3.0;
  cfg.train_lambda_q = 0.1;
  cfg.corpus_seed = 0xdeadbeefcafeull;
  const std::string dump = cli::resolved_text(cfg);
  CHECK(cli::parse_config_text(dump) == cfg);
  CHECK(dump.find("spec.bins = 16") != std::string::npos);
}

TEST_CASE("cli: gen-data writes a deterministic corpus matching the library") {
  TempDir dir;
  const std::string data = (dir.path / "data").string();
  const RunResult r =
      run_cli(dir, std::string("gen-data ") + kCorpusArgs + " --out " + data);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("resolved config:") != std::string::npos);
  CHECK(r.out.find("spec.bins = 24") != std::string::npos);

  const std::vector<fs::path> ltfs = sorted_files(data, ".ltf");
  REQUIRE(ltfs.size() == 12);
  CHECK(ltfs[0].filename() == "img_0000.ltf");
  CHECK(ltfs[11].filename() == "img_0011.ltf");
  REQUIRE(sorted_files(data, ".csv").size() == 12);  // .pmf.csv sidecars

  // Files must byte-match the library corpus generator.
  const eval::SyntheticCorpus corpus = eval::generate_corpus(corpus_spec());
  for (size_t i = 0; i < ltfs.size(); ++i) {
    const std::vector<uint8_t> expect = ltf_bytes(corpus.latents[i]);
    CHECK(bytes::read_file(ltfs[i].string()) == expect);
  }

  // Sidecar holds the full-precision ground-truth pmf rows.
  const std::string side = slurp(data + "/img_0003.pmf.csv");
  std::string expect = "channel";
  for (int i = 0; i < 24; ++i) expect += ",bin_" + std::to_string(i);
  expect += "\n";
  char buf[40];
  for (size_t c = 0; c < corpus.truths[3].channels(); ++c) {
    expect += std::to_string(c);
    for (double m : corpus.truths[3].pmfs[c].mass) {
      std::snprintf(buf, sizeof(buf), ",%.17g", m);
      expect += buf;
    }
    expect += "\n";
  }
  CHECK(side == expect);

  // A second run into another directory reproduces every byte.
  const std::string data2 = (dir.path / "data2").string();
  REQUIRE(run_cli(dir, std::string("gen-data ") + kCorpusArgs + " --out " + data2)
              .code == 0);
  for (const fs::path& p : ltfs) {
    CHECK(bytes::read_file(p.string()) ==
          bytes::read_file((fs::path(data2) / p.filename()).string()));
  }
}

TEST_CASE("cli: full pipeline over one corpus") {
  TempDir dir;
  const std::string data = (dir.path / "data").string();
  REQUIRE(run_cli(dir, std::string("gen-data ") + kCorpusArgs + " --out " + data)
              .code == 0);

  // --- fit static -------------------------------------------------------------
  const std::string static_dcm = (dir.path / "static.dcm").string();
  REQUIRE(run_cli(dir, "fit --kind static --data " + data + " --out " + static_dcm)
              .code == 0);
  // The file must match an in-process fit over the same (sorted) corpus.
  std::vector<LatentTensor> latents;
  std::vector<PmfBank> banks;
  for (const fs::path& p : sorted_files(data, ".ltf")) {
    latents.push_back(read_ltf(p).tensor);
    banks.push_back(hist::bank_of(latents.back()));
  }
  CHECK(bytes::read_file(static_dcm) ==
        dist::model_bytes(dist::DistModel{dist::static_fit(banks)}));

  // --- fit gmm ----------------------------------------------------------------
  const std::string gmm_dcm = (dir.path / "gmm.dcm").string();
  REQUIRE(run_cli(dir, "fit --kind gmm --set model.K_g=2 --data " + data +
                           " --out " + gmm_dcm)
              .code == 0);
  const dist::DistModel gmm_model = dist::load_model(gmm_dcm);
  REQUIRE(std::holds_alternative<dist::GmmModel>(gmm_model));
  CHECK(std::get<dist::GmmModel>(gmm_model).k_g == 2);
  CHECK(std::get<dist::GmmModel>(gmm_model).spec == HistogramSpec{-12, 11});

  // --- train ------------------------------------------------------------------
  const std::string learned_dcm = (dir.path / "learned.dcm").string();
  const std::string loss_csv = (dir.path / "loss.csv").string();
  const RunResult tr = run_cli(
      dir, std::string("train ") + kTinyNetArgs + " --set train.max_steps=40 --data " +
               data + " --out " + learned_dcm + " --log " + loss_csv);
  REQUIRE(tr.code == 0);
  CHECK(tr.out.find("trained ") != std::string::npos);
  const dist::DistModel learned_model = dist::load_model(learned_dcm);
  REQUIRE(std::holds_alternative<dist::LearnedModel>(learned_model));
  const std::string loss = slurp(loss_csv);
  CHECK(loss.rfind("step,lr,loss,rate_y,rate_q,val_loss\n", 0) == 0);
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 1 + 40 / 25);

  // --- compress with each model -----------------------------------------------
  const std::string in0 = data + "/img_0000.ltf";
  const char* names[3] = {"static", "gmm", "learned"};
  const std::string models[3] = {static_dcm, gmm_dcm, learned_dcm};
  for (int m = 0; m < 3; ++m) {
    CAPTURE(names[m]);
    const std::string dcs = (dir.path / (std::string(names[m]) + ".dcs")).string();
    const RunResult c =
        run_cli(dir, "compress --model " + models[m] + " --in " + in0 + " --out " + dcs);
    REQUIRE(c.code == 0);

    // Stream bytes match the library compressor for the same loaded model.
    const dist::DistModel model = dist::load_model(models[m]);
    const coder::CodedStream expect = dist::codec_compress(latents[0], model);
    CHECK(bytes::read_file(dcs) == coder::pack_stream(expect));

    // Printed rates match the stream.
    char line[64];
    std::snprintf(line, sizeof(line), "R_q bits: %llu\n",
                  (unsigned long long)expect.side_bits());
    CHECK(c.out.find(line) != std::string::npos);
    std::snprintf(line, sizeof(line), "R_y bits: %llu\n",
                  (unsigned long long)expect.latent_bits());
    CHECK(c.out.find(line) != std::string::npos);
    std::snprintf(line, sizeof(line), "bpp: %.6f\n",
                  double(expect.side_bits() + expect.latent_bits()) /
                      double(latents[0].image_pixels()));
    CHECK(c.out.find(line) != std::string::npos);
    if (m == 0) CHECK(c.out.find("R_q bits: 0\n") != std::string::npos);

    // Compressing again is byte-identical.
    const std::string dcs2 = dcs + "2";
    REQUIRE(run_cli(dir, "compress --model " + models[m] + " --in " + in0 +
                             " --out " + dcs2)
                .code == 0);
    CHECK(bytes::read_file(dcs) == bytes::read_file(dcs2));

    // Decompression restores the exact tensor file.
    const std::string round = (dir.path / (std::string(names[m]) + ".ltf")).string();
    REQUIRE(run_cli(dir, "decompress --model " + models[m] + " --in " + dcs +
                             " --out " + round)
                .code == 0);
    CHECK(bytes::read_file(round) == bytes::read_file(in0));
  }

  // --- analyze-gap --------------------------------------------------------------
  const std::string gap_csv = (dir.path / "gap.csv").string();
  const std::string nll_dir = (dir.path / "nll").string();
  const RunResult g =
      run_cli(dir, "analyze-gap --baseline " + static_dcm + " --model " + gmm_dcm +
                       " --data " + data + " --out " + gap_csv + " --dump-nll " +
                       nll_dir);
  REQUIRE(g.code == 0);
  CHECK(g.out.find("orig (bpp)") != std::string::npos);
  CHECK(g.out.find("\n     *") != std::string::npos);

  const dist::DistModel base_model = dist::load_model(static_dcm);
  const eval::GapReport expect_report = eval::gap_report(
      latents, gmm_model, std::get<dist::StaticModel>(base_model));
  CHECK(slurp(gap_csv) == eval::report_csv(expect_report));
  CHECK(slurp(nll_dir + "/img_0000.csv") == eval::nll_grid_csv(banks[0]));
  CHECK(slurp(nll_dir + "/default.csv") ==
        eval::nll_grid_csv(std::get<dist::StaticModel>(base_model).default_bank));
  REQUIRE(sorted_files(nll_dir, ".csv").size() == 13);  // 12 images + default

  // The printed table is the text rendering of the same report.
  CHECK(g.out.find(eval::report_text(expect_report)) != std::string::npos);
}

TEST_CASE("cli: config file feeds commands and --set overrides it") {
  TempDir dir;
  spit(dir.path / "corpus.cfg",
       "spec.y_min = -12\nspec.y_max = 11\ncorpus.channels = 6\n"
       "corpus.images = 5\ncorpus.height = 16\ncorpus.width = 16\n");
  const std::string data = (dir.path / "data").string();
  const RunResult r = run_cli(dir, "gen-data --config " + (dir.path / "corpus.cfg").string() +
                                       " --set corpus.images=3 --out " + data);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("corpus.images = 3") != std::string::npos);
  CHECK(sorted_files(data, ".ltf").size() == 3);
}

TEST_CASE("cli: exit codes classify usage, data, and model errors") {
  TempDir dir;
  const std::string data = (dir.path / "data").string();
  REQUIRE(run_cli(dir, std::string("gen-data ") + kCorpusArgs +
                           " --set corpus.images=4 --out " + data)
              .code == 0);
  const std::string gmm_dcm = (dir.path / "gmm.dcm").string();
  REQUIRE(run_cli(dir, "fit --kind gmm --data " + data + " --out " + gmm_dcm).code == 0);
  const std::string dcs = (dir.path / "img0.dcs").string();
  REQUIRE(run_cli(dir, "compress --model " + gmm_dcm + " --in " + data +
                           "/img_0000.ltf --out " + dcs)
              .code == 0);

  // Usage errors -> 2.
  CHECK(run_cli(dir, "").code == 2);
  CHECK(run_cli(dir, "frobnicate").code == 2);
  CHECK(run_cli(dir, "compress --model " + gmm_dcm).code == 2);  // missing required
  CHECK(run_cli(dir, "fit --kind tabular --data " + data + " --out x.dcm").code == 2);
  CHECK(run_cli(dir, "gen-data --set bogus.key=1 --out x").code == 2);
  CHECK(run_cli(dir, "gen-data --set spec.bins=9 --out x").code == 2);
  CHECK(run_cli(dir, "gen-data --config missing.cfg --out x").code == 2);
  CHECK(run_cli(dir, "--help").code == 0);
  CHECK(run_cli(dir, "compress --help").code == 0);

  // Data errors -> 3.
  CHECK(run_cli(dir, "compress --model " + gmm_dcm + " --in missing.ltf --out x.dcs")
            .code == 3);
  CHECK(run_cli(dir, "fit --kind static --data " + (dir.path / "empty").string() +
                         " --out x.dcm")
            .code == 3);
  const std::string trunc = (dir.path / "trunc.dcs").string();
  const std::vector<uint8_t> whole = bytes::read_file(dcs);
  bytes::write_file(trunc, {whole.data(), whole.size() / 2});
  CHECK(run_cli(dir, "decompress --model " + gmm_dcm + " --in " + trunc +
                         " --out y.ltf")
            .code == 3);

  // Model and training errors -> 4.
  CHECK(run_cli(dir, "compress --model missing.dcm --in " + data +
                         "/img_0000.ltf --out x.dcs")
            .code == 4);
  const std::string garbage = (dir.path / "garbage.dcm").string();
  spit(garbage, "not a model");
  CHECK(run_cli(dir, "compress --model " + garbage + " --in " + data +
                         "/img_0000.ltf --out x.dcs")
            .code == 4);
  CHECK(run_cli(dir, "analyze-gap --baseline " + gmm_dcm + " --model " + gmm_dcm +
                         " --data " + data + " --out g.csv")
            .code == 4);
  const RunResult diverged =
      run_cli(dir, std::string("train ") + kTinyNetArgs +
                       " --set train.lr=1e12 --set train.max_steps=10 --data " + data +
                       " --out d.dcm");
  CHECK(diverged.code == 4);
  CHECK(diverged.err.find("Diverged") != std::string::npos);
}
