#include "latentcodec/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace lc::cli {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("value for " + key + " is not an integer: '" + v + "'");
  }
  if (used != v.size()) {
    throw ConfigError("value for " + key + " is not an integer: '" + v + "'");
  }
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  const int64_t out = parse_int(key, v);
  if (out < 0) throw ConfigError("value for " + key + " must be non-negative");
  return uint64_t(out);
}

uint32_t parse_u32(const std::string& key, const std::string& v) {
  const uint64_t out = parse_uint(key, v);
  if (out > 0xffffffffull) throw ConfigError("value for " + key + " is too large");
  return uint32_t(out);
}

double parse_real(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("value for " + key + " is not a number: '" + v + "'");
  }
  if (used != v.size()) {
    throw ConfigError("value for " + key + " is not a number: '" + v + "'");
  }
  return out;
}

}  // namespace

void apply_assignment(CliConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) throw ConfigError("empty key in '" + assignment + "'");
  if (value.empty()) throw ConfigError("empty value for " + key);

  if (key == "spec.y_min") {
    cfg.spec_y_min = int32_t(parse_int(key, value));
  } else if (key == "spec.y_max") {
    cfg.spec_y_max = int32_t(parse_int(key, value));
  } else if (key == "spec.bins") {
    // Redundant with y_min/y_max; checked in finalize_config.
    cfg.spec_bins_declared = parse_int(key, value);
  } else if (key == "model.kind") {
    if (value != "static" && value != "gmm" && value != "learned") {
      throw ConfigError("model.kind must be static, gmm, or learned");
    }
    cfg.model_kind = value;
  } else if (key == "model.K_g") {
    cfg.model_k_g = parse_u32(key, value);
  } else if (key == "model.N_q") {
    cfg.model_n_q = parse_u32(key, value);
  } else if (key == "model.M_q") {
    cfg.model_m_q = parse_u32(key, value);
  } else if (key == "model.kernel") {
    cfg.model_kernel = parse_u32(key, value);
  } else if (key == "model.groups") {
    cfg.model_groups = parse_u32(key, value);
  } else if (key == "train.lr") {
    cfg.train_lr = parse_real(key, value);
  } else if (key == "train.batch") {
    cfg.train_batch = parse_u32(key, value);
  } else if (key == "train.seed") {
    cfg.train_seed = parse_uint(key, value);
  } else if (key == "train.lambda_q") {
    cfg.train_lambda_q = parse_real(key, value);
  } else if (key == "train.max_steps") {
    cfg.train_max_steps = parse_u32(key, value);
  } else if (key == "train.plateau_patience") {
    cfg.train_plateau_patience = parse_u32(key, value);
  } else if (key == "corpus.channels") {
    cfg.corpus_channels = parse_u32(key, value);
  } else if (key == "corpus.images") {
    cfg.corpus_images = parse_u32(key, value);
  } else if (key == "corpus.height") {
    cfg.corpus_height = parse_u32(key, value);
  } else if (key == "corpus.width") {
    cfg.corpus_width = parse_u32(key, value);
  } else if (key == "corpus.seed") {
    cfg.corpus_seed = parse_uint(key, value);
  } else if (key == "corpus.downscale") {
    cfg.corpus_downscale = parse_u32(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void finalize_config(CliConfig& cfg) {
  if (cfg.spec_bins_declared >= 0) {
    const int64_t derived = int64_t(cfg.spec_y_max) - cfg.spec_y_min + 1;
    if (cfg.spec_bins_declared != derived) {
      throw ConfigError("spec.bins = " + std::to_string(cfg.spec_bins_declared) +
                        " disagrees with y_min/y_max (" + std::to_string(derived) +
                        ")");
    }
    cfg.spec_bins_declared = -1;
  }
}

CliConfig parse_config_text(const std::string& text) {
  CliConfig cfg;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(cfg, line);
    } catch (const ConfigError& e) {
      std::string msg = e.what();
      const std::string prefix = e.name() + ": ";
      if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
      throw ConfigError("line " + std::to_string(lineno) + ": " + msg);
    }
  }
  finalize_config(cfg);
  return cfg;
}

CliConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides) {
  CliConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    cfg = parse_config_text(buf.str());
  }
  for (const std::string& assignment : overrides) {
    apply_assignment(cfg, assignment);
  }
  finalize_config(cfg);
  return cfg;
}

std::string resolved_text(const CliConfig& cfg) {
  std::string out;
  char buf[96];
  auto put_i = [&](const char* key, int64_t v) {
    std::snprintf(buf, sizeof(buf), "%s = %lld\n", key, (long long)v);
    out += buf;
  };
  auto put_u = [&](const char* key, uint64_t v) {
    std::snprintf(buf, sizeof(buf), "%s = %llu\n", key, (unsigned long long)v);
    out += buf;
  };
  auto put_d = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s = %.17g\n", key, v);
    out += buf;
  };
  put_i("spec.y_min", cfg.spec_y_min);
  put_i("spec.y_max", cfg.spec_y_max);
  put_i("spec.bins", int64_t(cfg.spec_y_max) - cfg.spec_y_min + 1);
  out += "model.kind = " + cfg.model_kind + "\n";
  put_u("model.K_g", cfg.model_k_g);
  put_u("model.N_q", cfg.model_n_q);
  put_u("model.M_q", cfg.model_m_q);
  put_u("model.kernel", cfg.model_kernel);
  put_u("model.groups", cfg.model_groups);
  put_d("train.lr", cfg.train_lr);
  put_u("train.batch", cfg.train_batch);
  put_u("train.seed", cfg.train_seed);
  put_d("train.lambda_q", cfg.train_lambda_q);
  put_u("train.max_steps", cfg.train_max_steps);
  put_u("train.plateau_patience", cfg.train_plateau_patience);
  put_u("corpus.channels", cfg.corpus_channels);
  put_u("corpus.images", cfg.corpus_images);
  put_u("corpus.height", cfg.corpus_height);
  put_u("corpus.width", cfg.corpus_width);
  put_u("corpus.seed", cfg.corpus_seed);
  put_u("corpus.downscale", cfg.corpus_downscale);
  return out;
}

}  // namespace lc::cli
