#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latentcodec/core.hpp"

// Flat key=value run configuration shared by the CLI commands. '#' starts a
// comment, blank lines are ignored, later assignments win, unknown keys are
// rejected. The same keys can be overridden on the command line.

namespace lc::cli {

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("Config", msg) {}
};

struct CliConfig {
  // spec.*
  int32_t spec_y_min = -32;
  int32_t spec_y_max = 31;

  // model.*
  std::string model_kind = "static";  // static | gmm | learned
  uint32_t model_k_g = 2;
  uint32_t model_n_q = 32;
  uint32_t model_m_q = 16;
  uint32_t model_kernel = 15;
  uint32_t model_groups = 8;

  // train.*
  double train_lr = 1e-4;
  uint32_t train_batch = 16;
  uint64_t train_seed = 1;
  double train_lambda_q = 1.0;
  uint32_t train_max_steps = 3000;
  uint32_t train_plateau_patience = 10;

  // corpus.*
  uint32_t corpus_channels = 32;
  uint32_t corpus_images = 64;
  uint32_t corpus_height = 16;
  uint32_t corpus_width = 16;
  uint64_t corpus_seed = 1;
  uint32_t corpus_downscale = 4;

  // Set by a spec.bins assignment, checked against y_min/y_max once all
  // assignments are in (so key order never matters), then cleared.
  int64_t spec_bins_declared = -1;

  HistogramSpec spec() const { return HistogramSpec{spec_y_min, spec_y_max}; }

  bool operator==(const CliConfig&) const = default;
};

// Applies one "key=value" assignment. Throws ConfigError for unknown keys or
// unparsable values.
void apply_assignment(CliConfig& cfg, const std::string& assignment);

// Cross-key consistency checks; called by the parsers after the last
// assignment.
void finalize_config(CliConfig& cfg);

// Parses a whole config text (one assignment per line).
CliConfig parse_config_text(const std::string& text);

// File contents, then overrides in order.
CliConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides);

// Canonical key=value dump of every key; parses back to the same config.
std::string resolved_text(const CliConfig& cfg);

}  // namespace lc::cli
