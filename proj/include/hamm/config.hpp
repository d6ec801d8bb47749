#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hamm/data.hpp"
#include "hamm/encoder.hpp"
#include "hamm/train.hpp"

namespace hamm {

/// Everything a command needs. Read from a sectioned key = value file:
///
///   [train]
///   lr_finetune = 1e-3   # comment
///
/// Unknown sections or keys are errors. `--set section.key=value` on the
/// command line is applied after the file.
struct RunConfig {
  std::string profile = "toy";
  EncoderConfig encoder = EncoderConfig::toy();
  TrainConfig train;
  bool missingness_enabled = false;
  MissingnessConfig missingness;
  MissingEvalConfig missing_eval;
  SynthConfig synth;
  int synth_per_class = 60;
  int synth_image_size = 224;
  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
  int reliability_bins = 10;
  std::vector<double> sweep_ratios{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::uint64_t seed = 0;
  bool deterministic = false;

  /// Applies one "section.key" assignment. Throws ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Parses a whole file body; `origin` names it in error messages.
  void apply_text(const std::string& text, const std::string& origin = "config");
  void apply_file(const std::filesystem::path& path);
  /// Canonical text form; apply_text(to_text()) reproduces this config.
  std::string to_text() const;
  /// Cross-field checks plus the encoder and training checks. Throws ConfigError.
  void validate() const;
  /// TrainConfig with the missingness switch and seed folded in.
  TrainConfig train_config() const;
  /// Every accepted "section.key".
  static std::vector<std::string> keys();
};

}  // namespace hamm
