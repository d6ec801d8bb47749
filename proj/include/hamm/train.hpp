#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hamm/checkpoint.hpp"
#include "hamm/classifier.hpp"
#include "hamm/data.hpp"
#include "hamm/mae.hpp"
#include "hamm/metrics.hpp"
#include "hamm/optim.hpp"

namespace hamm {

struct TrainConfig {
  double lr_pretrain = 1e-5;
  double lr_finetune = 3e-6;
  int batch_pretrain = 8;
  int batch_finetune = 16;
  int pretrain_epochs = 20;
  double mask_ratio = 0.7;
  int patch_size = 32;
  int decoder_width = 256;
  int hidden = 512;
  int patience = 10;
  /// A validation loss counts as an improvement only below best - min_delta.
  double min_delta = 1e-6;
  int max_epochs = 200;
  int n_seeds = 5;
  bool freeze_mcga = false;
  bool augment = true;
  AugmentationPolicy augmentation;
  std::optional<MissingnessConfig> missingness;
  /// Modalities fed to the classifier (ascending).
  std::vector<int> modalities{kFundus, kOct, kVf};
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Visiting order of `n` training samples in a given epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Stage 1: masked reconstruction of all three modalities.
class Pretrainer {
 public:
  Pretrainer(const EncoderConfig& encoder, const TrainConfig& config);
  /// One pass over `train`; returns the sample-weighted mean batch loss.
  /// Throws NumericError on a non-finite loss.
  double run_epoch(std::span<const MultimodalSample> train);
  int epochs_done() const { return epoch_; }
  const std::vector<double>& losses() const { return losses_; }
  MaskedAutoencoder& model() { return model_; }
  /// Parameters, optimizer state, epoch counter and loss history.
  Checkpoint checkpoint(const std::string& config_echo) const;
  /// Resumes from checkpoint(); continuing yields the same losses as an
  /// uninterrupted run.
  void restore(const Checkpoint& checkpoint);

 private:
  TrainConfig config_;
  MaskedAutoencoder model_;
  Adam optimizer_;
  int epoch_ = 0;
  std::vector<double> losses_;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0, train_acc = 0.0, val_loss = 0.0, val_acc = 0.0;
  /// Training samples seen with 0, 1 and 2 modalities removed.
  std::array<int, 3> patterns{};
  bool improved = false;
};

struct FinetuneResult {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

struct Prediction {
  Tensor probabilities;  // [N,4]
  std::vector<int> labels;
  double loss = 0.0;
};

/// Class probabilities for `samples` in order, using the listed modalities.
Prediction predict(HammClassifier& model, std::span<const MultimodalSample> samples, std::span<const int> modalities,
                   int batch_size);

/// Stage 2: supervised fine-tuning with early stopping on validation loss.
class Finetuner {
 public:
  Finetuner(const EncoderConfig& encoder, const TrainConfig& config);
  /// Copies the encoder (backbone and MCGA) from a pretraining checkpoint.
  void load_pretrained(const Checkpoint& checkpoint);
  /// Trains until the validation loss stalls for `patience` epochs or
  /// `max_epochs` is reached, then restores the best-validation parameters.
  FinetuneResult run(std::span<const MultimodalSample> train, std::span<const MultimodalSample> val,
                     const std::function<void(const EpochLog&)>& on_epoch = {});
  HammClassifier& model() { return model_; }
  Checkpoint checkpoint(const std::string& config_echo) const;
  /// Loads classifier parameters saved by checkpoint().
  void restore(const Checkpoint& checkpoint);

 private:
  TrainConfig config_;
  HammClassifier model_;
};

struct MetricSummary {
  double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;
};

/// Mean, sample standard deviation (0 for one run), min and max of each
/// scalar metric across runs.
std::map<std::string, MetricSummary> aggregate(std::span<const EvalReport> runs);
std::string format_summary(const std::map<std::string, MetricSummary>& summary);

struct MultiSeedResult {
  std::vector<EvalReport> runs;
  std::map<std::string, MetricSummary> summary;
};

/// Calls `trial` with seeds base_seed, base_seed + 1, ... and aggregates.
MultiSeedResult multi_seed(int n_seeds, std::uint64_t base_seed, const std::function<EvalReport(std::uint64_t)>& trial);

}  // namespace hamm
