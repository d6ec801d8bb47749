#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hamm/tensor.hpp"

namespace hamm {

struct ConfusionMetrics {
  double accuracy = 0.0;
  /// Unweighted mean of per-class F1 over classes seen in labels or predictions.
  double f1_macro = 0.0;
  /// Recall per class; 0 for a class absent from the labels.
  std::vector<double> per_class_accuracy;
};

ConfusionMetrics confusion_metrics(std::span<const int> labels, std::span<const int> predictions, int classes = 4);

/// Cohen's kappa with weights (i-j)^2/(K-1)^2. When each rater uses a single
/// class the result is 1 if they agree; otherwise NumericError.
double kappa_quadratic(std::span<const int> labels, std::span<const int> predictions, int classes = 4);

/// One-vs-rest AUROC from midranks, macro-averaged over classes that have both
/// positives and negatives. Skipped classes are reported in `warnings`.
double auroc_ovr(std::span<const int> labels, const Tensor& probabilities, std::vector<std::string>* warnings = nullptr);

/// Binary AUROC of `scores` for positives marked true.
double auroc_binary(std::span<const bool> positive, std::span<const double> scores);

struct ReliabilityBin {
  double lower = 0.0, upper = 0.0;
  int count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct Calibration {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

/// Bin index on the equal-width partition (0,1/M], ..., ((M-1)/M,1]; a
/// confidence of exactly 0 goes to the first bin.
int reliability_bin(double confidence, int bins);

/// Confidence is the top class probability, prediction its argmax.
Calibration expected_calibration_error(std::span<const int> labels, const Tensor& probabilities, int bins = 10);

/// ECE from a bin table: sum of count/N * |accuracy - confidence|.
double ece_from_bins(std::span<const ReliabilityBin> bins);

double brier_score(std::span<const int> labels, const Tensor& probabilities);

std::vector<int> argmax_rows(const Tensor& probabilities);

struct EvalReport {
  int n = 0;
  double accuracy = 0.0, f1_macro = 0.0, auroc_macro = 0.0, kappa_qw = 0.0, ece = 0.0, brier = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<ReliabilityBin> reliability;
  std::vector<std::string> warnings;
};

EvalReport evaluate(std::span<const int> labels, const Tensor& probabilities, int bins = 10);

/// "key = value" lines, full double precision.
std::string format_report(const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);
void write_reliability_csv(const std::filesystem::path& path, std::span<const ReliabilityBin> bins);
std::vector<ReliabilityBin> read_reliability_csv(const std::filesystem::path& path);

struct PredictionRecord {
  std::string id;
  int label = 0;
  std::array<double, 4> probabilities{};
};

/// Whitespace-separated "id label p0 p1 p2 p3" with a '#' header line.
void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace hamm
