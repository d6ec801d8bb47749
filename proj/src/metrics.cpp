#include "hamm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hamm/errors.hpp"

namespace hamm {
namespace {

void check_inputs(std::span<const int> labels, std::span<const int> predictions, int classes) {
  if (labels.empty()) throw std::invalid_argument("metrics: empty input");
  if (labels.size() != predictions.size()) throw std::invalid_argument("metrics: label/prediction length mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes || predictions[i] < 0 || predictions[i] >= classes)
      throw std::invalid_argument("metrics: class index out of range");
}

void check_probabilities(std::span<const int> labels, const Tensor& p) {
  if (labels.empty()) throw std::invalid_argument("metrics: empty input");
  if (p.rank() != 2 || p.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("metrics: probabilities must be [N,K] with one row per label");
  for (int l : labels)
    if (l < 0 || l >= p.dim(1)) throw std::invalid_argument("metrics: label out of range");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ConfusionMetrics confusion_metrics(std::span<const int> labels, std::span<const int> predictions, int classes) {
  check_inputs(labels, predictions, classes);
  std::vector<int> tp(classes, 0), fp(classes, 0), fn(classes, 0), support(classes, 0), predicted(classes, 0);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++support[labels[i]];
    ++predicted[predictions[i]];
    if (labels[i] == predictions[i]) {
      ++correct;
      ++tp[labels[i]];
    } else {
      ++fp[predictions[i]];
      ++fn[labels[i]];
    }
  }
  ConfusionMetrics out;
  out.accuracy = static_cast<double>(correct) / labels.size();
  out.per_class_accuracy.assign(classes, 0.0);
  double f1_sum = 0.0;
  int seen = 0;
  for (int c = 0; c < classes; ++c) {
    if (support[c] > 0) out.per_class_accuracy[c] = static_cast<double>(tp[c]) / support[c];
    if (support[c] == 0 && predicted[c] == 0) continue;
    ++seen;
    const int denom = 2 * tp[c] + fp[c] + fn[c];
    f1_sum += denom > 0 ? 2.0 * tp[c] / denom : 0.0;
  }
  out.f1_macro = f1_sum / seen;
  return out;
}

double kappa_quadratic(std::span<const int> labels, std::span<const int> predictions, int classes) {
  check_inputs(labels, predictions, classes);
  if (classes < 2) throw std::invalid_argument("kappa: need at least two classes");
  const double n = static_cast<double>(labels.size());
  std::vector<double> observed(static_cast<std::size_t>(classes) * classes, 0.0), rows(classes, 0.0), cols(classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    observed[labels[i] * classes + predictions[i]] += 1.0 / n;
    rows[labels[i]] += 1.0 / n;
    cols[predictions[i]] += 1.0 / n;
  }
  double num = 0.0, den = 0.0;
  const double scale = static_cast<double>(classes - 1) * (classes - 1);
  for (int i = 0; i < classes; ++i)
    for (int j = 0; j < classes; ++j) {
      const double w = (i - j) * (i - j) / scale;
      num += w * observed[i * classes + j];
      den += w * rows[i] * cols[j];
    }
  const auto single = [](std::span<const int> v) {
    return std::all_of(v.begin(), v.end(), [&](int x) { return x == v.front(); });
  };
  if (den == 0.0 || (single(labels) && single(predictions))) {
    if (std::equal(labels.begin(), labels.end(), predictions.begin())) return 1.0;
    throw NumericError("kappa: each rater uses a single class and they disagree");
  }
  return 1.0 - num / den;
}

double auroc_binary(std::span<const bool> positive, std::span<const double> scores) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      ++pos;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double auroc_ovr(std::span<const int> labels, const Tensor& probabilities, std::vector<std::string>* warnings) {
  check_probabilities(labels, probabilities);
  const int N = probabilities.dim(0), K = probabilities.dim(1);
  double sum = 0.0;
  int used = 0;
  std::unique_ptr<bool[]> positive(new bool[N]);
  std::vector<double> scores(N);
  for (int c = 0; c < K; ++c) {
    for (int i = 0; i < N; ++i) {
      positive[i] = labels[i] == c;
      scores[i] = probabilities[static_cast<std::size_t>(i) * K + c];
    }
    const double auc = auroc_binary(std::span<const bool>(positive.get(), N), scores);
    if (std::isnan(auc)) {
      if (warnings) warnings->push_back("auroc: class " + std::to_string(c) + " lacks positives or negatives; excluded");
      continue;
    }
    sum += auc;
    ++used;
  }
  return used ? sum / used : std::numeric_limits<double>::quiet_NaN();
}

std::vector<int> argmax_rows(const Tensor& probabilities) {
  const int N = probabilities.dim(0), K = probabilities.dim(1);
  std::vector<int> out(N);
  for (int i = 0; i < N; ++i) {
    const double* row = probabilities.data() + static_cast<std::size_t>(i) * K;
    out[i] = static_cast<int>(std::max_element(row, row + K) - row);
  }
  return out;
}

int reliability_bin(double confidence, int bins) {
  int idx = static_cast<int>(std::ceil(confidence * bins)) - 1;
  idx = std::clamp(idx, 0, bins - 1);
  while (idx > 0 && confidence <= static_cast<double>(idx) / bins) --idx;
  while (idx < bins - 1 && confidence > static_cast<double>(idx + 1) / bins) ++idx;
  return idx;
}

Calibration expected_calibration_error(std::span<const int> labels, const Tensor& probabilities, int bins) {
  check_probabilities(labels, probabilities);
  if (bins < 1) throw std::invalid_argument("ece: need at least one bin");
  const int N = probabilities.dim(0), K = probabilities.dim(1);
  Calibration out;
  out.bins.resize(bins);
  std::vector<double> conf_sum(bins, 0.0), correct(bins, 0.0);
  for (int i = 0; i < N; ++i) {
    const double* row = probabilities.data() + static_cast<std::size_t>(i) * K;
    const int pred = static_cast<int>(std::max_element(row, row + K) - row);
    const int b = reliability_bin(row[pred], bins);
    ++out.bins[b].count;
    conf_sum[b] += row[pred];
    correct[b] += pred == labels[i];
  }
  for (int b = 0; b < bins; ++b) {
    ReliabilityBin& bin = out.bins[b];
    bin.lower = static_cast<double>(b) / bins;
    bin.upper = static_cast<double>(b + 1) / bins;
    if (bin.count) {
      bin.mean_confidence = conf_sum[b] / bin.count;
      bin.accuracy = correct[b] / bin.count;
    }
  }
  out.ece = ece_from_bins(out.bins);
  return out;
}

double ece_from_bins(std::span<const ReliabilityBin> bins) {
  double n = 0.0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) throw std::invalid_argument("ece: no samples in bins");
  double ece = 0.0;
  for (const auto& b : bins) ece += b.count / n * std::abs(b.accuracy - b.mean_confidence);
  return ece;
}

double brier_score(std::span<const int> labels, const Tensor& probabilities) {
  check_probabilities(labels, probabilities);
  const int N = probabilities.dim(0), K = probabilities.dim(1);
  double total = 0.0;
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < K; ++c) {
      const double d = probabilities[static_cast<std::size_t>(i) * K + c] - (labels[i] == c ? 1.0 : 0.0);
      total += d * d;
    }
  return total / N;
}

EvalReport evaluate(std::span<const int> labels, const Tensor& probabilities, int bins) {
  check_probabilities(labels, probabilities);
  const int K = probabilities.dim(1);
  const std::vector<int> pred = argmax_rows(probabilities);
  EvalReport r;
  r.n = static_cast<int>(labels.size());
  const ConfusionMetrics cm = confusion_metrics(labels, pred, K);
  r.accuracy = cm.accuracy;
  r.f1_macro = cm.f1_macro;
  r.per_class_accuracy = cm.per_class_accuracy;
  r.auroc_macro = auroc_ovr(labels, probabilities, &r.warnings);
  try {
    r.kappa_qw = kappa_quadratic(labels, pred, K);
  } catch (const NumericError& e) {
    r.kappa_qw = std::numeric_limits<double>::quiet_NaN();
    r.warnings.push_back(e.what());
  }
  Calibration cal = expected_calibration_error(labels, probabilities, bins);
  r.ece = cal.ece;
  r.reliability = std::move(cal.bins);
  r.brier = brier_score(labels, probabilities);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << "n = " << r.n << "\n";
  out << "accuracy = " << fmt(r.accuracy) << "\n";
  out << "f1_macro = " << fmt(r.f1_macro) << "\n";
  out << "auroc_macro = " << fmt(r.auroc_macro) << "\n";
  out << "kappa_qw = " << fmt(r.kappa_qw) << "\n";
  out << "ece = " << fmt(r.ece) << "\n";
  out << "brier = " << fmt(r.brier) << "\n";
  out << "per_class_accuracy =";
  for (double v : r.per_class_accuracy) out << " " << fmt(v);
  out << "\n";
  for (const auto& w : r.warnings) out << "warning = " << w << "\n";
  return out.str();
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << format_report(report);
}

void write_reliability_csv(const std::filesystem::path& path, std::span<const ReliabilityBin> bins) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "bin,lower,upper,count,mean_confidence,accuracy\n";
  for (std::size_t i = 0; i < bins.size(); ++i)
    f << i << "," << fmt(bins[i].lower) << "," << fmt(bins[i].upper) << "," << bins[i].count << ","
      << fmt(bins[i].mean_confidence) << "," << fmt(bins[i].accuracy) << "\n";
}

std::vector<ReliabilityBin> read_reliability_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  std::vector<ReliabilityBin> bins;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream in(line);
    int idx;
    ReliabilityBin b;
    if (!(in >> idx >> b.lower >> b.upper >> b.count >> b.mean_confidence >> b.accuracy))
      throw DataError(path.string() + ": malformed row");
    bins.push_back(b);
  }
  return bins;
}

void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "# id label p0 p1 p2 p3\n";
  for (const auto& r : records) {
    f << r.id << " " << r.label;
    for (double p : r.probabilities) f << " " << fmt(p);
    f << "\n";
  }
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream in(line);
    PredictionRecord r;
    if (!(in >> r.id >> r.label >> r.probabilities[0] >> r.probabilities[1] >> r.probabilities[2] >> r.probabilities[3]))
      throw DataError(path.string() + ": malformed prediction record");
    out.push_back(r);
  }
  return out;
}

}  // namespace hamm
