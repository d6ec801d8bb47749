#pragma once

// Brute-force metric definitions written without reference to the library.

#include <cmath>
#include <vector>

#include "hamm/rng.hpp"
#include "hamm/tensor.hpp"

namespace hamm::testing {

struct OracleSet {
  std::vector<int> labels;
  std::vector<std::vector<double>> probs;  // N rows of 4
};

inline int oracle_argmax(const std::vector<double>& row) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(row.size()); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

inline double oracle_accuracy(const std::vector<int>& y, const std::vector<int>& p) {
  int hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += y[i] == p[i];
  return static_cast<double>(hit) / y.size();
}

/// Precision and recall per class, then the harmonic mean; classes that
/// appear in neither list are left out of the average.
inline double oracle_f1_macro(const std::vector<int>& y, const std::vector<int>& p, int K = 4) {
  double total = 0;
  int used = 0;
  for (int c = 0; c < K; ++c) {
    int tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (p[i] == c) ++predicted;
      if (y[i] == c) ++actual;
      if (p[i] == c && y[i] == c) ++tp;
    }
    if (predicted == 0 && actual == 0) continue;
    const double precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
    const double recall = actual ? static_cast<double>(tp) / actual : 0.0;
    total += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    ++used;
  }
  return total / used;
}

inline std::vector<double> oracle_recall(const std::vector<int>& y, const std::vector<int>& p, int K = 4) {
  std::vector<double> out(K, 0.0);
  for (int c = 0; c < K; ++c) {
    int hit = 0, n = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) {
        ++n;
        hit += p[i] == c;
      }
    out[c] = n ? static_cast<double>(hit) / n : 0.0;
  }
  return out;
}

/// Observed and chance-expected 4×4 tables with explicit weights.
inline double oracle_kappa(const std::vector<int>& y, const std::vector<int>& p, int K = 4) {
  std::vector<std::vector<double>> O(K, std::vector<double>(K, 0.0));
  std::vector<double> rows(K, 0.0), cols(K, 0.0);
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    O[y[i]][p[i]] += 1.0 / n;
    rows[y[i]] += 1.0 / n;
    cols[p[i]] += 1.0 / n;
  }
  double num = 0, den = 0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / ((K - 1) * (K - 1));
      num += w * O[i][j];
      den += w * rows[i] * cols[j];
    }
  return 1.0 - num / den;
}

/// Fraction of (positive, negative) pairs ordered correctly, ties count half.
inline double oracle_auc_pairs(const std::vector<bool>& pos, const std::vector<double>& score) {
  double good = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < pos.size(); ++j)
      if (pos[i] && !pos[j]) {
        ++pairs;
        if (score[i] > score[j])
          good += 1;
        else if (score[i] == score[j])
          good += 0.5;
      }
  return pairs ? good / pairs : NAN;
}

inline double oracle_auroc_macro(const OracleSet& s, int K = 4) {
  double total = 0;
  int used = 0;
  for (int c = 0; c < K; ++c) {
    std::vector<bool> pos;
    std::vector<double> score;
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      pos.push_back(s.labels[i] == c);
      score.push_back(s.probs[i][c]);
    }
    const double auc = oracle_auc_pairs(pos, score);
    if (std::isnan(auc)) continue;
    total += auc;
    ++used;
  }
  return total / used;
}

/// Bin m holds confidences in (m/M, (m+1)/M]; bin 0 also takes 0.
inline double oracle_ece(const OracleSet& s, int M) {
  const double n = static_cast<double>(s.labels.size());
  double ece = 0;
  for (int m = 0; m < M; ++m) {
    const double lo = static_cast<double>(m) / M, hi = static_cast<double>(m + 1) / M;
    double conf = 0, correct = 0;
    int count = 0;
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      const int k = oracle_argmax(s.probs[i]);
      const double c = s.probs[i][k];
      const bool inside = (c > lo && c <= hi) || (m == 0 && c == 0.0);
      if (!inside) continue;
      ++count;
      conf += c;
      correct += k == s.labels[i];
    }
    if (count) ece += count / n * std::abs(correct / count - conf / count);
  }
  return ece;
}

inline double oracle_brier(const OracleSet& s) {
  double total = 0;
  for (std::size_t i = 0; i < s.labels.size(); ++i)
    for (std::size_t k = 0; k < s.probs[i].size(); ++k) {
      const double d = s.probs[i][k] - (static_cast<int>(k) == s.labels[i] ? 1.0 : 0.0);
      total += d * d;
    }
  return total / s.labels.size();
}

/// Random labels and probability rows; every third set is quantized to
/// steps of 0.05 so that scores tie.
inline OracleSet random_oracle_set(Rng& rng, int trial) {
  OracleSet s;
  const int n = 20 + static_cast<int>(rng.index(181));
  for (int i = 0; i < n; ++i) {
    s.labels.push_back(static_cast<int>(rng.index(4)));
    std::vector<double> w(4);
    double sum = 0;
    for (double& v : w) {
      v = trial % 3 == 0 ? std::round(rng.uniform(0.0, 1.0) * 4.0) + 1.0 : std::pow(rng.uniform(), 2.0) + 1e-3;
      sum += v;
    }
    for (double& v : w) v /= sum;
    s.probs.push_back(w);
  }
  return s;
}

inline Tensor to_tensor(const OracleSet& s) {
  Tensor t({static_cast<int>(s.labels.size()), 4});
  for (std::size_t i = 0; i < s.labels.size(); ++i)
    for (int k = 0; k < 4; ++k) t[i * 4 + k] = s.probs[i][k];
  return t;
}

inline std::vector<int> oracle_predictions(const OracleSet& s) {
  std::vector<int> p;
  for (const auto& row : s.probs) p.push_back(oracle_argmax(row));
  return p;
}

}  // namespace hamm::testing
