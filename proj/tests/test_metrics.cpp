#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "hamm/errors.hpp"
#include "hamm/metrics.hpp"
#include "oracles.hpp"

using namespace hamm;
using namespace hamm::testing;

namespace {

Tensor rows(std::vector<std::vector<double>> r) {
  OracleSet s;
  s.probs = std::move(r);
  s.labels.assign(s.probs.size(), 0);
  return to_tensor(s);
}

}  // namespace

TEST_CASE("confusion metrics on the worked examples") {
  const std::vector<int> y{0, 0, 1, 1}, p{0, 1, 1, 1};
  const auto m = confusion_metrics(y, p);
  CHECK(m.accuracy == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.f1_macro == doctest::Approx((2.0 / 3.0 + 0.8) / 2).epsilon(1e-15));
  CHECK(m.f1_macro == doctest::Approx(0.7333).epsilon(1e-4));

  const std::vector<int> same{0, 1, 2, 3, 1};
  const auto perfect = confusion_metrics(same, same);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1_macro == 1.0);
  for (int c = 0; c < 4; ++c) CHECK(perfect.per_class_accuracy[c] == 1.0);

  const std::vector<int> balanced{0, 1, 2, 3, 0, 1, 2, 3}, constant(8, 2);
  CHECK(confusion_metrics(balanced, constant).accuracy == 0.25);
  CHECK_THROWS_AS(confusion_metrics(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("quadratic kappa") {
  const std::vector<int> y{0, 1, 2, 3}, rev{3, 2, 1, 0};
  CHECK(kappa_quadratic(y, y) == doctest::Approx(1.0));
  CHECK(kappa_quadratic(y, rev) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(kappa_quadratic(y, rev) == doctest::Approx(oracle_kappa(y, rev)).epsilon(1e-12));

  // Same marginals, errors one step away versus three steps away.
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
  const std::vector<int> near{1, 0, 0, 1, 3, 2, 2, 3};
  const std::vector<int> far{3, 0, 1, 1, 2, 2, 0, 3};
  CHECK(kappa_quadratic(labels, near) > kappa_quadratic(labels, far));

  const std::vector<int> ones(5, 1);
  CHECK(kappa_quadratic(ones, ones) == 1.0);
  const std::vector<int> twos(5, 2);
  CHECK_THROWS_AS(kappa_quadratic(ones, twos), NumericError);
}

TEST_CASE("auroc") {
  const bool pos[] = {false, false, true, true};
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  CHECK(auroc_binary(pos, s) == doctest::Approx(0.75).epsilon(1e-15));
  const std::vector<double> sep{0.1, 0.2, 0.8, 0.9}, inv{0.9, 0.8, 0.2, 0.1}, tied{0.5, 0.5, 0.5, 0.5};
  CHECK(auroc_binary(pos, sep) == 1.0);
  CHECK(auroc_binary(pos, inv) == 0.0);
  CHECK(auroc_binary(pos, tied) == 0.5);
  const bool none[] = {false, false};
  CHECK(std::isnan(auroc_binary(none, std::vector<double>{0.1, 0.2})));

  // Class 3 never occurs: excluded with a warning.
  const std::vector<int> y{0, 1, 2, 0};
  const Tensor p = rows({{0.7, 0.1, 0.1, 0.1}, {0.1, 0.7, 0.1, 0.1}, {0.1, 0.1, 0.7, 0.1}, {0.6, 0.2, 0.1, 0.1}});
  std::vector<std::string> warnings;
  CHECK(auroc_ovr(y, p, &warnings) == 1.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("ece and reliability bins") {
  const std::vector<int> y{0, 1};
  const Tensor p = rows({{0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3}, {0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3}});
  const auto cal = expected_calibration_error(y, p, 10);
  CHECK(cal.ece == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(cal.bins[8].count == 2);
  CHECK(cal.bins[8].accuracy == 0.5);

  const Tensor onehot = rows({{1, 0, 0, 0}, {0, 1, 0, 0}});
  CHECK(expected_calibration_error(y, onehot, 10).ece == 0.0);

  CHECK(reliability_bin(0.0, 10) == 0);
  CHECK(reliability_bin(0.1, 10) == 0);
  CHECK(reliability_bin(0.3, 10) == 2);
  CHECK(reliability_bin(0.30000000000000004, 10) == 3);
  CHECK(reliability_bin(1.0, 10) == 9);
  CHECK(reliability_bin(0.7, 1) == 0);

  // Order invariance.
  Rng rng(5);
  const OracleSet s = random_oracle_set(rng, 1);
  OracleSet r = s;
  std::reverse(r.labels.begin(), r.labels.end());
  std::reverse(r.probs.begin(), r.probs.end());
  CHECK(expected_calibration_error(s.labels, to_tensor(s), 10).ece ==
        doctest::Approx(expected_calibration_error(r.labels, to_tensor(r), 10).ece).epsilon(1e-14));
}

TEST_CASE("brier score") {
  const std::vector<int> y{0, 1};
  CHECK(brier_score(y, rows({{1, 0, 0, 0}, {0, 1, 0, 0}})) == 0.0);
  CHECK(brier_score(y, rows({{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}})) == doctest::Approx(0.75));
  CHECK(brier_score(y, rows({{0, 1, 0, 0}, {1, 0, 0, 0}})) == 2.0);
}

TEST_CASE("every metric agrees with the brute-force oracle on random sets") {
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const OracleSet s = random_oracle_set(rng, trial);
    const Tensor p = to_tensor(s);
    const auto pred = oracle_predictions(s);
    const EvalReport r = evaluate(s.labels, p, 10);
    const auto recall = oracle_recall(s.labels, pred);
    const double errs[] = {
        std::abs(r.accuracy - oracle_accuracy(s.labels, pred)),
        std::abs(r.f1_macro - oracle_f1_macro(s.labels, pred)),
        std::abs(r.auroc_macro - oracle_auroc_macro(s)),
        std::abs(r.kappa_qw - oracle_kappa(s.labels, pred)),
        std::abs(r.ece - oracle_ece(s, 10)),
        std::abs(r.brier - oracle_brier(s)),
        std::abs(r.per_class_accuracy[0] - recall[0]) + std::abs(r.per_class_accuracy[1] - recall[1]) +
            std::abs(r.per_class_accuracy[2] - recall[2]) + std::abs(r.per_class_accuracy[3] - recall[3]),
    };
    for (double e : errs) worst = std::max(worst, e);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("report ranges hold on random sets") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const OracleSet s = random_oracle_set(rng, trial);
    const EvalReport r = evaluate(s.labels, to_tensor(s), 15);
    CHECK(r.accuracy >= 0);
    CHECK(r.accuracy <= 1);
    CHECK(r.kappa_qw >= -1);
    CHECK(r.kappa_qw <= 1);
    CHECK(r.ece >= 0);
    CHECK(r.ece <= 1);
    CHECK(r.brier >= 0);
    CHECK(r.brier <= 2);
    int total = 0;
    for (const auto& b : r.reliability) total += b.count;
    CHECK(total == static_cast<int>(s.labels.size()));
  }
}

TEST_CASE("report files round-trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "hamm_test_metrics";
  fs::create_directories(dir);
  Rng rng(9);
  const OracleSet s = random_oracle_set(rng, 2);
  const EvalReport r = evaluate(s.labels, to_tensor(s), 10);
  write_reliability_csv(dir / "rel.csv", r.reliability);
  const auto bins = read_reliability_csv(dir / "rel.csv");
  REQUIRE(bins.size() == r.reliability.size());
  CHECK(std::abs(ece_from_bins(bins) - r.ece) <= 1e-12);

  std::vector<PredictionRecord> recs(s.labels.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].id = "s" + std::to_string(i);
    recs[i].label = s.labels[i];
    for (int k = 0; k < 4; ++k) recs[i].probabilities[k] = s.probs[i][k];
  }
  write_predictions(dir / "pred.txt", recs);
  const auto back = read_predictions(dir / "pred.txt");
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].id == recs[i].id);
    CHECK(back[i].label == recs[i].label);
    for (int k = 0; k < 4; ++k) CHECK(back[i].probabilities[k] == recs[i].probabilities[k]);
  }
  fs::remove_all(dir);
}
