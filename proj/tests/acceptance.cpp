#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hamm/cli.hpp"
#include "hamm/encoder.hpp"
#include "hamm/mae.hpp"
#include "hamm/mcga.hpp"
#include "hamm/metrics.hpp"
#include "hamm/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hamm;
using namespace hamm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 ------------------------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(2024);
  const char* names[] = {"accuracy", "f1", "auroc", "kappa", "ece", "brier"};
  double worst[6] = {};
  for (int trial = 0; trial < 200; ++trial) {
    const OracleSet s = random_oracle_set(rng, trial);
    const auto pred = oracle_predictions(s);
    const EvalReport r = evaluate(s.labels, to_tensor(s), 10);
    const double errs[6] = {std::abs(r.accuracy - oracle_accuracy(s.labels, pred)),
                            std::abs(r.f1_macro - oracle_f1_macro(s.labels, pred)),
                            std::abs(r.auroc_macro - oracle_auroc_macro(s)),
                            std::abs(r.kappa_qw - oracle_kappa(s.labels, pred)),
                            std::abs(r.ece - oracle_ece(s, 10)),
                            std::abs(r.brier - oracle_brier(s))};
    for (int k = 0; k < 6; ++k) worst[k] = std::max(worst[k], errs[k]);
  }
  Outcome o{true, "200 sets, max abs error"};
  for (int k = 0; k < 6; ++k) {
    o.pass = o.pass && worst[k] <= 1e-9;
    o.detail += fmt(" %s %.1e", names[k], worst[k]);
  }
  return o;
}

// 2 ------------------------------------------------------------------------

Outcome mcga_gradient() {
  McgaConfig config;
  config.channels = 4;
  config.heads = 2;
  Rng rng(31);
  Mcga m(config, rng);
  for (Tensor* t : {&m.embed_w.value, &m.embed_b.value, &m.gate_w.value, &m.gate_b.value, &m.projection.value,
                    &m.attention.value, &m.relations.value, &m.final_w.value, &m.final_b.value})
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = rng.uniform(-1.0, 1.0);
  m.gem_p.value[0] = 2.5;
  const std::vector<int> mods{0, 1, 2};
  std::vector<Tensor> maps, probes;
  for (int a = 0; a < 3; ++a) maps.push_back(random_tensor({2, 4, 3, 3}, rng, 0.1, 2.0));
  for (int a = 0; a < 3; ++a) probes.push_back(random_tensor(maps[a].shape(), rng));
  auto loss = [&] {
    const auto out = m.forward(mods, maps);
    double s = 0;
    for (int a = 0; a < 3; ++a) s += dot(out[a], probes[a]);
    return s;
  };
  loss();
  ParamList params;
  m.collect("mcga", params);
  zero_grads(params);
  const auto gx = m.backward(probes);
  std::vector<Tensor> analytic;
  for (const auto& p : params) analytic.push_back(p.param->grad);
  GradCheck r;
  for (std::size_t i = 0; i < params.size(); ++i)
    check_tensor(r, params[i].name, params[i].param->value, analytic[i], loss, 1e-4);
  for (int a = 0; a < 3; ++a) check_tensor(r, "input" + std::to_string(a), maps[a], gx[a], loss, 1e-4);
  return {r.max_error <= 1e-3, fmt("%d entries, max relative error %.2e (%s)", r.checked, r.max_error, r.worst.c_str())};
}

// 3 ------------------------------------------------------------------------

Outcome masking_contract() {
  Rng rng(3);
  bool ok = true;
  std::string counts;
  long checked_pixels = 0;
  for (int t = 1; t <= 9; ++t) {
    const double ratio = t / 10.0;
    const int expect = static_cast<int>(std::lround(ratio * 49));
    const Tensor mask = make_mask(224, 32, ratio, rng);
    int masked = 0;
    for (int py = 0; py < 7; ++py)
      for (int px = 0; px < 7; ++px) {
        int zeros = 0;
        for (int y = py * 32; y < (py + 1) * 32; ++y)
          for (int x = px * 32; x < (px + 1) * 32; ++x) zeros += mask[y * 224 + x] == 0.0;
        ok = ok && (zeros == 0 || zeros == 32 * 32);
        masked += zeros == 32 * 32;
      }
    ok = ok && masked == expect && masked_patch_count(224, 32, ratio) == expect;
    counts += fmt("%s%d", t == 1 ? "" : ",", masked);

    Tensor masks({1, 1, 224, 224});
    for (std::size_t i = 0; i < mask.size(); ++i) masks[i] = mask[i];
    const Tensor target = random_tensor({1, 3, 224, 224}, rng), pred = random_tensor({1, 3, 224, 224}, rng);
    const Tensor ts[1] = {target}, ps[1] = {pred}, ms[1] = {masks};
    const MaskedLoss l = masked_mse(ts, ps, ms);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 224; ++y)
        for (int x = 0; x < 224; ++x)
          if (masks.at(0, 0, y, x) != 0.0) {
            ok = ok && l.grads[0].at(0, c, y, x) == 0.0;
            ++checked_pixels;
          }
  }
  return {ok, "masked patches " + counts + fmt("; %ld visible pixel gradients all zero", checked_pixels)};
}

// 4 ------------------------------------------------------------------------

Outcome shape_contract() {
  bool ok = true;
  std::string detail;
  for (const bool full : {false, true}) {
    const EncoderConfig cfg = full ? EncoderConfig::full() : EncoderConfig::toy();
    Rng rng(4);
    MaskedAutoencoder mae(cfg, full ? 256 : 32, rng);
    ModalityInputs in;
    for (auto& t : in) t = random_tensor({1, 3, 224, 224}, rng);
    const auto rec = mae.forward(in);
    const int sizes[4] = {56, 28, 14, 7};
    for (int m = 0; m < 3; ++m) {
      for (int s = 0; s < 4; ++s) {
        const Shape& sh = mae.last_pyramid().at(m, s).shape();
        ok = ok && sh[2] == sizes[s] && sh[3] == sizes[s] && sh[1] == cfg.widths[s];
      }
      ok = ok && mae.last_decoded(m).shape()[2] == 112 && mae.last_decoded(m).shape()[3] == 112;
      ok = ok && rec[m].shape() == Shape{1, 3, 224, 224};
    }
    const auto& p = mae.last_pyramid();
    detail += fmt("%s%s: %d/%d/%d/%d, D1 %d, reconstruction %d", full ? "; " : "", full ? "full" : "toy",
                  p.at(0, 0).shape()[2], p.at(0, 1).shape()[2], p.at(0, 2).shape()[2], p.at(0, 3).shape()[2],
                  mae.last_decoded(0).shape()[2], rec[0].shape()[2]);
  }
  return {ok, detail};
}

// 5, 6, 7 ----------------------------------------------------------------

struct Experiment {
  static constexpr int kSeeds = 3;
  double pre[kSeeds] = {}, scratch[kSeeds] = {}, no_mcga[kSeeds] = {};
  double tri[kSeeds] = {}, single[3][kSeeds] = {};
  double with_missing[kSeeds] = {}, without_missing[kSeeds] = {};
  int composition[3] = {};
  int eval_n = 0;
  double efficacy_seconds = 0.0, total_seconds = 0.0;
};

double mean(const double* v, int n) { return std::accumulate(v, v + n, 0.0) / n; }

double best_val_accuracy(const FinetuneResult& r) {
  for (const auto& e : r.epochs)
    if (e.epoch == r.best_epoch) return e.val_acc;
  return 0.0;
}

double accuracy_on(Finetuner& ft, std::span<const MultimodalSample> samples, const std::vector<int>& modalities) {
  const Prediction p = predict(ft.model(), samples, modalities, 32);
  const auto pred = argmax_rows(p.probabilities);
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == p.labels[i];
  return static_cast<double>(hit) / pred.size();
}

Experiment run_experiment() {
  Experiment x;
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.artifact_probability = 0.5;
  sc.discordance = 0.5;
  const auto data = generate_synthetic(160, 32, 7, sc);
  const auto split = stratified_split(data, {0.25, 0.375, 0.375}, 7);
  const auto train = select(data, split.train), val = select(data, split.val), test = select(data, split.test);
  const MissingEvalSet mixed = build_missing_eval_set(test, {}, 11);
  x.composition[0] = mixed.full;
  x.composition[1] = mixed.one_missing;
  x.composition[2] = mixed.two_missing;
  x.eval_n = static_cast<int>(mixed.samples.size());
  std::printf("  data: train %zu, val %zu, test %zu, mixed eval %d\n", train.size(), val.size(), test.size(),
              x.eval_n);

  for (int seed = 0; seed < Experiment::kSeeds; ++seed) {
    TrainConfig tc;
    tc.seed = seed;
    tc.lr_pretrain = 1e-3;
    tc.lr_finetune = 3e-4;
    tc.pretrain_epochs = 10;
    tc.patch_size = 8;
    tc.decoder_width = 32;
    tc.hidden = 64;
    tc.max_epochs = 30;
    tc.patience = 8;
    for (const bool mcga : {true, false}) {
      EncoderConfig ec = EncoderConfig::toy();
      ec.image_size = 32;
      ec.use_mcga = mcga;
      auto t_stage = std::chrono::steady_clock::now();
      Pretrainer pt(ec, tc);
      for (int e = 0; e < tc.pretrain_epochs; ++e) pt.run_epoch(train);
      const Checkpoint ck = pt.checkpoint("");

      Finetuner pre(ec, tc);
      pre.load_pretrained(ck);
      const double pre_acc = best_val_accuracy(pre.run(train, val));
      if (!mcga) {
        x.no_mcga[seed] = pre_acc;
        x.efficacy_seconds += seconds_since(t_stage);
        std::printf("  seed %d: -MCGA pretrained val %.4f\n", seed, pre_acc);
        continue;
      }
      x.pre[seed] = pre_acc;
      Finetuner scratch(ec, tc);
      x.scratch[seed] = best_val_accuracy(scratch.run(train, val));
      x.efficacy_seconds += seconds_since(t_stage);
      std::printf("  seed %d: +MCGA pretrained val %.4f, scratch val %.4f\n", seed, x.pre[seed], x.scratch[seed]);

      x.tri[seed] = accuracy_on(pre, test, tc.modalities);
      x.without_missing[seed] = accuracy_on(pre, mixed.samples, tc.modalities);
      for (int m = 0; m < 3; ++m) {
        TrainConfig one = tc;
        one.modalities = {m};
        Finetuner ft(ec, one);
        ft.load_pretrained(ck);
        ft.run(train, val);
        x.single[m][seed] = accuracy_on(ft, test, one.modalities);
      }
      TrainConfig missing = tc;
      missing.missingness = MissingnessConfig{};
      Finetuner robust(ec, missing);
      robust.load_pretrained(ck);
      robust.run(train, val);
      x.with_missing[seed] = accuracy_on(robust, mixed.samples, tc.modalities);
      std::printf("  seed %d: test tri %.4f, fundus %.4f, oct %.4f, vf %.4f; mixed eval with %.4f, without %.4f\n",
                  seed, x.tri[seed], x.single[0][seed], x.single[1][seed], x.single[2][seed], x.with_missing[seed],
                  x.without_missing[seed]);
    }
    std::fflush(stdout);
  }
  x.total_seconds = seconds_since(t0);
  return x;
}

Outcome pretraining_efficacy(const Experiment& x) {
  constexpr int n = Experiment::kSeeds;
  const double pre = mean(x.pre, n), scratch = mean(x.scratch, n), no_mcga = mean(x.no_mcga, n);
  const bool ok = pre - scratch > 0 && pre - no_mcga > 0 && x.efficacy_seconds <= 1800;
  return {ok, fmt("val acc pretrained %.4f vs scratch %.4f (margin %+.4f); +MCGA %.4f vs -MCGA %.4f (margin %+.4f); "
                  "%.0f s",
                  pre, scratch, pre - scratch, pre, no_mcga, pre - no_mcga, x.efficacy_seconds)};
}

Outcome modality_complementarity(const Experiment& x) {
  constexpr int n = Experiment::kSeeds;
  const double tri = mean(x.tri, n);
  const double single[3] = {mean(x.single[0], n), mean(x.single[1], n), mean(x.single[2], n)};
  const double best = *std::max_element(single, single + 3);
  return {tri >= best,
          fmt("test acc tri-modal %.4f; fundus %.4f, oct %.4f, vf %.4f", tri, single[0], single[1], single[2])};
}

Outcome missing_protocol(const Experiment& x) {
  constexpr int n = Experiment::kSeeds;
  const double with = mean(x.with_missing, n), without = mean(x.without_missing, n);
  const bool shape = x.composition[0] == 240 && x.composition[1] == 120 && x.composition[2] == 120 && x.eval_n == 480;
  return {shape && with > without, fmt("composition %d/%d/%d of %d; mixed-set acc with missingness %.4f vs without %.4f",
                                       x.composition[0], x.composition[1], x.composition[2], x.eval_n, with, without)};
}

// 8, 9 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::printf("  hamm %s failed (%d): %s", args[0].c_str(), code, err.str().c_str());
  return code;
}

bool run_pipeline(const fs::path& root) {
  fs::remove_all(root);
  const std::vector<std::string> common = {"--seed", "5", "--deterministic", "--set", "encoder.image_size=32",
                                           "--set", "mae.patch_size=8", "--set", "mae.decoder_width=16",
                                           "--set", "train.hidden=32", "--set", "train.pretrain_epochs=2",
                                           "--set", "train.max_epochs=5", "--set", "train.patience=5",
                                           "--set", "train.lr_pretrain=1e-3", "--set", "train.lr_finetune=3e-4"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return a;
  };
  const std::string d = (root / "data").string(), run = (root / "run").string();
  return cli({"synth", "--out", d, "--n", "20", "--size", "32", "--seed", "5"}) == 0 &&
         cli(with({"split", "--data", d})) == 0 && cli(with({"pretrain", "--data", d, "--out", run})) == 0 &&
         cli(with({"finetune", "--data", d, "--out", run, "--pretrained", run + "/pretrain.ckpt"})) == 0 &&
         cli(with({"eval", "--data", d, "--out", (root / "eval").string(), "--checkpoint", run + "/finetune.ckpt"})) ==
             0;
}

const fs::path kWork = fs::temp_directory_path() / "hamm_acceptance";

Outcome determinism() {
  const fs::path a = kWork / "a", b = kWork / "b";
  if (!run_pipeline(a) || !run_pipeline(b)) return {false, "pipeline failed"};
  const char* files[] = {"eval/report.txt", "eval/predictions.txt", "eval/reliability.csv", "run/pretrain_loss.txt",
                         "run/finetune_log.txt", "run/finetune.ckpt"};
  std::string detail;
  bool ok = true;
  for (const char* f : files) {
    const std::string x = slurp(a / f), y = slurp(b / f);
    const bool same = !x.empty() && x == y;
    ok = ok && same;
    detail += fmt("%s%s %s", detail.empty() ? "" : ", ", f, same ? "identical" : "DIFFERENT");
  }
  return {ok, detail};
}

double report_value(const std::string& report, const std::string& key) {
  std::istringstream in(report);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + " = ", 0) == 0) return std::stod(line.substr(key.size() + 3));
  return NAN;
}

Outcome calibration_plumbing() {
  const fs::path eval = kWork / "a" / "eval";
  const std::string report = slurp(eval / "report.txt");
  if (report.empty()) return {false, "no report from the determinism pipeline"};
  const auto n = static_cast<int>(report_value(report, "n"));
  std::ifstream csv(eval / "reliability.csv");
  std::string line;
  std::getline(csv, line);
  std::vector<std::array<double, 6>> rows;
  while (std::getline(csv, line)) {
    std::array<double, 6> r{};
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream s(line);
    for (double& v : r) s >> v;
    rows.push_back(r);
  }
  int total = 0;
  for (const auto& r : rows) total += static_cast<int>(r[3]);
  double ece = 0.0;
  for (const auto& r : rows) ece += r[3] / total * std::abs(r[5] - r[4]);
  const double reported = report_value(report, "ece");
  const double gap = std::abs(ece - reported);
  return {total == n && n > 0 && gap <= 1e-12,
          fmt("%zu bins, counts sum %d of n = %d; ECE from CSV %.17g vs report %.17g (gap %.1e)", rows.size(), total, n,
              ece, reported, gap)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int k) { return only.empty() || only.contains(k); };
  std::setvbuf(stdout, nullptr, _IOLBF, 0);

  std::vector<std::pair<int, Outcome>> results;
  const char* titles[] = {"",
                          "metric oracle equivalence",
                          "MCGA gradient check",
                          "masking contract",
                          "shape contract",
                          "pretraining efficacy",
                          "modality complementarity",
                          "missing-modality protocol",
                          "determinism",
                          "calibration plumbing"};
  auto record = [&](int k, const std::function<Outcome()>& fn) {
    if (!wanted(k)) return;
    std::printf("running %d: %s\n", k, titles[k]);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    o.detail += fmt(" [%.1f s]", seconds_since(t0));
    results.emplace_back(k, o);
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", k, titles[k], o.detail.c_str());
  };

  record(1, metric_oracles);
  record(2, mcga_gradient);
  record(3, masking_contract);
  record(4, shape_contract);
  if (wanted(5) || wanted(6) || wanted(7)) {
    std::printf("running shared training experiment for 5, 6 and 7\n");
    const Experiment x = run_experiment();
    std::printf("experiment finished in %.0f s\n", x.total_seconds);
    record(5, [&] { return pretraining_efficacy(x); });
    record(6, [&] { return modality_complementarity(x); });
    record(7, [&] { return missing_protocol(x); });
  }
  record(8, determinism);
  record(9, calibration_plumbing);
  fs::remove_all(kWork);

  std::printf("\nsummary\n");
  int failed = 0;
  for (const auto& [k, o] : results) {
    std::printf("%s %d %s\n", o.pass ? "PASS" : "FAIL", k, titles[k]);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
