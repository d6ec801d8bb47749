#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hamm/cli.hpp"
#include "hamm/config.hpp"
#include "hamm/errors.hpp"
#include "hamm/metrics.hpp"

using namespace hamm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("hamm_test_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string operator()(const std::string& rel) const { return (root / rel).string(); }
};

const std::vector<std::string> kSmall = {
    "--set", "encoder.image_size=32", "--set", "mae.patch_size=8",     "--set", "mae.decoder_width=8",
    "--set", "train.hidden=16",       "--set", "train.pretrain_epochs=1", "--set", "train.max_epochs=2",
    "--set", "train.lr_pretrain=1e-3", "--set", "train.lr_finetune=1e-3"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

}  // namespace

TEST_CASE("config files: sections, overrides, echo and rejection") {
  RunConfig c;
  c.apply_text("# comment\n[train]\nlr_finetune = 0.5  ; trailing\n[encoder]\nprofile = full\nimage_size = 64\n");
  CHECK(c.train.lr_finetune == 0.5);
  CHECK(c.encoder.widths == std::array<int, 4>{256, 512, 1024, 2048});
  CHECK(c.encoder.image_size == 64);
  c.set("train.modalities", "vf, fundus");
  CHECK(c.train.modalities == std::vector<int>{kFundus, kVf});
  c.set("mcga.stages", "4");
  CHECK(c.encoder.mcga_stages == std::array<bool, 4>{false, false, false, true});

  RunConfig back;
  back.apply_text(c.to_text());
  CHECK(back.to_text() == c.to_text());

  RunConfig d;
  CHECK_THROWS_AS(d.apply_text("[train]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(d.apply_text("[nosuch]\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(d.apply_text("lr_finetune = 1\n"), ConfigError);
  CHECK_THROWS_AS(d.set("train.patience", "ten"), ConfigError);
  CHECK_THROWS_AS(d.set("train.freeze_mcga", "maybe"), ConfigError);
  CHECK_THROWS_AS(d.set("train.modalities", "fundus,xray"), ConfigError);
  d.set("split.ratios", "0.5,0.2,0.2");
  CHECK_THROWS_AS(d.validate(), ConfigError);
  RunConfig e;
  e.set("encoder.image_size", "48");
  CHECK_THROWS_AS(e.validate(), ConfigError);
  CHECK(RunConfig::keys().size() > 40);
}

TEST_CASE("synth and split commands") {
  Workspace ws("synth");
  auto r = cli({"synth", "--out", ws("a"), "--n", "50", "--size", "32", "--seed", "4"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("wrote 200 samples") != std::string::npos);
  REQUIRE(cli({"synth", "--out", ws("b"), "--n", "50", "--size", "32", "--seed", "4"}).code == 0);
  CHECK(slurp(ws("a/manifest.txt")) == slurp(ws("b/manifest.txt")));
  for (const auto& entry : fs::directory_iterator(ws("a")))
    CHECK(slurp(entry.path()) == slurp(fs::path(ws("b")) / entry.path().filename()));

  REQUIRE(cli({"split", "--data", ws("a")}).code == 0);
  const std::string first = slurp(ws("a/split.txt"));
  CHECK(first.rfind("ratios 0.6 0.2 0.2\n", 0) == 0);
  REQUIRE(cli({"split", "--data", ws("a")}).code == 0);
  CHECK(slurp(ws("a/split.txt")) == first);
  const auto m = read_split_manifest(ws("a/split.txt"));
  CHECK(m.train.size() == 120);
  CHECK(m.val.size() == 40);
  CHECK(m.test.size() == 40);
}

TEST_CASE("exit codes") {
  Workspace ws("codes");
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"nosuch"}).code == kExitConfig);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"synth", "--out", ws("d"), "--set", "train.nosuch=1"}).code == kExitConfig);
  CHECK(cli({"synth", "--out", ws("d"), "--config", ws("missing.ini")}).code == kExitConfig);
  CHECK(cli({"split", "--data", ws("nothing")}).code == kExitData);

  REQUIRE(cli({"synth", "--out", ws("d"), "--n", "6", "--size", "32"}).code == 0);
  REQUIRE(cli({"split", "--data", ws("d")}).code == 0);
  std::ofstream(ws("junk.ckpt")) << "junk";
  CHECK(cli(with_small({"eval", "--data", ws("d"), "--out", ws("e"), "--checkpoint", ws("junk.ckpt")})).code ==
        kExitCheckpoint);
  // Image size mismatch between config and data.
  CHECK(cli({"pretrain", "--data", ws("d"), "--out", ws("p")}).code == kExitConfig);
}

TEST_CASE("pretrain, finetune, eval, resume and output root") {
  Workspace ws("pipeline");
  REQUIRE(cli({"synth", "--out", ws("d"), "--n", "75", "--size", "32"}).code == 0);
  REQUIRE(cli({"split", "--data", ws("d"), "--set", "split.ratios=0.1,0.1,0.8"}).code == 0);
  REQUIRE(read_split_manifest(ws("d/split.txt")).test.size() == 240);

  auto r = cli(with_small({"pretrain", "--data", ws("d"), "--out", ws("run"), "--deterministic"}));
  REQUIRE(r.code == 0);
  CHECK(slurp(ws("run/pretrain_loss.txt")).find("# epoch loss\n1 ") == 0);

  auto more = with_small({"pretrain", "--data", ws("d"), "--out", ws("run"), "--resume"});
  more.insert(more.end(), {"--set", "train.pretrain_epochs=2"});
  r = cli(more);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("resumed") != std::string::npos);
  CHECK(r.out.find("pretrain epoch 2") != std::string::npos);
  CHECK(r.out.find("pretrain epoch 1 ") == std::string::npos);

  r = cli(with_small({"finetune", "--data", ws("d"), "--out", ws("run"), "--pretrained", ws("run/pretrain.ckpt")}));
  REQUIRE(r.code == 0);
  const std::string log = slurp(ws("run/finetune_log.txt"));
  CHECK(log.find("# epoch split loss accuracy\n1 train ") == 0);
  CHECK(log.find("\n1 val ") != std::string::npos);

  // A pretraining checkpoint is not accepted for evaluation.
  CHECK(cli(with_small({"eval", "--data", ws("d"), "--out", ws("ev"), "--checkpoint", ws("run/pretrain.ckpt")})).code ==
        kExitCheckpoint);

  r = cli(with_small({"eval", "--data", ws("d"), "--out", ws("ev"), "--checkpoint", ws("run/finetune.ckpt")}));
  REQUIRE(r.code == 0);
  const std::string report = slurp(ws("ev/report.txt"));
  CHECK(report.find("n = 240\n") != std::string::npos);
  const auto bins = read_reliability_csv(ws("ev/reliability.csv"));
  int total = 0;
  for (const auto& b : bins) total += b.count;
  CHECK(total == 240);
  CHECK(read_predictions(ws("ev/predictions.txt")).size() == 240);

  r = cli(with_small({"eval", "--data", ws("d"), "--out", ws("ev_vf"), "--checkpoint", ws("run/finetune.ckpt"),
                      "--modalities", "vf"}));
  REQUIRE(r.code == 0);
  CHECK(slurp(ws("ev_vf/report.txt")).find("modalities = vf\n") != std::string::npos);

  r = cli(with_small({"eval", "--data", ws("d"), "--out", ws("ev_miss"), "--checkpoint", ws("run/finetune.ckpt"),
                      "--missing-eval"}));
  REQUIRE(r.code == 0);
  const std::string miss = slurp(ws("ev_miss/report.txt"));
  CHECK(miss.find("n = 480\n") != std::string::npos);
  CHECK(miss.find("composition.full = 240\n") != std::string::npos);
  CHECK(miss.find("composition.one_missing = 120\n") != std::string::npos);
  CHECK(miss.find("composition.two_missing = 120\n") != std::string::npos);
  CHECK(miss.find("composition.no_oct = 40\n") != std::string::npos);

  // Relative paths resolve against HAMM_OUTPUT_ROOT.
  setenv("HAMM_OUTPUT_ROOT", ws.root.c_str(), 1);
  r = cli(with_small({"eval", "--data", "d", "--out", "rel", "--checkpoint", "run/finetune.ckpt"}));
  unsetenv("HAMM_OUTPUT_ROOT");
  REQUIRE(r.code == 0);
  CHECK(slurp(ws("rel/report.txt")) == report);
}

TEST_CASE("multi-seed trials aggregate per-seed reports") {
  Workspace ws("trials");
  REQUIRE(cli({"synth", "--out", ws("d"), "--n", "5", "--size", "32"}).code == 0);
  REQUIRE(cli({"split", "--data", ws("d")}).code == 0);
  auto args = with_small({"trials", "--data", ws("d"), "--out", ws("t"), "--seed", "3"});
  args.insert(args.end(), {"--set", "train.n_seeds=2", "--set", "train.max_epochs=1"});
  REQUIRE(cli(args).code == 0);
  CHECK(fs::exists(ws("t/seed_3/report.txt")));
  CHECK(fs::exists(ws("t/seed_4/report.txt")));
  CHECK(slurp(ws("t/summary.txt")).find("runs = 2\naccuracy = ") == 0);
}

TEST_CASE("mask-ratio sweep writes one report per ratio") {
  Workspace ws("sweep");
  REQUIRE(cli({"synth", "--out", ws("d"), "--n", "5", "--size", "32"}).code == 0);
  REQUIRE(cli({"split", "--data", ws("d")}).code == 0);
  auto args = with_small({"sweep", "--data", ws("d"), "--out", ws("sw")});
  args.insert(args.end(), {"--set", "train.max_epochs=1", "--set", "train.batch_pretrain=16"});
  const auto r = cli(args);
  REQUIRE(r.code == 0);
  int reports = 0;
  for (const auto& entry : fs::directory_iterator(ws("sw")))
    if (fs::exists(entry.path() / "report.txt")) ++reports;
  CHECK(reports == 9);
  const std::string table = slurp(ws("sw/sweep.csv"));
  CHECK(std::count(table.begin(), table.end(), '\n') == 10);
  CHECK(table.find("\n0.7,") != std::string::npos);
}
