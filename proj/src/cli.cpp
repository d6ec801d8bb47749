#include "hamm/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "hamm/checkpoint.hpp"
#include "hamm/config.hpp"
#include "hamm/errors.hpp"
#include "hamm/metrics.hpp"
#include "hamm/train.hpp"

namespace hamm {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

fs::path resolve(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("HAMM_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "Sectioned key = value config file");
  cmd->add_option("--set", c.sets, "Override, e.g. --set train.lr_finetune=1e-3 (repeatable)");
  cmd->add_option("--seed", c.seed, "Seed for data generation, splitting and training");
  cmd->add_flag("--deterministic", c.deterministic, "Pin the thread schedule for reproducible runs");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg;
  if (!c.config_file.empty()) cfg.apply_file(resolve(c.config_file));
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.deterministic) cfg.deterministic = true;
  cfg.validate();
  if (cfg.deterministic) omp_set_dynamic(0);
  return cfg;
}

struct SplitData {
  std::vector<MultimodalSample> train, val, test;
  int image_size = 0;
};

void check_size(const EncoderConfig& encoder, const SplitData& d) {
  if (d.image_size != encoder.image_size)
    throw ConfigError("encoder.image_size is " + std::to_string(encoder.image_size) + " but the data is " +
                      std::to_string(d.image_size) + " pixels");
}

SplitData load_splits(const fs::path& data_dir, const fs::path& split_file) {
  const auto pool = read_dataset(data_dir);
  const auto manifest = read_split_manifest(split_file);
  SplitData d{select(pool, manifest.train), select(pool, manifest.val), select(pool, manifest.test)};
  d.image_size = pool.empty() ? 0 : pool.front().image_size();
  return d;
}

const std::vector<MultimodalSample>& pick(const SplitData& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw ConfigError("unknown split '" + name + "' (train, val, test)");
}

void run_pretrain(const RunConfig& cfg, const SplitData& data, const fs::path& out_dir, bool resume, std::ostream& log) {
  check_size(cfg.encoder, data);
  ensure_dir(out_dir);
  const fs::path ckpt = out_dir / "pretrain.ckpt";
  Pretrainer trainer(cfg.encoder, cfg.train_config());
  if (resume && fs::exists(ckpt)) {
    trainer.restore(load_checkpoint(ckpt));
    log << "resumed " << ckpt.string() << " at epoch " << trainer.epochs_done() << "\n";
  }
  if (data.train.empty()) throw DataError("pretrain: the training split is empty");
  while (trainer.epochs_done() < cfg.train.pretrain_epochs) {
    const double loss = trainer.run_epoch(data.train);
    save_checkpoint(ckpt, trainer.checkpoint(cfg.to_text()));
    log << "pretrain epoch " << trainer.epochs_done() << " loss " << fmt(loss) << "\n";
  }
  auto f = open_out(out_dir / "pretrain_loss.txt");
  f << "# epoch loss\n";
  for (std::size_t e = 0; e < trainer.losses().size(); ++e) f << e + 1 << " " << fmt(trainer.losses()[e]) << "\n";
}

void run_finetune(const RunConfig& cfg, const SplitData& data, const fs::path& out_dir,
                  const std::optional<fs::path>& pretrained, std::ostream& log) {
  check_size(cfg.encoder, data);
  ensure_dir(out_dir);
  Finetuner trainer(cfg.encoder, cfg.train_config());
  if (pretrained) trainer.load_pretrained(load_checkpoint(*pretrained));
  if (data.train.empty() || data.val.empty()) throw DataError("finetune: the train and val splits must be non-empty");
  auto f = open_out(out_dir / "finetune_log.txt");
  f << "# epoch split loss accuracy\n";
  const auto result = trainer.run(data.train, data.val, [&](const EpochLog& e) {
    f << e.epoch << " train " << fmt(e.train_loss) << " " << fmt(e.train_acc) << "\n";
    f << e.epoch << " val " << fmt(e.val_loss) << " " << fmt(e.val_acc) << "\n";
    f.flush();
    log << "finetune epoch " << e.epoch << " train_loss " << fmt(e.train_loss) << " val_loss " << fmt(e.val_loss)
        << " val_acc " << fmt(e.val_acc) << " patterns " << e.patterns[0] << "/" << e.patterns[1] << "/"
        << e.patterns[2] << (e.improved ? " *" : "") << "\n";
  });
  save_checkpoint(out_dir / "finetune.ckpt", trainer.checkpoint(cfg.to_text()));
  log << "best epoch " << result.best_epoch << " val_loss " << fmt(result.best_val_loss)
      << (result.early_stopped ? " (early stop)" : "") << "\n";
}

std::vector<int> parse_modalities(const std::string& list) {
  RunConfig scratch;
  scratch.set("train.modalities", list);
  if (scratch.train.modalities.empty()) throw ConfigError("--modalities selects nothing");
  return scratch.train.modalities;
}

EvalReport run_eval(const RunConfig& cfg, const SplitData& data, const fs::path& ckpt_path, const fs::path& out_dir,
                    const std::string& split_name, const std::string& modalities, bool missing_eval, std::ostream& log) {
  ensure_dir(out_dir);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.kind != "finetune") throw CheckpointError(ckpt_path.string() + " is a '" + ck.kind + "' checkpoint; eval needs a fine-tuned one");
  RunConfig arch;
  try {
    arch.apply_text(ck.config, "checkpoint");
    arch.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("incompatible checkpoint configuration: ") + e.what());
  }
  if (arch.encoder.image_size != data.image_size)
    throw CheckpointError("checkpoint was trained at " + std::to_string(arch.encoder.image_size) +
                          " pixels but the data is " + std::to_string(data.image_size));
  Finetuner model(arch.encoder, arch.train_config());
  model.restore(ck);

  std::vector<MultimodalSample> samples = pick(data, split_name);
  std::string composition;
  if (missing_eval) {
    auto set = build_missing_eval_set(samples, cfg.missing_eval, cfg.seed);
    std::ostringstream c;
    c << "composition.full = " << set.full << "\ncomposition.one_missing = " << set.one_missing
      << "\ncomposition.two_missing = " << set.two_missing << "\n";
    for (int m = 0; m < kNumModalities; ++m)
      c << "composition.no_" << modality_name(m) << " = " << set.dropped_one[m] << "\n";
    for (int m = 0; m < kNumModalities; ++m)
      c << "composition.only_" << modality_name(m) << " = " << set.kept_two[m] << "\n";
    if (!set.remainder_note.empty()) c << "warning = " << set.remainder_note << "\n";
    composition = c.str();
    samples = std::move(set.samples);
  }
  if (samples.empty()) throw DataError("eval: split '" + split_name + "' is empty");
  const std::vector<int> mods = modalities.empty() ? arch.train.modalities : parse_modalities(modalities);

  const Prediction pred = predict(model.model(), samples, mods, arch.train.batch_finetune);
  const EvalReport report = evaluate(pred.labels, pred.probabilities, cfg.reliability_bins);

  std::vector<PredictionRecord> records(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    records[i].id = samples[i].id;
    records[i].label = pred.labels[i];
    for (int k = 0; k < 4; ++k) records[i].probabilities[k] = pred.probabilities[i * 4 + k];
  }
  write_predictions(out_dir / "predictions.txt", records);
  {
    auto f = open_out(out_dir / "report.txt");
    f << "split = " << split_name << "\nmodalities =";
    for (int m : mods) f << " " << modality_name(m);
    f << "\nmissing_eval = " << (missing_eval ? "true" : "false") << "\n" << composition << format_report(report);
  }
  write_reliability_csv(out_dir / "reliability.csv", report.reliability);
  log << format_report(report);
  return report;
}

int code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const CheckpointError*>(&e)) return kExitCheckpoint;
  return kExitOther;
}

}  // namespace

void write_split_manifest(const fs::path& path, const SplitManifest& m, std::uint64_t seed) {
  auto f = open_out(path);
  f << "ratios " << fmt(m.ratios[0]) << " " << fmt(m.ratios[1]) << " " << fmt(m.ratios[2]) << "\n";
  f << "seed " << seed << "\n";
  const char* names[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    f << "counts " << names[s];
    for (int c : m.counts[s]) f << " " << c;
    f << "\n";
  }
  const std::vector<std::string>* lists[3] = {&m.train, &m.val, &m.test};
  for (int s = 0; s < 3; ++s)
    for (const auto& id : *lists[s]) f << names[s] << " " << id << "\n";
}

SplitManifest read_split_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open split manifest " + path.string());
  SplitManifest m;
  std::string line;
  int number = 0;
  while (std::getline(f, line)) {
    ++number;
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string tag;
    in >> tag;
    const auto bad = [&] { return DataError(path.string() + ":" + std::to_string(number) + ": malformed line"); };
    if (tag == "ratios") {
      if (!(in >> m.ratios[0] >> m.ratios[1] >> m.ratios[2])) throw bad();
    } else if (tag == "seed") {
      std::uint64_t s;
      if (!(in >> s)) throw bad();
    } else if (tag == "counts") {
      std::string name;
      in >> name;
      const int s = name == "train" ? 0 : name == "val" ? 1 : name == "test" ? 2 : -1;
      if (s < 0) throw bad();
      for (int& c : m.counts[s])
        if (!(in >> c)) throw bad();
    } else if (tag == "train" || tag == "val" || tag == "test") {
      std::string id;
      if (!(in >> id)) throw bad();
      (tag == "train" ? m.train : tag == "val" ? m.val : m.test).push_back(id);
    } else {
      throw bad();
    }
  }
  return m;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tri-modal hierarchical attentive masked modeling for glaucoma staging", "hamm"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "Write a synthetic tri-modal dataset");
  std::string synth_out;
  std::optional<int> synth_n, synth_size;
  synth->add_option("--out", synth_out, "Dataset directory")->required();
  synth->add_option("--n", synth_n, "Samples per class");
  synth->add_option("--size", synth_size, "Image side in pixels");
  add_common(synth, common);

  auto* split = app.add_subcommand("split", "Stratified train/val/test split of a dataset");
  std::string split_data, split_out;
  split->add_option("--data", split_data, "Dataset directory")->required();
  split->add_option("--out", split_out, "Manifest path (default <data>/split.txt)");
  add_common(split, common);

  std::string data_dir, split_file, out_dir, pretrained, checkpoint, modalities, split_name = "test";
  bool resume = false, missing_eval = false;
  const auto add_data = [&](CLI::App* cmd) {
    cmd->add_option("--data", data_dir, "Dataset directory")->required();
    cmd->add_option("--split", split_file, "Split manifest (default <data>/split.txt)");
    cmd->add_option("--out", out_dir, "Output directory")->required();
    add_common(cmd, common);
  };

  auto* pretrain = app.add_subcommand("pretrain", "Stage 1: masked reconstruction pretraining");
  add_data(pretrain);
  pretrain->add_flag("--resume", resume, "Continue from <out>/pretrain.ckpt");

  auto* finetune = app.add_subcommand("finetune", "Stage 2: supervised fine-tuning");
  add_data(finetune);
  finetune->add_option("--pretrained", pretrained, "Pretraining checkpoint (omit to train from scratch)");

  auto* eval = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  add_data(eval);
  eval->add_option("--checkpoint", checkpoint, "Fine-tuned checkpoint")->required();
  eval->add_option("--modalities", modalities, "Comma-separated subset of fundus,oct,vf");
  eval->add_option("--split-name", split_name, "train, val or test");
  eval->add_flag("--missing-eval", missing_eval, "Add copies with one or two modalities removed");

  auto* sweep = app.add_subcommand("sweep", "Pretrain, fine-tune and evaluate at each mask ratio");
  add_data(sweep);

  auto* trials = app.add_subcommand("trials", "Fine-tune and evaluate with train.n_seeds seeds, then aggregate");
  add_data(trials);
  trials->add_option("--pretrained", pretrained, "Pretraining checkpoint (omit to train from scratch)");

  std::vector<std::string> argv_store{"hamm"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig cfg = load_config(common);
    const auto split_path = [&](const fs::path& data) { return split_file.empty() ? data / "split.txt" : resolve(split_file); };

    if (synth->parsed()) {
      const int n = synth_n.value_or(cfg.synth_per_class);
      const int size = synth_size.value_or(cfg.synth_image_size);
      if (n < 1) throw ConfigError("--n must be positive");
      const auto samples = generate_synthetic(n, size, cfg.seed, cfg.synth);
      write_dataset(resolve(synth_out), samples);
      out << "wrote " << samples.size() << " samples to " << resolve(synth_out).string() << "\n";
    } else if (split->parsed()) {
      const fs::path data = resolve(split_data);
      const auto samples = read_dataset(data);
      const auto manifest = stratified_split(samples, cfg.split_ratios, cfg.seed);
      const fs::path target = split_out.empty() ? data / "split.txt" : resolve(split_out);
      write_split_manifest(target, manifest, cfg.seed);
      out << "split " << manifest.train.size() << "/" << manifest.val.size() << "/" << manifest.test.size()
          << " written to " << target.string() << "\n";
    } else {
      const fs::path data = resolve(data_dir);
      const SplitData splits = load_splits(data, split_path(data));
      const fs::path target = resolve(out_dir);
      if (pretrain->parsed()) {
        run_pretrain(cfg, splits, target, resume, out);
      } else if (finetune->parsed()) {
        std::optional<fs::path> from;
        if (!pretrained.empty()) from = resolve(pretrained);
        run_finetune(cfg, splits, target, from, out);
      } else if (eval->parsed()) {
        run_eval(cfg, splits, resolve(checkpoint), target, split_name, modalities, missing_eval, out);
      } else if (trials->parsed()) {
        std::optional<fs::path> from;
        if (!pretrained.empty()) from = resolve(pretrained);
        const auto result = multi_seed(cfg.train.n_seeds, cfg.seed, [&](std::uint64_t seed) {
          RunConfig c = cfg;
          c.seed = seed;
          const fs::path dir = target / ("seed_" + std::to_string(seed));
          out << "== seed " << seed << "\n";
          run_finetune(c, splits, dir, from, out);
          return run_eval(c, splits, dir / "finetune.ckpt", dir, "test", "", false, out);
        });
        auto f = open_out(target / "summary.txt");
        f << "runs = " << result.runs.size() << "\n" << format_summary(result.summary);
        out << format_summary(result.summary);
      } else if (sweep->parsed()) {
        ensure_dir(target);
        auto table = open_out(target / "sweep.csv");
        table << "mask_ratio,accuracy,f1_macro,auroc_macro,kappa_qw,ece,brier\n";
        for (double ratio : cfg.sweep_ratios) {
          RunConfig c = cfg;
          c.train.mask_ratio = ratio;
          char name[32];
          std::snprintf(name, sizeof name, "mask_%.2f", ratio);
          const fs::path dir = target / name;
          out << "== mask ratio " << fmt(ratio) << "\n";
          run_pretrain(c, splits, dir, false, out);
          run_finetune(c, splits, dir, dir / "pretrain.ckpt", out);
          const EvalReport r = run_eval(c, splits, dir / "finetune.ckpt", dir, "test", "", false, out);
          table << fmt(ratio) << "," << fmt(r.accuracy) << "," << fmt(r.f1_macro) << "," << fmt(r.auroc_macro) << ","
                << fmt(r.kappa_qw) << "," << fmt(r.ece) << "," << fmt(r.brier) << "\n";
          table.flush();
        }
      }
    }
  } catch (const std::exception& e) {
    err << "hamm: " << e.what() << "\n";
    return code_for(e);
  }
  return kExitOk;
}

}  // namespace hamm
