#include "hamm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hamm/errors.hpp"

namespace hamm {
namespace {

enum StreamTag : std::uint64_t {
  kTagInitMae = 0x11,
  kTagInitClassifier = 0x12,
  kTagShuffle = 0x21,
  kTagMask = 0x22,
  kTagAugment = 0x23,
  kTagMissing = 0x24,
};

ParamList trainable(ParamList all, bool freeze_mcga) {
  if (!freeze_mcga) return all;
  ParamList out;
  for (auto& np : all)
    if (np.name.find(".mcga") == std::string::npos) out.push_back(np);
  return out;
}

std::vector<const MultimodalSample*> gather(std::span<const MultimodalSample> pool, std::span<const std::size_t> order,
                                            std::size_t begin, std::size_t end) {
  std::vector<const MultimodalSample*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&pool[order[i]]);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ConfigError(std::string("train: ") + name + " must be positive");
  };
  positive(lr_pretrain, "lr_pretrain");
  positive(lr_finetune, "lr_finetune");
  positive(batch_pretrain, "batch_pretrain");
  positive(batch_finetune, "batch_finetune");
  positive(pretrain_epochs, "pretrain_epochs");
  positive(patch_size, "patch_size");
  positive(decoder_width, "decoder_width");
  positive(hidden, "hidden");
  positive(patience, "patience");
  positive(max_epochs, "max_epochs");
  positive(n_seeds, "n_seeds");
  if (!(mask_ratio > 0.0 && mask_ratio <= 1.0)) throw ConfigError("train: mask_ratio must lie in (0,1]");
  if (min_delta < 0) throw ConfigError("train: min_delta must be non-negative");
  if (missingness) missingness->validate();
  if (modalities.empty() || modalities.size() > kNumModalities || !std::is_sorted(modalities.begin(), modalities.end()) ||
      std::adjacent_find(modalities.begin(), modalities.end()) != modalities.end())
    throw ConfigError("train: modalities must be 1-3 distinct ascending entries");
  for (int m : modalities)
    if (m < 0 || m >= kNumModalities) throw ConfigError("train: unknown modality");
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kTagShuffle, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

// --- Stage 1 -----------------------------------------------------------------

namespace {
MaskedAutoencoder build_mae(const EncoderConfig& encoder, const TrainConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, kTagInitMae));
  return MaskedAutoencoder(encoder, config.decoder_width, rng);
}
}  // namespace

Pretrainer::Pretrainer(const EncoderConfig& encoder, const TrainConfig& config)
    : config_(config),
      model_(build_mae(encoder, config)),
      optimizer_(model_.parameters(), AdamConfig{config.lr_pretrain}) {
  if (encoder.image_size % config.patch_size)
    throw ConfigError("train: patch_size must divide image_size");
}

double Pretrainer::run_epoch(std::span<const MultimodalSample> train) {
  if (train.empty()) throw DataError("pretrain: empty training set");
  const int S = model_.encoder().config().image_size;
  const auto order = epoch_order(train.size(), config_.seed, epoch_);
  double total = 0.0;
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_pretrain) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_pretrain);
    const auto batch = gather(train, order, begin, end);
    const int n = static_cast<int>(batch.size());
    if (batch[0]->image_size() != S) throw DataError("pretrain: image size does not match the encoder");
    const ModalityInputs images = stack_batch(batch);
    ModalityInputs masked;
    std::vector<Tensor> masks, targets;
    for (int m = 0; m < kNumModalities; ++m) {
      Tensor mk({n, 1, S, S});
      for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(config_.seed, kTagMask, static_cast<std::uint64_t>(epoch_), fnv1a(batch[i]->id),
                            static_cast<std::uint64_t>(m)));
        const Tensor one = make_mask(S, config_.patch_size, config_.mask_ratio, rng);
        std::copy(one.data(), one.data() + one.size(), mk.data() + static_cast<std::size_t>(i) * one.size());
      }
      masked[m] = apply_mask(images[m], mk);
      masks.push_back(std::move(mk));
      targets.push_back(images[m]);
    }
    const auto recon = model_.forward(masked);
    const MaskedLoss loss = masked_mse(targets, recon, masks);
    if (!std::isfinite(loss.value))
      throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", batch starting " +
                         batch[0]->id);
    optimizer_.zero_grad();
    model_.backward(loss.grads);
    optimizer_.step();
    total += loss.value * n;
  }
  ++epoch_;
  const double mean = total / static_cast<double>(train.size());
  losses_.push_back(mean);
  return mean;
}

Checkpoint Pretrainer::checkpoint(const std::string& config_echo) const {
  Checkpoint ck;
  ck.kind = "pretrain";
  ck.config = config_echo;
  auto& self = const_cast<Pretrainer&>(*this);
  store_parameters(ck, self.model_.parameters());
  optimizer_.save_state(ck);
  ck.metadata["epoch"] = std::to_string(epoch_);
  std::ostringstream hist;
  hist.precision(17);
  for (double l : losses_) hist << l << " ";
  ck.metadata["loss_history"] = hist.str();
  return ck;
}

void Pretrainer::restore(const Checkpoint& ck) {
  if (ck.kind != "pretrain") throw CheckpointError("expected a pretraining checkpoint, got '" + ck.kind + "'");
  load_parameters(ck, model_.parameters());
  optimizer_.load_state(ck);
  const auto e = ck.metadata.find("epoch");
  if (e == ck.metadata.end()) throw CheckpointError("pretraining checkpoint lacks the epoch counter");
  epoch_ = std::stoi(e->second);
  losses_.clear();
  const auto h = ck.metadata.find("loss_history");
  if (h != ck.metadata.end()) {
    std::istringstream in(h->second);
    double v;
    while (in >> v) losses_.push_back(v);
  }
}

// --- Stage 2 -----------------------------------------------------------------

Prediction predict(HammClassifier& model, std::span<const MultimodalSample> samples, std::span<const int> modalities,
                   int batch_size) {
  if (samples.empty()) throw DataError("predict: no samples");
  Prediction out;
  out.probabilities = Tensor({static_cast<int>(samples.size()), kNumClasses});
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  double loss = 0.0;
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const std::size_t end = std::min(samples.size(), begin + batch_size);
    const auto batch = gather(samples, order, begin, end);
    const Tensor probs = softmax_rows(model.forward(stack_batch(batch), modalities));
    std::vector<int> labels;
    for (const auto* s : batch) labels.push_back(s->label);
    loss += ce_loss(probs, labels).value * static_cast<double>(batch.size());
    std::copy(probs.data(), probs.data() + probs.size(),
              out.probabilities.data() + begin * static_cast<std::size_t>(kNumClasses));
    out.labels.insert(out.labels.end(), labels.begin(), labels.end());
  }
  out.loss = loss / static_cast<double>(samples.size());
  return out;
}

namespace {
HammClassifier build_classifier(const EncoderConfig& encoder, const TrainConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, kTagInitClassifier));
  return HammClassifier(encoder, config.hidden, rng);
}

double accuracy_of(const Prediction& p) {
  const auto pred = argmax_rows(p.probabilities);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == p.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}
}  // namespace

Finetuner::Finetuner(const EncoderConfig& encoder, const TrainConfig& config)
    : config_(config), model_(build_classifier(encoder, config)) {}

void Finetuner::load_pretrained(const Checkpoint& ck) {
  if (ck.kind != "pretrain") throw CheckpointError("expected a pretraining checkpoint, got '" + ck.kind + "'");
  if (load_parameters(ck, model_.parameters(), "encoder.") == 0)
    throw CheckpointError("pretraining checkpoint holds no encoder parameters");
}

FinetuneResult Finetuner::run(std::span<const MultimodalSample> train, std::span<const MultimodalSample> val,
                              const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty() || val.empty()) throw DataError("finetune: training and validation sets must be non-empty");
  const int S = model_.encoder().config().image_size;
  if (train[0].image_size() != S || val[0].image_size() != S)
    throw DataError("finetune: image size does not match the encoder");
  ParamList all = model_.parameters();
  Adam optimizer(trainable(all, config_.freeze_mcga), AdamConfig{config_.lr_finetune});
  std::vector<Tensor> best(all.size());
  FinetuneResult result;
  result.best_val_loss = INFINITY;
  int stale = 0;

  for (int epoch = 0; epoch < config_.max_epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    const auto order = epoch_order(train.size(), config_.seed, epoch);
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_finetune) {
      const std::size_t end = std::min(order.size(), begin + config_.batch_finetune);
      std::vector<MultimodalSample> prepared;
      for (std::size_t i = begin; i < end; ++i) {
        const MultimodalSample& src = train[order[i]];
        const std::uint64_t id = fnv1a(src.id);
        MultimodalSample s = src;
        if (config_.augment) {
          Rng rng(derive_seed(config_.seed, kTagAugment, static_cast<std::uint64_t>(epoch), id));
          s = augment(s, config_.augmentation, rng);
        }
        if (config_.missingness) {
          Rng rng(derive_seed(config_.seed, kTagMissing, static_cast<std::uint64_t>(epoch), id));
          const int before = s.present_count();
          s = sample_missingness(s, *config_.missingness, rng);
          ++log.patterns[std::clamp(before - s.present_count(), 0, 2)];
        } else {
          ++log.patterns[0];
        }
        prepared.push_back(std::move(s));
      }
      std::vector<const MultimodalSample*> ptrs;
      std::vector<int> labels;
      for (const auto& s : prepared) {
        ptrs.push_back(&s);
        labels.push_back(s.label);
      }
      const Tensor probs = softmax_rows(model_.forward(stack_batch(ptrs), config_.modalities));
      const CrossEntropy ce = ce_loss(probs, labels);
      if (!std::isfinite(ce.value)) throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1));
      optimizer.zero_grad();
      model_.backward(ce.grad_logits);
      optimizer.step();
      loss_sum += ce.value * static_cast<double>(labels.size());
      const auto pred = argmax_rows(probs);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    }
    log.train_loss = loss_sum / static_cast<double>(train.size());
    log.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    const Prediction vp = predict(model_, val, config_.modalities, config_.batch_finetune);
    log.val_loss = vp.loss;
    log.val_acc = accuracy_of(vp);
    if (log.val_loss < result.best_val_loss - config_.min_delta) {
      log.improved = true;
      result.best_val_loss = log.val_loss;
      result.best_epoch = log.epoch;
      stale = 0;
      for (std::size_t k = 0; k < all.size(); ++k) best[k] = all[k].param->value;
    } else {
      ++stale;
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (stale >= config_.patience) {
      result.early_stopped = true;
      break;
    }
  }
  for (std::size_t k = 0; k < all.size(); ++k)
    if (!best[k].empty()) all[k].param->value = best[k];
  return result;
}

Checkpoint Finetuner::checkpoint(const std::string& config_echo) const {
  Checkpoint ck;
  ck.kind = "finetune";
  ck.config = config_echo;
  store_parameters(ck, const_cast<HammClassifier&>(model_).parameters());
  return ck;
}

void Finetuner::restore(const Checkpoint& ck) {
  if (ck.kind != "finetune") throw CheckpointError("expected a fine-tuned checkpoint, got '" + ck.kind + "'");
  load_parameters(ck, model_.parameters());
}

// --- aggregation ---------------------------------------------------------------

std::map<std::string, MetricSummary> aggregate(std::span<const EvalReport> runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : runs) {
    values["accuracy"].push_back(r.accuracy);
    values["f1_macro"].push_back(r.f1_macro);
    values["auroc_macro"].push_back(r.auroc_macro);
    values["kappa_qw"].push_back(r.kappa_qw);
    values["ece"].push_back(r.ece);
    values["brier"].push_back(r.brier);
    for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c)
      values["class" + std::to_string(c) + "_accuracy"].push_back(r.per_class_accuracy[c]);
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [name, v] : values) {
    MetricSummary s;
    const double n = static_cast<double>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = v.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    s.mean = std::clamp(s.mean, s.min, s.max);
    out[name] = s;
  }
  return out;
}

std::string format_summary(const std::map<std::string, MetricSummary>& summary) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& [name, s] : summary)
    out << name << " = " << s.mean << " +- " << s.std << " (min " << s.min << ", max " << s.max << ")\n";
  return out.str();
}

MultiSeedResult multi_seed(int n_seeds, std::uint64_t base_seed, const std::function<EvalReport(std::uint64_t)>& trial) {
  if (n_seeds < 1) throw ConfigError("multi_seed: need at least one seed");
  MultiSeedResult out;
  for (int i = 0; i < n_seeds; ++i) out.runs.push_back(trial(base_seed + static_cast<std::uint64_t>(i)));
  out.summary = aggregate(out.runs);
  return out;
}

}  // namespace hamm
