#include "hamm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hamm/errors.hpp"

namespace hamm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long i = std::stoull(v, &used);
    if (used != v.size() || v[0] == '-') throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

int modality_from(const std::string& key, const std::string& name) {
  for (int m = 0; m < kNumModalities; ++m)
    if (name == modality_name(m)) return m;
  throw ConfigError(key + ": unknown modality '" + name + "' (fundus, oct, vf)");
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
std::string join(const T& values) {
  std::string out;
  for (const auto& v : values) out += (out.empty() ? "" : ",") + fmt(static_cast<double>(v));
  return out;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  using R = RunConfig;
  using S = const std::string&;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"run.seed", {[](R& c, S k, S v) { c.seed = to_u64(k, v); }, [](const R& c) { return std::to_string(c.seed); }}},
      {"run.deterministic",
       {[](R& c, S k, S v) { c.deterministic = to_bool(k, v); }, [](const R& c) { return fmt(c.deterministic); }}},
      {"encoder.profile",
       {[](R& c, S k, S v) {
          const int size = c.encoder.image_size;
          const auto keep = c.encoder;
          if (v == "toy")
            c.encoder = EncoderConfig::toy();
          else if (v == "full")
            c.encoder = EncoderConfig::full();
          else
            throw ConfigError(k + ": expected toy or full, got '" + v + "'");
          c.encoder.image_size = size;
          c.encoder.share_weights = keep.share_weights;
          c.encoder.group_norm = keep.group_norm;
          c.encoder.use_mcga = keep.use_mcga;
          c.encoder.mcga_stages = keep.mcga_stages;
          c.encoder.mcga = keep.mcga;
          c.profile = v;
        },
        [](const R& c) { return c.profile; }}},
      {"encoder.widths",
       {[](R& c, S k, S v) {
          const auto items = split_list(v);
          if (items.size() != kNumStages) throw ConfigError(k + ": expected four comma-separated widths");
          for (int s = 0; s < kNumStages; ++s) c.encoder.widths[s] = static_cast<int>(to_int(k, items[s]));
        },
        [](const R& c) { return join(c.encoder.widths); }}},
      {"encoder.stem_width",
       {[](R& c, S k, S v) { c.encoder.stem_width = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.encoder.stem_width); }}},
      {"encoder.expansion",
       {[](R& c, S k, S v) { c.encoder.expansion = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.encoder.expansion); }}},
      {"encoder.image_size",
       {[](R& c, S k, S v) { c.encoder.image_size = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.encoder.image_size); }}},
      {"encoder.share_weights",
       {[](R& c, S k, S v) { c.encoder.share_weights = to_bool(k, v); },
        [](const R& c) { return fmt(c.encoder.share_weights); }}},
      {"encoder.group_norm",
       {[](R& c, S k, S v) { c.encoder.group_norm = to_bool(k, v); },
        [](const R& c) { return fmt(c.encoder.group_norm); }}},
      {"mcga.enabled",
       {[](R& c, S k, S v) { c.encoder.use_mcga = to_bool(k, v); }, [](const R& c) { return fmt(c.encoder.use_mcga); }}},
      {"mcga.stages",
       {[](R& c, S k, S v) {
          c.encoder.mcga_stages = {false, false, false, false};
          for (const auto& item : split_list(v)) {
            const long long s = to_int(k, item);
            if (s < 1 || s > kNumStages) throw ConfigError(k + ": stages are numbered 1-4");
            c.encoder.mcga_stages[s - 1] = true;
          }
        },
        [](const R& c) {
          std::string out;
          for (int s = 0; s < kNumStages; ++s)
            if (c.encoder.mcga_stages[s]) out += (out.empty() ? "" : ",") + std::to_string(s + 1);
          return out;
        }}},
      {"mcga.heads",
       {[](R& c, S k, S v) { c.encoder.mcga.heads = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.encoder.mcga.heads); }}},
      {"mcga.gem_p",
       {[](R& c, S k, S v) { c.encoder.mcga.gem_p_init = to_double(k, v); },
        [](const R& c) { return fmt(c.encoder.mcga.gem_p_init); }}},
      {"mcga.leaky_slope",
       {[](R& c, S k, S v) { c.encoder.mcga.leaky_slope = to_double(k, v); },
        [](const R& c) { return fmt(c.encoder.mcga.leaky_slope); }}},
      {"mcga.pooling",
       {[](R& c, S k, S v) {
          if (v == "full")
            c.encoder.mcga.pooling = mcga::Pooling::kFull;
          else if (v == "gap")
            c.encoder.mcga.pooling = mcga::Pooling::kGapOnly;
          else
            throw ConfigError(k + ": expected full or gap");
        },
        [](const R& c) { return std::string(c.encoder.mcga.pooling == mcga::Pooling::kFull ? "full" : "gap"); }}},
      {"mcga.attention",
       {[](R& c, S k, S v) {
          if (v == "full")
            c.encoder.mcga.attention = mcga::Attention::kFull;
          else if (v == "gating")
            c.encoder.mcga.attention = mcga::Attention::kGatingOnly;
          else if (v == "graph")
            c.encoder.mcga.attention = mcga::Attention::kGraphOnly;
          else
            throw ConfigError(k + ": expected full, gating or graph");
        },
        [](const R& c) {
          switch (c.encoder.mcga.attention) {
            case mcga::Attention::kGatingOnly: return std::string("gating");
            case mcga::Attention::kGraphOnly: return std::string("graph");
            default: return std::string("full");
          }
        }}},
      {"mae.mask_ratio",
       {[](R& c, S k, S v) { c.train.mask_ratio = to_double(k, v); }, [](const R& c) { return fmt(c.train.mask_ratio); }}},
      {"mae.patch_size",
       {[](R& c, S k, S v) { c.train.patch_size = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.patch_size); }}},
      {"mae.decoder_width",
       {[](R& c, S k, S v) { c.train.decoder_width = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.decoder_width); }}},
      {"mae.sweep_ratios",
       {[](R& c, S k, S v) {
          c.sweep_ratios.clear();
          for (const auto& item : split_list(v)) c.sweep_ratios.push_back(to_double(k, item));
        },
        [](const R& c) { return join(c.sweep_ratios); }}},
      {"train.lr_pretrain",
       {[](R& c, S k, S v) { c.train.lr_pretrain = to_double(k, v); }, [](const R& c) { return fmt(c.train.lr_pretrain); }}},
      {"train.lr_finetune",
       {[](R& c, S k, S v) { c.train.lr_finetune = to_double(k, v); }, [](const R& c) { return fmt(c.train.lr_finetune); }}},
      {"train.batch_pretrain",
       {[](R& c, S k, S v) { c.train.batch_pretrain = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.batch_pretrain); }}},
      {"train.batch_finetune",
       {[](R& c, S k, S v) { c.train.batch_finetune = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.batch_finetune); }}},
      {"train.pretrain_epochs",
       {[](R& c, S k, S v) { c.train.pretrain_epochs = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.pretrain_epochs); }}},
      {"train.patience",
       {[](R& c, S k, S v) { c.train.patience = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.patience); }}},
      {"train.min_delta",
       {[](R& c, S k, S v) { c.train.min_delta = to_double(k, v); }, [](const R& c) { return fmt(c.train.min_delta); }}},
      {"train.max_epochs",
       {[](R& c, S k, S v) { c.train.max_epochs = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.max_epochs); }}},
      {"train.n_seeds",
       {[](R& c, S k, S v) { c.train.n_seeds = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.n_seeds); }}},
      {"train.hidden",
       {[](R& c, S k, S v) { c.train.hidden = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.train.hidden); }}},
      {"train.freeze_mcga",
       {[](R& c, S k, S v) { c.train.freeze_mcga = to_bool(k, v); }, [](const R& c) { return fmt(c.train.freeze_mcga); }}},
      {"train.modalities",
       {[](R& c, S k, S v) {
          std::array<bool, kNumModalities> on{};
          for (const auto& item : split_list(v)) on[modality_from(k, item)] = true;
          c.train.modalities.clear();
          for (int m = 0; m < kNumModalities; ++m)
            if (on[m]) c.train.modalities.push_back(m);
        },
        [](const R& c) {
          std::string out;
          for (int m : c.train.modalities) out += (out.empty() ? "" : ",") + std::string(modality_name(m));
          return out;
        }}},
      {"augment.enabled",
       {[](R& c, S k, S v) { c.train.augment = to_bool(k, v); }, [](const R& c) { return fmt(c.train.augment); }}},
      {"augment.flip_probability",
       {[](R& c, S k, S v) { c.train.augmentation.flip_probability = to_double(k, v); },
        [](const R& c) { return fmt(c.train.augmentation.flip_probability); }}},
      {"augment.jitter_min",
       {[](R& c, S k, S v) { c.train.augmentation.jitter_min = to_double(k, v); },
        [](const R& c) { return fmt(c.train.augmentation.jitter_min); }}},
      {"augment.jitter_max",
       {[](R& c, S k, S v) { c.train.augmentation.jitter_max = to_double(k, v); },
        [](const R& c) { return fmt(c.train.augmentation.jitter_max); }}},
      {"augment.crop_scale_min",
       {[](R& c, S k, S v) { c.train.augmentation.crop_scale_min = to_double(k, v); },
        [](const R& c) { return fmt(c.train.augmentation.crop_scale_min); }}},
      {"augment.crop_scale_max",
       {[](R& c, S k, S v) { c.train.augmentation.crop_scale_max = to_double(k, v); },
        [](const R& c) { return fmt(c.train.augmentation.crop_scale_max); }}},
      {"augment.synchronous_flip",
       {[](R& c, S k, S v) { c.train.augmentation.synchronous_horizontal_flip = to_bool(k, v); },
        [](const R& c) { return fmt(c.train.augmentation.synchronous_horizontal_flip); }}},
      {"missing.enabled",
       {[](R& c, S k, S v) { c.missingness_enabled = to_bool(k, v); }, [](const R& c) { return fmt(c.missingness_enabled); }}},
      {"missing.p_full",
       {[](R& c, S k, S v) { c.missingness.p_full = to_double(k, v); }, [](const R& c) { return fmt(c.missingness.p_full); }}},
      {"missing.p_drop_one",
       {[](R& c, S k, S v) { c.missingness.p_drop_one = to_double(k, v); },
        [](const R& c) { return fmt(c.missingness.p_drop_one); }}},
      {"missing.p_drop_two",
       {[](R& c, S k, S v) { c.missingness.p_drop_two = to_double(k, v); },
        [](const R& c) { return fmt(c.missingness.p_drop_two); }}},
      {"missing.eval_modified_fraction",
       {[](R& c, S k, S v) { c.missing_eval.modified_fraction = to_double(k, v); },
        [](const R& c) { return fmt(c.missing_eval.modified_fraction); }}},
      {"missing.eval_one_missing_share",
       {[](R& c, S k, S v) { c.missing_eval.one_missing_share = to_double(k, v); },
        [](const R& c) { return fmt(c.missing_eval.one_missing_share); }}},
      {"synth.per_class",
       {[](R& c, S k, S v) { c.synth_per_class = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.synth_per_class); }}},
      {"synth.image_size",
       {[](R& c, S k, S v) { c.synth_image_size = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.synth_image_size); }}},
      {"synth.discordance",
       {[](R& c, S k, S v) { c.synth.discordance = to_double(k, v); }, [](const R& c) { return fmt(c.synth.discordance); }}},
      {"synth.pixel_noise",
       {[](R& c, S k, S v) { c.synth.pixel_noise = to_double(k, v); }, [](const R& c) { return fmt(c.synth.pixel_noise); }}},
      {"synth.artifact_probability",
       {[](R& c, S k, S v) { c.synth.artifact_probability = to_double(k, v); },
        [](const R& c) { return fmt(c.synth.artifact_probability); }}},
      {"split.ratios",
       {[](R& c, S k, S v) {
          const auto items = split_list(v);
          if (items.size() != 3) throw ConfigError(k + ": expected three comma-separated ratios");
          for (int i = 0; i < 3; ++i) c.split_ratios[i] = to_double(k, items[i]);
        },
        [](const R& c) { return join(c.split_ratios); }}},
      {"eval.bins",
       {[](R& c, S k, S v) { c.reliability_bins = static_cast<int>(to_int(k, v)); },
        [](const R& c) { return std::to_string(c.reliability_bins); }}},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, field] : fields())
    if (name == key) return &field;
  return nullptr;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown configuration key '" + key + "'");
  f->set(*this, key, trim(value));
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of any [section]");
    try {
      set(section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream body;
  body << in.rdbuf();
  apply_text(body.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [name, field] : fields()) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    out << name.substr(dot + 1) << " = " << field.get(*this) << "\n";
  }
  return out.str();
}

void RunConfig::validate() const {
  encoder.validate();
  train_config().validate();
  if (encoder.image_size % train.patch_size) throw ConfigError("mae.patch_size must divide encoder.image_size");
  if (synth_per_class < 1) throw ConfigError("synth.per_class must be positive");
  if (synth_image_size < 32) throw ConfigError("synth.image_size must be at least 32");
  if (reliability_bins < 1) throw ConfigError("eval.bins must be positive");
  double total = 0;
  for (double r : split_ratios) {
    if (r < 0) throw ConfigError("split.ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split.ratios must sum to 1");
  if (!(missing_eval.modified_fraction >= 0 && missing_eval.one_missing_share >= 0 &&
        missing_eval.one_missing_share <= 1))
    throw ConfigError("missing.eval_* values out of range");
  for (double r : sweep_ratios)
    if (!(r > 0 && r <= 1)) throw ConfigError("mae.sweep_ratios must lie in (0,1]");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  if (missingness_enabled)
    t.missingness = missingness;
  else
    t.missingness.reset();
  return t;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [name, field] : fields()) out.push_back(name);
  return out;
}

}  // namespace hamm
