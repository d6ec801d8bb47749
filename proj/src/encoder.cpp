#include "hamm/encoder.hpp"

#include <algorithm>
#include <stdexcept>

#include "hamm/errors.hpp"

namespace hamm {

EncoderConfig EncoderConfig::toy() {
  EncoderConfig c;
  c.widths = {16, 32, 64, 128};
  c.stem_width = 8;
  c.expansion = 1;
  return c;
}

EncoderConfig EncoderConfig::full() {
  EncoderConfig c;
  c.widths = {256, 512, 1024, 2048};
  c.stem_width = 64;
  c.expansion = 4;
  return c;
}

void EncoderConfig::validate() const {
  if (stem_width < 1 || expansion < 1) throw ConfigError("encoder: stem_width and expansion must be positive");
  for (int w : widths)
    if (w < 1 || w % expansion) throw ConfigError("encoder: widths must be positive multiples of expansion");
  if (image_size < 32 || image_size % 32)
    throw ConfigError("encoder: image_size must be a positive multiple of 32, got " + std::to_string(image_size));
  if (mcga.heads < 1) throw ConfigError("encoder: mcga heads must be >= 1");
}

ResidualBlock::ResidualBlock(int in, int out, int mid, int stride, bool normalize, Rng& rng)
    : reduce_(in, mid, 1, 1, 0, 1, rng),
      spatial_(mid, mid, 3, stride, 1, 1, rng),
      expand_(mid, out, 1, 1, 0, 1, rng, 1.0),
      shortcut_(in, out, 1, stride, 0, 1, rng, 1.0) {
  if (normalize) norms_ = std::array<GroupNorm, 4>{GroupNorm(mid), GroupNorm(mid), GroupNorm(out), GroupNorm(out)};
}

Tensor ResidualBlock::norm(int i, const Tensor& x) { return norms_ ? (*norms_)[i].forward(x) : x; }

Tensor ResidualBlock::norm_backward(int i, const Tensor& g) { return norms_ ? (*norms_)[i].backward(g) : g; }

Tensor ResidualBlock::forward(const Tensor& x) {
  a1_ = relu(norm(0, reduce_.forward(x)));
  a2_ = relu(norm(1, spatial_.forward(a1_)));
  Tensor y = norm(2, expand_.forward(a2_));
  y += norm(3, shortcut_.forward(x));
  out_ = relu(y);
  return out_;
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  const Tensor g = relu_backward(grad_out, out_);
  Tensor gx = shortcut_.backward(norm_backward(3, g));
  const Tensor g2 = relu_backward(expand_.backward(norm_backward(2, g)), a2_);
  const Tensor g1 = relu_backward(spatial_.backward(norm_backward(1, g2)), a1_);
  gx += reduce_.backward(norm_backward(0, g1));
  return gx;
}

void ResidualBlock::collect(const std::string& prefix, ParamList& out) {
  reduce_.collect(prefix + ".reduce", out);
  spatial_.collect(prefix + ".spatial", out);
  expand_.collect(prefix + ".expand", out);
  shortcut_.collect(prefix + ".shortcut", out);
  if (!norms_) return;
  const char* names[4] = {".reduce_norm", ".spatial_norm", ".expand_norm", ".shortcut_norm"};
  for (int i = 0; i < 4; ++i) (*norms_)[i].collect(prefix + names[i], out);
}

EncoderStage::EncoderStage(int in, int out, int mid, bool with_stem, int stem_width, bool normalize, Rng& rng) {
  if (with_stem) {
    stem_.emplace(in, stem_width, 3, 2, 1, 1, rng);
    if (normalize) stem_norm_.emplace(stem_width);
    in = stem_width;
  }
  block_ = ResidualBlock(in, out, mid, 2, normalize, rng);
}

Tensor EncoderStage::forward(const Tensor& x) {
  if (!stem_) return block_.forward(x);
  Tensor s = stem_->forward(x);
  stem_out_ = relu(stem_norm_ ? stem_norm_->forward(s) : s);
  return block_.forward(stem_out_);
}

Tensor EncoderStage::backward(const Tensor& grad_out) {
  Tensor g = block_.backward(grad_out);
  if (!stem_) return g;
  g = relu_backward(g, stem_out_);
  return stem_->backward(stem_norm_ ? stem_norm_->backward(g) : g);
}

void EncoderStage::collect(const std::string& prefix, ParamList& out) {
  if (stem_) stem_->collect(prefix + ".stem", out);
  if (stem_norm_) stem_norm_->collect(prefix + ".stem_norm", out);
  block_.collect(prefix + ".block", out);
}

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int n_branches = config_.share_weights ? 1 : kNumModalities;
  for (int m = 0; m < n_branches; ++m) {
    int in = 3;
    for (int s = 0; s < kNumStages; ++s) {
      const int out = config_.widths[s];
      branches_[m][s] = EncoderStage(in, out, out / config_.expansion, s == 0, config_.stem_width, config_.group_norm, rng);
      in = out;
    }
  }
  for (int s = 0; s < kNumStages; ++s) {
    if (!mcga_active(s)) continue;
    McgaConfig mc = config_.mcga;
    mc.channels = config_.widths[s];
    mcga_[s] = Mcga(mc, rng);
  }
}

EncoderStage& Encoder::stage_for(int modality, int stage) {
  return branches_[config_.share_weights ? 0 : modality][stage];
}

std::vector<Tensor> Encoder::run_stage(int stage, std::span<const Tensor> inputs) {
  std::vector<Tensor> out;
  if (config_.share_weights) {
    const Tensor joint = stage_for(0, stage).forward(concat_batch(inputs));
    const int n = inputs[0].dim(0);
    for (std::size_t a = 0; a < inputs.size(); ++a) {
      Tensor part({n, joint.dim(1), joint.dim(2), joint.dim(3)});
      for (int i = 0; i < n; ++i) part.set_batch_item(i, joint.batch_item(static_cast<int>(a) * n + i));
      out.push_back(std::move(part));
    }
  } else {
    for (std::size_t a = 0; a < inputs.size(); ++a) out.push_back(stage_for(active_[a], stage).forward(inputs[a]));
  }
  return out;
}

std::vector<Tensor> Encoder::backward_stage(int stage, std::span<const Tensor> grads) {
  std::vector<Tensor> out;
  if (config_.share_weights) {
    const Tensor joint = stage_for(0, stage).backward(concat_batch(grads));
    const int n = grads[0].dim(0);
    for (std::size_t a = 0; a < grads.size(); ++a) {
      Tensor part({n, joint.dim(1), joint.dim(2), joint.dim(3)});
      for (int i = 0; i < n; ++i) part.set_batch_item(i, joint.batch_item(static_cast<int>(a) * n + i));
      out.push_back(std::move(part));
    }
  } else {
    for (std::size_t a = 0; a < grads.size(); ++a) out.push_back(stage_for(active_[a], stage).backward(grads[a]));
  }
  return out;
}

FeaturePyramid Encoder::encode(const ModalityInputs& inputs) {
  static constexpr std::array<int, 3> all{kFundus, kOct, kVf};
  return encode_subset(inputs, all);
}

FeaturePyramid Encoder::encode_subset(const ModalityInputs& inputs, std::span<const int> modalities) {
  if (modalities.empty()) throw std::invalid_argument("encode_subset: at least one modality is required");
  if (modalities.size() > kNumModalities || !std::is_sorted(modalities.begin(), modalities.end()) ||
      std::adjacent_find(modalities.begin(), modalities.end()) != modalities.end())
    throw std::invalid_argument("encode_subset: modalities must be distinct and ascending");
  const int S = config_.image_size;
  std::vector<Tensor> x;
  for (int m : modalities) {
    if (m < 0 || m >= kNumModalities) throw std::invalid_argument("encode_subset: unknown modality");
    const Tensor& t = inputs[m];
    if (t.rank() != 4 || t.dim(1) != 3 || t.dim(2) != S || t.dim(3) != S)
      throw std::invalid_argument(std::string("encode: ") + modality_name(m) + " input must be [N,3," +
                                  std::to_string(S) + "," + std::to_string(S) + "], got " + to_string(t.shape()));
    if (!x.empty() && t.dim(0) != x[0].dim(0)) throw std::invalid_argument("encode: batch sizes differ");
    x.push_back(t);
  }
  active_.assign(modalities.begin(), modalities.end());

  FeaturePyramid pyr;
  pyr.modalities = active_;
  for (int s = 0; s < kNumStages; ++s) {
    std::vector<Tensor> raw = run_stage(s, x);
    x = mcga_active(s) ? mcga_[s].forward(active_, raw) : std::move(raw);
    for (std::size_t a = 0; a < active_.size(); ++a) pyr.maps[active_[a]][s] = x[a];
  }
  return pyr;
}

ModalityInputs Encoder::backward(const PyramidGrad& grads) {
  if (active_.empty()) throw std::logic_error("Encoder::backward called before encode");
  int batch = -1;
  for (int m : active_)
    for (const Tensor& t : grads[m])
      if (!t.empty()) batch = t.dim(0);
  if (batch < 0) throw std::invalid_argument("Encoder::backward: no gradient supplied");

  std::vector<Tensor> g(active_.size());
  for (int s = kNumStages - 1; s >= 0; --s) {
    for (std::size_t a = 0; a < active_.size(); ++a) {
      const Tensor& incoming = grads[active_[a]][s];
      if (!incoming.empty()) {
        if (g[a].empty())
          g[a] = incoming;
        else
          g[a] += incoming;
      } else if (g[a].empty()) {
        const int w = config_.image_size >> (s + 2);
        g[a] = Tensor({batch, config_.widths[s], w, w});
      }
    }
    if (mcga_active(s)) g = mcga_[s].backward(g);
    g = backward_stage(s, g);
  }
  ModalityInputs out;
  for (std::size_t a = 0; a < active_.size(); ++a) out[active_[a]] = std::move(g[a]);
  return out;
}

void Encoder::collect(const std::string& prefix, ParamList& out) {
  const int n_branches = config_.share_weights ? 1 : kNumModalities;
  for (int m = 0; m < n_branches; ++m)
    for (int s = 0; s < kNumStages; ++s)
      branches_[m][s].collect(
          prefix + "." + (config_.share_weights ? std::string("shared") : std::string(modality_name(m))) + ".stage" +
              std::to_string(s + 1),
          out);
  for (int s = 0; s < kNumStages; ++s)
    if (mcga_active(s)) mcga_[s].collect(prefix + ".mcga" + std::to_string(s + 1), out);
}

}  // namespace hamm
