#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hamm/mcga.hpp"
#include "hamm/nn.hpp"

namespace hamm {

inline constexpr int kNumStages = 4;

struct EncoderConfig {
  std::array<int, kNumStages> widths{16, 32, 64, 128};
  int stem_width = 8;
  /// Bottleneck reduction: the 3×3 conv of each block runs at width/expansion.
  int expansion = 1;
  int image_size = 224;
  bool share_weights = false;
  bool use_mcga = true;
  /// GroupNorm after every backbone convolution.
  bool group_norm = true;
  /// Stages followed by an MCGA unit; only the last one gives late fusion.
  std::array<bool, kNumStages> mcga_stages{true, true, true, true};
  McgaConfig mcga;  // channels is filled per stage

  /// Small widths for tests and desk-scale training.
  static EncoderConfig toy();
  /// ResNet-50 stage widths 256/512/1024/2048 with 4× bottlenecks.
  static EncoderConfig full();
  /// Throws ConfigError when inconsistent.
  void validate() const;
};

/// 1×1 reduce, 3×3 (strided) spatial, 1×1 expand, plus a 1×1 projection
/// shortcut. With `normalize`, each convolution is followed by GroupNorm.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(int in, int out, int mid, int stride, bool normalize, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, ParamList& out);

 private:
  Tensor norm(int i, const Tensor& x);
  Tensor norm_backward(int i, const Tensor& g);

  Conv2d reduce_, spatial_, expand_, shortcut_;
  std::optional<std::array<GroupNorm, 4>> norms_;
  Tensor a1_, a2_, out_;
};

/// One encoder layer: the first also owns the stride-2 stem.
class EncoderStage {
 public:
  EncoderStage() = default;
  EncoderStage(int in, int out, int mid, bool with_stem, int stem_width, bool normalize, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, ParamList& out);

 private:
  std::optional<Conv2d> stem_;
  std::optional<GroupNorm> stem_norm_;
  Tensor stem_out_;
  ResidualBlock block_;
};

/// Per-modality feature maps after each stage's refinement. Absent
/// modalities have empty tensors.
struct FeaturePyramid {
  std::array<std::array<Tensor, kNumStages>, kNumModalities> maps;
  std::vector<int> modalities;

  const Tensor& at(int modality, int stage) const { return maps[modality][stage]; }
};

using PyramidGrad = std::array<std::array<Tensor, kNumStages>, kNumModalities>;
using ModalityInputs = std::array<Tensor, kNumModalities>;

/// Three parallel convolutional encoders joined after every stage by an MCGA
/// unit shared across the modalities.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, Rng& rng);

  /// All three modalities; inputs are [N,3,S,S] with S = image_size.
  FeaturePyramid encode(const ModalityInputs& inputs);
  /// Only the listed modalities (1-3, ascending, distinct) are encoded and
  /// take part in the attention graph.
  FeaturePyramid encode_subset(const ModalityInputs& inputs, std::span<const int> modalities);

  /// Gradients w.r.t. the refined maps of the last encode call; empty tensors
  /// count as zero. Returns input gradients for the encoded modalities.
  ModalityInputs backward(const PyramidGrad& grads);

  void collect(const std::string& prefix, ParamList& out);
  const EncoderConfig& config() const { return config_; }
  bool mcga_active(int stage) const { return config_.use_mcga && config_.mcga_stages[stage]; }

 private:
  std::vector<Tensor> run_stage(int stage, std::span<const Tensor> inputs);
  std::vector<Tensor> backward_stage(int stage, std::span<const Tensor> grads);
  EncoderStage& stage_for(int modality, int stage);

  EncoderConfig config_;
  std::array<std::array<EncoderStage, kNumStages>, kNumModalities> branches_;
  std::array<Mcga, kNumStages> mcga_;
  std::vector<int> active_;
};

}  // namespace hamm
