#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "hamm/encoder.hpp"

namespace hamm {

/// Number of masked patches for a ratio: round-half-away-from-zero of
/// ratio * patch count.
int masked_patch_count(int image_size, int patch_size, double ratio);

/// Binary [S,S] mask, 1 = kept and 0 = masked, with exactly
/// masked_patch_count() square patches zeroed, chosen uniformly.
Tensor make_mask(int image_size, int patch_size, double ratio, Rng& rng);

/// images [N,C,S,S] times masks [N,1,S,S] broadcast over channels.
Tensor apply_mask(const Tensor& images, const Tensor& masks);

struct MaskedLoss {
  double value = 0.0;
  /// dL/dprediction per modality, same shapes as the predictions.
  std::vector<Tensor> grads;
};

/// Sum of squared errors over masked entries of one [C,S,S] image.
double masked_squared_error(const Tensor& target, const Tensor& prediction, const Tensor& mask, int n);

/// Mean over batch items and modalities of the per-image squared error
/// (summed over channels) divided by that image's masked pixel count.
/// Unmasked pixels contribute nothing. Throws when an image has no masked
/// pixel.
MaskedLoss masked_mse(std::span<const Tensor> targets, std::span<const Tensor> predictions,
                      std::span<const Tensor> masks);

/// Light per-modality decoder: a 1×1 projection of each encoder stage is added
/// to the running state, then bilinear ×2 upsampling and a depthwise-separable
/// convolution refine it.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::array<int, kNumStages>& encoder_widths, int width, Rng& rng);

  /// skips[s] is the stage-(s+1) map. Returns D_1 at half the input size.
  Tensor decode(std::span<const Tensor> skips);
  /// Returns gradients w.r.t. the skips.
  std::array<Tensor, kNumStages> backward(const Tensor& grad_d1);

  void collect(const std::string& prefix, ParamList& out);
  /// Projection layers, exposed so tests can silence the skips.
  std::array<Conv2d, kNumStages>& projections() { return projections_; }

 private:
  int width_ = 0;
  std::array<Conv2d, kNumStages> projections_;
  std::array<DepthwiseSeparable, kNumStages> blocks_;
};

/// Final ×2 upsample and 1×1 convolution to three channels.
class ReconstructionHead {
 public:
  ReconstructionHead() = default;
  ReconstructionHead(int width, Rng& rng);

  Tensor forward(const Tensor& d1);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, ParamList& out);

  Conv2d& conv() { return conv_; }

 private:
  Conv2d conv_;
};

/// Encoder plus per-modality decoders and reconstruction heads.
class MaskedAutoencoder {
 public:
  MaskedAutoencoder() = default;
  MaskedAutoencoder(const EncoderConfig& encoder, int decoder_width, Rng& rng);

  /// Reconstructions per modality, [N,3,S,S].
  std::array<Tensor, kNumModalities> forward(const ModalityInputs& masked_inputs);
  void backward(std::span<const Tensor> grad_reconstruction);

  Encoder& encoder() { return encoder_; }
  Decoder& decoder(int m) { return decoders_[m]; }
  ReconstructionHead& head(int m) { return heads_[m]; }
  const FeaturePyramid& last_pyramid() const { return pyramid_; }
  const Tensor& last_decoded(int m) const { return decoded_[m]; }
  ParamList parameters();

 private:
  Encoder encoder_;
  std::array<Decoder, kNumModalities> decoders_;
  std::array<ReconstructionHead, kNumModalities> heads_;
  FeaturePyramid pyramid_;
  std::array<Tensor, kNumModalities> decoded_;
};

}  // namespace hamm
