#include "hamm/mae.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hamm/errors.hpp"

namespace hamm {

int masked_patch_count(int image_size, int patch_size, double ratio) {
  if (patch_size < 1 || image_size < 1 || image_size % patch_size)
    throw std::invalid_argument("mask: image size " + std::to_string(image_size) + " not divisible by patch size " +
                                std::to_string(patch_size));
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("mask: ratio must lie in [0,1]");
  const int grid = image_size / patch_size;
  return static_cast<int>(std::lround(ratio * grid * grid));
}

Tensor make_mask(int image_size, int patch_size, double ratio, Rng& rng) {
  const int masked = masked_patch_count(image_size, patch_size, ratio);
  const int grid = image_size / patch_size;
  std::vector<int> order(static_cast<std::size_t>(grid) * grid);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  Tensor mask({image_size, image_size}, 1.0);
  for (int k = 0; k < masked; ++k) {
    const int py = order[k] / grid, px = order[k] % grid;
    for (int y = py * patch_size; y < (py + 1) * patch_size; ++y)
      for (int x = px * patch_size; x < (px + 1) * patch_size; ++x) mask[static_cast<std::size_t>(y) * image_size + x] = 0.0;
  }
  return mask;
}

Tensor apply_mask(const Tensor& images, const Tensor& masks) {
  if (images.rank() != 4 || masks.rank() != 4 || masks.dim(1) != 1 || masks.dim(0) != images.dim(0) ||
      masks.dim(2) != images.dim(2) || masks.dim(3) != images.dim(3))
    throw std::invalid_argument("apply_mask: mask " + to_string(masks.shape()) + " does not fit images " +
                                to_string(images.shape()));
  Tensor out(images.shape());
  const std::size_t plane = static_cast<std::size_t>(images.dim(2)) * images.dim(3);
  for (int n = 0; n < images.dim(0); ++n)
    for (int c = 0; c < images.dim(1); ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * images.dim(1) + c) * plane;
      const std::size_t mbase = static_cast<std::size_t>(n) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = masks[mbase + i] != 0.0 ? images[base + i] : 0.0;
    }
  return out;
}

double masked_squared_error(const Tensor& target, const Tensor& prediction, const Tensor& mask, int n) {
  require_same_shape(target, prediction, "masked_squared_error");
  const int C = target.dim(1);
  const std::size_t plane = static_cast<std::size_t>(target.dim(2)) * target.dim(3);
  double sum = 0.0;
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      if (mask[static_cast<std::size_t>(n) * plane + i] != 0.0) continue;
      const std::size_t idx = (static_cast<std::size_t>(n) * C + c) * plane + i;
      const double d = prediction[idx] - target[idx];
      sum += d * d;
    }
  return sum;
}

MaskedLoss masked_mse(std::span<const Tensor> targets, std::span<const Tensor> predictions,
                      std::span<const Tensor> masks) {
  const std::size_t K = targets.size();
  if (K == 0 || predictions.size() != K || masks.size() != K)
    throw std::invalid_argument("masked_mse: need matching target/prediction/mask lists");
  MaskedLoss out;
  const int N = targets[0].dim(0);
  for (std::size_t k = 0; k < K; ++k) {
    require_same_shape(targets[k], predictions[k], "masked_mse");
    if (targets[k].dim(0) != N || masks[k].shape() != Shape{N, 1, targets[k].dim(2), targets[k].dim(3)})
      throw std::invalid_argument("masked_mse: mask shape mismatch");
    out.grads.emplace_back(predictions[k].shape());
  }
  const double norm = 1.0 / (static_cast<double>(N) * K);
  for (std::size_t k = 0; k < K; ++k) {
    const int C = targets[k].dim(1);
    const std::size_t plane = static_cast<std::size_t>(targets[k].dim(2)) * targets[k].dim(3);
    for (int n = 0; n < N; ++n) {
      std::size_t masked = 0;
      for (std::size_t i = 0; i < plane; ++i) masked += masks[k][static_cast<std::size_t>(n) * plane + i] == 0.0;
      if (masked == 0) throw std::invalid_argument("masked_mse: image without masked pixels (ratio 0?)");
      const double P = static_cast<double>(masked);
      out.value += norm * masked_squared_error(targets[k], predictions[k], masks[k], n) / P;
      for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
          if (masks[k][static_cast<std::size_t>(n) * plane + i] != 0.0) continue;
          const std::size_t idx = (static_cast<std::size_t>(n) * C + c) * plane + i;
          out.grads[k][idx] = norm * 2.0 * (predictions[k][idx] - targets[k][idx]) / P;
        }
    }
  }
  if (!std::isfinite(out.value)) throw NumericError("masked_mse: non-finite loss");
  return out;
}

Decoder::Decoder(const std::array<int, kNumStages>& encoder_widths, int width, Rng& rng) : width_(width) {
  if (width < 1) throw std::invalid_argument("Decoder: width must be positive");
  for (int s = 0; s < kNumStages; ++s) {
    projections_[s] = Conv2d(encoder_widths[s], width, 1, 1, 0, 1, rng, 1.0);
    blocks_[s] = DepthwiseSeparable(width, rng);
  }
}

Tensor Decoder::decode(std::span<const Tensor> skips) {
  if (skips.size() != kNumStages) throw std::invalid_argument("Decoder: expected four skip maps");
  Tensor state;  // D_5 = 0
  for (int s = kNumStages - 1; s >= 0; --s) {
    Tensor a = projections_[s].forward(skips[s]);
    if (!state.empty()) {
      if (state.shape() != a.shape())
        throw std::invalid_argument("Decoder: skip at stage " + std::to_string(s + 1) + " has shape " +
                                    to_string(a.shape()) + " but running state is " + to_string(state.shape()));
      a += state;
    }
    state = blocks_[s].forward(upsample2x(a));
  }
  return state;
}

std::array<Tensor, kNumStages> Decoder::backward(const Tensor& grad_d1) {
  std::array<Tensor, kNumStages> grads;
  Tensor g = grad_d1;
  for (int s = 0; s < kNumStages; ++s) {
    const Tensor g_a = upsample2x_backward(blocks_[s].backward(g));
    grads[s] = projections_[s].backward(g_a);
    g = g_a;
  }
  return grads;
}

void Decoder::collect(const std::string& prefix, ParamList& out) {
  for (int s = 0; s < kNumStages; ++s) {
    projections_[s].collect(prefix + ".proj" + std::to_string(s + 1), out);
    blocks_[s].collect(prefix + ".block" + std::to_string(s + 1), out);
  }
}

ReconstructionHead::ReconstructionHead(int width, Rng& rng) : conv_(width, 3, 1, 1, 0, 1, rng, kGainDefault) {}

Tensor ReconstructionHead::forward(const Tensor& d1) { return conv_.forward(upsample2x(d1)); }

Tensor ReconstructionHead::backward(const Tensor& grad_out) { return upsample2x_backward(conv_.backward(grad_out)); }

void ReconstructionHead::collect(const std::string& prefix, ParamList& out) { conv_.collect(prefix, out); }

MaskedAutoencoder::MaskedAutoencoder(const EncoderConfig& encoder, int decoder_width, Rng& rng)
    : encoder_(encoder, rng) {
  for (int m = 0; m < kNumModalities; ++m) {
    decoders_[m] = Decoder(encoder.widths, decoder_width, rng);
    heads_[m] = ReconstructionHead(decoder_width, rng);
  }
}

std::array<Tensor, kNumModalities> MaskedAutoencoder::forward(const ModalityInputs& masked_inputs) {
  pyramid_ = encoder_.encode(masked_inputs);
  std::array<Tensor, kNumModalities> out;
  for (int m = 0; m < kNumModalities; ++m) {
    decoded_[m] = decoders_[m].decode(pyramid_.maps[m]);
    out[m] = heads_[m].forward(decoded_[m]);
  }
  return out;
}

void MaskedAutoencoder::backward(std::span<const Tensor> grad_reconstruction) {
  if (grad_reconstruction.size() != kNumModalities) throw std::invalid_argument("MaskedAutoencoder::backward");
  PyramidGrad grads;
  for (int m = 0; m < kNumModalities; ++m) {
    auto g = decoders_[m].backward(heads_[m].backward(grad_reconstruction[m]));
    for (int s = 0; s < kNumStages; ++s) grads[m][s] = std::move(g[s]);
  }
  encoder_.backward(grads);
}

ParamList MaskedAutoencoder::parameters() {
  ParamList out;
  encoder_.collect("encoder", out);
  for (int m = 0; m < kNumModalities; ++m) {
    decoders_[m].collect(std::string("decoder.") + modality_name(m), out);
    heads_[m].collect(std::string("head.") + modality_name(m), out);
  }
  return out;
}

}  // namespace hamm
