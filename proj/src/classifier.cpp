#include "hamm/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hamm/errors.hpp"

namespace hamm {
namespace {

int last_width(const FeaturePyramid& pyramid) {
  if (pyramid.modalities.empty()) throw std::invalid_argument("fuse: empty pyramid");
  return pyramid.at(pyramid.modalities[0], kNumStages - 1).dim(1);
}

}  // namespace

Tensor fuse(const FeaturePyramid& pyramid) {
  const int C = last_width(pyramid);
  const Tensor& first = pyramid.at(pyramid.modalities[0], kNumStages - 1);
  const int N = first.dim(0);
  Tensor out({N, kNumModalities * C});
  for (int m : pyramid.modalities) {
    const Tensor& e = pyramid.at(m, kNumStages - 1);
    const int plane = e.dim(2) * e.dim(3);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double* p = e.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        double sum = 0.0;
        for (int i = 0; i < plane; ++i) sum += p[i];
        out[static_cast<std::size_t>(n) * kNumModalities * C + m * C + c] = sum / plane;
      }
  }
  return out;
}

PyramidGrad fuse_backward(const Tensor& grad_fusion, const FeaturePyramid& pyramid) {
  const int C = last_width(pyramid);
  PyramidGrad grads;
  for (int m : pyramid.modalities) {
    const Tensor& e = pyramid.at(m, kNumStages - 1);
    const int N = e.dim(0), plane = e.dim(2) * e.dim(3);
    Tensor g(e.shape());
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double v = grad_fusion[static_cast<std::size_t>(n) * kNumModalities * C + m * C + c] / plane;
        std::fill_n(g.data() + (static_cast<std::size_t>(n) * C + c) * plane, plane, v);
      }
    grads[m][kNumStages - 1] = std::move(g);
  }
  return grads;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_rows expects [N,K]");
  const int N = logits.dim(0), K = logits.dim(1);
  Tensor p(logits.shape());
  for (int n = 0; n < N; ++n) {
    const double* z = logits.data() + static_cast<std::size_t>(n) * K;
    double* out = p.data() + static_cast<std::size_t>(n) * K;
    const double mx = *std::max_element(z, z + K);
    double total = 0.0;
    for (int k = 0; k < K; ++k) total += (out[k] = std::exp(z[k] - mx));
    for (int k = 0; k < K; ++k) out[k] /= total;
  }
  return p;
}

CrossEntropy ce_loss(const Tensor& probabilities, std::span<const int> labels) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != static_cast<int>(labels.size()) || labels.empty())
    throw std::invalid_argument("ce_loss: one label per probability row required");
  const int N = probabilities.dim(0), K = probabilities.dim(1);
  CrossEntropy out;
  out.grad_logits = probabilities;
  for (int n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= K) throw std::invalid_argument("ce_loss: invalid label " + std::to_string(y));
    out.value -= std::log(std::max(probabilities[static_cast<std::size_t>(n) * K + y], 1e-12));
    out.grad_logits[static_cast<std::size_t>(n) * K + y] -= 1.0;
  }
  out.value /= N;
  out.grad_logits *= 1.0 / N;
  if (!std::isfinite(out.value)) throw NumericError("ce_loss: non-finite loss");
  return out;
}

ClassificationHead::ClassificationHead(int in, int hidden, Rng& rng, int classes)
    : fc1_(in, hidden, rng, kGainRelu), fc2_(hidden, classes, rng) {}

Tensor ClassificationHead::forward(const Tensor& fusion) {
  hidden_ = relu(fc1_.forward(fusion));
  return fc2_.forward(hidden_);
}

Tensor ClassificationHead::backward(const Tensor& grad_logits) {
  return fc1_.backward(relu_backward(fc2_.backward(grad_logits), hidden_));
}

void ClassificationHead::collect(const std::string& prefix, ParamList& out) {
  fc1_.collect(prefix + ".fc1", out);
  fc2_.collect(prefix + ".fc2", out);
}

HammClassifier::HammClassifier(const EncoderConfig& encoder, int hidden, Rng& rng)
    : encoder_(encoder, rng), head_(kNumModalities * encoder.widths[kNumStages - 1], hidden, rng) {}

Tensor HammClassifier::forward(const ModalityInputs& inputs, std::span<const int> modalities) {
  pyramid_ = encoder_.encode_subset(inputs, modalities);
  return head_.forward(fuse(pyramid_));
}

void HammClassifier::backward(const Tensor& grad_logits) {
  encoder_.backward(fuse_backward(head_.backward(grad_logits), pyramid_));
}

ParamList HammClassifier::parameters() {
  ParamList out;
  encoder_.collect("encoder", out);
  head_.collect("classifier", out);
  return out;
}

}  // namespace hamm
