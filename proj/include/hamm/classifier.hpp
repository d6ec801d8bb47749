#pragma once

#include <span>
#include <string>
#include <vector>

#include "hamm/encoder.hpp"

namespace hamm {

inline constexpr int kNumClasses = 4;

/// GAP of each modality's last-stage map, concatenated fundus|oct|vf into
/// [N, 3*C4]. Modalities missing from the pyramid contribute zeros.
Tensor fuse(const FeaturePyramid& pyramid);
/// Spreads fusion-vector gradients back over the last-stage maps.
PyramidGrad fuse_backward(const Tensor& grad_fusion, const FeaturePyramid& pyramid);

/// Row-wise softmax of [N,K] logits.
Tensor softmax_rows(const Tensor& logits);

struct CrossEntropy {
  double value = 0.0;
  Tensor grad_logits;
};

/// Mean negative log-likelihood of the labels with log clamped at 1e-12;
/// the gradient is taken w.r.t. the logits that produced `probabilities`.
CrossEntropy ce_loss(const Tensor& probabilities, std::span<const int> labels);

/// Two fully connected layers with ReLU between them.
class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(int in, int hidden, Rng& rng, int classes = kNumClasses);

  Tensor forward(const Tensor& fusion);
  Tensor backward(const Tensor& grad_logits);
  void collect(const std::string& prefix, ParamList& out);

  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

 private:
  Linear fc1_, fc2_;
  Tensor hidden_;
};

/// Encoder, fusion and head.
class HammClassifier {
 public:
  HammClassifier() = default;
  HammClassifier(const EncoderConfig& encoder, int hidden, Rng& rng);

  /// Logits [N,4] using only the listed modalities.
  Tensor forward(const ModalityInputs& inputs, std::span<const int> modalities);
  void backward(const Tensor& grad_logits);

  Encoder& encoder() { return encoder_; }
  ClassificationHead& head() { return head_; }
  ParamList parameters();

 private:
  Encoder encoder_;
  ClassificationHead head_;
  FeaturePyramid pyramid_;
};

}  // namespace hamm
