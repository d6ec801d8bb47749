#pragma once

#include <string>
#include <vector>

#include "hamm/checkpoint.hpp"
#include "hamm/nn.hpp"

namespace hamm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction and no weight decay.
class Adam {
 public:
  Adam(ParamList params, AdamConfig config);
  /// Applies one update from the accumulated gradients. Throws NumericError on
  /// a non-finite gradient.
  void step();
  void zero_grad() { zero_grads(params_); }
  long steps() const { return steps_; }
  const ParamList& parameters() const { return params_; }
  const AdamConfig& config() const { return config_; }
  /// Moments and step count under "adam.m.<name>", "adam.v.<name>" and the
  /// metadata key "adam.steps".
  void save_state(Checkpoint& checkpoint) const;
  void load_state(const Checkpoint& checkpoint);

 private:
  ParamList params_;
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  long steps_ = 0;
};

}  // namespace hamm
