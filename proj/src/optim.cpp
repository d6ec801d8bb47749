#include "hamm/optim.hpp"

#include <cmath>

#include "hamm/errors.hpp"

namespace hamm {

Adam::Adam(ParamList params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  for (const auto& np : params_) {
    m_.emplace_back(np.param->value.shape());
    v_.emplace_back(np.param->value.shape());
  }
}

void Adam::step() {
  for (const auto& np : params_)
    if (!np.param->grad.all_finite()) throw NumericError("adam: non-finite gradient in " + np.name);
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k].param;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      p.value[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void Adam::save_state(Checkpoint& ck) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ck.tensors["adam.m." + params_[k].name] = m_[k];
    ck.tensors["adam.v." + params_[k].name] = v_[k];
  }
  ck.metadata["adam.steps"] = std::to_string(steps_);
}

void Adam::load_state(const Checkpoint& ck) {
  const auto it = ck.metadata.find("adam.steps");
  if (it == ck.metadata.end()) throw CheckpointError("checkpoint has no optimizer state");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto m = ck.tensors.find("adam.m." + params_[k].name);
    const auto v = ck.tensors.find("adam.v." + params_[k].name);
    if (m == ck.tensors.end() || v == ck.tensors.end() || m->second.shape() != m_[k].shape() ||
        v->second.shape() != v_[k].shape())
      throw CheckpointError("optimizer state missing or mismatched for " + params_[k].name);
    m_[k] = m->second;
    v_[k] = v->second;
  }
  steps_ = std::stol(it->second);
}

}  // namespace hamm
