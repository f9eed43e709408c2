#pragma once

#include <cmath>
#include <vector>

#include "stgeo/errors.hpp"

namespace stgeo {

enum class OptimizerKind { adam, adamw };

struct AdamConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled for adamw, L2-in-gradient for adam
};

/// Adam / AdamW with bias-corrected moments over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, AdamConfig config) : cfg_(config), m_(n, 0.0), v_(n, 0.0) {
    if (!(cfg_.learning_rate > 0)) throw DomainError("optimizer: learning rate must be > 0");
  }

  void step(std::vector<double>& params, const std::vector<double>& grad) { step(params.data(), grad.data()); }

  void step(double* params, const double* grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      double g = grad[i];
      if (cfg_.kind == OptimizerKind::adam && cfg_.weight_decay != 0.0) g += cfg_.weight_decay * params[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      if (cfg_.kind == OptimizerKind::adamw) params[i] -= cfg_.learning_rate * cfg_.weight_decay * params[i];
      params[i] -= cfg_.learning_rate * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
    }
  }

  long iterations() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace stgeo
