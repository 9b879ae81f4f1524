#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "avb/errors.hpp"

namespace avb {

enum class OptimizerKind { sgd, momentum, adam };

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "momentum") return OptimizerKind::momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw validation_error("unknown optimizer '" + s + "' (expected sgd|momentum|adam)");
}

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

// First-order ascent on a flat parameter vector. Coordinates may be updated
// sparsely; Adam then behaves lazily (moments of untouched coordinates are
// left alone, bias correction uses the global step count).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t size, double momentum = 0.9, double beta2 = 0.999)
      : kind_(kind), beta1_(momentum), beta2_(beta2) {
    if (kind_ != OptimizerKind::sgd) first_.assign(size, 0.0);
    if (kind_ == OptimizerKind::adam) second_.assign(size, 0.0);
  }

  void begin_step() {
    ++steps_;
    if (kind_ == OptimizerKind::adam) {
      correction1_ = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
      correction2_ = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    }
  }

  // Moves `param` uphill along `grad`.
  void update(std::size_t i, double grad, double lr, double& param) {
    switch (kind_) {
      case OptimizerKind::sgd:
        param += lr * grad;
        break;
      case OptimizerKind::momentum:
        first_[i] = beta1_ * first_[i] + grad;
        param += lr * first_[i];
        break;
      case OptimizerKind::adam: {
        first_[i] = beta1_ * first_[i] + (1.0 - beta1_) * grad;
        second_[i] = beta2_ * second_[i] + (1.0 - beta2_) * grad * grad;
        const double mhat = first_[i] / correction1_;
        const double vhat = second_[i] / correction2_;
        param += lr * mhat / (std::sqrt(vhat) + kEpsilon);
        break;
      }
    }
  }

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    begin_step();
    for (std::size_t i = 0; i < params.size(); ++i) update(i, grad[i], lr, params[i]);
  }

  std::size_t steps() const { return steps_; }

 private:
  static constexpr double kEpsilon = 1e-8;
  OptimizerKind kind_;
  double beta1_;
  double beta2_;
  std::size_t steps_ = 0;
  double correction1_ = 1.0;
  double correction2_ = 1.0;
  std::vector<double> first_;
  std::vector<double> second_;
};

// Step size at a given epoch: lr / (1 + decay * epoch).
inline double scheduled_rate(double lr, double decay, std::size_t epoch) {
  return lr / (1.0 + decay * static_cast<double>(epoch));
}

}  // namespace avb
