#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "intriuap/core/error.hpp"
#include "intriuap/core/tensor.hpp"

namespace intriuap::optim {

struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameter tensors. Moment buffers are created on the
/// first step and matched to parameters by position.
template <Real T>
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {
    if (!(opt.learning_rate >= 0.0)) throw InvalidParameter("Adam learning rate must be >= 0");
    if (!(opt.beta1 >= 0.0 && opt.beta1 < 1.0) || !(opt.beta2 >= 0.0 && opt.beta2 < 1.0))
      throw InvalidParameter("Adam betas must lie in [0, 1)");
    if (!(opt.eps > 0.0)) throw InvalidParameter("Adam eps must be positive");
  }

  void set_learning_rate(double lr) { opt_.learning_rate = lr; }
  double learning_rate() const { return opt_.learning_rate; }
  std::size_t steps() const { return t_; }

  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (params.size() != grads.size()) throw ContractError("Adam: parameter and gradient lists differ in length");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    } else if (m_.size() != params.size()) {
      throw ContractError("Adam: parameter list changed between steps");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = *params[k];
      const Tensor<T>& g = *grads[k];
      tensor::require_same_shape(p, g, "Adam step");
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = g[i];
        const double mi = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
        const double vi = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] -= static_cast<T>(opt_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + opt_.eps));
      }
    }
  }

 private:
  AdamOptions opt_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

struct SgdOptions {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// SGD with heavy-ball momentum: buf = momentum * buf + g; p -= lr * buf.
template <Real T>
class Sgd {
 public:
  explicit Sgd(SgdOptions opt = {}) : opt_(opt) {
    if (!(opt.learning_rate >= 0.0)) throw InvalidParameter("SGD learning rate must be >= 0");
    if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) throw InvalidParameter("SGD momentum must lie in [0, 1)");
  }

  void set_learning_rate(double lr) { opt_.learning_rate = lr; }
  double learning_rate() const { return opt_.learning_rate; }

  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (params.size() != grads.size()) throw ContractError("SGD: parameter and gradient lists differ in length");
    if (buf_.empty())
      for (auto* p : params) buf_.emplace_back(p->shape());
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = *params[k];
      const Tensor<T>& g = *grads[k];
      tensor::require_same_shape(p, g, "SGD step");
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const T gi = g[i] + static_cast<T>(opt_.weight_decay) * p[i];
        buf_[k][i] = static_cast<T>(opt_.momentum) * buf_[k][i] + gi;
        p[i] -= static_cast<T>(opt_.learning_rate) * buf_[k][i];
      }
    }
  }

 private:
  SgdOptions opt_;
  std::vector<Tensor<T>> buf_;
};

/// Multiplies the base rate by gamma once every step_size epochs.
struct StepLR {
  std::size_t step_size = 1;
  double gamma = 0.5;

  /// The usual default: decay every max(1, epochs / 5) epochs.
  static StepLR for_epochs(std::size_t epochs, double gamma = 0.5) { return {std::max<std::size_t>(1, epochs / 5), gamma}; }

  double rate(double base, std::size_t epoch) const {
    if (step_size == 0) throw InvalidParameter("StepLR step size must be >= 1");
    return base * std::pow(gamma, static_cast<double>(epoch / step_size));
  }
};

}  // namespace intriuap::optim
