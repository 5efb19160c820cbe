#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcthfr/tensor.hpp"

namespace mcthfr {

struct AdamWSettings {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. The decay is applied multiplicatively to
// the parameter before the bias-corrected Adam update, so a zero gradient
// with nonzero decay still shrinks the weights.
template <class Real>
class AdamW {
 public:
  explicit AdamW(AdamWSettings settings = {}) : s_(settings) {}

  void register_params(const std::vector<std::pair<std::string, TensorPtr<Real>>>& named) {
    for (const auto& [name, t] : named) {
      names_.push_back(name);
      params_.push_back(t);
      m_.emplace_back(t->size(), Real(0));
      v_.emplace_back(t->size(), Real(0));
    }
  }

  std::int64_t step_count() const { return step_; }
  const AdamWSettings& settings() const { return s_; }
  void set_lr(double lr) { s_.lr = lr; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(step_));
    const Real decay = static_cast<Real>(1.0 - s_.lr * s_.weight_decay);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = *params_[pi];
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const Real g = p.grad[i];
        if (!std::isfinite(g))
          throw std::runtime_error("adamw: non-finite gradient in parameter '" + names_[pi] + "'");
        p.values[i] *= decay;
        m[i] = static_cast<Real>(s_.beta1) * m[i] + static_cast<Real>(1.0 - s_.beta1) * g;
        v[i] = static_cast<Real>(s_.beta2) * v[i] + static_cast<Real>(1.0 - s_.beta2) * g * g;
        const Real mhat = m[i] / static_cast<Real>(bc1);
        const Real vhat = v[i] / static_cast<Real>(bc2);
        p.values[i] -= static_cast<Real>(s_.lr) * mhat / (std::sqrt(vhat) + static_cast<Real>(s_.eps));
      }
    }
  }

 private:
  AdamWSettings s_;
  std::int64_t step_ = 0;
  std::vector<std::string> names_;
  std::vector<TensorPtr<Real>> params_;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
};

}  // namespace mcthfr
