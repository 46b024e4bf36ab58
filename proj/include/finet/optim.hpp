#pragma once

#include <cmath>
#include <vector>

#include "finet/tensor.hpp"

namespace finet {

// Adam with bias correction. State vectors are sized on first step and
// must then always be fed the same parameter list.
template <typename T>
class Adam {
 public:
  explicit Adam(T lr = static_cast<T>(1e-4), T beta1 = static_cast<T>(0.5),
                T beta2 = static_cast<T>(0.999), T eps = static_cast<T>(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads) {
    if (params.size() != grads.size()) throw DimensionError("adam param/grad count mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) throw DimensionError("adam state count mismatch");
    ++t_;
    const T c1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      const Tensor<T>& g = grads[i];
      if (!p.same_shape(g)) throw DimensionError("adam grad shape mismatch");
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mh = m[j] / c1;
        const T vh = v[j] / c2;
        p[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  T lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace finet
