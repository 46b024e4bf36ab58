#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "finet/tensor.hpp"

namespace finet {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian over a latent code. log_var is clamped to
// [kLogVarMin, kLogVarMax] on construction so downstream exp() calls
// stay in a sane range.
template <typename T>
struct DiagonalGaussian {
  std::vector<T> mean;
  std::vector<T> log_var;

  DiagonalGaussian() = default;

  DiagonalGaussian(std::vector<T> m, std::vector<T> lv) : mean(std::move(m)), log_var(std::move(lv)) {
    if (mean.size() != log_var.size()) throw DimensionError("mean/log_var length mismatch");
    for (auto& v : log_var) {
      if (v < T(kLogVarMin)) v = T(kLogVarMin);
      if (v > T(kLogVarMax)) v = T(kLogVarMax);
    }
  }

  int dim() const { return static_cast<int>(mean.size()); }

  static DiagonalGaussian standard(int z) {
    return DiagonalGaussian(std::vector<T>(z, T(0)), std::vector<T>(z, T(0)));
  }
};

template <typename T>
struct LatentCode {
  std::vector<T> values;
  int dim() const { return static_cast<int>(values.size()); }
};

// z = mean + exp(0.5 * log_var) * noise, one noise value per dimension.
template <typename T>
LatentCode<T> sample_reparam(const DiagonalGaussian<T>& d, const std::vector<T>& noise) {
  if (noise.size() != d.mean.size()) throw DimensionError("noise length must match latent dim");
  LatentCode<T> z;
  z.values.resize(d.mean.size());
  for (std::size_t i = 0; i < d.mean.size(); ++i) {
    z.values[i] = d.mean[i] + std::exp(T(0.5) * d.log_var[i]) * noise[i];
  }
  return z;
}

// KL(q || N(0, I)) = sum_i 1/2 * (exp(lv) + m^2 - 1 - lv).
template <typename T>
T kl_to_standard(const DiagonalGaussian<T>& q) {
  T acc = 0;
  for (std::size_t i = 0; i < q.mean.size(); ++i) {
    acc += T(0.5) * (std::exp(q.log_var[i]) + q.mean[i] * q.mean[i] - T(1) - q.log_var[i]);
  }
  return acc;
}

// KL(q || p) for diagonal Gaussians:
// sum_i 1/2*exp(lq-lp) + 1/2*(mq-mp)^2*exp(-lp) - 1/2 + 1/2*(lp-lq).
template <typename T>
T kl_between(const DiagonalGaussian<T>& q, const DiagonalGaussian<T>& p) {
  if (q.dim() != p.dim()) throw DimensionError("kl_between: dimension mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < q.mean.size(); ++i) {
    const T dl = q.log_var[i] - p.log_var[i];
    const T dm = q.mean[i] - p.mean[i];
    acc += T(0.5) * std::exp(dl) + T(0.5) * dm * dm * std::exp(-p.log_var[i]) - T(0.5) + T(-0.5) * dl;
  }
  return acc;
}

// Analytic partials of kl_between w.r.t. all four parameter vectors.
// Shared by the autodiff op and the gradient tests.
template <typename T>
void kl_between_grad(const DiagonalGaussian<T>& q, const DiagonalGaussian<T>& p, std::vector<T>& d_mq,
                     std::vector<T>& d_lq, std::vector<T>& d_mp, std::vector<T>& d_lp) {
  if (q.dim() != p.dim()) throw DimensionError("kl_between_grad: dimension mismatch");
  const std::size_t n = q.mean.size();
  d_mq.resize(n);
  d_lq.resize(n);
  d_mp.resize(n);
  d_lp.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T e_dl = std::exp(q.log_var[i] - p.log_var[i]);
    const T inv_vp = std::exp(-p.log_var[i]);
    const T dm = q.mean[i] - p.mean[i];
    d_mq[i] = dm * inv_vp;
    d_mp[i] = -dm * inv_vp;
    d_lq[i] = T(0.5) * (e_dl - T(1));
    d_lp[i] = T(0.5) * (T(1) - e_dl - dm * dm * inv_vp);
  }
}

}  // namespace finet
