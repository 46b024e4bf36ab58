#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace finet {

// Thrown when tensor shapes do not line up with an operation's contract.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a value-level precondition is violated (e.g. a probability
// map whose channels do not sum to one).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor. Images and feature maps use HWC layout; conv
// weights use {kh, kw, in, out}.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_(), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_()) throw DimensionError("tensor data does not match shape");
  }

  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  std::size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // HWC accessors.
  T& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c]; }
  const T& at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }

  // 2-D accessor.
  T& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  const T& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

  // {kh, kw, in, out} conv-weight accessor.
  T& at(int ky, int kx, int ci, int co) {
    return data_[((static_cast<std::size_t>(ky) * shape_[1] + kx) * shape_[2] + ci) * shape_[3] + co];
  }
  const T& at(int ky, int kx, int ci, int co) const {
    return data_[((static_cast<std::size_t>(ky) * shape_[1] + kx) * shape_[2] + ci) * shape_[3] + co];
  }

  void fill(T v) { data_.assign(data_.size(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

 private:
  std::size_t numel_() const {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw DimensionError("tensor dims must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace finet
