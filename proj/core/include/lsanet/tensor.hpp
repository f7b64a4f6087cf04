#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "lsanet/common.hpp"

namespace lsanet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major tensor. Copies share the underlying buffer; the buffer
/// address doubles as the tensor's identity on a tape. Rank-0 tensors are
/// scalars (numel 1).
template <class T>
class Tensor {
 public:
  Tensor() = default;

  /// Allocates uninitialized storage.
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
    for (int64_t e : shape_)
      LSANET_CHECK(e > 0, "tensor extent must be positive, got shape " << shape_str(shape_));
    data_ = std::shared_ptr<T[]>(new T[static_cast<size_t>(numel_)]);
  }

  static Tensor zeros(Shape shape) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.numel(), T(0));
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.numel(), value);
    return t;
  }

  static Tensor scalar(T value) {
    Tensor t{Shape{}};
    t.data()[0] = value;
    return t;
  }

  static Tensor from(Shape shape, std::initializer_list<T> values) {
    Tensor t(std::move(shape));
    LSANET_CHECK(static_cast<int64_t>(values.size()) == t.numel(),
                 "value count " << values.size() << " does not fill shape "
                                << shape_str(t.shape()));
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor from(Shape shape, const std::vector<T>& values) {
    Tensor t(std::move(shape));
    LSANET_CHECK(static_cast<int64_t>(values.size()) == t.numel(),
                 "value count " << values.size() << " does not fill shape "
                                << shape_str(t.shape()));
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  int64_t dim(size_t i) const { return shape_[i]; }
  int64_t numel() const { return numel_; }
  bool defined() const { return data_ != nullptr; }

  T* data() { return data_.get(); }
  const T* data() const { return data_.get(); }

  /// Identity key for tape bookkeeping; shared by all copies of this tensor.
  const void* key() const { return data_.get(); }

  T item() const {
    LSANET_CHECK(numel_ == 1, "item() on tensor of shape " << shape_str(shape_));
    return data_.get()[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    LSANET_CHECK(idx.size() == shape_.size(), "index rank mismatch");
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) {
      off = off * shape_[d] + i;
      ++d;
    }
    return data_.get()[off];
  }

  /// Deep copy with a fresh identity.
  Tensor clone() const {
    Tensor t(shape_);
    std::copy(data(), data() + numel_, t.data());
    t.requires_grad = requires_grad;
    return t;
  }

  /// Reshaped deep copy (fresh identity, so tape bookkeeping stays unambiguous).
  Tensor reshaped(Shape shape) const {
    LSANET_CHECK(shape_numel(shape) == numel_,
                 "reshape " << shape_str(shape_) << " -> " << shape_str(shape)
                            << " changes element count");
    Tensor t(std::move(shape));
    std::copy(data(), data() + numel_, t.data());
    return t;
  }

  bool all_finite() const {
    const T* p = data();
    for (int64_t i = 0; i < numel_; ++i)
      if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
  }

  bool requires_grad = false;

 private:
  Shape shape_;
  std::shared_ptr<T[]> data_;
  int64_t numel_ = 0;
};

}  // namespace lsanet
