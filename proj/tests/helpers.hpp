#pragma once

#include <cstring>

#include "lsanet/ops.hpp"
#include "lsanet/rng.hpp"

namespace testutil {

template <class T>
lsanet::Tensor<T> random_tensor(lsanet::Shape shape, lsanet::Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
  lsanet::Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
bool bit_equal(const lsanet::Tensor<T>& a, const lsanet::Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * a.numel()) == 0;
}

template <class T>
double max_abs_diff(const lsanet::Tensor<T>& a, const lsanet::Tensor<T>& b) {
  if (a.shape() != b.shape()) return 1e300;
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) -
                                     static_cast<double>(b.data()[i])));
  return worst;
}

}  // namespace testutil
