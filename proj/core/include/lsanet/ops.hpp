#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "lsanet/parallel.hpp"
#include "lsanet/rng.hpp"
#include "lsanet/tape.hpp"
#include "lsanet/tensor.hpp"

// Differentiable primitives. Every op computes its output eagerly and, when a
// tape is tracking any input, records a closure implementing its gradient
// rule. Gradients accumulate by summation into Tape::grad_buf, so a tensor
// used in several places receives the sum of its contributions.
//
// Shape convention throughout the kit: channels last. Grouped point features
// are (B, M, K, F): batch, regions, neighbors per region, channels.
namespace lsanet::ops {

namespace detail {

// b must match a trailing suffix of a's shape (an empty/rank-0 b broadcasts
// everywhere).
template <class T>
void check_suffix(const Tensor<T>& a, const Tensor<T>& b, const char* opname) {
  LSANET_CHECK(b.rank() <= a.rank() &&
                   std::equal(b.shape().begin(), b.shape().end(),
                              a.shape().end() - b.rank()),
               opname << ": shape " << shape_str(b.shape())
                      << " does not broadcast along trailing dims of "
                      << shape_str(a.shape()));
}

inline void split_axis(const Shape& s, int axis, int64_t& outer, int64_t& mid,
                       int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  mid = s[axis];
  inner = 1;
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

inline Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) out.push_back(s[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  detail::check_suffix(a, b, "add");
  Tensor<T> out(a.shape());
  const int64_t bn = b.numel(), n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  parallel_for(n / bn, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t j = 0; j < bn; ++j) po[r * bn + j] = pa[r * bn + j] + pb[j];
  });
  if (tape) {
    int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0)
      tape->record({na, nb}, out, [na, nb, bn, n](Tape<T>& tp, const Tensor<T>& g) {
        if (na >= 0) tp.add_grad(na, g);
        if (nb >= 0) {
          T* gb = tp.grad_buf(nb).data();
          const T* pg = g.data();
          for (int64_t r = 0; r < n / bn; ++r)
            for (int64_t j = 0; j < bn; ++j) gb[j] += pg[r * bn + j];
        }
      });
  }
  return out;
}

/// Elementwise product; b broadcastable along trailing dims. Gradient is the
/// swapped-operand product.
template <class T>
Tensor<T> ew_mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  detail::check_suffix(a, b, "ew_mul");
  Tensor<T> out(a.shape());
  const int64_t bn = b.numel(), n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  parallel_for(n / bn, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t j = 0; j < bn; ++j) po[r * bn + j] = pa[r * bn + j] * pb[j];
  });
  if (tape) {
    int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0)
      tape->record({na, nb}, out, [na, nb, a, b](Tape<T>& tp, const Tensor<T>& g) {
        const int64_t bn = b.numel(), n = a.numel();
        const T* pg = g.data();
        if (na >= 0) {
          T* ga = tp.grad_buf(na).data();
          const T* pb = b.data();
          parallel_for(n / bn, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r)
              for (int64_t j = 0; j < bn; ++j) ga[r * bn + j] += pg[r * bn + j] * pb[j];
          });
        }
        if (nb >= 0) {
          T* gb = tp.grad_buf(nb).data();
          const T* pa = a.data();
          for (int64_t r = 0; r < n / bn; ++r)
            for (int64_t j = 0; j < bn; ++j) gb[j] += pg[r * bn + j] * pa[r * bn + j];
        }
      });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c, Tape<T>* tape = nullptr) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * c;
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, c](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += pg[i] * c;
      });
  }
  return out;
}

// ---------------------------------------------------------------------------
// contractions

/// a (..., m, k) x b (k, n) -> (..., m, n).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  LSANET_CHECK(a.rank() >= 2 && b.rank() == 2,
               "matmul: need a (..., m, k) and b (k, n), got " << shape_str(a.shape())
                                                               << " and " << shape_str(b.shape()));
  const int64_t k = a.shape().back();
  const int64_t n = b.dim(1);
  LSANET_CHECK(b.dim(0) == k, "matmul: inner extents disagree, " << shape_str(a.shape())
                                                                 << " vs " << shape_str(b.shape()));
  Shape os = a.shape();
  os.back() = n;
  Tensor<T> out(os);
  const int64_t rows = a.numel() / k;
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  parallel_for(rows, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      T* o = po + r * n;
      std::fill(o, o + n, T(0));
      const T* ar = pa + r * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        const T s = ar[kk];
        const T* br = pb + kk * n;
        for (int64_t j = 0; j < n; ++j) o[j] += s * br[j];
      }
    }
  }, 64);
  if (tape) {
    int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0)
      tape->record({na, nb}, out, [na, nb, a, b, rows, k, n](Tape<T>& tp, const Tensor<T>& g) {
        const T* pg = g.data();
        if (na >= 0) {
          // ga = g . b^T
          Tensor<T> bt({n, k});
          const T* pb = b.data();
          T* pbt = bt.data();
          for (int64_t kk = 0; kk < k; ++kk)
            for (int64_t j = 0; j < n; ++j) pbt[j * k + kk] = pb[kk * n + j];
          T* ga = tp.grad_buf(na).data();
          parallel_for(rows, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
              T* gr = ga + r * k;
              const T* grow = pg + r * n;
              for (int64_t j = 0; j < n; ++j) {
                const T s = grow[j];
                const T* btr = pbt + j * k;
                for (int64_t kk = 0; kk < k; ++kk) gr[kk] += s * btr[kk];
              }
            }
          }, 64);
        }
        if (nb >= 0) {
          // gb = sum_r a_r^T g_r, per-chunk partials folded in fixed order
          const int chunks = num_chunks(rows, 64);
          std::vector<std::vector<T>> part(chunks, std::vector<T>(k * n, T(0)));
          const T* pa = a.data();
          parallel_for_chunked(rows, [&](int c, int64_t r0, int64_t r1) {
            T* acc = part[c].data();
            for (int64_t r = r0; r < r1; ++r) {
              const T* ar = pa + r * k;
              const T* grow = pg + r * n;
              for (int64_t kk = 0; kk < k; ++kk) {
                const T s = ar[kk];
                if (s == T(0)) continue;
                T* accr = acc + kk * n;
                for (int64_t j = 0; j < n; ++j) accr[j] += s * grow[j];
              }
            }
          }, 64);
          T* gb = tp.grad_buf(nb).data();
          for (int c = 0; c < chunks; ++c)
            for (int64_t i = 0; i < k * n; ++i) gb[i] += part[c][i];
        }
      });
  }
  return out;
}

/// Pointwise linear map: x (..., k) with weight w (n, k) -> (..., n).
/// This is the shared-MLP building block; w rows are output channels.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, Tape<T>* tape = nullptr) {
  LSANET_CHECK(x.rank() >= 1 && w.rank() == 2 && x.shape().back() == w.dim(1),
               "linear: input " << shape_str(x.shape()) << " incompatible with weight "
                                << shape_str(w.shape()));
  const int64_t k = w.dim(1), n = w.dim(0);
  const int64_t rows = x.numel() / k;
  Shape os = x.shape();
  os.back() = n;
  Tensor<T> out(os);
  // Transposed weight (k, n) so the inner loop runs lane-wise over outputs.
  Tensor<T> wt({k, n});
  {
    const T* pw = w.data();
    T* pwt = wt.data();
    for (int64_t o = 0; o < n; ++o)
      for (int64_t kk = 0; kk < k; ++kk) pwt[kk * n + o] = pw[o * k + kk];
  }
  const T* px = x.data();
  const T* pwt = wt.data();
  T* po = out.data();
  parallel_for(rows, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      T* o = po + r * n;
      std::fill(o, o + n, T(0));
      const T* xr = px + r * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        const T s = xr[kk];
        const T* wr = pwt + kk * n;
        for (int64_t j = 0; j < n; ++j) o[j] += s * wr[j];
      }
    }
  }, 64);
  if (tape) {
    int nx = tape->node_of(x), nw = tape->node_of(w);
    if (nx >= 0 || nw >= 0)
      tape->record({nx, nw}, out, [nx, nw, x, w, rows, k, n](Tape<T>& tp, const Tensor<T>& g) {
        const T* pg = g.data();
        if (nx >= 0) {
          // gx = g . w  (w is (n, k), rows contiguous in k)
          T* gx = tp.grad_buf(nx).data();
          const T* pw = w.data();
          parallel_for(rows, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
              T* gr = gx + r * k;
              const T* grow = pg + r * n;
              for (int64_t j = 0; j < n; ++j) {
                const T s = grow[j];
                const T* wr = pw + j * k;
                for (int64_t kk = 0; kk < k; ++kk) gr[kk] += s * wr[kk];
              }
            }
          }, 64);
        }
        if (nw >= 0) {
          // gw[o, :] = sum_r g[r, o] * x[r, :]
          const int chunks = num_chunks(rows, 64);
          std::vector<std::vector<T>> part(chunks, std::vector<T>(n * k, T(0)));
          const T* px = x.data();
          parallel_for_chunked(rows, [&](int c, int64_t r0, int64_t r1) {
            T* acc = part[c].data();
            for (int64_t r = r0; r < r1; ++r) {
              const T* xr = px + r * k;
              const T* grow = pg + r * n;
              for (int64_t j = 0; j < n; ++j) {
                const T s = grow[j];
                if (s == T(0)) continue;
                T* accr = acc + j * k;
                for (int64_t kk = 0; kk < k; ++kk) accr[kk] += s * xr[kk];
              }
            }
          }, 64);
          T* gw = tp.grad_buf(nw).data();
          for (int c = 0; c < chunks; ++c)
            for (int64_t i = 0; i < n * k; ++i) gw[i] += part[c][i];
        }
      });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

/// Numerically stable logistic; outputs clamped into the open interval (0, 1)
/// so saturated values never collapse to exactly 0 or 1.
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  static const T kLo = std::numeric_limits<T>::min();
  static const T kHi = T(1) - std::numeric_limits<T>::epsilon() / 2;
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  parallel_for(x.numel(), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T v = px[i];
      T y;
      if (v >= T(0)) {
        y = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        y = e / (T(1) + e);
      }
      po[i] = std::min(std::max(y, kLo), kHi);
    }
  });
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, out](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        const T* py = out.data();
        parallel_for(g.numel(), [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) gx[i] += pg[i] * py[i] * (T(1) - py[i]);
        });
      });
  }
  return out;
}

/// max(x, 0); subgradient at 0 is 0.
template <class T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  parallel_for(x.numel(), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  });
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, x](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        const T* px = x.data();
        parallel_for(g.numel(), [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i)
            if (px[i] > T(0)) gx[i] += pg[i];
        });
      });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
struct MaxOut {
  Tensor<T> values;
  std::shared_ptr<std::vector<int64_t>> argmax;  // per reduced slice
};

/// Max along one axis; ties resolve to the lowest index and the gradient
/// routes entirely to the recorded argmax slot (1-sparse per slice).
template <class T>
MaxOut<T> reduce_max(const Tensor<T>& x, int axis, Tape<T>* tape = nullptr) {
  LSANET_CHECK(axis >= 0 && axis < static_cast<int>(x.rank()),
               "reduce_max: axis " << axis << " out of range for " << shape_str(x.shape()));
  int64_t outer, mid, inner;
  detail::split_axis(x.shape(), axis, outer, mid, inner);
  LSANET_CHECK(mid > 0, "reduce_max over empty axis");
  Tensor<T> out(detail::drop_axis(x.shape(), axis));
  auto arg = std::make_shared<std::vector<int64_t>>(outer * inner);
  const T* px = x.data();
  T* po = out.data();
  int64_t* pa = arg->data();
  parallel_for(outer, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o) {
      const T* base = px + o * mid * inner;
      T* orow = po + o * inner;
      int64_t* arow = pa + o * inner;
      for (int64_t i = 0; i < inner; ++i) {
        orow[i] = base[i];
        arow[i] = 0;
      }
      for (int64_t m = 1; m < mid; ++m) {
        const T* row = base + m * inner;
        for (int64_t i = 0; i < inner; ++i) {
          if (row[i] > orow[i]) {
            orow[i] = row[i];
            arow[i] = m;
          }
        }
      }
    }
  }, 64);
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, arg, outer, mid, inner](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        const int64_t* pa = arg->data();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < inner; ++i)
            gx[o * mid * inner + pa[o * inner + i] * inner + i] += pg[o * inner + i];
      });
  }
  return {out, arg};
}

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& x, int axis, Tape<T>* tape = nullptr) {
  LSANET_CHECK(axis >= 0 && axis < static_cast<int>(x.rank()),
               "reduce_sum: axis " << axis << " out of range for " << shape_str(x.shape()));
  int64_t outer, mid, inner;
  detail::split_axis(x.shape(), axis, outer, mid, inner);
  Tensor<T> out = Tensor<T>::zeros(detail::drop_axis(x.shape(), axis));
  const T* px = x.data();
  T* po = out.data();
  parallel_for(outer, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o) {
      T* orow = po + o * inner;
      for (int64_t m = 0; m < mid; ++m) {
        const T* row = px + (o * mid + m) * inner;
        for (int64_t i = 0; i < inner; ++i) orow[i] += row[i];
      }
    }
  }, 64);
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, outer, mid, inner](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t m = 0; m < mid; ++m)
            for (int64_t i = 0; i < inner; ++i)
              gx[(o * mid + m) * inner + i] += pg[o * inner + i];
      });
  }
  return out;
}

/// Arithmetic mean along one axis; gradient distributes 1/mid to each slot.
template <class T>
Tensor<T> reduce_mean(const Tensor<T>& x, int axis, Tape<T>* tape = nullptr) {
  LSANET_CHECK(axis >= 0 && axis < static_cast<int>(x.rank()),
               "reduce_mean: axis " << axis << " out of range for " << shape_str(x.shape()));
  int64_t outer, mid, inner;
  detail::split_axis(x.shape(), axis, outer, mid, inner);
  LSANET_CHECK(mid > 0, "reduce_mean over empty axis");
  Tensor<T> out = Tensor<T>::zeros(detail::drop_axis(x.shape(), axis));
  const T* px = x.data();
  T* po = out.data();
  const T invm = T(1) / static_cast<T>(mid);
  parallel_for(outer, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o) {
      T* orow = po + o * inner;
      for (int64_t m = 0; m < mid; ++m) {
        const T* row = px + (o * mid + m) * inner;
        for (int64_t i = 0; i < inner; ++i) orow[i] += row[i];
      }
      for (int64_t i = 0; i < inner; ++i) orow[i] *= invm;
    }
  }, 64);
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, outer, mid, inner, invm](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t m = 0; m < mid; ++m)
            for (int64_t i = 0; i < inner; ++i)
              gx[(o * mid + m) * inner + i] += pg[o * inner + i] * invm;
      });
  }
  return out;
}

/// Sum of all elements as a rank-0 scalar.
template <class T>
Tensor<T> sum_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  T s = 0;
  const T* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) s += px[i];
  Tensor<T> out = Tensor<T>::scalar(s);
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& buf = tp.grad_buf(nx);
        const T gv = g.data()[0];
        T* gx = buf.data();
        for (int64_t i = 0; i < buf.numel(); ++i) gx[i] += gv;
      });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

/// Join two tensors along `axis`; all other extents must agree. The gradient
/// splits back by the original extents.
template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis, Tape<T>* tape = nullptr) {
  LSANET_CHECK(a.rank() == b.rank() && axis >= 0 && axis < static_cast<int>(a.rank()),
               "concat: rank/axis mismatch, " << shape_str(a.shape()) << " vs "
                                              << shape_str(b.shape()) << " axis " << axis);
  for (size_t i = 0; i < a.rank(); ++i)
    LSANET_CHECK(static_cast<int>(i) == axis || a.dim(i) == b.dim(i),
                 "concat: shapes " << shape_str(a.shape()) << " and " << shape_str(b.shape())
                                   << " differ outside axis " << axis);
  int64_t outer, amid, inner;
  detail::split_axis(a.shape(), axis, outer, amid, inner);
  const int64_t bmid = b.dim(axis);
  Shape os = a.shape();
  os[axis] = amid + bmid;
  Tensor<T> out(os);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t arow = amid * inner, brow = bmid * inner, orow = arow + brow;
  parallel_for(outer, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o) {
      std::copy(pa + o * arow, pa + (o + 1) * arow, po + o * orow);
      std::copy(pb + o * brow, pb + (o + 1) * brow, po + o * orow + arow);
    }
  }, 64);
  if (tape) {
    int na = tape->node_of(a), nb = tape->node_of(b);
    if (na >= 0 || nb >= 0)
      tape->record({na, nb}, out, [na, nb, outer, arow, brow, orow](Tape<T>& tp, const Tensor<T>& g) {
        const T* pg = g.data();
        if (na >= 0) {
          T* ga = tp.grad_buf(na).data();
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < arow; ++i) ga[o * arow + i] += pg[o * orow + i];
        }
        if (nb >= 0) {
          T* gb = tp.grad_buf(nb).data();
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < brow; ++i) gb[o * brow + i] += pg[o * orow + arow + i];
        }
      });
  }
  return out;
}

/// Insert a new axis of extent `count` at position `axis`, replicating the
/// input. Gradient sums over the inserted axis.
template <class T>
Tensor<T> expand(const Tensor<T>& x, int axis, int64_t count, Tape<T>* tape = nullptr) {
  LSANET_CHECK(axis >= 0 && axis <= static_cast<int>(x.rank()) && count > 0,
               "expand: bad axis " << axis << " or count " << count);
  Shape os = x.shape();
  os.insert(os.begin() + axis, count);
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  const int64_t inner = x.numel() / outer;
  Tensor<T> out(os);
  const T* px = x.data();
  T* po = out.data();
  parallel_for(outer, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o)
      for (int64_t c = 0; c < count; ++c)
        std::copy(px + o * inner, px + (o + 1) * inner, po + (o * count + c) * inner);
  }, 64);
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, outer, count, inner](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t c = 0; c < count; ++c)
            for (int64_t i = 0; i < inner; ++i)
              gx[o * inner + i] += pg[(o * count + c) * inner + i];
      });
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape, Tape<T>* tape = nullptr) {
  Tensor<T> out = x.reshaped(std::move(shape));
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += pg[i];
      });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization / regularization

/// Channels-last batch norm. Train mode normalizes by batch statistics over
/// all non-channel axes and blends running stats
/// (running = momentum * running + (1 - momentum) * batch); infer mode uses
/// the running stats. Biased variance, epsilon-guarded.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, T eps, T momentum,
                     Mode mode, Tape<T>* tape = nullptr) {
  const int64_t c = x.shape().back();
  LSANET_CHECK(gamma.numel() == c && beta.numel() == c && running_mean.numel() == c &&
                   running_var.numel() == c,
               "batch_norm: channel extent " << c << " does not match params ("
                                             << gamma.numel() << ")");
  const int64_t rows = x.numel() / c;
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const T* pgm = gamma.data();
  const T* pbt = beta.data();

  if (mode == Mode::kInfer) {
    std::vector<T> sc(c), sh(c);
    const T* rm = running_mean.data();
    const T* rv = running_var.data();
    for (int64_t j = 0; j < c; ++j) {
      sc[j] = pgm[j] / std::sqrt(rv[j] + eps);
      sh[j] = pbt[j] - rm[j] * sc[j];
    }
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r)
        for (int64_t j = 0; j < c; ++j) po[r * c + j] = px[r * c + j] * sc[j] + sh[j];
    }, 64);
    if (tape) {
      int nx = tape->node_of(x), ng = tape->node_of(gamma), nb = tape->node_of(beta);
      if (nx >= 0 || ng >= 0 || nb >= 0) {
        auto scale_v = std::make_shared<std::vector<T>>(sc);
        Tensor<T> rm_copy = running_mean.clone();
        Tensor<T> rv_copy = running_var.clone();
        tape->record({nx, ng, nb}, out,
                     [nx, ng, nb, x, rm_copy, rv_copy, scale_v, eps, rows, c](
                         Tape<T>& tp, const Tensor<T>& g) {
                       const T* pg = g.data();
                       const T* px = x.data();
                       if (nx >= 0) {
                         T* gx = tp.grad_buf(nx).data();
                         const T* sc = scale_v->data();
                         for (int64_t r = 0; r < rows; ++r)
                           for (int64_t j = 0; j < c; ++j) gx[r * c + j] += pg[r * c + j] * sc[j];
                       }
                       if (ng >= 0) {
                         T* gg = tp.grad_buf(ng).data();
                         const T* rm = rm_copy.data();
                         const T* rv = rv_copy.data();
                         for (int64_t r = 0; r < rows; ++r)
                           for (int64_t j = 0; j < c; ++j)
                             gg[j] += pg[r * c + j] * (px[r * c + j] - rm[j]) /
                                      std::sqrt(rv[j] + eps);
                       }
                       if (nb >= 0) {
                         T* gb = tp.grad_buf(nb).data();
                         for (int64_t r = 0; r < rows; ++r)
                           for (int64_t j = 0; j < c; ++j) gb[j] += pg[r * c + j];
                       }
                     });
      }
    }
    return out;
  }

  // train mode: batch statistics in double, fixed ascending accumulation order
  auto mean = std::make_shared<std::vector<T>>(c);
  auto inv_std = std::make_shared<std::vector<T>>(c);
  {
    std::vector<double> sum(c, 0.0), sumsq(c, 0.0);
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = px + r * c;
      for (int64_t j = 0; j < c; ++j) {
        const double v = static_cast<double>(row[j]);
        sum[j] += v;
        sumsq[j] += v * v;
      }
    }
    T* rm = running_mean.data();
    T* rv = running_var.data();
    for (int64_t j = 0; j < c; ++j) {
      const double m = sum[j] / rows;
      double var = sumsq[j] / rows - m * m;
      if (var < 0) var = 0;
      (*mean)[j] = static_cast<T>(m);
      (*inv_std)[j] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      rm[j] = momentum * rm[j] + (T(1) - momentum) * static_cast<T>(m);
      rv[j] = momentum * rv[j] + (T(1) - momentum) * static_cast<T>(var);
    }
  }
  const T* pm = mean->data();
  const T* pis = inv_std->data();
  parallel_for(rows, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t j = 0; j < c; ++j)
        po[r * c + j] = (px[r * c + j] - pm[j]) * pis[j] * pgm[j] + pbt[j];
  }, 64);
  if (tape) {
    int nx = tape->node_of(x), ng = tape->node_of(gamma), nb = tape->node_of(beta);
    if (nx >= 0 || ng >= 0 || nb >= 0)
      tape->record(
          {nx, ng, nb}, out,
          [nx, ng, nb, x, gamma, mean, inv_std, rows, c](Tape<T>& tp, const Tensor<T>& g) {
            const T* pg = g.data();
            const T* px = x.data();
            const T* pm = mean->data();
            const T* pis = inv_std->data();
            // per-channel sums of g and g*xhat
            std::vector<T> sg(c, T(0)), sgx(c, T(0));
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t j = 0; j < c; ++j) {
                const T xh = (px[r * c + j] - pm[j]) * pis[j];
                sg[j] += pg[r * c + j];
                sgx[j] += pg[r * c + j] * xh;
              }
            if (ng >= 0) {
              T* gg = tp.grad_buf(ng).data();
              for (int64_t j = 0; j < c; ++j) gg[j] += sgx[j];
            }
            if (nb >= 0) {
              T* gb = tp.grad_buf(nb).data();
              for (int64_t j = 0; j < c; ++j) gb[j] += sg[j];
            }
            if (nx >= 0) {
              T* gx = tp.grad_buf(nx).data();
              const T* pgm = gamma.data();
              const T invn = T(1) / static_cast<T>(rows);
              parallel_for(rows, [&](int64_t r0, int64_t r1) {
                for (int64_t r = r0; r < r1; ++r)
                  for (int64_t j = 0; j < c; ++j) {
                    const T xh = (px[r * c + j] - pm[j]) * pis[j];
                    gx[r * c + j] += pgm[j] * pis[j] *
                                     (pg[r * c + j] - invn * (sg[j] + xh * sgx[j]));
                  }
              }, 64);
            }
          });
  }
  return out;
}

/// Inverted dropout. Identity in infer mode or at rate 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, T rate, Rng& rng, Mode mode, Tape<T>* tape = nullptr) {
  LSANET_CHECK(rate >= T(0) && rate < T(1), "dropout rate must be in [0, 1), got " << rate);
  if (mode == Mode::kInfer || rate == T(0)) return x;
  const T keep = T(1) - rate;
  const T inv = T(1) / keep;
  auto mask = std::make_shared<std::vector<uint8_t>>(x.numel());
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const bool on = rng.uniform() >= static_cast<double>(rate);
    (*mask)[i] = on;
    po[i] = on ? px[i] * inv : T(0);
  }
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, mask, inv](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t i = 0; i < g.numel(); ++i)
          if ((*mask)[i]) gx[i] += pg[i] * inv;
      });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gathering

/// x (B, N, F) gathered at idx (B*M row-major) -> (B, M, F).
template <class T>
Tensor<T> gather_points(const Tensor<T>& x, const std::vector<int64_t>& idx, int64_t m,
                        Tape<T>* tape = nullptr) {
  LSANET_CHECK(x.rank() == 3, "gather_points: expected (B, N, F), got " << shape_str(x.shape()));
  const int64_t b = x.dim(0), n = x.dim(1), f = x.dim(2);
  LSANET_CHECK(static_cast<int64_t>(idx.size()) == b * m, "gather_points: index count mismatch");
  Tensor<T> out({b, m, f});
  const T* px = x.data();
  T* po = out.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t mi = 0; mi < m; ++mi) {
      const int64_t src = idx[bi * m + mi];
      LSANET_CHECK(src >= 0 && src < n, "gather_points: index " << src << " out of range " << n);
      std::copy(px + (bi * n + src) * f, px + (bi * n + src + 1) * f, po + (bi * m + mi) * f);
    }
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0) {
      auto saved = std::make_shared<std::vector<int64_t>>(idx);
      tape->record({nx}, out, [nx, saved, b, n, m, f](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t mi = 0; mi < m; ++mi) {
            const int64_t dst = (*saved)[bi * m + mi];
            for (int64_t j = 0; j < f; ++j)
              gx[(bi * n + dst) * f + j] += pg[(bi * m + mi) * f + j];
          }
      });
    }
  }
  return out;
}

/// x (B, N, F) grouped at idx (B*M*K row-major) -> (B, M, K, F).
template <class T>
Tensor<T> group_points(const Tensor<T>& x, const std::vector<int64_t>& idx, int64_t m, int64_t k,
                       Tape<T>* tape = nullptr) {
  LSANET_CHECK(x.rank() == 3, "group_points: expected (B, N, F), got " << shape_str(x.shape()));
  const int64_t b = x.dim(0), n = x.dim(1), f = x.dim(2);
  LSANET_CHECK(static_cast<int64_t>(idx.size()) == b * m * k, "group_points: index count mismatch");
  Tensor<T> out({b, m, k, f});
  const T* px = x.data();
  T* po = out.data();
  parallel_for(b, [&](int64_t b0, int64_t b1) {
    for (int64_t bi = b0; bi < b1; ++bi)
      for (int64_t r = 0; r < m * k; ++r) {
        const int64_t src = idx[bi * m * k + r];
        std::copy(px + (bi * n + src) * f, px + (bi * n + src + 1) * f,
                  po + (bi * m * k + r) * f);
      }
  }, 1);
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0) {
      auto saved = std::make_shared<std::vector<int64_t>>(idx);
      tape->record({nx}, out, [nx, saved, b, n, m, k, f](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        parallel_for(b, [&](int64_t b0, int64_t b1) {
          for (int64_t bi = b0; bi < b1; ++bi)
            for (int64_t r = 0; r < m * k; ++r) {
              const int64_t dst = (*saved)[bi * m * k + r];
              for (int64_t j = 0; j < f; ++j)
                gx[(bi * n + dst) * f + j] += pg[(bi * m * k + r) * f + j];
            }
        }, 1);
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// region means

/// Mean over the K axis of (B, M, K, D) with the K summands accumulated in a
/// content-canonical (lexicographically sorted) order, so any permutation of
/// the K slots produces a bit-identical mean. The gradient is uniform 1/K.
template <class T>
Tensor<T> canonical_mean_k(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  LSANET_CHECK(x.rank() == 4, "canonical_mean_k: expected (B, M, K, D), got "
                                  << shape_str(x.shape()));
  const int64_t b = x.dim(0), m = x.dim(1), k = x.dim(2), d = x.dim(3);
  Tensor<T> out({b, m, d});
  const T* px = x.data();
  T* po = out.data();
  const T invk = T(1) / static_cast<T>(k);
  parallel_for(b * m, [&](int64_t g0, int64_t g1) {
    std::vector<int64_t> ord(k);
    for (int64_t g = g0; g < g1; ++g) {
      const T* base = px + g * k * d;
      for (int64_t i = 0; i < k; ++i) ord[i] = i;
      std::sort(ord.begin(), ord.end(), [&](int64_t a2, int64_t b2) {
        return std::lexicographical_compare(base + a2 * d, base + (a2 + 1) * d,
                                            base + b2 * d, base + (b2 + 1) * d);
      });
      T* orow = po + g * d;
      std::fill(orow, orow + d, T(0));
      for (int64_t i = 0; i < k; ++i) {
        const T* row = base + ord[i] * d;
        for (int64_t j = 0; j < d; ++j) orow[j] += row[j];
      }
      for (int64_t j = 0; j < d; ++j) orow[j] *= invk;
    }
  }, 64);
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0)
      tape->record({nx}, out, [nx, b, m, k, d, invk](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t gi = 0; gi < b * m; ++gi)
          for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < d; ++j)
              gx[(gi * k + i) * d + j] += pg[gi * d + j] * invk;
      });
  }
  return out;
}

/// Mean over only the first valid_counts[region] slots of (B, M, K, D);
/// companion to ball-query padding, which packs real neighbors first.
template <class T>
Tensor<T> masked_mean_k(const Tensor<T>& x, const std::vector<int>& valid_counts,
                        Tape<T>* tape = nullptr) {
  LSANET_CHECK(x.rank() == 4, "masked_mean_k: expected (B, M, K, D), got "
                                  << shape_str(x.shape()));
  const int64_t b = x.dim(0), m = x.dim(1), k = x.dim(2), d = x.dim(3);
  LSANET_CHECK(static_cast<int64_t>(valid_counts.size()) == b * m,
               "masked_mean_k: valid_counts size mismatch");
  Tensor<T> out({b, m, d});
  const T* px = x.data();
  T* po = out.data();
  for (int64_t g = 0; g < b * m; ++g) {
    const int vc = valid_counts[g];
    LSANET_CHECK(vc >= 1 && vc <= k, "masked_mean_k: valid count " << vc << " outside [1, " << k << "]");
    const T* base = px + g * k * d;
    T* orow = po + g * d;
    std::fill(orow, orow + d, T(0));
    for (int i = 0; i < vc; ++i)
      for (int64_t j = 0; j < d; ++j) orow[j] += base[i * d + j];
    for (int64_t j = 0; j < d; ++j) orow[j] /= static_cast<T>(vc);
  }
  if (tape) {
    int nx = tape->node_of(x);
    if (nx >= 0) {
      auto counts = std::make_shared<std::vector<int>>(valid_counts);
      tape->record({nx}, out, [nx, counts, b, m, k, d](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T* pg = g.data();
        for (int64_t gi = 0; gi < b * m; ++gi) {
          const T inv = T(1) / static_cast<T>((*counts)[gi]);
          for (int i = 0; i < (*counts)[gi]; ++i)
            for (int64_t j = 0; j < d; ++j)
              gx[(gi * k + i) * d + j] += pg[gi * d + j] * inv;
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// loss

/// Mean over the batch of negative log-softmax at the label, computed via a
/// stable log-sum-exp. Logits are (B, C).
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        Tape<T>* tape = nullptr) {
  LSANET_CHECK(logits.rank() == 2, "cross_entropy: logits must be (B, C), got "
                                       << shape_str(logits.shape()));
  const int64_t b = logits.dim(0), c = logits.dim(1);
  LSANET_CHECK(static_cast<int64_t>(labels.size()) == b, "cross_entropy: label count mismatch");
  const T* pl = logits.data();
  double total = 0;
  for (int64_t r = 0; r < b; ++r) {
    const int y = labels[r];
    LSANET_CHECK(y >= 0 && y < c, "cross_entropy: label " << y << " out of range " << c);
    const T* row = pl + r * c;
    T mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double se = 0;
    for (int64_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(row[j] - mx));
    total += static_cast<double>(mx) + std::log(se) - static_cast<double>(row[y]);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / b));
  if (tape) {
    int nx = tape->node_of(logits);
    if (nx >= 0) {
      auto saved = std::make_shared<std::vector<int>>(labels);
      tape->record({nx}, out, [nx, logits, saved, b, c](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad_buf(nx).data();
        const T gv = g.data()[0] / static_cast<T>(b);
        const T* pl = logits.data();
        for (int64_t r = 0; r < b; ++r) {
          const T* row = pl + r * c;
          T mx = row[0];
          for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
          double se = 0;
          for (int64_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(row[j] - mx));
          for (int64_t j = 0; j < c; ++j) {
            T p = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / se);
            gx[r * c + j] += gv * (p - T((*saved)[r] == j ? 1 : 0));
          }
        }
      });
    }
  }
  return out;
}

}  // namespace lsanet::ops
