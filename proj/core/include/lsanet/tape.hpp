#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lsanet/tensor.hpp"

namespace lsanet {

/// Reverse-mode tape. Primitive applications are recorded in execution order,
/// which is already a topological order of the graph; backward() walks the
/// list in reverse and accumulates gradients by summation. A tape can be
/// consumed by backward() exactly once; leaf gradients stay queryable after.
///
/// Tensors are associated with nodes through their buffer identity, so plain
/// value copies of a recorded tensor refer to the same node. The tape keeps
/// every recorded output alive, which both preserves the activations backward
/// needs and keeps the identity map unambiguous.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Node id for a tensor: an existing recorded node, a newly registered leaf
  /// when the tensor requires grad, or -1 (constant for this tape).
  int node_of(const Tensor<T>& t) {
    auto it = index_.find(t.key());
    if (it != index_.end()) return it->second;
    if (!t.requires_grad) return -1;
    LSANET_CHECK(!consumed_, "cannot register leaves on a consumed tape");
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, t, nullptr, true});
    index_.emplace(t.key(), id);
    return id;
  }

  int lookup(const Tensor<T>& t) const {
    auto it = index_.find(t.key());
    return it == index_.end() ? -1 : it->second;
  }

  /// Records a primitive application. Input ids of -1 (constants) are kept so
  /// backward fns can index inputs positionally.
  int record(std::vector<int> inputs, const Tensor<T>& output, BackwardFn fn) {
    LSANET_CHECK(!consumed_, "cannot record on a consumed tape");
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(inputs), output, std::move(fn), false});
    index_.emplace(output.key(), id);
    return id;
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradient accumulation buffer for a node, zero-initialized on first use.
  Tensor<T>& grad_buf(int node) {
    Tensor<T>& g = grads_[node];
    if (!g.defined()) g = Tensor<T>::zeros(nodes_[node].output.shape());
    return g;
  }

  /// Adds `delta` into the gradient of `node` (gradients of a tensor used in
  /// several places sum).
  void add_grad(int node, const Tensor<T>& delta) {
    Tensor<T>& g = grad_buf(node);
    const T* s = delta.data();
    T* d = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
  }

  /// Reverse-topological accumulation from a scalar loss recorded on this
  /// tape. Interior gradients are released as soon as they have been
  /// propagated; leaf gradients are retained (zeros for leaves the loss does
  /// not reach).
  void backward(const Tensor<T>& loss) {
    LSANET_CHECK(!consumed_, "backward on a consumed tape");
    LSANET_CHECK(loss.numel() == 1,
                 "backward requires a scalar loss, got shape " << shape_str(loss.shape()));
    int root = lookup(loss);
    LSANET_CHECK(root >= 0, "loss tensor is not on this tape");
    consumed_ = true;
    grads_.resize(nodes_.size());
    grad_buf(root).data()[0] = T(1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!grads_[i].defined()) continue;
      if (n.backward) n.backward(*this, grads_[i]);
      if (!n.is_leaf) grads_[i] = Tensor<T>();  // free interior gradient
    }
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf && nodes_[i].output.requires_grad && !grads_[i].defined())
        grads_[i] = Tensor<T>::zeros(nodes_[i].output.shape());
    }
  }

  /// Gradient of a leaf (or retained) tensor after backward; throws if the
  /// tensor is unknown to this tape.
  const Tensor<T>& grad(const Tensor<T>& t) const {
    LSANET_CHECK(consumed_, "grad() before backward()");
    int id = lookup(t);
    LSANET_CHECK(id >= 0, "tensor was never seen by this tape");
    LSANET_CHECK(grads_[id].defined(), "gradient not retained for this tensor");
    return grads_[id];
  }

  bool has_grad(const Tensor<T>& t) const {
    int id = lookup(t);
    return id >= 0 && id < static_cast<int>(grads_.size()) && grads_[id].defined();
  }

  /// Like grad(), but a tensor the loss never touched reads as zeros.
  Tensor<T> grad_or_zeros(const Tensor<T>& t) const {
    LSANET_CHECK(consumed_, "grad_or_zeros() before backward()");
    int id = lookup(t);
    if (id < 0 || !grads_[id].defined()) return Tensor<T>::zeros(t.shape());
    return grads_[id];
  }

 private:
  struct Node {
    std::vector<int> inputs;
    Tensor<T> output;
    BackwardFn backward;
    bool is_leaf;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> index_;
  std::vector<Tensor<T>> grads_;
  bool consumed_ = false;
};

}  // namespace lsanet
