#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ynet/tensor.hpp"

namespace ynet {

/// Handle to a node recorded on a tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode autodiff record for one forward pass.
///
/// Nodes are appended in execution order, so inputs always precede the
/// operations that consume them. backward() walks the record once in reverse
/// and invokes each node's rule at most once.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  /// Reads grad(self) and accumulates into grad_buffer(input) for its inputs.
  using BackwardFn = std::function<void(BasicTape&, std::size_t self)>;

  Var leaf(TensorT value, bool requires_grad = false);
  Var constant(TensorT value) { return leaf(std::move(value), false); }
  Var record(TensorT value, std::vector<std::size_t> inputs, BackwardFn backward);

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of the last backward() target w.r.t. this node; zeros if untouched.
  TensorT grad(Var v) const;
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Lazily allocated accumulator used by backward rules.
  TensorT& grad_buffer(std::size_t id);
  const TensorT& grad_ref(std::size_t id) const { return nodes_.at(id).grad; }

  /// Seeds d(loss)/d(loss) = 1; loss must hold a single element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  /// Number of backward rules invoked by the last backward() call.
  std::size_t backward_calls() const { return backward_calls_; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::size_t backward_calls_ = 0;
};

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;

}  // namespace ynet
