#include "ynet/tape.hpp"

#include <stdexcept>
#include <string>

namespace ynet {

template <typename T>
Var BasicTape<T>::leaf(TensorT value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var BasicTape<T>::record(TensorT value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw std::out_of_range("tape: input node " + std::to_string(id) + " not recorded");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename BasicTape<T>::TensorT BasicTape<T>::grad(Var v) const {
  const auto& node = nodes_.at(v.id);
  if (node.grad.empty()) return TensorT::zeros(node.value.shape());
  return node.grad;
}

template <typename T>
typename BasicTape<T>::TensorT& BasicTape<T>::grad_buffer(std::size_t id) {
  auto& node = nodes_.at(id);
  if (node.grad.empty()) node.grad = TensorT::zeros(node.value.shape());
  return node.grad;
}

template <typename T>
void BasicTape<T>::backward(Var loss) {
  auto& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
  }
  for (auto& node : nodes_) node.grad = TensorT{};
  grad_buffer(loss.id)[0] = T{1};
  backward_calls_ = 0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
    ++backward_calls_;
  }
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace ynet
