#include "iconify/tape.hpp"

#include <algorithm>

namespace iconify {

template <typename T>
bool GradSink<T>::wants(std::size_t i) const {
  return tape_.requires_grad(parents_[i]);
}

template <typename T>
void GradSink<T>::add(std::size_t i, const Tensor<T>& grad) {
  const NodeId id = parents_[i];
  if (!tape_.requires_grad(id)) return;
  if (grad.shape() != tape_.value(id).shape()) {
    throw ShapeError("backward (" + tape_.op(id) + "): gradient " + to_string(grad.shape()) +
                     " does not match value " + to_string(tape_.value(id).shape()));
  }
  auto& grads = *tape_.active_grads_;
  auto it = grads.find(id);
  if (it == grads.end()) {
    grads.emplace(id, grad);
  } else {
    auto dst = it->second.data();
    auto src = grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

template <typename T>
const Tensor<T>& GradientMap<T>::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw std::out_of_range("gradient map: no gradient for node " + std::to_string(id));
  return it->second;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  if (!value.all_finite()) throw NonFiniteError("constant: non-finite value " + to_string(value.shape()));
  nodes_.push_back(Node{std::move(value), {}, {}, false, "constant", scope_});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  if (!value.all_finite()) throw NonFiniteError("leaf: non-finite value " + to_string(value.shape()));
  nodes_.push_back(Node{std::move(value), {}, {}, true, "leaf", scope_});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<NodeId> parents, BackwardRule<T> rule, const char* op) {
  if (!value.all_finite()) {
    std::string msg = std::string(op) + ": produced non-finite output " + to_string(value.shape());
    if (!scope_.empty()) msg += " in term '" + scope_ + "'";
    throw NonFiniteError(msg);
  }
  const bool needs = std::any_of(parents.begin(), parents.end(), [&](NodeId p) { return nodes_.at(p).requires_grad; });
  if (!needs) rule = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(rule), needs, op, scope_});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
GradientMap<T> Tape<T>::backward(const Var<T>& root) {
  if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  const Tensor<T>& root_value = value(root.id());
  if (root_value.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + to_string(root_value.shape()));
  }
  GradientMap<T> out;
  if (!nodes_[root.id()].requires_grad) return out;

  active_grads_ = &out.grads_;
  out.grads_.emplace(root.id(), Tensor<T>(root_value.shape(), T(1)));
  try {
    for (NodeId id = root.id() + 1; id-- > 0;) {
      auto it = out.grads_.find(id);
      if (it == out.grads_.end()) continue;
      const Node& node = nodes_[id];
      if (!node.rule) continue;
      GradSink<T> sink(*this, node.parents);
      // Element references survive rehashing, and rules only write to parents.
      const Tensor<T>& grad_out = it->second;
      node.rule(grad_out, sink);
    }
  } catch (...) {
    active_grads_ = nullptr;
    throw;
  }
  active_grads_ = nullptr;
  for (const auto& [id, g] : out.grads_) {
    if (!g.all_finite()) throw NonFiniteError("backward: non-finite gradient at " + nodes_[id].op);
  }
  return out;
}

template <typename T>
std::map<std::string, std::size_t> Tape<T>::scope_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& n : nodes_) ++counts[n.scope];
  return counts;
}

template class Tape<float>;
template class Tape<double>;
template class GradSink<float>;
template class GradSink<double>;
template class GradientMap<float>;
template class GradientMap<double>;

}  // namespace iconify
