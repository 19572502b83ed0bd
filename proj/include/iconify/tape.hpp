#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "iconify/tensor.hpp"

namespace iconify {

using NodeId = std::size_t;

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Accumulates parent gradients during one node's backward rule.
template <typename T>
class GradSink {
 public:
  GradSink(Tape<T>& tape, std::span<const NodeId> parents) : tape_(tape), parents_(parents) {}

  /// True when parent `i` wants a gradient.
  bool wants(std::size_t i) const;
  void add(std::size_t i, const Tensor<T>& grad);

 private:
  Tape<T>& tape_;
  std::span<const NodeId> parents_;
};

template <typename T>
using BackwardRule = std::function<void(const Tensor<T>& grad_out, GradSink<T>& sink)>;

/// Gradients keyed by node id. Only nodes that require a gradient and are
/// reachable from the root appear.
template <typename T>
class GradientMap {
 public:
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  bool contains(const Var<T>& v) const { return contains(v.id()); }
  const Tensor<T>& at(NodeId id) const;
  const Tensor<T>& at(const Var<T>& v) const { return at(v.id()); }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<NodeId, Tensor<T>> grads_;
};

/// Append-only reverse-mode record. Node ids are topologically ordered:
/// every parent id is smaller than its child's.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Differentiable input (parameter or probe point).
  Var<T> leaf(Tensor<T> value);

  /// Records an op result. The node requires a gradient iff any parent does;
  /// otherwise the rule is dropped and the node is a constant.
  Var<T> record(Tensor<T> value, std::vector<NodeId> parents, BackwardRule<T> rule, const char* op);

  GradientMap<T> backward(const Var<T>& root);

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_.at(id).parents; }
  const std::string& op(NodeId id) const { return nodes_.at(id).op; }
  const std::string& scope_of(NodeId id) const { return nodes_.at(id).scope; }
  std::size_t size() const { return nodes_.size(); }

  /// Labels every node recorded while alive; used to attribute tape work to loss terms.
  class Scope {
   public:
    Scope(Tape& tape, std::string name) : tape_(tape), saved_(std::move(tape.scope_)) { tape_.scope_ = std::move(name); }
    ~Scope() { tape_.scope_ = std::move(saved_); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
    std::string saved_;
  };

  /// Node counts per scope label.
  std::map<std::string, std::size_t> scope_counts() const;

 private:
  friend class GradSink<T>;

  struct Node {
    Tensor<T> value;
    std::vector<NodeId> parents;
    BackwardRule<T> rule;
    bool requires_grad = false;
    std::string op;
    std::string scope;
  };

  std::vector<Node> nodes_;
  std::string scope_;
  // Live only during backward().
  std::unordered_map<NodeId, Tensor<T>>* active_grads_ = nullptr;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class GradSink<float>;
extern template class GradSink<double>;
extern template class GradientMap<float>;
extern template class GradientMap<double>;

}  // namespace iconify
