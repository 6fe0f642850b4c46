#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gcnkit/tensor.hpp"

namespace gcnkit {

// A trainable tensor owned by a model. Gradients accumulate across backward
// passes until cleared.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // weight decay applies

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

// Shared between a tape and its nodes; cleared when the tape dies so stale
// Vars behave as constants.
struct TapeLink {
  Tape* owner = nullptr;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  Parameter* param = nullptr;
  std::shared_ptr<TapeLink> link;  // set iff the node requires a gradient

  Tape* tape() const { return link ? link->owner : nullptr; }
  bool requires_grad() const { return tape() != nullptr; }
  // Zero-initialized on first use.
  Tensor& grad_buffer();
};

// Handle to a value in a (possibly recording) computation. Copying a Var
// shares the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  // Gradient after Tape::backward; empty if none reached this node.
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad(); }
  bool valid() const { return node_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Wraps a tensor that never receives a gradient.
Var constant(Tensor t);

// Records operations for reverse-mode differentiation. Nodes are kept in
// creation order, which is a topological order, so backward is a single
// reverse sweep. Confined to one thread.
class Tape {
 public:
  Tape() : link_(std::make_shared<TapeLink>(TapeLink{this})) {}
  ~Tape() { link_->owner = nullptr; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input; read its gradient with Var::grad().
  Var leaf(Tensor t);
  // Differentiable view of a parameter; backward adds into p.grad.
  Var param(Parameter& p);

  // Seeds d(loss)/d(loss) = 1. loss must hold exactly one element.
  void backward(const Var& loss);
  // Seeds an arbitrary output gradient (same shape as out).
  void backward(const Var& out, const Tensor& seed);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Used by operators.
  void record(const std::shared_ptr<Node>& node) {
    node->link = link_;
    nodes_.push_back(node);
  }

 private:
  void sweep(Node& root);

  std::shared_ptr<TapeLink> link_;
  std::vector<std::shared_ptr<Node>> nodes_;
  bool consumed_ = false;
};

// Creates the output node of an operator. When any parent requires a
// gradient, the node joins that parent's tape and keeps `backward`;
// otherwise parents and closure are dropped.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

}  // namespace gcnkit
