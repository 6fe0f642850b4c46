#include "gcnkit/autodiff.hpp"

#include <cassert>

#include "gcnkit/error.hpp"

namespace gcnkit {

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.empty() != value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  return Var(std::move(node));
}

Var Tape::leaf(Tensor t) {
  if (consumed_) throw Error("tape already consumed by backward; record a new forward pass");
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  record(node);
  return Var(std::move(node));
}

Var Tape::param(Parameter& p) {
  if (consumed_) throw Error("tape already consumed by backward; record a new forward pass");
  auto node = std::make_shared<Node>();
  node->value = p.value;
  node->param = &p;
  record(node);
  return Var(std::move(node));
}

void Tape::backward(const Var& loss) {
  if (!loss.valid()) throw Error("backward on an empty Var");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + loss.shape().str());
  }
  backward(loss, Tensor(loss.shape(), 1.0f));
}

void Tape::backward(const Var& out, const Tensor& seed) {
  if (consumed_) throw Error("backward called twice without a new forward pass");
  if (!out.requires_grad() || out.node()->tape() != this) {
    throw Error("backward: output is not recorded on this tape");
  }
  if (seed.shape() != out.shape()) {
    throw ShapeError("backward: seed shape " + seed.shape().str() + " vs output " +
                     out.shape().str());
  }
  consumed_ = true;
  Node& root = *out.node();
  root.grad_buffer().add_(seed);
  sweep(root);
}

void Tape::sweep(Node& root) {
  // Nodes recorded after the root cannot influence it.
  std::size_t end = nodes_.size();
  while (end > 0 && nodes_[end - 1].get() != &root) --end;
  for (std::size_t i = end; i-- > 0;) {
    Node& node = *nodes_[i];
    if (node.grad.empty() && node.value.numel() != 0) continue;
    if (node.backward) node.backward(node);
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.shape() != p.value.shape()) p.zero_grad();
      p.grad.add_(node.grad);
    }
  }
  // Release saved activations; leaf gradients stay reachable through Vars.
  for (auto& node : nodes_) {
    node->backward = nullptr;
    node->parents.clear();
  }
  link_->owner = nullptr;
  link_ = std::make_shared<TapeLink>(TapeLink{this});
  nodes_.clear();
}

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& p : parents) inputs_finite = inputs_finite && p.value().all_finite();
  assert(!inputs_finite || value.all_finite());
#endif
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  Tape* tape = nullptr;
  for (const auto& p : parents) {
    if (p.requires_grad()) {
      tape = p.node()->tape();
      break;
    }
  }
  if (tape != nullptr) {
    if (tape->consumed()) throw Error("operator applied to values from a consumed tape");
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
    tape->record(node);
  }
  return Var(std::move(node));
}

}  // namespace gcnkit
