#include "harmony/autodiff.hpp"

namespace harmony::ad {

Parameter::Parameter(std::string name_, Tensor value_, Real lr_multiplier_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.shape()),
      lr_multiplier(lr_multiplier_) {
  if (!(lr_multiplier > 0)) {
    throw ValidationError("parameter '" + name +
                          "': lr_multiplier must be > 0");
  }
}

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("Var is not attached to a tape");
  return tape_->value(*this);
}

void Tape::check_owned(const Var& v, const char* what) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError(std::string(what) + ": Var belongs to another tape");
  }
}

const Tape::Node& Tape::node(const Var& v) const {
  check_owned(v, "tape access");
  return nodes_[v.id_];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::watch(Parameter& p) {
  if (auto it = watched_.find(&p); it != watched_.end()) {
    return Var(this, it->second);
  }
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  watched_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in, "record");
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor* Tape::grad(const Var& v) const {
  const Node& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(const Var& loss) {
  check_owned(loss, "backward");
  if (nodes_[loss.id_].value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        nodes_[loss.id_].value.shape().str());
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& root = nodes_[loss.id_];
  root.grad = Tensor(root.value.shape(), 1.0);
  root.has_grad = true;

  std::vector<Tensor*> input_grads;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.param) n.param->grad.add_inplace(n.grad);
    if (!n.backward) continue;
    input_grads.clear();
    for (std::size_t src_id : n.inputs) {
      Node& src = nodes_[src_id];
      if (!src.requires_grad) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (!src.has_grad) {
        src.grad = Tensor(src.value.shape());
        src.has_grad = true;
      }
      input_grads.push_back(&src.grad);
    }
    n.backward(n.value, n.grad, input_grads);
  }
}

}  // namespace harmony::ad
