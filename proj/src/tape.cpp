#include "gibrss/tape.hpp"

#include "gibrss/errors.hpp"

namespace gibrss {

ParamId ParameterSet::add(std::string name, Tensor init, bool regularized) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  const auto id = static_cast<ParamId>(entries_.size());
  index_.emplace(name, id);
  entries_.push_back({std::move(name), std::move(init), regularized});
  return id;
}

std::optional<ParamId> ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

Gradients::Gradients(const ParameterSet& ps) : touched_(ps.size(), false) {
  grads_.reserve(ps.size());
  for (ParamId i = 0; i < ps.size(); ++i) grads_.emplace_back(ps.value(i).shape());
}

void Gradients::add(ParamId id, const Tensor& g) {
  grads_.at(id).add_(g);
  touched_[id] = true;
}

void Gradients::add(const Gradients& other) {
  if (other.size() != size()) throw DimensionError("Gradients::add: parameter count mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i)
    if (other.touched_[i]) {
      grads_[i].add_(other.grads_[i]);
      touched_[i] = true;
    }
}

void Gradients::scale(double s) {
  for (auto& g : grads_)
    for (auto& v : g.data()) v *= s;
}

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("Var does not belong to this tape");
}

Var Tape::constant(Tensor v) {
  Node n;
  n.owned = std::move(v);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor v) {
  Node n;
  n.owned = std::move(v);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(const ParameterSet& ps, ParamId id) {
  if (params_ && params_ != &ps) throw ContractError("tape already bound to a different ParameterSet");
  if (!params_) {
    params_ = &ps;
    param_nodes_.assign(ps.size(), -1);
  }
  if (id >= param_nodes_.size()) throw ContractError("unknown parameter id " + std::to_string(id));
  if (param_nodes_[id] >= 0) return Var(this, static_cast<std::uint32_t>(param_nodes_[id]));
  Node n;
  n.borrowed = &ps.value(id);
  n.requires_grad = true;
  n.param = id;
  nodes_.push_back(std::move(n));
  param_nodes_[id] = static_cast<std::int64_t>(nodes_.size() - 1);
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  if (backward_done_) throw ContractError("cannot record onto a tape after backward()");
  bool rg = false;
  for (const auto& p : parents) {
    check_owner(p);
    rg = rg || nodes_[p.id()].requires_grad;
  }
  Node n;
  n.owned = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id()].value();
}

Tensor* Tape::grad_sink(Var v) {
  check_owner(v);
  if (!nodes_[v.id()].requires_grad) return nullptr;
  if (!has_grad_[v.id()]) {
    grads_[v.id()] = Tensor(nodes_[v.id()].value().shape());
    has_grad_[v.id()] = true;
  }
  return &grads_[v.id()];
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (backward_done_) throw ContractError("backward() called twice on the same tape");
  if (loss.value().size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  backward_done_ = true;
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), false);
  if (!nodes_[loss.id()].requires_grad) return;
  grad_sink(loss)->fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (!has_grad_[i] || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, grads_[i]);
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  if (backward_done_ && has_grad_[v.id()]) return grads_[v.id()];
  return Tensor(nodes_[v.id()].value().shape());
}

void Tape::collect(Gradients& out) const {
  if (!backward_done_) throw ContractError("collect() before backward()");
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].param && has_grad_[i]) out.add(*nodes_[i].param, grads_[i]);
}

}  // namespace gibrss
