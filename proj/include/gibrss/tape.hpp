#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gibrss/tensor.hpp"

namespace gibrss {

using ParamId = std::uint32_t;

// Named learnable tensors. Ids are dense indices in insertion order, which
// also fixes the checkpoint record order.
class ParameterSet {
 public:
  ParamId add(std::string name, Tensor init, bool regularized = true);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  Tensor& value(ParamId id) { return entries_.at(id).value; }
  const Tensor& value(ParamId id) const { return entries_.at(id).value; }
  bool regularized(ParamId id) const { return entries_.at(id).regularized; }
  std::optional<ParamId> find(const std::string& name) const;
  std::size_t total_elements() const;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    bool regularized;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> index_;
};

// Per-parameter gradient buffers, allocated on first touch.
class Gradients {
 public:
  explicit Gradients(const ParameterSet& ps);

  void add(ParamId id, const Tensor& g);
  void add(const Gradients& other);
  void scale(double s);
  bool has(ParamId id) const { return touched_.at(id); }
  // Zero tensor of the parameter's shape if never touched.
  const Tensor& get(ParamId id) const { return grads_.at(id); }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
  std::vector<bool> touched_;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::uint32_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, which
// is a topological order; backward walks it in reverse exactly once.
// A second backward() on the same tape is a ContractError.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v);
  // Gradient-carrying leaf not tied to a ParameterSet (tests, probes).
  Var leaf(Tensor v);
  // Leaf bound to a parameter; repeated calls return the same node.
  Var parameter(const ParameterSet& ps, ParamId id);

  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  // Gradient accumulator for v, or nullptr when v does not need one.
  Tensor* grad_sink(Var v);

  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }
  // d(loss)/d(v); zeros when v was unreachable.
  Tensor grad(Var v) const;
  // Adds every bound parameter's gradient into out.
  void collect(Gradients& out) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    std::optional<ParamId> param;
    BackwardFn backward;
    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };
  void check_owner(Var v) const;

  std::deque<Node> nodes_;  // deque: references to values survive appends
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  const ParameterSet* params_ = nullptr;
  std::vector<std::int64_t> param_nodes_;
  bool backward_done_ = false;
};

// Binds parameters of one set onto one tape.
struct ParamBinder {
  Tape& tape;
  const ParameterSet& set;
  Var operator()(ParamId id) const { return tape.parameter(set, id); }
};

}  // namespace gibrss
