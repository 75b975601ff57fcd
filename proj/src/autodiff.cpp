#include "uatmc/autodiff.hpp"

#include "uatmc/errors.hpp"

namespace uatmc::ad {

const Tensor& Var::value() const { return tape_->node(id_).value; }

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "const";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool needs = false;
  if (recording_) {
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw ContractError(std::string("operand of ") + op + " lives on another tape");
      needs = needs || v.requires_grad();
    }
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (needs) {
    n.requires_grad = true;
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id_);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::truncate(std::size_t mark) {
  while (nodes_.size() > mark) nodes_.pop_back();
}

std::vector<Var> Tape::backprop(const Var& output, const Var& seed, std::span<const Var> wrt) {
  if (!output.valid() || output.tape_ != this) throw ContractError("gradient of a Var from another tape");
  std::vector<Var> acc(output.id_ + 1);
  acc[output.id_] = seed;
  for (std::size_t id = output.id_ + 1; id-- > 0;) {
    if (!acc[id].valid()) continue;
    const Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward) continue;
    std::vector<Var> gin = n.backward(Var(this, id), acc[id]);
    for (std::size_t k = 0; k < n.inputs.size() && k < gin.size(); ++k) {
      const std::size_t in = n.inputs[k];
      if (!gin[k].valid() || !nodes_[in].requires_grad) continue;
      acc[in] = acc[in].valid() ? add(acc[in], gin[k]) : gin[k];
    }
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.tape_ != this) throw ContractError("gradient w.r.t. a Var from another tape");
    if (w.id_ <= output.id_ && acc[w.id_].valid()) {
      out.push_back(acc[w.id_]);
    } else {
      out.push_back(constant(Tensor::zeros(w.shape())));
    }
  }
  return out;
}

std::vector<Tensor> Tape::grad(const Var& loss, std::span<const Var> wrt) {
  if (loss.size() != 1) throw ContractError("grad requires a scalar loss, got " + shape_str(loss.shape()));
  return vjp(loss, Tensor::filled(loss.shape(), 1.0), wrt);
}

std::vector<Var> Tape::grad_graph(const Var& loss, std::span<const Var> wrt) {
  if (loss.size() != 1) throw ContractError("grad requires a scalar loss, got " + shape_str(loss.shape()));
  const bool was = recording_;
  recording_ = true;
  Var seed = constant(Tensor::filled(loss.shape(), 1.0));
  auto out = backprop(loss, seed, wrt);
  recording_ = was;
  return out;
}

std::vector<Tensor> Tape::vjp(const Var& output, const Tensor& seed, std::span<const Var> wrt) {
  if (seed.shape() != output.shape()) {
    throw DimensionError("vjp seed " + shape_str(seed.shape()) + " vs output " + shape_str(output.shape()));
  }
  const std::size_t mark = nodes_.size();
  const bool was = recording_;
  recording_ = false;
  std::vector<Tensor> result;
  try {
    Var s = constant(seed);
    auto vars = backprop(output, s, wrt);
    result.reserve(vars.size());
    for (const Var& v : vars) result.push_back(v.value());
  } catch (...) {
    recording_ = was;
    truncate(mark);
    throw;
  }
  recording_ = was;
  truncate(mark);
  return result;
}

std::vector<Tensor> grad_of_grad(const Var& inner, std::span<const Var> wrt,
                                 const std::function<Var(const std::vector<Var>&)>& outer) {
  Tape& tape = inner.tape();
  std::vector<Var> first = tape.grad_graph(inner, wrt);
  Var outer_loss = outer(first);
  bool any_leaf = false;
  for (const Var& w : wrt) any_leaf = any_leaf || w.requires_grad();
  bool connected = false;
  for (const Var& g : first) connected = connected || g.requires_grad();
  if (any_leaf && connected && !outer_loss.requires_grad()) {
    throw ContractError("outer loss is not connected to the recorded first-order gradients");
  }
  return tape.grad(outer_loss, wrt);
}

}  // namespace uatmc::ad
