#pragma once

// One entry per differentiable primitive, each reduced to a scalar through a
// fixed random projection so every output coordinate influences the loss.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "uatmc/autodiff.hpp"

namespace uatmc::testing {

struct OpCase {
  std::string name;
  std::vector<Shape> inputs;
  double lo = -2.0;
  double hi = 2.0;
  std::function<ad::Var(const std::vector<ad::Var>&)> build;
};

inline ad::Var project(const ad::Var& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(out.shape(), rng, -1.0, 1.0);
  return ad::dot(out, out.tape().constant(std::move(w)));
}

inline std::vector<OpCase> op_catalogue() {
  using namespace ad;
  std::vector<OpCase> ops;
  ops.push_back({"add", {{3, 2}, {3, 2}}, -2, 2, [](auto& x) { return project(add(x[0], x[1]), 1); }});
  ops.push_back({"add_scalar_broadcast", {{4}, {}}, -2, 2, [](auto& x) { return project(add(x[0], x[1]), 2); }});
  ops.push_back({"sub", {{2, 3}, {2, 3}}, -2, 2, [](auto& x) { return project(sub(x[0], x[1]), 3); }});
  ops.push_back({"mul", {{5}, {5}}, -2, 2, [](auto& x) { return project(mul(x[0], x[1]), 4); }});
  ops.push_back({"mul_broadcast", {{}, {2, 2}}, -2, 2, [](auto& x) { return project(mul(x[0], x[1]), 5); }});
  ops.push_back({"div", {{4}, {4}}, 0.5, 2, [](auto& x) { return project(div(x[0], x[1]), 6); }});
  ops.push_back({"scale", {{3}}, -2, 2, [](auto& x) { return project(scale(x[0], -1.7), 7); }});
  ops.push_back({"exp", {{4}}, -2, 2, [](auto& x) { return project(exp(x[0]), 8); }});
  ops.push_back({"log", {{4}}, 0.3, 2, [](auto& x) { return project(log(x[0]), 9); }});
  ops.push_back({"sqrt", {{4}}, 0.3, 2, [](auto& x) { return project(sqrt(x[0]), 10); }});
  ops.push_back({"square", {{4}}, -2, 2, [](auto& x) { return project(square(x[0]), 11); }});
  ops.push_back({"sigmoid", {{5}}, -2, 2, [](auto& x) { return project(sigmoid(x[0]), 12); }});
  ops.push_back({"log_sigmoid", {{5}}, -2, 2, [](auto& x) { return project(log_sigmoid(x[0]), 13); }});
  ops.push_back({"tanh", {{5}}, -2, 2, [](auto& x) { return project(tanh(x[0]), 14); }});
  ops.push_back({"sum", {{3, 3}}, -2, 2, [](auto& x) { return square(sum(x[0])); }});
  ops.push_back({"mean", {{6}}, -2, 2, [](auto& x) { return square(mean(x[0])); }});
  ops.push_back({"dot", {{5}, {5}}, -2, 2, [](auto& x) { return dot(x[0], x[1]); }});
  ops.push_back({"matmul", {{3, 4}, {4, 2}}, -2, 2, [](auto& x) { return project(matmul(x[0], x[1]), 15); }});
  ops.push_back({"matmul_tn", {{4, 3}, {4, 2}}, -2, 2,
                 [](auto& x) { return project(matmul(x[0], x[1], true, false), 16); }});
  ops.push_back({"matmul_nt", {{3, 4}, {2, 4}}, -2, 2,
                 [](auto& x) { return project(matmul(x[0], x[1], false, true), 17); }});
  ops.push_back({"matmul_tt", {{4, 3}, {2, 4}}, -2, 2,
                 [](auto& x) { return project(matmul(x[0], x[1], true, true), 18); }});
  ops.push_back({"matvec", {{5, 4}, {4}}, -2, 2, [](auto& x) { return project(matvec(x[0], x[1]), 19); }});
  ops.push_back({"gather_rows", {{4, 3}}, -2, 2,
                 [](auto& x) { return project(gather_rows(x[0], {3, 0, 3, 1}), 20); }});
  ops.push_back({"scatter_add_rows", {{3, 2}}, -2, 2,
                 [](auto& x) { return project(scatter_add_rows(x[0], {1, 1, 4}, 5), 21); }});
  ops.push_back({"row_dot", {{3, 4}, {3, 4}}, -2, 2, [](auto& x) { return project(row_dot(x[0], x[1]), 22); }});
  ops.push_back({"scale_rows", {{3, 4}, {3}}, -2, 2, [](auto& x) { return project(scale_rows(x[0], x[1]), 23); }});
  ops.push_back({"concat", {{2, 3}, {2, 1}}, -2, 2, [](auto& x) { return project(concat({x[0], x[1]}), 24); }});
  ops.push_back({"slice_cols", {{3, 5}}, -2, 2, [](auto& x) { return project(slice_cols(x[0], 1, 3), 25); }});
  ops.push_back({"pad_cols", {{2, 2}}, -2, 2, [](auto& x) { return project(pad_cols(x[0], 1, 4), 26); }});
  ops.push_back({"reshape", {{2, 3}}, -2, 2, [](auto& x) { return project(reshape(x[0], {3, 2}), 27); }});
  ops.push_back({"cosine", {{4}, {4}}, -2, 2, [](auto& x) { return cosine(x[0], x[1]).value; }});
  ops.push_back({"cosine_matrix", {{2, 3}, {2, 3}}, -2, 2, [](auto& x) { return cosine(x[0], x[1]).value; }});
  // A small model-like chain: -ln sigmoid(w . tanh(W x)).
  ops.push_back({"chain", {{5, 4}, {4}, {5}}, -2, 2, [](auto& x) {
                   return neg(log_sigmoid(dot(x[2], tanh(matvec(x[0], x[1])))));
                 }});
  return ops;
}

// Evaluates a catalogue entry without gradients.
inline double eval_case(const OpCase& c, const std::vector<Tensor>& at) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : at) vars.push_back(tape.constant(t));
  return c.build(vars).value().item();
}

inline std::vector<Tensor> sample_inputs(const OpCase& c, std::mt19937_64& rng) {
  std::vector<Tensor> at;
  for (const auto& s : c.inputs) at.push_back(random_tensor(s, rng, c.lo, c.hi));
  return at;
}

inline std::vector<Tensor> tape_gradient(const OpCase& c, const std::vector<Tensor>& at) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : at) vars.push_back(tape.leaf(t));
  ad::Var loss = c.build(vars);
  return tape.grad(loss, vars);
}

// Second-order check function: squared norm of the first-order gradient.
inline double grad_norm_sq(const OpCase& c, const std::vector<Tensor>& at) {
  double s = 0.0;
  for (const auto& g : tape_gradient(c, at)) {
    for (double v : g.data()) s += v * v;
  }
  return s;
}

inline std::vector<Tensor> tape_grad_of_grad_norm(const OpCase& c, const std::vector<Tensor>& at) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : at) vars.push_back(tape.leaf(t));
  ad::Var loss = c.build(vars);
  return ad::grad_of_grad(loss, vars, [](const std::vector<ad::Var>& g) {
    ad::Var acc = ad::sum(ad::square(g[0]));
    for (std::size_t k = 1; k < g.size(); ++k) acc = ad::add(acc, ad::sum(ad::square(g[k])));
    return acc;
  });
}

}  // namespace uatmc::testing
