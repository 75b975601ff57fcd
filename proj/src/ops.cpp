#include <algorithm>
#include <cmath>

#include "uatmc/autodiff.hpp"
#include "uatmc/errors.hpp"
#include "uatmc/kernels.hpp"

namespace uatmc::ad {

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an invalid Var");
  return a.tape();
}

template <typename F>
Tensor map1(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(a.shape(), std::move(out));
}

template <typename F>
Tensor map2(const char* op, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return Tensor(a.shape(), std::move(out));
  }
  if (b.size() == 1) {
    const double bv = b[0];
    return map1(a, [&](double x) { return f(x, bv); });
  }
  if (a.size() == 1) {
    const double av = a[0];
    return map1(b, [&](double x) { return f(av, x); });
  }
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " are not broadcast-compatible");
}

// Sums a broadcast gradient back down to the operand's shape.
Var unbroadcast(const Var& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (shape_size(target) == 1) return reshape(sum(g), target);
  throw DimensionError("cannot reduce gradient " + shape_str(g.shape()) + " to " + shape_str(target));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tensor v = map2("add", a.value(), b.value(), [](double x, double y) { return x + y; });
  const Shape sa = a.shape(), sb = b.shape();
  return tape_of(a).record("add", std::move(v), {a, b}, [sa, sb](const Var&, const Var& g) {
    return std::vector<Var>{unbroadcast(g, sa), unbroadcast(g, sb)};
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor v = map2("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
  const Shape sa = a.shape(), sb = b.shape();
  return tape_of(a).record("sub", std::move(v), {a, b}, [sa, sb](const Var&, const Var& g) {
    return std::vector<Var>{unbroadcast(g, sa), unbroadcast(neg(g), sb)};
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor v = map2("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
  return tape_of(a).record("mul", std::move(v), {a, b}, [a, b](const Var&, const Var& g) {
    Var ga = a.requires_grad() ? unbroadcast(mul(g, b), a.shape()) : Var{};
    Var gb = b.requires_grad() ? unbroadcast(mul(g, a), b.shape()) : Var{};
    return std::vector<Var>{ga, gb};
  });
}

Var div(const Var& a, const Var& b) {
  for (double x : b.value().data()) {
    if (x == 0.0) throw DomainError("div: division by zero");
  }
  Tensor v = map2("div", a.value(), b.value(), [](double x, double y) { return x / y; });
  return tape_of(a).record("div", std::move(v), {a, b}, [a, b](const Var& self, const Var& g) {
    Var ga = a.requires_grad() ? unbroadcast(div(g, b), a.shape()) : Var{};
    Var gb = b.requires_grad() ? unbroadcast(neg(mul(g, div(self, b))), b.shape()) : Var{};
    return std::vector<Var>{ga, gb};
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  Tensor v = map1(a.value(), [c](double x) { return c * x; });
  return tape_of(a).record("scale", std::move(v), {a},
                           [c](const Var&, const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
  Tensor v = map1(a.value(), [c](double x) { return x + c; });
  return tape_of(a).record("add_scalar", std::move(v), {a},
                           [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

Var exp(const Var& a) {
  Tensor v = map1(a.value(), [](double x) { return std::exp(x); });
  return tape_of(a).record("exp", std::move(v), {a},
                           [](const Var& self, const Var& g) { return std::vector<Var>{mul(g, self)}; });
}

Var log(const Var& a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  Tensor v = map1(a.value(), [](double x) { return std::log(x); });
  return tape_of(a).record("log", std::move(v), {a},
                           [a](const Var&, const Var& g) { return std::vector<Var>{div(g, a)}; });
}

Var sqrt(const Var& a) {
  for (double x : a.value().data()) {
    if (x < 0.0) throw DomainError("sqrt of negative value " + std::to_string(x));
  }
  Tensor v = map1(a.value(), [](double x) { return std::sqrt(x); });
  return tape_of(a).record("sqrt", std::move(v), {a}, [](const Var& self, const Var& g) {
    return std::vector<Var>{div(scale(g, 0.5), self)};
  });
}

Var square(const Var& a) {
  Tensor v = map1(a.value(), [](double x) { return x * x; });
  return tape_of(a).record("square", std::move(v), {a},
                           [a](const Var&, const Var& g) { return std::vector<Var>{mul(g, scale(a, 2.0))}; });
}

Var sigmoid(const Var& a) {
  Tensor v = map1(a.value(), [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return tape_of(a).record("sigmoid", std::move(v), {a}, [a](const Var& self, const Var& g) {
    return std::vector<Var>{mul(g, mul(self, sigmoid(neg(a))))};
  });
}

Var log_sigmoid(const Var& a) {
  Tensor v = map1(a.value(), [](double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  });
  return tape_of(a).record("log_sigmoid", std::move(v), {a},
                           [a](const Var&, const Var& g) { return std::vector<Var>{mul(g, sigmoid(neg(a)))}; });
}

Var tanh(const Var& a) {
  Tensor v = map1(a.value(), [](double x) { return std::tanh(x); });
  return tape_of(a).record("tanh", std::move(v), {a}, [](const Var& self, const Var& g) {
    return std::vector<Var>{mul(g, add_scalar(neg(square(self)), 1.0))};
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const Shape sa = a.shape();
  return tape_of(a).record("sum", Tensor::scalar(s), {a}, [sa](const Var&, const Var& g) {
    Tape& t = g.tape();
    Var ones = t.constant(Tensor::filled(sa, 1.0));
    return std::vector<Var>{mul(ones, g)};
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  const Shape orig = a.shape();
  return tape_of(a).record("reshape", a.value().reshaped(std::move(shape)), {a},
                           [orig](const Var&, const Var& g) { return std::vector<Var>{reshape(g, orig)}; });
}

Var dot(const Var& a, const Var& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: sizes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (a.shape() != b.shape()) return sum(mul(reshape(a, {a.size()}), reshape(b, {b.size()})));
  return sum(mul(a, b));
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a.value().rank() != 2) throw DimensionError("matmul: left operand must be a matrix, got " + shape_str(a.shape()));
  if (b.value().rank() == 1) {
    if (trans_b) throw DimensionError("matmul: cannot transpose a vector");
    Var col = reshape(b, {b.size(), 1});
    Var r = matmul(a, col, trans_a, false);
    return reshape(r, {r.size()});
  }
  if (b.value().rank() != 2) throw DimensionError("matmul: right operand must be a matrix or vector");
  const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::size_t k = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + (trans_a ? "^T" : "") +
                         " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  std::vector<double> out(m * n);
  kernels::gemm(trans_a, trans_b, m, n, k, a.value().data(), b.value().data(), out);
  return tape_of(a).record("matmul", Tensor({m, n}, std::move(out)), {a, b},
                           [a, b, trans_a, trans_b](const Var&, const Var& g) {
                             Var ga, gb;
                             if (a.requires_grad()) {
                               ga = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
                             }
                             if (b.requires_grad()) {
                               gb = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
                             }
                             return std::vector<Var>{ga, gb};
                           });
}

Var matvec(const Var& w, const Var& x) {
  if (x.value().rank() != 1) throw DimensionError("matvec: right operand must be a vector");
  return matmul(w, x);
}

Var gather_rows(const Var& table, std::vector<std::size_t> idx) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw DimensionError("gather_rows: table must be a matrix");
  const std::size_t n = t.rows(), d = t.cols();
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range");
    std::copy_n(t.data().data() + idx[r] * d, d, out.data() + r * d);
  }
  Tensor v({idx.size(), d}, std::move(out));
  return tape_of(table).record("gather_rows", std::move(v), {table},
                               [idx = std::move(idx), n](const Var&, const Var& g) {
                                 return std::vector<Var>{scatter_add_rows(g, idx, n)};
                               });
}

Var scatter_add_rows(const Var& src, std::vector<std::size_t> idx, std::size_t rows) {
  const Tensor& s = src.value();
  if (s.rank() != 2 || s.rows() != idx.size()) throw DimensionError("scatter_add_rows: index count mismatch");
  const std::size_t d = s.cols();
  std::vector<double> out(rows * d, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) throw DimensionError("scatter_add_rows: row out of range");
    double* o = out.data() + idx[r] * d;
    const double* in = s.data().data() + r * d;
    for (std::size_t c = 0; c < d; ++c) o[c] += in[c];
  }
  Tensor v({rows, d}, std::move(out));
  return tape_of(src).record("scatter_add_rows", std::move(v), {src}, [idx = std::move(idx)](const Var&, const Var& g) {
    return std::vector<Var>{gather_rows(g, idx)};
  });
}

Var row_dot(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.value().rank() != 2) {
    throw DimensionError("row_dot: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.value().rows();
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) out[r] = uatmc::dot(a.value().row(r), b.value().row(r));
  return tape_of(a).record("row_dot", Tensor::vector(std::move(out)), {a, b}, [a, b](const Var&, const Var& g) {
    Var ga = a.requires_grad() ? scale_rows(b, g) : Var{};
    Var gb = b.requires_grad() ? scale_rows(a, g) : Var{};
    return std::vector<Var>{ga, gb};
  });
}

Var scale_rows(const Var& x, const Var& s) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || s.value().rank() != 1 || s.size() != xv.rows()) {
    throw DimensionError("scale_rows: " + shape_str(xv.shape()) + " by " + shape_str(s.shape()));
  }
  const std::size_t n = xv.rows(), d = xv.cols();
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    const double f = s.value()[r];
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = f * xv.at(r, c);
  }
  return tape_of(x).record("scale_rows", Tensor({n, d}, std::move(out)), {x, s}, [x, s](const Var&, const Var& g) {
    Var gx = x.requires_grad() ? scale_rows(g, s) : Var{};
    Var gs = s.requires_grad() ? row_dot(g, x) : Var{};
    return std::vector<Var>{gx, gs};
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const bool vectors = parts.front().value().rank() == 1;
  const std::size_t rows = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if ((p.value().rank() == 1) != vectors || p.value().rows() != rows) {
      throw DimensionError("concat: incompatible part " + shape_str(p.shape()));
    }
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(t.data().data() + r * widths[k], widths[k], out.data() + r * total + off);
    }
    off += widths[k];
  }
  Shape shape = vectors ? Shape{total} : Shape{rows, total};
  return tape_of(parts.front()).record("concat", Tensor(std::move(shape), std::move(out)), parts,
                                       [widths](const Var&, const Var& g) {
                                         std::vector<Var> gs;
                                         std::size_t begin = 0;
                                         for (std::size_t w : widths) {
                                           gs.push_back(slice_cols(g, begin, w));
                                           begin += w;
                                         }
                                         return gs;
                                       });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t width) {
  const Tensor& t = x.value();
  const std::size_t rows = t.rows(), cols = t.cols();
  if (begin + width > cols) throw DimensionError("slice_cols out of range");
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(t.data().data() + r * cols + begin, width, out.data() + r * width);
  Shape shape = t.rank() == 1 ? Shape{width} : Shape{rows, width};
  return tape_of(x).record("slice_cols", Tensor(std::move(shape), std::move(out)), {x},
                           [begin, cols](const Var&, const Var& g) {
                             return std::vector<Var>{pad_cols(g, begin, cols)};
                           });
}

Var pad_cols(const Var& x, std::size_t begin, std::size_t total) {
  const Tensor& t = x.value();
  const std::size_t rows = t.rows(), width = t.cols();
  if (begin + width > total) throw DimensionError("pad_cols out of range");
  std::vector<double> out(rows * total, 0.0);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(t.data().data() + r * width, width, out.data() + r * total + begin);
  Shape shape = t.rank() == 1 ? Shape{total} : Shape{rows, total};
  return tape_of(x).record("pad_cols", Tensor(std::move(shape), std::move(out)), {x},
                           [begin, width](const Var&, const Var& g) {
                             return std::vector<Var>{slice_cols(g, begin, width)};
                           });
}

CosineResult cosine(const Var& a, const Var& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: sizes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const double na = l2_norm(a.value().data());
  const double nb = l2_norm(b.value().data());
  if (na < kNormTolerance || nb < kNormTolerance) {
    return {tape_of(a).constant(Tensor::scalar(0.0)), true};
  }
  Var num = dot(a, b);
  Var den = sqrt(mul(sum(square(a)), sum(square(b))));
  return {div(num, den), false};
}

}  // namespace uatmc::ad
