#include "protohail/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace protohail::ad {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }
double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ContractViolation("item() on non-scalar " + shape_string(v));
  return v[0];
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf", "parameter contains NaN/Inf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant", "input contains NaN/Inf");
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, const char* op, std::initializer_list<Var> inputs, Backward fn) {
  return push(std::move(value), op, std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(fn));
}

Var Tape::push(Tensor value, const char* op, std::span<const Var> inputs, Backward fn) {
  if (!value.all_finite()) {
    throw NumericError(op, "output " + shape_string(value) + " contains NaN/Inf");
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const Var& in : inputs) {
    if (in.tape != this) throw ContractViolation(std::string(op) + ": input from another tape");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.has_grad ? n.grad : empty_;
}

Tensor& Tape::grad_ref(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractViolation("backward: loss from another tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractViolation("backward: loss must be 1x1, got " +
                            shape_string(nodes_[loss.id].value));
  }
  grad_ref(loss.id)[0] += 1.0;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, i);
    if (!n.grad.all_finite()) throw NumericError(n.op, "gradient contains NaN/Inf");
  }
}

namespace {

enum class Bcast { Same, Row, Col, Scalar };

Bcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  throw ContractViolation(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " +
                          shape_string(a));
}

inline std::size_t b_index(Bcast m, std::size_t r, std::size_t c, std::size_t cols) {
  switch (m) {
    case Bcast::Same: return r * cols + c;
    case Bcast::Row: return c;
    case Bcast::Col: return r;
    case Bcast::Scalar: return 0;
  }
  return 0;
}

template <class F>
Tensor binary_values(const Tensor& a, const Tensor& b, Bcast m, F f) {
  Tensor out(a.rows(), a.cols());
  const std::size_t rows = a.rows(), cols = a.cols();
  const double* pa = a.flat().data();
  const double* pb = b.flat().data();
  double* po = out.flat().data();
  if (m == Bcast::Same) {
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      po[r * cols + c] = f(pa[r * cols + c], pb[b_index(m, r, c, cols)]);
  return out;
}

// Adds `g * factor(r, c)` into the right operand's adjoint, reducing over
// broadcast dimensions.
template <class F>
void reduce_into(Tensor& gb, const Tensor& g, Bcast m, F factor) {
  const std::size_t rows = g.rows(), cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      gb[b_index(m, r, c, cols)] += g[r * cols + c] * factor(r * cols + c);
}

template <class F>
Var unary(Var a, const char* op, F f, Tape::Backward bw) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  const double* pa = av.flat().data();
  double* po = out.flat().data();
  for (std::size_t i = 0; i < av.size(); ++i) po[i] = f(pa[i]);
  return a.tape->push(std::move(out), op, {a}, std::move(bw));
}

}  // namespace

Var add(Var a, Var b) {
  const Bcast m = broadcast_mode(a.value(), b.value(), "add");
  Tensor out = binary_values(a.value(), b.value(), m, [](double x, double y) { return x + y; });
  return a.tape->push(std::move(out), "add", {a, b}, [a, b, m](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b.id)) reduce_into(t.grad_ref(b.id), g, m, [](std::size_t) { return 1.0; });
  });
}

Var sub(Var a, Var b) {
  const Bcast m = broadcast_mode(a.value(), b.value(), "sub");
  Tensor out = binary_values(a.value(), b.value(), m, [](double x, double y) { return x - y; });
  return a.tape->push(std::move(out), "sub", {a, b}, [a, b, m](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b.id))
      reduce_into(t.grad_ref(b.id), g, m, [](std::size_t) { return -1.0; });
  });
}

Var mul(Var a, Var b) {
  const Bcast m = broadcast_mode(a.value(), b.value(), "mul");
  Tensor out = binary_values(a.value(), b.value(), m, [](double x, double y) { return x * y; });
  return a.tape->push(std::move(out), "mul", {a, b}, [a, b, m](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    const std::size_t cols = av.cols();
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += g[r * cols + c] * bv[b_index(m, r, c, cols)];
    }
    if (t.requires_grad(b.id))
      reduce_into(t.grad_ref(b.id), g, m, [&av](std::size_t i) { return av[i]; });
  });
}

Var scale(Var a, double k) {
  return unary(a, "scale", [k](double x) { return k * x; }, [a, k](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

Var add_scalar(Var a, double k) {
  return unary(a, "add_scalar", [k](double x) { return x + k; }, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var one_minus(Var a) {
  return unary(a, "one_minus", [](double x) { return 1.0 - x; }, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  });
}

Var matmul(Var a, Var b) {
  Tensor out = protohail::matmul(a.value(), b.value());
  return a.tape->push(std::move(out), "matmul", {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      matmul_accumulate(t.grad_ref(a.id), g, t.value(b.id), false, true);
    }
    if (t.requires_grad(b.id)) {
      matmul_accumulate(t.grad_ref(b.id), t.value(a.id), g, true, false);
    }
  });
}

Var matmul_bt(Var a, Var b) {
  Tensor out = protohail::matmul(a.value(), b.value(), false, true);
  return a.tape->push(std::move(out), "matmul_bt", {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      matmul_accumulate(t.grad_ref(a.id), g, t.value(b.id));
    }
    if (t.requires_grad(b.id)) {
      matmul_accumulate(t.grad_ref(b.id), g, t.value(a.id), true, false);
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(c, r) = av(r, c);
  return a.tape->push(std::move(out), "transpose", {a}, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
  });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [a](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var log_clamped(Var a, double floor) {
  return unary(
      a, "log", [floor](double x) { return std::log(std::max(x, floor)); },
      [a, floor](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a.id);
        Tensor& ga = t.grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > floor) ga[i] += g[i] / x[i];
      });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; }, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a.id);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  return a.tape->push(Tensor::scalar(s), "sum", {a}, [a](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractViolation("mean of empty tensor");
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  return a.tape->push(Tensor::scalar(s / static_cast<double>(n)), "mean", {a},
                      [a, n](Tape& t, std::uint32_t self) {
                        const double g = t.grad(self)[0] / static_cast<double>(n);
                        Tensor& ga = t.grad_ref(a.id);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                      });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row_span(r)) s += v;
    out[r] = s;
  }
  return a.tape->push(std::move(out), "row_sum", {a}, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_ref(a.id);
    const std::size_t cols = ga.cols();
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.rows()) throw ContractViolation("slice_rows out of range");
  const std::size_t cols = av.cols();
  Tensor out(end - begin, cols,
             std::vector<double>(av.flat().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                                 av.flat().begin() + static_cast<std::ptrdiff_t>(end * cols)));
  return a.tape->push(std::move(out), "slice_rows", {a},
                      [a, begin, cols](Tape& t, std::uint32_t self) {
                        const Tensor& g = t.grad(self);
                        Tensor& ga = t.grad_ref(a.id);
                        double* dst = ga.flat().data() + begin * cols;
                        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.cols()) throw ContractViolation("slice_cols out of range");
  const std::size_t w = end - begin;
  Tensor out(av.rows(), w);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = av(r, begin + c);
  return a.tape->push(std::move(out), "slice_cols", {a}, [a, begin, w](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) ga(r, begin + c) += g(r, c);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_rows of nothing");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ContractViolation("concat_rows column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) data.insert(data.end(), p.value().flat().begin(), p.value().flat().end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  Tape* tape = parts[0].tape;
  return tape->push(Tensor(rows, cols, std::move(data)), "concat_rows", parts,
                    [inputs](Tape& t, std::uint32_t self) {
                      const Tensor& g = t.grad(self);
                      std::size_t offset = 0;
                      for (const Var& p : inputs) {
                        const std::size_t n = t.value(p.id).size();
                        if (t.requires_grad(p.id)) {
                          Tensor& gp = t.grad_ref(p.id);
                          for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
                        }
                        offset += n;
                      }
                    });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_cols of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ContractViolation("concat_cols row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, offset + c) = pv(r, c);
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), "concat_cols", parts,
                             [inputs](Tape& t, std::uint32_t self) {
                               const Tensor& g = t.grad(self);
                               std::size_t off = 0;
                               for (const Var& p : inputs) {
                                 const std::size_t w = t.value(p.id).cols();
                                 if (t.requires_grad(p.id)) {
                                   Tensor& gp = t.grad_ref(p.id);
                                   for (std::size_t r = 0; r < g.rows(); ++r)
                                     for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
                                 }
                                 off += w;
                               }
                             });
}

Var gather_rows(Var a, std::vector<std::size_t> index) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols();
  Tensor out(index.size(), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.rows()) throw ContractViolation("gather_rows index out of range");
    for (std::size_t c = 0; c < cols; ++c) out(i, c) = av(index[i], c);
  }
  return a.tape->push(std::move(out), "gather_rows", {a},
                      [a, index = std::move(index), cols](Tape& t, std::uint32_t self) {
                        const Tensor& g = t.grad(self);
                        Tensor& ga = t.grad_ref(a.id);
                        for (std::size_t i = 0; i < index.size(); ++i)
                          for (std::size_t c = 0; c < cols; ++c) ga(index[i], c) += g(i, c);
                      });
}

}  // namespace protohail::ad
