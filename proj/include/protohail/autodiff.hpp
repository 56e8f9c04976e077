#pragma once

// Minimal reverse-mode differentiation over rank-2 tensors.
//
// A Tape records every primitive evaluated during one forward pass; calling
// backward() on a 1x1 result propagates adjoints to every leaf. The primitive
// set is exactly what the encoder, prototype layer and policy head need.
// Binary elementwise ops broadcast their right operand when it is a 1xC row,
// an Rx1 column, or a 1x1 scalar.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "protohail/tensor.hpp"

namespace protohail::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule.
  void backward(Var loss);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records a primitive; throws NumericError naming `op` when `value` is not finite.
  Var push(Tensor value, const char* op, std::initializer_list<Var> inputs, Backward fn);
  Var push(Tensor value, const char* op, std::span<const Var> inputs, Backward fn);

  /// Adjoint accumulator of node `id`, zero-initialized on first access.
  Tensor& grad_ref(std::uint32_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    const char* op = "";
    Backward backward;
  };
  std::vector<Node> nodes_;
  Tensor empty_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var one_minus(Var a);

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_bt(Var a, Var b);
Var transpose(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
/// log(max(a, floor)); the gradient is zero where the floor is active.
Var log_clamped(Var a, double floor = 1e-12);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);
/// Sums each row: RxC -> Rx1.
Var row_sum(Var a);

Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// out.row(i) = a.row(index[i]); gradients scatter-add back.
Var gather_rows(Var a, std::vector<std::size_t> index);

}  // namespace protohail::ad
