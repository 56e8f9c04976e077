#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace protohail {

/// Thrown when a caller breaks an operation's documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown when a computation produces NaN or Inf. `primitive()` names the
/// first operation whose output went non-finite.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string primitive, const std::string& detail)
      : std::runtime_error("non-finite value in '" + primitive + "': " + detail),
        primitive_(std::move(primitive)) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

/// Dense row-major tensor of doubles. Every op in this project uses rank <= 2;
/// a vector is a 1 x n row.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor row(std::span<const double> values);
  static Tensor column(std::span<const double> values);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() < 2 ? 0 : shape_[1]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }
  bool all_finite() const noexcept;
  void fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_{0, 0};
  std::vector<double> data_;
};

std::string shape_string(const Tensor& t);

/// C = A * B (or A * B^T when `transpose_b`), backed by Eigen's GEMM.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

/// out += op(A) * op(B), accumulating in place.
void matmul_accumulate(Tensor& out, const Tensor& a, const Tensor& b, bool transpose_a = false,
                       bool transpose_b = false);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace protohail
