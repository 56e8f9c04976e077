#include "protohail/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace protohail {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : shape_{rows, cols}, data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + std::to_string(rows) + "x" +
                            std::to_string(cols));
  }
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

bool Tensor::all_finite() const noexcept {
  // x * 0 is 0 for finite x and NaN otherwise; the branch-free sum vectorizes.
  double acc = 0.0;
  for (double v : data_) acc += v * 0.0;
  return acc == 0.0;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t ka = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (ka != kb) {
    throw ContractViolation("matmul inner dimension mismatch: " + shape_string(a) + " vs " +
                            shape_string(b));
  }
  Tensor out(m, n);
  if (m == 0 || n == 0) return out;
  if (ka == 0) return out;
  ConstMap am(a.flat().data(), static_cast<Eigen::Index>(a.rows()),
              static_cast<Eigen::Index>(a.cols()));
  ConstMap bm(b.flat().data(), static_cast<Eigen::Index>(b.rows()),
              static_cast<Eigen::Index>(b.cols()));
  Map om(out.flat().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!transpose_a && !transpose_b) {
    om.noalias() = am * bm;
  } else if (!transpose_a && transpose_b) {
    om.noalias() = am * bm.transpose();
  } else if (transpose_a && !transpose_b) {
    om.noalias() = am.transpose() * bm;
  } else {
    om.noalias() = am.transpose() * bm.transpose();
  }
  return out;
}

void matmul_accumulate(Tensor& out, const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t ka = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (ka != kb || out.rows() != m || out.cols() != n) {
    throw ContractViolation("matmul_accumulate shape mismatch: " + shape_string(a) + " x " + shape_string(b) +
                            " into " + shape_string(out));
  }
  if (m == 0 || n == 0 || ka == 0) return;
  ConstMap am(a.flat().data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  ConstMap bm(b.flat().data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  Map om(out.flat().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!transpose_a && !transpose_b) {
    om.noalias() += am * bm;
  } else if (!transpose_a && transpose_b) {
    om.noalias() += am * bm.transpose();
  } else if (transpose_a && !transpose_b) {
    om.noalias() += am.transpose() * bm;
  } else {
    om.noalias() += am.transpose() * bm.transpose();
  }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractViolation("squared_distance width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace protohail
