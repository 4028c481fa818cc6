#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mateicl {

/// Dense row-major matrix of 32-bit values. Reductions over it accumulate in
/// double precision.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, float fill = 0.0f);
  /// Takes ownership of `data`; throws ShapeError unless data.size() == rows * cols.
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  /// Appends the rows of `other` below this tensor. An empty tensor adopts
  /// other's column count.
  void append_rows(const Tensor2D& other);
  void append_row(std::span<const float> values);

  bool operator==(const Tensor2D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

Tensor2D identity(std::size_t n);

/// a × b. Throws ShapeError when a.cols() != b.rows().
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);

/// x · w + bias, with w stored as (in × out). `bias` may be empty.
Tensor2D linear(const Tensor2D& x, const Tensor2D& w, std::span<const float> bias);

/// Numerically stable softmax (max subtraction). Throws DomainError on an empty row.
std::vector<double> stable_softmax(std::span<const double> row);

struct MaskedSoftmax {
  std::vector<double> probs;
  /// Set when no entry was allowed; probs is then uniform.
  bool degenerate = false;
};

/// Softmax over the entries where `allowed` is true; disallowed entries get
/// exactly zero weight.
MaskedSoftmax masked_softmax(std::span<const double> row, std::span<const std::uint8_t> allowed);

/// log(sum(exp(row))) with max subtraction.
double log_sum_exp(std::span<const double> row);

/// (row - mean) / sqrt(var + eps) * gain + shift, statistics in double.
std::vector<float> layer_norm(std::span<const float> row, std::span<const float> gain,
                              std::span<const float> shift, double eps);

/// tanh approximation of GELU.
double gelu(double x);

/// max|a - b| / max|b| over all entries (0 when both are all-zero). Shapes must match.
double max_relative_error(std::span<const float> a, std::span<const float> b);
double max_abs_error(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const float> values);

}  // namespace mateicl
