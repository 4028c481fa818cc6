#include "mateicl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mateicl/error.hpp"

namespace mateicl {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) + " values, expected " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

void Tensor2D::append_rows(const Tensor2D& other) {
  if (other.rows_ == 0) return;
  if (rows_ == 0) cols_ = other.cols_;
  if (other.cols_ != cols_) {
    throw ShapeError("append_rows: column mismatch " + std::to_string(cols_) + " vs " +
                     std::to_string(other.cols_));
  }
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  rows_ += other.rows_;
}

void Tensor2D::append_row(std::span<const float> values) {
  if (rows_ == 0) cols_ = values.size();
  if (values.size() != cols_) throw ShapeError("append_row: column mismatch");
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Tensor2D identity(std::size_t n) {
  Tensor2D out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0f;
  return out;
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor2D out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

Tensor2D linear(const Tensor2D& x, const Tensor2D& w, std::span<const float> bias) {
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " vs weight rows " +
                     std::to_string(w.rows()));
  }
  if (!bias.empty() && bias.size() != w.cols()) throw ShapeError("linear: bias width mismatch");
  Tensor2D out(x.rows(), w.cols());
  std::vector<double> acc(w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (bias.empty()) {
      std::fill(acc.begin(), acc.end(), 0.0);
    } else {
      std::copy(bias.begin(), bias.end(), acc.begin());
    }
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xik = x(i, k);
      const auto wrow = w.row(k);
      for (std::size_t j = 0; j < w.cols(); ++j) acc[j] += xik * wrow[j];
    }
    for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

std::vector<double> stable_softmax(std::span<const double> row) {
  if (row.empty()) throw DomainError("softmax of an empty row");
  const double peak = *std::max_element(row.begin(), row.end());
  std::vector<double> out(row.size());
  double total = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

MaskedSoftmax masked_softmax(std::span<const double> row, std::span<const std::uint8_t> allowed) {
  if (allowed.size() != row.size()) throw ShapeError("masked_softmax: mask length mismatch");
  MaskedSoftmax result;
  result.probs.assign(row.size(), 0.0);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (allowed[i]) peak = std::max(peak, row[i]);
  }
  if (peak == -std::numeric_limits<double>::infinity()) {
    result.degenerate = true;
    if (!row.empty()) {
      std::fill(result.probs.begin(), result.probs.end(), 1.0 / static_cast<double>(row.size()));
    }
    return result;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!allowed[i]) continue;
    result.probs[i] = std::exp(row[i] - peak);
    total += result.probs[i];
  }
  for (double& v : result.probs) v /= total;
  return result;
}

double log_sum_exp(std::span<const double> row) {
  if (row.empty()) throw DomainError("log_sum_exp of an empty row");
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - peak);
  return peak + std::log(total);
}

std::vector<float> layer_norm(std::span<const float> row, std::span<const float> gain,
                              std::span<const float> shift, double eps) {
  if (gain.size() != row.size() || shift.size() != row.size()) {
    throw ShapeError("layer_norm: row/gain/shift lengths differ");
  }
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  const std::size_t n = row.size();
  std::vector<float> out(n);
  if (n == 0) return out;
  double mean = 0.0;
  for (float v : row) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : row) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>((row[i] - mean) * inv * gain[i] + shift[i]);
  }
  return out;
}

double gelu(double x) {
  constexpr double kCoeff = 0.044715;
  const double inner = std::sqrt(2.0 / std::numbers::pi) * (x + kCoeff * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double max_relative_error(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - b[i]));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  if (diff == 0.0) return 0.0;
  return scale == 0.0 ? std::numeric_limits<double>::infinity() : diff / scale;
}

double max_abs_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_error: length mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  return diff;
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace mateicl
