#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqda {

/// Dense row-major array of doubles. Most of the library works on rank-2
/// tensors (rows x cols); batches are carried as rank-3.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
      : shape(std::move(dims)), values(count(shape), fill) {}

  Tensor(std::vector<std::size_t> dims, std::vector<double> data)
      : shape(std::move(dims)), values(std::move(data)) {
    if (values.size() != count(shape)) {
      std::ostringstream os;
      os << "tensor shape holds " << count(shape) << " values, got " << values.size();
      throw std::invalid_argument(os.str());
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  static Tensor row(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({1, n}, std::move(data));
  }

  static std::size_t count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_matrix() const { return shape.size() == 2; }
  bool is_scalar() const { return values.size() == 1; }

  double& operator()(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }

  double* row_ptr(std::size_t r) { return values.data() + r * cols(); }
  const double* row_ptr(std::size_t r) const { return values.data() + r * cols(); }

  double item() const {
    if (values.size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return values[0];
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.values == b.values;
  }
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

}  // namespace seqda
