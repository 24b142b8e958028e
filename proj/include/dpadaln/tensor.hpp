#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpadaln {

/// Raised for contract violations (bad shapes, invalid configuration, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major f64 array. Rank 0 is a scalar, rank 1 a vector, rank 2 a
/// matrix; the tape operations treat a rank-1 tensor of length n as 1 x n.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros_like(const Tensor& t);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  double item() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;
};

std::size_t shape_product(const std::vector<std::size_t>& dims);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& t);

}  // namespace dpadaln
