#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sleepguard {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised on incompatible tensor shapes. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a tensor would hold NaN or Inf.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense row-major array of doubles.
///
/// Every constructor checks that the shape is non-empty, every dimension is
/// positive, and every element is finite. Code that mutates through
/// `mutable_data()` is expected to call `validate()` when the values come
/// from untrusted arithmetic.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const;

  /// Same data, new shape. Element count must match.
  Tensor reshaped(Shape shape) const;

  /// Throws NonFiniteError if any element is NaN or Inf.
  void validate() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class Norm { kL2, kLinf };

Norm parse_norm(const std::string& name);
std::string norm_name(Norm norm);

// Elementwise kernels. Binary ops require equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sign(const Tensor& a);
Tensor abs(const Tensor& a);

/// y += factor * x, in place.
void axpy_inplace(Tensor& y, double factor, const Tensor& x);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double norm(const Tensor& x, Norm p);
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace sleepguard
