// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace csilab {

/// Dense row-major matrix used for all model activations and parameters.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N-dimensional row-major array of doubles. Every dimension is >= 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  /// Flat offset of a multi-index; throws std::out_of_range on bad indices.
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  double& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  double at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Round to the nearest IEEE single-precision value.
inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace csilab
