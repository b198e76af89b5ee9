#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace malvis {

// Dense row-major n-dimensional array of doubles. The numeric substrate for
// all layers; shapes are fixed at construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t numel() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i) {
    assert(rank() == 1);
    return data_[i];
  }
  double& at(std::size_t i, std::size_t j) {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    assert(rank() == 4);
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at(std::size_t i) const { return const_cast<Tensor*>(this)->at(i); }
  double at(std::size_t i, std::size_t j) const { return const_cast<Tensor*>(this)->at(i, j); }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return const_cast<Tensor*>(this)->at(i, j, k);
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return const_cast<Tensor*>(this)->at(i, j, k, l);
  }

  void fill(double value);
  bool all_finite() const;

  // Same data, new shape with identical element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace malvis
