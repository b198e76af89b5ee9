#include "malvis/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "malvis/error.hpp"

namespace malvis {

namespace {
std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {
  for (std::size_t d : shape_)
    if (d == 0) raise(errc::shape_mismatch, "tensor extents must be positive");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_)
    if (d == 0) raise(errc::shape_mismatch, "tensor extents must be positive");
  if (data_.size() != product(shape_))
    raise(errc::shape_mismatch, "data length does not match shape");
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (product(shape) != numel()) raise(errc::shape_mismatch, "reshape changes element count");
  return Tensor(std::move(shape), data_);
}

}  // namespace malvis
