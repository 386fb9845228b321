#include "ulab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace ulab {

namespace {

int64_t shape_product(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    require(d > 0, ErrorKind::dimension, "tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_product(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)) {
  require(shape_product(shape_) == static_cast<int64_t>(data.size()), ErrorKind::dimension,
          "tensor data length does not match shape");
  data_ = std::move(data);
}

float Tensor::scalar() const {
  require(size() == 1, ErrorKind::dimension, "scalar() on non-scalar tensor");
  return data_[0];
}

void Tensor::ensure_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0f);
}

std::span<float> Tensor::grad() {
  ensure_grad();
  return grad_;
}

std::span<const float> Tensor::grad() const {
  require(!grad_.empty(), ErrorKind::usage, "gradient read before any backward pass");
  return grad_;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(const char* what) const {
  if (!all_finite()) {
    std::ostringstream os;
    os << "non-finite values in " << what;
    fail(ErrorKind::data, os.str());
  }
}

TensorPtr make_tensor(std::vector<int> shape) { return std::make_shared<Tensor>(std::move(shape)); }

TensorPtr make_tensor(std::vector<int> shape, std::vector<float> data) {
  return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

TensorPtr make_scalar(float v) { return make_tensor({1}, {v}); }

}  // namespace ulab
