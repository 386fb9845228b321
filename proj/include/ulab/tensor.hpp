#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ulab/error.hpp"

namespace ulab {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

// Dense row-major float32 tensor with an optional same-shape gradient buffer.
// Rank 1 and rank 2 cover everything the model needs; rank-1 tensors map to
// a [1 x n] matrix view.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  int rows() const { return ndim() == 2 ? shape_[0] : 1; }
  int cols() const { return ndim() == 2 ? shape_[1] : (ndim() == 1 ? shape_[0] : 1); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float scalar() const;

  MatMap mat() { return MatMap(data_.data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data_.data(), rows(), cols()); }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }
  std::span<float> grad();
  std::span<const float> grad() const;
  MatMap grad_mat() { ensure_grad(); return MatMap(grad_.data(), rows(), cols()); }

  bool all_finite() const;
  void check_finite(const char* what) const;

  // Parameters keep their gradients across a backward pass; intermediates
  // may be dropped afterwards.
  bool is_param = false;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
  std::vector<float> grad_;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape);
TensorPtr make_tensor(std::vector<int> shape, std::vector<float> data);
TensorPtr make_scalar(float v);

}  // namespace ulab
