#ifndef QULAB_TENSOR_HPP_
#define QULAB_TENSOR_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace qulab {

using Shape = std::vector<int>;

// Dense row-major float32 array. Value semantics throughout; no views,
// no broadcasting beyond what the ops provide explicitly.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  // Rank-2 helpers.
  int rows() const { return shape_[0]; }
  int cols() const { return shape_[1]; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float at2(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  float& at2(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  float item() const;  // requires size() == 1

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(float value);

  std::string shape_str() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

int64_t shape_numel(const Shape& shape);

}  // namespace qulab

#endif  // QULAB_TENSOR_HPP_
