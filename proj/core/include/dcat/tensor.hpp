#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcat::ad {

// Dense fp64 tensor, row-major. Rank 1 or 2 in practice; storage supports any
// rank. Shapes are immutable after construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> v);                 // shape {n}
  static Tensor matrix(int rows, int cols, std::vector<double> data);
  static Tensor zeros_like(const Tensor& t);
  static Tensor filled(std::vector<int> shape, double v);
  static Tensor identity(int n);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // 2-D view helpers: cols = last dim, rows = numel / cols.
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }
  int rows() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool bit_equal(const Tensor& other) const;

  Tensor reshaped(std::vector<int> shape) const;

  double item() const;  // requires numel() == 1

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

}  // namespace dcat::ad
