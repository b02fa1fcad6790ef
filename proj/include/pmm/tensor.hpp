#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmm {

/// Dense row-major matrix of doubles. Vectors are 1xN or Nx1; scalars 1x1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  Tensor(int r, int c, double fill)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}
  Tensor(int r, int c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != static_cast<size_t>(r) * c) {
      throw std::invalid_argument("Tensor: data size does not match shape");
    }
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

  int size() const { return rows * cols; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double item() const {
    if (size() != 1) throw std::logic_error("Tensor::item on non-scalar");
    return data[0];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
  }
};

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("shape mismatch: " + what);
}

}  // namespace pmm
