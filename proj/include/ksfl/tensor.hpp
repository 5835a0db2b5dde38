#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ksfl {

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {
    if (data.size() != element_count()) {
      throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape product " +
                                  std::to_string(element_count()));
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape_) {
    std::size_t n = 1;
    for (auto d : shape_) n *= d;
    return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
  }

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }

  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline void require_matrix(const Tensor& t, std::size_t cols, const std::string& what) {
  if (t.shape.size() != 2) {
    throw std::invalid_argument(what + ": expected a 2-d tensor, got rank " +
                                std::to_string(t.shape.size()));
  }
  if (t.shape[1] != cols) {
    throw std::invalid_argument(what + ": expected " + std::to_string(cols) +
                                " columns, got " + std::to_string(t.shape[1]));
  }
}

}  // namespace ksfl
