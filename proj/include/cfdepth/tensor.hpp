#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfdepth/config.hpp"

CFDEPTH_BEGIN_NAMESPACE

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array; the innermost extent is the image width.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  Real* ptr() noexcept { return data_.data(); }
  const Real* ptr() const noexcept { return data_.data(); }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element of a rank-4 (N, C, H, W) tensor.
  Real& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Real at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same elements viewed under a new shape with identical element count.
  Tensor reshaped(Shape shape) const;
  void fill(Real value);
  bool all_finite() const noexcept;

  /// Bitwise equality of shape and elements.
  friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

/// Per-pixel class indices with a validity mask, laid out (N, H, W).
struct IndexMap {
  std::size_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> index;
  std::vector<std::uint8_t> valid;

  IndexMap() = default;
  IndexMap(std::size_t n_, std::size_t h_, std::size_t w_)
      : n(n_), h(h_), w(w_), index(n_ * h_ * w_, 0), valid(n_ * h_ * w_, 0) {}

  std::size_t size() const noexcept { return index.size(); }
  std::size_t count_valid() const noexcept;
  friend bool operator==(const IndexMap&, const IndexMap&) = default;
};

/// Throws DimensionError when a tensor has the wrong rank.
void require_rank(const Tensor& t, std::size_t rank, const char* what);

CFDEPTH_END_NAMESPACE
