#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dvs {

// Dense row-major 2D grid. Pixel (x, y) lives at data[y * width + x].
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool same_shape(int w, int h) const { return w == width_ && h == height_; }
  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return other.width() == width_ && other.height() == height_;
  }

  T& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(int w, int h) {
    if (w < 0 || h < 0) throw std::invalid_argument("Grid: negative dimensions");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using BoolGrid = Grid<std::uint8_t>;

// Bilinear stencil for a continuous coordinate. Integer coordinates land on pixel centers.
struct BilinearTaps {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double w00 = 0, w10 = 0, w01 = 0, w11 = 0;
};

// Returns false when (u, v) is outside [0, w-1] x [0, h-1].
inline bool bilinear_taps(double u, double v, int w, int h, BilinearTaps& t) {
  if (!(u >= 0.0 && v >= 0.0 && u <= w - 1 && v <= h - 1)) return false;
  t.x0 = static_cast<int>(std::floor(u));
  t.y0 = static_cast<int>(std::floor(v));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  const double fx = u - t.x0;
  const double fy = v - t.y0;
  t.w00 = (1 - fx) * (1 - fy);
  t.w10 = fx * (1 - fy);
  t.w01 = (1 - fx) * fy;
  t.w11 = fx * fy;
  return true;
}

}  // namespace dvs
