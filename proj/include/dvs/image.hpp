#pragma once

#include <Eigen/Core>

#include "dvs/grid.hpp"

namespace dvs {

using Rgb = Eigen::Vector3d;

// Linear RGB in [0,1] with a hole mask; hole pixels hold zero.
struct Image {
  Grid<Rgb> rgb;
  BoolGrid valid;

  Image() = default;
  Image(int width, int height) : rgb(width, height, Rgb::Zero()), valid(width, height, 0) {}

  int width() const { return rgb.width(); }
  int height() const { return rgb.height(); }
  bool is_valid(int x, int y) const { return valid(x, y) != 0; }

  void set(int x, int y, const Rgb& c) {
    rgb(x, y) = c.cwiseMax(0.0).cwiseMin(1.0);
    valid(x, y) = 1;
  }
  void clear(int x, int y) {
    rgb(x, y) = Rgb::Zero();
    valid(x, y) = 0;
  }

  static Image filled(int width, int height, const Rgb& c);
};

double luminance(const Rgb& c);

}  // namespace dvs
