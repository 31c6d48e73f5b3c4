#pragma once

#include <cstdint>

#include "dvs/grid.hpp"

namespace dvs {

enum class DepthConvention { MetricDepth, NormalizedInverseDepth };

const char* to_string(DepthConvention c);

// Foreground mask: true marks dynamic content.
using Mask = BoolGrid;

struct DepthMap {
  Grid<double> values;
  BoolGrid valid;
  DepthConvention convention = DepthConvention::MetricDepth;

  DepthMap() = default;
  DepthMap(int width, int height, DepthConvention conv = DepthConvention::MetricDepth)
      : values(width, height, 0.0), valid(width, height, 0), convention(conv) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }

  bool is_valid(int x, int y) const { return valid.inside(x, y) && valid(x, y) != 0; }
  std::size_t valid_count() const;
  bool complete() const { return valid_count() == valid.size(); }

  // Throws std::invalid_argument when the convention's value range is violated.
  void check_invariants() const;

  static DepthMap complete_from(Grid<double> values, DepthConvention conv);
};

std::size_t count_true(const BoolGrid& g);

}  // namespace dvs
