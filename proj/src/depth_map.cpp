#include "dvs/depth_map.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dvs {

const char* to_string(DepthConvention c) {
  switch (c) {
    case DepthConvention::MetricDepth:
      return "metric";
    case DepthConvention::NormalizedInverseDepth:
      return "normalized_inverse";
  }
  return "unknown";
}

std::size_t count_true(const BoolGrid& g) {
  std::size_t n = 0;
  for (auto v : g.data()) n += v != 0;
  return n;
}

std::size_t DepthMap::valid_count() const { return count_true(valid); }

void DepthMap::check_invariants() const {
  if (!values.same_shape(valid)) throw std::invalid_argument("DepthMap: value/valid shape mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!valid[i]) continue;
    const double d = values[i];
    if (!std::isfinite(d)) throw std::invalid_argument("DepthMap: non-finite valid value");
    if (convention == DepthConvention::MetricDepth && d <= 0.0)
      throw std::invalid_argument("DepthMap: non-positive metric depth at index " +
                                  std::to_string(i));
    if (convention == DepthConvention::NormalizedInverseDepth && (d < 0.0 || d > 1.0))
      throw std::invalid_argument("DepthMap: normalized inverse depth outside [0,1]");
  }
}

DepthMap DepthMap::complete_from(Grid<double> values, DepthConvention conv) {
  DepthMap d;
  d.valid = BoolGrid(values.width(), values.height(), 1);
  d.values = std::move(values);
  d.convention = conv;
  d.check_invariants();
  return d;
}

}  // namespace dvs
