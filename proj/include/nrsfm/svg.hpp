#pragma once

#include <string>
#include <vector>

#include "nrsfm/types.hpp"

namespace nrsfm {

struct SvgSeries {
  Shape2D points;
  std::string label;
  std::string color;  // any SVG color
};

/// Scatter plot of 2D landmark sets sharing one bounding box, image-style
/// axes (y grows downward), with a legend. Output is deterministic text.
std::string landmark_svg(const std::vector<SvgSeries>& series, int size = 480);

}  // namespace nrsfm
