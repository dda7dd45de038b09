#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sid/image.hpp"

namespace sid::plot {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct ScatterOptions {
  int width = 480;
  int height = 360;
  int margin = 32;
  int marker_radius = 4;
  /// Axis ranges; unset means the data range padded by 5%.
  std::optional<std::pair<double, double>> x_range;
  std::optional<std::pair<double, double>> y_range;
};

/// Fixed palette; series i gets colour i modulo the palette size.
std::array<std::uint8_t, 3> series_color(std::size_t index);

/// White canvas, gray axes along the left and bottom margins, filled disc
/// markers per series. Legend and axis labels go to a sidecar by the caller.
Image8 scatter(std::span<const Series> series, const ScatterOptions& options = {});

}  // namespace sid::plot
