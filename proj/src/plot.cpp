#include "sid/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace sid::plot {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette = {{
    {31, 119, 180},
    {255, 127, 14},
    {44, 160, 44},
    {214, 39, 40},
    {148, 103, 189},
    {140, 86, 75},
    {227, 119, 194},
    {127, 127, 127},
}};

std::pair<double, double> padded_range(double lo, double hi) {
  if (!(lo <= hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void put(Image8& img, int y, int x, const std::array<std::uint8_t, 3>& color) {
  if (y < 0 || x < 0 || y >= img.height() || x >= img.width()) return;
  for (int c = 0; c < 3; ++c) img(y, x, c) = color[static_cast<std::size_t>(c)];
}

}  // namespace

std::array<std::uint8_t, 3> series_color(std::size_t index) { return kPalette[index % kPalette.size()]; }

Image8 scatter(std::span<const Series> series, const ScatterOptions& options) {
  if (options.width <= 2 * options.margin || options.height <= 2 * options.margin) {
    throw InvalidArgument("scatter: canvas smaller than margins");
  }
  double x_lo = std::numeric_limits<double>::infinity();
  double x_hi = -x_lo;
  double y_lo = x_lo;
  double y_hi = -x_lo;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  const auto xr = options.x_range ? *options.x_range : padded_range(x_lo, x_hi);
  const auto yr = options.y_range ? *options.y_range : padded_range(y_lo, y_hi);

  Image8 img(options.height, options.width, 3, 255);
  const int left = options.margin;
  const int right = options.width - options.margin;
  const int top = options.margin;
  const int bottom = options.height - options.margin;
  const std::array<std::uint8_t, 3> axis{96, 96, 96};
  const std::array<std::uint8_t, 3> grid{225, 225, 225};
  for (int k = 1; k < 4; ++k) {
    const int gx = left + k * (right - left) / 4;
    const int gy = top + k * (bottom - top) / 4;
    for (int y = top; y <= bottom; ++y) put(img, y, gx, grid);
    for (int x = left; x <= right; ++x) put(img, gy, x, grid);
  }
  for (int x = left; x <= right; ++x) put(img, bottom, x, axis);
  for (int y = top; y <= bottom; ++y) put(img, y, left, axis);

  const int r = options.marker_radius;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto color = series_color(i);
    for (const auto& [x, y] : series[i].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      const double fx = (x - xr.first) / (xr.second - xr.first);
      const double fy = (y - yr.first) / (yr.second - yr.first);
      const int px = left + static_cast<int>(std::lround(fx * (right - left)));
      const int py = bottom - static_cast<int>(std::lround(fy * (bottom - top)));
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy <= r * r) put(img, py + dy, px + dx, color);
        }
      }
    }
  }
  return img;
}

}  // namespace sid::plot
