#include <gtest/gtest.h>

#include <cmath>

#include "sid/plot.hpp"

using namespace sid;
using namespace sid::plot;

TEST(Scatter, MarkersLandAtMappedPixels) {
  ScatterOptions opt;
  opt.width = 200;
  opt.height = 100;
  opt.margin = 20;
  opt.x_range = std::make_pair(0.0, 1.0);
  opt.y_range = std::make_pair(0.0, 1.0);
  const std::vector<Series> series = {{"a", {{0.5, 0.5}}}, {"b", {{1.0, 0.0}}}};
  const Image8 img = scatter(series, opt);
  ASSERT_EQ(img.height(), 100);
  ASSERT_EQ(img.width(), 200);
  const auto c0 = series_color(0);
  const auto c1 = series_color(1);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(img(50, 100, c), c0[static_cast<std::size_t>(c)]);
    EXPECT_EQ(img(80, 180, c), c1[static_cast<std::size_t>(c)]);
    EXPECT_EQ(img(5, 5, c), 255);
  }
}

TEST(Scatter, NonFinitePointsAreSkippedAndPaletteWraps) {
  const std::vector<Series> series = {{"a", {{NAN, 0.0}, {0.2, 0.3}, {0.4, 0.1}}}};
  const Image8 img = scatter(series);
  EXPECT_EQ(img.width(), 480);
  EXPECT_EQ(series_color(0), series_color(8));
  EXPECT_NE(series_color(0), series_color(1));
  ScatterOptions tiny;
  tiny.width = 40;
  tiny.margin = 20;
  EXPECT_THROW(scatter(series, tiny), InvalidArgument);
}

TEST(Scatter, EmptyInputStillDrawsAxes) {
  const Image8 img = scatter(std::vector<Series>{});
  EXPECT_EQ(img(360 - 32, 100, 0), 96);
}
