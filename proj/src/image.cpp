#include "sid/image.hpp"

#include <algorithm>
#include <cmath>

namespace sid {
namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> make_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, s - lo};
  }
  return taps;
}

}  // namespace

Plane<double> resize_bilinear(const Plane<double>& src, int out_height, int out_width) {
  if (src.rows() == 0 || src.cols() == 0) throw InvalidArgument("resize: empty source");
  if (out_height < 1 || out_width < 1) throw InvalidArgument("resize: invalid target size");
  if (src.rows() == out_height && src.cols() == out_width) return src;

  const auto ty = make_taps(static_cast<int>(src.rows()), out_height);
  const auto tx = make_taps(static_cast<int>(src.cols()), out_width);
  Plane<double> out(out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_width; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      const double top = (1.0 - b.frac) * src(a.lo, b.lo) + b.frac * src(a.lo, b.hi);
      const double bottom = (1.0 - b.frac) * src(a.hi, b.lo) + b.frac * src(a.hi, b.hi);
      out(y, x) = (1.0 - a.frac) * top + a.frac * bottom;
    }
  }
  return out;
}

Image8 resize_bilinear(const Image8& src, int out_height, int out_width) {
  if (src.height() == out_height && src.width() == out_width) return src;
  std::vector<Plane<double>> planes;
  planes.reserve(static_cast<std::size_t>(src.channels()));
  for (int c = 0; c < src.channels(); ++c) {
    planes.push_back(resize_bilinear(src.channel(c).cast<double>(), out_height, out_width));
  }
  return to_image8(ImageD::from_planes(std::move(planes)));
}

Image8 to_image8(const ImageD& src) {
  std::vector<Plane<std::uint8_t>> planes;
  planes.reserve(static_cast<std::size_t>(src.channels()));
  for (int c = 0; c < src.channels(); ++c) {
    planes.push_back((src.channel(c) + 0.5).floor().max(0.0).min(255.0).cast<std::uint8_t>());
  }
  return Image8::from_planes(std::move(planes));
}

Image8 to_rgb(const Image8& src) {
  if (src.channels() == 3) return src;
  if (src.channels() != 1) throw InvalidArgument("to_rgb: expected 1 or 3 channels");
  return Image8::from_planes({src.channel(0), src.channel(0), src.channel(0)});
}

}  // namespace sid
