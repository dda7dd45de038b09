#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "sid/error.hpp"

namespace sid {

/// Row-major 2-D grid; row index is y, column index is x.
template <typename T>
using Plane = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MaskGrid = Plane<std::uint8_t>;

/// Planar image with an arbitrary channel count (1 = gray, 3 = RGB).
template <typename T>
class Image {
 public:
  using Scalar = T;

  Image() = default;
  Image(int height, int width, int channels, T fill = T{0})
      : planes_(static_cast<std::size_t>(channels), Plane<T>::Constant(height, width, fill)) {
    if (height < 0 || width < 0 || channels < 1) {
      throw InvalidArgument("image: invalid dimensions");
    }
  }

  static Image from_planes(std::vector<Plane<T>> planes) {
    if (planes.empty()) throw InvalidArgument("image: no channels");
    for (const auto& p : planes) {
      if (p.rows() != planes.front().rows() || p.cols() != planes.front().cols()) {
        throw InvalidArgument("image: channel dimensions differ");
      }
    }
    Image img;
    img.planes_ = std::move(planes);
    return img;
  }

  int height() const { return planes_.empty() ? 0 : static_cast<int>(planes_.front().rows()); }
  int width() const { return planes_.empty() ? 0 : static_cast<int>(planes_.front().cols()); }
  int channels() const { return static_cast<int>(planes_.size()); }
  bool empty() const { return height() == 0 || width() == 0; }

  Plane<T>& channel(int c) { return planes_.at(static_cast<std::size_t>(c)); }
  const Plane<T>& channel(int c) const { return planes_.at(static_cast<std::size_t>(c)); }

  T& operator()(int y, int x, int c) { return planes_[static_cast<std::size_t>(c)](y, x); }
  T operator()(int y, int x, int c) const { return planes_[static_cast<std::size_t>(c)](y, x); }

  bool same_shape(const Image& other) const {
    return height() == other.height() && width() == other.width() &&
           channels() == other.channels();
  }

  template <typename U>
  Image<U> cast() const {
    std::vector<Plane<U>> out;
    out.reserve(planes_.size());
    for (const auto& p : planes_) out.push_back(p.template cast<U>());
    return Image<U>::from_planes(std::move(out));
  }

  friend bool operator==(const Image& a, const Image& b) {
    if (!a.same_shape(b)) return false;
    for (int c = 0; c < a.channels(); ++c) {
      if ((a.channel(c) != b.channel(c)).any()) return false;
    }
    return true;
  }

 private:
  std::vector<Plane<T>> planes_;
};

using Image8 = Image<std::uint8_t>;
using ImageD = Image<double>;

/// Bilinear resampling with half-pixel centres and edge clamping:
/// source coordinate = (dst + 0.5) * in / out - 0.5.
Plane<double> resize_bilinear(const Plane<double>& src, int out_height, int out_width);

/// Per-channel bilinear resize; 8-bit output is rounded and clamped.
Image8 resize_bilinear(const Image8& src, int out_height, int out_width);

/// Quantize to 8 bits with round-half-up and clamping to [0, 255].
Image8 to_image8(const ImageD& src);

/// Expand a single-channel image to three identical channels.
Image8 to_rgb(const Image8& src);

}  // namespace sid
