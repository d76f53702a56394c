#pragma once

#include <vector>

#include "ditracker/numerics.hpp"
#include "ditracker/tensor.hpp"

namespace ditracker {

/// F frames of H x W RGB pixels in [0, 1], stored frame-major then row-major, channels last.
struct Video {
  Index frames = 0;
  Index height = 0;
  Index width = 0;
  std::vector<float> pixels;

  Video() = default;
  Video(Index f, Index h, Index w) : frames(f), height(h), width(w), pixels(static_cast<std::size_t>(f * h * w * 3), 0.0f) {
    require(f >= 1 && h >= 1 && w >= 1, "Video: dimensions must be positive");
  }

  GridShape shape() const { return {frames, height, width}; }
  std::size_t offset(Index f, Index y, Index x) const { return static_cast<std::size_t>(((f * height + y) * width + x) * 3); }
  float& at(Index f, Index y, Index x, int c) { return pixels[offset(f, y, x) + static_cast<std::size_t>(c)]; }
  float at(Index f, Index y, Index x, int c) const { return pixels[offset(f, y, x) + static_cast<std::size_t>(c)]; }
  bool operator==(const Video&) const = default;

  /// (frames * H * W) x 3 matrix view of the pixels converted to T.
  template <typename T>
  Matrix<T> to_matrix() const {
    return Eigen::Map<const Matrix<float>>(pixels.data(), frames * height * width, 3).template cast<T>();
  }

  /// Copy of frames [first, first + count) in the order given by `order`.
  Video select(const std::vector<Index>& order) const {
    Video out(static_cast<Index>(order.size()), height, width);
    const std::size_t frame_size = static_cast<std::size_t>(height * width * 3);
    for (std::size_t i = 0; i < order.size(); ++i) {
      require(order[i] >= 0 && order[i] < frames, "Video::select: frame index out of range");
      std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(order[i]) * static_cast<std::ptrdiff_t>(frame_size), frame_size,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(i * frame_size));
    }
    return out;
  }
};

/// Bilinear corner-aligned resize of every frame.
Video resize_video(const Video& video, Index out_h, Index out_w);

}  // namespace ditracker
