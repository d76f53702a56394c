#include "ditracker/plot.hpp"

#include <algorithm>
#include <cmath>

namespace ditracker {

namespace {

void set_pixel(RgbImage& img, Index x, Index y, Color c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  std::copy(c.begin(), c.end(), img.at(y, x));
}

}  // namespace

Color palette(std::size_t i) {
  static constexpr Color kColors[] = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200}, {245, 130, 48},
                                      {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212}};
  return kColors[i % std::size(kColors)];
}

Color ramp(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  auto ch = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  return {ch(1.8 * t - 0.6), ch(0.15 + 0.8 * t), ch(0.55 + 0.6 * t - 1.1 * t * t)};
}

void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, Color c) {
  if (!std::isfinite(x0) || !std::isfinite(y0) || !std::isfinite(x1) || !std::isfinite(y1)) return;
  const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  const int steps = std::max(1, static_cast<int>(std::ceil(std::min(len, 1e4))));
  for (int i = 0; i <= steps; ++i) {
    const double a = static_cast<double>(i) / steps;
    set_pixel(img, static_cast<Index>(std::lround(x0 + a * (x1 - x0))), static_cast<Index>(std::lround(y0 + a * (y1 - y0))), c);
  }
}

void draw_disc(RgbImage& img, double cx, double cy, double r, Color c, bool filled) {
  if (!std::isfinite(cx) || !std::isfinite(cy)) return;
  const Index x0 = static_cast<Index>(std::floor(cx - r)), x1 = static_cast<Index>(std::ceil(cx + r));
  const Index y0 = static_cast<Index>(std::floor(cy - r)), y1 = static_cast<Index>(std::ceil(cy + r));
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      if (d <= r && (filled || d >= r - 1.0)) set_pixel(img, x, y, c);
    }
}

RgbImage trajectory_overlay(const Video& video, const std::vector<PredictedTrack>& tracks, Index frame, int scale) {
  require(scale >= 1, "trajectory_overlay: scale must be positive");
  const RgbImage base = frame_image(video, frame);
  RgbImage img(video.height * scale, video.width * scale);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x) {
      const std::uint8_t* src = base.pixels.data() + static_cast<std::size_t>(((y / scale) * base.width + x / scale) * 3);
      std::copy_n(src, 3, img.at(y, x));
    }
  // Pixel centers sit at (p + 0.5) * scale in the enlarged image.
  auto up = [&](double p) { return (p + 0.5) * scale - 0.5; };
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto& t = tracks[i];
    const Color c = palette(i);
    const Index last = std::min<Index>(frame, static_cast<Index>(t.positions.size()) - 1);
    for (Index f = 1; f <= last; ++f) {
      const auto& a = t.positions[static_cast<std::size_t>(f - 1)];
      const auto& b = t.positions[static_cast<std::size_t>(f)];
      draw_line(img, up(a.x), up(a.y), up(b.x), up(b.y), c);
    }
    if (last >= 0) {
      const auto& p = t.positions[static_cast<std::size_t>(last)];
      const bool vis = t.visibility.empty() || t.visibility[static_cast<std::size_t>(last)] > 0.5;
      draw_disc(img, up(p.x), up(p.y), 0.6 * scale + 1.0, c, vis);
    }
  }
  return img;
}

RgbImage heatmap(const std::vector<std::vector<double>>& grid, int cell) {
  require(!grid.empty() && !grid[0].empty() && cell >= 1, "heatmap: empty grid");
  double lo = grid[0][0], hi = grid[0][0];
  for (const auto& row : grid)
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const auto rows = static_cast<Index>(grid.size());
  const auto cols = static_cast<Index>(grid[0].size());
  RgbImage img(rows * cell, cols * cell, 255);
  for (Index r = 0; r < rows; ++r)
    for (Index k = 0; k < static_cast<Index>(grid[static_cast<std::size_t>(r)].size()) && k < cols; ++k) {
      const double v = grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
      const Color c = ramp(hi > lo ? (v - lo) / (hi - lo) : 0.5);
      for (Index y = r * cell + 1; y < (r + 1) * cell - 1; ++y)
        for (Index x = k * cell + 1; x < (k + 1) * cell - 1; ++x) set_pixel(img, x, y, c);
    }
  return img;
}

RgbImage line_plot(const std::vector<std::vector<double>>& series, double y_min, double y_max, Index height, Index width) {
  require(y_max > y_min, "line_plot: empty y range");
  require(height >= 32 && width >= 32, "line_plot: canvas too small");
  RgbImage img(height, width, 255);
  const double left = 24, right = static_cast<double>(width) - 12, top = 12, bottom = static_cast<double>(height) - 24;
  const Color axis{40, 40, 40};
  draw_line(img, left, top, left, bottom, axis);
  draw_line(img, left, bottom, right, bottom, axis);
  for (int g = 1; g < 4; ++g) {
    const double y = bottom - (bottom - top) * g / 4.0;
    draw_line(img, left - 3, y, left, y, axis);
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& v = series[s];
    const Color c = palette(s);
    auto px = [&](std::size_t i) { return v.size() == 1 ? (left + right) / 2 : left + (right - left) * static_cast<double>(i) / static_cast<double>(v.size() - 1); };
    auto py = [&](double y) { return bottom - (bottom - top) * (std::clamp(y, y_min, y_max) - y_min) / (y_max - y_min); };
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i > 0) draw_line(img, px(i - 1), py(v[i - 1]), px(i), py(v[i]), c);
      draw_disc(img, px(i), py(v[i]), 2.5, c);
    }
  }
  return img;
}

}  // namespace ditracker
