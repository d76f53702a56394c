#pragma once

// Raster plots written as PNG. No text rendering; values live in the CSV/JSON next to each plot.

#include <array>
#include <vector>

#include "ditracker/io.hpp"

namespace ditracker {

using Color = std::array<std::uint8_t, 3>;

/// Distinct color for series/track index i.
Color palette(std::size_t i);
/// Blue-to-yellow ramp for t in [0, 1].
Color ramp(double t);

void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, Color c);
void draw_disc(RgbImage& img, double cx, double cy, double r, Color c, bool filled = true);

/// Frame `frame` upscaled by `scale` with each track's path over frames 0..frame; the current point
/// is a filled disc when predicted visible and a ring otherwise.
RgbImage trajectory_overlay(const Video& video, const std::vector<PredictedTrack>& tracks, Index frame, int scale = 4);

/// One cell per grid entry, rows top to bottom; colors span [min, max] of the grid.
RgbImage heatmap(const std::vector<std::vector<double>>& grid, int cell = 24);

/// Polylines of equal-length series on a shared axis box; y spans [y_min, y_max].
RgbImage line_plot(const std::vector<std::vector<double>>& series, double y_min, double y_max, Index height = 240, Index width = 320);

}  // namespace ditracker
