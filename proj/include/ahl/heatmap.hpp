#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ahl/numkernel.hpp"

namespace ahl {

/// Continuous pixel coordinate.
struct Point {
  double row = 0.0;
  double col = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Integer pixel coordinate on the heatmap grid.
struct GridPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct LandmarkSet {
  std::vector<Point> coords;
  std::vector<std::string> names;

  std::size_t size() const noexcept { return coords.size(); }
  /// Throws ConfigError when empty, names and coords disagree, or any
  /// coordinate falls outside [0, H-1] x [0, W-1].
  void validate(std::size_t height, std::size_t width) const;
};

/// Per-landmark Gaussian standard deviations, in pixels.
struct SigmaVector {
  std::vector<double> values;

  SigmaVector() = default;
  explicit SigmaVector(std::vector<double> v) : values(std::move(v)) {}
  SigmaVector(std::size_t n, double sigma) : values(n, sigma) {}

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  friend bool operator==(const SigmaVector&, const SigmaVector&) = default;
};

inline constexpr double kDefaultSigmaMin = 1.0;
inline constexpr double kDefaultSigmaMax = 20.0;

void check_sigma_bounds(const SigmaVector& sigmas, double sigma_min, double sigma_max);

/// N x H x W stack of heatmap channels, one per landmark.
using HeatmapStack = Tensor;

/// Unnormalised isotropic Gaussian with peak 1 at `center`, sampled at
/// integer pixel centres over the whole H x W grid.
Tensor gaussian_heatmap(Point center, double sigma, std::size_t height, std::size_t width);

/// Writes gaussian_heatmap into an existing H*W buffer.
void gaussian_heatmap_into(Point center, double sigma, std::size_t height, std::size_t width,
                           std::span<double> out);

HeatmapStack render_targets(const LandmarkSet& landmarks, const SigmaVector& sigmas, std::size_t height,
                            std::size_t width);
HeatmapStack render_targets(std::span<const Point> coords, const SigmaVector& sigmas, std::size_t height,
                            std::size_t width);

/// Per-channel position of the maximum; ties go to the smallest row, then
/// the smallest column.
std::vector<GridPoint> argmax_decode(const HeatmapStack& stack);

/// Spatial-softmax expectation over one H x W channel.
Point soft_argmax_decode(std::span<const double> channel, std::size_t height, std::size_t width);
Point soft_argmax_decode(const Tensor& channel);

/// Gradient of (grad.row * row_hat + grad.col * col_hat) w.r.t. the channel
/// logits, written into `out` (H*W entries).
void soft_argmax_backward(std::span<const double> channel, std::size_t height, std::size_t width, Point grad,
                          std::span<double> out);

}  // namespace ahl
