#include "ahl/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ahl/errors.hpp"

namespace ahl {

void LandmarkSet::validate(std::size_t height, std::size_t width) const {
  if (coords.empty()) throw ConfigError("landmark set is empty");
  if (!names.empty() && names.size() != coords.size()) {
    throw ConfigError("landmark set has " + std::to_string(coords.size()) + " coordinates but " +
                      std::to_string(names.size()) + " names");
  }
  const double max_row = static_cast<double>(height) - 1.0;
  const double max_col = static_cast<double>(width) - 1.0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Point p = coords[i];
    if (!(p.row >= 0.0 && p.row <= max_row && p.col >= 0.0 && p.col <= max_col)) {
      throw ConfigError("landmark " + std::to_string(i) + " at (" + std::to_string(p.row) + ", " +
                        std::to_string(p.col) + ") is outside the image");
    }
  }
}

void check_sigma_bounds(const SigmaVector& sigmas, double sigma_min, double sigma_max) {
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= sigma_min && sigmas[i] <= sigma_max)) {
      throw ConfigError("sigma[" + std::to_string(i) + "] = " + std::to_string(sigmas[i]) + " outside [" +
                        std::to_string(sigma_min) + ", " + std::to_string(sigma_max) + "]");
    }
  }
}

void gaussian_heatmap_into(Point center, double sigma, std::size_t height, std::size_t width,
                           std::span<double> out) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_heatmap: sigma must be positive");
  if (out.size() != height * width) throw DimensionError("gaussian_heatmap: output buffer size mismatch");
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t r = 0; r < height; ++r) {
    const double dr = static_cast<double>(r) - center.row;
    for (std::size_t c = 0; c < width; ++c) {
      const double dc = static_cast<double>(c) - center.col;
      out[r * width + c] = std::exp(-(dr * dr + dc * dc) / denom);
    }
  }
}

Tensor gaussian_heatmap(Point center, double sigma, std::size_t height, std::size_t width) {
  Tensor out({height, width});
  gaussian_heatmap_into(center, sigma, height, width, out.values());
  return out;
}

HeatmapStack render_targets(std::span<const Point> coords, const SigmaVector& sigmas, std::size_t height,
                            std::size_t width) {
  if (coords.size() != sigmas.size()) {
    throw DimensionError("render_targets: " + std::to_string(coords.size()) + " landmarks but " +
                         std::to_string(sigmas.size()) + " sigmas");
  }
  if (coords.empty()) throw DimensionError("render_targets: no landmarks");
  HeatmapStack stack({coords.size(), height, width});
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    gaussian_heatmap_into(coords[i], sigmas[i], height, width, stack.values().subspan(i * plane, plane));
  }
  return stack;
}

HeatmapStack render_targets(const LandmarkSet& landmarks, const SigmaVector& sigmas, std::size_t height,
                            std::size_t width) {
  return render_targets(std::span<const Point>(landmarks.coords), sigmas, height, width);
}

std::vector<GridPoint> argmax_decode(const HeatmapStack& stack) {
  if (stack.rank() != 3) throw DimensionError("argmax_decode: expected N x H x W");
  const std::size_t n = stack.dim(0), h = stack.dim(1), w = stack.dim(2);
  std::vector<GridPoint> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double* p = stack.data() + c * h * w;
    std::size_t best = 0;
    // strict '>' keeps the first maximum in row-major order
    for (std::size_t i = 1; i < h * w; ++i) {
      if (p[i] > p[best]) best = i;
    }
    out[c] = GridPoint{best / w, best % w};
  }
  return out;
}

namespace {

// Softmax weights of the channel, max-subtracted.
std::vector<double> spatial_softmax(std::span<const double> channel) {
  std::vector<double> p(channel.size());
  const double mx = *std::max_element(channel.begin(), channel.end());
  double z = 0.0;
  for (std::size_t i = 0; i < channel.size(); ++i) {
    p[i] = std::exp(channel[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

Point soft_argmax_decode(std::span<const double> channel, std::size_t height, std::size_t width) {
  if (channel.size() != height * width || channel.empty()) {
    throw DimensionError("soft_argmax_decode: channel size mismatch");
  }
  for (double v : channel) {
    if (!std::isfinite(v)) throw NumericalError("soft_argmax_decode: non-finite input");
  }
  // Extended-precision accumulation keeps the decoded point within a few ulp,
  // which the finite-difference checks of the coordinate loss depend on.
  const double mx = *std::max_element(channel.begin(), channel.end());
  long double z = 0.0L, row = 0.0L, col = 0.0L;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const long double e = std::exp(static_cast<long double>(channel[r * width + c] - mx));
      z += e;
      row += e * static_cast<long double>(r);
      col += e * static_cast<long double>(c);
    }
  }
  Point u{static_cast<double>(row / z), static_cast<double>(col / z)};
  // guard against rounding just outside the grid
  u.row = std::clamp(u.row, 0.0, static_cast<double>(height) - 1.0);
  u.col = std::clamp(u.col, 0.0, static_cast<double>(width) - 1.0);
  return u;
}

Point soft_argmax_decode(const Tensor& channel) {
  if (channel.rank() != 2) throw DimensionError("soft_argmax_decode: expected H x W");
  return soft_argmax_decode(channel.values(), channel.dim(0), channel.dim(1));
}

void soft_argmax_backward(std::span<const double> channel, std::size_t height, std::size_t width, Point grad,
                          std::span<double> out) {
  if (channel.size() != height * width || out.size() != channel.size()) {
    throw DimensionError("soft_argmax_backward: size mismatch");
  }
  const std::vector<double> p = spatial_softmax(channel);
  Point u;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      u.row += p[r * width + c] * static_cast<double>(r);
      u.col += p[r * width + c] * static_cast<double>(c);
    }
  }
  // d u_row / d s_k = p_k (r_k - u_row), likewise for columns
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t k = r * width + c;
      out[k] = p[k] * (grad.row * (static_cast<double>(r) - u.row) + grad.col * (static_cast<double>(c) - u.col));
    }
  }
}

}  // namespace ahl
