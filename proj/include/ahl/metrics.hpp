#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "ahl/heatmap.hpp"

namespace ahl {

/// Radial distances, rows = test images, cols = landmarks.
class ErrorTable {
 public:
  ErrorTable() = default;
  ErrorTable(std::size_t images, std::size_t landmarks, std::vector<double> distances);

  std::size_t images() const noexcept { return images_; }
  std::size_t landmarks() const noexcept { return landmarks_; }
  bool empty() const noexcept { return distances_.empty(); }
  double operator()(std::size_t image, std::size_t landmark) const {
    return distances_[image * landmarks_ + landmark];
  }
  const std::vector<double>& values() const noexcept { return distances_; }

 private:
  std::size_t images_ = 0;
  std::size_t landmarks_ = 0;
  std::vector<double> distances_;
};

/// resolution * Euclidean distance between prediction and ground truth,
/// per (image, landmark). preds[i][j] is landmark j of image i.
ErrorTable radial_errors(std::span<const std::vector<Point>> preds, std::span<const std::vector<Point>> gts,
                         double resolution = 1.0);

struct MreSummary {
  std::vector<double> per_landmark;  // column means
  double mean = 0.0;                 // mean over all entries
  double sd = 0.0;                   // population SD over all entries
};

MreSummary mre(const ErrorTable& table);

/// Percentage of entries with distance strictly below `radius`.
double pck(const ErrorTable& table, double radius);

/// CSV with header `image,landmark,distance`.
void write_error_csv(std::ostream& out, const ErrorTable& table);

}  // namespace ahl
