#include "ahl/metrics.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "ahl/errors.hpp"
#include "ahl/format.hpp"

namespace ahl {

ErrorTable::ErrorTable(std::size_t images, std::size_t landmarks, std::vector<double> distances)
    : images_(images), landmarks_(landmarks), distances_(std::move(distances)) {
  if (distances_.size() != images_ * landmarks_) throw DimensionError("ErrorTable: size mismatch");
  for (double d : distances_) {
    if (!(d >= 0.0) || !std::isfinite(d)) throw ConfigError("ErrorTable: distances must be finite and >= 0");
  }
}

ErrorTable radial_errors(std::span<const std::vector<Point>> preds, std::span<const std::vector<Point>> gts,
                         double resolution) {
  if (!(resolution > 0.0)) throw ConfigError("radial_errors: resolution must be positive");
  if (preds.size() != gts.size()) {
    throw DimensionError("radial_errors: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(gts.size()) + " ground truths");
  }
  const std::size_t n = preds.empty() ? 0 : preds.front().size();
  std::vector<double> d;
  d.reserve(preds.size() * n);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != n || gts[i].size() != n) {
      throw DimensionError("radial_errors: landmark count mismatch at image " + std::to_string(i));
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double dr = preds[i][j].row - gts[i][j].row;
      const double dc = preds[i][j].col - gts[i][j].col;
      d.push_back(resolution * std::sqrt(dr * dr + dc * dc));
    }
  }
  return ErrorTable(preds.size(), n, std::move(d));
}

MreSummary mre(const ErrorTable& table) {
  if (table.empty()) throw ConfigError("mre: empty error table");
  MreSummary s;
  s.per_landmark.assign(table.landmarks(), 0.0);
  for (std::size_t i = 0; i < table.images(); ++i) {
    for (std::size_t j = 0; j < table.landmarks(); ++j) s.per_landmark[j] += table(i, j);
  }
  for (auto& v : s.per_landmark) v /= static_cast<double>(table.images());

  const auto& all = table.values();
  double sum = 0.0;
  for (double v : all) sum += v;
  s.mean = sum / static_cast<double>(all.size());
  double ss = 0.0;
  for (double v : all) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(all.size()));
  return s;
}

double pck(const ErrorTable& table, double radius) {
  if (!(radius > 0.0)) throw ConfigError("pck: radius must be positive");
  if (table.empty()) throw ConfigError("pck: empty error table");
  std::size_t hits = 0;
  for (double v : table.values()) {
    if (v < radius) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(table.values().size());
}

void write_error_csv(std::ostream& out, const ErrorTable& table) {
  out << "image,landmark,distance\n";
  for (std::size_t i = 0; i < table.images(); ++i) {
    for (std::size_t j = 0; j < table.landmarks(); ++j) {
      out << i << ',' << j << ',' << format_double(table(i, j)) << '\n';
    }
  }
}

}  // namespace ahl
