#pragma once

// Synthetic landmark benchmark: a rotated, scaled composite figure (ellipse
// outline plus filled triangle) on a noisy background, with landmarks at
// geometric points of the figure. Stored on disk as
//
//   <dir>/meta.json        n, height, width, landmarks, seed, names, split ids
//   <dir>/images/<id>.pgm  16-bit binary PGM (P5, maxval 65535)
//   <dir>/landmarks.csv    id,landmark_index,row,col

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ahl/heatmap.hpp"
#include "ahl/numkernel.hpp"
#include "ahl/rng.hpp"

namespace ahl {

inline constexpr double kBorderMargin = 2.0;
inline constexpr std::size_t kMaxSynthLandmarks = 8;

struct Sample {
  Tensor image;  // 1 x H x W, values in [0, 1]
  LandmarkSet landmarks;
  std::string id;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t landmarks = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> landmark_names;

  std::size_t total() const noexcept { return train.size() + validation.size() + test.size(); }
};

/// Names of the first `count` synthetic landmarks.
std::vector<std::string> synth_landmark_names(std::size_t count);

/// `n` samples split 60/20/20 (train gets floor(0.6n), validation floor(0.2n),
/// test the rest).
DatasetSplit gen_dataset(std::size_t n, std::size_t height, std::size_t width, std::size_t landmarks,
                         std::uint64_t seed);

/// Throws ConfigError if ids overlap between splits.
void check_disjoint(const DatasetSplit& split);

bool within_margin(const LandmarkSet& landmarks, std::size_t height, std::size_t width,
                   double margin = kBorderMargin);

struct AugmentParams {
  bool flip = false;
  double shift_row = 0.0;
  double shift_col = 0.0;
  double scale = 1.0;
  double angle_deg = 0.0;
  double brightness = 0.0;
  double contrast = 1.0;
};

AugmentParams draw_augmentation(Rng& rng, std::size_t height, std::size_t width);

/// Applies one augmentation draw: optional horizontal flip, then rotation and
/// scaling about the image centre, then translation (nearest-neighbour
/// resampling, zero fill), then v -> contrast * v + brightness clipped to [0,1].
Sample apply_augmentation(const Sample& sample, const AugmentParams& params);

/// Draws until the transformed landmarks respect the border margin (at most
/// 10 attempts); returns the sample unchanged if every attempt fails.
Sample augment(const Sample& sample, Rng& rng);

void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit load_dataset(const std::filesystem::path& dir);

void write_pgm16(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm16(const std::filesystem::path& path);

bool bitwise_equal(const Sample& a, const Sample& b);
bool bitwise_equal(const DatasetSplit& a, const DatasetSplit& b);

}  // namespace ahl
