#pragma once

// Inner heatmap regressor: a small U-Net style encoder-decoder.
//
//   encoder level l : conv3x3(in -> widths[l]) + ReLU, kept as skip, maxpool 2x2
//   bottleneck      : conv3x3(widths[d-1] -> widths[d-1]) + ReLU
//   decoder level l : upsample x2, concat skip l, conv3x3 -> out_l + ReLU,
//                     out_l = widths[l-1] (widths[0] at the top level)
//   head            : conv1x1(widths[0] -> landmarks), no activation
//
// Parameters are stored weight/bias pairs in declaration order: encoder
// levels 0..d-1, bottleneck, decoder levels d-1..0, head.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "ahl/heatmap.hpp"
#include "ahl/metrics.hpp"
#include "ahl/numkernel.hpp"
#include "ahl/rng.hpp"
#include "ahl/synthdata.hpp"

namespace ahl {

struct ArchSpec {
  std::size_t depth = 3;
  std::vector<std::size_t> widths{8, 16, 32};
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t landmarks = 4;

  void validate() const;
  std::vector<Shape> parameter_shapes() const;
  std::size_t parameter_count() const;
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

struct LearnerState {
  ArchSpec arch;
  std::vector<Tensor> params;
  std::vector<AdamState> optim;
  std::uint64_t seed = 0;
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases, fresh Adam state.
LearnerState build_learner(const ArchSpec& arch, std::uint64_t seed);

/// Deep copy; the result shares nothing with `src`.
LearnerState clone_weights(const LearnerState& src);

/// Architecture, parameters and optimizer state compare bitwise equal.
bool bitwise_equal(const LearnerState& a, const LearnerState& b);
bool same_parameters(const LearnerState& a, const LearnerState& b);

/// Activations retained by forward() for the backward pass.
struct ForwardCache {
  std::vector<Tensor> enc_in;
  std::vector<Tensor> enc_act;
  std::vector<std::vector<std::size_t>> pool_argmax;
  Tensor bott_in;
  Tensor bott_act;
  std::vector<Tensor> dec_in;
  std::vector<Tensor> dec_act;
  Tensor head_in;
};

HeatmapStack forward(const LearnerState& learner, const Tensor& image);
HeatmapStack forward(const LearnerState& learner, const Tensor& image, ForwardCache& cache);

/// Parameter gradients (declaration order) for an upstream gradient on the
/// N x H x W output.
std::vector<Tensor> backward(const LearnerState& learner, const ForwardCache& cache, const Tensor& grad_output);

struct TrainOptions {
  std::size_t epochs = 1;
  double lr = 2e-4;
  std::size_t batch = 8;
  bool augment = true;
};

/// Called after every epoch with the 0-based epoch index and the per-landmark
/// mean training loss of that epoch.
using EpochCallback = std::function<void(std::size_t epoch, const std::vector<double>& losses)>;

/// Heatmap regression with targets rendered at `sigmas`. Returns epochs x N
/// per-landmark mean MSE (averaged over the samples seen in the epoch, each
/// measured before the optimizer step of its batch).
std::vector<std::vector<double>> train_epochs(LearnerState& learner, std::span<const Sample> train,
                                              const SigmaVector& sigmas, const TrainOptions& options, Rng& rng,
                                              const EpochCallback& on_epoch = {});

/// Coordinate regression through the spatial soft-argmax. Per-sample loss is
/// the mean over landmarks and both axes of the squared coordinate error;
/// the returned per-landmark record is the mean squared radial error.
std::vector<std::vector<double>> train_coordreg(LearnerState& learner, std::span<const Sample> train,
                                                const TrainOptions& options, Rng& rng,
                                                const EpochCallback& on_epoch = {});

/// Mean heatmap MSE over channels for one sample (no augmentation).
double heatmap_loss(const LearnerState& learner, const Sample& sample, const SigmaVector& sigmas);
std::vector<Tensor> heatmap_loss_gradient(const LearnerState& learner, const Sample& sample,
                                          const SigmaVector& sigmas);

double coordreg_loss(const LearnerState& learner, const Sample& sample);
std::vector<Tensor> coordreg_loss_gradient(const LearnerState& learner, const Sample& sample);

enum class Decoder { Argmax, SoftArgmax };

std::vector<Point> predict(const LearnerState& learner, const Tensor& image, Decoder decoder = Decoder::Argmax);

/// Prediction errors over a sample set, in pixels times `resolution`.
ErrorTable evaluate_errors(const LearnerState& learner, std::span<const Sample> samples,
                           Decoder decoder = Decoder::Argmax, double resolution = 1.0);

/// Per-landmark mean radial error (pixels).
std::vector<double> validate(const LearnerState& learner, std::span<const Sample> samples,
                             Decoder decoder = Decoder::Argmax);

/// Binary checkpoint:
///   "AHLCKPT\0", u32 version (1), u32 depth, u32 widths[depth],
///   u32 height, u32 width, u32 landmarks, u64 parameter count,
///   then every parameter as little-endian f64 in declaration order.
void save_checkpoint(const std::filesystem::path& path, const LearnerState& learner);
LearnerState load_checkpoint(const std::filesystem::path& path);

}  // namespace ahl
