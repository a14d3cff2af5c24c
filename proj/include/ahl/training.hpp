#pragma once

// End-to-end runs on a synthetic dataset: the heatmap learner plugged into
// the outer loop, the four training modes, and the final test evaluation.

#include <cstddef>
#include <functional>
#include <vector>

#include "ahl/laoml.hpp"
#include "ahl/learner.hpp"
#include "ahl/metrics.hpp"
#include "ahl/synthdata.hpp"

namespace ahl {

/// Inner problem for LaomlLoop backed by the heatmap learner. Every epoch is
/// followed by a validation pass so each epoch record carries both the
/// training loss and the validation MRE.
class HeatmapEnvironment {
 public:
  using Model = LearnerState;

  HeatmapEnvironment(const DatasetSplit& data, const TrainConfig& config);

  std::size_t landmarks() const { return data_.landmarks; }
  Decoder decoder() const { return decoder_; }

  ChunkResult train(Model& model, const SigmaVector& sigmas, std::size_t epochs, std::uint64_t seed) const;

 private:
  const DatasetSplit& data_;
  Mode mode_;
  TrainOptions options_;
  Decoder decoder_;
};

/// Heatmap modes decode by argmax; coordinate regression by soft-argmax.
Decoder decoder_for(Mode mode);

struct PckEntry {
  double radius = 0.0;
  double percent = 0.0;
};

struct EvaluationSummary {
  Decoder decoder = Decoder::Argmax;
  std::size_t images = 0;
  MreSummary mre;
  std::vector<PckEntry> pck;
};

EvaluationSummary summarize(const ErrorTable& table, Decoder decoder, const std::vector<double>& pck_thresholds);

EvaluationSummary evaluate_learner(const LearnerState& learner, std::span<const Sample> samples, Decoder decoder,
                                   const std::vector<double>& pck_thresholds);

struct TrainingResult {
  LearnerState learner;
  std::vector<ControllerState> controllers;  // empty outside laoml mode
  RunArtifacts artifacts;
  EvaluationSummary summary;
};

/// Config architecture extents are taken from the dataset; depth and widths
/// from the config. Throws ConfigError on overlapping splits.
TrainingResult run_training(const TrainConfig& config, const DatasetSplit& data,
                            LoopHooks<LearnerState> hooks = {});

/// The config with its architecture extents set to the dataset's.
TrainConfig bind_to_dataset(TrainConfig config, const DatasetSplit& data);

}  // namespace ahl
