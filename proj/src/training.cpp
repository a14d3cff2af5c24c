#include "ahl/training.hpp"

#include <chrono>

#include "ahl/errors.hpp"

namespace ahl {

Decoder decoder_for(Mode mode) { return mode == Mode::Coordreg ? Decoder::SoftArgmax : Decoder::Argmax; }

HeatmapEnvironment::HeatmapEnvironment(const DatasetSplit& data, const TrainConfig& config)
    : data_(data), mode_(config.mode), decoder_(decoder_for(config.mode)) {
  options_.epochs = 1;
  options_.lr = config.mode == Mode::Coordreg ? config.coordreg_lr : config.lr;
  options_.batch = config.batch;
  options_.augment = config.augment;
  if (data_.train.empty()) throw ConfigError("training split is empty");
  if (data_.validation.empty()) throw ConfigError("validation split is empty");
}

ChunkResult HeatmapEnvironment::train(Model& model, const SigmaVector& sigmas, std::size_t epochs,
                                      std::uint64_t seed) const {
  Rng rng(seed);
  ChunkResult out;
  for (std::size_t e = 0; e < epochs; ++e) {
    auto losses = mode_ == Mode::Coordreg ? train_coordreg(model, data_.train, options_, rng)
                                          : train_epochs(model, data_.train, sigmas, options_, rng);
    out.train_loss.push_back(std::move(losses.front()));
    out.val_error.push_back(validate(model, data_.validation, decoder_));
  }
  return out;
}

EvaluationSummary summarize(const ErrorTable& table, Decoder decoder, const std::vector<double>& pck_thresholds) {
  EvaluationSummary s;
  s.decoder = decoder;
  s.images = table.images();
  s.mre = mre(table);
  for (double r : pck_thresholds) s.pck.push_back({r, pck(table, r)});
  return s;
}

EvaluationSummary evaluate_learner(const LearnerState& learner, std::span<const Sample> samples, Decoder decoder,
                                   const std::vector<double>& pck_thresholds) {
  return summarize(evaluate_errors(learner, samples, decoder), decoder, pck_thresholds);
}

TrainConfig bind_to_dataset(TrainConfig config, const DatasetSplit& data) {
  config.arch.height = data.height;
  config.arch.width = data.width;
  config.arch.landmarks = data.landmarks;
  return config;
}

TrainingResult run_training(const TrainConfig& raw_config, const DatasetSplit& data, LoopHooks<LearnerState> hooks) {
  const TrainConfig config = bind_to_dataset(raw_config, data);
  config.validate();
  check_disjoint(data);
  if (data.test.empty()) throw ConfigError("test split is empty");

  const HeatmapEnvironment env(data, config);
  LearnerState initial = build_learner(config.arch, derive_seed(config.seed, "learner"));
  auto loop = run_loop(env, config, std::move(initial), std::move(hooks));

  TrainingResult result{std::move(loop.model), std::move(loop.controllers), std::move(loop.artifacts), {}};
  const auto t0 = std::chrono::steady_clock::now();
  result.summary = evaluate_learner(result.learner, data.test, env.decoder(), config.pck_thresholds);
  result.artifacts.timings.evaluation_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace ahl
