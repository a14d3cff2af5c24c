#pragma once

// Experiment configuration (flat JSON) and the run directory:
//
//   config.echo.json  canonical, key-sorted configuration
//   sigma.csv         iteration,landmark,sigma
//   reward.csv        iteration,sample,landmark,sigma,epsilon,reward
//   epochs.csv        epoch,landmark,train_mse,val_mre
//   freeze.csv        landmark,iteration
//   summary.json      test-split MRE (per landmark, mean, SD) and PCK
//   timing.json       wall-clock seconds per phase
//   learner.ckpt      learner checkpoint
//   controllers.ckpt  controller checkpoint (laoml mode only)
//
// Every real number is written in shortest round-trip form, so reading a run
// back reproduces the in-memory records bit for bit.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ahl/laoml.hpp"
#include "ahl/training.hpp"

namespace ahl {

struct ExperimentConfig {
  TrainConfig train;
  std::string data;  // dataset directory
};

/// Flat key/value document with sorted keys; arrays for list values. The
/// warm-up and early-stop start are written resolved.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Applies the keys of `doc` on top of `base`. Unknown keys and ill-typed
/// values are collected into one ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc, ExperimentConfig base = {});

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

nlohmann::json summary_to_json(const EvaluationSummary& summary);
std::string summary_document(const EvaluationSummary& summary);

void write_run(const std::filesystem::path& dir, const ExperimentConfig& config, const TrainingResult& result);

/// Files written by write_run, relative to the run directory.
std::vector<std::string> run_file_names();

struct RunRecord {
  std::filesystem::path dir;
  ExperimentConfig config;
  RunArtifacts artifacts;  // timings left zero
  nlohmann::json summary;
};

RunArtifacts read_artifacts(const std::filesystem::path& dir);
RunRecord read_run(const std::filesystem::path& dir);

}  // namespace ahl
