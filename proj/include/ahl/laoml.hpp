#pragma once

// Bilevel outer loop. After a warm-up at sigma_init, every iteration
//
//   1. samples K sigma sets from the per-landmark controllers,
//   2. clones the current model K times and trains clone j for t' epochs
//      under sigma set j (optionally on a thread pool),
//   3. scores every clone on validation (epsilon, K x N) with R = C - epsilon,
//   4. keeps the clone with the lowest mean epsilon as the sole model,
//   5. moves each landmark's sigma to the sample with its own best reward,
//   6. applies one REINFORCE step per unfrozen controller,
//   7. records the survivor's validation errors and freezes landmarks whose
//      recent error variance fell below the threshold.
//
// The loop is generic over the inner problem so it can be driven by the real
// heatmap learner or by a cheap analytic stand-in. An environment type must
// provide
//
//   using Model = ...;                      // copyable
//   std::size_t landmarks() const;
//   ChunkResult train(Model&, const SigmaVector&, std::size_t epochs,
//                     std::uint64_t seed) const;   // thread-safe
//
// Clone training draws only from its own seed, derived from (run seed,
// iteration, sample), so serial and threaded runs are bitwise identical.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ahl/controller.hpp"
#include "ahl/errors.hpp"
#include "ahl/heatmap.hpp"
#include "ahl/learner.hpp"
#include "ahl/rng.hpp"

namespace ahl {

enum class Mode { Laoml, Fixed, Decay, Coordreg };
enum class SigmaBroadcast { PerLandmark, Global };

const char* to_string(Mode mode);
Mode parse_mode(std::string_view text);
const char* to_string(SigmaBroadcast broadcast);
SigmaBroadcast parse_sigma_broadcast(std::string_view text);

inline constexpr std::size_t kReferenceEpochs = 250;
inline constexpr std::size_t kReferenceWarmup = 30;
inline constexpr std::size_t kReferenceEarlyStopStart = 100;

struct TrainConfig {
  Mode mode = Mode::Laoml;
  std::size_t samples = 10;     // K
  std::size_t inner_epochs = 5;  // t'
  std::size_t epochs = 250;
  std::optional<std::size_t> warmup;            // unset: scaled from 30 of 250
  std::optional<std::size_t> early_stop_start;  // unset: scaled from 100 of 250
  double sigma_init = 5.0;
  double sigma_min = kDefaultSigmaMin;
  double sigma_max = kDefaultSigmaMax;
  double reward_c = 25.0;
  std::size_t early_stop_window = 30;  // M, epochs
  double early_stop_threshold = 0.01;  // T_s
  bool early_stop = true;
  double lr = 2e-4;
  double controller_lr = 1e-3;
  double coordreg_lr = 2e-4;
  std::size_t batch = 8;
  bool augment = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  SigmaBroadcast sigma_broadcast = SigmaBroadcast::PerLandmark;
  std::vector<double> pck_thresholds{2.0, 3.0, 5.0};
  std::vector<std::size_t> controller_hidden{64, 32};
  ArchSpec arch;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;

  /// Reference value scaled by epochs/250, rounded to a multiple of t'.
  std::size_t scaled_epochs(std::size_t reference) const;
  std::size_t resolved_warmup() const;
  std::size_t resolved_early_stop_start() const;
  std::size_t iterations() const;
  ControllerConfig controller_config() const;
};

// ---- records ------------------------------------------------------------------

struct ChunkResult {
  std::vector<std::vector<double>> train_loss;  // epochs x N
  std::vector<std::vector<double>> val_error;   // epochs x N
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::vector<double> train_loss;
  std::vector<double> val_error;
};

struct RewardRecord {
  std::size_t iteration = 0;
  std::size_t sample = 0;
  std::size_t landmark = 0;
  double sigma = 0.0;
  double epsilon = 0.0;
  double reward = 0.0;
};

struct PhaseTimings {
  double warmup_seconds = 0.0;
  double inner_seconds = 0.0;
  double outer_seconds = 0.0;
  double evaluation_seconds = 0.0;
};

struct RunArtifacts {
  /// sigma[t] is the sigma vector after iteration t; sigma[0] is the
  /// post-warm-up value. Non-search modes record one entry per chunk.
  std::vector<std::vector<double>> sigma;
  std::vector<RewardRecord> rewards;
  std::vector<EpochRecord> epochs;
  /// Iteration at which each landmark froze, if it did.
  std::vector<std::optional<std::size_t>> freeze_iteration;
  PhaseTimings timings;  // not part of the determinism contract
};

/// Equality of everything except timings, comparing doubles bit by bit.
bool bitwise_equal(const RunArtifacts& a, const RunArtifacts& b);

/// Per-iteration mean reward over the K samples, one trace per landmark
/// (landmark x iteration, iterations in increasing order).
std::vector<std::vector<double>> reward_traces(const RunArtifacts& artifacts);

// ---- building blocks -------------------------------------------------------------

struct Selection {
  std::size_t model = 0;              // j*
  std::vector<std::size_t> sources;  // per landmark
};

/// `epsilon[j][i]` is the validation error of sample j on landmark i. Ties go
/// to the lowest sample index.
Selection select_best(const std::vector<std::vector<double>>& epsilon);

double population_variance(std::span<const double> values);

struct EarlyStopState {
  std::size_t window = 0;  // records, i.e. M / t'
  std::vector<std::deque<double>> records;
  std::vector<bool> stopped;
  std::vector<double> variance;

  EarlyStopState() = default;
  EarlyStopState(std::size_t landmarks, std::size_t window_records);
};

/// Appends one error per landmark, keeping the latest `window` records.
void record_errors(EarlyStopState& state, std::span<const double> errors);

/// Sets S_i where the window is full and its variance is below `threshold`.
/// Returns the landmarks that froze in this call.
std::vector<std::size_t> early_stop_check(EarlyStopState& state, double threshold);

/// Source of uniform variates in [0, 1) for action sampling.
using UniformSource = std::function<double()>;

struct SigmaSamples {
  std::vector<SigmaVector> sets;                   // K
  std::vector<std::vector<ActionSample>> actions;  // K x N; frozen entries keep action 0
  std::vector<std::vector<std::vector<double>>> histories;  // K x N policy inputs
};

SigmaSamples sample_sigma_sets(std::span<const ControllerState> controllers, const SigmaVector& current,
                               std::size_t k, double sigma_min, double sigma_max, const UniformSource& uniform);

/// Runs `count` tasks on up to `threads` worker threads. After all workers
/// finish, the exception of the lowest failing task index (if any) is rethrown.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task);

// ---- the loop ----------------------------------------------------------------------

template <class Model>
struct LoopHooks {
  UniformSource uniform;  // defaults to an rng seeded from the run seed
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called with the freshly cloned models before inner training.
  std::function<void(std::size_t iteration, const std::vector<Model>& clones)> on_clones;
  /// Called right after the broadcast with the survivor and the winning clone.
  std::function<void(std::size_t iteration, const Model& survivor, const Model& winner)> on_broadcast;
};

template <class Model>
struct LoopResult {
  Model model;
  std::vector<ControllerState> controllers;
  RunArtifacts artifacts;
};

template <class Env>
class LaomlLoop {
 public:
  using Model = typename Env::Model;

  LaomlLoop(const Env& env, TrainConfig config, LoopHooks<Model> hooks = {})
      : env_(env), config_(std::move(config)), hooks_(std::move(hooks)) {
    config_.validate();
    n_ = env_.landmarks();
    if (!hooks_.uniform) {
      action_rng_ = std::make_shared<Rng>(derive_seed(config_.seed, "actions"));
      auto rng = action_rng_;
      hooks_.uniform = [rng] { return uniform01(*rng); };
    }
  }

  LoopResult<Model> run(Model model) {
    const TrainConfig& c = config_;
    LoopResult<Model> out{std::move(model), {}, {}};
    RunArtifacts& art = out.artifacts;
    art.freeze_iteration.assign(n_, std::nullopt);

    const std::size_t warmup = c.mode == Mode::Decay ? 0 : c.resolved_warmup();
    SigmaVector sigma(n_, c.sigma_init);
    std::size_t epoch = 0;

    if (warmup > 0) {
      const auto t0 = Clock::now();
      const ChunkResult r = env_.train(out.model, sigma, warmup, derive_seed(c.seed, "warmup"));
      art.timings.warmup_seconds += seconds_since(t0);
      append_epochs(art, r, epoch);
    }

    if (c.mode == Mode::Laoml) {
      run_search(out, sigma, epoch);
    } else {
      run_schedule(out, sigma, epoch);
    }
    return out;
  }

 private:
  using Clock = std::chrono::steady_clock;
  static double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  }

  void append_epochs(RunArtifacts& art, const ChunkResult& r, std::size_t& epoch) const {
    for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
      EpochRecord rec{++epoch, r.train_loss[e], r.val_error[e]};
      if (hooks_.on_epoch) hooks_.on_epoch(rec);
      art.epochs.push_back(std::move(rec));
    }
  }

  // fixed / coordreg: sigma constant; decay: linear from sigma_init to
  // sigma_min, one epoch per chunk. Chunks after the warm-up use the same
  // seeds as sample 0 of the search so a K=1 search that never moves sigma
  // follows the same trajectory.
  void run_schedule(LoopResult<Model>& out, SigmaVector sigma, std::size_t& epoch) {
    const TrainConfig& c = config_;
    RunArtifacts& art = out.artifacts;
    art.sigma.push_back(sigma.values);
    const std::size_t chunk = c.mode == Mode::Decay ? 1 : c.inner_epochs;
    std::size_t iteration = 0;
    while (epoch < c.epochs) {
      ++iteration;
      const std::size_t len = std::min(chunk, c.epochs - epoch);
      if (c.mode == Mode::Decay) {
        const double frac = c.epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(c.epochs - 1) : 0.0;
        const double s = c.sigma_init + (c.sigma_min - c.sigma_init) * frac;
        sigma = SigmaVector(n_, std::clamp(s, c.sigma_min, c.sigma_max));
      }
      const auto t0 = Clock::now();
      const ChunkResult r = env_.train(out.model, sigma, len, derive_seed(c.seed, iteration, 0));
      art.timings.inner_seconds += seconds_since(t0);
      append_epochs(art, r, epoch);
      art.sigma.push_back(sigma.values);
    }
  }

  void run_search(LoopResult<Model>& out, SigmaVector& sigma, std::size_t& epoch) {
    const TrainConfig& c = config_;
    RunArtifacts& art = out.artifacts;
    const ControllerConfig cc = c.controller_config();
    for (std::size_t i = 0; i < n_; ++i) {
      out.controllers.push_back(build_controller(cc, derive_seed(c.seed, "controller", i)));
    }
    for (const EpochRecord& rec : art.epochs) {
      for (std::size_t i = 0; i < n_; ++i) push_loss(out.controllers[i], rec.train_loss[i]);
    }
    art.sigma.push_back(sigma.values);

    EarlyStopState stop(n_, c.early_stop_window / c.inner_epochs);
    const std::size_t stop_start = c.resolved_early_stop_start();
    const std::size_t iterations = c.iterations();

    for (std::size_t t = 1; t <= iterations; ++t) {
      auto t_outer = Clock::now();
      const SigmaSamples samples =
          sample_sigma_sets(out.controllers, sigma, c.samples, c.sigma_min, c.sigma_max, hooks_.uniform);
      std::vector<Model> clones(c.samples, out.model);
      if (hooks_.on_clones) hooks_.on_clones(t, clones);
      art.timings.outer_seconds += seconds_since(t_outer);

      const auto t_inner = Clock::now();
      std::vector<ChunkResult> results(c.samples);
      try {
        parallel_for(c.samples, c.threads, [&](std::size_t j) {
          results[j] = env_.train(clones[j], samples.sets[j], c.inner_epochs, derive_seed(c.seed, t, j));
        });
      } catch (const NumericalError& e) {
        throw NumericalError("iteration " + std::to_string(t) + " aborted: " + e.what());
      }
      art.timings.inner_seconds += seconds_since(t_inner);

      t_outer = Clock::now();
      std::vector<std::vector<double>> eps(c.samples);
      for (std::size_t j = 0; j < c.samples; ++j) {
        eps[j] = results[j].val_error.back();
        for (std::size_t i = 0; i < n_; ++i) {
          art.rewards.push_back({t, j, i, samples.sets[j][i], eps[j][i], compute_reward(eps[j][i], c.reward_c)});
        }
      }

      Selection sel = select_best(eps);
      if (c.sigma_broadcast == SigmaBroadcast::Global) sel.sources.assign(n_, sel.model);
      out.model = clones[sel.model];
      if (hooks_.on_broadcast) hooks_.on_broadcast(t, out.model, clones[sel.model]);
      append_epochs(art, results[sel.model], epoch);

      for (std::size_t i = 0; i < n_; ++i) {
        ControllerState& ctrl = out.controllers[i];
        if (ctrl.frozen) continue;
        const std::size_t src = sel.sources[i];
        sigma[i] = samples.sets[src][i];
        std::vector<Trajectory> traj;
        traj.reserve(c.samples);
        for (std::size_t j = 0; j < c.samples; ++j) {
          traj.push_back({samples.histories[j][i], samples.actions[j][i].index, c.reward_c - eps[j][i]});
        }
        reinforce_update(ctrl, traj);
        // Next policy input: the losses produced under the sigma just adopted.
        ctrl.history.clear();
        for (const auto& losses : results[src].train_loss) push_loss(ctrl, losses[i]);
      }
      art.sigma.push_back(sigma.values);

      if (c.early_stop) {
        record_errors(stop, eps[sel.model]);
        if (epoch >= stop_start) {
          for (std::size_t i : early_stop_check(stop, c.early_stop_threshold)) {
            out.controllers[i].frozen = true;
            art.freeze_iteration[i] = t;
          }
        }
      }
      art.timings.outer_seconds += seconds_since(t_outer);
    }
  }

  const Env& env_;
  TrainConfig config_;
  LoopHooks<Model> hooks_;
  std::shared_ptr<Rng> action_rng_;
  std::size_t n_ = 0;
};

template <class Env>
LoopResult<typename Env::Model> run_loop(const Env& env, const TrainConfig& config, typename Env::Model model,
                                         LoopHooks<typename Env::Model> hooks = {}) {
  return LaomlLoop<Env>(env, config, std::move(hooks)).run(std::move(model));
}

}  // namespace ahl
