#pragma once

// Per-landmark policy controller: an MLP from the recent per-epoch training
// losses of one landmark to probabilities over the sigma actions (-1, 0, +1),
// updated with REINFORCE on raw rewards R = C - epsilon.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <vector>

#include "ahl/numkernel.hpp"
#include "ahl/rng.hpp"

namespace ahl {

inline constexpr std::size_t kActionCount = 3;
inline constexpr std::array<int, kActionCount> kActions{-1, 0, +1};

struct ControllerConfig {
  std::size_t inputs = 5;
  std::vector<std::size_t> hidden{64, 32};
  double lr = 1e-3;

  void validate() const;
  friend bool operator==(const ControllerConfig&, const ControllerConfig&) = default;
};

struct ControllerState {
  ControllerConfig config;
  std::vector<Tensor> params;  // W, b per layer; final layer maps to kActionCount
  std::vector<AdamState> optim;
  std::deque<double> history;  // oldest first, at most config.inputs entries
  bool frozen = false;
};

/// He-normal hidden layers, zero final layer (uniform initial policy).
ControllerState build_controller(const ControllerConfig& config, std::uint64_t seed);

bool bitwise_equal(const ControllerState& a, const ControllerState& b);

/// Appends one per-epoch loss, dropping the oldest beyond config.inputs.
void push_loss(ControllerState& ctrl, double loss);

/// The policy input: the buffered losses left-padded with the earliest value
/// (zeros when nothing has been recorded yet).
std::vector<double> history_input(const ControllerState& ctrl);

using ActionProbs = std::array<double, kActionCount>;

ActionProbs policy_forward(const ControllerState& ctrl, std::span<const double> history);
ActionProbs policy_forward(const ControllerState& ctrl);

struct ActionSample {
  int action = 0;
  ActionProbs probs{};
  std::size_t index = 1;
};

/// Inverse CDF over the cumulative probabilities with one uniform variate u in [0, 1).
ActionSample sample_action_at(const ActionProbs& probs, double u);
ActionSample sample_action(const ActionProbs& probs, Rng& rng);

double compute_reward(double epsilon, double c);

struct Trajectory {
  std::vector<double> history;
  std::size_t chosen = 0;
  double reward = 0.0;
};

/// -(1/K) sum_j R_j log p(chosen_j | history_j).
double surrogate_loss(const ControllerState& ctrl, std::span<const Trajectory> trajectories);
std::vector<Tensor> surrogate_gradient(const ControllerState& ctrl, std::span<const Trajectory> trajectories);

/// One Adam step on the surrogate with learning rate config.lr. Frozen
/// controllers are returned untouched.
void reinforce_update(ControllerState& ctrl, std::span<const Trajectory> trajectories);

/// "AHLCTRL\0", u32 version, u32 count, u32 inputs, u32 hidden layer count,
/// u32 widths..., then per controller: u8 frozen, u32 history length,
/// f64 history, f64 parameters in layer order.
void save_controllers(const std::filesystem::path& path, std::span<const ControllerState> controllers);
std::vector<ControllerState> load_controllers(const std::filesystem::path& path);

}  // namespace ahl
