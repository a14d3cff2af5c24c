#pragma once

// Analytic stand-in for the heatmap learner. Validation error of landmark i
// after an epoch under sigma s is
//
//   base + transient * exp(-epochs_trained / settle) + slope * |s - optimum|
//        + noise * z,    z ~ N(0, 1) from the training seed,
//
// clipped at zero, and the training loss is loss_scale * s plus the same
// transient. Cheap enough to run hundreds of outer iterations in a test.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "ahl/laoml.hpp"
#include "ahl/rng.hpp"

namespace ahl {

struct SurrogateParams {
  double optimum = 7.0;
  double base = 1.0;
  double slope = 0.5;
  double noise = 0.03;
  double transient = 2.0;
  double settle = 20.0;
  double loss_scale = 1e-3;
};

struct SurrogateModel {
  std::size_t epochs_trained = 0;
  std::vector<double> memory;  // running mean of the sigmas trained under

  friend bool bitwise_equal(const SurrogateModel& a, const SurrogateModel& b) {
    if (a.epochs_trained != b.epochs_trained || a.memory.size() != b.memory.size()) return false;
    for (std::size_t i = 0; i < a.memory.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(a.memory[i]) != std::bit_cast<std::uint64_t>(b.memory[i])) return false;
    }
    return true;
  }
};

class SurrogateEnvironment {
 public:
  using Model = SurrogateModel;

  SurrogateEnvironment(std::size_t landmarks, SurrogateParams params = {}) : n_(landmarks), p_(params) {}

  std::size_t landmarks() const { return n_; }
  const SurrogateParams& params() const { return p_; }

  Model initial_model() const { return Model{0, std::vector<double>(n_, 0.0)}; }

  ChunkResult train(Model& model, const SigmaVector& sigmas, std::size_t epochs, std::uint64_t seed) const {
    Rng rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    ChunkResult out;
    for (std::size_t e = 0; e < epochs; ++e) {
      ++model.epochs_trained;
      const double n = static_cast<double>(model.epochs_trained);
      const double transient = p_.transient * std::exp(-n / p_.settle);
      std::vector<double> loss(n_), err(n_);
      for (std::size_t i = 0; i < n_; ++i) {
        model.memory[i] += (sigmas[i] - model.memory[i]) / n;
        loss[i] = p_.loss_scale * sigmas[i] + transient;
        err[i] = std::max(0.0, p_.base + transient + p_.slope * std::abs(sigmas[i] - p_.optimum) + p_.noise * z(rng));
      }
      out.train_loss.push_back(std::move(loss));
      out.val_error.push_back(std::move(err));
    }
    return out;
  }

 private:
  std::size_t n_;
  SurrogateParams p_;
};

}  // namespace ahl
