#include "ahl/controller.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "ahl/binio.hpp"
#include "ahl/errors.hpp"

namespace ahl {

namespace {

constexpr std::string_view kControllerMagic{"AHLCTRL\0", 8};
constexpr std::uint32_t kControllerVersion = 1;

std::vector<Shape> layer_shapes(const ControllerConfig& config) {
  std::vector<Shape> shapes;
  std::size_t in = config.inputs;
  for (std::size_t h : config.hidden) {
    shapes.push_back({h, in});
    shapes.push_back({h});
    in = h;
  }
  shapes.push_back({kActionCount, in});
  shapes.push_back({kActionCount});
  return shapes;
}

struct PolicyCache {
  std::vector<Tensor> inputs;  // input of each linear layer
  std::vector<Tensor> acts;    // post-ReLU hidden outputs
  Tensor probs;
};

Tensor policy_eval(const ControllerState& ctrl, std::span<const double> history, PolicyCache* cache) {
  if (history.size() != ctrl.config.inputs) {
    throw DimensionError("controller: expected " + std::to_string(ctrl.config.inputs) + " history values, got " +
                         std::to_string(history.size()));
  }
  const std::size_t layers = ctrl.params.size() / 2;
  Tensor x({history.size()}, std::vector<double>(history.begin(), history.end()));
  for (std::size_t l = 0; l < layers; ++l) {
    if (cache) cache->inputs.push_back(x);
    x = linear(x, ctrl.params[2 * l], ctrl.params[2 * l + 1]);
    if (l + 1 < layers) {
      x = relu(x);
      if (cache) cache->acts.push_back(x);
    }
  }
  Tensor probs = softmax(x);
  if (cache) cache->probs = probs;
  return probs;
}

}  // namespace

void ControllerConfig::validate() const {
  std::vector<std::string> errors;
  if (inputs < 1) errors.push_back("controller input length must be >= 1");
  for (std::size_t h : hidden) {
    if (h < 1) errors.push_back("controller hidden widths must be positive");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) errors.push_back("controller learning rate must be finite and >= 0");
  if (!errors.empty()) throw ConfigError(errors);
}

ControllerState build_controller(const ControllerConfig& config, std::uint64_t seed) {
  config.validate();
  ControllerState ctrl;
  ctrl.config = config;
  Rng rng(derive_seed(seed, "controller-init"));
  const auto shapes = layer_shapes(config);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Tensor p(shapes[i]);
    const bool hidden_weight = shapes[i].size() == 2 && i + 2 < shapes.size();
    if (hidden_weight) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(shapes[i][1])));
      for (auto& v : p.values()) v = dist(rng);
    }
    ctrl.optim.push_back(AdamState::for_shape(shapes[i]));
    ctrl.params.push_back(std::move(p));
  }
  return ctrl;
}

bool bitwise_equal(const ControllerState& a, const ControllerState& b) {
  if (!(a.config == b.config) || a.frozen != b.frozen || a.history.size() != b.history.size() ||
      a.params.size() != b.params.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.history[i]) != std::bit_cast<std::uint64_t>(b.history[i])) return false;
  }
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (!bitwise_equal(a.params[i], b.params[i])) return false;
    const auto &x = a.optim[i], &y = b.optim[i];
    if (x.t != y.t || !bitwise_equal(x.m, y.m) || !bitwise_equal(x.v, y.v)) return false;
  }
  return true;
}

void push_loss(ControllerState& ctrl, double loss) {
  ctrl.history.push_back(loss);
  while (ctrl.history.size() > ctrl.config.inputs) ctrl.history.pop_front();
}

std::vector<double> history_input(const ControllerState& ctrl) {
  const std::size_t n = ctrl.config.inputs;
  std::vector<double> out(n, ctrl.history.empty() ? 0.0 : ctrl.history.front());
  const std::size_t have = std::min(n, ctrl.history.size());
  for (std::size_t i = 0; i < have; ++i) out[n - have + i] = ctrl.history[ctrl.history.size() - have + i];
  return out;
}

ActionProbs policy_forward(const ControllerState& ctrl, std::span<const double> history) {
  const Tensor p = policy_eval(ctrl, history, nullptr);
  return {p[0], p[1], p[2]};
}

ActionProbs policy_forward(const ControllerState& ctrl) { return policy_forward(ctrl, history_input(ctrl)); }

ActionSample sample_action_at(const ActionProbs& probs, double u) {
  ActionSample s;
  s.probs = probs;
  s.index = kActionCount - 1;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < kActionCount; ++i) {
    cumulative += probs[i];
    if (u < cumulative) {
      s.index = i;
      break;
    }
  }
  // Rounding can leave the cumulative sum just below 1; never land on a
  // zero-probability tail action.
  while (s.index > 0 && probs[s.index] <= 0.0) --s.index;
  s.action = kActions[s.index];
  return s;
}

ActionSample sample_action(const ActionProbs& probs, Rng& rng) { return sample_action_at(probs, uniform01(rng)); }

double compute_reward(double epsilon, double c) {
  if (!(epsilon >= 0.0)) throw ConfigError("reward: epsilon must be non-negative");
  return c - epsilon;
}

double surrogate_loss(const ControllerState& ctrl, std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw ConfigError("reinforce: at least one trajectory is required");
  double total = 0.0;
  for (const auto& tr : trajectories) {
    const Tensor p = policy_eval(ctrl, tr.history, nullptr);
    total += tr.reward * std::log(p[tr.chosen]);
  }
  return -total / static_cast<double>(trajectories.size());
}

std::vector<Tensor> surrogate_gradient(const ControllerState& ctrl, std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw ConfigError("reinforce: at least one trajectory is required");
  const double inv_k = 1.0 / static_cast<double>(trajectories.size());
  const std::size_t layers = ctrl.params.size() / 2;
  std::vector<Tensor> grads;
  for (const auto& p : ctrl.params) grads.emplace_back(p.shape());

  for (const auto& tr : trajectories) {
    if (tr.chosen >= kActionCount) throw DimensionError("reinforce: chosen index out of range");
    PolicyCache cache;
    policy_eval(ctrl, tr.history, &cache);
    // d/dlogits of -(R/K) log p_c = -(R/K) (onehot_c - p)
    Tensor g({kActionCount});
    for (std::size_t a = 0; a < kActionCount; ++a) {
      g[a] = -tr.reward * inv_k * ((a == tr.chosen ? 1.0 : 0.0) - cache.probs[a]);
    }
    for (std::size_t i = 0; i < layers; ++i) {
      const std::size_t l = layers - 1 - i;
      LinearGrads lg = linear_backward(cache.inputs[l], ctrl.params[2 * l], g);
      grads[2 * l] += lg.weights;
      grads[2 * l + 1] += lg.bias;
      if (l > 0) g = relu_backward(cache.acts[l - 1], lg.input);
    }
  }
  return grads;
}

void reinforce_update(ControllerState& ctrl, std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw ConfigError("reinforce: at least one trajectory is required");
  if (ctrl.frozen) return;
  const std::vector<Tensor> grads = surrogate_gradient(ctrl, trajectories);
  for (std::size_t i = 0; i < ctrl.params.size(); ++i) adam_step(ctrl.params[i], grads[i], ctrl.optim[i], ctrl.config.lr);
}

void save_controllers(const std::filesystem::path& path, std::span<const ControllerState> controllers) {
  binio::Writer w;
  w.bytes(kControllerMagic);
  w.u32(kControllerVersion);
  w.u32(static_cast<std::uint32_t>(controllers.size()));
  const ControllerConfig config = controllers.empty() ? ControllerConfig{} : controllers.front().config;
  w.u32(static_cast<std::uint32_t>(config.inputs));
  w.u32(static_cast<std::uint32_t>(config.hidden.size()));
  for (auto h : config.hidden) w.u32(static_cast<std::uint32_t>(h));
  w.f64(config.lr);
  for (const auto& c : controllers) {
    if (!(c.config == config)) throw ConfigError("save_controllers: controllers must share one configuration");
    w.u8(c.frozen ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(c.history.size()));
    for (double v : c.history) w.f64(v);
    for (const auto& p : c.params) {
      for (double v : p.values()) w.f64(v);
    }
  }
  w.save(path);
}

std::vector<ControllerState> load_controllers(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect(kControllerMagic);
  if (r.u32() != kControllerVersion) r.fail("unsupported controller checkpoint version");
  const std::uint32_t count = r.u32();
  ControllerConfig config;
  config.inputs = r.u32();
  const std::uint32_t layers = r.u32();
  if (layers > 64) r.fail("implausible hidden layer count");
  config.hidden.clear();
  for (std::uint32_t i = 0; i < layers; ++i) config.hidden.push_back(r.u32());
  config.lr = r.f64();
  try {
    config.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid controller configuration: ") + e.what());
  }
  std::vector<ControllerState> out;
  for (std::uint32_t c = 0; c < count; ++c) {
    ControllerState s = build_controller(config, 0);
    const std::uint8_t frozen = r.u8();
    if (frozen > 1) r.fail("frozen flag must be 0 or 1");
    s.frozen = frozen == 1;
    const std::uint32_t len = r.u32();
    if (len > config.inputs) r.fail("history longer than the controller input");
    for (std::uint32_t i = 0; i < len; ++i) s.history.push_back(r.f64());
    for (auto& p : s.params) {
      for (auto& v : p.values()) v = r.f64();
    }
    out.push_back(std::move(s));
  }
  if (!r.at_end()) r.fail("trailing bytes after controllers");
  return out;
}

}  // namespace ahl
