#include "ahl/laoml.hpp"

#include <bit>
#include <cmath>
#include <string>

namespace ahl {

namespace {

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::Laoml: return "laoml";
    case Mode::Fixed: return "fixed";
    case Mode::Decay: return "decay";
    case Mode::Coordreg: return "coordreg";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "laoml") return Mode::Laoml;
  if (text == "fixed") return Mode::Fixed;
  if (text == "decay") return Mode::Decay;
  if (text == "coordreg") return Mode::Coordreg;
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected laoml, fixed, decay or coordreg)");
}

const char* to_string(SigmaBroadcast broadcast) {
  return broadcast == SigmaBroadcast::Global ? "global" : "per_landmark";
}

SigmaBroadcast parse_sigma_broadcast(std::string_view text) {
  if (text == "per_landmark") return SigmaBroadcast::PerLandmark;
  if (text == "global") return SigmaBroadcast::Global;
  throw ConfigError("unknown sigma broadcast '" + std::string(text) + "' (expected per_landmark or global)");
}

// ---- TrainConfig -----------------------------------------------------------------

std::size_t TrainConfig::scaled_epochs(std::size_t reference) const {
  if (inner_epochs == 0) return 0;
  const double scaled = static_cast<double>(reference) * static_cast<double>(epochs) / kReferenceEpochs;
  const auto steps = static_cast<std::size_t>(std::llround(scaled / static_cast<double>(inner_epochs)));
  return std::min(steps * inner_epochs, epochs);
}

std::size_t TrainConfig::resolved_warmup() const { return warmup.value_or(scaled_epochs(kReferenceWarmup)); }

std::size_t TrainConfig::resolved_early_stop_start() const {
  return early_stop_start.value_or(scaled_epochs(kReferenceEarlyStopStart));
}

std::size_t TrainConfig::iterations() const {
  const std::size_t w = resolved_warmup();
  if (mode != Mode::Laoml || inner_epochs == 0 || w > epochs) return 0;
  return (epochs - w) / inner_epochs;
}

ControllerConfig TrainConfig::controller_config() const {
  ControllerConfig c;
  c.inputs = inner_epochs;
  c.hidden = controller_hidden;
  c.lr = controller_lr;
  return c;
}

void TrainConfig::validate() const {
  std::vector<std::string> v;
  const auto num = [](double x) { return std::to_string(x); };
  if (samples < 1) v.push_back("samples (K) must be >= 1");
  if (inner_epochs < 1) v.push_back("inner epochs (t') must be >= 1");
  if (epochs < 1) v.push_back("epochs must be >= 1");
  const std::size_t w = resolved_warmup();
  if (w > epochs) {
    v.push_back("warm-up (" + std::to_string(w) + " epochs) exceeds the epoch budget (" + std::to_string(epochs) + ")");
  } else if (mode == Mode::Laoml && inner_epochs > 0 && (epochs - w) % inner_epochs != 0) {
    v.push_back("epochs after warm-up (" + std::to_string(epochs - w) + ") must be a multiple of t' (" +
                std::to_string(inner_epochs) + ")");
  }
  if (!(sigma_min > 0.0)) v.push_back("sigma_min must be > 0");
  if (!(sigma_min <= sigma_max)) v.push_back("sigma_min must not exceed sigma_max");
  if (!(sigma_init >= sigma_min && sigma_init <= sigma_max)) {
    v.push_back("sigma_init (" + num(sigma_init) + ") must lie in [sigma_min, sigma_max]");
  }
  if (!std::isfinite(reward_c)) v.push_back("reward constant C must be finite");
  if (early_stop_window < 1 || (inner_epochs > 0 && early_stop_window % inner_epochs != 0)) {
    v.push_back("early-stop window M must be a positive multiple of t'");
  }
  if (!(early_stop_threshold >= 0.0)) v.push_back("early-stop threshold must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) v.push_back("learning rate must be finite and >= 0");
  if (!(controller_lr >= 0.0) || !std::isfinite(controller_lr)) {
    v.push_back("controller learning rate must be finite and >= 0");
  }
  if (!(coordreg_lr >= 0.0) || !std::isfinite(coordreg_lr)) v.push_back("coordreg learning rate must be finite and >= 0");
  if (batch < 1) v.push_back("batch must be >= 1");
  if (threads < 1) v.push_back("threads must be >= 1");
  for (double r : pck_thresholds) {
    if (!(r > 0.0)) v.push_back("PCK thresholds must be > 0 (got " + num(r) + ")");
  }
  for (std::size_t h : controller_hidden) {
    if (h < 1) v.push_back("controller hidden widths must be positive");
  }
  try {
    arch.validate();
  } catch (const ConfigError& e) {
    v.insert(v.end(), e.violations().begin(), e.violations().end());
  }
  if (!v.empty()) throw ConfigError(v);
}

// ---- records ------------------------------------------------------------------------

bool bitwise_equal(const RunArtifacts& a, const RunArtifacts& b) {
  if (a.sigma.size() != b.sigma.size() || a.rewards.size() != b.rewards.size() ||
      a.epochs.size() != b.epochs.size() || a.freeze_iteration != b.freeze_iteration) {
    return false;
  }
  for (std::size_t t = 0; t < a.sigma.size(); ++t) {
    if (!same_bits(a.sigma[t], b.sigma[t])) return false;
  }
  for (std::size_t k = 0; k < a.rewards.size(); ++k) {
    const auto &x = a.rewards[k], &y = b.rewards[k];
    if (x.iteration != y.iteration || x.sample != y.sample || x.landmark != y.landmark || !same_bits(x.sigma, y.sigma) ||
        !same_bits(x.epsilon, y.epsilon) || !same_bits(x.reward, y.reward)) {
      return false;
    }
  }
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    const auto &x = a.epochs[e], &y = b.epochs[e];
    if (x.epoch != y.epoch || !same_bits(x.train_loss, y.train_loss) || !same_bits(x.val_error, y.val_error)) {
      return false;
    }
  }
  return true;
}

std::vector<std::vector<double>> reward_traces(const RunArtifacts& artifacts) {
  std::size_t n = 0, iterations = 0;
  for (const auto& r : artifacts.rewards) {
    n = std::max(n, r.landmark + 1);
    iterations = std::max(iterations, r.iteration);
  }
  std::vector<std::vector<double>> sum(n, std::vector<double>(iterations, 0.0));
  std::vector<std::vector<std::size_t>> count(n, std::vector<std::size_t>(iterations, 0));
  for (const auto& r : artifacts.rewards) {
    if (r.iteration == 0) continue;
    sum[r.landmark][r.iteration - 1] += r.reward;
    ++count[r.landmark][r.iteration - 1];
  }
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < iterations; ++t) {
      if (count[i][t] > 0) out[i].push_back(sum[i][t] / static_cast<double>(count[i][t]));
    }
  }
  return out;
}

// ---- building blocks --------------------------------------------------------------------

Selection select_best(const std::vector<std::vector<double>>& epsilon) {
  if (epsilon.empty() || epsilon.front().empty()) throw DimensionError("select_best: empty error matrix");
  const std::size_t k = epsilon.size(), n = epsilon.front().size();
  for (const auto& row : epsilon) {
    if (row.size() != n) throw DimensionError("select_best: ragged error matrix");
    for (double e : row) {
      if (!std::isfinite(e)) throw NumericalError("select_best: non-finite validation error");
    }
  }
  Selection s;
  double best_mean = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double sum = 0.0;
    for (double e : epsilon[j]) sum += e;
    const double mean = sum / static_cast<double>(n);
    if (j == 0 || mean < best_mean) {
      best_mean = mean;
      s.model = j;
    }
  }
  s.sources.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < k; ++j) {
      if (epsilon[j][i] < epsilon[s.sources[i]][i]) s.sources[i] = j;
    }
  }
  return s;
}

double population_variance(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double x : values) mean += x;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double x : values) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(values.size());
}

EarlyStopState::EarlyStopState(std::size_t landmarks, std::size_t window_records)
    : window(window_records), records(landmarks), stopped(landmarks, false), variance(landmarks, 0.0) {}

void record_errors(EarlyStopState& state, std::span<const double> errors) {
  if (errors.size() != state.records.size()) throw DimensionError("early stop: error count does not match landmarks");
  for (std::size_t i = 0; i < errors.size(); ++i) {
    auto& buf = state.records[i];
    buf.push_back(errors[i]);
    while (buf.size() > state.window) buf.pop_front();
  }
}

std::vector<std::size_t> early_stop_check(EarlyStopState& state, double threshold) {
  std::vector<std::size_t> frozen;
  for (std::size_t i = 0; i < state.records.size(); ++i) {
    const auto& buf = state.records[i];
    if (state.window == 0 || buf.size() < state.window) continue;
    const std::vector<double> window(buf.begin(), buf.end());
    state.variance[i] = population_variance(window);
    if (!state.stopped[i] && state.variance[i] < threshold) {
      state.stopped[i] = true;
      frozen.push_back(i);
    }
  }
  return frozen;
}

SigmaSamples sample_sigma_sets(std::span<const ControllerState> controllers, const SigmaVector& current,
                               std::size_t k, double sigma_min, double sigma_max, const UniformSource& uniform) {
  const std::size_t n = controllers.size();
  if (current.size() != n) throw DimensionError("sample_sigma_sets: sigma count does not match controllers");
  SigmaSamples out;
  std::vector<std::vector<double>> inputs(n);
  std::vector<ActionProbs> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i] = history_input(controllers[i]);
    if (!controllers[i].frozen) probs[i] = policy_forward(controllers[i], inputs[i]);
  }
  for (std::size_t j = 0; j < k; ++j) {
    SigmaVector set = current;
    std::vector<ActionSample> actions(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (controllers[i].frozen) continue;
      actions[i] = sample_action_at(probs[i], uniform());
      set[i] = std::clamp(current[i] + actions[i].action, sigma_min, sigma_max);
    }
    out.sets.push_back(std::move(set));
    out.actions.push_back(std::move(actions));
    out.histories.push_back(inputs);
  }
  return out;
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace ahl
