#include "ahl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "ahl/binio.hpp"
#include "ahl/errors.hpp"

namespace ahl {

namespace {

constexpr std::string_view kCheckpointMagic{"AHLCKPT\0", 8};
constexpr std::uint32_t kCheckpointVersion = 1;

// Parameter tensor indices.
std::size_t enc_index(std::size_t level) { return 2 * level; }
std::size_t bott_index(const ArchSpec& a) { return 2 * a.depth; }
std::size_t dec_index(const ArchSpec& a, std::size_t level) { return 2 * (a.depth + 1) + 2 * (a.depth - 1 - level); }
std::size_t head_index(const ArchSpec& a) { return 2 * (2 * a.depth + 1); }

constexpr double kHeadInitSd = 1e-3;

std::size_t dec_out(const ArchSpec& a, std::size_t level) { return level > 0 ? a.widths[level - 1] : a.widths[0]; }
std::size_t dec_up_channels(const ArchSpec& a, std::size_t level) {
  return level + 1 == a.depth ? a.widths[a.depth - 1] : dec_out(a, level + 1);
}

void check_image(const ArchSpec& a, const Tensor& image) {
  if (image.shape() != Shape{1, a.height, a.width}) {
    throw DimensionError("learner: image must be 1x" + std::to_string(a.height) + "x" + std::to_string(a.width));
  }
}

std::vector<Tensor> zero_like(const std::vector<Tensor>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.shape());
  return out;
}

Tensor coordreg_output_grad(const HeatmapStack& pred, std::span<const Point> truth, std::vector<double>* per_landmark,
                            double* loss) {
  const std::size_t n = pred.dim(0), h = pred.dim(1), w = pred.dim(2), plane = h * w;
  Tensor grad(pred.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto channel = pred.values().subspan(i * plane, plane);
    const Point u = soft_argmax_decode(channel, h, w);
    const double dr = u.row - truth[i].row, dc = u.col - truth[i].col;
    const double sq = dr * dr + dc * dc;
    total += sq;
    if (per_landmark) (*per_landmark)[i] += sq;
    // loss = sum_i sq_i / (2N)
    const double scale = 1.0 / static_cast<double>(n);
    soft_argmax_backward(channel, h, w, Point{scale * dr, scale * dc}, grad.values().subspan(i * plane, plane));
  }
  if (loss) *loss = total / (2.0 * static_cast<double>(n));
  return grad;
}

template <class SampleStep>
std::vector<std::vector<double>> run_epochs(LearnerState& learner, std::span<const Sample> train,
                                            const TrainOptions& options, Rng& rng, const EpochCallback& on_epoch,
                                            SampleStep&& step) {
  if (train.empty()) throw ConfigError("training set is empty");
  if (options.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (options.batch < 1) throw ConfigError("batch must be >= 1");
  if (!(options.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");

  const std::size_t n_landmarks = learner.arch.landmarks;
  std::vector<std::size_t> order(train.size());
  std::vector<std::vector<double>> history;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> sums(n_landmarks, 0.0);

    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t stop = std::min(order.size(), start + options.batch);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      std::vector<Tensor> grads = zero_like(learner.params);
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& original = train[order[k]];
        const Sample augmented = options.augment ? augment(original, rng) : Sample{};
        const Sample& s = options.augment ? augmented : original;
        std::vector<Tensor> g = step(s, sums, inv_batch);
        for (std::size_t p = 0; p < grads.size(); ++p) grads[p] += g[p];
      }
      for (std::size_t p = 0; p < grads.size(); ++p) adam_step(learner.params[p], grads[p], learner.optim[p], options.lr);
    }
    for (auto& s : sums) s /= static_cast<double>(train.size());
    if (on_epoch) on_epoch(epoch, sums);
    history.push_back(std::move(sums));
  }
  return history;
}

}  // namespace

// ---- architecture ---------------------------------------------------------------

void ArchSpec::validate() const {
  std::vector<std::string> errors;
  if (depth < 1) errors.push_back("depth must be >= 1");
  if (widths.size() != depth) errors.push_back("widths must list one channel count per level (" + std::to_string(depth) + ")");
  if (std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; })) {
    errors.push_back("widths must be positive");
  }
  if (landmarks < 1) errors.push_back("landmarks must be >= 1");
  const std::size_t factor = depth < 63 ? (std::size_t{1} << depth) : 0;
  if (height == 0 || width == 0 || factor == 0 || height % factor != 0 || width % factor != 0) {
    errors.push_back("image extent " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be divisible by 2^depth = " + std::to_string(factor));
  }
  if (!errors.empty()) throw ConfigError(errors);
}

std::vector<Shape> ArchSpec::parameter_shapes() const {
  validate();
  std::vector<Shape> shapes;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t in = l == 0 ? 1 : widths[l - 1];
    shapes.push_back({widths[l], in, 3, 3});
    shapes.push_back({widths[l]});
  }
  shapes.push_back({widths[depth - 1], widths[depth - 1], 3, 3});
  shapes.push_back({widths[depth - 1]});
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t l = depth - 1 - i;
    const std::size_t in = dec_up_channels(*this, l) + widths[l];
    shapes.push_back({dec_out(*this, l), in, 3, 3});
    shapes.push_back({dec_out(*this, l)});
  }
  shapes.push_back({landmarks, widths[0], 1, 1});
  shapes.push_back({landmarks});
  return shapes;
}

std::size_t ArchSpec::parameter_count() const {
  std::size_t total = 0;
  for (const auto& s : parameter_shapes()) total += shape_size(s);
  return total;
}

LearnerState build_learner(const ArchSpec& arch, std::uint64_t seed) {
  LearnerState state;
  state.arch = arch;
  state.seed = seed;
  Rng rng(derive_seed(seed, "learner-init"));
  const auto shapes = arch.parameter_shapes();
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const Shape& shape = shapes[k];
    Tensor p(shape);
    if (shape.size() == 4) {
      // He init for the ReLU convs. The linear head starts near zero so the
      // initial heatmaps are flat instead of large and signed.
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double sd = k == head_index(arch) ? kHeadInitSd : std::sqrt(2.0 / fan_in);
      std::normal_distribution<double> dist(0.0, sd);
      for (auto& v : p.values()) v = dist(rng);
    }
    state.optim.push_back(AdamState::for_shape(shape));
    state.params.push_back(std::move(p));
  }
  return state;
}

LearnerState clone_weights(const LearnerState& src) { return src; }

bool same_parameters(const LearnerState& a, const LearnerState& b) {
  if (!(a.arch == b.arch) || a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (!bitwise_equal(a.params[i], b.params[i])) return false;
  }
  return true;
}

bool bitwise_equal(const LearnerState& a, const LearnerState& b) {
  if (!same_parameters(a, b) || a.optim.size() != b.optim.size()) return false;
  for (std::size_t i = 0; i < a.optim.size(); ++i) {
    const auto& x = a.optim[i];
    const auto& y = b.optim[i];
    if (x.t != y.t || !bitwise_equal(x.m, y.m) || !bitwise_equal(x.v, y.v)) return false;
  }
  return true;
}

// ---- forward / backward -----------------------------------------------------------

HeatmapStack forward(const LearnerState& learner, const Tensor& image, ForwardCache& cache) {
  const ArchSpec& a = learner.arch;
  const auto& P = learner.params;
  check_image(a, image);
  cache.enc_in.assign(a.depth, Tensor{});
  cache.enc_act.assign(a.depth, Tensor{});
  cache.pool_argmax.assign(a.depth, {});
  cache.dec_in.assign(a.depth, Tensor{});
  cache.dec_act.assign(a.depth, Tensor{});

  Tensor x = image;
  for (std::size_t l = 0; l < a.depth; ++l) {
    cache.enc_in[l] = std::move(x);
    cache.enc_act[l] = relu(conv2d(cache.enc_in[l], P[enc_index(l)], P[enc_index(l) + 1], 1, 1));
    PoolResult pooled = pool_max2(cache.enc_act[l]);
    cache.pool_argmax[l] = std::move(pooled.argmax);
    x = std::move(pooled.output);
  }
  cache.bott_in = std::move(x);
  cache.bott_act = relu(conv2d(cache.bott_in, P[bott_index(a)], P[bott_index(a) + 1], 1, 1));
  const Tensor* up_source = &cache.bott_act;
  for (std::size_t i = 0; i < a.depth; ++i) {
    const std::size_t l = a.depth - 1 - i;
    cache.dec_in[l] = concat_channels(upsample_nearest2(*up_source), cache.enc_act[l]);
    cache.dec_act[l] = relu(conv2d(cache.dec_in[l], P[dec_index(a, l)], P[dec_index(a, l) + 1], 1, 1));
    up_source = &cache.dec_act[l];
  }
  cache.head_in = cache.dec_act[0];
  return conv2d(cache.head_in, P[head_index(a)], P[head_index(a) + 1], 1, 0);
}

HeatmapStack forward(const LearnerState& learner, const Tensor& image) {
  ForwardCache cache;
  return forward(learner, image, cache);
}

std::vector<Tensor> backward(const LearnerState& learner, const ForwardCache& cache, const Tensor& grad_output) {
  const ArchSpec& a = learner.arch;
  const auto& P = learner.params;
  std::vector<Tensor> grads(P.size());
  const auto store = [&](std::size_t index, Conv2dGrads& g) {
    grads[index] = std::move(g.weights);
    grads[index + 1] = std::move(g.bias);
  };

  Conv2dGrads g = conv2d_backward(cache.head_in, P[head_index(a)], grad_output, 1, 0);
  store(head_index(a), g);
  Tensor gx = std::move(g.input);

  std::vector<Tensor> skip_grads(a.depth);
  for (std::size_t l = 0; l < a.depth; ++l) {
    const Tensor gz = relu_backward(cache.dec_act[l], gx);
    g = conv2d_backward(cache.dec_in[l], P[dec_index(a, l)], gz, 1, 1);
    store(dec_index(a, l), g);
    auto [g_up, g_skip] = split_channels(g.input, dec_up_channels(a, l));
    skip_grads[l] = std::move(g_skip);
    gx = upsample_nearest2_backward(g_up);
  }

  {
    const Tensor gz = relu_backward(cache.bott_act, gx);
    g = conv2d_backward(cache.bott_in, P[bott_index(a)], gz, 1, 1);
    store(bott_index(a), g);
    gx = std::move(g.input);
  }

  for (std::size_t i = 0; i < a.depth; ++i) {
    const std::size_t l = a.depth - 1 - i;
    Tensor ga = pool_max2_backward(cache.enc_act[l].shape(), cache.pool_argmax[l], gx);
    ga += skip_grads[l];
    const Tensor gz = relu_backward(cache.enc_act[l], ga);
    g = conv2d_backward(cache.enc_in[l], P[enc_index(l)], gz, 1, 1, /*need_input_grad=*/l > 0);
    store(enc_index(l), g);
    gx = std::move(g.input);
  }
  return grads;
}

// ---- training ---------------------------------------------------------------------

std::vector<std::vector<double>> train_epochs(LearnerState& learner, std::span<const Sample> train,
                                              const SigmaVector& sigmas, const TrainOptions& options, Rng& rng,
                                              const EpochCallback& on_epoch) {
  const ArchSpec& a = learner.arch;
  if (sigmas.size() != a.landmarks) throw DimensionError("train_epochs: sigma count does not match landmarks");
  ForwardCache cache;
  return run_epochs(learner, train, options, rng, on_epoch,
                    [&](const Sample& s, std::vector<double>& sums, double inv_batch) {
                      const HeatmapStack target = render_targets(s.landmarks, sigmas, a.height, a.width);
                      const HeatmapStack pred = forward(learner, s.image, cache);
                      const std::vector<double> mse = mse_per_channel(pred, target);
                      for (std::size_t i = 0; i < mse.size(); ++i) sums[i] += mse[i];
                      Tensor grad = mse_mean_backward(pred, target);
                      grad *= inv_batch;
                      return backward(learner, cache, grad);
                    });
}

std::vector<std::vector<double>> train_coordreg(LearnerState& learner, std::span<const Sample> train,
                                                const TrainOptions& options, Rng& rng, const EpochCallback& on_epoch) {
  ForwardCache cache;
  return run_epochs(learner, train, options, rng, on_epoch,
                    [&](const Sample& s, std::vector<double>& sums, double inv_batch) {
                      const HeatmapStack pred = forward(learner, s.image, cache);
                      Tensor grad = coordreg_output_grad(pred, s.landmarks.coords, &sums, nullptr);
                      grad *= inv_batch;
                      return backward(learner, cache, grad);
                    });
}

double heatmap_loss(const LearnerState& learner, const Sample& sample, const SigmaVector& sigmas) {
  const ArchSpec& a = learner.arch;
  const HeatmapStack pred = forward(learner, sample.image);
  const std::vector<double> mse = mse_per_channel(pred, render_targets(sample.landmarks, sigmas, a.height, a.width));
  return std::accumulate(mse.begin(), mse.end(), 0.0) / static_cast<double>(mse.size());
}

std::vector<Tensor> heatmap_loss_gradient(const LearnerState& learner, const Sample& sample, const SigmaVector& sigmas) {
  const ArchSpec& a = learner.arch;
  ForwardCache cache;
  const HeatmapStack pred = forward(learner, sample.image, cache);
  return backward(learner, cache, mse_mean_backward(pred, render_targets(sample.landmarks, sigmas, a.height, a.width)));
}

double coordreg_loss(const LearnerState& learner, const Sample& sample) {
  const HeatmapStack pred = forward(learner, sample.image);
  double loss = 0.0;
  coordreg_output_grad(pred, sample.landmarks.coords, nullptr, &loss);
  return loss;
}

std::vector<Tensor> coordreg_loss_gradient(const LearnerState& learner, const Sample& sample) {
  ForwardCache cache;
  const HeatmapStack pred = forward(learner, sample.image, cache);
  return backward(learner, cache, coordreg_output_grad(pred, sample.landmarks.coords, nullptr, nullptr));
}

// ---- inference --------------------------------------------------------------------

std::vector<Point> predict(const LearnerState& learner, const Tensor& image, Decoder decoder) {
  const HeatmapStack out = forward(learner, image);
  std::vector<Point> pts;
  if (decoder == Decoder::Argmax) {
    for (const GridPoint& g : argmax_decode(out)) {
      pts.push_back({static_cast<double>(g.row), static_cast<double>(g.col)});
    }
  } else {
    const std::size_t h = out.dim(1), w = out.dim(2);
    for (std::size_t i = 0; i < out.dim(0); ++i) pts.push_back(soft_argmax_decode(out.values().subspan(i * h * w, h * w), h, w));
  }
  return pts;
}

ErrorTable evaluate_errors(const LearnerState& learner, std::span<const Sample> samples, Decoder decoder,
                           double resolution) {
  if (samples.empty()) throw ConfigError("evaluation set is empty");
  std::vector<std::vector<Point>> preds, gts;
  preds.reserve(samples.size());
  gts.reserve(samples.size());
  for (const Sample& s : samples) {
    preds.push_back(predict(learner, s.image, decoder));
    gts.push_back(s.landmarks.coords);
  }
  return radial_errors(preds, gts, resolution);
}

std::vector<double> validate(const LearnerState& learner, std::span<const Sample> samples, Decoder decoder) {
  return mre(evaluate_errors(learner, samples, decoder)).per_landmark;
}

// ---- checkpoints --------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const LearnerState& learner) {
  const ArchSpec& a = learner.arch;
  binio::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(a.depth));
  for (auto width : a.widths) w.u32(static_cast<std::uint32_t>(width));
  w.u32(static_cast<std::uint32_t>(a.height));
  w.u32(static_cast<std::uint32_t>(a.width));
  w.u32(static_cast<std::uint32_t>(a.landmarks));
  w.u64(a.parameter_count());
  for (const auto& p : learner.params) {
    for (double v : p.values()) w.f64(v);
  }
  w.save(path);
}

LearnerState load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect(kCheckpointMagic);
  if (r.u32() != kCheckpointVersion) r.fail("unsupported checkpoint version");
  ArchSpec a;
  a.depth = r.u32();
  if (a.depth < 1 || a.depth > 16) r.fail("implausible depth");
  a.widths.clear();
  for (std::size_t i = 0; i < a.depth; ++i) a.widths.push_back(r.u32());
  a.height = r.u32();
  a.width = r.u32();
  a.landmarks = r.u32();
  try {
    a.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid architecture: ") + e.what());
  }
  if (r.u64() != a.parameter_count()) r.fail("parameter count does not match architecture");

  LearnerState state;
  state.arch = a;
  for (const auto& shape : a.parameter_shapes()) {
    Tensor p(shape);
    for (auto& v : p.values()) v = r.f64();
    state.optim.push_back(AdamState::for_shape(shape));
    state.params.push_back(std::move(p));
  }
  if (!r.at_end()) r.fail("trailing bytes after parameters");
  return state;
}

}  // namespace ahl
