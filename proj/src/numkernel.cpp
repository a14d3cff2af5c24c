#include "ahl/numkernel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "ahl/errors.hpp"

namespace ahl {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, h_out, w_out;
  int stride, pad;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weights, int stride, int pad) {
  require_rank(input, 3, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >= 1 and pad >= 0");
  const std::size_t k = weights.dim(2);
  if (weights.dim(3) != k) throw DimensionError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
  if (weights.dim(1) != input.dim(0)) {
    throw DimensionError("conv2d: weights " + shape_string(weights.shape()) +
                         " do not match input channels " + shape_string(input.shape()));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), weights.dim(0), k, 0, 0, stride, pad};
  const auto extent = [&](std::size_t n) -> std::size_t {
    const long long span = static_cast<long long>(n) + 2LL * pad - static_cast<long long>(k);
    if (span < 0 || span % stride != 0) {
      throw ConfigError("conv2d: output extent (" + std::to_string(n) + " + 2*" + std::to_string(pad) +
                        " - " + std::to_string(k) + ")/" + std::to_string(stride) +
                        " + 1 is not a positive integer");
    }
    return static_cast<std::size_t>(span / stride + 1);
  };
  g.h_out = extent(g.h);
  g.w_out = extent(g.w);
  return g;
}

// Valid output columns [lo, hi) for kernel offset `kx`: those whose input
// column ox*stride + kx - pad lies inside [0, w).
std::pair<std::size_t, std::size_t> valid_range(std::size_t kx, const ConvGeometry& g, std::size_t n_in,
                                                std::size_t n_out) {
  const long long off = static_cast<long long>(kx) - g.pad;
  long long lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  long long hi = (static_cast<long long>(n_in) - 1 - off) < 0
                     ? 0
                     : (static_cast<long long>(n_in) - 1 - off) / g.stride + 1;
  lo = std::min<long long>(lo, static_cast<long long>(n_out));
  hi = std::clamp<long long>(hi, lo, static_cast<long long>(n_out));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Column matrix of shape (C_in*k*k) x (H_out*W_out).
void im2col(const Tensor& input, const ConvGeometry& g, std::vector<double>& col) {
  const std::size_t cols = g.h_out * g.w_out;
  col.resize(g.c_in * g.k * g.k * cols);
  const double* src = input.data();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const auto [oy_lo, oy_hi] = valid_range(ky, g, g.h, g.h_out);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const auto [ox_lo, ox_hi] = valid_range(kx, g, g.w, g.w_out);
        double* row = col.data() + ((c * g.k + ky) * g.k + kx) * cols;
        std::fill(row, row + oy_lo * g.w_out, 0.0);
        std::fill(row + oy_hi * g.w_out, row + cols, 0.0);
        for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          const double* src_row = src + (c * g.h + iy) * g.w;
          double* dst = row + oy * g.w_out;
          std::fill(dst, dst + ox_lo, 0.0);
          std::fill(dst + ox_hi, dst + g.w_out, 0.0);
          for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src_row[ox * g.stride + kx - g.pad];
        }
      }
    }
  }
}

void col2im(const std::vector<double>& col, const ConvGeometry& g, Tensor& grad_input) {
  const std::size_t cols = g.h_out * g.w_out;
  double* dst = grad_input.data();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const auto [oy_lo, oy_hi] = valid_range(ky, g, g.h, g.h_out);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const auto [ox_lo, ox_hi] = valid_range(kx, g, g.w, g.w_out);
        const double* row = col.data() + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          double* dst_row = dst + (c * g.h + iy) * g.w;
          const double* src = row + oy * g.w_out;
          for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) dst_row[ox * g.stride + kx - g.pad] += src[ox];
        }
      }
    }
  }
}

// Per-thread scratch for the column matrices; conv calls are not reentrant.
std::vector<double>& scratch(int slot) {
  thread_local std::vector<double> buffers[2];
  return buffers[slot];
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

// ---- Tensor -------------------------------------------------------------------

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

void require_finite(const Tensor& t, std::string_view where) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericalError(std::string(where) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

// ---- convolution ----------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride, int pad) {
  const ConvGeometry g = conv_geometry(input, weights, stride, pad);
  if (bias.rank() != 1 || bias.dim(0) != g.c_out) throw DimensionError("conv2d: bias must have C_out entries");

  const std::size_t cols = g.h_out * g.w_out;
  const std::size_t inner = g.c_in * g.k * g.k;
  Tensor out({g.c_out, g.h_out, g.w_out});
  MatrixMap out_m(out.data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(cols));
  ConstMatrixMap w_m(weights.data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(inner));

  if (g.k == 1 && g.stride == 1 && g.pad == 0) {
    ConstMatrixMap in_m(input.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
    out_m.noalias() = w_m * in_m;
  } else {
    std::vector<double>& col = scratch(0);
    im2col(input, g, col);
    ConstMatrixMap col_m(col.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
    out_m.noalias() = w_m * col_m;
  }
  for (std::size_t o = 0; o < g.c_out; ++o) {
    double* row = out.data() + o * cols;
    for (std::size_t i = 0; i < cols; ++i) row[i] += bias[o];
  }
  require_finite(out, "conv2d");
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                            int stride, int pad, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, weights, stride, pad);
  if (grad_output.shape() != Shape{g.c_out, g.h_out, g.w_out}) {
    throw DimensionError("conv2d_backward: gradient shape " + shape_string(grad_output.shape()) +
                         " does not match output");
  }
  const std::size_t cols = g.h_out * g.w_out;
  const std::size_t inner = g.c_in * g.k * g.k;
  const bool pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;

  std::vector<double>& col = scratch(0);
  const double* col_data = input.data();
  if (!pointwise) {
    im2col(input, g, col);
    col_data = col.data();
  }
  ConstMatrixMap col_m(col_data, static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
  ConstMatrixMap go_m(grad_output.data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(cols));
  ConstMatrixMap w_m(weights.data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(inner));

  Conv2dGrads grads;
  grads.weights = Tensor(weights.shape());
  MatrixMap gw_m(grads.weights.data(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(inner));
  gw_m.noalias() = go_m * col_m.transpose();

  grads.bias = Tensor({g.c_out});
  for (std::size_t o = 0; o < g.c_out; ++o) {
    const double* row = grad_output.data() + o * cols;
    double s = 0.0;
    for (std::size_t i = 0; i < cols; ++i) s += row[i];
    grads.bias[o] = s;
  }

  if (need_input_grad) {
    grads.input = Tensor(input.shape());
    if (pointwise) {
      MatrixMap gi_m(grads.input.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
      gi_m.noalias() = w_m.transpose() * go_m;
    } else {
      std::vector<double>& grad_col = scratch(1);
      grad_col.resize(inner * cols);
      MatrixMap gc_m(grad_col.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
      gc_m.noalias() = w_m.transpose() * go_m;
      col2im(grad_col, g, grads.input);
    }
    require_finite(grads.input, "conv2d_backward");
  }
  require_finite(grads.weights, "conv2d_backward");
  return grads;
}

// ---- dense ---------------------------------------------------------------------

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 1, "linear input");
  require_rank(weights, 2, "linear weights");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.dim(0) != n || bias.rank() != 1 || bias.dim(0) != m) {
    throw DimensionError("linear: input " + shape_string(input.shape()) + ", weights " +
                         shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()));
  }
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    const double* w = weights.data() + r * n;
    double s = bias[r];
    for (std::size_t c = 0; c < n; ++c) s += w[c] * input[c];
    out[r] = s;
  }
  require_finite(out, "linear");
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.rank() != 1 || input.dim(0) != n || grad_output.rank() != 1 || grad_output.dim(0) != m) {
    throw DimensionError("linear_backward: shape mismatch");
  }
  LinearGrads g{Tensor({n}), Tensor({m, n}), grad_output};
  for (std::size_t r = 0; r < m; ++r) {
    const double go = grad_output[r];
    const double* w = weights.data() + r * n;
    double* gw = g.weights.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      gw[c] = go * input[c];
      g.input[c] += go * w[c];
    }
  }
  return g;
}

// ---- elementwise / resampling ------------------------------------------------------

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  require_finite(out, "relu");
  return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_output) {
  require_same_shape(output, grad_output, "relu_backward");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = output[i] > 0.0 ? grad_output[i] : 0.0;
  return g;
}

PoolResult pool_max2(const Tensor& input) {
  require_rank(input, 3, "pool_max2");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("pool_max2: spatial extents must be even, got " + shape_string(input.shape()));
  }
  PoolResult r{Tensor({c, h / 2, w / 2}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h / 2; ++y) {
      for (std::size_t x = 0; x < w / 2; ++x, ++o) {
        const std::size_t base = (ch * h + 2 * y) * w + 2 * x;
        const std::size_t candidates[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = candidates[0];
        for (int q = 1; q < 4; ++q) {
          if (input[candidates[q]] > input[best]) best = candidates[q];
        }
        r.output[o] = input[best];
        r.argmax[o] = best;
      }
    }
  }
  require_finite(r.output, "pool_max2");
  return r;
}

Tensor pool_max2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output) {
  if (argmax.size() != grad_output.size()) throw DimensionError("pool_max2_backward: argmax size mismatch");
  Tensor g(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += grad_output[o];
  return g;
}

Tensor upsample_nearest2(const Tensor& input) {
  require_rank(input, 3, "upsample_nearest2");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const double* src = input.data() + (ch * h + y / 2) * w;
      double* dst = out.data() + (ch * 2 * h + y) * 2 * w;
      for (std::size_t x = 0; x < 2 * w; ++x) dst[x] = src[x / 2];
    }
  }
  return out;
}

Tensor upsample_nearest2_backward(const Tensor& grad_output) {
  require_rank(grad_output, 3, "upsample_nearest2_backward");
  const std::size_t c = grad_output.dim(0), h2 = grad_output.dim(1), w2 = grad_output.dim(2);
  if (h2 % 2 != 0 || w2 % 2 != 0) throw DimensionError("upsample_nearest2_backward: odd extent");
  Tensor g({c, h2 / 2, w2 / 2});
  const std::size_t w = w2 / 2;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h2; ++y) {
      const double* src = grad_output.data() + (ch * h2 + y) * w2;
      double* dst = g.data() + (ch * (h2 / 2) + y / 2) * w;
      for (std::size_t x = 0; x < w2; ++x) dst[x / 2] += src[x];
    }
  }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) throw DimensionError("concat_channels: spatial mismatch");
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.storage().begin(), a.storage().end(), out.storage().begin());
  std::copy(b.storage().begin(), b.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t channels_a) {
  require_rank(t, 3, "split_channels");
  if (channels_a == 0 || channels_a >= t.dim(0)) throw DimensionError("split_channels: bad split point");
  const std::size_t plane = t.dim(1) * t.dim(2);
  const auto mid = t.storage().begin() + static_cast<std::ptrdiff_t>(channels_a * plane);
  Tensor a({channels_a, t.dim(1), t.dim(2)}, std::vector<double>(t.storage().begin(), mid));
  Tensor b({t.dim(0) - channels_a, t.dim(1), t.dim(2)}, std::vector<double>(mid, t.storage().end()));
  return {std::move(a), std::move(b)};
}

// ---- normalisation / losses -------------------------------------------------------

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  require_finite(logits, "softmax input");
  const double mx = *std::max_element(logits.storage().begin(), logits.storage().end());
  Tensor out(logits.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= z;
  return out;
}

Tensor softmax_backward(const Tensor& output, const Tensor& grad_output) {
  require_same_shape(output, grad_output, "softmax_backward");
  double dot = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) dot += output[i] * grad_output[i];
  Tensor g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = output[i] * (grad_output[i] - dot);
  return g;
}

std::vector<double> mse_per_channel(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_per_channel");
  require_rank(pred, 3, "mse_per_channel");
  const std::size_t n = pred.dim(0), plane = pred.dim(1) * pred.dim(2);
  std::vector<double> out(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    const double* p = pred.data() + c * plane;
    const double* t = target.data() + c * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = p[i] - t[i];
      s += d * d;
    }
    out[c] = s / static_cast<double>(plane);
    if (!std::isfinite(out[c])) throw NumericalError("mse_per_channel: non-finite loss");
  }
  return out;
}

Tensor mse_mean_backward(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_mean_backward");
  const double scale = 2.0 / static_cast<double>(pred.size());
  Tensor g(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
  return g;
}

// ---- optimisation -----------------------------------------------------------------

AdamState AdamState::for_shape(const Shape& shape) {
  AdamState s;
  s.m = Tensor(shape);
  s.v = Tensor(shape);
  return s;
}

void adam_step(Tensor& params, const Tensor& grads, AdamState& state, double lr) {
  require_same_shape(params, grads, "adam_step");
  if (state.m.shape() != params.shape() || state.v.shape() != params.shape()) {
    throw DimensionError("adam_step: optimizer state shape does not match parameters");
  }
  if (!(lr >= 0.0)) throw ConfigError("adam_step: learning rate must be non-negative");
  require_finite(grads, "adam_step gradient");

  state.t += 1;
  bool any_gradient = false;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double g = grads[i];
    any_gradient = any_gradient || g != 0.0;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
  }
  if (!any_gradient || lr == 0.0) return;

  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
  require_finite(params, "adam_step");
}

// ---- testing oracle ---------------------------------------------------------------------

Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  require_same_shape(a, b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace ahl
