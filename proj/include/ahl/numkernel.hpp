#pragma once

// Deterministic 64-bit numerical kernel: a dense row-major tensor, the fixed
// layer set used by the heatmap learner and the policy controllers, explicit
// reverse-mode backward passes, Adam, and a central-difference oracle.
//
// Every layer comes as a forward function plus a matching *_backward that
// receives the upstream gradient and returns gradients for its inputs. Models
// chain these by hand; there is no dynamic graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace ahl {

using Shape = std::vector<std::size_t>;

class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor filled(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Rank-2 and rank-3 element access (row-major).
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t ch, std::size_t r, std::size_t c) {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }
  double at(std::size_t ch, std::size_t r, std::size_t c) const {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }

  void fill(double value);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double scale);

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);

/// Byte-level equality of shape and data (distinguishes -0.0 from 0.0).
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Throws NumericalError naming `where` if any entry is NaN or infinite.
void require_finite(const Tensor& t, std::string_view where);

// ---- convolution -----------------------------------------------------------

struct Conv2dGrads {
  Tensor input;  // empty when not requested
  Tensor weights;
  Tensor bias;
};

/// Cross-correlation of a C_in x H x W input with C_out x C_in x k x k weights.
/// Output extent (H + 2*pad - k) / stride + 1 must be a positive integer.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride, int pad);

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                            int stride, int pad, bool need_input_grad = true);

// ---- dense -----------------------------------------------------------------

struct LinearGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// y = W x + b for x of length n, W of shape m x n.
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
LinearGrads linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

// ---- elementwise / resampling ----------------------------------------------

Tensor relu(const Tensor& input);
/// Uses the forward output: gradient passes where output > 0.
Tensor relu_backward(const Tensor& output, const Tensor& grad_output);

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// 2x2 max-pool with stride 2 over C x H x W; H and W must be even. Ties go to
/// the first maximal element in row-major scan order of the window.
PoolResult pool_max2(const Tensor& input);
Tensor pool_max2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output);

Tensor upsample_nearest2(const Tensor& input);
Tensor upsample_nearest2_backward(const Tensor& grad_output);

/// Stacks two C x H x W tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels for gradients: first `channels_a` channels, rest.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t channels_a);

// ---- normalisation / losses -------------------------------------------------

/// Max-subtracted softmax over all entries.
Tensor softmax(const Tensor& logits);
Tensor softmax_backward(const Tensor& output, const Tensor& grad_output);

/// Per-channel mean squared error of N x H x W tensors.
std::vector<double> mse_per_channel(const Tensor& pred, const Tensor& target);
/// Gradient w.r.t. pred of the mean over channels of mse_per_channel.
Tensor mse_mean_backward(const Tensor& pred, const Tensor& target);

// ---- optimisation -----------------------------------------------------------

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_shape(const Shape& shape);
};

/// One bias-corrected Adam step. An all-zero gradient advances t and the
/// moment estimates but leaves parameter values untouched.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state, double lr);

// ---- testing oracle ---------------------------------------------------------

using ScalarFunction = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps near-zero
/// entries from dominating the ratio.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace ahl
