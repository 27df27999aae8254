#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dynfed {

/// Dense row-major float64 tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

enum class Activation { None, LeakyRelu };

inline constexpr double kLeakySlope = 0.01;

struct ConvLayer {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;  // odd, zero padding of kernel/2, stride 1
  Activation activation = Activation::None;

  std::size_t weight_count() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Architecture descriptor of a same-resolution fully-convolutional segmenter.
struct Architecture {
  int height = 32;
  int width = 32;
  // Subtracted from every input pixel before the first layer.
  double input_offset = 0.0;
  std::vector<ConvLayer> layers;

  std::size_t parameter_count() const;
  void validate() const;
  std::string describe() const;

  /// 1 -> 8 -> 8 -> 1 channels, 3x3 kernels, leaky rectifier between layers, inputs centred at 0.5.
  static Architecture desk_segmenter(int height = 32, int width = 32);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Parameters of one model: per layer, weights [out][in][k][k] then bias [out].
struct ModelParams {
  Architecture arch;
  std::vector<double> theta;

  static ModelParams zeros(const Architecture& arch);
  /// He-uniform weights, zero biases.
  static ModelParams initialize(const Architecture& arch, std::uint64_t seed);

  bool aggregable_with(const ModelParams& other) const { return arch == other.arch; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

std::vector<double> flatten(const ModelParams& params);
ModelParams unflatten(const Architecture& arch, std::vector<double> theta);

/// Intermediate values kept by the forward pass for backpropagation.
struct ForwardCache {
  // inputs[l] is the input of layer l; preactivations[l] its raw conv output.
  std::vector<Tensor> inputs;
  std::vector<Tensor> preactivations;
};

/// Logits [B,1,H,W] for images [B,1,H,W].
Tensor model_forward(const ModelParams& params, const Tensor& images);
Tensor model_forward(const ModelParams& params, const Tensor& images, ForwardCache& cache);

/// Mean binary cross-entropy on logits, computed in the softplus form.
double bce_with_logits(const Tensor& logits, const Tensor& targets);
double bce_with_logits(double logit, double target);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Exact gradient of `loss_scale * bce_with_logits(model_forward(...), targets)`.
LossAndGradient model_backward(const ModelParams& params, const Tensor& images, const Tensor& targets,
                               double loss_scale = 1.0);

/// Elementwise sigmoid of logits.
Tensor sigmoid(const Tensor& logits);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  static AdamState for_size(std::size_t n, AdamConfig config = {});
};

/// One bias-corrected Adam update of `theta` in place.
void adam_step(AdamState& state, std::span<double> theta, std::span<const double> grad);
void adam_step(AdamState& state, ModelParams& params, std::span<const double> grad);

}  // namespace dynfed
