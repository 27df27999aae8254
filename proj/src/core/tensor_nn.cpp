#include "tensor_nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "rng.hpp"

namespace dynfed {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

struct LayerView {
  const double* weights;
  const double* bias;
};

std::vector<LayerView> layer_views(const ModelParams& params) {
  std::vector<LayerView> views;
  const double* p = params.theta.data();
  for (const auto& layer : params.arch.layers) {
    views.push_back({p, p + layer.weight_count()});
    p += layer.parameter_count();
  }
  return views;
}

void check_images(const ModelParams& params, const Tensor& images) {
  const auto& arch = params.arch;
  if (params.theta.size() != arch.parameter_count()) {
    throw ContractError("model parameter vector has length " + std::to_string(params.theta.size()) +
                        ", architecture requires " + std::to_string(arch.parameter_count()));
  }
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(arch.layers.front().in_channels) ||
      images.dim(2) != static_cast<std::size_t>(arch.height) ||
      images.dim(3) != static_cast<std::size_t>(arch.width)) {
    throw ContractError("image batch shape " + shape_string(images.shape()) + " does not match architecture " +
                        arch.describe());
  }
}

// Copies [cin,H,W] into a zero-bordered [cin,H+2p,W+2p] buffer.
void pad_input(const double* in, int cin, int h, int w, int pad, std::vector<double>& padded) {
  const int ph = h + 2 * pad;
  const int pw = w + 2 * pad;
  padded.assign(static_cast<std::size_t>(cin) * ph * pw, 0.0);
  for (int c = 0; c < cin; ++c) {
    for (int y = 0; y < h; ++y) {
      const double* src = in + (static_cast<std::size_t>(c) * h + y) * w;
      double* dst = padded.data() + (static_cast<std::size_t>(c) * ph + y + pad) * pw + pad;
      std::copy(src, src + w, dst);
    }
  }
}

void conv_forward(const ConvLayer& layer, const LayerView& view, const std::vector<double>& padded, int h, int w,
                  double* out) {
  const int k = layer.kernel;
  const int ph = h + k - 1;
  const int pw = w + k - 1;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int o = 0; o < layer.out_channels; ++o) {
    double* dst_plane = out + o * plane;
    std::fill(dst_plane, dst_plane + plane, view.bias[o]);
    for (int i = 0; i < layer.in_channels; ++i) {
      const double* src_plane = padded.data() + static_cast<std::size_t>(i) * ph * pw;
      const double* wk = view.weights + (static_cast<std::size_t>(o) * layer.in_channels + i) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          for (int y = 0; y < h; ++y) {
            const double* s = src_plane + (y + ky) * pw + kx;
            double* d = dst_plane + y * w;
            for (int x = 0; x < w; ++x) d[x] += wv * s[x];
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients and (optionally) the gradient of the padded input.
void conv_backward(const ConvLayer& layer, const LayerView& view, const std::vector<double>& padded,
                   const double* grad_pre, int h, int w, double* grad_weights, double* grad_bias,
                   std::vector<double>* grad_padded) {
  const int k = layer.kernel;
  const int ph = h + k - 1;
  const int pw = w + k - 1;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (grad_padded) grad_padded->assign(padded.size(), 0.0);
  for (int o = 0; o < layer.out_channels; ++o) {
    const double* g = grad_pre + o * plane;
    double bsum = 0.0;
    for (std::size_t j = 0; j < plane; ++j) bsum += g[j];
    grad_bias[o] += bsum;
    for (int i = 0; i < layer.in_channels; ++i) {
      const std::size_t widx = (static_cast<std::size_t>(o) * layer.in_channels + i) * k * k;
      const double* src_plane = padded.data() + static_cast<std::size_t>(i) * ph * pw;
      double* gpad_plane = grad_padded ? grad_padded->data() + static_cast<std::size_t>(i) * ph * pw : nullptr;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = view.weights[widx + ky * k + kx];
          double acc = 0.0;
          for (int y = 0; y < h; ++y) {
            const double* s = src_plane + (y + ky) * pw + kx;
            const double* gy = g + y * w;
            for (int x = 0; x < w; ++x) acc += gy[x] * s[x];
            if (gpad_plane) {
              double* d = gpad_plane + (y + ky) * pw + kx;
              for (int x = 0; x < w; ++x) d[x] += wv * gy[x];
            }
          }
          grad_weights[widx + ky * k + kx] += acc;
        }
      }
    }
  }
}

void apply_activation(Activation act, const double* pre, double* out, std::size_t n) {
  switch (act) {
    case Activation::None:
      std::copy(pre, pre + n, out);
      break;
    case Activation::LeakyRelu:
      for (std::size_t j = 0; j < n; ++j) out[j] = pre[j] > 0.0 ? pre[j] : kLeakySlope * pre[j];
      break;
  }
}

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ContractError("tensor shape " + shape_string(shape_) + " needs " + std::to_string(shape_product(shape_)) +
                        " values, got " + std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ContractError("tensor axis " + std::to_string(axis) + " out of range");
  return shape_[axis];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t ConvLayer::weight_count() const {
  return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
}

std::size_t ConvLayer::parameter_count() const { return weight_count() + static_cast<std::size_t>(out_channels); }

std::size_t Architecture::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

void Architecture::validate() const {
  if (height <= 0 || width <= 0) throw ContractError("architecture patch size must be positive");
  if (layers.empty()) throw ContractError("architecture needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in_channels <= 0 || l.out_channels <= 0) throw ContractError("layer channel counts must be positive");
    if (l.kernel < 1 || l.kernel % 2 == 0) throw ContractError("layer kernel size must be odd and >= 1");
    if (i > 0 && layers[i - 1].out_channels != l.in_channels) {
      throw ContractError("layer " + std::to_string(i) + " input channels do not match previous layer output");
    }
  }
  if (layers.back().out_channels != 1) throw ContractError("segmenter must emit a single logit channel");
  if (!std::isfinite(input_offset)) throw ContractError("architecture input offset must be finite");
}

std::string Architecture::describe() const {
  std::ostringstream os;
  os << height << 'x' << width;
  if (input_offset != 0.0) os << " offset" << input_offset;
  for (const auto& l : layers) {
    os << " conv" << l.kernel << 'x' << l.kernel << '(' << l.in_channels << "->" << l.out_channels << ')';
    if (l.activation == Activation::LeakyRelu) os << "+lrelu";
  }
  return os.str();
}

Architecture Architecture::desk_segmenter(int height, int width) {
  Architecture arch;
  arch.height = height;
  arch.width = width;
  arch.input_offset = 0.5;
  arch.layers = {
      {1, 8, 3, Activation::LeakyRelu},
      {8, 8, 3, Activation::LeakyRelu},
      {8, 1, 3, Activation::None},
  };
  return arch;
}

ModelParams ModelParams::zeros(const Architecture& arch) {
  arch.validate();
  return {arch, std::vector<double>(arch.parameter_count(), 0.0)};
}

ModelParams ModelParams::initialize(const Architecture& arch, std::uint64_t seed) {
  ModelParams params = zeros(arch);
  Rng rng(derive_seed(seed, {0x1417}));
  double* p = params.theta.data();
  for (const auto& layer : arch.layers) {
    const double fan_in = static_cast<double>(layer.in_channels) * layer.kernel * layer.kernel;
    std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    for (std::size_t j = 0; j < layer.weight_count(); ++j) p[j] = dist(rng);
    p += layer.parameter_count();
  }
  return params;
}

std::vector<double> flatten(const ModelParams& params) { return params.theta; }

ModelParams unflatten(const Architecture& arch, std::vector<double> theta) {
  arch.validate();
  if (theta.size() != arch.parameter_count()) {
    throw ContractError("unflatten: vector length " + std::to_string(theta.size()) + " != parameter count " +
                        std::to_string(arch.parameter_count()));
  }
  return {arch, std::move(theta)};
}

Tensor model_forward(const ModelParams& params, const Tensor& images) {
  ForwardCache cache;
  return model_forward(params, images, cache);
}

Tensor model_forward(const ModelParams& params, const Tensor& images, ForwardCache& cache) {
  check_images(params, images);
  const auto& arch = params.arch;
  const int h = arch.height;
  const int w = arch.width;
  const std::size_t batch = images.dim(0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto views = layer_views(params);

  cache.inputs.clear();
  cache.preactivations.clear();
  cache.inputs.push_back(images);
  if (arch.input_offset != 0.0) {
    for (double& v : cache.inputs.back().values()) v -= arch.input_offset;
  }
  std::vector<double> padded;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const auto& layer = arch.layers[l];
    const Tensor& input = cache.inputs.back();
    Tensor pre({batch, static_cast<std::size_t>(layer.out_channels), static_cast<std::size_t>(h),
                static_cast<std::size_t>(w)});
    for (std::size_t b = 0; b < batch; ++b) {
      pad_input(input.data() + b * layer.in_channels * plane, layer.in_channels, h, w, layer.kernel / 2, padded);
      conv_forward(layer, views[l], padded, h, w, pre.data() + b * layer.out_channels * plane);
    }
    Tensor out(pre.shape());
    apply_activation(layer.activation, pre.data(), out.data(), pre.size());
    cache.preactivations.push_back(std::move(pre));
    if (l + 1 < arch.layers.size()) cache.inputs.push_back(std::move(out));
    else return out;
  }
  return {};
}

double bce_with_logits(double logit, double target) {
  // max(z,0) - z*t + log(1 + exp(-|z|))
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

double bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ContractError("bce_with_logits: logits " + shape_string(logits.shape()) + " vs targets " +
                        shape_string(targets.shape()));
  }
  if (logits.size() == 0) throw ContractError("bce_with_logits: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += bce_with_logits(logits[i], targets[i]);
  return sum / static_cast<double>(logits.size());
}

Tensor sigmoid(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = sigmoid_scalar(logits[i]);
  return out;
}

LossAndGradient model_backward(const ModelParams& params, const Tensor& images, const Tensor& targets,
                               double loss_scale) {
  ForwardCache cache;
  const Tensor logits = model_forward(params, images, cache);
  if (!logits.all_finite()) throw NumericError("model_backward: non-finite logits");
  LossAndGradient result;
  result.loss = loss_scale * bce_with_logits(logits, targets);
  result.gradient.assign(params.theta.size(), 0.0);

  const auto& arch = params.arch;
  const int h = arch.height;
  const int w = arch.width;
  const std::size_t batch = images.dim(0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto views = layer_views(params);

  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& l : arch.layers) {
    offsets.push_back(off);
    off += l.parameter_count();
  }

  // Gradient w.r.t. the last preactivation.
  Tensor grad(logits.shape());
  const double inv_n = loss_scale / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = (sigmoid_scalar(logits[i]) - targets[i]) * inv_n;

  std::vector<double> padded;
  std::vector<double> grad_padded;
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const auto& layer = arch.layers[li];
    const Tensor& input = cache.inputs[li];
    const bool need_input_grad = li > 0;
    Tensor grad_input;
    if (need_input_grad) {
      grad_input = Tensor({batch, static_cast<std::size_t>(layer.in_channels), static_cast<std::size_t>(h),
                           static_cast<std::size_t>(w)});
    }
    double* gw = result.gradient.data() + offsets[li];
    double* gb = gw + layer.weight_count();
    const int pad = layer.kernel / 2;
    const int pw = w + 2 * pad;
    const int ph = h + 2 * pad;
    for (std::size_t b = 0; b < batch; ++b) {
      pad_input(input.data() + b * layer.in_channels * plane, layer.in_channels, h, w, pad, padded);
      conv_backward(layer, views[li], padded, grad.data() + b * layer.out_channels * plane, h, w, gw, gb,
                    need_input_grad ? &grad_padded : nullptr);
      if (need_input_grad) {
        double* gi = grad_input.data() + b * layer.in_channels * plane;
        for (int c = 0; c < layer.in_channels; ++c) {
          for (int y = 0; y < h; ++y) {
            const double* src = grad_padded.data() + (static_cast<std::size_t>(c) * ph + y + pad) * pw + pad;
            std::copy(src, src + w, gi + (static_cast<std::size_t>(c) * h + y) * w);
          }
        }
      }
    }
    if (need_input_grad) {
      // Through the activation of the previous layer.
      const auto& prev = arch.layers[li - 1];
      const Tensor& pre = cache.preactivations[li - 1];
      if (prev.activation == Activation::LeakyRelu) {
        for (std::size_t i = 0; i < grad_input.size(); ++i) {
          if (pre[i] <= 0.0) grad_input[i] *= kLeakySlope;
        }
      }
      grad = std::move(grad_input);
    }
  }
  for (double g : result.gradient) {
    if (!std::isfinite(g)) throw NumericError("model_backward: non-finite gradient");
  }
  return result;
}

AdamState AdamState::for_size(std::size_t n, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(AdamState& state, std::span<double> theta, std::span<const double> grad) {
  if (theta.size() != grad.size() || state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw ContractError("adam_step: length mismatch (theta " + std::to_string(theta.size()) + ", grad " +
                        std::to_string(grad.size()) + ", moments " + std::to_string(state.m.size()) + ")");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  }
  const auto& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grad[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    theta[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

void adam_step(AdamState& state, ModelParams& params, std::span<const double> grad) {
  adam_step(state, std::span<double>(params.theta), grad);
}

}  // namespace dynfed
