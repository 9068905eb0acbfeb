#pragma once
// Fully connected networks with hand-written reverse mode and three output heads:
//
//   image_gaussian   raw = [mean (P) | log_var (P)]          -> DiagGaussianImage
//   scalar_gaussian  raw = [y_hat | delta]                    -> ScalarGaussian
//   softmax          raw = logits (C)                         -> CategoricalDist
//
// One shared trunk feeds a single output layer whose rows are split between
// the mean and log-variance heads. Log-variance outputs are clamped to
// [kLogVarMin, kLogVarMax]; the clamp passes zero gradient when active.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "uncprop/core/image.hpp"
#include "uncprop/core/rng.hpp"
#include "uncprop/distributions.hpp"

namespace uncprop {

enum class Activation { relu, tanh };
enum class HeadKind { image_gaussian, scalar_gaussian, softmax };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline const char* to_string(HeadKind h) {
  switch (h) {
    case HeadKind::image_gaussian: return "image_gaussian";
    case HeadKind::scalar_gaussian: return "scalar_gaussian";
    case HeadKind::softmax: return "softmax";
  }
  return "?";
}

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
  HeadKind head = HeadKind::scalar_gaussian;
  std::size_t image_rows = 0;   // image head only
  std::size_t image_cols = 0;   // image head only
  std::size_t num_classes = 0;  // softmax head only
  bool residual = false;        // image head: mean = input[0:P] + raw mean
  double target_shift = 0.0;    // scalar head: y_hat = shift + scale * raw
  double target_scale = 1.0;

  std::size_t image_pixels() const { return image_rows * image_cols; }

  std::size_t output_dim() const {
    switch (head) {
      case HeadKind::image_gaussian: return 2 * image_pixels();
      case HeadKind::scalar_gaussian: return 2;
      case HeadKind::softmax: return num_classes;
    }
    return 0;
  }

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("MlpSpec: input_dim must be positive");
    if (hidden.empty()) throw std::invalid_argument("MlpSpec: need at least one hidden layer");
    for (auto w : hidden) {
      if (w == 0) throw std::invalid_argument("MlpSpec: hidden widths must be positive");
    }
    switch (head) {
      case HeadKind::image_gaussian:
        if (image_pixels() == 0) throw std::invalid_argument("MlpSpec: image head needs image shape");
        if (residual && input_dim < image_pixels()) {
          throw std::invalid_argument("MlpSpec: residual image head needs input_dim >= pixels");
        }
        break;
      case HeadKind::softmax:
        if (num_classes < 2) throw std::invalid_argument("MlpSpec: softmax head needs >= 2 classes");
        break;
      case HeadKind::scalar_gaussian:
        if (!(target_scale > 0.0) || !std::isfinite(target_scale) || !std::isfinite(target_shift)) {
          throw std::invalid_argument("MlpSpec: scalar head needs a positive finite target scale");
        }
        break;
    }
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerSlice {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;  // row-major out x in
  std::size_t bias_offset = 0;
};

/// Flat parameters and a gradient buffer of equal length.
struct ParamStore {
  std::vector<double> params;
  std::vector<double> grads;
  std::vector<LayerSlice> layers;

  std::size_t size() const { return params.size(); }
  void zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }
};

/// Cached activations of one forward pass, consumed by backward().
struct Tape {
  std::vector<std::vector<double>> layer_inputs;  // input to each linear layer
  std::vector<std::vector<double>> pre;           // hidden pre-activations
  std::vector<double> raw;                        // output layer values
  bool valid = false;
};

/// Gradient of a loss with respect to the decoded head outputs.
struct HeadGrad {
  std::vector<double> d_mean;     // image: P entries; scalar: 1 entry
  std::vector<double> d_log_var;  // same length as d_mean
  std::vector<double> d_logits;   // softmax only
};

using HeadOutput = std::variant<DiagGaussianImage, ScalarGaussian, CategoricalDist>;

inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

class Mlp {
 public:
  Mlp() = default;

  /// Randomly initialized network: He (relu) or Xavier (tanh) normal weights,
  /// zero biases, zero log-variance rows. A residual image head starts with an
  /// all-zero output layer.
  Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    build_layout();
    StreamRng rng(SeedSpec{seed, 0x1417});
    for (const auto& L : store_.layers) {
      const double var = spec_.activation == Activation::relu
                             ? 2.0 / static_cast<double>(L.in)
                             : 2.0 / static_cast<double>(L.in + L.out);
      const double sd = std::sqrt(var);
      for (std::size_t k = 0; k < L.in * L.out; ++k) store_.params[L.weight_offset + k] = sd * rng.normal();
    }
    zero_log_var_rows();
    // residual heads start as the identity map on their input image
    if (spec_.head == HeadKind::image_gaussian && spec_.residual) zero_output_layer();
  }

  /// Network with given parameters (e.g. loaded from a checkpoint).
  Mlp(MlpSpec spec, std::vector<double> params) : spec_(std::move(spec)) {
    build_layout();
    if (params.size() != store_.params.size()) {
      throw std::invalid_argument("Mlp: expected " + std::to_string(store_.params.size()) +
                                  " parameters, got " + std::to_string(params.size()));
    }
    store_.params = std::move(params);
  }

  const MlpSpec& spec() const { return spec_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  std::span<double> params() { return store_.params; }
  std::span<const double> params() const { return store_.params; }

  void zero_output_layer() {
    const auto& L = store_.layers.back();
    std::fill_n(store_.params.begin() + static_cast<std::ptrdiff_t>(L.weight_offset), L.in * L.out, 0.0);
    std::fill_n(store_.params.begin() + static_cast<std::ptrdiff_t>(L.bias_offset), L.out, 0.0);
  }

  /// Output layer values. When `tape` is given, caches what backward() needs.
  std::vector<double> forward_raw(std::span<const double> input, Tape* tape = nullptr) const {
    if (input.size() != spec_.input_dim) {
      throw std::invalid_argument("Mlp::forward: input has " + std::to_string(input.size()) +
                                  " entries, expected " + std::to_string(spec_.input_dim));
    }
    const auto& P = store_.params;
    std::vector<double> x(input.begin(), input.end());
    if (tape) {
      tape->layer_inputs.clear();
      tape->pre.clear();
      tape->valid = false;
    }
    const std::size_t n_layers = store_.layers.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto& L = store_.layers[l];
      std::vector<double> y(L.out);
      const double* W = P.data() + L.weight_offset;
      const double* b = P.data() + L.bias_offset;
      for (std::size_t j = 0; j < L.out; ++j) {
        const double* row = W + j * L.in;
        double acc = 0.0;
        for (std::size_t i = 0; i < L.in; ++i) acc += row[i] * x[i];
        y[j] = acc + b[j];
      }
      if (tape) tape->layer_inputs.push_back(x);
      if (l + 1 < n_layers) {
        if (tape) tape->pre.push_back(y);
        for (double& v : y) v = activate(v);
      }
      x = std::move(y);
    }
    if (tape) {
      tape->raw = x;
      tape->valid = true;
    }
    return x;
  }

  DiagGaussianImage decode_image(std::span<const double> input, std::span<const double> raw) const {
    require_head(HeadKind::image_gaussian);
    const std::size_t n = spec_.image_pixels();
    Image mean(spec_.image_rows, spec_.image_cols), log_var(spec_.image_rows, spec_.image_cols);
    for (std::size_t i = 0; i < n; ++i) {
      mean.data[i] = raw[i] + (spec_.residual ? input[i] : 0.0);
      log_var.data[i] = clamp_log_var(raw[n + i]);
    }
    return DiagGaussianImage(std::move(mean), std::move(log_var));
  }

  ScalarGaussian decode_scalar(std::span<const double> raw) const {
    require_head(HeadKind::scalar_gaussian);
    return {spec_.target_shift + spec_.target_scale * raw[0],
            clamp_log_var(raw[1] + 2.0 * std::log(spec_.target_scale))};
  }

  CategoricalDist decode_categorical(std::span<const double> raw) const {
    require_head(HeadKind::softmax);
    return {softmax(raw)};
  }

  DiagGaussianImage forward_image(std::span<const double> input, Tape* tape = nullptr) const {
    return decode_image(input, forward_raw(input, tape));
  }
  ScalarGaussian forward_scalar(std::span<const double> input, Tape* tape = nullptr) const {
    return decode_scalar(forward_raw(input, tape));
  }
  CategoricalDist forward_categorical(std::span<const double> input, Tape* tape = nullptr) const {
    return decode_categorical(forward_raw(input, tape));
  }

  HeadOutput forward(std::span<const double> input) const {
    const auto raw = forward_raw(input);
    switch (spec_.head) {
      case HeadKind::image_gaussian: return decode_image(input, raw);
      case HeadKind::scalar_gaussian: return decode_scalar(raw);
      case HeadKind::softmax: return decode_categorical(raw);
    }
    throw std::logic_error("Mlp::forward: unknown head");
  }

  /// Maps a gradient on the decoded outputs to a gradient on the raw outputs.
  std::vector<double> raw_gradient(const Tape& tape, const HeadGrad& g) const {
    std::vector<double> d(spec_.output_dim(), 0.0);
    const auto in_clamp = [](double s) { return s > kLogVarMin && s < kLogVarMax; };
    switch (spec_.head) {
      case HeadKind::image_gaussian: {
        const std::size_t n = spec_.image_pixels();
        if (g.d_mean.size() != n || g.d_log_var.size() != n) {
          throw std::invalid_argument("Mlp::raw_gradient: image head gradient has wrong size");
        }
        for (std::size_t i = 0; i < n; ++i) {
          d[i] = g.d_mean[i];
          d[n + i] = in_clamp(tape.raw[n + i]) ? g.d_log_var[i] : 0.0;
        }
        break;
      }
      case HeadKind::scalar_gaussian: {
        if (g.d_mean.size() != 1 || g.d_log_var.size() != 1) {
          throw std::invalid_argument("Mlp::raw_gradient: scalar head gradient has wrong size");
        }
        d[0] = spec_.target_scale * g.d_mean[0];
        const double s = tape.raw[1] + 2.0 * std::log(spec_.target_scale);
        d[1] = in_clamp(s) ? g.d_log_var[0] : 0.0;
        break;
      }
      case HeadKind::softmax:
        if (g.d_logits.size() != spec_.num_classes) {
          throw std::invalid_argument("Mlp::raw_gradient: logit gradient has wrong size");
        }
        d = g.d_logits;
        break;
    }
    return d;
  }

  /// Accumulates dLoss/dparams into `grad` given dLoss/draw for the pass in `tape`.
  void backward(const Tape& tape, std::span<const double> d_raw, std::span<double> grad) const {
    if (!tape.valid) throw std::logic_error("Mlp::backward: no cached forward pass");
    if (grad.size() != store_.params.size()) throw std::invalid_argument("Mlp::backward: gradient size mismatch");
    if (d_raw.size() != spec_.output_dim()) throw std::invalid_argument("Mlp::backward: head gradient size mismatch");
    const auto& P = store_.params;
    std::vector<double> g(d_raw.begin(), d_raw.end());
    for (std::size_t l = store_.layers.size(); l-- > 0;) {
      const auto& L = store_.layers[l];
      const auto& x = tape.layer_inputs[l];
      const double* W = P.data() + L.weight_offset;
      double* dW = grad.data() + L.weight_offset;
      double* db = grad.data() + L.bias_offset;
      std::vector<double> dx(l > 0 ? L.in : 0, 0.0);
      for (std::size_t j = 0; j < L.out; ++j) {
        const double gj = g[j];
        if (gj == 0.0) continue;
        db[j] += gj;
        double* dw_row = dW + j * L.in;
        for (std::size_t i = 0; i < L.in; ++i) dw_row[i] += gj * x[i];
        if (l > 0) {
          const double* row = W + j * L.in;
          for (std::size_t i = 0; i < L.in; ++i) dx[i] += gj * row[i];
        }
      }
      if (l > 0) {
        const auto& pre = tape.pre[l - 1];
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= activate_derivative(pre[i]);
        g = std::move(dx);
      }
    }
  }

  /// Convenience: backward from a head-level gradient.
  void backward(const Tape& tape, const HeadGrad& head, std::span<double> grad) const {
    if (!tape.valid) throw std::logic_error("Mlp::backward: no cached forward pass");
    backward(tape, raw_gradient(tape, head), grad);
  }

 private:
  void build_layout() {
    spec_.validate();
    std::vector<std::size_t> widths{spec_.input_dim};
    widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
    widths.push_back(spec_.output_dim());
    std::size_t offset = 0;
    store_.layers.clear();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      LayerSlice L{widths[l], widths[l + 1], offset, offset + widths[l] * widths[l + 1]};
      offset = L.bias_offset + L.out;
      store_.layers.push_back(L);
    }
    store_.params.assign(offset, 0.0);
    store_.grads.assign(offset, 0.0);
  }

  void zero_log_var_rows() {
    const auto& L = store_.layers.back();
    std::size_t first = 0, count = 0;
    if (spec_.head == HeadKind::image_gaussian) {
      first = spec_.image_pixels();
      count = spec_.image_pixels();
    } else if (spec_.head == HeadKind::scalar_gaussian) {
      first = 1;
      count = 1;
    }
    for (std::size_t j = first; j < first + count; ++j) {
      std::fill_n(store_.params.begin() + static_cast<std::ptrdiff_t>(L.weight_offset + j * L.in), L.in, 0.0);
      store_.params[L.bias_offset + j] = 0.0;
    }
  }

  void require_head(HeadKind h) const {
    if (spec_.head != h) {
      throw std::invalid_argument(std::string("Mlp: head is ") + to_string(spec_.head) + ", not " + to_string(h));
    }
  }

  double activate(double v) const {
    return spec_.activation == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
  }
  double activate_derivative(double pre) const {
    if (spec_.activation == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
    const double t = std::tanh(pre);
    return 1.0 - t * t;
  }

  MlpSpec spec_;
  ParamStore store_;
};

}  // namespace uncprop
