// Minimal neural-network kernel: dense layers, ReLU, inverted dropout,
// losses, AdamW and a finite-difference gradient checker. All arithmetic is
// in double precision.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "onoalign/rng.hpp"
#include "onoalign/tensor.hpp"

namespace onoalign {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DenseLayer {
  Matrix weights;              // [out_dim x in_dim]
  std::vector<double> bias;    // [out_dim]

  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim)
      : weights(out_dim, in_dim), bias(out_dim, 0.0) {}

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }

  bool operator==(const DenseLayer&) const = default;
};

inline Matrix dense_forward(const DenseLayer& layer, const Matrix& input) {
  if (input.cols() != layer.in_dim()) {
    throw ShapeError("dense_forward: input width " + std::to_string(input.cols()) +
                     " != layer in_dim " + std::to_string(layer.in_dim()));
  }
  Matrix out(input.rows(), layer.out_dim());
  for (std::size_t b = 0; b < input.rows(); ++b) {
    const auto x = input.row(b);
    auto y = out.row(b);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const auto w = layer.weights.row(o);
      double s = layer.bias[o];
      for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
      y[o] = s;
    }
  }
  return out;
}

struct DenseGradients {
  Matrix weights;
  std::vector<double> bias;
  Matrix input;
};

inline DenseGradients dense_backward(const DenseLayer& layer, const Matrix& input,
                                     const Matrix& upstream) {
  if (input.cols() != layer.in_dim() || upstream.cols() != layer.out_dim() ||
      input.rows() != upstream.rows()) {
    throw ShapeError("dense_backward: input " + shape_string(input) + " / upstream " +
                     shape_string(upstream) + " inconsistent with layer " +
                     shape_string(layer.weights));
  }
  DenseGradients g{Matrix(layer.out_dim(), layer.in_dim()),
                   std::vector<double>(layer.out_dim(), 0.0),
                   Matrix(input.rows(), layer.in_dim())};
  for (std::size_t b = 0; b < input.rows(); ++b) {
    const auto x = input.row(b);
    const auto up = upstream.row(b);
    auto dx = g.input.row(b);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double u = up[o];
      if (u == 0.0) continue;
      g.bias[o] += u;
      auto gw = g.weights.row(o);
      const auto w = layer.weights.row(o);
      for (std::size_t i = 0; i < x.size(); ++i) {
        gw[i] += u * x[i];
        dx[i] += u * w[i];
      }
    }
  }
  return g;
}

inline Matrix relu(const Matrix& input) {
  Matrix out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Matrix relu_backward(const Matrix& input, const Matrix& upstream) {
  if (input.rows() != upstream.rows() || input.cols() != upstream.cols()) {
    throw ShapeError("relu_backward: shape mismatch");
  }
  Matrix out = upstream;
  const auto x = input.values();
  auto g = out.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (x[i] <= 0.0) g[i] = 0.0;
  }
  return out;
}

struct DropoutResult {
  Matrix output;
  Matrix mask;  // 1 for kept units, 0 for dropped ones
};

// Inverted dropout: survivors are scaled by 1 / (1 - rate) so the expected
// activation is unchanged and inference is the identity.
inline DropoutResult dropout(const Matrix& input, double rate, RngStream& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  DropoutResult r{input, Matrix(input.rows(), input.cols(), 1.0)};
  if (!training || rate == 0.0) return r;
  const double scale = 1.0 / (1.0 - rate);
  auto out = r.output.values();
  auto mask = r.mask.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (rng.uniform() < rate) {
      mask[i] = 0.0;
      out[i] = 0.0;
    } else {
      out[i] *= scale;
    }
  }
  return r;
}

inline Matrix dropout_backward(const Matrix& mask, double rate, const Matrix& upstream) {
  if (mask.rows() != upstream.rows() || mask.cols() != upstream.cols()) {
    throw ShapeError("dropout_backward: shape mismatch");
  }
  const double scale = 1.0 / (1.0 - rate);
  Matrix out = upstream;
  const auto m = mask.values();
  auto g = out.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= m[i] * scale;
  return out;
}

struct LossWithGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty logits");
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max_logit);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

inline LossWithGradient softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(logits.size()) + ")");
  }
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  double total = 0.0;
  for (double v : logits) total += std::exp(v - max_logit);
  const double log_z = max_logit + std::log(total);

  LossWithGradient r{log_z - logits[label], std::vector<double>(logits.size())};
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - log_z);
  r.grad[label] -= 1.0;
  return r;
}

struct PairLoss {
  double loss = 0.0;
  std::vector<double> grad_a;
  std::vector<double> grad_b;
};

// Squared Euclidean distance between two embeddings.
inline PairLoss pair_alignment_loss(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pair_alignment_loss: length mismatch");
  PairLoss r{0.0, std::vector<double>(a.size()), std::vector<double>(a.size())};
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    r.loss += d * d;
    r.grad_a[k] = 2.0 * d;
    r.grad_b[k] = -2.0 * d;
  }
  return r;
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One trainable tensor seen by the optimizer. `decay` selects decoupled
// weight decay (weight matrices yes, biases no).
struct ParamSlot {
  std::span<double> values;
  std::span<const double> grads;
  bool decay = true;
};

struct AdamWState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  bool operator==(const AdamWState&) const = default;
};

inline void adamw_step(std::span<const ParamSlot> params, AdamWState& state,
                       const AdamWConfig& config) {
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.values.size(), 0.0);
      state.second_moment.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state has " +
                     std::to_string(state.first_moment.size()) + " slots, got " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t s = 0; s < params.size(); ++s) {
    const auto& p = params[s];
    if (p.values.size() != p.grads.size() || state.first_moment[s].size() != p.values.size() ||
        state.second_moment[s].size() != p.values.size()) {
      throw ShapeError("adamw_step: shape mismatch in parameter slot " + std::to_string(s));
    }
    for (std::size_t i = 0; i < p.grads.size(); ++i) {
      if (!std::isfinite(p.grads[i])) {
        throw NumericError("adamw_step: non-finite gradient " + std::to_string(p.grads[i]) +
                           " in parameter slot " + std::to_string(s) + " at index " +
                           std::to_string(i));
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t s = 0; s < params.size(); ++s) {
    const auto& p = params[s];
    auto& m = state.first_moment[s];
    auto& v = state.second_moment[s];
    const double decay = p.decay ? config.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double g = p.grads[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.values[i] -= config.lr * (m_hat / (std::sqrt(v_hat) + config.eps) + decay * p.values[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_relative_error = 0.0;     // worst single coordinate
  double vector_relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// `loss_and_grad(params)` must return a LossWithGradient whose grad has one
// entry per parameter. Central differences with step h are compared against
// the analytic gradient; coordinates where both are ~0 are skipped.
template <typename LossFn>
GradCheckResult grad_check_detailed(LossFn&& loss_and_grad, std::vector<double> params, double h) {
  const LossWithGradient analytic = loss_and_grad(std::span<const double>(params));
  if (analytic.grad.size() != params.size()) throw ShapeError("grad_check: gradient size mismatch");
  GradCheckResult result;
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    // Divide by the step actually taken: saved +/- h is rounded, so the
    // representable displacement can differ from h in the last bits.
    const double up = saved + h;
    const double down = saved - h;
    params[i] = up;
    const double plus = loss_and_grad(std::span<const double>(params)).loss;
    params[i] = down;
    const double minus = loss_and_grad(std::span<const double>(params)).loss;
    params[i] = saved;
    const double numeric = (plus - minus) / (up - down);
    const double a = analytic.grad[i];
    diff_sq += (a - numeric) * (a - numeric);
    analytic_sq += a * a;
    numeric_sq += numeric * numeric;
    if (std::abs(a) + std::abs(numeric) <= 1e-12) continue;
    ++result.checked;
    const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
    }
  }
  const double scale = std::sqrt(std::max(analytic_sq, numeric_sq));
  if (scale > 0.0) result.vector_relative_error = std::sqrt(diff_sq) / scale;
  return result;
}

template <typename LossFn>
double grad_check(LossFn&& loss_and_grad, std::vector<double> params, double h = 1e-6) {
  return grad_check_detailed(std::forward<LossFn>(loss_and_grad), std::move(params), h)
      .max_relative_error;
}

}  // namespace onoalign
