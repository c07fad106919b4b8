// Alignment model: an image projector and an audio projector (two dense
// layers each, ReLU and dropout in between) mapping frozen encoder
// embeddings into a joint space, plus one classifier shared by both
// modalities.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "onoalign/binary_io.hpp"
#include "onoalign/embstore.hpp"
#include "onoalign/nncore.hpp"

namespace onoalign {

struct ModelDims {
  std::size_t input = 512;   // encoder embedding width
  std::size_t hidden = 512;
  std::size_t joint = 256;
  std::size_t classes = 50;

  bool operator==(const ModelDims&) const = default;
};

struct ProjectionHead {
  DenseLayer hidden;
  DenseLayer output;

  bool operator==(const ProjectionHead&) const = default;
};

struct AlignmentModel {
  ModelDims dims;
  ProjectionHead image;
  ProjectionHead audio;
  DenseLayer classifier;

  bool operator==(const AlignmentModel&) const = default;
};

inline AlignmentModel zero_model(const ModelDims& dims) {
  return AlignmentModel{dims,
                        {DenseLayer(dims.input, dims.hidden), DenseLayer(dims.hidden, dims.joint)},
                        {DenseLayer(dims.input, dims.hidden), DenseLayer(dims.hidden, dims.joint)},
                        DenseLayer(dims.joint, dims.classes)};
}

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  bool is_weight = false;
};

// Visits every parameter tensor in a fixed order. `fn(info, values)` gets
// a span over the tensor's storage (mutable when the model is).
template <typename Model, typename Fn>
  requires std::is_same_v<std::remove_const_t<Model>, AlignmentModel>
void for_each_tensor(Model& model, Fn&& fn) {
  auto layer = [&](const std::string& prefix, auto& l) {
    fn(TensorInfo{prefix + ".weight", {l.weights.rows(), l.weights.cols()}, true}, l.weights.values());
    fn(TensorInfo{prefix + ".bias", {l.bias.size()}, false}, std::span(l.bias));
  };
  layer("image_projector.fc1", model.image.hidden);
  layer("image_projector.fc2", model.image.output);
  layer("audio_projector.fc1", model.audio.hidden);
  layer("audio_projector.fc2", model.audio.output);
  layer("classifier", model.classifier);
}

inline std::size_t parameter_count(const AlignmentModel& model) {
  std::size_t n = 0;
  for_each_tensor(model, [&](const TensorInfo&, std::span<const double> v) { n += v.size(); });
  return n;
}

inline std::vector<double> flatten_parameters(const AlignmentModel& model) {
  std::vector<double> flat;
  flat.reserve(parameter_count(model));
  for_each_tensor(model, [&](const TensorInfo&, std::span<const double> v) {
    flat.insert(flat.end(), v.begin(), v.end());
  });
  return flat;
}

inline void assign_parameters(AlignmentModel& model, std::span<const double> flat) {
  if (flat.size() != parameter_count(model)) throw ShapeError("assign_parameters: size mismatch");
  std::size_t offset = 0;
  for_each_tensor(model, [&](const TensorInfo&, std::span<double> v) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  });
}

// FNV-1a over the little-endian bytes of every parameter, in tensor order.
inline std::uint64_t model_checksum(const AlignmentModel& model) {
  std::vector<std::byte> bytes;
  bytes.reserve(parameter_count(model) * sizeof(double));
  for_each_tensor(model, [&](const TensorInfo&, std::span<const double> v) {
    for (double x : v) append_le(bytes, x);
  });
  return fnv1a64(bytes);
}

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline AlignmentModel init_model(const ModelDims& dims, std::uint64_t seed) {
  if (dims.input == 0 || dims.hidden == 0 || dims.joint == 0 || dims.classes == 0) {
    throw std::invalid_argument("init_model: dimensions must be positive");
  }
  AlignmentModel model = zero_model(dims);
  RngStream rng(seed);
  for_each_tensor(model, [&](const TensorInfo& info, std::span<double> v) {
    if (!info.is_weight) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(info.shape[1]));
    for (double& x : v) x = rng.uniform(-bound, bound);
  });
  return model;
}

// ---------------------------------------------------------------------------
// Forward passes

// Intermediate activations of one projector, kept for backprop.
struct ProjectionTrace {
  Matrix input;
  Matrix pre_activation;
  Matrix activation;
  Matrix dropout_mask;
  Matrix dropped;
  Matrix output;
};

inline ProjectionTrace project_traced(const ProjectionHead& head, const Matrix& input, bool training,
                                      RngStream& rng, double dropout_rate) {
  ProjectionTrace t;
  t.input = input;
  t.pre_activation = dense_forward(head.hidden, input);
  t.activation = relu(t.pre_activation);
  auto d = dropout(t.activation, dropout_rate, rng, training);
  t.dropped = std::move(d.output);
  t.dropout_mask = std::move(d.mask);
  t.output = dense_forward(head.output, t.dropped);
  return t;
}

inline Matrix project(const ProjectionHead& head, const Matrix& input, bool training, RngStream& rng,
                      double dropout_rate) {
  const Matrix hidden = relu(dense_forward(head.hidden, input));
  return dense_forward(head.output, dropout(hidden, dropout_rate, rng, training).output);
}

inline Matrix project_image(const AlignmentModel& model, const Matrix& z_img, bool training,
                            RngStream& rng, double dropout_rate = 0.1) {
  return project(model.image, z_img, training, rng, dropout_rate);
}

inline Matrix project_audio(const AlignmentModel& model, const Matrix& z_aud, bool training,
                            RngStream& rng, double dropout_rate = 0.1) {
  return project(model.audio, z_aud, training, rng, dropout_rate);
}

// Inference-mode projection; no randomness is consumed.
inline Matrix project_image(const AlignmentModel& model, const Matrix& z_img) {
  RngStream unused;
  return project(model.image, z_img, false, unused, 0.0);
}

inline Matrix project_audio(const AlignmentModel& model, const Matrix& z_aud) {
  RngStream unused;
  return project(model.audio, z_aud, false, unused, 0.0);
}

inline Matrix classify(const AlignmentModel& model, const Matrix& joint) {
  return dense_forward(model.classifier, joint);
}

// ---------------------------------------------------------------------------
// Training objective

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double dropout_rate = 0.1;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  double lambda_align = 1.0;
  double lambda_cls = 1.0;
  std::size_t hidden_dim = 512;
  std::size_t joint_dim = 256;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw std::invalid_argument("TrainConfig: dropout_rate must be in [0, 1)");
    }
    if (!(lambda_align >= 0.0) || !(lambda_cls >= 0.0)) {
      throw std::invalid_argument("TrainConfig: loss weights must be nonnegative");
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (hidden_dim == 0 || joint_dim == 0) throw std::invalid_argument("TrainConfig: dims must be positive");
  }

  AdamWConfig optimizer() const { return AdamWConfig{lr, weight_decay, 0.9, 0.999, 1e-8}; }
};

struct PairBatch {
  Matrix image;
  Matrix audio;
  std::vector<std::size_t> labels;
};

struct LossTerms {
  double total = 0.0;
  double align = 0.0;  // batch mean of squared distances
  double cls = 0.0;    // batch mean of CE(image) + CE(audio)
};

struct BatchLoss {
  LossTerms loss;
  AlignmentModel grads;  // same layout as the model
};

namespace detail {

inline void backprop_projection(const ProjectionHead& head, const ProjectionTrace& t,
                                const Matrix& grad_output, double dropout_rate,
                                ProjectionHead& grads) {
  auto g2 = dense_backward(head.output, t.dropped, grad_output);
  grads.output.weights = std::move(g2.weights);
  grads.output.bias = std::move(g2.bias);
  const Matrix through_dropout = dropout_backward(t.dropout_mask, dropout_rate, g2.input);
  const Matrix through_relu = relu_backward(t.pre_activation, through_dropout);
  auto g1 = dense_backward(head.hidden, t.input, through_relu);
  grads.hidden.weights = std::move(g1.weights);
  grads.hidden.bias = std::move(g1.bias);
}

}  // namespace detail

// L = lambda_align * mean_b ||g_img - g_aud||^2
//   + lambda_cls   * mean_b (CE(H g_img, y) + CE(H g_aud, y))
// with exact gradients for every model parameter.
inline BatchLoss batch_loss(const AlignmentModel& model, const PairBatch& batch,
                            const TrainConfig& config, bool training, RngStream& rng) {
  const std::size_t n = batch.labels.size();
  if (n == 0) throw std::invalid_argument("batch_loss: empty batch");
  if (batch.image.rows() != n || batch.audio.rows() != n) {
    throw ShapeError("batch_loss: batch rows disagree with label count");
  }
  const double rate = training ? config.dropout_rate : 0.0;
  const ProjectionTrace img = project_traced(model.image, batch.image, training, rng, rate);
  const ProjectionTrace aud = project_traced(model.audio, batch.audio, training, rng, rate);
  const Matrix logits_img = classify(model, img.output);
  const Matrix logits_aud = classify(model, aud.output);

  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t joint = model.dims.joint;
  Matrix grad_img(n, joint);
  Matrix grad_aud(n, joint);
  Matrix grad_logits_img(n, model.dims.classes);
  Matrix grad_logits_aud(n, model.dims.classes);
  LossTerms terms;
  for (std::size_t b = 0; b < n; ++b) {
    const auto pair = pair_alignment_loss(img.output.row(b), aud.output.row(b));
    terms.align += pair.loss;
    for (std::size_t k = 0; k < joint; ++k) {
      grad_img(b, k) = config.lambda_align * inv_n * pair.grad_a[k];
      grad_aud(b, k) = config.lambda_align * inv_n * pair.grad_b[k];
    }
    const auto ce_img = softmax_cross_entropy(logits_img.row(b), batch.labels[b]);
    const auto ce_aud = softmax_cross_entropy(logits_aud.row(b), batch.labels[b]);
    terms.cls += ce_img.loss + ce_aud.loss;
    for (std::size_t c = 0; c < model.dims.classes; ++c) {
      grad_logits_img(b, c) = config.lambda_cls * inv_n * ce_img.grad[c];
      grad_logits_aud(b, c) = config.lambda_cls * inv_n * ce_aud.grad[c];
    }
  }
  terms.align *= inv_n;
  terms.cls *= inv_n;
  terms.total = config.lambda_align * terms.align + config.lambda_cls * terms.cls;

  BatchLoss out{terms, zero_model(model.dims)};
  const auto cls_img = dense_backward(model.classifier, img.output, grad_logits_img);
  const auto cls_aud = dense_backward(model.classifier, aud.output, grad_logits_aud);
  auto cw = out.grads.classifier.weights.values();
  for (std::size_t i = 0; i < cw.size(); ++i) {
    cw[i] = cls_img.weights.values()[i] + cls_aud.weights.values()[i];
  }
  for (std::size_t c = 0; c < model.dims.classes; ++c) {
    out.grads.classifier.bias[c] = cls_img.bias[c] + cls_aud.bias[c];
  }
  for (std::size_t i = 0; i < grad_img.size(); ++i) {
    grad_img.values()[i] += cls_img.input.values()[i];
    grad_aud.values()[i] += cls_aud.input.values()[i];
  }
  detail::backprop_projection(model.image, img, grad_img, rate, out.grads.image);
  detail::backprop_projection(model.audio, aud, grad_aud, rate, out.grads.audio);
  return out;
}

// ---------------------------------------------------------------------------
// Paired data

// Image/audio pairs of one split, aligned row by row in image-pack order.
struct PairSet {
  std::vector<std::string> pair_ids;
  std::vector<std::string> image_ids;
  std::vector<std::string> audio_ids;
  Matrix image;
  Matrix audio;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  PairBatch batch(std::span<const std::size_t> rows) const {
    PairBatch b{gather_rows(image, rows), gather_rows(audio, rows), {}};
    b.labels.reserve(rows.size());
    for (auto r : rows) b.labels.push_back(labels[r]);
    return b;
  }
};

inline PairSet make_pair_set(const EmbeddingPack& images, const EmbeddingPack& audio, Split split) {
  if (images.dim != audio.dim) throw ShapeError("make_pair_set: image and audio dims differ");
  std::unordered_map<std::string, std::size_t> audio_by_pair;
  for (std::size_t i = 0; i < audio.records.size(); ++i) {
    if (audio.records[i].modality == Modality::audio) audio_by_pair.emplace(audio.records[i].pair_id, i);
  }
  std::vector<std::size_t> img_rows;
  std::vector<std::size_t> aud_rows;
  PairSet set;
  set.class_count = std::max(images.class_count, audio.class_count);
  for (std::size_t i = 0; i < images.records.size(); ++i) {
    const auto& r = images.records[i];
    if (r.modality != Modality::image || r.split != split) continue;
    auto it = audio_by_pair.find(r.pair_id);
    if (it == audio_by_pair.end()) {
      throw PackError(PackErrorKind::invariant, "image record '" + r.id + "' has no paired audio");
    }
    img_rows.push_back(i);
    aud_rows.push_back(it->second);
    set.pair_ids.push_back(r.pair_id);
    set.image_ids.push_back(r.id);
    set.audio_ids.push_back(audio.records[it->second].id);
    set.labels.push_back(static_cast<std::size_t>(r.class_id));
  }
  set.image = pack_matrix(images, img_rows);
  set.audio = pack_matrix(audio, aud_rows);
  if (set.empty()) {
    set.image = Matrix(0, images.dim);
    set.audio = Matrix(0, audio.dim);
  }
  return set;
}

}  // namespace onoalign
