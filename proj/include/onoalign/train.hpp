// Mini-batch AdamW training of the alignment model with validation-based
// checkpoint selection and early stopping.
#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "json.hpp"
#include "onoalign/metrics.hpp"
#include "onoalign/model.hpp"
#include "onoalign/retrieval.hpp"

namespace onoalign {

struct EpochRecord {
  double train_loss = 0.0;
  double train_align = 0.0;
  double train_cls = 0.0;
  double val_map_i2a = std::numeric_limits<double>::quiet_NaN();
  double val_map_a2i = std::numeric_limits<double>::quiet_NaN();
  double val_map = std::numeric_limits<double>::quiet_NaN();  // mean of both directions

  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> best_epoch;  // 0-based; nullopt when no epoch ran
  std::uint64_t model_checksum = 0;
};

struct TrainResult {
  AlignmentModel model;
  TrainReport report;
};

inline ItemSet image_items(const PairSet& pairs) {
  ItemSet s{Modality::image, pairs.image_ids, {}, pairs.image};
  for (auto l : pairs.labels) s.classes.push_back(static_cast<int>(l));
  return s;
}

inline ItemSet audio_items(const PairSet& pairs) {
  ItemSet s{Modality::audio, pairs.audio_ids, {}, pairs.audio};
  for (auto l : pairs.labels) s.classes.push_back(static_cast<int>(l));
  return s;
}

// Validation mAP (percent) in both directions.
inline std::pair<double, double> validation_map(const AlignmentModel& model, const PairSet& val) {
  const ItemSet img = image_items(val);
  const ItemSet aud = audio_items(val);
  const double i2a = evaluate(retrieve(model, img, aud, Direction::i2a)).map;
  const double a2i = evaluate(retrieve(model, aud, img, Direction::a2i)).map;
  return {i2a, a2i};
}

namespace detail {

inline std::vector<ParamSlot> param_slots(AlignmentModel& model, const AlignmentModel& grads) {
  std::vector<ParamSlot> slots;
  for_each_tensor(model, [&](const TensorInfo& info, std::span<double> v) {
    slots.push_back({v, {}, info.is_weight});
  });
  std::size_t i = 0;
  for_each_tensor(grads, [&](const TensorInfo&, std::span<const double> g) { slots[i++].grads = g; });
  return slots;
}

}  // namespace detail

inline ModelDims model_dims_for(const PairSet& train_pairs, const TrainConfig& config) {
  return ModelDims{train_pairs.image.cols(), config.hidden_dim, config.joint_dim, train_pairs.class_count};
}

// Trains from `initial` (or a fresh init_model(dims, seed)). Each epoch
// shuffles the training pairs with a seeded stream, runs batch_size-sized
// mini-batches (the last one may be partial) and scores the validation
// pairs with dropout off. The model with the best validation mean mAP is
// returned; training stops after `patience` epochs without improvement.
// With an empty validation set the last epoch's model is returned.
inline TrainResult train(const PairSet& train_pairs, const PairSet& val_pairs, const TrainConfig& config,
                         std::optional<AlignmentModel> initial = std::nullopt) {
  config.validate();
  if (train_pairs.empty()) throw std::invalid_argument("train: empty training set");
  if (train_pairs.image.cols() != train_pairs.audio.cols()) {
    throw ShapeError("train: image and audio widths differ");
  }
  if (!val_pairs.empty() && val_pairs.image.cols() != train_pairs.image.cols()) {
    throw ShapeError("train: validation width differs from training width");
  }
  for (auto l : train_pairs.labels) {
    if (l >= train_pairs.class_count) throw std::out_of_range("train: label outside class range");
  }

  AlignmentModel model = initial ? std::move(*initial) : init_model(model_dims_for(train_pairs, config), config.seed);
  if (model.dims.input != train_pairs.image.cols() || model.dims.classes < train_pairs.class_count) {
    throw ShapeError("train: model dims do not fit the training data");
  }

  TrainReport report;
  report.seed = config.seed;
  AlignmentModel best = model;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  AdamWState optimizer;
  const AdamWConfig opt = config.optimizer();
  const RngStream root(config.seed);

  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    RngStream shuffle_rng = root.fork(2 * epoch + 1);
    RngStream dropout_rng = root.fork(2 * epoch + 2);
    shuffle(order, shuffle_rng);

    EpochRecord rec;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto rows = std::span<const std::size_t>(order).subspan(start, end - start);
      const PairBatch batch = train_pairs.batch(rows);
      const BatchLoss loss = batch_loss(model, batch, config, true, dropout_rng);
      const double weight = static_cast<double>(rows.size());
      rec.train_loss += weight * loss.loss.total;
      rec.train_align += weight * loss.loss.align;
      rec.train_cls += weight * loss.loss.cls;
      const auto slots = detail::param_slots(model, loss.grads);
      adamw_step(slots, optimizer, opt);
    }
    const double n = static_cast<double>(order.size());
    rec.train_loss /= n;
    rec.train_align /= n;
    rec.train_cls /= n;

    if (val_pairs.empty()) {
      report.epochs.push_back(rec);
      best = model;
      report.best_epoch = epoch;
      continue;
    }
    std::tie(rec.val_map_i2a, rec.val_map_a2i) = validation_map(model, val_pairs);
    rec.val_map = 0.5 * (rec.val_map_i2a + rec.val_map_a2i);
    report.epochs.push_back(rec);
    if (rec.val_map > best_score) {
      best_score = rec.val_map;
      best = model;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  report.model_checksum = model_checksum(best);
  return {std::move(best), std::move(report)};
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["dropout_rate"] = c.dropout_rate;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["lambda_align"] = c.lambda_align;
  j["lambda_cls"] = c.lambda_cls;
  j["hidden_dim"] = c.hidden_dim;
  j["joint_dim"] = c.joint_dim;
  return j;
}

inline nlohmann::ordered_json to_json(const TrainReport& r) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v); };
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    nlohmann::ordered_json x;
    x["train_loss"] = e.train_loss;
    x["train_align"] = e.train_align;
    x["train_cls"] = e.train_cls;
    x["val_map_i2a"] = num(e.val_map_i2a);
    x["val_map_a2i"] = num(e.val_map_a2i);
    x["val_map"] = num(e.val_map);
    epochs.push_back(std::move(x));
  }
  j["epochs"] = std::move(epochs);
  j["best_epoch"] = r.best_epoch ? nlohmann::ordered_json(*r.best_epoch) : nlohmann::ordered_json(nullptr);
  j["model_checksum"] = to_hex64(r.model_checksum);
  return j;
}

}  // namespace onoalign
