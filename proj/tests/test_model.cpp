#include <gtest/gtest.h>

#include "onoalign/model.hpp"
#include "onoalign/retrieval.hpp"
#include "oracles.hpp"

using namespace onoalign;

namespace {

ModelDims small_dims() { return ModelDims{6, 5, 4, 3}; }

Matrix random_matrix(std::size_t rows, std::size_t cols, RngStream& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

PairBatch random_batch(const ModelDims& d, std::size_t n, RngStream& rng) {
  PairBatch b{random_matrix(n, d.input, rng), random_matrix(n, d.input, rng), {}};
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(rng.below(d.classes));
  return b;
}

TrainConfig no_dropout(double la = 1.0, double lc = 1.0) {
  TrainConfig c;
  c.dropout_rate = 0.0;
  c.lambda_align = la;
  c.lambda_cls = lc;
  return c;
}

// Loss as a function of the flattened parameter vector.
auto flat_loss(const AlignmentModel& base, const PairBatch& batch, const TrainConfig& config) {
  return [=](std::span<const double> flat) {
    AlignmentModel m = base;
    assign_parameters(m, flat);
    RngStream rng(0);
    const BatchLoss bl = batch_loss(m, batch, config, false, rng);
    return LossWithGradient{bl.loss.total, flatten_parameters(bl.grads)};
  };
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<std::vector<double>> to_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(to_vec(m.row(r)));
  return rows;
}

}  // namespace

TEST(ModelInit, ParameterLayout) {
  const auto m = init_model(small_dims(), 1);
  std::vector<std::string> names;
  for_each_tensor(m, [&](const TensorInfo& t, std::span<const double>) { names.push_back(t.name); });
  const std::vector<std::string> expected{
      "image_projector.fc1.weight", "image_projector.fc1.bias", "image_projector.fc2.weight",
      "image_projector.fc2.bias",   "audio_projector.fc1.weight", "audio_projector.fc1.bias",
      "audio_projector.fc2.weight", "audio_projector.fc2.bias",   "classifier.weight",
      "classifier.bias"};
  EXPECT_EQ(names, expected);
  EXPECT_EQ(parameter_count(m), 2 * (6 * 5 + 5 + 5 * 4 + 4) + 4 * 3 + 3);
}

TEST(ModelInit, DefaultDimsParameterCount) {
  const auto m = zero_model(ModelDims{});
  EXPECT_EQ(parameter_count(m), 2u * (512 * 512 + 512 + 512 * 256 + 256) + 256 * 50 + 50);
}

TEST(ModelInit, DeterministicBoundedAndSeedSensitive) {
  const auto a = init_model(small_dims(), 42);
  EXPECT_EQ(a, init_model(small_dims(), 42));
  EXPECT_NE(model_checksum(a), model_checksum(init_model(small_dims(), 43)));
  for_each_tensor(a, [](const TensorInfo& t, std::span<const double> v) {
    if (!t.is_weight) {
      for (double x : v) EXPECT_EQ(x, 0.0) << t.name;
      return;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape[1]));
    for (double x : v) {
      EXPECT_LE(std::abs(x), bound) << t.name;
    }
  });
  EXPECT_THROW(init_model(ModelDims{6, 0, 4, 3}, 1), std::invalid_argument);
}

TEST(ModelInit, FlattenAssignRoundTrip) {
  const auto a = init_model(small_dims(), 5);
  auto b = zero_model(small_dims());
  assign_parameters(b, flatten_parameters(a));
  EXPECT_EQ(a, b);
  EXPECT_THROW(assign_parameters(b, std::vector<double>(3)), ShapeError);
}

TEST(Projection, MatchesHandComputation) {
  const auto m = init_model(small_dims(), 9);
  RngStream rng(1);
  const Matrix x = random_matrix(3, 6, rng);
  const Matrix out = project_image(m, x);
  ASSERT_EQ(out.rows(), 3u);
  ASSERT_EQ(out.cols(), 4u);
  for (std::size_t r = 0; r < 3; ++r) {
    auto h = oracle::affine(to_rows(m.image.hidden.weights), m.image.hidden.bias, to_vec(x.row(r)));
    for (double& v : h) v = std::max(v, 0.0);
    const auto y = oracle::affine(to_rows(m.image.output.weights), m.image.output.bias, h);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out(r, k), y[k], 1e-14);
  }
}

TEST(Projection, ModalitiesUseSeparateHeads) {
  auto m = init_model(small_dims(), 9);
  RngStream rng(2);
  const Matrix x = random_matrix(2, 6, rng);
  const Matrix before = project_audio(m, x);
  m.image.hidden.weights(0, 0) += 1.0;
  EXPECT_EQ(project_audio(m, x), before);
  EXPECT_NE(project_image(m, x), project_image(init_model(small_dims(), 9), x));
}

TEST(Projection, ShapeErrors) {
  const auto m = init_model(small_dims(), 9);
  EXPECT_THROW(project_image(m, Matrix(2, 7)), ShapeError);
  EXPECT_THROW(classify(m, Matrix(2, 5)), ShapeError);
}

TEST(Projection, DropoutOnlyInTraining) {
  const auto m = init_model(small_dims(), 9);
  RngStream data(3);
  const Matrix x = random_matrix(8, 6, data);
  RngStream r1(10), r2(10), r3(11);
  const Matrix t1 = project_image(m, x, true, r1, 0.5);
  const Matrix t2 = project_image(m, x, true, r2, 0.5);
  const Matrix t3 = project_image(m, x, true, r3, 0.5);
  EXPECT_EQ(t1, t2);
  EXPECT_NE(t1, t3);
  RngStream r4(10);
  EXPECT_EQ(project_image(m, x, false, r4, 0.5), project_image(m, x));
  RngStream r5(10);
  EXPECT_EQ(project_image(m, x, true, r5, 0.0), project_image(m, x));
}

TEST(Classifier, SharedAcrossModalities) {
  const auto m = init_model(small_dims(), 4);
  RngStream rng(5);
  const Matrix g = random_matrix(2, 4, rng);
  const Matrix logits = classify(m, g);
  ASSERT_EQ(logits.cols(), 3u);
  const auto expect = oracle::affine(to_rows(m.classifier.weights), m.classifier.bias, to_vec(g.row(1)));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(logits(1, c), expect[c], 1e-14);
}

TEST(BatchLoss, IdenticalProjectionsHaveZeroAlignment) {
  auto m = init_model(small_dims(), 4);
  m.audio = m.image;
  RngStream rng(6);
  PairBatch b = random_batch(small_dims(), 4, rng);
  b.audio = b.image;
  RngStream unused;
  const auto bl = batch_loss(m, b, no_dropout(), false, unused);
  EXPECT_EQ(bl.loss.align, 0.0);
  EXPECT_GT(bl.loss.cls, 0.0);
  EXPECT_DOUBLE_EQ(bl.loss.total, bl.loss.cls);
}

TEST(BatchLoss, TermsMatchIndependentComputation) {
  const auto d = small_dims();
  const auto m = init_model(d, 8);
  RngStream rng(7);
  const PairBatch b = random_batch(d, 5, rng);
  RngStream unused;
  const auto cfg = no_dropout(0.7, 1.3);
  const auto bl = batch_loss(m, b, cfg, false, unused);

  const Matrix gi = project_image(m, b.image);
  const Matrix ga = project_audio(m, b.audio);
  double align = 0, cls = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < d.joint; ++k) align += (gi(i, k) - ga(i, k)) * (gi(i, k) - ga(i, k));
    for (const Matrix* g : {&gi, &ga}) {
      const auto logits =
          oracle::affine(to_rows(m.classifier.weights), m.classifier.bias, to_vec(g->row(i)));
      double z = 0;
      for (double l : logits) z += std::exp(l);
      cls += std::log(z) - logits[b.labels[i]];
    }
  }
  align /= 5;
  cls /= 5;
  EXPECT_NEAR(bl.loss.align, align, 1e-12);
  EXPECT_NEAR(bl.loss.cls, cls, 1e-12);
  EXPECT_NEAR(bl.loss.total, 0.7 * align + 1.3 * cls, 1e-12);
}

TEST(BatchLoss, RejectsBadBatches) {
  const auto m = init_model(small_dims(), 8);
  RngStream rng(7);
  PairBatch b = random_batch(small_dims(), 3, rng);
  RngStream unused;
  b.labels.pop_back();
  EXPECT_THROW(batch_loss(m, b, no_dropout(), false, unused), ShapeError);
  b.labels = {0, 1, 3};
  EXPECT_THROW(batch_loss(m, b, no_dropout(), false, unused), std::out_of_range);
  EXPECT_THROW(batch_loss(m, PairBatch{Matrix(0, 6), Matrix(0, 6), {}}, no_dropout(), false, unused),
               std::invalid_argument);
}

TEST(BatchLoss, FullGradientCheckReducedDims) {
  const auto d = small_dims();
  const auto m = init_model(d, 21);
  RngStream rng(22);
  const PairBatch b = random_batch(d, 4, rng);
  const auto r = grad_check_detailed(flat_loss(m, b, no_dropout()), flatten_parameters(m), 1e-6);
  // Units that never activate on this batch give exact zeros and are skipped.
  EXPECT_GT(r.checked, parameter_count(m) / 2);
  EXPECT_LT(r.max_relative_error, 1e-5) << "worst index " << r.worst_index;
}

TEST(BatchLoss, DropoutGradientUsesSameMask) {
  // With a fixed mask the loss is still smooth in the parameters: replaying
  // the same RNG for each evaluation must agree with the analytic gradient.
  const auto d = small_dims();
  const auto m = init_model(d, 23);
  RngStream data(24);
  const PairBatch b = random_batch(d, 4, data);
  TrainConfig cfg = no_dropout();
  cfg.dropout_rate = 0.3;
  auto fn = [&](std::span<const double> flat) {
    AlignmentModel mm = m;
    assign_parameters(mm, flat);
    RngStream rng(77);
    const BatchLoss bl = batch_loss(mm, b, cfg, true, rng);
    return LossWithGradient{bl.loss.total, flatten_parameters(bl.grads)};
  };
  EXPECT_LT(grad_check(fn, flatten_parameters(m)), 1e-5);
}

// Invariant suite, >= 100 random cases each.

// Random instances occasionally produce gradient coordinates near 1e-6
// against an O(1) loss, where central differences at h = 1e-6 carry ~1e-10
// of roundoff. The whole-vector relative error is the stable measure there.
TEST(ModelProperties, GradientExactnessRandomInstances) {
  RngStream rng(300);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelDims d{1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(4), 2 + rng.below(3)};
    const auto m = init_model(d, rng.next_u64());
    const PairBatch b = random_batch(d, 1 + rng.below(4), rng);
    const auto cfg = no_dropout(rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0));
    const auto r = grad_check_detailed(flat_loss(m, b, cfg), flatten_parameters(m), 1e-6);
    ASSERT_LT(r.vector_relative_error, 1e-5) << "trial " << trial;
  }
}

TEST(ModelProperties, PairSymmetry) {
  RngStream rng(301);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.normal() * 10;
      b[i] = rng.normal() * 10;
    }
    ASSERT_EQ(pair_alignment_loss(a, b).loss, pair_alignment_loss(b, a).loss);

    // Same property through the model: swap the heads and the inputs.
    const ModelDims d{1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(4), 2};
    const auto m = init_model(d, rng.next_u64());
    const PairBatch batch = random_batch(d, 1 + rng.below(4), rng);
    AlignmentModel swapped = m;
    std::swap(swapped.image, swapped.audio);
    const PairBatch swapped_batch{batch.audio, batch.image, batch.labels};
    RngStream u1, u2;
    const auto cfg = no_dropout(1.0, 0.0);
    ASSERT_EQ(batch_loss(m, batch, cfg, false, u1).loss.align,
              batch_loss(swapped, swapped_batch, cfg, false, u2).loss.align);
  }
}

TEST(ModelProperties, ClassifierExcludedFromRetrieval) {
  RngStream rng(302);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelDims d{2 + rng.below(4), 2 + rng.below(4), 2 + rng.below(3), 2 + rng.below(3)};
    auto m = init_model(d, rng.next_u64());
    // Nonzero output bias keeps every projection away from the zero vector.
    for (auto* head : {&m.image, &m.audio}) {
      for (double& v : head->output.bias) v = 0.5 + rng.uniform();
    }
    const std::size_t n = 2 + rng.below(6);
    ItemSet images{Modality::image, {}, {}, random_matrix(n, d.input, rng)};
    ItemSet audio{Modality::audio, {}, {}, random_matrix(n, d.input, rng)};
    for (std::size_t i = 0; i < n; ++i) {
      images.ids.push_back("i" + std::to_string(i));
      audio.ids.push_back("a" + std::to_string(i));
      const int c = static_cast<int>(rng.below(d.classes));
      images.classes.push_back(c);
      audio.classes.push_back(c);
    }
    AlignmentModel perturbed = m;
    for (double& w : perturbed.classifier.weights.values()) w += rng.normal();
    for (double& w : perturbed.classifier.bias) w += rng.normal();
    ASSERT_EQ(retrieve(m, images, audio, Direction::i2a), retrieve(perturbed, images, audio, Direction::i2a));
    ASSERT_EQ(retrieve(m, audio, images, Direction::a2i), retrieve(perturbed, audio, images, Direction::a2i));
  }
}

TEST(TrainConfigValidation, RejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lambda_cls = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(PairSetBuild, RowsAlignedByPair) {
  SyntheticSpec spec;
  spec.class_count = 3;
  spec.dim = 5;
  spec.pairs_per_class = 2;
  auto [img, aud] = generate_synthetic(spec);
  std::reverse(aud.records.begin(), aud.records.end());
  const auto set = make_pair_set(img, aud, Split::train);
  ASSERT_EQ(set.size(), 6u);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& a = *std::find_if(aud.records.begin(), aud.records.end(),
                                  [&](const auto& r) { return r.id == set.audio_ids[i]; });
    EXPECT_EQ(a.pair_id, set.pair_ids[i]);
    EXPECT_EQ(static_cast<std::size_t>(a.class_id), set.labels[i]);
    EXPECT_EQ(set.audio(i, 0), static_cast<double>(a.vector[0]));
  }
  EXPECT_TRUE(make_pair_set(img, aud, Split::test).empty());
}
