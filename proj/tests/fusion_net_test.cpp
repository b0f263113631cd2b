#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "avdd/fusion_net.hpp"
#include "gradient_oracle.hpp"

namespace avdd {
namespace {

ModelConfig tiny_config(AttentionPlacement placement = AttentionPlacement::parse("ls"), bool double_fc = true) {
  ModelConfig cfg;
  cfg.sources = {{"v0", Modality::visual, 5}, {"v1", Modality::visual, 3}, {"a0", Modality::audio, 4}};
  cfg.num_classes = 3;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.fc_hidden = 6;
  cfg.es_chunk_tokens = 2;
  cfg.attention = placement;
  cfg.double_fc = double_fc;
  cfg.seed = 7;
  return cfg;
}

TEST(ModelConfigTest, DefaultsAndPaperSources) {
  ModelConfig cfg;
  cfg.sources = default_sources();
  EXPECT_EQ(cfg.d_model, 256u);
  EXPECT_EQ(cfg.num_heads, 4u);
  EXPECT_TRUE(cfg.attention.late);
  EXPECT_FALSE(cfg.attention.early);
  auto model = FusionModel<float>::init(cfg);
  EXPECT_TRUE(model.audit_shapes().empty());
}

TEST(ModelConfigTest, RejectsIndivisibleHeads) {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 250;
  cfg.num_heads = 4;
  EXPECT_THROW(FusionModel<float>::init(cfg), ContractError);
}

TEST(ModelConfigTest, RejectsBadDropoutAndChunking) {
  ModelConfig cfg = tiny_config();
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = tiny_config(AttentionPlacement::parse("es"));
  cfg.es_chunk_tokens = 3;
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(AttentionPlacementTest, ParsesEveryVariant) {
  auto p = AttentionPlacement::parse("es+ms+ls");
  EXPECT_TRUE(p.early && p.modality && p.late);
  EXPECT_TRUE(AttentionPlacement::parse("ns").none());
  EXPECT_EQ(AttentionPlacement::parse("ls+es").to_string(), "es+ls");
  EXPECT_THROW(AttentionPlacement::parse("xs"), ContractError);
  EXPECT_THROW(AttentionPlacement::parse("ls+ls"), ContractError);
  EXPECT_THROW(AttentionPlacement::parse(""), ContractError);
}

TEST(FusionModelTest, InitIsDeterministic) {
  auto a = FusionModel<float>::init(tiny_config());
  auto b = FusionModel<float>::init(tiny_config());
  EXPECT_EQ(export_weights(a), export_weights(b));
  auto cfg = tiny_config();
  cfg.seed = 8;
  EXPECT_NE(export_weights(a), export_weights(FusionModel<float>::init(cfg)));
}

TEST(FusionModelTest, ZeroWeightsWithClassifierBias) {
  ModelConfig cfg = tiny_config(AttentionPlacement{}, false);
  auto params = Parameters<double>::zeros(cfg);
  params.classifier.bias << 1.0, 0.0, 0.0;
  FusionModel<double> model(cfg, params);
  std::vector<double> row(cfg.input_width(), 0.25);
  auto trace = model.forward(std::span<const double>(row), false);
  const double e = std::exp(1.0);
  EXPECT_NEAR(trace.probabilities(0, 0), e / (e + 2), 1e-12);
  EXPECT_NEAR(trace.probabilities(0, 1), 1 / (e + 2), 1e-12);
  EXPECT_NEAR(trace.probabilities(0, 0), 0.5761, 1e-4);
  EXPECT_NEAR(trace.probabilities(0, 2), 0.2119, 1e-4);
}

TEST(FusionModelTest, InferenceIsRepeatable) {
  for (const auto& placement : AttentionPlacement::all()) {
    auto model = FusionModel<float>::init(tiny_config(placement));
    std::mt19937_64 rng(3);
    Matrix<float> x = testing::random_batch(rng, 4, model.config().input_width()).cast<float>();
    auto p1 = model.forward(x, false, 1).probabilities;
    auto p2 = model.forward(x, false, 99).probabilities;
    EXPECT_EQ(p1, p2) << placement.to_string();
  }
}

TEST(FusionModelTest, SingletonAttentionGroupIsIdentityMix) {
  // One audio source: the modality stage attends over a single token.
  auto model = FusionModel<double>::init(tiny_config(AttentionPlacement::parse("ms")));
  std::mt19937_64 rng(11);
  testing::jitter_parameters(model, rng);
  Matrix<double> x = testing::random_batch(rng, 1, model.config().input_width());
  auto trace = model.forward(x, false);
  ASSERT_TRUE(trace.modality.has_value());
  const auto& cache = *trace.modality;
  // groups: {v0, v1}, {a0}; 2 heads each
  ASSERT_EQ(cache.weights.size(), 4u);
  EXPECT_EQ(cache.weights[2](0, 0), 1.0);
  EXPECT_EQ(cache.weights[3](0, 0), 1.0);
  const auto& w = *model.params().modality;
  Matrix<double> token = cache.input.row(2);
  Matrix<double> expected = token + w.output.apply(w.value.apply(token));
  Matrix<double> out = detail::reshape(trace.features, 3, 8).row(2);
  EXPECT_LT((out - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FusionModelTest, CrossEntropyLimits) {
  ModelConfig cfg = tiny_config(AttentionPlacement{}, false);
  FusionModel<double> uniform(cfg, Parameters<double>::zeros(cfg));
  Matrix<double> x = Matrix<double>::Ones(2, static_cast<Eigen::Index>(cfg.input_width()));
  std::vector<std::size_t> labels{0, 2};
  EXPECT_NEAR(uniform.loss(x, labels, false), std::log(3.0), 1e-12);
  EXPECT_NEAR(uniform.loss(x, labels, false), 1.0986, 1e-4);

  auto confident = Parameters<double>::zeros(cfg);
  confident.classifier.bias << 60.0, 0.0, 0.0;
  FusionModel<double> sure(cfg, confident);
  std::vector<std::size_t> zeros{0, 0};
  EXPECT_LT(sure.loss(x, zeros, false), 1e-20);
}

TEST(FusionModelTest, RejectsBadInputs) {
  auto model = FusionModel<double>::init(tiny_config());
  Matrix<double> wrong = Matrix<double>::Zero(1, 3);
  EXPECT_THROW(model.forward(wrong, false), ContractError);
  Matrix<double> nan = Matrix<double>::Zero(1, static_cast<Eigen::Index>(model.config().input_width()));
  nan(0, 0) = std::nan("");
  EXPECT_THROW(model.forward(nan, false), ContractError);
  Matrix<double> empty(0, static_cast<Eigen::Index>(model.config().input_width()));
  std::vector<std::size_t> none;
  EXPECT_THROW(model.loss_and_gradients(empty, none, false), ContractError);
  Matrix<double> one = Matrix<double>::Zero(1, static_cast<Eigen::Index>(model.config().input_width()));
  std::vector<std::size_t> bad{5};
  EXPECT_THROW(model.loss_and_gradients(one, bad, false), ContractError);
}

TEST(FusionModelTest, SoftmaxAndAttentionRowsAreStochastic) {
  std::mt19937_64 rng(5);
  for (const auto& placement : AttentionPlacement::all()) {
    auto model = FusionModel<double>::init(tiny_config(placement));
    testing::jitter_parameters(model, rng, 0.3);
    Matrix<double> x = testing::random_batch(rng, 6, model.config().input_width());
    auto trace = model.forward(x, true, 17);
    for (Eigen::Index r = 0; r < trace.probabilities.rows(); ++r) {
      EXPECT_NEAR(trace.probabilities.row(r).sum(), 1.0, 1e-6);
      EXPECT_GT(trace.probabilities.row(r).minCoeff(), 0.0);
      EXPECT_LT(trace.probabilities.row(r).maxCoeff(), 1.0);
    }
    for (const auto* cache : {&trace.early, &trace.modality, &trace.late}) {
      if (!cache->has_value()) continue;
      for (const auto& a : (*cache)->weights) {
        for (Eigen::Index r = 0; r < a.rows(); ++r) EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-6);
      }
    }
  }
}

TEST(FusionModelTest, GradientsMatchFiniteDifferencesOnFixedConfig) {
  std::mt19937_64 rng(21);
  for (const auto& placement : AttentionPlacement::all()) {
    for (bool double_fc : {false, true}) {
      auto model = FusionModel<double>::init(tiny_config(placement, double_fc));
      testing::jitter_parameters(model, rng);
      Matrix<double> x = testing::random_batch(rng, 3, model.config().input_width());
      std::vector<std::size_t> labels{0, 1, 2};
      auto check = testing::check_gradients(model, x, labels, true, 1234);
      EXPECT_LT(check.max_relative_error, 1e-4)
          << placement.to_string() << (double_fc ? " double" : " single") << " worst " << check.worst_parameter;
      EXPECT_LT(check.kink_skips, check.entries / 20);
    }
  }
}

TEST(FusionModelTest, GradientsAreSumOfPerSampleGradients) {
  auto model = FusionModel<double>::init(tiny_config(AttentionPlacement::parse("es+ms+ls")));
  std::mt19937_64 rng(8);
  Matrix<double> x = testing::random_batch(rng, 2, model.config().input_width());
  std::vector<std::size_t> labels{1, 2};
  auto both = model.loss_and_gradients(x, labels, false).gradients;
  Matrix<double> x0 = x.row(0);
  Matrix<double> x1 = x.row(1);
  std::vector<std::size_t> l0{1};
  std::vector<std::size_t> l1{2};
  auto g0 = model.loss_and_gradients(x0, l0, false).gradients;
  auto g1 = model.loss_and_gradients(x1, l1, false).gradients;
  EXPECT_LT((both.classifier.weight - 0.5 * (g0.classifier.weight + g1.classifier.weight)).cwiseAbs().maxCoeff(),
            1e-12);
  EXPECT_LT((both.projections[0].weight - 0.5 * (g0.projections[0].weight + g1.projections[0].weight))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(FusionModelTest, DropoutPreservesExpectedActivation) {
  ModelConfig cfg = tiny_config(AttentionPlacement::parse("ls"));
  cfg.fc_hidden = 8;
  auto model = FusionModel<double>::init(cfg);
  std::mt19937_64 rng(2);
  testing::jitter_parameters(model, rng, 0.2);
  model.params().hidden->bias.setConstant(0.5);  // keep every unit active
  Matrix<double> x = testing::random_batch(rng, 1, cfg.input_width());
  const Matrix<double> clean = model.forward(x, false).hidden;

  constexpr int kSeeds = 20000;
  Matrix<double> sum = Matrix<double>::Zero(1, clean.cols());
  for (int s = 0; s < kSeeds; ++s) sum += model.forward(x, true, mix_seed(99, static_cast<std::uint64_t>(s))).hidden;
  const double p = cfg.dropout_rate;
  for (Eigen::Index j = 0; j < clean.cols(); ++j) {
    const double mean = sum(0, j) / kSeeds;
    const double sigma = std::abs(clean(0, j)) * std::sqrt(p / (1 - p)) / std::sqrt(double(kSeeds));
    EXPECT_LE(std::abs(mean - clean(0, j)), 3 * sigma + 1e-12) << "unit " << j;
  }
}

TEST(WeightsTextTest, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  for (const auto& placement : AttentionPlacement::all()) {
    auto model = FusionModel<float>::init(tiny_config(placement));
    const auto text = export_weights(model);
    auto back = import_weights<float>(model.config(), text);
    EXPECT_EQ(export_weights(back), text);
    Matrix<float> x = testing::random_batch(rng, 2, model.config().input_width()).cast<float>();
    EXPECT_EQ(model.predict_proba(x), back.predict_proba(x));
  }
}

TEST(WeightsTextTest, TruncatedArrayIsAFormatError) {
  auto model = FusionModel<float>::init(tiny_config());
  auto text = export_weights(model);
  text.resize(text.size() - 40);
  EXPECT_THROW(import_weights<float>(model.config(), text), FormatError);
}

TEST(WeightsTextTest, ShapeMismatchNamesTheParameter) {
  auto model = FusionModel<float>::init(tiny_config());
  auto cfg = model.config();
  cfg.d_model = 12;
  try {
    import_weights<float>(cfg, export_weights(model));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("projection.v0.weight"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace avdd
