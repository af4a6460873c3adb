#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace xbarsim;
namespace ts = testing_support;

namespace {

const std::vector<std::int32_t> kFig2Weights{4, -8, -5};

// Model with a single 1x1 conv over `c` unsigned 4-bit input channels.
NetworkModel one_layer(std::vector<std::int32_t> weights, FixedSpec in = {4, 0, false}) {
  NetworkModel m;
  m.name = "one";
  m.input_shape = {static_cast<int>(weights.size()), 2, 2};
  m.num_classes = 4;
  LayerDesc l;
  l.name = "conv";
  l.kind = LayerKind::Conv;
  l.in_channels = static_cast<int>(weights.size());
  l.out_channels = 1;
  l.input_spec = in;
  l.output_spec = {16, 0, true};
  l.weight_spec = {8, 0, true};
  l.weights = {{1, weights.size(), 1, 1}, l.weight_spec, std::move(weights)};
  m.layers.push_back(l);
  m.validate();
  return m;
}

}  // namespace

TEST(Bounds, WorstCaseExamples) {
  const auto s = kernel_sums(kFig2Weights);
  EXPECT_EQ(s.sum_pos, 4);
  EXPECT_EQ(s.sum_neg, -13);
  EXPECT_EQ(worst_case_bounds(s, 1, true), (IterationBound{8, -26}));
  EXPECT_EQ(worst_case_bounds(s, 1, false), (IterationBound{34, -34}));
  EXPECT_EQ(per_iteration_bounds(s, nullptr, 1, BoundsMode::WorstCase, true), (IterationBound{8, -26}));
}

TEST(Bounds, StatisticalExample) {
  const auto s = kernel_sums(kFig2Weights);
  LayerBitProbability p{0, "l", 4, true, std::vector<ProbSpan>(4, ProbSpan{0.4, 0.3, 0.5}), std::vector<ProbSpan>(4)};
  const auto b = per_iteration_bounds(s, &p, 0, BoundsMode::Statistical, true);
  EXPECT_EQ(b.max, -2);  // 4*0.5 - 13*0.3 = -1.9, away from zero
  EXPECT_EQ(b.min, -6);  // 4*0.3 - 13*0.5 = -5.3, away from zero
  EXPECT_THROW(per_iteration_bounds(s, nullptr, 0, BoundsMode::Statistical, true), Error);
  EXPECT_THROW(per_iteration_bounds(s, &p, 0, BoundsMode::Oracle, true), Error);
}

TEST(Bounds, RoundAwayFromZeroSnapsExactProducts) {
  EXPECT_EQ(round_away_from_zero(2.0000000000001), 2);
  EXPECT_EQ(round_away_from_zero(2.1), 3);
  EXPECT_EQ(round_away_from_zero(-2.1), -3);
  EXPECT_EQ(round_away_from_zero(0.0), 0);
}

TEST(Lut, SingleWeightGeometricTails) {
  const auto row = build_channel_lut(std::vector<std::int32_t>{1}, 4, BoundsMode::WorstCase, true, nullptr);
  EXPECT_EQ(row.max, (std::vector<std::int64_t>{7, 3, 1}));
  EXPECT_EQ(row.min, (std::vector<std::int64_t>{0, 0, 0}));
}

TEST(Lut, Fig2KernelWorstCase) {
  const auto row = build_channel_lut(kFig2Weights, 4, BoundsMode::WorstCase, true, nullptr);
  EXPECT_EQ(row.max, (std::vector<std::int64_t>{28, 12, 4}));
  EXPECT_EQ(row.min, (std::vector<std::int64_t>{-91, -39, -13}));
}

TEST(Lut, ZeroKernel) {
  const auto row = build_channel_lut(std::vector<std::int32_t>{0, 0, 0}, 8, BoundsMode::WorstCase, false, nullptr);
  for (std::size_t t = 0; t < 7; ++t) {
    EXPECT_EQ(row.max[t], 0);
    EXPECT_EQ(row.min[t], 0);
  }
}

TEST(Lut, BuildForModelAndCheck) {
  const auto m = load_model(ts::toy_model_dir());
  const auto lut = build_lut(m, nullptr, BoundsMode::WorstCase);
  ASSERT_EQ(lut.layers.size(), 2u);
  EXPECT_EQ(lut.layers[0].channels.size(), 4u);
  EXPECT_EQ(lut.layers[0].channels[0].max.size(), 7u);
  EXPECT_NO_THROW(check_lut(lut, m));
  auto broken = lut;
  broken.layers[1].channels.pop_back();
  EXPECT_THROW(check_lut(broken, m), Error);
  EXPECT_THROW(build_lut(m, nullptr, BoundsMode::Statistical), Error);
  EXPECT_THROW(build_lut(m, nullptr, BoundsMode::Oracle), Error);
}

TEST(Lut, FullSpanStatisticalEqualsWorstCase) {
  std::vector<NetworkModel> models{load_model(ts::toy_model_dir())};
  for (std::uint64_t seed = 0; seed < 6; ++seed) models.push_back(toy_model(seed, {8, 6, 2, seed % 2 == 0, seed % 3 == 0}));
  for (const auto& m : models) {
    const auto probs = full_span_probabilities(m);
    const auto stat = build_lut(m, &probs, BoundsMode::Statistical);
    const auto worst = build_lut(m, nullptr, BoundsMode::WorstCase);
    ASSERT_EQ(stat.layers.size(), worst.layers.size());
    for (std::size_t k = 0; k < stat.layers.size(); ++k) EXPECT_EQ(stat.layers[k].channels, worst.layers[k].channels);
  }
}

TEST(Probabilities, AllZeroActivations) {
  const auto m = one_layer({1, 2});
  std::vector<LabeledImage> images(3, {QTensor::zeros(m.input_shape.dims(), m.input_spec()), 0});
  const auto p = extract_probabilities(m, images, 1);
  ASSERT_EQ(p.layers.size(), 1u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(p.layers[0].p_plus[i].max, 0.0);
    EXPECT_EQ(p.layers[0].p_minus[i].max, 0.0);
  }
}

TEST(Probabilities, UniformFourBitMsbIsHalf) {
  // 16 inputs per image covering 0..15 once each
  const auto m = one_layer({1, 1, 1, 1});
  std::vector<LabeledImage> images;
  for (int shift = 0; shift < 4; ++shift) {
    QTensor t = QTensor::zeros(m.input_shape.dims(), m.input_spec());
    for (int v = 0; v < 16; ++v) t.data[static_cast<std::size_t>(v)] = (v + shift * 5) % 16;
    images.push_back({t, 0});
  }
  const auto p = extract_probabilities(m, images, 2);
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(p.layers[0].p_plus[i].avg, 0.5);
    EXPECT_DOUBLE_EQ(p.layers[0].p_plus[i].min, 0.5);
    EXPECT_DOUBLE_EQ(p.layers[0].p_plus[i].max, 0.5);
  }
}

TEST(Probabilities, NeedsTwoImagesAndIsThreadIndependent) {
  const auto m = load_model(ts::toy_model_dir());
  const auto images = prepare(load_dataset(ts::toy_dataset()), m);
  EXPECT_THROW(extract_probabilities(m, std::span(images).first(1), 1), Error);
  const auto a = to_json(extract_probabilities(m, images, 1)).dump();
  const auto b = to_json(extract_probabilities(m, images, 4)).dump();
  EXPECT_EQ(a, b);
}

TEST(Json, ProbabilityAndLutRoundTrip) {
  const auto m = load_model(ts::toy_model_dir());
  const auto images = prepare(load_dataset(ts::toy_dataset()), m);
  const auto probs = extract_probabilities(m, images, 2);
  const auto back = probabilities_from_json(nlohmann::json::parse(to_json(probs).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(probs).dump());
  const auto lut = build_lut(m, &probs, BoundsMode::Statistical);
  const auto lut_back = lut_from_json(nlohmann::json::parse(to_json(lut).dump()));
  EXPECT_EQ(lut_back.mode, BoundsMode::Statistical);
  ASSERT_EQ(lut_back.layers.size(), lut.layers.size());
  for (std::size_t k = 0; k < lut.layers.size(); ++k) EXPECT_EQ(lut_back.layers[k], lut.layers[k]);
}
