#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace xbarsim;
namespace ts = testing_support;

namespace {

NetworkModel identity_model() {
  NetworkModel m;
  m.name = "id";
  m.input_shape = {1, 1, 1};
  m.num_classes = 1;
  LayerDesc l;
  l.name = "conv";
  l.kind = LayerKind::Conv;
  l.in_channels = l.out_channels = 1;
  l.input_spec = l.output_spec = {8, 2, true};
  l.weight_spec = {8, 0, true};
  l.weights = {{1, 1, 1, 1}, l.weight_spec, {1}};
  m.layers.push_back(l);
  m.validate();
  return m;
}

void expect_error(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
    ADD_FAILURE() << "expected error containing '" << needle << "'";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(LoadModel, ToyFixture) {
  const auto m = load_model(ts::toy_model_dir());
  ASSERT_EQ(m.layers.size(), 2u);
  EXPECT_EQ(m.layers[0].kind, LayerKind::Conv);
  EXPECT_EQ(m.layers[1].kind, LayerKind::FC);
  EXPECT_EQ(m.shapes[1], (Shape3{4, 6, 6}));
  EXPECT_EQ(m.num_classes, 3);
  EXPECT_TRUE(inputs_nonnegative(m, 0));
  EXPECT_TRUE(inputs_nonnegative(m, 1));
}

TEST(LoadModel, MissingTensorFile) {
  const auto dir = ts::temp_dir("missing-tensor");
  std::filesystem::copy(ts::toy_model_dir(), dir, std::filesystem::copy_options::recursive);
  std::filesystem::remove(dir / "fc1_w.bin");
  expect_error([&] { load_model(dir); }, "missing tensor");
}

TEST(LoadModel, MissingAndMalformedManifest) {
  const auto dir = ts::temp_dir("bad-manifest");
  expect_error([&] { load_model(dir); }, "missing manifest");
  std::ofstream(dir / "manifest.json") << "{ not json";
  expect_error([&] { load_model(dir); }, "malformed manifest");
}

TEST(LoadModel, WeightOutOfRange) {
  auto m = identity_model();
  m.layers[0].weight_spec = m.layers[0].weights.spec = {16, 0, true};
  m.layers[0].input_spec = m.layers[0].output_spec = {16, 2, true};
  const auto dir = ts::temp_dir("weight-range");
  save_model(m, dir);
  // rewrite the weight tensor as int32 holding 40000
  auto j = read_json_file(dir / "manifest.json");
  j["layers"][0]["weights_dtype"] = "int32";
  write_json_file(dir / "manifest.json", j);
  const std::int32_t big = 40000;
  std::ofstream(dir / j["layers"][0]["weights"].get<std::string>(), std::ios::binary)
      .write(reinterpret_cast<const char*>(&big), 4);
  expect_error([&] { load_model(dir); }, "weight out of range");
}

TEST(LoadModel, TruncatedTensor) {
  const auto dir = ts::temp_dir("short-tensor");
  std::filesystem::copy(ts::toy_model_dir(), dir, std::filesystem::copy_options::recursive);
  std::ofstream(dir / "conv1_w.bin", std::ios::binary) << "abc";
  expect_error([&] { load_model(dir); }, "shape mismatch");
}

TEST(LoadModel, SaveRoundTrip) {
  const auto m = load_model(ts::toy_model_dir());
  const auto dir = ts::temp_dir("roundtrip");
  save_model(m, dir);
  const auto back = load_model(dir);
  ASSERT_EQ(back.layers.size(), m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    EXPECT_EQ(back.layers[i].weights.data, m.layers[i].weights.data);
    EXPECT_EQ(back.layers[i].bias.data, m.layers[i].bias.data);
    EXPECT_EQ(back.layers[i].output_spec, m.layers[i].output_spec);
  }
}

TEST(Validate, ShapeAndSpecErrors) {
  auto m = load_model(ts::toy_model_dir());
  auto bad = m;
  bad.layers[1].in_channels = 35;
  expect_error([&] { bad.validate(); }, "shape mismatch");
  bad = m;
  bad.layers[1].input_spec.frac_bits = 3;
  expect_error([&] { bad.validate(); }, "input spec differs");
  bad = m;
  bad.num_classes = 4;
  expect_error([&] { bad.validate(); }, "class count");
  bad = m;
  bad.layers[0].weights.data.pop_back();
  expect_error([&] { bad.validate(); }, "shape mismatch");
}

TEST(InferExact, IdentityKernel) {
  const auto m = identity_model();
  QTensor in = QTensor::zeros({1, 1, 1}, m.input_spec());
  in.data[0] = 7;
  EXPECT_EQ(infer_exact(m, in).logits, std::vector<std::int32_t>{7});
}

TEST(InferExact, ReluOutputsNonNegative) {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = toy_model(seed, {8, 6, 2, true, true});
    const auto res = infer_exact(m, random_input(m, rng));
    for (auto v : res.activations[0].data) EXPECT_GE(v, 0);
  }
}

TEST(InferExact, FixtureMatchesScalarReference) {
  const auto m = load_model(ts::toy_model_dir());
  const auto ds = load_dataset(ts::toy_dataset());
  const auto images = prepare(ds, m);
  for (const auto& img : images) {
    const auto got = infer_exact(m, img.pixels).logits;
    const auto want = ts::ref_infer(m, img.pixels.data);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k], want[k]);
  }
}

TEST(InferExact, PoolingModelsMatchScalarReference) {
  Rng rng(11);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto m = toy_model(seed, {seed % 2 ? 16 : 8, 7, 3, seed % 3 != 0, true});
    const auto in = random_input(m, rng);
    const auto got = infer_exact(m, in).logits;
    const auto want = ts::ref_infer(m, in.data);
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k], want[k]);
  }
}

TEST(InferExact, AveragePoolRoundsHalfEven) {
  NetworkModel m;
  m.name = "pool";
  m.input_shape = {1, 2, 2};
  m.num_classes = 1;
  LayerDesc l;
  l.name = "avg";
  l.kind = LayerKind::AvgPool;
  l.kernel_h = l.kernel_w = 2;
  l.stride = 2;
  l.input_spec = l.output_spec = {8, 0, true};
  m.layers.push_back(l);
  m.validate();
  QTensor in = QTensor::zeros({1, 2, 2}, l.input_spec);
  in.data = {1, 2, 3, 4};  // 2.5 -> 2
  EXPECT_EQ(infer_exact(m, in).logits[0], 2);
  in.data = {1, 2, 3, 8};  // 3.5 -> 4
  EXPECT_EQ(infer_exact(m, in).logits[0], 4);
}

TEST(RequantizeModel, DropsLowBits) {
  const auto m = toy_model(1, {16, 6, 2, true, false});
  const auto r = requantize_model(m, 8);
  EXPECT_EQ(r.layers[0].weight_spec.bit_width, 8);
  EXPECT_EQ(r.layers[0].weight_spec.frac_bits, m.layers[0].weight_spec.frac_bits - 8);
  for (std::size_t k = 0; k < m.layers[0].weights.data.size(); ++k)
    EXPECT_EQ(r.layers[0].weights.data[k], shift_round_half_even(m.layers[0].weights.data[k], 8));
  EXPECT_THROW(requantize_model(m, 1), Error);
}
