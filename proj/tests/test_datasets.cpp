#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace xbarsim;
namespace ts = testing_support;

TEST(Mnist, ReadsFixture) {
  const auto ds = load_mnist_raw(ts::fixtures() / "toy-images.idx3-ubyte", ts::fixtures() / "toy-labels.idx1-ubyte");
  EXPECT_EQ(ds.size(), 24u);
  EXPECT_EQ(ds.shape, (Shape3{1, 8, 8}));
  for (const auto& p : ds.pixels) EXPECT_EQ(p.size(), 64u);
  for (int l : ds.labels) EXPECT_TRUE(l >= 0 && l < 3);
  // header is 16 bytes, first image starts right after it
  const auto raw = ts::slurp(ts::fixtures() / "toy-images.idx3-ubyte");
  EXPECT_EQ(ds.pixels[0][0], static_cast<std::uint8_t>(raw[16]));
  EXPECT_EQ(ds.pixels[23][63], static_cast<std::uint8_t>(raw[16 + 24 * 64 - 1]));
}

TEST(Mnist, WrongMagic) {
  const auto dir = ts::temp_dir("idx-magic");
  auto bytes = ts::slurp(ts::fixtures() / "toy-images.idx3-ubyte");
  bytes[3] = 0x01;
  std::ofstream(dir / "img", std::ios::binary) << bytes;
  EXPECT_THROW(load_mnist_raw(dir / "img", ts::fixtures() / "toy-labels.idx1-ubyte"), Error);
}

TEST(Mnist, Truncated) {
  const auto dir = ts::temp_dir("idx-short");
  auto bytes = ts::slurp(ts::fixtures() / "toy-images.idx3-ubyte");
  bytes.resize(bytes.size() - 5);
  std::ofstream(dir / "img", std::ios::binary) << bytes;
  EXPECT_THROW(load_mnist_raw(dir / "img", ts::fixtures() / "toy-labels.idx1-ubyte"), Error);
}

TEST(Mnist, WriteReadRoundTrip) {
  RawDataset ds;
  ds.shape = {1, 28, 28};
  for (int k = 0; k < 5; ++k) {
    ds.pixels.emplace_back(784, static_cast<std::uint8_t>(k * 40));
    ds.labels.push_back(k);
  }
  const auto dir = ts::temp_dir("idx-roundtrip");
  write_mnist(ds, dir / "i", dir / "l");
  const auto back = load_mnist_raw(dir / "i", dir / "l");
  EXPECT_EQ(back.pixels, ds.pixels);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(std::filesystem::file_size(dir / "i"), 16u + 5 * 784);
}

TEST(Cifar, WriteReadRoundTrip) {
  RawDataset ds;
  ds.shape = {3, 32, 32};
  for (int k = 0; k < 4; ++k) {
    std::vector<std::uint8_t> px(3072);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>((i * 7 + k) & 0xFF);
    ds.pixels.push_back(px);
    ds.labels.push_back(9 - k);
  }
  const auto dir = ts::temp_dir("cifar");
  write_cifar10(ds, dir / "b1.bin");
  EXPECT_EQ(std::filesystem::file_size(dir / "b1.bin"), 4u * 3073);
  const std::vector<std::filesystem::path> files{dir / "b1.bin", dir / "b1.bin"};
  const auto back = load_cifar10_raw(files);
  EXPECT_EQ(back.size(), 8u);
  EXPECT_EQ(back.pixels[5], ds.pixels[1]);
  EXPECT_EQ(back.labels[0], 9);
}

TEST(Cifar, BadRecords) {
  const auto dir = ts::temp_dir("cifar-bad");
  std::string rec(3073, '\0');
  rec[0] = 12;
  std::ofstream(dir / "label.bin", std::ios::binary) << rec;
  const std::vector<std::filesystem::path> bad_label{dir / "label.bin"};
  EXPECT_THROW(load_cifar10_raw(bad_label), Error);
  std::ofstream(dir / "short.bin", std::ios::binary) << std::string(3000, '\0');
  const std::vector<std::filesystem::path> short_file{dir / "short.bin"};
  EXPECT_THROW(load_cifar10_raw(short_file), Error);
}

TEST(Preprocess, ScalesSubtractsMeanAndQuantizes) {
  auto m = load_model(ts::toy_model_dir());
  std::vector<std::uint8_t> raw(64, 255);
  raw[1] = 0;
  auto q = preprocess_image(m, raw);
  EXPECT_EQ(q.data[0], 128);  // 1.0 at frac 7
  EXPECT_EQ(q.data[1], 0);
  m.preprocess.mean = {0.5};
  m.validate();
  q = preprocess_image(m, raw);
  EXPECT_EQ(q.data[0], 64);
  EXPECT_EQ(q.data[1], 0);  // -0.5 saturates to the unsigned floor
}

TEST(Accuracy, SingleCorrectImageAndEmpty) {
  const auto m = load_model(ts::toy_model_dir());
  const auto images = prepare(load_dataset(ts::toy_dataset()), m, 1);
  auto infer = [](const NetworkModel& model, const LabeledImage& img) { return infer_exact(model, img.pixels).logits; };
  auto one = images;
  one[0].label = static_cast<int>(argmax(infer(m, one[0])));
  EXPECT_DOUBLE_EQ(accuracy(m, one, infer), 1.0);
  EXPECT_THROW(accuracy(m, std::span<const LabeledImage>{}, infer), Error);
}

TEST(DatasetSpec, Parsing) {
  EXPECT_EQ(load_dataset(ts::toy_dataset()).size(), 24u);
  EXPECT_THROW(load_dataset("mnist"), Error);
  EXPECT_THROW(load_dataset("svhn:" + (ts::fixtures() / "toy-images.idx3-ubyte").string()), Error);
  EXPECT_THROW(load_dataset("mnist:/nonexistent/a,/nonexistent/b"), Error);
}
