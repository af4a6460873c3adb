#pragma once

// MNIST IDX and CIFAR-10 binary readers, plus writers used for fixtures.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "xbarsim/netgraph.hpp"

namespace xbarsim {

struct RawDataset {
  Shape3 shape;
  std::vector<std::vector<std::uint8_t>> pixels;  // each [c, h, w]
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

struct LabeledImage {
  QTensor pixels;
  int label = 0;
};

namespace detail {

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open dataset file: " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void put_be32(std::ofstream& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.put(static_cast<char>((v >> s) & 0xFFu));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kCifarRecordBytes = 3073;

inline RawDataset load_mnist_raw(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = detail::read_all(images);
  const auto lb = detail::read_all(labels);
  if (ib.size() < 16) throw Error("truncated IDX image file: " + images.string());
  if (lb.size() < 8) throw Error("truncated IDX label file: " + labels.string());
  if (detail::be32(ib, 0) != kIdxImageMagic) throw Error("bad magic number in IDX image file: " + images.string());
  if (detail::be32(lb, 0) != kIdxLabelMagic) throw Error("bad magic number in IDX label file: " + labels.string());
  const std::size_t n = detail::be32(ib, 4);
  const std::size_t rows = detail::be32(ib, 8);
  const std::size_t cols = detail::be32(ib, 12);
  if (detail::be32(lb, 4) != n) throw Error("IDX image and label counts differ");
  if (ib.size() < 16 + n * rows * cols) throw Error("truncated IDX image file: " + images.string());
  if (lb.size() < 8 + n) throw Error("truncated IDX label file: " + labels.string());
  RawDataset ds;
  ds.shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
  ds.pixels.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto* p = ib.data() + 16 + k * rows * cols;
    ds.pixels.emplace_back(p, p + rows * cols);
    ds.labels.push_back(lb[8 + k]);
  }
  return ds;
}

inline RawDataset load_cifar10_raw(std::span<const std::filesystem::path> batches) {
  RawDataset ds;
  ds.shape = {3, 32, 32};
  for (const auto& path : batches) {
    const auto b = detail::read_all(path);
    if (b.empty() || b.size() % kCifarRecordBytes != 0)
      throw Error("truncated CIFAR-10 batch file: " + path.string());
    for (std::size_t off = 0; off < b.size(); off += kCifarRecordBytes) {
      if (b[off] > 9) throw Error("bad label byte in CIFAR-10 batch file: " + path.string());
      ds.labels.push_back(b[off]);
      ds.pixels.emplace_back(b.begin() + static_cast<std::ptrdiff_t>(off + 1),
                             b.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecordBytes));
    }
  }
  return ds;
}

/// Applies the model's preprocessing (scale, then mean subtraction) and
/// quantizes to the model input spec.
inline QTensor preprocess_image(const NetworkModel& m, std::span<const std::uint8_t> raw) {
  if (raw.size() != m.input_shape.size()) throw Error("image size does not match model input shape");
  const auto& mean = m.preprocess.mean;
  const std::size_t plane = static_cast<std::size_t>(m.input_shape.h) * m.input_shape.w;
  std::vector<double> v(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    double x = raw[k] * m.preprocess.scale;
    if (mean.size() == raw.size()) x -= mean[k];
    else if (!mean.empty()) x -= mean[k / plane];
    v[k] = x;
  }
  return quantize(v, m.input_spec(), m.input_shape.dims());
}

inline std::vector<LabeledImage> prepare(const RawDataset& ds, const NetworkModel& m, std::size_t limit = 0) {
  if (!(ds.shape == m.input_shape)) throw Error("dataset image shape does not match model input shape");
  const std::size_t n = limit == 0 ? ds.size() : std::min(limit, ds.size());
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back({preprocess_image(m, ds.pixels[k]), ds.labels[k]});
  return out;
}

inline std::vector<LabeledImage> load_mnist(const std::filesystem::path& images,
                                            const std::filesystem::path& labels, const NetworkModel& m) {
  return prepare(load_mnist_raw(images, labels), m);
}

inline std::vector<LabeledImage> load_cifar10(std::span<const std::filesystem::path> batches,
                                              const NetworkModel& m) {
  return prepare(load_cifar10_raw(batches), m);
}

inline void write_mnist(const RawDataset& ds, const std::filesystem::path& images,
                        const std::filesystem::path& labels) {
  std::ofstream im(images, std::ios::binary), lb(labels, std::ios::binary);
  if (!im || !lb) throw Error("cannot write IDX files");
  detail::put_be32(im, kIdxImageMagic);
  detail::put_be32(im, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(im, static_cast<std::uint32_t>(ds.shape.h));
  detail::put_be32(im, static_cast<std::uint32_t>(ds.shape.w));
  detail::put_be32(lb, kIdxLabelMagic);
  detail::put_be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t k = 0; k < ds.size(); ++k) {
    im.write(reinterpret_cast<const char*>(ds.pixels[k].data()), static_cast<std::streamsize>(ds.pixels[k].size()));
    lb.put(static_cast<char>(ds.labels[k]));
  }
}

inline void write_cifar10(const RawDataset& ds, const std::filesystem::path& batch) {
  std::ofstream out(batch, std::ios::binary);
  if (!out) throw Error("cannot write " + batch.string());
  for (std::size_t k = 0; k < ds.size(); ++k) {
    out.put(static_cast<char>(ds.labels[k]));
    out.write(reinterpret_cast<const char*>(ds.pixels[k].data()), static_cast<std::streamsize>(ds.pixels[k].size()));
  }
}

/// Top-1 accuracy of `infer(model, image) -> logits` over `data`.
template <class InferFn>
double accuracy(const NetworkModel& m, std::span<const LabeledImage> data, InferFn&& infer) {
  if (data.empty()) throw Error("accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& img : data) {
    const std::vector<std::int32_t> logits = infer(m, img);
    if (static_cast<int>(argmax(logits)) == img.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace xbarsim
