#pragma once

// MNIST ingestion: the IDX container format (big-endian magic + dimension
// header + raw bytes), transparent gzip decompression, [0,1] normalization,
// and encoding of images into initial network states.

#include <Eigen/Dense>
#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "crsn/errors.hpp"
#include "crsn/spectral.hpp"

namespace crsn {

struct WrongMagic : Error {
  explicit WrongMagic(const std::string& msg)
      : Error(ErrorCategory::DataMissing, msg) {}
};

struct TruncatedPayload : Error {
  explicit TruncatedPayload(const std::string& msg)
      : Error(ErrorCategory::DataMissing, msg) {}
};

struct CorruptLabels : Error {
  explicit CorruptLabels(const std::string& msg)
      : Error(ErrorCategory::DataMissing, msg) {}
};

using ByteMat =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

// Reads a whole file; gzip-compressed files are decompressed transparently
// (gzread passes plain files through unchanged).
inline std::vector<std::uint8_t> read_file_auto(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw DataMissing("no such file: " + path);
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataMissing("cannot open " + path);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> buf(1 << 20);
  int got;
  while ((got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
    out.insert(out.end(), buf.begin(), buf.begin() + got);
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw DataMissing("gzip read error in " + path);
  return out;
}

struct RawImages {
  ByteMat pixels;  // count x (rows*cols), row-major image order
  int rows = 0, cols = 0;
};

inline RawImages parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16)
    throw TruncatedPayload("IDX image header needs 16 bytes, have " +
                           std::to_string(bytes.size()));
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != kIdxImagesMagic)
    throw WrongMagic("bad image magic 0x" + std::to_string(magic));
  const std::uint32_t count = read_be32(bytes.data() + 4);
  const std::uint32_t rows = read_be32(bytes.data() + 8);
  const std::uint32_t cols = read_be32(bytes.data() + 12);
  const std::size_t expect = std::size_t(count) * rows * cols;
  if (bytes.size() - 16 != expect)
    throw TruncatedPayload("IDX image payload: expected " +
                           std::to_string(expect) + " bytes, have " +
                           std::to_string(bytes.size() - 16));
  RawImages out;
  out.rows = static_cast<int>(rows);
  out.cols = static_cast<int>(cols);
  out.pixels.resize(count, rows * cols);
  std::copy(bytes.begin() + 16, bytes.end(), out.pixels.data());
  return out;
}

inline std::vector<std::uint8_t> parse_idx_labels(
    const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8)
    throw TruncatedPayload("IDX label header needs 8 bytes, have " +
                           std::to_string(bytes.size()));
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != kIdxLabelsMagic)
    throw WrongMagic("bad label magic 0x" + std::to_string(magic));
  const std::uint32_t count = read_be32(bytes.data() + 4);
  if (bytes.size() - 8 != count)
    throw TruncatedPayload("IDX label payload: expected " +
                           std::to_string(count) + " bytes, have " +
                           std::to_string(bytes.size() - 8));
  std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.end());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 10)
      throw CorruptLabels("label " + std::to_string(labels[i]) + " at index " +
                          std::to_string(i));
  return labels;
}

// Writers for the same container, used to build test fixtures.
inline std::vector<std::uint8_t> serialize_idx_images(const RawImages& imgs) {
  std::vector<std::uint8_t> out;
  write_be32(out, kIdxImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(imgs.pixels.rows()));
  write_be32(out, static_cast<std::uint32_t>(imgs.rows));
  write_be32(out, static_cast<std::uint32_t>(imgs.cols));
  out.insert(out.end(), imgs.pixels.data(),
             imgs.pixels.data() + imgs.pixels.size());
  return out;
}

inline std::vector<std::uint8_t> serialize_idx_labels(
    const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  write_be32(out, kIdxLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

// Divides by 255 after checking the input really is byte-ranged.
inline RMat normalize(const RMat& raw) {
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const double v = raw(i);
    if (!(v >= 0.0 && v <= 255.0))
      throw ConfigInvalid("normalize: value " + std::to_string(v) +
                          " outside [0,255]");
  }
  return raw / 255.0;
}

struct Dataset {
  RMat images;  // count x 784, values in [0,1]
  Eigen::VectorXi labels;
  std::string split;  // "train" or "test"

  Eigen::Index size() const { return images.rows(); }

  void check() const {
    if (images.rows() != labels.size())
      throw ConfigInvalid("dataset: image/label count mismatch");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
      if (labels(i) < 0 || labels(i) >= 10)
        throw ConfigInvalid("dataset: label out of range");
    if (images.size() > 0) {
      const double lo = images.minCoeff(), hi = images.maxCoeff();
      if (lo < 0.0 || hi > 1.0)
        throw ConfigInvalid("dataset: pixel outside [0,1]");
    }
  }

  Dataset take(Eigen::Index n) const {
    Dataset d;
    n = std::min(n, size());
    d.images = images.topRows(n);
    d.labels = labels.head(n);
    d.split = split;
    return d;
  }
};

inline const char* idx_image_filename(const std::string& split) {
  return split == "train" ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
}

inline const char* idx_label_filename(const std::string& split) {
  return split == "train" ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
}

// Resolves <dir>/<name> or <dir>/<name>.gz.
inline std::string resolve_idx_path(const std::string& dir,
                                    const std::string& name) {
  namespace fs = std::filesystem;
  const std::string plain = (fs::path(dir) / name).string();
  if (fs::exists(plain)) return plain;
  if (fs::exists(plain + ".gz")) return plain + ".gz";
  throw DataMissing("missing data file " + plain + "[.gz]");
}

inline Dataset load_dataset(const std::string& dir, const std::string& split) {
  const auto image_bytes =
      read_file_auto(resolve_idx_path(dir, idx_image_filename(split)));
  const auto label_bytes =
      read_file_auto(resolve_idx_path(dir, idx_label_filename(split)));
  const RawImages raw = parse_idx_images(image_bytes);
  const auto labels = parse_idx_labels(label_bytes);
  if (raw.pixels.rows() != static_cast<Eigen::Index>(labels.size()))
    throw TruncatedPayload("image/label count mismatch in " + dir);
  Dataset d;
  d.split = split;
  d.images = normalize(raw.pixels.cast<double>());
  d.labels.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    d.labels(static_cast<Eigen::Index>(i)) = labels[i];
  d.check();
  return d;
}

// Pixels enter as the real parts of the leading components, all of them
// inside the non-linear segment; everything else starts at zero.
inline CVec encode_row(const RVec& pixels, const SpectralConfig& config) {
  if (pixels.size() > config.n_nonlinear)
    throw ConfigInvalid("encode_row: " + std::to_string(pixels.size()) +
                        " pixels exceed the non-linear segment (L=" +
                        std::to_string(config.n_nonlinear) + ")");
  CVec x = CVec::Zero(config.n_total);
  for (Eigen::Index i = 0; i < pixels.size(); ++i)
    x(i) = Cplx(pixels(i), 0.0);
  return x;
}

// MNIST images are exactly 784 pixels.
inline CVec encode_input(const RVec& image, const SpectralConfig& config) {
  if (image.size() != 784)
    throw ConfigInvalid("encode_input: image must have 784 pixels, got " +
                        std::to_string(image.size()));
  if (config.n_nonlinear < 784)
    throw ConfigInvalid("encode_input: config needs n_nonlinear >= 784");
  return encode_row(image, config);
}

inline std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(n)));
}

// Content goldens for the official MNIST distribution: decompressed payload
// sizes and CRC32 of the pixel/label payloads (header excluded), plus the
// CRC32 of the first training/test image. Used by the parsing goldens and to
// verify downloaded files.
struct MnistGolden {
  const char* filename;
  std::size_t decompressed_size;
  std::uint32_t payload_crc32;
  int count;
};

inline constexpr MnistGolden kMnistGoldens[4] = {
    {"train-images-idx3-ubyte", 47040016u, 0xf3639b56u, 60000},
    {"train-labels-idx1-ubyte", 60008u, 0xba07e8efu, 60000},
    {"t10k-images-idx3-ubyte", 7840016u, 0xe4ca5f57u, 10000},
    {"t10k-labels-idx1-ubyte", 10008u, 0xee8604d9u, 10000},
};

inline constexpr std::uint32_t kMnistFirstTrainImageCrc32 = 0x90a92752u;
inline constexpr std::uint32_t kMnistFirstTestImageCrc32 = 0x7eb3cd06u;

}  // namespace crsn
