#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "unroll/sensing.hpp"

namespace unroll {

using ByteImage = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Images as parsed from an IDX file (or generated), row-major bytes.
struct RawImageSet {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<ByteImage> images;
  std::vector<std::uint8_t> labels; // empty when unknown

  std::size_t size() const { return images.size(); }
};

/// Big-endian IDX: magic 0x00000803, u32 count, u32 rows, u32 cols, bytes.
RawImageSet parse_idx_images(std::istream &in);
/// Big-endian IDX: magic 0x00000801, u32 count, bytes.
std::vector<std::uint8_t> parse_idx_labels(std::istream &in);
RawImageSet load_mnist_idx(const std::filesystem::path &images, const std::optional<std::filesystem::path> &labels = {});
void write_idx_images(std::ostream &out, const RawImageSet &set);

/// Corner-aligned bilinear resize of a 28 x 28 byte image to 32 x 32 in [0, 1].
Matrix resize_to_32(const ByteImage &image);

/// Flattens a square image row-major into a signal vector.
Vector flatten_image(const Matrix &image);
Matrix unflatten_image(const Eigen::Ref<const Vector> &signal);

/// Column-per-image signal sets (n = 1024 for 32 x 32).
struct ImageDataset {
  Matrix train;
  Matrix val;
  Matrix test;
  std::string source = "synthetic"; // or "mnist"
};

struct SplitSizes {
  std::size_t train = 4000;
  std::size_t val = 1000;
  std::size_t test = 1000;
};

/// Splits a training pool into train/val by a seeded permutation; test comes
/// from test_pool when given, otherwise from the remainder of the pool.
ImageDataset make_image_dataset(const RawImageSet &pool, const RawImageSet *test_pool, const SplitSizes &sizes,
                                std::uint64_t split_seed);

/// Procedurally drawn handwriting-like digits, 28 x 28, for runs without MNIST files.
RawImageSet synthetic_digits(std::size_t count, std::uint64_t seed);

/// MNIST from `data_dir` (train-images-idx3-ubyte and t10k-images-idx3-ubyte)
/// when present, otherwise synthetic digits.
ImageDataset load_image_dataset(const std::optional<std::filesystem::path> &data_dir, const SplitSizes &sizes,
                                std::uint64_t split_seed);

/// Explicit --data-dir wins, then $UNROLL_DATA_DIR.
std::optional<std::filesystem::path> resolve_data_dir(const std::optional<std::filesystem::path> &flag);

/// n x batch matrix of i.i.d. uniform {-1, +1}.
Matrix gen_bpsk_batch(Eigen::Index n, Eigen::Index batch, std::uint64_t seed);

/// batch channels, real and imaginary entries i.i.d. N(0, 1 / (2 rx)).
std::vector<ComplexChannel> gen_channel_batch(Eigen::Index rx, Eigen::Index tx, Eigen::Index batch,
                                              std::uint64_t seed);

} // namespace unroll
