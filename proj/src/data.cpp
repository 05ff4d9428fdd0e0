#include "unroll/data.hpp"

#include "unroll/error.hpp"
#include "unroll/log.hpp"
#include "unroll/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

namespace unroll {

namespace {

std::uint32_t read_be32(std::istream &in)
{
  unsigned char b[4] = {};
  if (!in.read(reinterpret_cast<char *>(b), 4)) { throw Error(Errc::length_error, "IDX header truncated"); }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream &out, std::uint32_t v)
{
  char const b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::size_t> permutation(std::size_t count, std::uint64_t seed)
{
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = count; i > 1; --i) { std::swap(order[i - 1], order[rng.below(i)]); }
  return order;
}

Matrix signals_of(const RawImageSet &set, const std::vector<std::size_t> &indices)
{
  Matrix out(32 * 32, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = flatten_image(resize_to_32(set.images[indices[k]]));
  }
  return out;
}

} // namespace

RawImageSet parse_idx_images(std::istream &in)
{
  unsigned char probe[4] = {};
  if (!in.read(reinterpret_cast<char *>(probe), 4)) { throw Error(Errc::length_error, "empty or truncated IDX file"); }
  std::uint32_t const magic =
    (std::uint32_t{probe[0]} << 24) | (std::uint32_t{probe[1]} << 16) | (std::uint32_t{probe[2]} << 8) | probe[3];
  if (magic != kImageMagic) {
    throw Error(Errc::format_error, fmt::format("IDX image magic 0x{:08x}, expected 0x{:08x}", magic, kImageMagic));
  }
  std::uint32_t const count = read_be32(in);
  std::uint32_t const rows = read_be32(in);
  std::uint32_t const cols = read_be32(in);
  RawImageSet set;
  set.rows = rows;
  set.cols = cols;
  set.images.reserve(count);
  std::vector<char> buffer(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()))) {
      throw Error(Errc::length_error, fmt::format("IDX payload truncated at image {} of {}", i, count));
    }
    ByteImage img(rows, cols);
    std::memcpy(img.data(), buffer.data(), buffer.size());
    set.images.push_back(std::move(img));
  }
  return set;
}

std::vector<std::uint8_t> parse_idx_labels(std::istream &in)
{
  std::uint32_t const magic = read_be32(in);
  if (magic != kLabelMagic) {
    throw Error(Errc::format_error, fmt::format("IDX label magic 0x{:08x}, expected 0x{:08x}", magic, kLabelMagic));
  }
  std::uint32_t const count = read_be32(in);
  std::vector<std::uint8_t> labels(count);
  if (!in.read(reinterpret_cast<char *>(labels.data()), count)) {
    throw Error(Errc::length_error, "IDX label payload truncated");
  }
  return labels;
}

RawImageSet load_mnist_idx(const std::filesystem::path &images, const std::optional<std::filesystem::path> &labels)
{
  std::ifstream in(images, std::ios::binary);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + images.string());
  RawImageSet set = parse_idx_images(in);
  if (labels) {
    std::ifstream lin(*labels, std::ios::binary);
    require(static_cast<bool>(lin), Errc::io_error, "cannot open " + labels->string());
    set.labels = parse_idx_labels(lin);
    require(set.labels.size() == set.images.size(), Errc::format_error, "label count != image count");
  }
  return set;
}

void write_idx_images(std::ostream &out, const RawImageSet &set)
{
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<std::uint32_t>(set.images.size()));
  write_be32(out, static_cast<std::uint32_t>(set.rows));
  write_be32(out, static_cast<std::uint32_t>(set.cols));
  for (auto const &img : set.images) {
    out.write(reinterpret_cast<const char *>(img.data()), static_cast<std::streamsize>(img.size()));
  }
}

Matrix resize_to_32(const ByteImage &image)
{
  require(image.rows() == 28 && image.cols() == 28, Errc::invalid_dimension,
          fmt::format("resize expects 28x28, got {}x{}", image.rows(), image.cols()));
  constexpr int in_side = 28;
  constexpr int out_side = 32;
  constexpr double step = static_cast<double>(in_side - 1) / (out_side - 1);
  Matrix out(out_side, out_side);
  for (int i = 0; i < out_side; ++i) {
    double const sr = i * step;
    int const r0 = std::min(static_cast<int>(sr), in_side - 2);
    double const fr = sr - r0;
    for (int j = 0; j < out_side; ++j) {
      double const sc = j * step;
      int const c0 = std::min(static_cast<int>(sc), in_side - 2);
      double const fc = sc - c0;
      double const top = (1.0 - fc) * image(r0, c0) + fc * image(r0, c0 + 1);
      double const bottom = (1.0 - fc) * image(r0 + 1, c0) + fc * image(r0 + 1, c0 + 1);
      out(i, j) = ((1.0 - fr) * top + fr * bottom) / 255.0;
    }
  }
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

Vector flatten_image(const Matrix &image)
{
  Vector v(image.size());
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    v.segment(r * image.cols(), image.cols()) = image.row(r).transpose();
  }
  return v;
}

Matrix unflatten_image(const Eigen::Ref<const Vector> &signal)
{
  auto const side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(signal.size()))));
  require(side * side == signal.size(), Errc::invalid_dimension, "signal is not a square image");
  Matrix img(side, side);
  for (Eigen::Index r = 0; r < side; ++r) { img.row(r) = signal.segment(r * side, side).transpose(); }
  return img;
}

ImageDataset make_image_dataset(const RawImageSet &pool, const RawImageSet *test_pool, const SplitSizes &sizes,
                                std::uint64_t split_seed)
{
  std::size_t const from_pool = sizes.train + sizes.val + (test_pool ? 0 : sizes.test);
  require(pool.size() >= from_pool, Errc::invalid_configuration,
          fmt::format("image pool has {} images, split needs {}", pool.size(), from_pool));
  auto const order = permutation(pool.size(), split_seed);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes.train));
  std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(sizes.train),
                               order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val));
  ImageDataset ds;
  ds.train = signals_of(pool, train);
  ds.val = signals_of(pool, val);
  if (test_pool) {
    require(test_pool->size() >= sizes.test, Errc::invalid_configuration, "test pool smaller than requested");
    std::vector<std::size_t> test(sizes.test);
    std::iota(test.begin(), test.end(), std::size_t{0});
    ds.test = signals_of(*test_pool, test);
  } else {
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val),
                                  order.begin() + static_cast<std::ptrdiff_t>(from_pool));
    ds.test = signals_of(pool, test);
  }
  return ds;
}

std::optional<std::filesystem::path> resolve_data_dir(const std::optional<std::filesystem::path> &flag)
{
  if (flag) { return flag; }
  if (const char *env = std::getenv("UNROLL_DATA_DIR"); env && *env) { return std::filesystem::path(env); }
  return std::nullopt;
}

ImageDataset load_image_dataset(const std::optional<std::filesystem::path> &data_dir, const SplitSizes &sizes,
                                std::uint64_t split_seed)
{
  if (data_dir) {
    auto const train_file = *data_dir / "train-images-idx3-ubyte";
    auto const test_file = *data_dir / "t10k-images-idx3-ubyte";
    if (std::filesystem::exists(train_file) && std::filesystem::exists(test_file)) {
      log::info("loading MNIST from {}", data_dir->string());
      RawImageSet const pool = load_mnist_idx(train_file);
      RawImageSet const test = load_mnist_idx(test_file);
      ImageDataset data = make_image_dataset(pool, &test, sizes, split_seed);
      data.source = "mnist";
      return data;
    }
    log::warn("no MNIST IDX files in {}; using synthetic digits", data_dir->string());
  }
  std::size_t const total = sizes.train + sizes.val + sizes.test;
  RawImageSet const pool = synthetic_digits(total, derive_seed(split_seed, "synthetic-digits"));
  return make_image_dataset(pool, nullptr, sizes, split_seed);
}

Matrix gen_bpsk_batch(Eigen::Index n, Eigen::Index batch, std::uint64_t seed)
{
  require(n >= 1 && batch >= 1, Errc::invalid_dimension, "BPSK batch needs n, batch >= 1");
  Matrix out(n, batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i, j) = (hash_key(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)) >> 63) ? 1.0 : -1.0;
    }
  }
  return out;
}

std::vector<ComplexChannel> gen_channel_batch(Eigen::Index rx, Eigen::Index tx, Eigen::Index batch,
                                              std::uint64_t seed)
{
  require(rx >= 1 && tx >= 1, Errc::invalid_dimension, "channel needs rx, tx >= 1");
  double const scale = std::sqrt(1.0 / (2.0 * static_cast<double>(rx)));
  std::vector<ComplexChannel> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (Eigen::Index b = 0; b < batch; ++b) {
    std::uint64_t const s = derive_seed(seed, static_cast<std::uint64_t>(b));
    ComplexChannel ch;
    ch.real_part = scale * standard_noise(rx, tx, derive_seed(s, "re"));
    ch.imag_part = scale * standard_noise(rx, tx, derive_seed(s, "im"));
    out.push_back(std::move(ch));
  }
  return out;
}

} // namespace unroll
