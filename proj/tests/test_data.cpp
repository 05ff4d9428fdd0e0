#include <doctest.h>

#include "oracles.hpp"
#include "unroll/data.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

using namespace unroll;

namespace {

void be32(std::string &s, std::uint32_t v)
{
  s.push_back(static_cast<char>(v >> 24));
  s.push_back(static_cast<char>(v >> 16));
  s.push_back(static_cast<char>(v >> 8));
  s.push_back(static_cast<char>(v));
}

// Image k has pixel (r, c) = (k * 7 + r * 3 + c) mod 256.
std::string idx_fixture(std::uint32_t count, std::uint32_t magic = 0x00000803)
{
  std::string s;
  be32(s, magic);
  be32(s, count);
  be32(s, 28);
  be32(s, 28);
  for (std::uint32_t k = 0; k < count; ++k) {
    for (int r = 0; r < 28; ++r) {
      for (int c = 0; c < 28; ++c) { s.push_back(static_cast<char>((k * 7 + r * 3 + c) % 256)); }
    }
  }
  return s;
}

RawImageSet distinct_pool(std::size_t count)
{
  RawImageSet set;
  set.rows = set.cols = 28;
  for (std::size_t k = 0; k < count; ++k) {
    ByteImage img = ByteImage::Zero(28, 28);
    img(k % 28, (k / 28) % 28) = 255;
    img(27 - k % 28, 5) = static_cast<std::uint8_t>(10 + k % 200);
    set.images.push_back(img);
  }
  return set;
}

} // namespace

TEST_CASE("IDX image parsing")
{
  std::istringstream in(idx_fixture(10));
  RawImageSet const set = parse_idx_images(in);
  REQUIRE(set.size() == 10);
  CHECK(set.rows == 28);
  CHECK(set.cols == 28);
  CHECK(set.images[3](2, 5) == (3 * 7 + 2 * 3 + 5) % 256);
  CHECK(set.images[9](27, 27) == (9 * 7 + 27 * 3 + 27) % 256);

  std::istringstream labels(idx_fixture(2, 0x00000801));
  CHECK_THROWS_WITH_AS(parse_idx_images(labels), doctest::Contains("format error"), Error);
  std::istringstream empty("");
  CHECK_THROWS_WITH_AS(parse_idx_images(empty), doctest::Contains("length error"), Error);
  std::string cut = idx_fixture(3);
  cut.resize(cut.size() - 100);
  std::istringstream truncated(cut);
  CHECK_THROWS_WITH_AS(parse_idx_images(truncated), doctest::Contains("length error"), Error);

  std::ostringstream out;
  write_idx_images(out, set);
  CHECK(out.str() == idx_fixture(10));

  std::string lab;
  be32(lab, 0x00000801);
  be32(lab, 3);
  lab += std::string("\x01\x07\x09", 3);
  std::istringstream lin(lab);
  CHECK(parse_idx_labels(lin) == std::vector<std::uint8_t>{1, 7, 9});
}

TEST_CASE("bilinear resize")
{
  CHECK(resize_to_32(ByteImage::Constant(28, 28, 255)).isApprox(Matrix::Ones(32, 32), 0.0));
  CHECK(resize_to_32(ByteImage::Zero(28, 28)).isZero(0.0));
  CHECK_THROWS_AS(resize_to_32(ByteImage::Zero(27, 28)), Error);

  ByteImage ramp(28, 28);
  for (int r = 0; r < 28; ++r) {
    for (int c = 0; c < 28; ++c) { ramp(r, c) = static_cast<std::uint8_t>(9 * c); }
  }
  Matrix const out = resize_to_32(ramp);
  double worst = 0.0;
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) { worst = std::max(worst, std::abs(out(i, j) - 9.0 * (j * 27.0 / 31.0) / 255.0)); }
  }
  CHECK(worst <= 1e-9);

  std::istringstream in(idx_fixture(4));
  RawImageSet const set = parse_idx_images(in);
  for (auto const &img : set.images) {
    Matrix const r = resize_to_32(img);
    double w = 0.0;
    for (int i = 0; i < 32; ++i) {
      for (int j = 0; j < 32; ++j) { w = std::max(w, std::abs(r(i, j) - oracle::bilinear(img, 28, 32, i, j) / 255.0)); }
    }
    CHECK(w <= 1e-9);
    CHECK(r.minCoeff() >= img.minCoeff() / 255.0 - 1e-15);
    CHECK(r.maxCoeff() <= img.maxCoeff() / 255.0 + 1e-15);
  }
}

TEST_CASE("flatten and unflatten are row-major inverses")
{
  Matrix img(3, 3);
  img << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  Vector const v = flatten_image(img);
  CHECK(v == (Vector(9) << 1, 2, 3, 4, 5, 6, 7, 8, 9).finished());
  CHECK(unflatten_image(v) == img);
  CHECK_THROWS_AS(unflatten_image(Vector::Zero(8)), Error);
}

TEST_CASE("splits are disjoint and seed-determined")
{
  RawImageSet const pool = distinct_pool(300);
  SplitSizes const sizes{120, 40, 50};
  ImageDataset const a = make_image_dataset(pool, nullptr, sizes, 5);
  ImageDataset const b = make_image_dataset(pool, nullptr, sizes, 5);
  ImageDataset const c = make_image_dataset(pool, nullptr, sizes, 6);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  CHECK(a.train != c.train);
  CHECK(a.train.cols() == 120);
  CHECK(a.val.cols() == 40);
  CHECK(a.test.cols() == 50);
  CHECK(a.train.rows() == 1024);

  std::set<std::vector<double>> seen;
  for (const Matrix *m : {&a.train, &a.val, &a.test}) {
    for (Eigen::Index j = 0; j < m->cols(); ++j) {
      CHECK(seen.insert(std::vector<double>(m->col(j).data(), m->col(j).data() + m->rows())).second);
    }
  }
  CHECK(a.train.minCoeff() >= 0.0);
  CHECK(a.train.maxCoeff() <= 1.0);
  CHECK_THROWS_AS(make_image_dataset(pool, nullptr, {300, 1, 0}, 5), Error);

  RawImageSet const test_pool = distinct_pool(20);
  ImageDataset const d = make_image_dataset(pool, &test_pool, {100, 10, 20}, 5);
  CHECK(d.test.col(3) == flatten_image(resize_to_32(test_pool.images[3])));
}

TEST_CASE("dataset source selection")
{
  auto const dir = std::filesystem::temp_directory_path() / "unroll_test_idx";
  std::filesystem::create_directories(dir);
  ImageDataset const synth = load_image_dataset(dir, {20, 5, 5}, 1);
  CHECK(synth.source == "synthetic");
  CHECK(synth.train.cols() == 20);

  {
    std::ofstream(dir / "train-images-idx3-ubyte", std::ios::binary) << idx_fixture(30);
    std::ofstream(dir / "t10k-images-idx3-ubyte", std::ios::binary) << idx_fixture(10);
  }
  ImageDataset const mnist = load_image_dataset(dir, {20, 5, 5}, 1);
  CHECK(mnist.source == "mnist");
  std::istringstream first(idx_fixture(1));
  CHECK(mnist.test.col(0) == flatten_image(resize_to_32(parse_idx_images(first).images[0])));

  CHECK(load_image_dataset(std::nullopt, {20, 5, 5}, 1).train == synth.train);

  ::setenv("UNROLL_DATA_DIR", dir.c_str(), 1);
  CHECK(resolve_data_dir(std::nullopt) == dir);
  CHECK(resolve_data_dir(std::filesystem::path("/elsewhere")) == std::filesystem::path("/elsewhere"));
  ::unsetenv("UNROLL_DATA_DIR");
  CHECK_FALSE(resolve_data_dir(std::nullopt).has_value());
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic digits")
{
  RawImageSet const a = synthetic_digits(50, 3);
  RawImageSet const b = synthetic_digits(50, 3);
  REQUIRE(a.size() == 50);
  CHECK(a.rows == 28);
  for (std::size_t k = 0; k < a.size(); ++k) { CHECK(a.images[k] == b.images[k]); }
  CHECK(a.labels.size() == 50);
  CHECK(a.images[0] != synthetic_digits(50, 4).images[0]);
  int lit = 0;
  for (auto const &img : a.images) { lit += img.maxCoeff() > 128; }
  CHECK(lit == 50);
}

TEST_CASE("BPSK symbols")
{
  Matrix const s = gen_bpsk_batch(100, 1000, 7);
  CHECK((s.array().abs() == 1.0).all());
  CHECK(std::abs(s.mean()) < 0.02);
  CHECK(gen_bpsk_batch(100, 1000, 7) == s);
  CHECK(gen_bpsk_batch(100, 1000, 8) != s);
}

TEST_CASE("Gaussian channels")
{
  Eigen::Index const rx = 16, tx = 8;
  auto const chans = gen_channel_batch(rx, tx, 400, 9);
  double sum = 0.0, sq = 0.0;
  long count = 0;
  for (auto const &c : chans) {
    for (const Matrix *m : {&c.real_part, &c.imag_part}) {
      sum += m->sum();
      sq += m->squaredNorm();
      count += m->size();
    }
  }
  double const mean = sum / count;
  double const var = sq / count - mean * mean;
  CHECK(std::abs(var - 1.0 / (2.0 * rx)) < 0.05 / (2.0 * rx));
  auto const again = gen_channel_batch(rx, tx, 400, 9);
  CHECK(again[17].real_part == chans[17].real_part);
  CHECK(again[17].imag_part == chans[17].imag_part);
  Matrix const lifted = lift_channel(chans[0]);
  CHECK(lifted.rows() == 2 * rx);
  CHECK(lifted.cols() == 2 * tx);
}
