#include "unroll/data.hpp"
#include "unroll/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace unroll {

namespace {

struct Point {
  double x;
  double y;
};

using Stroke = std::vector<Point>;
using Glyph = std::vector<Stroke>;

constexpr double kDeg = std::numbers::pi / 180.0;

Stroke arc(double cx, double cy, double rx, double ry, double from_deg, double to_deg, int segments = 24)
{
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    double const a = (from_deg + (to_deg - from_deg) * i / segments) * kDeg;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

Stroke join(Stroke a, const Stroke &b)
{
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Unit box, x to the right, y downward.
const std::array<Glyph, 10> &glyphs()
{
  static const std::array<Glyph, 10> table = [] {
    std::array<Glyph, 10> g;
    g[0] = {arc(0.5, 0.5, 0.28, 0.42, 0, 360, 32)};
    g[1] = {{{0.36, 0.24}, {0.55, 0.08}, {0.55, 0.92}}};
    g[2] = {join(arc(0.5, 0.32, 0.27, 0.24, 180, 400), Stroke{{0.22, 0.9}, {0.8, 0.9}})};
    g[3] = {arc(0.48, 0.29, 0.25, 0.21, 200, 450), arc(0.48, 0.71, 0.28, 0.21, 270, 520)};
    g[4] = {{{0.62, 0.92}, {0.62, 0.08}, {0.18, 0.64}, {0.84, 0.64}}};
    g[5] = {join(Stroke{{0.76, 0.1}, {0.3, 0.1}, {0.27, 0.46}}, arc(0.48, 0.66, 0.28, 0.25, 235, 500))};
    g[6] = {join(Stroke{{0.68, 0.08}}, arc(0.5, 0.68, 0.25, 0.24, 200, 560, 32))};
    g[7] = {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.92}}};
    g[8] = {arc(0.5, 0.28, 0.22, 0.2, 0, 360), arc(0.5, 0.7, 0.27, 0.22, 0, 360)};
    g[9] = {arc(0.5, 0.32, 0.25, 0.23, 0, 360), {{0.75, 0.32}, {0.62, 0.92}}};
    return g;
  }();
  return table;
}

double segment_distance(Point p, Point a, Point b)
{
  double const dx = b.x - a.x;
  double const dy = b.y - a.y;
  double const len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double const ex = a.x + t * dx - p.x;
  double const ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

ByteImage render(const Glyph &glyph, CounterRng &rng)
{
  constexpr int side = 28;
  double const scale = 20.0 * rng.uniform(0.8, 1.05);
  double const angle = rng.uniform(-0.25, 0.25);
  double const shear = rng.uniform(-0.3, 0.3);
  double const width = rng.uniform(1.6, 3.0);
  double const peak = rng.uniform(0.85, 1.0);
  double const tx = 14.0 + rng.uniform(-1.5, 1.5);
  double const ty = 14.0 + rng.uniform(-1.5, 1.5);
  double const c = std::cos(angle);
  double const s = std::sin(angle);

  std::vector<std::pair<Point, Point>> segments;
  for (auto const &stroke : glyph) {
    Stroke placed;
    for (auto const &pt : stroke) {
      double const jx = pt.x + rng.uniform(-0.03, 0.03) - 0.5;
      double const jy = pt.y + rng.uniform(-0.03, 0.03) - 0.5;
      double const sx = (jx + shear * jy) * scale;
      double const sy = jy * scale;
      placed.push_back({tx + c * sx - s * sy, ty + s * sx + c * sy});
    }
    for (std::size_t i = 1; i < placed.size(); ++i) { segments.emplace_back(placed[i - 1], placed[i]); }
  }

  ByteImage img(side, side);
  for (int r = 0; r < side; ++r) {
    for (int col = 0; col < side; ++col) {
      Point const p{col + 0.5, r + 0.5};
      double d = 1e9;
      for (auto const &[a, b] : segments) { d = std::min(d, segment_distance(p, a, b)); }
      double const cover = std::clamp(0.5 * width + 0.5 - d, 0.0, 1.0);
      img(r, col) = static_cast<std::uint8_t>(std::lround(255.0 * peak * cover));
    }
  }
  return img;
}

} // namespace

RawImageSet synthetic_digits(std::size_t count, std::uint64_t seed)
{
  RawImageSet set;
  set.rows = 28;
  set.cols = 28;
  set.images.reserve(count);
  set.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CounterRng rng(seed, i);
    auto const label = static_cast<std::uint8_t>(rng.below(10));
    set.images.push_back(render(glyphs()[label], rng));
    set.labels.push_back(label);
  }
  return set;
}

} // namespace unroll
