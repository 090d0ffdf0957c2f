#include "rfr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rfr/random.hpp"

namespace rfr {

BandRange band_range(MaskBand band) {
  switch (band) {
    case MaskBand::k10to20: return {0.10, 0.20};
    case MaskBand::k30to40: return {0.30, 0.40};
    case MaskBand::k50to60: return {0.50, 0.60};
  }
  return {0, 0};
}

MaskBand parse_mask_band(const std::string& text) {
  if (text == "10-20") return MaskBand::k10to20;
  if (text == "30-40") return MaskBand::k30to40;
  if (text == "50-60") return MaskBand::k50to60;
  throw ConfigError("unknown mask band '" + text + "' (expected 10-20, 30-40 or 50-60)");
}

std::string to_string(MaskBand band) {
  const auto r = band_range(band);
  return std::to_string(int(std::lround(r.lo * 100))) + "-" + std::to_string(int(std::lround(r.hi * 100)));
}

Tensor<float> generate_image(std::size_t size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "image"));
  Tensor<float> img(Shape{1, 3, size, size});
  auto px = img.data();
  const std::size_t plane = size * size;
  const double fs = static_cast<double>(size);

  double c0[3], c1[3], check[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform();
    c1[c] = rng.uniform();
    check[c] = rng.uniform();
  }
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const long period = rng.integer(2, std::max<long>(2, static_cast<long>(size / 4)));
  const double alpha = rng.uniform(0.1, 0.5);

  struct Blob {
    double x, y, sigma, colour[3], weight;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(rng.integer(1, 4)));
  for (auto& b : blobs) {
    b.x = rng.uniform(0, fs);
    b.y = rng.uniform(0, fs);
    b.sigma = rng.uniform(fs / 12, fs / 4);
    for (double& v : b.colour) v = rng.uniform();
    b.weight = rng.uniform(0.4, 0.9);
  }

  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double t = std::clamp(0.5 + ((x - fs / 2) * dx + (y - fs / 2) * dy) / fs, 0.0, 1.0);
      const bool on = ((static_cast<long>(x) / period) + (static_cast<long>(y) / period)) % 2 == 0;
      for (int c = 0; c < 3; ++c) {
        double v = (1 - t) * c0[c] + t * c1[c];
        if (on) v = (1 - alpha) * v + alpha * check[c];
        for (const auto& b : blobs) {
          const double r2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
          const double g = b.weight * std::exp(-r2 / (2 * b.sigma * b.sigma));
          v = (1 - g) * v + g * b.colour[c];
        }
        px[c * plane + y * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

namespace {

using Grid = std::vector<unsigned char>;  // 1 = hole

void stamp_disc(Grid& g, long size, double cx, double cy, double radius) {
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - radius)));
  const long x1 = std::min(size - 1, static_cast<long>(std::ceil(cx + radius)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - radius)));
  const long y1 = std::min(size - 1, static_cast<long>(std::ceil(cy + radius)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) g[y * size + x] = 1;
    }
  }
}

void draw_rectangle(Grid& g, long size, Rng& rng, double deficit) {
  const long cap = std::max(2L, static_cast<long>(std::ceil(1.5 * std::sqrt(deficit) * size)));
  const long w = rng.integer(2, std::min(cap, size));
  const long h = rng.integer(2, std::min(cap, size));
  const long x0 = rng.integer(0, size - w);
  const long y0 = rng.integer(0, size - h);
  for (long y = y0; y < y0 + h; ++y) {
    for (long x = x0; x < x0 + w; ++x) g[y * size + x] = 1;
  }
}

void draw_stroke(Grid& g, long size, Rng& rng) {
  const long vertices = rng.integer(3, 8);
  const double radius = static_cast<double>(rng.integer(3, 6)) / 2.0;
  double x = rng.uniform(0, double(size));
  double y = rng.uniform(0, double(size));
  double angle = rng.uniform(0, 2 * std::numbers::pi);
  for (long v = 1; v < vertices; ++v) {
    angle += rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
    const double len = rng.uniform(size / 8.0, size / 3.0);
    const double nx = std::clamp(x + len * std::cos(angle), 0.0, double(size - 1));
    const double ny = std::clamp(y + len * std::sin(angle), 0.0, double(size - 1));
    const long steps = std::max(1L, static_cast<long>(std::ceil(std::hypot(nx - x, ny - y) * 2)));
    for (long s = 0; s <= steps; ++s) {
      const double t = double(s) / double(steps);
      stamp_disc(g, size, x + t * (nx - x), y + t * (ny - y), radius);
    }
    x = nx;
    y = ny;
  }
}

double fraction(const Grid& g) {
  return static_cast<double>(std::count(g.begin(), g.end(), 1)) / static_cast<double>(g.size());
}

}  // namespace

Tensor<float> generate_mask(std::size_t size, MaskBand band, std::uint64_t seed) {
  if (size < 8) throw ConfigError("mask resolution " + std::to_string(size) + " is too small (minimum 8)");
  const BandRange r = band_range(band);
  Rng rng(derive_seed(seed, "mask"));
  const long n = static_cast<long>(size);
  const double target = rng.uniform(r.lo, r.hi);
  Grid grid(size * size, 0);
  double current = 0;
  constexpr int kMaxRejects = 500;
  int rejects = 0;
  while (current < target) {
    Grid candidate = grid;
    if (rng.uniform() < 0.5) {
      draw_rectangle(candidate, n, rng, target - current);
    } else {
      draw_stroke(candidate, n, rng);
    }
    const double f = fraction(candidate);
    if (f > r.hi + kBandSlack) {
      if (++rejects > kMaxRejects) {
        throw ConfigError("cannot realise mask band " + to_string(band) + " at " +
                          std::to_string(size) + "x" + std::to_string(size));
      }
      continue;
    }
    grid = std::move(candidate);
    current = f;
  }
  Tensor<float> mask(Shape{1, 1, size, size});
  auto m = mask.data();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = grid[i] ? 0.0f : 1.0f;
  return mask;
}

std::vector<Tensor<float>> generate_masks(MaskBand band, std::size_t count, std::uint64_t seed,
                                          std::size_t size) {
  std::vector<Tensor<float>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_mask(size, band, derive_seed(seed, i)));
  return out;
}

double hole_fraction(const Tensor<float>& mask) {
  std::size_t holes = 0;
  for (float v : mask.values()) holes += v == 0.0f;
  return static_cast<double>(holes) / static_cast<double>(mask.numel());
}

SyntheticSample make_sample(std::size_t size, MaskBand band, std::uint64_t seed) {
  SyntheticSample s;
  s.gt = generate_image(size, derive_seed(seed, "gt"));
  s.mask = generate_mask(size, band, derive_seed(seed, "hole"));
  s.masked = Tensor<float>(s.gt.shape());
  auto dst = s.masked.data();
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = s.gt[i] * s.mask[i % plane];
  return s;
}

SyntheticDataset::SyntheticDataset(std::size_t count, std::size_t size, MaskBand band,
                                   std::uint64_t seed) {
  samples_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) samples_.push_back(make_sample(size, band, derive_seed(seed, i)));
}

Batch SyntheticDataset::batch(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ContractError("SyntheticDataset::batch: empty index list");
  const Shape s = samples_.at(indices.front()).gt.shape();
  const std::size_t n = indices.size();
  Batch b{Tensor<float>(Shape{n, 3, s.h, s.w}), Tensor<float>(Shape{n, 1, s.h, s.w}),
          Tensor<float>(Shape{n, 3, s.h, s.w})};
  auto gt = b.gt.data();
  auto mask = b.mask.data();
  auto masked = b.masked.data();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& sample = samples_.at(indices[k]);
    std::copy(sample.gt.values().begin(), sample.gt.values().end(), gt.begin() + k * 3 * s.plane());
    std::copy(sample.mask.values().begin(), sample.mask.values().end(), mask.begin() + k * s.plane());
    std::copy(sample.masked.values().begin(), sample.masked.values().end(),
              masked.begin() + k * 3 * s.plane());
  }
  return b;
}

}  // namespace rfr
