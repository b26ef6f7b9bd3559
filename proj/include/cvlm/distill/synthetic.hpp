#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cvlm/model/dense.hpp"
#include "cvlm/numkit/random.hpp"

namespace cvlm::distill {

struct DistillSample {
  VisualInput<double> input;
  std::vector<TokenId> prompt;
  std::uint64_t seed = 0;
};

inline constexpr double kPatchClamp = 3.0;
inline constexpr std::size_t kPaletteAtoms = 6;

/// Channel basis shared by every sample of a data domain. Per-sample colors
/// are mixtures of these atoms, so images differ in layout and mix but share
/// low-rank channel statistics the way natural images do.
inline num::Matrix domain_palette(const PipelineConfig& cfg) {
  num::Rng rng(cfg.seed ^ 0xc2b2ae3d27d4eb4fULL);
  return rng.gaussian(kPaletteAtoms, cfg.visual_dim, 1.0 / std::sqrt(static_cast<double>(kPaletteAtoms)));
}

/// One image-like patch grid: a per-channel linear ramp across the grid mixed
/// with piecewise-constant blocks, plus light noise, clamped to ±3. Colors
/// are drawn in palette coordinates.
inline DistillSample make_sample(std::uint64_t seed, const PipelineConfig& cfg, const num::Matrix& palette) {
  num::Rng rng(seed);
  const std::size_t h = cfg.grid_h, w = cfg.grid_w, d = cfg.visual_dim;
  const std::size_t bh = 1 + rng.index(std::max<std::size_t>(1, h / 2));
  const std::size_t bw = 1 + rng.index(std::max<std::size_t>(1, w / 2));
  const std::size_t blocks_y = (h + bh - 1) / bh, blocks_x = (w + bw - 1) / bw;
  const double mix = rng.uniform(0.0, 1.0);
  auto colors = [&](std::size_t n, double sd) { return num::matmul(rng.gaussian(n, kPaletteAtoms, sd), palette); };
  num::Matrix levels = colors(blocks_y * blocks_x, 1.0);
  num::Matrix gy = colors(1, 1.5), gx = colors(1, 1.5), offset = colors(1, 0.5);

  DistillSample s;
  s.seed = seed;
  s.input = {num::Matrix(h * w, d), h, w};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = h > 1 ? static_cast<double>(y) / (h - 1) - 0.5 : 0.0;
      const double v = w > 1 ? static_cast<double>(x) / (w - 1) - 0.5 : 0.0;
      const std::size_t block = (y / bh) * blocks_x + x / bw;
      for (std::size_t c = 0; c < d; ++c) {
        const double smooth = offset(0, c) + gy(0, c) * u + gx(0, c) * v;
        const double val = (1 - mix) * smooth + mix * levels(block, c) + rng.normal(0.05);
        s.input.patches(y * w + x, c) = std::clamp(val, -kPatchClamp, kPatchClamp);
      }
    }
  s.prompt.resize(cfg.text_len);
  for (auto& t : s.prompt) t = rng.index(cfg.vocab);
  return s;
}

/// n samples; sample i is generated from the i-th draw of a generator seeded
/// with `seed`, so any prefix of a larger set is reproducible on its own.
inline std::vector<DistillSample> gen_synthetic(std::uint64_t seed, std::size_t n, const PipelineConfig& cfg) {
  if (n == 0) throw std::invalid_argument("gen_synthetic: n must be at least 1");
  num::Rng rng(seed);
  std::vector<DistillSample> out;
  out.reserve(n);
  const auto palette = domain_palette(cfg);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(rng.next(), cfg, palette));
  return out;
}

}  // namespace cvlm::distill
