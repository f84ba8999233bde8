#pragma once

// Synthetic sprite videos: solid shapes moving at constant velocity with
// reflective bounce on a black background, plus exact per-frame label masks.
// Stand-in data source for probing, tracking, and redundancy studies.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vtlab/common.hpp"
#include "vtlab/vq.hpp"

namespace vtlab {

enum class SpriteShape { Square, Cross, Diamond };
inline constexpr int kNumSpriteShapes = 3;

struct Sprite {
  SpriteShape shape = SpriteShape::Square;
  std::array<float, 3> color = {1.0f, 1.0f, 1.0f};
  int size = 8;           // bounding box in pixels
  double x = 0, y = 0;    // top-left corner
  double vx = 0, vy = 0;  // pixels per frame
  bool random_start = false;
};

struct SpriteVideoSpec {
  int frames = 16;
  int width = 64;
  int height = 64;
  std::vector<Sprite> sprites;
  int label = 0;  // class id for probing tasks
};

struct PixelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> labels;  // 0 = background, i+1 = sprite i

  std::uint16_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
  std::uint16_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
};

struct SpriteVideo {
  std::vector<Frame> frames;
  std::vector<PixelMask> masks;
  int label = 0;
};

namespace detail {

inline bool sprite_covers(const Sprite& s, int px, int py, int ox, int oy) {
  int lx = px - ox, ly = py - oy;
  if (lx < 0 || ly < 0 || lx >= s.size || ly >= s.size) return false;
  switch (s.shape) {
    case SpriteShape::Square:
      return true;
    case SpriteShape::Cross: {
      int third = s.size / 3;
      return (lx >= third && lx < s.size - third) || (ly >= third && ly < s.size - third);
    }
    case SpriteShape::Diamond: {
      double c = (s.size - 1) / 2.0;
      return std::abs(lx - c) + std::abs(ly - c) <= c + 1e-9;
    }
  }
  return false;
}

// One reflective-bounce step along an axis with valid range [0, limit].
inline void bounce(double& pos, double& vel, double limit) {
  pos += vel;
  while (pos < 0 || pos > limit) {
    if (pos < 0) {
      pos = -pos;
      vel = -vel;
    } else {
      pos = 2 * limit - pos;
      vel = -vel;
    }
  }
}

}  // namespace detail

inline SpriteVideo synth_video(const SpriteVideoSpec& spec, Rng& rng) {
  if (spec.frames < 1) throw config_error("synth_video: need at least one frame");
  SpriteVideo video;
  video.label = spec.label;
  std::vector<Sprite> sprites = spec.sprites;
  for (auto& s : sprites) {
    if (s.size > spec.width || s.size > spec.height)
      throw config_error("synth_video: sprite larger than frame");
    if (s.random_start) {
      std::uniform_real_distribution<double> ux(0.0, spec.width - s.size);
      std::uniform_real_distribution<double> uy(0.0, spec.height - s.size);
      s.x = ux(rng);
      s.y = uy(rng);
    }
  }
  for (int t = 0; t < spec.frames; ++t) {
    Frame frame = make_frame(spec.width, spec.height);
    PixelMask mask;
    mask.width = spec.width;
    mask.height = spec.height;
    mask.labels.assign(static_cast<size_t>(spec.width) * spec.height, 0);
    for (size_t si = 0; si < sprites.size(); ++si) {
      const Sprite& s = sprites[si];
      int ox = static_cast<int>(std::lround(s.x));
      int oy = static_cast<int>(std::lround(s.y));
      for (int y = oy; y < oy + s.size; ++y)
        for (int x = ox; x < ox + s.size; ++x) {
          if (x < 0 || y < 0 || x >= spec.width || y >= spec.height) continue;
          if (!detail::sprite_covers(s, x, y, ox, oy)) continue;
          for (int c = 0; c < 3; ++c) frame.at(y, x, c) = s.color[c];
          mask.at(y, x) = static_cast<std::uint16_t>(si + 1);
        }
    }
    video.frames.push_back(std::move(frame));
    video.masks.push_back(std::move(mask));
    for (auto& s : sprites) {
      detail::bounce(s.x, s.vx, spec.width - s.size);
      detail::bounce(s.y, s.vy, spec.height - s.size);
    }
  }
  return video;
}

// Token-grid label mask: each cell takes the label of the patch-center pixel.
inline PixelMask downsample_mask(const PixelMask& mask, int patch_size) {
  PixelMask out;
  out.width = mask.width / patch_size;
  out.height = mask.height / patch_size;
  out.labels.assign(static_cast<size_t>(out.width) * out.height, 0);
  for (int gy = 0; gy < out.height; ++gy)
    for (int gx = 0; gx < out.width; ++gx) {
      // majority label over the patch
      int best_label = 0, best_count = 0;
      std::vector<int> count(kNumSpriteShapes + 2, 0);
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x) {
          int l = mask.at(gy * patch_size + y, gx * patch_size + x);
          if (l >= static_cast<int>(count.size())) count.resize(l + 1, 0);
          ++count[l];
        }
      for (size_t l = 0; l < count.size(); ++l)
        if (count[l] > best_count) { best_count = count[l]; best_label = static_cast<int>(l); }
      out.at(gy, gx) = static_cast<std::uint16_t>(best_label);
    }
  return out;
}

}  // namespace vtlab
