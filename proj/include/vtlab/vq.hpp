#pragma once

// k-means vector quantizer over raw image patches: the discrete-token
// front end. Frames are [0,1] RGB, row-major; a frame becomes a raster-scan
// grid of patch tokens, each the index of its nearest codebook centroid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vtlab/common.hpp"

namespace vtlab {

struct Frame {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // height*width*3, row-major, values in [0,1]

  float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

inline Frame make_frame(int width, int height, float fill = 0.0f) {
  Frame f;
  f.width = width;
  f.height = height;
  f.data.assign(static_cast<size_t>(width) * height * 3, fill);
  return f;
}

struct PatchMatrix {
  std::int64_t n = 0;  // patches
  std::int64_t d = 0;  // patch_size^2 * 3
  std::vector<float> data;  // n*d row-major

  const float* row(std::int64_t i) const { return data.data() + i * d; }
  float* row(std::int64_t i) { return data.data() + i * d; }
};

struct Codebook {
  std::uint32_t K = 0;
  std::uint32_t D = 0;
  std::vector<float> centroids;  // K*D row-major
  std::uint64_t trained_on = 0;

  const float* centroid(std::uint32_t k) const { return centroids.data() + static_cast<size_t>(k) * D; }
};

struct TokenGrid {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint32_t> ids;  // rows*cols raster order
};

inline PatchMatrix patchify(const Frame& frame, int patch_size) {
  if (patch_size <= 0 || frame.width % patch_size != 0 || frame.height % patch_size != 0)
    throw shape_error("patchify: frame dims not divisible by patch size");
  int gr = frame.height / patch_size;
  int gc = frame.width / patch_size;
  PatchMatrix out;
  out.n = static_cast<std::int64_t>(gr) * gc;
  out.d = static_cast<std::int64_t>(patch_size) * patch_size * 3;
  out.data.resize(out.n * out.d);
  std::int64_t p = 0;
  for (int by = 0; by < gr; ++by)
    for (int bx = 0; bx < gc; ++bx) {
      float* dst = out.row(p++);
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int c = 0; c < 3; ++c)
            *dst++ = frame.at(by * patch_size + y, bx * patch_size + x, c);
    }
  return out;
}

namespace detail {

inline double sq_dist(const float* a, const float* b, std::int64_t d) {
  double s = 0;
  for (std::int64_t i = 0; i < d; ++i) {
    double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += diff * diff;
  }
  return s;
}

}  // namespace detail

struct KMeansResult {
  Codebook codebook;
  std::vector<double> distortion_per_iter;  // mean squared distance, per Lloyd pass
};

// k-means++ seeding then Lloyd iterations. Empty clusters are re-seeded from
// the point farthest from its assigned centroid, so the run is deterministic
// given the seed. The recorded distortion is non-increasing per iteration.
inline KMeansResult fit_codebook_full(const PatchMatrix& patches, std::uint32_t K,
                                      int iters, std::uint64_t seed) {
  if (K < 1) throw config_error("fit_codebook: K must be >= 1");
  if (patches.n < static_cast<std::int64_t>(K))
    throw contract_error("fit_codebook: fewer patches than centroids");
  if (iters < 1) throw config_error("fit_codebook: iters must be >= 1");
  const std::int64_t N = patches.n, D = patches.d;
  Rng rng(seed);

  // k-means++ init (double precision throughout; centroids cast to float at the end).
  std::vector<std::vector<double>> centers(K, std::vector<double>(D));
  std::vector<double> min_d2(N, std::numeric_limits<double>::infinity());
  {
    std::uniform_int_distribution<std::int64_t> first(0, N - 1);
    std::int64_t c0 = first(rng);
    for (std::int64_t j = 0; j < D; ++j) centers[0][j] = patches.row(c0)[j];
    for (std::uint32_t k = 1; k < K; ++k) {
      double total = 0;
      std::vector<float> prev(D);
      for (std::int64_t j = 0; j < D; ++j) prev[j] = static_cast<float>(centers[k - 1][j]);
      for (std::int64_t i = 0; i < N; ++i) {
        double d2 = detail::sq_dist(patches.row(i), prev.data(), D);
        if (d2 < min_d2[i]) min_d2[i] = d2;
        total += min_d2[i];
      }
      std::int64_t pick = 0;
      if (total > 0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng), acc = 0;
        for (std::int64_t i = 0; i < N; ++i) {
          acc += min_d2[i];
          if (acc >= r) { pick = i; break; }
        }
      } else {
        std::uniform_int_distribution<std::int64_t> any(0, N - 1);
        pick = any(rng);
      }
      for (std::int64_t j = 0; j < D; ++j) centers[k][j] = patches.row(pick)[j];
    }
  }

  std::vector<std::uint32_t> assign(N, 0);
  KMeansResult result;
  for (int it = 0; it < iters; ++it) {
    // Assignment (ties to the lowest index).
    double distortion = 0;
    std::vector<float> cf(static_cast<size_t>(K) * D);
    for (std::uint32_t k = 0; k < K; ++k)
      for (std::int64_t j = 0; j < D; ++j) cf[static_cast<size_t>(k) * D + j] = static_cast<float>(centers[k][j]);
    std::vector<double> point_d2(N);
    for (std::int64_t i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t bk = 0;
      for (std::uint32_t k = 0; k < K; ++k) {
        double d2 = detail::sq_dist(patches.row(i), cf.data() + static_cast<size_t>(k) * D, D);
        if (d2 < best) { best = d2; bk = k; }
      }
      assign[i] = bk;
      point_d2[i] = best;
      distortion += best;
    }
    result.distortion_per_iter.push_back(distortion / N);

    // Update.
    std::vector<std::int64_t> count(K, 0);
    for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
    for (std::int64_t i = 0; i < N; ++i) {
      ++count[assign[i]];
      const float* p = patches.row(i);
      auto& c = centers[assign[i]];
      for (std::int64_t j = 0; j < D; ++j) c[j] += p[j];
    }
    bool any_empty = false;
    for (std::uint32_t k = 0; k < K; ++k) any_empty = any_empty || count[k] == 0;
    std::vector<std::int64_t> by_dist;
    if (any_empty) {
      by_dist.resize(N);
      for (std::int64_t i = 0; i < N; ++i) by_dist[i] = i;
      std::sort(by_dist.begin(), by_dist.end(), [&](std::int64_t a, std::int64_t b) {
        return point_d2[a] != point_d2[b] ? point_d2[a] > point_d2[b] : a < b;
      });
    }
    size_t next_far = 0;
    for (std::uint32_t k = 0; k < K; ++k) {
      if (count[k] > 0) {
        for (std::int64_t j = 0; j < D; ++j) centers[k][j] /= count[k];
      } else {
        // Re-seed from the farthest point; successive empties take successive
        // farthest points so no two centroids coincide.
        std::int64_t far_i = by_dist[next_far++ % by_dist.size()];
        for (std::int64_t j = 0; j < D; ++j) centers[k][j] = patches.row(far_i)[j];
      }
    }
  }

  Codebook cb;
  cb.K = K;
  cb.D = static_cast<std::uint32_t>(D);
  cb.trained_on = static_cast<std::uint64_t>(N);
  cb.centroids.resize(static_cast<size_t>(K) * D);
  for (std::uint32_t k = 0; k < K; ++k)
    for (std::int64_t j = 0; j < D; ++j)
      cb.centroids[static_cast<size_t>(k) * D + j] = static_cast<float>(centers[k][j]);
  result.codebook = std::move(cb);
  return result;
}

inline Codebook fit_codebook(const PatchMatrix& patches, std::uint32_t K, int iters,
                             std::uint64_t seed) {
  return fit_codebook_full(patches, K, iters, seed).codebook;
}

inline std::uint32_t nearest_centroid(const Codebook& cb, const float* patch) {
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t bk = 0;
  for (std::uint32_t k = 0; k < cb.K; ++k) {
    double d2 = detail::sq_dist(patch, cb.centroid(k), cb.D);
    if (d2 < best) { best = d2; bk = k; }
  }
  return bk;
}

inline TokenGrid encode_frame(const Frame& frame, const Codebook& cb, int patch_size) {
  auto patches = patchify(frame, patch_size);
  if (patches.d != static_cast<std::int64_t>(cb.D))
    throw shape_error("encode_frame: patch dim " + std::to_string(patches.d) +
                      " != codebook D " + std::to_string(cb.D));
  TokenGrid grid;
  grid.rows = frame.height / patch_size;
  grid.cols = frame.width / patch_size;
  grid.ids.resize(patches.n);
  for (std::int64_t i = 0; i < patches.n; ++i) grid.ids[i] = nearest_centroid(cb, patches.row(i));
  return grid;
}

inline Frame decode_tokens(const TokenGrid& grid, const Codebook& cb, int patch_size) {
  Frame frame = make_frame(grid.cols * patch_size, grid.rows * patch_size);
  for (int by = 0; by < grid.rows; ++by)
    for (int bx = 0; bx < grid.cols; ++bx) {
      std::uint32_t id = grid.ids[static_cast<size_t>(by) * grid.cols + bx];
      if (id >= cb.K) throw contract_error("decode_tokens: id out of vocabulary");
      const float* c = cb.centroid(id);
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int ch = 0; ch < 3; ++ch)
            frame.at(by * patch_size + y, bx * patch_size + x, ch) = *c++;
    }
  return frame;
}

// Per-patch standardization: mean 0, unit variance (constant patches map to
// zeros). Targets for the continuous patch-regression pathway.
inline PatchMatrix patch_normalize(const PatchMatrix& patches) {
  PatchMatrix out = patches;
  for (std::int64_t i = 0; i < out.n; ++i) {
    float* r = out.row(i);
    double mean = 0;
    for (std::int64_t j = 0; j < out.d; ++j) mean += r[j];
    mean /= out.d;
    double var = 0;
    for (std::int64_t j = 0; j < out.d; ++j) {
      double c = r[j] - mean;
      var += c * c;
    }
    var /= out.d;
    double inv = 1.0 / std::sqrt(var + 1e-6);
    for (std::int64_t j = 0; j < out.d; ++j)
      r[j] = static_cast<float>((r[j] - mean) * inv);
  }
  return out;
}

}  // namespace vtlab
