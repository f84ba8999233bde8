#pragma once

// Non-parametric downstream evaluation: label propagation over patch features
// and grid-level mask quality metrics (region IoU J, boundary F).

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "vtlab/common.hpp"
#include "vtlab/model.hpp"
#include "vtlab/sequence.hpp"
#include "vtlab/sprites.hpp"

namespace vtlab {

template <class T>
struct FeatureGrid {
  long rows = 0, cols = 0, dim = 0;
  std::vector<T> data;  // rows*cols*dim, row-major patches

  const T* at(long r, long c) const { return data.data() + (r * cols + c) * dim; }
  T* at(long r, long c) { return data.data() + (r * cols + c) * dim; }
};

// Tap-l activations of every content token, reshaped to the token grid of
// each frame. The packed sequence runs through the backbone once.
template <class T>
std::vector<FeatureGrid<T>> extract_patch_features(const ModelConfig& cfg,
                                                   const ModelParams<T>& params,
                                                   const std::vector<TokenGrid>& frames,
                                                   long layer) {
  if (layer < 1 || layer > cfg.n_layers) throw config_error("features: layer out of range");
  if (frames.empty()) throw contract_error("features: no frames");
  auto seq = build_video_sequence(frames);
  std::vector<int> ids(seq.ids.begin(), seq.ids.end());
  auto out = forward(ids, cfg, params, /*want_taps=*/true);
  const auto& tap = out.taps.at(layer);

  long rows = frames[0].rows, cols = frames[0].cols;
  long per_frame = rows * cols;
  std::vector<FeatureGrid<T>> grids;
  for (size_t f = 0; f < frames.size(); ++f) {
    FeatureGrid<T> g;
    g.rows = rows;
    g.cols = cols;
    g.dim = cfg.dim;
    long base = (1 + static_cast<long>(f) * per_frame) * cfg.dim;
    g.data.assign(tap.begin() + base, tap.begin() + base + per_frame * cfg.dim);
    grids.push_back(std::move(g));
  }
  return grids;
}

namespace detail {

template <class T>
double cosine(const T* a, const T* b, long dim) {
  double dot = 0, na = 0, nb = 0;
  for (long d = 0; d < dim; ++d) {
    dot += static_cast<double>(a[d]) * b[d];
    na += static_cast<double>(a[d]) * a[d];
    nb += static_cast<double>(b[d]) * b[d];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0 ? dot / denom : 0.0;
}

}  // namespace detail

// Frame 0 keeps the ground-truth mask. Every later patch pulls label mass
// from its top-k cosine neighbors among the previous n frames, softmaxed at
// the given temperature; ties in the accumulated mass go to the lower label.
template <class T>
std::vector<PixelMask> propagate_labels(const std::vector<FeatureGrid<T>>& features,
                                        const PixelMask& mask0, long context_frames = 7,
                                        long top_k = 7, double temperature = 0.07) {
  if (features.empty()) throw contract_error("propagate: no features");
  long rows = features[0].rows, cols = features[0].cols, dim = features[0].dim;
  if (mask0.height != rows || mask0.width != cols)
    throw shape_error("propagate: mask does not match the feature grid");
  if (top_k < 1 || context_frames < 1) throw config_error("propagate: bad context/k");

  std::vector<PixelMask> masks(features.size());
  masks[0] = mask0;
  for (size_t t = 1; t < features.size(); ++t) {
    masks[t].width = static_cast<int>(cols);
    masks[t].height = static_cast<int>(rows);
    masks[t].labels.assign(static_cast<size_t>(rows) * cols, 0);
    long first = std::max<long>(0, static_cast<long>(t) - context_frames);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) {
        const T* q = features[t].at(r, c);
        // (similarity, label) over every patch in the context window
        std::vector<std::pair<double, int>> sims;
        for (long s = first; s < static_cast<long>(t); ++s)
          for (long rr = 0; rr < rows; ++rr)
            for (long cc = 0; cc < cols; ++cc)
              sims.push_back({detail::cosine(q, features[s].at(rr, cc), dim),
                              masks[s].at(static_cast<int>(rr), static_cast<int>(cc))});
        long k = std::min<long>(top_k, static_cast<long>(sims.size()));
        std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        double mx = sims[0].first;
        std::map<int, double> mass;
        for (long i = 0; i < k; ++i)
          mass[sims[i].second] += std::exp((sims[i].first - mx) / temperature);
        int best = 0;
        double best_mass = -1;
        for (const auto& [label, m] : mass)
          if (m > best_mass) {
            best_mass = m;
            best = label;
          }
        masks[t].at(static_cast<int>(r), static_cast<int>(c)) = static_cast<std::uint16_t>(best);
      }
  }
  return masks;
}

struct MaskScore {
  double J = 0;  // mean region IoU over objects and frames
  double F = 0;  // mean boundary F-measure
  double JF = 0;
  std::vector<int> empty_objects;  // GT labels skipped as empty
};

namespace detail {

inline bool is_boundary(const PixelMask& m, int y, int x, int label) {
  if (m.at(y, x) != label) return false;
  if (y == 0 || x == 0 || y == m.height - 1 || x == m.width - 1) return true;
  return m.at(y - 1, x) != label || m.at(y + 1, x) != label ||
         m.at(y, x - 1) != label || m.at(y, x + 1) != label;
}

// fraction of boundary cells of `a` within 1-cell Chebyshev distance of a
// boundary cell of `b`
inline double boundary_match(const PixelMask& a, const PixelMask& b, int label) {
  int total = 0, hit = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!is_boundary(a, y, x, label)) continue;
      ++total;
      bool found = false;
      for (int dy = -1; dy <= 1 && !found; ++dy)
        for (int dx = -1; dx <= 1 && !found; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= b.height || xx >= b.width) continue;
          found = is_boundary(b, yy, xx, label);
        }
      if (found) ++hit;
    }
  return total > 0 ? static_cast<double>(hit) / total : 1.0;
}

}  // namespace detail

// J and F averaged over every non-background ground-truth object and every
// frame. Objects empty in the ground truth across all frames are skipped and
// reported.
inline MaskScore eval_masks(const std::vector<PixelMask>& predicted,
                            const std::vector<PixelMask>& ground_truth) {
  if (predicted.size() != ground_truth.size() || predicted.empty())
    throw shape_error("eval_masks: frame count mismatch");
  for (size_t t = 0; t < predicted.size(); ++t)
    if (predicted[t].width != ground_truth[t].width ||
        predicted[t].height != ground_truth[t].height)
      throw shape_error("eval_masks: geometry mismatch");

  // candidate objects come from both masks; those absent from the ground
  // truth everywhere are excluded and reported
  std::vector<int> candidates, labels;
  auto collect = [&](const std::vector<PixelMask>& masks) {
    for (const auto& m : masks)
      for (auto l : m.labels)
        if (l > 0 && std::find(candidates.begin(), candidates.end(), l) == candidates.end())
          candidates.push_back(l);
  };
  collect(ground_truth);
  collect(predicted);
  std::sort(candidates.begin(), candidates.end());
  MaskScore score;
  for (int label : candidates) {
    bool seen = false;
    for (const auto& m : ground_truth)
      for (auto l : m.labels) seen = seen || l == label;
    if (seen)
      labels.push_back(label);
    else
      score.empty_objects.push_back(label);
  }

  double jsum = 0, fsum = 0;
  long terms = 0;
  for (int label : labels) {
    for (size_t t = 0; t < predicted.size(); ++t) {
      long inter = 0, uni = 0, gt_count = 0;
      for (size_t i = 0; i < predicted[t].labels.size(); ++i) {
        bool p = predicted[t].labels[i] == label;
        bool g = ground_truth[t].labels[i] == label;
        inter += p && g;
        uni += p || g;
        gt_count += g;
      }
      if (gt_count == 0) continue;  // per-frame empty object
      jsum += static_cast<double>(inter) / uni;
      double prec = detail::boundary_match(predicted[t], ground_truth[t], label);
      double rec = detail::boundary_match(ground_truth[t], predicted[t], label);
      fsum += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      ++terms;
    }
  }
  if (terms == 0) throw contract_error("eval_masks: no non-empty ground-truth objects");
  score.J = jsum / terms;
  score.F = fsum / terms;
  score.JF = 0.5 * (score.J + score.F);
  return score;
}

}  // namespace vtlab
