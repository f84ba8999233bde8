#pragma once

// Training sequence assembly: token grids from T frames are packed
// frame-major between a modality start token and an end token. Content ids
// are offset past the special range so the two never collide.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vtlab/common.hpp"
#include "vtlab/vq.hpp"

namespace vtlab {

// id 0 is reserved
inline constexpr std::uint32_t START_VIDEO = 1;
inline constexpr std::uint32_t END_TOKEN = 2;
inline constexpr std::uint32_t START_IMAGE = 3;
inline constexpr std::uint32_t NUM_SPECIALS = 4;

enum class Modality { Video, Image };

struct TokenSequence {
  Modality modality = Modality::Video;
  std::vector<std::uint32_t> ids;  // start, offset content, end
  std::uint32_t content_len = 0;
  std::string source;
};

namespace detail {

inline TokenSequence pack_grids(const std::vector<TokenGrid>& grids, std::uint32_t start_token,
                                Modality modality) {
  if (grids.empty()) throw contract_error("sequence builder: no grids");
  for (const auto& g : grids)
    if (g.rows != grids[0].rows || g.cols != grids[0].cols)
      throw shape_error("sequence builder: inconsistent grid shapes");
  TokenSequence seq;
  seq.modality = modality;
  seq.ids.reserve(2 + grids.size() * grids[0].ids.size());
  seq.ids.push_back(start_token);
  for (const auto& g : grids)
    for (std::uint32_t id : g.ids) seq.ids.push_back(id + NUM_SPECIALS);
  seq.ids.push_back(END_TOKEN);
  seq.content_len = static_cast<std::uint32_t>(seq.ids.size() - 2);
  return seq;
}

}  // namespace detail

// Video: frames of one clip, frame-major raster order, start token [1].
inline TokenSequence build_video_sequence(const std::vector<TokenGrid>& grids) {
  return detail::pack_grids(grids, START_VIDEO, Modality::Video);
}

// Image pack: independent images in one context, start token [3].
inline TokenSequence build_image_sequence(const std::vector<TokenGrid>& grids) {
  return detail::pack_grids(grids, START_IMAGE, Modality::Image);
}

struct MixtureSpec {
  std::vector<std::pair<std::string, double>> entries;

  void validate() const {
    double sum = 0;
    for (const auto& [tag, w] : entries) {
      if (w <= 0) throw config_error("mixture: non-positive weight for " + tag);
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw config_error("mixture: weights must sum to 1");
  }
};

inline MixtureSpec default_mixture() {
  return MixtureSpec{{{"imagenet-like", 0.2}, {"ego-like", 0.1}, {"kinetics-like", 0.1},
                      {"howto-like", 0.6}}};
}

// Deterministic weighted draw over per-dataset pools.
class MixtureSampler {
 public:
  MixtureSampler(MixtureSpec spec, std::map<std::string, std::vector<TokenSequence>> pools,
                 std::uint64_t seed)
      : spec_(std::move(spec)), pools_(std::move(pools)), rng_(seed) {
    spec_.validate();
    cumulative_.reserve(spec_.entries.size());
    double acc = 0;
    for (const auto& [tag, w] : spec_.entries) {
      auto it = pools_.find(tag);
      if (it == pools_.end() || it->second.empty())
        throw config_error("mixture: empty pool for " + tag);
      acc += w;
      cumulative_.push_back(acc);
    }
  }

  const TokenSequence& next() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng_) * cumulative_.back();
    size_t idx = 0;
    while (idx + 1 < cumulative_.size() && r >= cumulative_[idx]) ++idx;
    const auto& pool = pools_.at(spec_.entries[idx].first);
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    return pool[pick(rng_)];
  }

 private:
  MixtureSpec spec_;
  std::map<std::string, std::vector<TokenSequence>> pools_;
  std::vector<double> cumulative_;
  Rng rng_;
};

}  // namespace vtlab
