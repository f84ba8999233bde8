#pragma once

// n-gram statistics over token id sequences (n = 1, 2, 3). Windows never
// cross sequence boundaries. Keys pack up to three 21-bit ids.

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "vtlab/common.hpp"

namespace vtlab {

struct NGramHistogram {
  int n = 1;
  std::unordered_map<std::uint64_t, std::uint64_t> counts;
  std::uint64_t total_windows = 0;
  std::uint64_t distinct = 0;
  double coverage = 0.0;  // n=1: distinct/K; n>1: distinct/total_windows

  static std::uint64_t key(std::uint32_t a, std::uint32_t b = 0, std::uint32_t c = 0) {
    return static_cast<std::uint64_t>(a) | (static_cast<std::uint64_t>(b) << 21) |
           (static_cast<std::uint64_t>(c) << 42);
  }
};

inline NGramHistogram ngram_histogram(const std::vector<std::vector<std::uint32_t>>& sequences,
                                      int n, std::uint32_t vocab) {
  if (n < 1 || n > 3) throw config_error("ngram_histogram: n must be 1, 2 or 3");
  if (vocab == 0 || vocab > (1u << 21)) throw config_error("ngram_histogram: bad vocab size");
  NGramHistogram h;
  h.n = n;
  for (const auto& seq : sequences) {
    for (std::uint32_t id : seq)
      if (id >= vocab) throw contract_error("ngram_histogram: id out of vocabulary");
    if (static_cast<int>(seq.size()) < n) continue;
    for (size_t i = 0; i + n <= seq.size(); ++i) {
      std::uint64_t k = NGramHistogram::key(seq[i], n > 1 ? seq[i + 1] : 0,
                                            n > 2 ? seq[i + 2] : 0);
      ++h.counts[k];
      ++h.total_windows;
    }
  }
  h.distinct = h.counts.size();
  if (h.total_windows > 0)
    h.coverage = (n == 1) ? static_cast<double>(h.distinct) / vocab
                          : static_cast<double>(h.distinct) / h.total_windows;
  return h;
}

}  // namespace vtlab
