#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vtlab/ngram.hpp"
#include "vtlab/vq.hpp"

using namespace vtlab;
using Catch::Approx;

namespace {

Frame random_frame(int w, int h, Rng& rng) {
  Frame f = make_frame(w, h);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : f.data) v = u(rng);
  return f;
}

}  // namespace

TEST_CASE("patchify geometry") {
  Rng rng(1);
  auto f = random_frame(128, 128, rng);
  auto p = patchify(f, 8);
  CHECK(p.n == 256);  // 16x16 grid per frame
  CHECK(p.d == 192);

  auto tiny = random_frame(8, 8, rng);
  auto tp = patchify(tiny, 8);
  CHECK(tp.n == 1);
  CHECK(std::vector<float>(tp.row(0), tp.row(0) + tp.d) == tiny.data);

  CHECK_THROWS_AS(patchify(random_frame(10, 8, rng), 8), shape_error);
}

TEST_CASE("patchify matches loop-based index oracle") {
  Rng rng(2);
  auto f = random_frame(16, 8, rng);
  auto p = patchify(f, 8);
  CHECK(p.n == 2);
  // patch 0 is the left half
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(p.row(0)[(y * 8 + x) * 3 + c] == f.at(y, x, c));
  // generic oracle on a second frame
  auto g = random_frame(24, 16, rng);
  auto q = patchify(g, 8);
  for (std::int64_t i = 0; i < q.n; ++i) {
    int by = static_cast<int>(i) / 3, bx = static_cast<int>(i) % 3;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c)
          REQUIRE(q.row(i)[(y * 8 + x) * 3 + c] == g.at(by * 8 + y, bx * 8 + x, c));
  }
}

TEST_CASE("k-means recovers well-separated cloud means") {
  Rng rng(3);
  // 4 clouds at corners of a hypercube region, tight spread
  PatchMatrix pts;
  pts.n = 400;
  pts.d = 12;
  pts.data.resize(pts.n * pts.d);
  std::vector<std::vector<double>> means(4, std::vector<double>(12, 0.0));
  std::normal_distribution<float> noise(0.0f, 1e-8f);
  for (std::int64_t i = 0; i < pts.n; ++i) {
    int c = static_cast<int>(i % 4);
    for (std::int64_t j = 0; j < 12; ++j) {
      float v = static_cast<float>(10.0 * c + (j == 0 ? 1.0 : 0.0)) + noise(rng);
      pts.row(i)[j] = v;
      means[c][j] += v / 100.0;
    }
  }
  auto cb = fit_codebook(pts, 4, 20, 42);
  // match each centroid to its nearest true mean
  for (std::uint32_t k = 0; k < 4; ++k) {
    double best = 1e18;
    for (int c = 0; c < 4; ++c) {
      double d = 0;
      for (int j = 0; j < 12; ++j) {
        double diff = cb.centroid(k)[j] - means[c][j];
        d += diff * diff;
      }
      best = std::min(best, d);
    }
    CHECK(std::sqrt(best) < 1e-6);
  }
}

TEST_CASE("k-means trivial cases") {
  PatchMatrix pts;
  pts.n = 5;
  pts.d = 3;
  pts.data.assign(15, 0.25f);
  auto cb = fit_codebook(pts, 1, 3, 0);
  for (int j = 0; j < 3; ++j) CHECK(cb.centroid(0)[j] == Approx(0.25f));

  // K = N: zero quantization error
  PatchMatrix distinct;
  distinct.n = 4;
  distinct.d = 2;
  distinct.data = {0, 0, 1, 0, 0, 1, 5, 5};
  auto res = fit_codebook_full(distinct, 4, 8, 7);
  CHECK(res.distortion_per_iter.back() == Approx(0.0).margin(1e-12));

  CHECK_THROWS_AS(fit_codebook(distinct, 5, 3, 0), contract_error);
}

TEST_CASE("k-means distortion is non-increasing and deterministic") {
  Rng rng(5);
  PatchMatrix pts;
  pts.n = 300;
  pts.d = 6;
  pts.data.resize(pts.n * pts.d);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : pts.data) v = u(rng);
  auto r1 = fit_codebook_full(pts, 16, 15, 99);
  for (size_t i = 1; i < r1.distortion_per_iter.size(); ++i)
    CHECK(r1.distortion_per_iter[i] <= r1.distortion_per_iter[i - 1] + 1e-12);
  auto r2 = fit_codebook_full(pts, 16, 15, 99);
  CHECK(r1.codebook.centroids == r2.codebook.centroids);
}

TEST_CASE("encode of tiled centroid returns that id everywhere") {
  Rng rng(6);
  PatchMatrix pts;
  pts.n = 64;
  pts.d = 12;  // patch_size 2
  pts.data.resize(pts.n * pts.d);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : pts.data) v = u(rng);
  auto cb = fit_codebook(pts, 8, 10, 1);

  Frame f = make_frame(8, 8);
  for (int by = 0; by < 4; ++by)
    for (int bx = 0; bx < 4; ++bx) {
      const float* c = cb.centroid(7);
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
          for (int ch = 0; ch < 3; ++ch)
            f.at(by * 2 + y, bx * 2 + x, ch) = *c++;
    }
  auto grid = encode_frame(f, cb, 2);
  for (auto id : grid.ids) CHECK(id == 7);
}

TEST_CASE("encode matches brute-force nearest neighbor oracle") {
  Rng rng(7);
  PatchMatrix pts;
  pts.n = 200;
  pts.d = 12;
  pts.data.resize(pts.n * pts.d);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : pts.data) v = u(rng);
  auto cb = fit_codebook(pts, 17, 8, 2);

  for (int trial = 0; trial < 100; ++trial) {
    auto f = random_frame(8, 8, rng);
    auto grid = encode_frame(f, cb, 2);
    auto patches = patchify(f, 2);
    for (std::int64_t i = 0; i < patches.n; ++i) {
      double best = 1e300;
      std::uint32_t bk = 0;
      for (std::uint32_t k = 0; k < cb.K; ++k) {
        double d = 0;
        for (std::int64_t j = 0; j < patches.d; ++j) {
          double diff = static_cast<double>(patches.row(i)[j]) - cb.centroid(k)[j];
          d += diff * diff;
        }
        if (d < best) { best = d; bk = k; }
      }
      REQUIRE(grid.ids[i] == bk);
    }
  }
}

TEST_CASE("encode breaks ties by lowest index") {
  Codebook cb;
  cb.K = 3;
  cb.D = 3;
  cb.centroids = {0, 0, 0, 1, 1, 1, 0, 0, 0};  // #0 and #2 identical
  Frame f = make_frame(1, 1);
  f.at(0, 0, 0) = f.at(0, 0, 1) = f.at(0, 0, 2) = 0.0f;
  auto grid = encode_frame(f, cb, 1);
  CHECK(grid.ids[0] == 0);
}

TEST_CASE("encode rejects dimension mismatch") {
  Codebook cb;
  cb.K = 2;
  cb.D = 12;
  cb.centroids.assign(24, 0.0f);
  Frame f = make_frame(8, 8);
  CHECK_THROWS_AS(encode_frame(f, cb, 1), shape_error);
}

TEST_CASE("decode then encode is idempotent") {
  Rng rng(8);
  PatchMatrix pts;
  pts.n = 150;
  pts.d = 27;  // patch_size 3
  pts.data.resize(pts.n * pts.d);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : pts.data) v = u(rng);
  auto cb = fit_codebook(pts, 11, 10, 3);

  std::uniform_int_distribution<std::uint32_t> pick(0, 10);
  for (int trial = 0; trial < 20; ++trial) {
    TokenGrid grid;
    grid.rows = 4;
    grid.cols = 5;
    for (int i = 0; i < 20; ++i) grid.ids.push_back(pick(rng));
    auto frame = decode_tokens(grid, cb, 3);
    auto back = encode_frame(frame, cb, 3);
    REQUIRE(back.ids == grid.ids);
  }

  TokenGrid bad;
  bad.rows = bad.cols = 1;
  bad.ids = {11};
  CHECK_THROWS_AS(decode_tokens(bad, cb, 3), contract_error);

  // single-id grid decodes to a tiling of that centroid
  TokenGrid one;
  one.rows = one.cols = 2;
  one.ids = {4, 4, 4, 4};
  auto fr = decode_tokens(one, cb, 3);
  auto p = patchify(fr, 3);
  for (std::int64_t i = 0; i < p.n; ++i)
    for (std::int64_t j = 0; j < p.d; ++j) REQUIRE(p.row(i)[j] == cb.centroid(4)[j]);
}

TEST_CASE("round-trip reconstruction error is bounded by the k-means distortion") {
  Rng rng(9);
  PatchMatrix pts;
  pts.n = 240;
  pts.d = 12;
  pts.data.resize(pts.n * pts.d);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : pts.data) v = u(rng);
  auto res = fit_codebook_full(pts, 13, 12, 4);
  const auto& cb = res.codebook;

  double mse = 0;
  for (std::int64_t i = 0; i < pts.n; ++i) {
    auto k = nearest_centroid(cb, pts.row(i));
    for (std::int64_t j = 0; j < pts.d; ++j) {
      double diff = pts.row(i)[j] - cb.centroid(k)[j];
      mse += diff * diff;
    }
  }
  mse /= pts.n;
  // final recorded distortion was measured one update before the end; the
  // current assignment can only be at least as good
  CHECK(mse <= res.distortion_per_iter.back() + 1e-9);
}

TEST_CASE("patch_normalize") {
  PatchMatrix pts;
  pts.n = 3;
  pts.d = 6;
  pts.data = {0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f,   // constant
              0, 1, 0, 1, 0, 1,                     // binary
              0.1f, 0.9f, 0.3f, 0.7f, 0.2f, 0.4f};  // generic
  auto out = patch_normalize(pts);
  for (int j = 0; j < 6; ++j) CHECK(out.row(0)[j] == Approx(0.0f));
  for (std::int64_t i = 1; i < 3; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 6; ++j) mean += out.row(i)[j];
    mean /= 6;
    for (int j = 0; j < 6; ++j) var += (out.row(i)[j] - mean) * (out.row(i)[j] - mean);
    var /= 6;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("ngram counts and coverage") {
  NGramHistogram h = ngram_histogram({{5}}, 1, 512);
  CHECK(h.coverage == Approx(1.0 / 512));
  CHECK(h.total_windows == 1);

  auto h2 = ngram_histogram({{1, 2, 1, 2}}, 2, 512);
  CHECK(h2.counts.at(NGramHistogram::key(1, 2)) == 2);
  CHECK(h2.counts.at(NGramHistogram::key(2, 1)) == 1);
  CHECK(h2.total_windows == 3);

  // full-coverage corpus
  std::vector<std::uint32_t> all(16);
  for (std::uint32_t i = 0; i < 16; ++i) all[i] = i;
  CHECK(ngram_histogram({all}, 1, 16).coverage == Approx(1.0));

  // empty input
  auto he = ngram_histogram({}, 2, 16);
  CHECK(he.total_windows == 0);
  CHECK(he.coverage == 0.0);

  CHECK_THROWS_AS(ngram_histogram({{1}}, 4, 16), config_error);
  CHECK_THROWS_AS(ngram_histogram({{20}}, 1, 16), contract_error);
}

TEST_CASE("ngram window total equals sum of len-n+1") {
  Rng rng(10);
  std::vector<std::vector<std::uint32_t>> seqs;
  std::uint64_t expect2 = 0, expect3 = 0;
  std::uniform_int_distribution<int> len(0, 12);
  std::uniform_int_distribution<std::uint32_t> tok(0, 31);
  for (int s = 0; s < 40; ++s) {
    std::vector<std::uint32_t> seq(len(rng));
    for (auto& t : seq) t = tok(rng);
    if (seq.size() >= 2) expect2 += seq.size() - 1;
    if (seq.size() >= 3) expect3 += seq.size() - 2;
    seqs.push_back(std::move(seq));
  }
  auto sum_counts = [](const NGramHistogram& h) {
    std::uint64_t s = 0;
    for (auto& [k, c] : h.counts) s += c;
    return s;
  };
  auto h2 = ngram_histogram(seqs, 2, 32);
  auto h3 = ngram_histogram(seqs, 3, 32);
  CHECK(h2.total_windows == expect2);
  CHECK(sum_counts(h2) == expect2);
  CHECK(h3.total_windows == expect3);
  CHECK(sum_counts(h3) == expect3);
}
