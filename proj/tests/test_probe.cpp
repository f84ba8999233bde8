#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "vtlab/gradcheck.hpp"
#include "vtlab/probe.hpp"
#include "vtlab/sequence.hpp"

using namespace vtlab;
using Catch::Approx;

namespace {

// Gaussian class clusters: tokens of sample i drawn around a class mean.
struct ClusterSet {
  std::vector<Tensor<double>> feats;
  std::vector<int> labels;
};

ClusterSet make_clusters(int samples, int classes, long tokens, long dim, double noise,
                         std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
  for (auto& m : means)
    for (auto& x : m) x = n01(rng);
  ClusterSet set;
  for (int i = 0; i < samples; ++i) {
    int c = i % classes;
    std::vector<double> data(tokens * dim);
    for (long t = 0; t < tokens; ++t)
      for (long d = 0; d < dim; ++d) data[t * dim + d] = means[c][d] + noise * n01(rng);
    set.feats.push_back(Tensor<double>::from({tokens, dim}, std::move(data)));
    set.labels.push_back(c);
  }
  return set;
}

}  // namespace

TEST_CASE("attention pool with a single token ignores the query") {
  Rng rng(1);
  long dim = 6;
  auto H = Tensor<double>::randn({1, dim}, rng, 1.0, false);
  auto h1 = init_probe<double>(dim, 3, 1);
  auto h2 = init_probe<double>(dim, 3, 2);
  h2.Wv = h1.Wv;  // same value map, different query
  auto a = attention_pool(H, h1);
  auto b = attention_pool(H, h2);
  auto direct = matmul(H, h1.Wv);
  for (long d = 0; d < dim; ++d) {
    REQUIRE(a.val()[d] == Approx(direct.val()[d]).margin(1e-12));
    REQUIRE(b.val()[d] == Approx(a.val()[d]).margin(1e-12));
  }
}

TEST_CASE("attention pool is permutation invariant") {
  Rng rng(2);
  long tokens = 9, dim = 8;
  auto H = Tensor<double>::randn({tokens, dim}, rng, 1.0, false);
  auto head = init_probe<double>(dim, 2, 3);
  auto base = attention_pool(H, head);

  std::vector<long> perm(tokens);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto P = Tensor<double>::zeros({tokens, dim});
    for (long t = 0; t < tokens; ++t)
      for (long d = 0; d < dim; ++d) P.at(t, d) = H.at(perm[t], d);
    auto shuffled = attention_pool(P, head);
    for (long d = 0; d < dim; ++d)
      REQUIRE(std::abs(shuffled.val()[d] - base.val()[d]) < 1e-7);
  }
}

TEST_CASE("attention pool over identical tokens equals the value map") {
  Rng rng(3);
  long dim = 5;
  auto row = Tensor<double>::randn({1, dim}, rng, 1.0, false);
  std::vector<double> rep;
  for (int t = 0; t < 7; ++t) rep.insert(rep.end(), row.val().begin(), row.val().end());
  auto H = Tensor<double>::from({7, dim}, rep);
  auto head = init_probe<double>(dim, 2, 4);
  auto pooled = attention_pool(H, head);
  auto direct = matmul(row, head.Wv);
  for (long d = 0; d < dim; ++d)
    REQUIRE(pooled.val()[d] == Approx(direct.val()[d]).margin(1e-12));
}

TEST_CASE("attention pool gradients check out") {
  Rng rng(4);
  long tokens = 4, dim = 6;
  auto H = Tensor<double>::randn({tokens, dim}, rng, 1.0, false);
  auto head = init_probe<double>(dim, 2, 5);
  auto f = [&]() { return reduce_sum(mul(attention_pool(H, head), attention_pool(H, head))); };
  auto rep = finite_diff_check(f, {{"Wk", head.Wk}, {"Wv", head.Wv}, {"q", head.q}});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("average pool basics and loop oracle") {
  auto single = Tensor<double>::from({1, 3}, {4, 5, 6});
  auto p = average_pool(single);
  CHECK(p.val() == std::vector<double>{4, 5, 6});

  auto pm = average_pool(Tensor<double>::from({2, 2}, {1, -2, -1, 2}));
  CHECK(pm.val()[0] == Approx(0).margin(1e-15));
  CHECK(pm.val()[1] == Approx(0).margin(1e-15));

  Rng rng(6);
  auto H = Tensor<double>::randn({11, 7}, rng, 2.0, false);
  auto avg = average_pool(H);
  for (long d = 0; d < 7; ++d) {
    double acc = 0;
    for (long t = 0; t < 11; ++t) acc += H.at(t, d);
    REQUIRE(avg.val()[d] == Approx(acc / 11).margin(1e-12));
  }
}

TEST_CASE("probe reaches perfect accuracy on separable clusters") {
  auto all = make_clusters(42, 3, 4, 8, 0.05, 7);
  ClusterSet train, val;
  for (int i = 0; i < 42; ++i) {
    auto& dst = i < 30 ? train : val;
    dst.feats.push_back(all.feats[i]);
    dst.labels.push_back(all.labels[i]);
  }
  ProbeOptions opts;
  opts.classes = 3;
  for (auto pooling : {Pooling::Attention, Pooling::Average}) {
    opts.pooling = pooling;
    auto res = train_probe(train.feats, train.labels, val.feats, val.labels, opts);
    CHECK(res.val_accuracy == 1.0);
    CHECK_FALSE(res.degenerate);
  }
}

TEST_CASE("probe stays near chance on uninformative features") {
  // labels decoupled from features
  auto train = make_clusters(40, 4, 3, 8, 1.0, 9);
  auto val = make_clusters(200, 4, 3, 8, 1.0, 10);
  Rng rng(11);
  std::uniform_int_distribution<int> lab(0, 3);
  for (auto& l : train.labels) l = lab(rng);
  for (auto& l : val.labels) l = lab(rng);
  ProbeOptions opts;
  opts.classes = 4;
  opts.epochs = 5;
  auto res = train_probe(train.feats, train.labels, val.feats, val.labels, opts);
  // 200 Bernoulli(0.25) draws concentrate well inside [0.10, 0.45]
  CHECK(res.val_accuracy > 0.10);
  CHECK(res.val_accuracy < 0.45);
}

TEST_CASE("degenerate single-class training set is flagged") {
  auto train = make_clusters(10, 2, 3, 4, 0.1, 12);
  std::fill(train.labels.begin(), train.labels.end(), 0);
  ProbeOptions opts;
  opts.classes = 2;
  opts.epochs = 1;
  auto res = train_probe(train.feats, train.labels, train.feats, train.labels, opts);
  CHECK(res.degenerate);
}

TEST_CASE("probe input validation") {
  auto set = make_clusters(4, 2, 3, 4, 0.1, 13);
  ProbeOptions opts;
  opts.classes = 2;
  auto bad_labels = set.labels;
  bad_labels[0] = 5;
  CHECK_THROWS_AS(train_probe(set.feats, bad_labels, set.feats, set.labels, opts),
                  contract_error);
  opts.classes = 1;
  CHECK_THROWS_AS(train_probe(set.feats, set.labels, set.feats, set.labels, opts),
                  config_error);
}

TEST_CASE("layer sweep covers all taps, freezes the backbone, reproduces") {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.vocab = 20;
  cfg.max_ctx = 20;
  cfg.mlp_hidden = 32;
  auto model = init_params<double>(cfg, 21);

  // class 0: low tokens, class 1: high tokens
  Rng rng(22);
  auto make_split = [&](int n) {
    std::pair<std::vector<std::vector<int>>, std::vector<int>> split;
    std::uniform_int_distribution<int> lo(NUM_SPECIALS, 9), hi(10, 19);
    for (int i = 0; i < n; ++i) {
      int c = i % 2;
      std::vector<int> seq = {START_IMAGE};
      for (int t = 0; t < 8; ++t) seq.push_back(c == 0 ? lo(rng) : hi(rng));
      seq.push_back(END_TOKEN);
      split.first.push_back(seq);
      split.second.push_back(c);
    }
    return split;
  };
  auto [train_seqs, train_labels] = make_split(16);
  auto [val_seqs, val_labels] = make_split(8);

  auto before = model.params.named();
  std::vector<std::vector<double>> snapshot;
  for (auto& [n, p] : before) snapshot.push_back(p.val());

  ProbeOptions opts;
  opts.classes = 2;
  opts.epochs = 10;
  auto rep1 = layer_sweep(cfg, model.params, train_seqs, train_labels, val_seqs, val_labels, opts);
  auto rep2 = layer_sweep(cfg, model.params, train_seqs, train_labels, val_seqs, val_labels, opts);

  REQUIRE(rep1.layers == std::vector<long>{1, 2});
  for (double a : rep1.accuracy) {
    REQUIRE(a >= 0.0);
    REQUIRE(a <= 1.0);
  }
  CHECK(rep1.accuracy == rep2.accuracy);  // bit-exact under a fixed seed
  CHECK(std::count(rep1.layers.begin(), rep1.layers.end(), rep1.argmax) == 1);

  // frozen contract: backbone values untouched
  auto after = model.params.named();
  for (size_t i = 0; i < after.size(); ++i) REQUIRE(after[i].second.val() == snapshot[i]);

  // separable token bands should be easy at every tap
  CHECK(*std::max_element(rep1.accuracy.begin(), rep1.accuracy.end()) >= 0.75);

  // report serializes
  auto j = nlohmann::json::parse(rep1.to_json());
  CHECK(j["layers"].size() == 2);
  CHECK(j["accuracy"].size() == 2);
}

TEST_CASE("tap_features slices the content rows of the requested layer") {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.vocab = 12;
  cfg.max_ctx = 8;
  cfg.mlp_hidden = 16;
  auto model = init_params<double>(cfg, 30);
  std::vector<int> seq = {START_VIDEO, 4, 5, 6, END_TOKEN};
  auto feats = tap_features(cfg, model.params, {seq}, 1);
  REQUIRE(feats.size() == 1);
  REQUIRE(feats[0].rows() == 3);
  REQUIRE(feats[0].cols() == 8);

  auto out = forward(seq, cfg, model.params, true);
  for (long t = 0; t < 3; ++t)
    for (long d = 0; d < 8; ++d)
      REQUIRE(feats[0].at(t, d) == out.taps[1][(t + 1) * 8 + d]);

  CHECK_THROWS_AS(tap_features(cfg, model.params, {seq}, 2), config_error);
}

TEST_CASE("full-scale probe preset overrides epochs and lr only") {
  auto opts = paper_probe_preset();
  CHECK(opts.epochs == 90);
  CHECK(opts.lr == 6e-5);
  CHECK(opts.pooling == Pooling::Attention);
  CHECK(opts.classes == 0);
}
