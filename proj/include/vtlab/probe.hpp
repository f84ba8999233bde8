#pragma once

// Frozen-backbone representation evaluation: attention pooling with a learned
// query, average pooling, linear probes, and the per-layer sweep protocol.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtlab/common.hpp"
#include "vtlab/model.hpp"
#include "vtlab/tensor.hpp"
#include "vtlab/train.hpp"

namespace vtlab {

enum class Pooling { Attention, Average };

template <class T>
struct ProbeHead {
  Tensor<T> Wk, Wv;        // dim x dim
  Tensor<T> q;             // 1 x dim learned query
  Tensor<T> classifier;    // dim x classes
  Tensor<T> bias;          // 1 x classes

  std::vector<std::pair<std::string, Tensor<T>>> named() {
    return {{"probe.Wk", Wk}, {"probe.Wv", Wv}, {"probe.q", q},
            {"probe.classifier", classifier}, {"probe.bias", bias}};
  }
};

template <class T>
ProbeHead<T> init_probe(long dim, long classes, std::uint64_t seed) {
  Rng rng(seed);
  ProbeHead<T> h;
  T std02 = static_cast<T>(0.02);
  h.Wk = Tensor<T>::randn({dim, dim}, rng, std02);
  h.Wv = Tensor<T>::randn({dim, dim}, rng, std02);
  h.q = Tensor<T>::randn({1, dim}, rng, std02);
  h.classifier = Tensor<T>::randn({dim, classes}, rng, std02);
  h.bias = Tensor<T>::zeros({1, classes}, true);
  return h;
}

// weights = softmax(q (H Wk)^T / sqrt(dim)); output = weights (H Wv).
// Invariant under any permutation of the rows of H.
template <class T>
Tensor<T> attention_pool(const Tensor<T>& H, const ProbeHead<T>& head) {
  long dim = H.cols();
  auto scores = scale(matmul(head.q, transpose(matmul(H, head.Wk))),
                      static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim))));
  return matmul(softmax_rows(scores), matmul(H, head.Wv));
}

template <class T>
Tensor<T> average_pool(const Tensor<T>& H) {
  long n = H.rows();
  auto ones = Tensor<T>::from({1, n}, std::vector<T>(n, static_cast<T>(1.0 / n)));
  return matmul(ones, H);
}

template <class T>
struct ProbeResult {
  ProbeHead<T> head;
  double train_accuracy = 0;
  double val_accuracy = 0;
  bool degenerate = false;  // single-class training set
};

struct ProbeOptions {
  long classes = 0;
  long epochs = 20;
  double lr = 1e-3;
  Pooling pooling = Pooling::Attention;
  std::uint64_t seed = 0;
};

// Full-scale probe recipe; desk runs keep the 20-epoch defaults.
inline ProbeOptions paper_probe_preset() {
  ProbeOptions opts;
  opts.epochs = 90;
  opts.lr = 6e-5;
  return opts;
}

namespace detail {

template <class T>
Tensor<T> pooled_logits(const Tensor<T>& feats, ProbeHead<T>& head, Pooling pooling) {
  auto pooled = pooling == Pooling::Attention ? attention_pool(feats, head)
                                              : average_pool(feats);
  return add(matmul(pooled, head.classifier), head.bias);
}

template <class T>
double probe_accuracy(const std::vector<Tensor<T>>& feats, const std::vector<int>& labels,
                      ProbeHead<T>& head, Pooling pooling) {
  if (feats.empty()) return 0;
  long hits = 0;
  for (size_t i = 0; i < feats.size(); ++i) {
    auto logits = pooled_logits(feats[i], head, pooling);
    const auto& v = logits.val();
    long arg = static_cast<long>(std::max_element(v.begin(), v.end()) - v.begin());
    if (arg == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / feats.size();
}

}  // namespace detail

// Trains the probe head on precomputed (frozen) features. Only head tensors
// participate in the graph, so the backbone cannot receive gradients.
template <class T>
ProbeResult<T> train_probe(const std::vector<Tensor<T>>& train_feats,
                           const std::vector<int>& train_labels,
                           const std::vector<Tensor<T>>& val_feats,
                           const std::vector<int>& val_labels, const ProbeOptions& opts) {
  if (train_feats.empty() || train_feats.size() != train_labels.size())
    throw contract_error("probe: features/labels mismatch");
  if (opts.classes < 2) throw config_error("probe: need at least 2 classes");
  for (int l : train_labels)
    if (l < 0 || l >= opts.classes) throw contract_error("probe: label out of range");

  ProbeResult<T> result;
  result.degenerate = std::all_of(train_labels.begin(), train_labels.end(),
                                  [&](int l) { return l == train_labels[0]; });
  result.head = init_probe<T>(train_feats[0].cols(), opts.classes, opts.seed);
  auto params = result.head.named();

  TrainConfig acfg;
  acfg.weight_decay = 0.0;
  AdamState<T> state;
  for (long epoch = 0; epoch < opts.epochs; ++epoch) {
    for (size_t i = 0; i < train_feats.size(); ++i) {
      auto loss = cross_entropy(detail::pooled_logits(train_feats[i], result.head, opts.pooling),
                                {train_labels[i]});
      backward(loss);
      adamw_step(params, state, opts.lr, acfg);
    }
  }
  result.train_accuracy = detail::probe_accuracy(train_feats, train_labels, result.head, opts.pooling);
  result.val_accuracy = detail::probe_accuracy(val_feats, val_labels, result.head, opts.pooling);
  return result;
}

struct SweepReport {
  std::vector<long> layers;
  std::vector<double> accuracy;
  long argmax = 0;

  std::string to_json() const {
    nlohmann::json j;
    j["layers"] = layers;
    j["accuracy"] = accuracy;
    j["argmax"] = argmax;
    return j.dump();
  }
};

// Content-token rows of tap l, one feature matrix per sequence. The backbone
// runs without gradient tracking; tap buffers are plain values.
template <class T>
std::vector<Tensor<T>> tap_features(const ModelConfig& cfg, const ModelParams<T>& params,
                                    const std::vector<std::vector<int>>& seqs, long layer) {
  if (layer < 0 || layer > cfg.n_layers) throw config_error("tap layer out of range");
  std::vector<Tensor<T>> feats;
  for (const auto& ids : seqs) {
    auto out = forward(ids, cfg, params, /*want_taps=*/true);
    long S = static_cast<long>(ids.size());
    const auto& buf = out.taps.at(layer);
    // drop the leading start token and the trailing end token
    std::vector<T> rows(buf.begin() + cfg.dim, buf.begin() + (S - 1) * cfg.dim);
    feats.push_back(Tensor<T>::from({S - 2, cfg.dim}, std::move(rows)));
  }
  return feats;
}

namespace detail {

// One backbone pass per sequence; all taps cached as content-row matrices.
template <class T>
std::vector<std::vector<Tensor<T>>> all_tap_features(
    const ModelConfig& cfg, const ModelParams<T>& params,
    const std::vector<std::vector<int>>& seqs) {
  std::vector<std::vector<Tensor<T>>> per_layer(cfg.n_layers + 1);
  for (const auto& ids : seqs) {
    auto out = forward(ids, cfg, params, /*want_taps=*/true);
    long S = static_cast<long>(ids.size());
    for (long l = 0; l <= cfg.n_layers; ++l) {
      const auto& buf = out.taps.at(l);
      std::vector<T> rows(buf.begin() + cfg.dim, buf.begin() + (S - 1) * cfg.dim);
      per_layer[l].push_back(Tensor<T>::from({S - 2, cfg.dim}, std::move(rows)));
    }
  }
  return per_layer;
}

}  // namespace detail

// One independent probe per tap l = 1..L.
template <class T>
SweepReport layer_sweep(const ModelConfig& cfg, const ModelParams<T>& params,
                        const std::vector<std::vector<int>>& train_seqs,
                        const std::vector<int>& train_labels,
                        const std::vector<std::vector<int>>& val_seqs,
                        const std::vector<int>& val_labels, ProbeOptions opts) {
  auto train_taps = detail::all_tap_features(cfg, params, train_seqs);
  auto val_taps = detail::all_tap_features(cfg, params, val_seqs);
  SweepReport report;
  for (long l = 1; l <= cfg.n_layers; ++l) {
    auto res = train_probe(train_taps[l], train_labels, val_taps[l], val_labels, opts);
    report.layers.push_back(l);
    report.accuracy.push_back(res.val_accuracy);
  }
  report.argmax = report.layers[static_cast<size_t>(
      std::max_element(report.accuracy.begin(), report.accuracy.end()) -
      report.accuracy.begin())];
  return report;
}

}  // namespace vtlab
