#pragma once

// Next-token pre-training: AdamW with decoupled weight decay, linear warmup
// plus cosine decay to a 0.1*max_lr floor, mixture batching via a sequence
// stream, JSONL metrics, and the per-position loss profiler.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vtlab/common.hpp"
#include "vtlab/model.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

struct TrainConfig {
  long batch_tokens = 16384;
  double max_lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  long warmup_steps = 100;
  long total_steps = 1000;
  std::uint64_t seed = 0;
  long eval_interval = 0;  // 0: checkpoint/eval at the end only
  bool deterministic = false;  // zero wall times so metrics files are byte-identical

  void validate(long seq_len) const {
    if (total_steps <= 0) throw config_error("train: total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
      throw config_error("train: warmup must be in [0, total)");
    if (seq_len <= 0 || batch_tokens % seq_len != 0)
      throw config_error("train: batch_tokens must be a multiple of the sequence length");
  }
};

inline TrainConfig paper_train_preset() {
  TrainConfig cfg;
  cfg.batch_tokens = 1048576;
  cfg.warmup_steps = 2000;
  return cfg;
}

struct LossLogEntry {
  long step = 0;
  double lr = 0;
  double loss = 0;
  std::int64_t tokens = 0;
  double wall_ms = 0;
};

// Linear ramp 0 -> max_lr over warmup, then cosine from max_lr down to the
// 0.1*max_lr floor at total_steps.
inline double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 0) throw contract_error("lr_schedule: negative step");
  if (step < cfg.warmup_steps)
    return cfg.max_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  double floor = 0.1 * cfg.max_lr;
  if (step >= cfg.total_steps) return floor;
  double progress = static_cast<double>(step - cfg.warmup_steps) /
                    static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return floor + (cfg.max_lr - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

template <class T>
struct AdamState {
  long t = 0;  // completed steps
  std::map<std::string, std::vector<double>> m, v;
};

// Weight decay applies to weight matrices only; gains and the token embedding
// are exempt.
template <class T>
bool adamw_decays(const std::string& name, const Tensor<T>& t) {
  return t.rank() == 2 && name != "tok_embed";
}

// One decoupled-weight-decay Adam update over every named tensor. Gradients
// are read from each tensor's grad buffer; per-tensor lr multipliers come
// from the muP table (empty map = all 1).
template <class T>
void adamw_step(std::vector<std::pair<std::string, Tensor<T>>>& params,
                AdamState<T>& state, double lr, const TrainConfig& cfg,
                const std::map<std::string, double>& lr_mult = {}) {
  ++state.t;
  double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
  double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
  for (auto& [name, p] : params) {
    auto& grad = p.grad();
    for (T g : grad)
      if (!std::isfinite(static_cast<double>(g)))
        throw contract_error("adamw: non-finite gradient in " + name + " at step " +
                             std::to_string(state.t));
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(grad.size(), 0.0);
      v.assign(grad.size(), 0.0);
    }
    double mult = 1.0;
    if (auto it = lr_mult.find(name); it != lr_mult.end()) mult = it->second;
    double step_lr = lr * mult;
    double wd = adamw_decays(name, p) ? cfg.weight_decay : 0.0;
    auto& val = p.val();
    for (size_t i = 0; i < grad.size(); ++i) {
      double g = static_cast<double>(grad[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      double x = static_cast<double>(val[i]);
      x -= step_lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + wd * x);
      val[i] = static_cast<T>(x);
    }
  }
}

// Yields the next training sequence, or nullopt when exhausted.
using SequenceStream = std::function<std::optional<std::vector<int>>()>;

template <class T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<LossLogEntry> log;
  bool exhausted = false;  // stream ran dry before total_steps
};

namespace detail {

template <class T>
void zero_param_grads(std::vector<std::pair<std::string, Tensor<T>>>& params) {
  for (auto& [name, p] : params) {
    auto& g = p.grad();
    std::fill(g.begin(), g.end(), T(0));
  }
}

inline void emit_metrics(std::ostream* os, const LossLogEntry& e) {
  if (!os) return;
  (*os) << "{\"step\":" << e.step << ",\"lr\":" << e.lr << ",\"loss\":" << e.loss
        << ",\"tokens\":" << e.tokens << ",\"wall_ms\":" << e.wall_ms << "}\n";
}

}  // namespace detail

// Runs total_steps optimizer steps. Each step draws batch_tokens/seq_len
// sequences from the stream and averages their next-token NLL; the final
// token of each sequence is a target but not an input. The checkpoint hook,
// when set, fires at every eval_interval and at the end.
template <class T>
TrainResult<T> train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const SequenceStream& stream, InitializedModel<T> model,
                     std::ostream* metrics = nullptr,
                     const std::function<void(long, const ModelParams<T>&)>& checkpoint_hook = {},
                     double stop_below_loss = 0.0) {
  mcfg.validate();
  TrainResult<T> result;
  auto params = model.params.named();
  AdamState<T> state;
  std::int64_t tokens_seen = 0;
  auto t0 = std::chrono::steady_clock::now();

  long seq_len = 0;  // learned from the first sequence
  std::vector<std::vector<int>> batch;
  for (long step = 0; step < tcfg.total_steps; ++step) {
    long nseq = seq_len > 0 ? tcfg.batch_tokens / seq_len : 1;
    batch.clear();
    while (static_cast<long>(batch.size()) < nseq) {
      auto seq = stream();
      if (!seq) {
        result.exhausted = true;
        break;
      }
      if (seq_len == 0) {
        seq_len = static_cast<long>(seq->size());
        tcfg.validate(seq_len);
        nseq = tcfg.batch_tokens / seq_len;
      } else if (static_cast<long>(seq->size()) != seq_len) {
        throw contract_error("train: stream yielded a sequence of different length");
      }
      batch.push_back(std::move(*seq));
    }
    if (batch.empty()) break;

    detail::zero_param_grads(params);
    double loss_sum = 0.0;
    T inv_n = static_cast<T>(1.0 / batch.size());
    for (const auto& seq : batch) {
      std::vector<int> inputs(seq.begin(), seq.end() - 1);
      std::vector<int> targets(seq.begin() + 1, seq.end());
      auto out = forward(inputs, mcfg, model.params, /*want_taps=*/false);
      auto loss = scale(cross_entropy(out.logits, targets), inv_n);
      double contrib = static_cast<double>(loss.item());
      if (!std::isfinite(contrib))
        throw contract_error("train: non-finite loss at step " + std::to_string(step));
      loss_sum += contrib;
      backward(loss, /*accumulate=*/true);
      tokens_seen += static_cast<std::int64_t>(targets.size());
    }

    double lr = lr_schedule(step, tcfg);
    adamw_step(params, state, lr, tcfg, model.lr_mult);

    LossLogEntry e;
    e.step = step;
    e.lr = lr;
    e.loss = loss_sum;
    e.tokens = tokens_seen;
    e.wall_ms = tcfg.deterministic
                    ? 0.0
                    : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    detail::emit_metrics(metrics, e);
    result.log.push_back(e);

    if (checkpoint_hook && tcfg.eval_interval > 0 && (step + 1) % tcfg.eval_interval == 0)
      checkpoint_hook(step, model.params);
    if (result.exhausted) break;
    if (stop_below_loss > 0.0 && loss_sum < stop_below_loss) break;
  }
  if (checkpoint_hook) checkpoint_hook(tcfg.total_steps - 1, model.params);
  result.params = model.params;
  return result;
}

struct LossProfile {
  std::vector<double> per_position;  // mean NLL at each target index
  std::vector<double> per_group;     // group 0: special targets, then one per frame
};

// Positionwise mean NLL over full-length eval sequences. Target index j
// scores the prediction of sequence position j+1; with tokens_per_frame F,
// frame f owns target indices [f*F, f*F+F-1] and everything past the content
// band (the end token) lands in group 0.
template <class T>
LossProfile per_token_loss_profile(const ModelConfig& mcfg, const ModelParams<T>& params,
                                   const std::vector<std::vector<int>>& sequences,
                                   long tokens_per_frame = 256) {
  if (sequences.empty()) throw contract_error("profile: no sequences");
  long seq_len = static_cast<long>(sequences[0].size());
  long n_targets = seq_len - 1;
  long n_frames = (seq_len - 2) / tokens_per_frame;
  if (n_frames * tokens_per_frame != seq_len - 2)
    throw config_error("profile: content length is not a whole number of frames");

  LossProfile prof;
  prof.per_position.assign(n_targets, 0.0);
  prof.per_group.assign(1 + n_frames, 0.0);
  for (const auto& seq : sequences) {
    if (static_cast<long>(seq.size()) != seq_len)
      throw contract_error("profile: sequences must share one length");
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    auto out = forward(inputs, mcfg, params, /*want_taps=*/false);
    const auto& logits = out.logits;
    long V = logits.cols();
    for (long j = 0; j < n_targets; ++j) {
      const T* row = logits.val().data() + j * V;
      double mx = row[0];
      for (long v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
      double lse = 0.0;
      for (long v = 0; v < V; ++v) lse += std::exp(static_cast<double>(row[v]) - mx);
      double nll = mx + std::log(lse) - static_cast<double>(row[seq[j + 1]]);
      prof.per_position[j] += nll;
    }
  }
  long n = static_cast<long>(sequences.size());
  for (auto& x : prof.per_position) x /= n;

  std::vector<long> group_count(1 + n_frames, 0);
  for (long j = 0; j < n_targets; ++j) {
    long g = j < n_frames * tokens_per_frame ? 1 + j / tokens_per_frame : 0;
    prof.per_group[g] += prof.per_position[j];
    ++group_count[g];
  }
  for (size_t g = 0; g < prof.per_group.size(); ++g)
    if (group_count[g] > 0) prof.per_group[g] /= group_count[g];
  return prof;
}

}  // namespace vtlab
