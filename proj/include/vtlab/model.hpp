#pragma once

// Causal decoder: token embedding, pre-norm blocks of RoPE attention and
// SwiGLU MLP with residual adds, a final norm and logit head. Exposes
// per-layer activation taps and autoregressive generation.
//
// Attention is a fused graph node: the forward works in query blocks per
// head and the backward recomputes the attention probabilities from the
// saved q/k values instead of storing S*S buffers.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtlab/common.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

enum class PosMode { Rope, SincosAbsolute };
enum class ParamMode { Standard, MuP };

// Query-block size for the fused attention kernel.
inline constexpr long kAttnBlock = 256;

struct ModelConfig {
  long dim = 64;
  long n_heads = 4;
  long n_layers = 2;
  long vocab = 516;       // content K + specials
  long max_ctx = 4098;
  double rope_base = 10000.0;  // 50000 for the high-resolution finetune axis
  long mlp_hidden = 0;    // 0: round (8/3)*dim to a multiple of 64
  PosMode pos_mode = PosMode::Rope;
  ParamMode param_mode = ParamMode::Standard;
  long mup_base_width = 0;  // 0: this width is the base

  long head_dim() const { return dim / n_heads; }
  long mlp() const {
    if (mlp_hidden > 0) return mlp_hidden;
    long rounded = 64 * static_cast<long>(std::llround((8.0 / 3.0) * dim / 64.0));
    return std::max<long>(rounded, 64);
  }
  void validate() const {
    if (dim <= 0 || n_heads <= 0 || n_layers < 0 || vocab < 2)
      throw config_error("model: bad dimensions");
    if (dim % n_heads != 0) throw config_error("model: dim not divisible by n_heads");
    if (pos_mode == PosMode::Rope && head_dim() % 2 != 0)
      throw config_error("model: head_dim must be even for rotary pairs");
    if (param_mode == ParamMode::MuP && mup_base_width > 0 && dim % mup_base_width != 0)
      throw config_error("model: dim must be a multiple of the muP base width");
  }
};

inline std::int64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  std::int64_t d = cfg.dim, m = cfg.mlp(), v = cfg.vocab;
  std::int64_t per_layer = 4 * d * d + 2 * d + 3 * d * m;
  return v * d + cfg.n_layers * per_layer + d + d * v;
}

template <class T>
struct LayerParams {
  Tensor<T> Wq, Wk, Wv, Wo;          // dim x dim
  Tensor<T> rms_gain_1, rms_gain_2;  // dim
  Tensor<T> W_gate, W_up;            // dim x mlp
  Tensor<T> W_down;                  // mlp x dim
};

template <class T>
struct ModelParams {
  Tensor<T> tok_embed;  // vocab x dim
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_gain;  // dim
  Tensor<T> head;        // dim x vocab

  std::vector<std::pair<std::string, Tensor<T>>> named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.push_back({"tok_embed", tok_embed});
    for (size_t l = 0; l < layers.size(); ++l) {
      const auto& lp = layers[l];
      std::string p = "layer" + std::to_string(l) + ".";
      out.push_back({p + "Wq", lp.Wq});
      out.push_back({p + "Wk", lp.Wk});
      out.push_back({p + "Wv", lp.Wv});
      out.push_back({p + "Wo", lp.Wo});
      out.push_back({p + "rms_gain_1", lp.rms_gain_1});
      out.push_back({p + "rms_gain_2", lp.rms_gain_2});
      out.push_back({p + "W_gate", lp.W_gate});
      out.push_back({p + "W_up", lp.W_up});
      out.push_back({p + "W_down", lp.W_down});
    }
    out.push_back({"final_gain", final_gain});
    out.push_back({"head", head});
    return out;
  }
};

// Per-tensor learning-rate multipliers (all 1 in standard parameterization).
using LrMultipliers = std::map<std::string, double>;

template <class T>
struct InitializedModel {
  ModelParams<T> params;
  LrMultipliers lr_mult;
};

// Standard init: N(0, 0.02), residual-output projections scaled by
// 1/sqrt(2L). muP width scaling on top: hidden-matrix variance ~ 1/dim
// (std / sqrt(m)), head scaled 1/m, hidden and head LR multiplier 1/m.
template <class T>
InitializedModel<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  double base_std = 0.02;
  double resid_scale = cfg.n_layers > 0 ? 1.0 / std::sqrt(2.0 * cfg.n_layers) : 1.0;
  double m = 1.0;
  if (cfg.param_mode == ParamMode::MuP && cfg.mup_base_width > 0)
    m = static_cast<double>(cfg.dim) / cfg.mup_base_width;
  double hidden_scale = (cfg.param_mode == ParamMode::MuP) ? 1.0 / std::sqrt(m) : 1.0;
  double head_scale = (cfg.param_mode == ParamMode::MuP) ? 1.0 / m : 1.0;
  double hidden_lr = (cfg.param_mode == ParamMode::MuP) ? 1.0 / m : 1.0;

  InitializedModel<T> out;
  auto& p = out.params;
  p.tok_embed = Tensor<T>::randn({cfg.vocab, cfg.dim}, rng, static_cast<T>(base_std));
  out.lr_mult["tok_embed"] = 1.0;
  for (long l = 0; l < cfg.n_layers; ++l) {
    LayerParams<T> lp;
    T hs = static_cast<T>(base_std * hidden_scale);
    lp.Wq = Tensor<T>::randn({cfg.dim, cfg.dim}, rng, hs);
    lp.Wk = Tensor<T>::randn({cfg.dim, cfg.dim}, rng, hs);
    lp.Wv = Tensor<T>::randn({cfg.dim, cfg.dim}, rng, hs);
    lp.Wo = Tensor<T>::randn({cfg.dim, cfg.dim}, rng, static_cast<T>(base_std * hidden_scale * resid_scale));
    lp.rms_gain_1 = Tensor<T>::from({cfg.dim}, std::vector<T>(cfg.dim, T(1)), true);
    lp.rms_gain_2 = Tensor<T>::from({cfg.dim}, std::vector<T>(cfg.dim, T(1)), true);
    lp.W_gate = Tensor<T>::randn({cfg.dim, cfg.mlp()}, rng, hs);
    lp.W_up = Tensor<T>::randn({cfg.dim, cfg.mlp()}, rng, hs);
    lp.W_down = Tensor<T>::randn({cfg.mlp(), cfg.dim}, rng, static_cast<T>(base_std * hidden_scale * resid_scale));
    p.layers.push_back(std::move(lp));
    std::string pre = "layer" + std::to_string(l) + ".";
    for (const char* n : {"Wq", "Wk", "Wv", "Wo", "W_gate", "W_up", "W_down"})
      out.lr_mult[pre + n] = hidden_lr;
    out.lr_mult[pre + "rms_gain_1"] = 1.0;
    out.lr_mult[pre + "rms_gain_2"] = 1.0;
  }
  p.final_gain = Tensor<T>::from({cfg.dim}, std::vector<T>(cfg.dim, T(1)), true);
  out.lr_mult["final_gain"] = 1.0;
  p.head = Tensor<T>::randn({cfg.dim, cfg.vocab}, rng, static_cast<T>(base_std * head_scale));
  out.lr_mult["head"] = hidden_lr;
  return out;
}

// ---- rmsnorm --------------------------------------------------------------

// y = x / sqrt(mean(x^2) + 1e-6) * gain, per row.
template <class T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain) {
  constexpr double kEps = 1e-6;
  long R = x.rows(), C = x.cols();
  if (gain.numel() != C) throw shape_error("rmsnorm: gain width mismatch");
  auto out = detail::make_node<T>(x.shape(), {x, gain});
  std::vector<T> inv_rms(R);
  for (long r = 0; r < R; ++r) {
    const T* xr = x.val().data() + r * C;
    double ms = 0;
    for (long c = 0; c < C; ++c) ms += static_cast<double>(xr[c]) * xr[c];
    inv_rms[r] = static_cast<T>(1.0 / std::sqrt(ms / C + kEps));
    T* yr = out.val().data() + r * C;
    for (long c = 0; c < C; ++c) yr[c] = xr[c] * inv_rms[r] * gain.val()[c];
  }
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto xi = x.impl();
    auto gi = gain.impl();
    out.impl()->backward = [o, xi, gi, inv_rms]() {
      long R = o->shape[0], C = o->shape[1];
      for (long r = 0; r < R; ++r) {
        const T* xr = xi->val.data() + r * C;
        const T* gy = o->grad.data() + r * C;
        T ir = inv_rms[r];
        if (xi->requires_grad) {
          xi->ensure_grad();
          // dx = g*dy*ir - x * ir^3/C * sum(x*g*dy)
          double dot = 0;
          for (long c = 0; c < C; ++c)
            dot += static_cast<double>(xr[c]) * gi->val[c] * gy[c];
          T coef = static_cast<T>(dot / C) * ir * ir * ir;
          T* gx = xi->grad.data() + r * C;
          for (long c = 0; c < C; ++c)
            gx[c] += gi->val[c] * gy[c] * ir - xr[c] * coef;
        }
        if (gi->requires_grad) {
          gi->ensure_grad();
          for (long c = 0; c < C; ++c) gi->grad[c] += xr[c] * ir * gy[c];
        }
      }
    };
  }
  return out;
}

// ---- rotary position embedding ---------------------------------------------

namespace detail {

// In-place pairwise rotation of a row-major [N x d] buffer; sign = -1 undoes it.
template <class T>
void rope_apply(T* data, long n, long d, const long* positions, double base, int sign) {
  long pairs = d / 2;
  for (long r = 0; r < n; ++r) {
    double pos = static_cast<double>(positions[r]);
    T* row = data + r * d;
    for (long i = 0; i < pairs; ++i) {
      double theta = pos * std::pow(base, -2.0 * i / d) * sign;
      T c = static_cast<T>(std::cos(theta));
      T s = static_cast<T>(std::sin(theta));
      T a = row[2 * i], b = row[2 * i + 1];
      row[2 * i] = a * c - b * s;
      row[2 * i + 1] = a * s + b * c;
    }
  }
}

}  // namespace detail

// Differentiable standalone rotation (the fused attention uses the same
// helper internally). x is [N x head_dim].
template <class T>
Tensor<T> rope_rotate(const Tensor<T>& x, const std::vector<long>& positions, double base) {
  long N = x.rows(), d = x.cols();
  if (d % 2 != 0) throw config_error("rope_rotate: head_dim must be even");
  if (static_cast<long>(positions.size()) != N)
    throw shape_error("rope_rotate: one position per row");
  auto out = detail::make_node<T>(x.shape(), {x});
  out.val() = x.val();
  detail::rope_apply<T>(out.val().data(), N, d, positions.data(), base, +1);
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto xi = x.impl();
    out.impl()->backward = [o, xi, positions, base]() {
      xi->ensure_grad();
      long N = o->shape[0], d = o->shape[1];
      std::vector<T> g = o->grad;
      detail::rope_apply<T>(g.data(), N, d, positions.data(), base, -1);
      for (size_t i = 0; i < g.size(); ++i) xi->grad[i] += g[i];
    };
  }
  return out;
}

// ---- fused causal multi-head attention --------------------------------------

// q, k, v: [S x dim] post-projection. Strictly causal (i attends to j <= i),
// softmax over scores q.k/sqrt(head_dim), optional rotary rotation of q and k.
template <class T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           long n_heads, bool use_rope, double rope_base,
                           const std::vector<long>& positions) {
  using Mat = typename Tensor<T>::Mat;
  const long S = q.rows(), dim = q.cols();
  if (k.rows() != S || v.rows() != S || k.cols() != dim || v.cols() != dim)
    throw shape_error("causal_attention: q/k/v shape mismatch");
  if (dim % n_heads != 0) throw shape_error("causal_attention: dim not divisible by heads");
  if (static_cast<long>(positions.size()) != S)
    throw shape_error("causal_attention: one position per row");
  const long hd = dim / n_heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));


  auto out = detail::make_node<T>({S, dim}, {q, k, v});
  auto run_forward = [=](const std::vector<T>& qv, const std::vector<T>& kv,
                         const std::vector<T>& vv, std::vector<T>& ov) {
    Mat Qh(S, hd), Kh(S, hd), Vh(S, hd);
    for (long h = 0; h < n_heads; ++h) {
      for (long r = 0; r < S; ++r)
        for (long c = 0; c < hd; ++c) {
          Qh(r, c) = qv[r * dim + h * hd + c];
          Kh(r, c) = kv[r * dim + h * hd + c];
          Vh(r, c) = vv[r * dim + h * hd + c];
        }
      if (use_rope) {
        detail::rope_apply<T>(Qh.data(), S, hd, positions.data(), rope_base, +1);
        detail::rope_apply<T>(Kh.data(), S, hd, positions.data(), rope_base, +1);
      }
      for (long b0 = 0; b0 < S; b0 += kAttnBlock) {
        long nb = std::min(kAttnBlock, S - b0);
        long kv_end = b0 + nb;
        Mat G(nb, kv_end);
        G.noalias() = Qh.middleRows(b0, nb) * Kh.topRows(kv_end).transpose();
        for (long r = 0; r < nb; ++r) {
          T* row = G.data() + r * kv_end;
          long valid = b0 + r + 1;
          T mx = row[0] * inv_sqrt;
          for (long c = 0; c < valid; ++c) {
            row[c] *= inv_sqrt;
            mx = std::max(mx, row[c]);
          }
          T sum = 0;
          for (long c = 0; c < valid; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
          }
          for (long c = 0; c < valid; ++c) row[c] /= sum;
          for (long c = valid; c < kv_end; ++c) row[c] = 0;
        }
        Mat O(nb, hd);
        O.noalias() = G * Vh.topRows(kv_end);
        for (long r = 0; r < nb; ++r)
          for (long c = 0; c < hd; ++c) ov[(b0 + r) * dim + h * hd + c] = O(r, c);
      }
    }
    // causal score and value products
    if (mac_counter)
      *mac_counter += static_cast<std::uint64_t>(n_heads) * hd * S * (S + 1);
  };
  run_forward(q.val(), k.val(), v.val(), out.val());

  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto qi = q.impl();
    auto ki = k.impl();
    auto vi = v.impl();
    out.impl()->backward = [o, qi, ki, vi, S, dim, hd, n_heads, inv_sqrt, use_rope,
                            rope_base, positions]() {
      qi->ensure_grad();
      ki->ensure_grad();
      vi->ensure_grad();
      Mat Qh(S, hd), Kh(S, hd), Vh(S, hd), dQh(S, hd), dKh(S, hd), dVh(S, hd), dOh(S, hd);
      for (long h = 0; h < n_heads; ++h) {
        for (long r = 0; r < S; ++r)
          for (long c = 0; c < hd; ++c) {
            Qh(r, c) = qi->val[r * dim + h * hd + c];
            Kh(r, c) = ki->val[r * dim + h * hd + c];
            Vh(r, c) = vi->val[r * dim + h * hd + c];
            dOh(r, c) = o->grad[r * dim + h * hd + c];
          }
        if (use_rope) {
          detail::rope_apply<T>(Qh.data(), S, hd, positions.data(), rope_base, +1);
          detail::rope_apply<T>(Kh.data(), S, hd, positions.data(), rope_base, +1);
        }
        dQh.setZero();
        dKh.setZero();
        dVh.setZero();
        for (long b0 = 0; b0 < S; b0 += kAttnBlock) {
          long nb = std::min(kAttnBlock, S - b0);
          long kv_end = b0 + nb;
          Mat P(nb, kv_end);
          P.noalias() = Qh.middleRows(b0, nb) * Kh.topRows(kv_end).transpose();
          for (long r = 0; r < nb; ++r) {
            T* row = P.data() + r * kv_end;
            long valid = b0 + r + 1;
            T mx = row[0] * inv_sqrt;
            for (long c = 0; c < valid; ++c) {
              row[c] *= inv_sqrt;
              mx = std::max(mx, row[c]);
            }
            T sum = 0;
            for (long c = 0; c < valid; ++c) {
              row[c] = std::exp(row[c] - mx);
              sum += row[c];
            }
            for (long c = 0; c < valid; ++c) row[c] /= sum;
            for (long c = valid; c < kv_end; ++c) row[c] = 0;
          }
          dVh.topRows(kv_end).noalias() += P.transpose() * dOh.middleRows(b0, nb);
          Mat dP(nb, kv_end);
          dP.noalias() = dOh.middleRows(b0, nb) * Vh.topRows(kv_end).transpose();
          for (long r = 0; r < nb; ++r) {
            T dot = 0;
            for (long c = 0; c < kv_end; ++c) dot += dP(r, c) * P(r, c);
            for (long c = 0; c < kv_end; ++c)
              dP(r, c) = P(r, c) * (dP(r, c) - dot) * inv_sqrt;
          }
          dQh.middleRows(b0, nb).noalias() += dP * Kh.topRows(kv_end);
          dKh.topRows(kv_end).noalias() += dP.transpose() * Qh.middleRows(b0, nb);
        }
        if (use_rope) {
          detail::rope_apply<T>(dQh.data(), S, hd, positions.data(), rope_base, -1);
          detail::rope_apply<T>(dKh.data(), S, hd, positions.data(), rope_base, -1);
        }
        for (long r = 0; r < S; ++r)
          for (long c = 0; c < hd; ++c) {
            qi->grad[r * dim + h * hd + c] += dQh(r, c);
            ki->grad[r * dim + h * hd + c] += dKh(r, c);
            vi->grad[r * dim + h * hd + c] += dVh(r, c);
          }
      }
    };
  }
  return out;
}

// ---- block, forward, generation ---------------------------------------------

template <class T>
Tensor<T> causal_mhsa(const Tensor<T>& H, const LayerParams<T>& lp, const ModelConfig& cfg,
                      const std::vector<long>& positions) {
  auto x = rmsnorm(H, lp.rms_gain_1);
  auto q = matmul(x, lp.Wq);
  auto k = matmul(x, lp.Wk);
  auto v = matmul(x, lp.Wv);
  auto a = causal_attention(q, k, v, cfg.n_heads, cfg.pos_mode == PosMode::Rope,
                            cfg.rope_base, positions);
  return matmul(a, lp.Wo);
}

template <class T>
Tensor<T> swiglu_mlp(const Tensor<T>& x, const LayerParams<T>& lp) {
  auto gate = silu(matmul(x, lp.W_gate));
  auto up = matmul(x, lp.W_up);
  return matmul(mul(gate, up), lp.W_down);
}

template <class T>
struct ForwardResult {
  Tensor<T> logits;                 // S x vocab
  std::vector<std::vector<T>> taps; // n_layers+1 buffers of S*dim; [0] post-embedding
};

namespace detail {

template <class T>
std::vector<T> sincos_table(long S, long dim) {
  std::vector<T> pe(S * dim);
  for (long pos = 0; pos < S; ++pos)
    for (long i = 0; i < dim; i += 2) {
      double angle = pos / std::pow(10000.0, static_cast<double>(i) / dim);
      pe[pos * dim + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < dim) pe[pos * dim + i + 1] = static_cast<T>(std::cos(angle));
    }
  return pe;
}

}  // namespace detail

template <class T>
ForwardResult<T> forward(const std::vector<int>& ids, const ModelConfig& cfg,
                         const ModelParams<T>& params, bool want_taps = true) {
  cfg.validate();
  long S = static_cast<long>(ids.size());
  if (S == 0) throw contract_error("forward: empty input");
  if (S > cfg.max_ctx) throw contract_error("forward: input longer than max_ctx");
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab) throw contract_error("forward: id out of vocabulary");
  std::vector<long> positions(S);
  for (long i = 0; i < S; ++i) positions[i] = i;

  ForwardResult<T> res;
  auto H = embedding_lookup(params.tok_embed, ids);
  if (cfg.pos_mode == PosMode::SincosAbsolute) {
    auto pe = Tensor<T>::from({S, cfg.dim}, detail::sincos_table<T>(S, cfg.dim));
    H = add(H, pe);
  }
  if (want_taps) res.taps.push_back(H.val());
  for (long l = 0; l < cfg.n_layers; ++l) {
    H = add(H, causal_mhsa(H, params.layers[l], cfg, positions));
    H = add(H, swiglu_mlp(rmsnorm(H, params.layers[l].rms_gain_2), params.layers[l]));
    if (want_taps) res.taps.push_back(H.val());
  }
  auto hn = rmsnorm(H, params.final_gain);
  res.logits = matmul(hn, params.head);
  return res;
}

enum class SamplerKind { Greedy, Temperature, TopK };

struct Sampler {
  SamplerKind kind = SamplerKind::Greedy;
  double temperature = 1.0;
  long top_k = 0;
};

template <class T>
std::vector<int> generate(const std::vector<int>& prefix, long steps, const ModelConfig& cfg,
                          const ModelParams<T>& params, const Sampler& sampler, Rng& rng) {
  if (prefix.empty()) throw contract_error("generate: empty prefix");
  if (static_cast<long>(prefix.size()) + steps > cfg.max_ctx)
    throw contract_error("generate: steps exceed max_ctx");
  std::vector<int> ids = prefix;
  for (long step = 0; step < steps; ++step) {
    auto res = forward(ids, cfg, params, /*want_taps=*/false);
    long V = cfg.vocab;
    const T* logits = res.logits.val().data() + (ids.size() - 1) * V;
    int next = 0;
    if (sampler.kind == SamplerKind::Greedy || sampler.temperature <= 1e-12) {
      for (long c = 1; c < V; ++c)
        if (logits[c] > logits[next]) next = static_cast<int>(c);
    } else {
      std::vector<std::pair<T, int>> order(V);
      for (long c = 0; c < V; ++c) order[c] = {logits[c], static_cast<int>(c)};
      long keep = V;
      if (sampler.kind == SamplerKind::TopK && sampler.top_k > 0 && sampler.top_k < V) {
        keep = sampler.top_k;
        std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                          [](auto& a, auto& b) { return a.first > b.first; });
      }
      double mx = -1e300;
      for (long c = 0; c < keep; ++c) mx = std::max(mx, static_cast<double>(order[c].first));
      std::vector<double> probs(keep);
      double sum = 0;
      for (long c = 0; c < keep; ++c) {
        probs[c] = std::exp((static_cast<double>(order[c].first) - mx) / sampler.temperature);
        sum += probs[c];
      }
      std::uniform_real_distribution<double> u(0.0, sum);
      double r = u(rng), acc = 0;
      next = order[keep - 1].second;
      for (long c = 0; c < keep; ++c) {
        acc += probs[c];
        if (acc >= r) { next = order[c].second; break; }
      }
    }
    ids.push_back(next);
  }
  return ids;
}

}  // namespace vtlab
