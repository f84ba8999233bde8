#pragma once

// Width-scaling laboratory: muP ladders, coordinate checks, learning-rate
// sweeps, analytic MACs accounting, and power-law fits on (compute, loss).

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtlab/common.hpp"
#include "vtlab/model.hpp"
#include "vtlab/train.hpp"

namespace vtlab {

struct LadderSpec {
  std::vector<ModelConfig> configs;  // ordered by width

  void validate() const {
    if (configs.size() < 2) throw config_error("ladder: need at least 2 configs");
    for (size_t i = 0; i < configs.size(); ++i) {
      configs[i].validate();
      if (i > 0 && configs[i].dim <= configs[i - 1].dim)
        throw config_error("ladder: widths must be strictly increasing");
      if (configs[i].n_heads != configs[0].n_heads)
        throw config_error("ladder: head count must be constant");
    }
  }
};

// Full-scale sweep grid: powers of two from 2^-10 through 2^-4.
inline std::vector<double> paper_lr_grid() {
  std::vector<double> grid;
  for (int e = -10; e <= -4; ++e) grid.push_back(std::pow(2.0, e));
  return grid;
}

// Linear width/depth growth at constant heads.
inline LadderSpec desk_ladder(long vocab, long max_ctx, ParamMode mode = ParamMode::Standard) {
  LadderSpec ladder;
  std::vector<long> dims = {32, 64, 96, 128};
  std::vector<long> layers = {2, 3, 4, 5};
  for (size_t i = 0; i < dims.size(); ++i) {
    ModelConfig cfg;
    cfg.dim = dims[i];
    cfg.n_layers = layers[i];
    cfg.n_heads = 4;
    cfg.vocab = vocab;
    cfg.max_ctx = max_ctx;
    cfg.param_mode = mode;
    cfg.mup_base_width = mode == ParamMode::MuP ? dims[0] : 0;
    ladder.configs.push_back(cfg);
  }
  return ladder;
}

// Fixed-depth width ladder for coordinate checks; per-layer activation
// statistics stay comparable across widths.
inline LadderSpec coord_ladder(long vocab, long max_ctx, ParamMode mode,
                               std::vector<long> dims = {16, 32, 64, 128}) {
  LadderSpec ladder;
  for (long d : dims) {
    ModelConfig cfg;
    cfg.dim = d;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.vocab = vocab;
    cfg.max_ctx = max_ctx;
    cfg.mlp_hidden = 2 * d;
    cfg.param_mode = mode;
    cfg.mup_base_width = mode == ParamMode::MuP ? dims[0] : 0;
    ladder.configs.push_back(cfg);
  }
  return ladder;
}

struct ScalingPoint {
  double compute = 0;   // training MACs
  double val_loss = 0;  // nats per token
};

struct PowerLaw {
  double a = 0;
  double b = 0;
  std::vector<double> residuals;  // in log space

  std::string to_json() const {
    nlohmann::json j;
    j["a"] = a;
    j["b"] = b;
    j["residuals"] = residuals;
    return j.dump();
  }
};

// Forward GEMM MACs for one sequence of length S:
//   S * (sum_l (4 d^2 + 3 d mlp) + d vocab)   projections, MLP, head
//   + sum_l d S (S+1)                         causal scores and values
// Training counts backward as 2x forward.
inline double forward_macs(const ModelConfig& cfg, long S) {
  double d = static_cast<double>(cfg.dim);
  double per_token = cfg.n_layers * (4 * d * d + 3 * d * cfg.mlp()) + d * cfg.vocab;
  double attn = static_cast<double>(cfg.n_layers) * d * S * (S + 1.0);
  return S * per_token + attn;
}

inline double macs(const ModelConfig& cfg, double tokens_processed) {
  long S = cfg.max_ctx;
  return 3.0 * forward_macs(cfg, S) / S * tokens_processed;
}

// ---- coordinate check ---------------------------------------------------------

struct CoordCheckRow {
  long dim = 0;
  std::vector<double> tap_rms;  // taps 0..L, then the head logits
  bool diverged = false;
};

struct CoordCheckTable {
  std::vector<CoordCheckRow> rows;
  std::vector<double> max_ratio;  // per column: max/min RMS across widths

  std::string to_csv() const {
    std::ostringstream os;
    os << "dim";
    size_t cols = rows.empty() ? 0 : rows[0].tap_rms.size();
    for (size_t c = 0; c + 1 < cols; ++c) os << ",tap" << c;
    os << ",logits,diverged\n";
    for (const auto& r : rows) {
      os << r.dim;
      for (double v : r.tap_rms) os << "," << v;
      os << "," << (r.diverged ? 1 : 0) << "\n";
    }
    return os.str();
  }
};

inline constexpr double kDivergenceRms = 1e3;

// Trains each ladder entry for a few steps on the given fixed corpus, then
// reports activation RMS per tap on an eval sequence. Requires fixed depth.
template <class T>
CoordCheckTable coord_check(const LadderSpec& ladder, long steps,
                            const std::vector<std::vector<int>>& corpus,
                            double max_lr, std::uint64_t seed) {
  ladder.validate();
  for (const auto& cfg : ladder.configs)
    if (cfg.n_layers != ladder.configs[0].n_layers)
      throw config_error("coord_check: ladder must have fixed depth");
  if (corpus.empty()) throw config_error("coord_check: empty corpus");

  long seq_len = static_cast<long>(corpus[0].size());
  CoordCheckTable table;
  for (const auto& cfg : ladder.configs) {
    TrainConfig tcfg;
    tcfg.batch_tokens = seq_len;
    tcfg.max_lr = max_lr;
    tcfg.warmup_steps = 0;
    tcfg.total_steps = steps;
    auto model = init_params<T>(cfg, seed);
    ModelParams<T> trained = model.params;
    if (steps > 0) {
      auto idx = std::make_shared<size_t>(0);
      SequenceStream stream = [&corpus, idx]() -> std::optional<std::vector<int>> {
        return corpus[(*idx)++ % corpus.size()];
      };
      trained = train(cfg, tcfg, stream, model).params;
    }

    std::vector<int> eval(corpus[0].begin(), corpus[0].end() - 1);
    auto out = forward(eval, cfg, trained, /*want_taps=*/true);
    CoordCheckRow row;
    row.dim = cfg.dim;
    auto rms = [](const std::vector<T>& v) {
      double acc = 0;
      for (T x : v) acc += static_cast<double>(x) * x;
      return std::sqrt(acc / v.size());
    };
    for (const auto& tap : out.taps) row.tap_rms.push_back(rms(tap));
    row.tap_rms.push_back(rms(out.logits.val()));
    for (double v : row.tap_rms)
      if (!std::isfinite(v) || v > kDivergenceRms) row.diverged = true;
    table.rows.push_back(row);
  }

  size_t cols = table.rows[0].tap_rms.size();
  for (size_t c = 0; c < cols; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (const auto& r : table.rows) {
      lo = std::min(lo, r.tap_rms[c]);
      hi = std::max(hi, r.tap_rms[c]);
    }
    table.max_ratio.push_back(lo > 0 ? hi / lo : std::numeric_limits<double>::infinity());
  }
  return table;
}

// ---- learning-rate sweep ------------------------------------------------------

struct LrSweepResult {
  std::vector<long> dims;
  std::vector<double> lrs;
  std::vector<std::vector<double>> loss;  // [width][lr], +inf when diverged
  std::vector<size_t> argmin;             // per width, index into lrs

  std::string to_csv() const {
    std::ostringstream os;
    os << "dim";
    for (double lr : lrs) os << "," << lr;
    os << "\n";
    for (size_t w = 0; w < dims.size(); ++w) {
      os << dims[w];
      for (double l : loss[w]) os << "," << l;
      os << "\n";
    }
    return os.str();
  }
};

// Trains every (width, lr) cell on an identical data order; the final-step
// training loss fills the matrix.
template <class T>
LrSweepResult lr_sweep(const LadderSpec& ladder, const std::vector<double>& lr_grid,
                       long budget_steps, const std::vector<std::vector<int>>& corpus,
                       std::uint64_t seed) {
  ladder.validate();
  if (lr_grid.empty()) throw config_error("lr_sweep: empty grid");
  if (corpus.empty()) throw config_error("lr_sweep: empty corpus");
  long seq_len = static_cast<long>(corpus[0].size());

  LrSweepResult result;
  result.lrs = lr_grid;
  for (const auto& cfg : ladder.configs) {
    result.dims.push_back(cfg.dim);
    std::vector<double> row;
    for (double lr : lr_grid) {
      TrainConfig tcfg;
      tcfg.batch_tokens = seq_len;
      tcfg.max_lr = lr;
      tcfg.warmup_steps = budget_steps > 4 ? budget_steps / 4 : 0;
      tcfg.total_steps = budget_steps;
      double cell = std::numeric_limits<double>::infinity();
      try {
        auto idx = std::make_shared<size_t>(0);
        SequenceStream stream = [&corpus, idx]() -> std::optional<std::vector<int>> {
          return corpus[(*idx)++ % corpus.size()];
        };
        auto res = train(cfg, tcfg, stream, init_params<T>(cfg, seed));
        double final_loss = res.log.back().loss;
        if (std::isfinite(final_loss)) cell = final_loss;
      } catch (const contract_error&) {
        // non-finite loss or gradient: diverged cell
      }
      row.push_back(cell);
    }
    result.argmin.push_back(static_cast<size_t>(
        std::min_element(row.begin(), row.end()) - row.begin()));
    result.loss.push_back(std::move(row));
  }
  return result;
}

// ---- power-law fit ------------------------------------------------------------

// Least squares on (ln C, ln L): a = exp(intercept), b = slope.
inline PowerLaw fit_power_law(const std::vector<ScalingPoint>& points) {
  if (points.size() < 2) throw contract_error("fit: need at least 2 points");
  for (const auto& p : points)
    if (p.compute <= 0 || p.val_loss <= 0)
      throw contract_error("fit: compute and loss must be positive");
  for (size_t i = 0; i < points.size(); ++i)
    for (size_t j = i + 1; j < points.size(); ++j)
      if (points[i].compute == points[j].compute)
        throw contract_error("fit: computes must be distinct");

  double n = static_cast<double>(points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : points) {
    double x = std::log(p.compute), y = std::log(p.val_loss);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  PowerLaw law;
  law.b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  law.a = std::exp((sy - law.b * sx) / n);
  for (const auto& p : points)
    law.residuals.push_back(std::log(p.val_loss) - (std::log(law.a) + law.b * std::log(p.compute)));
  return law;
}

}  // namespace vtlab
