// Desk-scale autoregressive video pre-training lab. Every workflow is a
// subcommand; each run writes its outputs plus a JSON manifest describing the
// resolved configuration, seed, and input hashes.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vtlab/io.hpp"
#include "vtlab/ngram.hpp"
#include "vtlab/probe.hpp"
#include "vtlab/scaling.hpp"
#include "vtlab/sequence.hpp"
#include "vtlab/sprites.hpp"
#include "vtlab/train.hpp"
#include "vtlab/video_eval.hpp"
#include "vtlab/vq.hpp"

using namespace vtlab;

namespace {

struct CommonOpts {
  std::uint64_t seed = 0;
  bool deterministic = false;  // recorded; execution is single-threaded either way
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_flag("--deterministic", c.deterministic, "force deterministic execution");
}

RunManifest base_manifest(const std::string& command, const CommonOpts& c) {
  RunManifest m;
  m.command = command;
  m.seed = c.seed;
  m.config["deterministic"] = c.deterministic ? "1" : "0";
  return m;
}

SpriteVideoSpec random_video_spec(int frames, int size, int sprites, Rng& rng) {
  SpriteVideoSpec spec;
  spec.frames = frames;
  spec.width = spec.height = size;
  std::uniform_int_distribution<int> shape(0, kNumSpriteShapes - 1);
  std::uniform_real_distribution<double> vel(-2.0, 2.0);
  std::uniform_real_distribution<float> col(0.2f, 1.0f);
  for (int i = 0; i < sprites; ++i) {
    Sprite s;
    s.shape = static_cast<SpriteShape>(shape(rng));
    s.size = 6 + static_cast<int>(rng() % 5);
    s.random_start = true;
    s.vx = vel(rng);
    s.vy = vel(rng);
    s.color = {col(rng), col(rng), col(rng)};
    spec.sprites.push_back(s);
    spec.label = static_cast<int>(s.shape);
  }
  return spec;
}

std::vector<int> to_int_ids(const std::vector<std::uint32_t>& ids) {
  return std::vector<int>(ids.begin(), ids.end());
}

struct ModelFlags {
  long dim = 64, heads = 4, layers = 2, vocab = 516, max_ctx = 4098, mlp = 0, base_width = 0;
  double rope_base = 10000.0;
  bool mup = false;
  bool sincos = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--dim", dim, "model width");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_option("--layers", layers, "transformer layers");
    cmd->add_option("--vocab", vocab, "vocabulary incl. specials");
    cmd->add_option("--max-ctx", max_ctx, "context length");
    cmd->add_option("--mlp", mlp, "MLP hidden width (0 = 8/3 rule)");
    cmd->add_option("--rope-base", rope_base, "rotary frequency base");
    cmd->add_option("--base-width", base_width, "muP base width");
    cmd->add_flag("--mup", mup, "muP parameterization");
    cmd->add_flag("--sincos", sincos, "absolute sincos positions instead of RoPE");
  }
  ModelConfig config() const {
    ModelConfig cfg;
    cfg.dim = dim;
    cfg.n_heads = heads;
    cfg.n_layers = layers;
    cfg.vocab = vocab;
    cfg.max_ctx = max_ctx;
    cfg.mlp_hidden = mlp;
    cfg.rope_base = rope_base;
    cfg.pos_mode = sincos ? PosMode::SincosAbsolute : PosMode::Rope;
    cfg.param_mode = mup ? ParamMode::MuP : ParamMode::Standard;
    cfg.mup_base_width = mup ? (base_width > 0 ? base_width : dim) : 0;
    return cfg;
  }
  void describe(RunManifest& m) const {
    auto cfg = config();
    m.config["dim"] = std::to_string(cfg.dim);
    m.config["heads"] = std::to_string(cfg.n_heads);
    m.config["layers"] = std::to_string(cfg.n_layers);
    m.config["vocab"] = std::to_string(cfg.vocab);
    m.config["max_ctx"] = std::to_string(cfg.max_ctx);
    m.config["mlp"] = std::to_string(cfg.mlp());
    m.config["mup"] = mup ? "1" : "0";
  }
};

// ---- tokenize -------------------------------------------------------------

int cmd_tokenize(int videos, int frames, int size, int patch, int K, int kmeans_iters,
                 const std::string& codebook_out, const std::string& tokens_out,
                 const CommonOpts& common) {
  Rng rng(common.seed);
  std::vector<SpriteVideo> clips;
  for (int v = 0; v < videos; ++v)
    clips.push_back(synth_video(random_video_spec(frames, size, 1 + static_cast<int>(rng() % 2), rng), rng));

  // codebook fit on every patch of the corpus
  long d = 3L * patch * patch;
  PatchMatrix all;
  all.d = d;
  for (const auto& clip : clips)
    for (const auto& frame : clip.frames) {
      auto p = patchify(frame, patch);
      all.data.insert(all.data.end(), p.data.begin(), p.data.end());
      all.n += p.n;
    }
  auto cb = fit_codebook(all, K, kmeans_iters, common.seed);
  save_codebook(cb, codebook_out);

  TokenFile tf;
  tf.vocab = static_cast<std::uint32_t>(K);
  for (const auto& clip : clips) {
    std::vector<std::uint32_t> stream;
    for (const auto& frame : clip.frames) {
      auto grid = encode_frame(frame, cb, patch);
      stream.insert(stream.end(), grid.ids.begin(), grid.ids.end());
    }
    tf.sequences.push_back(std::move(stream));
  }
  save_tokens(tf, tokens_out);

  auto m = base_manifest("tokenize", common);
  m.config["videos"] = std::to_string(videos);
  m.config["frames"] = std::to_string(frames);
  m.config["size"] = std::to_string(size);
  m.config["patch"] = std::to_string(patch);
  m.config["K"] = std::to_string(K);
  m.outputs = {codebook_out, tokens_out};
  m.write(tokens_out + ".manifest.json");
  std::cout << "codebook K=" << K << " d=" << d << " -> " << codebook_out << "\n"
            << videos << " token streams -> " << tokens_out << "\n";
  return 0;
}

// ---- build-seqs -----------------------------------------------------------

int cmd_build_seqs(const std::string& tokens_in, int rows, int cols, int frames,
                   const std::string& modality, const std::string& out,
                   const CommonOpts& common) {
  auto tf = load_tokens(tokens_in);
  long per_frame = static_cast<long>(rows) * cols;
  TokenFile packed;
  packed.vocab = tf.vocab + NUM_SPECIALS;
  for (const auto& stream : tf.sequences) {
    if (static_cast<long>(stream.size()) != per_frame * frames)
      throw config_error("build-seqs: stream length does not match rows*cols*frames");
    std::vector<TokenGrid> grids(frames);
    for (int f = 0; f < frames; ++f) {
      grids[f].rows = rows;
      grids[f].cols = cols;
      grids[f].ids.assign(stream.begin() + f * per_frame, stream.begin() + (f + 1) * per_frame);
    }
    auto seq = modality == "image" ? build_image_sequence(grids) : build_video_sequence(grids);
    packed.sequences.push_back(seq.ids);
  }
  save_tokens(packed, out);

  auto m = base_manifest("build-seqs", common);
  m.config["rows"] = std::to_string(rows);
  m.config["cols"] = std::to_string(cols);
  m.config["frames"] = std::to_string(frames);
  m.config["modality"] = modality;
  m.input_hashes[tokens_in] = hash_file(tokens_in);
  m.outputs = {out};
  m.write(out + ".manifest.json");
  std::cout << packed.sequences.size() << " sequences of length "
            << packed.sequences[0].size() << " -> " << out << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const ModelFlags& mf, const std::string& seqs_path, long steps,
              long batch_tokens, double lr, long warmup, const std::string& prefix,
              const CommonOpts& common) {
  auto cfg = mf.config();
  auto tf = load_tokens(seqs_path);
  if (tf.sequences.empty()) throw config_error("train: no sequences");

  TrainConfig tcfg;
  tcfg.batch_tokens = batch_tokens > 0 ? batch_tokens
                                       : static_cast<long>(tf.sequences[0].size());
  tcfg.max_lr = lr;
  tcfg.warmup_steps = warmup;
  tcfg.total_steps = steps;
  tcfg.seed = common.seed;
  tcfg.deterministic = common.deterministic;

  auto idx = std::make_shared<size_t>(0);
  SequenceStream stream = [&tf, idx]() -> std::optional<std::vector<int>> {
    return to_int_ids(tf.sequences[(*idx)++ % tf.sequences.size()]);
  };

  std::string metrics_path = prefix + ".metrics.jsonl";
  std::string ckpt_path = prefix + ".ckpt.toto";
  std::ofstream metrics(metrics_path);
  auto result = train(cfg, tcfg, stream, init_params<float>(cfg, common.seed), &metrics);
  save_checkpoint(Checkpoint<float>{cfg, result.params}, ckpt_path);

  auto m = base_manifest("train", common);
  mf.describe(m);
  m.config["steps"] = std::to_string(steps);
  m.config["batch_tokens"] = std::to_string(tcfg.batch_tokens);
  m.config["max_lr"] = std::to_string(lr);
  m.config["warmup"] = std::to_string(warmup);
  m.input_hashes[seqs_path] = hash_file(seqs_path);
  m.outputs = {ckpt_path, metrics_path};
  m.write(prefix + ".manifest.json");
  std::cout << "final loss " << result.log.back().loss << " after "
            << result.log.size() << " steps -> " << ckpt_path << "\n";
  return 0;
}

// ---- profile-loss -------------------------------------------------------------

int cmd_profile(const std::string& ckpt_path, const std::string& seqs_path,
                long tokens_per_frame, const std::string& out, const CommonOpts& common) {
  auto ckpt = load_checkpoint<float>(ckpt_path);
  auto tf = load_tokens(seqs_path);
  std::vector<std::vector<int>> seqs;
  for (const auto& s : tf.sequences) seqs.push_back(to_int_ids(s));
  auto prof = per_token_loss_profile(ckpt.config, ckpt.params, seqs, tokens_per_frame);

  std::ofstream os(out);
  os << "position,loss\n";
  for (size_t j = 0; j < prof.per_position.size(); ++j)
    os << j << "," << prof.per_position[j] << "\n";
  os << "group,loss\n";
  for (size_t g = 0; g < prof.per_group.size(); ++g)
    os << (g == 0 ? std::string("specials") : "frame" + std::to_string(g)) << ","
       << prof.per_group[g] << "\n";

  auto m = base_manifest("profile-loss", common);
  m.config["tokens_per_frame"] = std::to_string(tokens_per_frame);
  m.input_hashes[ckpt_path] = hash_file(ckpt_path);
  m.input_hashes[seqs_path] = hash_file(seqs_path);
  m.outputs = {out};
  m.write(out + ".manifest.json");
  std::cout << "profile over " << prof.per_position.size() << " positions -> " << out << "\n";
  return 0;
}

// ---- probing task -------------------------------------------------------------

struct ProbeTask {
  std::vector<std::vector<int>> train_seqs, val_seqs;
  std::vector<int> train_labels, val_labels;
};

// Sprite-shape classification: single-sprite clips labeled by shape, encoded
// with the given codebook and packed as video sequences.
ProbeTask make_probe_task(const Codebook& cb, int samples, int frames, int size, int patch,
                          std::uint64_t seed) {
  Rng rng(seed);
  ProbeTask task;
  for (int i = 0; i < samples; ++i) {
    auto spec = random_video_spec(frames, size, 1, rng);
    spec.sprites[0].shape = static_cast<SpriteShape>(i % kNumSpriteShapes);
    spec.label = i % kNumSpriteShapes;
    auto clip = synth_video(spec, rng);
    std::vector<TokenGrid> grids;
    for (const auto& frame : clip.frames) grids.push_back(encode_frame(frame, cb, patch));
    auto seq = build_video_sequence(grids);
    bool val = i % 5 == 4;  // 80/20 split
    (val ? task.val_seqs : task.train_seqs).push_back(to_int_ids(seq.ids));
    (val ? task.val_labels : task.train_labels).push_back(spec.label);
  }
  return task;
}

int cmd_probe(const std::string& ckpt_path, const std::string& codebook_path, long layer,
              const std::string& pool, int samples, int frames, int size, int patch,
              long epochs, const CommonOpts& common) {
  auto ckpt = load_checkpoint<float>(ckpt_path);
  auto cb = load_codebook(codebook_path);
  auto task = make_probe_task(cb, samples, frames, size, patch, common.seed);

  ProbeOptions opts;
  opts.classes = kNumSpriteShapes;
  opts.epochs = epochs;
  opts.pooling = pool == "average" ? Pooling::Average : Pooling::Attention;
  opts.seed = common.seed;
  auto tf = tap_features(ckpt.config, ckpt.params, task.train_seqs, layer);
  auto vf = tap_features(ckpt.config, ckpt.params, task.val_seqs, layer);
  auto res = train_probe(tf, task.train_labels, vf, task.val_labels, opts);

  auto m = base_manifest("probe", common);
  m.config["layer"] = std::to_string(layer);
  m.config["pool"] = pool;
  m.config["samples"] = std::to_string(samples);
  m.input_hashes[ckpt_path] = hash_file(ckpt_path);
  m.input_hashes[codebook_path] = hash_file(codebook_path);
  m.write("probe.manifest.json");
  std::cout << "layer " << layer << " " << pool << " pooling: train "
            << res.train_accuracy << " val " << res.val_accuracy
            << (res.degenerate ? " (degenerate labels)" : "") << "\n";
  return 0;
}

int cmd_sweep_layers(const std::string& ckpt_path, const std::string& codebook_path,
                     const std::string& pool, int samples, int frames, int size, int patch,
                     long epochs, const std::string& out, const CommonOpts& common) {
  auto ckpt = load_checkpoint<float>(ckpt_path);
  auto cb = load_codebook(codebook_path);
  auto task = make_probe_task(cb, samples, frames, size, patch, common.seed);

  ProbeOptions opts;
  opts.classes = kNumSpriteShapes;
  opts.epochs = epochs;
  opts.pooling = pool == "average" ? Pooling::Average : Pooling::Attention;
  opts.seed = common.seed;
  auto report = layer_sweep(ckpt.config, ckpt.params, task.train_seqs, task.train_labels,
                            task.val_seqs, task.val_labels, opts);
  std::ofstream(out) << report.to_json() << "\n";

  auto m = base_manifest("sweep-layers", common);
  m.config["pool"] = pool;
  m.input_hashes[ckpt_path] = hash_file(ckpt_path);
  m.input_hashes[codebook_path] = hash_file(codebook_path);
  m.outputs = {out};
  m.write(out + ".manifest.json");
  std::cout << report.to_json() << "\n";
  return 0;
}

// ---- scaling ------------------------------------------------------------------

std::vector<std::vector<int>> synthetic_corpus(int count, int len, int vocab,
                                               std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> tok(NUM_SPECIALS, vocab - 1);
  std::vector<std::vector<int>> corpus(count, std::vector<int>(len));
  for (auto& s : corpus) {
    s.front() = START_VIDEO;
    s.back() = END_TOKEN;
    for (size_t i = 1; i + 1 < s.size(); ++i) s[i] = tok(rng);
  }
  return corpus;
}

int cmd_coordcheck(const std::vector<long>& widths, long steps, bool standard, long vocab,
                   long seq_len, double lr, const std::string& out, const CommonOpts& common) {
  auto ladder = coord_ladder(vocab, seq_len, standard ? ParamMode::Standard : ParamMode::MuP,
                             widths);
  auto corpus = synthetic_corpus(4, static_cast<int>(seq_len), static_cast<int>(vocab),
                                 common.seed);
  auto table = coord_check<float>(ladder, steps, corpus, lr, common.seed);
  std::ofstream(out) << table.to_csv();

  auto m = base_manifest("coordcheck", common);
  m.config["steps"] = std::to_string(steps);
  m.config["mode"] = standard ? "standard" : "mup";
  m.outputs = {out};
  m.write(out + ".manifest.json");
  std::cout << table.to_csv();
  for (size_t c = 0; c < table.max_ratio.size(); ++c)
    std::cout << "col " << c << " max/min ratio " << table.max_ratio[c] << "\n";
  return 0;
}

int cmd_lr_sweep(const std::vector<long>& widths, const std::vector<double>& lrs, long steps,
                 bool standard, long vocab, long seq_len, const std::string& out,
                 const CommonOpts& common) {
  auto ladder = coord_ladder(vocab, seq_len, standard ? ParamMode::Standard : ParamMode::MuP,
                             widths);
  auto corpus = synthetic_corpus(4, static_cast<int>(seq_len), static_cast<int>(vocab),
                                 common.seed);
  auto result = lr_sweep<float>(ladder, lrs, steps, corpus, common.seed);
  std::ofstream(out) << result.to_csv();

  auto m = base_manifest("lr-sweep", common);
  m.config["steps"] = std::to_string(steps);
  m.outputs = {out};
  m.write(out + ".manifest.json");
  std::cout << result.to_csv();
  for (size_t w = 0; w < result.dims.size(); ++w)
    std::cout << "dim " << result.dims[w] << " argmin lr " << result.lrs[result.argmin[w]] << "\n";
  return 0;
}

int cmd_fit_law(const std::string& points_path, const std::string& out,
                const CommonOpts& common) {
  std::ifstream is(points_path);
  if (!is) throw io_error("cannot open " + points_path);
  std::vector<ScalingPoint> pts;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("compute", 0) == 0) continue;
    std::istringstream ls(line);
    ScalingPoint p;
    char comma;
    if (ls >> p.compute >> comma >> p.val_loss) pts.push_back(p);
  }
  auto law = fit_power_law(pts);
  std::ofstream(out) << law.to_json() << "\n";

  auto m = base_manifest("fit-law", common);
  m.input_hashes[points_path] = hash_file(points_path);
  m.outputs = {out};
  m.write(out + ".manifest.json");
  std::cout << law.to_json() << "\n";
  return 0;
}

// ---- ngram ----------------------------------------------------------------------

int cmd_ngram(const std::string& tokens_path, int n, const CommonOpts& common) {
  auto tf = load_tokens(tokens_path);
  std::vector<std::vector<std::uint32_t>> seqs = tf.sequences;
  auto hist = ngram_histogram(seqs, n, tf.vocab);
  nlohmann::json j;
  j["n"] = n;
  j["distinct"] = hist.distinct;
  j["total_windows"] = hist.total_windows;
  j["coverage"] = hist.coverage;
  std::cout << j.dump() << "\n";

  auto m = base_manifest("ngram", common);
  m.config["n"] = std::to_string(n);
  m.input_hashes[tokens_path] = hash_file(tokens_path);
  m.write(tokens_path + ".ngram.manifest.json");
  return 0;
}

// ---- track ----------------------------------------------------------------------

int cmd_track(const std::string& ckpt_path, const std::string& codebook_path, long layer,
              bool pixel_oracle, int frames, int size, int patch, long context, long top_k,
              double temperature, const std::string& out_prefix, const CommonOpts& common) {
  Rng rng(common.seed);
  SpriteVideoSpec spec;
  spec.frames = frames;
  spec.width = spec.height = size;
  Sprite s;
  s.shape = SpriteShape::Square;
  s.size = 2 * patch;
  s.x = 0;
  s.y = size / 2 - patch;
  s.vx = patch;  // one grid cell per frame
  spec.sprites = {s};
  auto clip = synth_video(spec, rng);

  std::vector<PixelMask> gt;
  for (const auto& mask : clip.masks) gt.push_back(downsample_mask(mask, patch));

  std::vector<FeatureGrid<float>> feats;
  if (pixel_oracle) {
    for (const auto& frame : clip.frames) {
      auto p = patchify(frame, patch);
      FeatureGrid<float> g;
      g.rows = frame.height / patch;
      g.cols = frame.width / patch;
      g.dim = p.d + 1;
      g.data.resize(g.rows * g.cols * g.dim);
      for (long i = 0; i < p.n; ++i) {
        for (long d = 0; d < p.d; ++d) g.data[i * g.dim + d] = p.row(i)[d];
        g.data[i * g.dim + p.d] = 1.0f;  // bias channel keeps empty patches comparable
      }
      feats.push_back(std::move(g));
    }
  } else {
    auto ckpt = load_checkpoint<float>(ckpt_path);
    auto cb = load_codebook(codebook_path);
    std::vector<TokenGrid> grids;
    for (const auto& frame : clip.frames) grids.push_back(encode_frame(frame, cb, patch));
    feats = extract_patch_features(ckpt.config, ckpt.params, grids, layer);
  }

  auto predicted = propagate_labels(feats, gt[0], context, top_k, temperature);
  auto score = eval_masks(predicted, gt);

  std::string csv_path = out_prefix + ".track.csv";
  std::ofstream os(csv_path);
  os << "J,F,JF\n" << score.J << "," << score.F << "," << score.JF << "\n";
  std::vector<std::string> outputs = {csv_path};
  for (int t = 0; t < frames; ++t) {
    std::string mp = out_prefix + ".mask" + std::to_string(t) + ".pgm";
    save_mask(predicted[t], mp);
    outputs.push_back(mp);
  }

  auto m = base_manifest("track", common);
  m.config["mode"] = pixel_oracle ? "pixel-oracle" : "model";
  m.config["layer"] = std::to_string(layer);
  if (!pixel_oracle) {
    m.input_hashes[ckpt_path] = hash_file(ckpt_path);
    m.input_hashes[codebook_path] = hash_file(codebook_path);
  }
  m.outputs = outputs;
  m.write(out_prefix + ".manifest.json");
  std::cout << "J " << score.J << " F " << score.F << " J&F " << score.JF << "\n";
  return 0;
}

// ---- gen ------------------------------------------------------------------------

int cmd_gen(const std::string& ckpt_path, const std::string& prefix_csv, long steps,
            double temperature, long top_k, const CommonOpts& common) {
  auto ckpt = load_checkpoint<float>(ckpt_path);
  std::vector<int> prefix;
  std::istringstream is(prefix_csv);
  std::string tok;
  while (std::getline(is, tok, ',')) prefix.push_back(std::stoi(tok));
  Sampler sampler;
  if (top_k > 0) {
    sampler.kind = SamplerKind::TopK;
    sampler.top_k = top_k;
    sampler.temperature = temperature;
  } else if (temperature > 0) {
    sampler.kind = SamplerKind::Temperature;
    sampler.temperature = temperature;
  }
  Rng rng(common.seed);
  auto ids = generate(prefix, steps, ckpt.config, ckpt.params, sampler, rng);
  for (size_t i = 0; i < ids.size(); ++i) std::cout << (i ? "," : "") << ids[i];
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale autoregressive visual pre-training lab"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags override");

  CommonOpts common;

  // tokenize
  auto* tok = app.add_subcommand("tokenize", "fit a codebook on sprite videos and encode them");
  int t_videos = 8, t_frames = 16, t_size = 64, t_patch = 8, t_K = 512, t_iters = 20;
  std::string t_cb = "codebook.vqcb", t_out = "tokens.toks";
  tok->add_option("--videos", t_videos);
  tok->add_option("--frames", t_frames);
  tok->add_option("--size", t_size);
  tok->add_option("--patch", t_patch);
  tok->add_option("--K", t_K);
  tok->add_option("--iters", t_iters);
  tok->add_option("--codebook", t_cb);
  tok->add_option("--out", t_out);
  add_common(tok, common);

  // build-seqs
  auto* bs = app.add_subcommand("build-seqs", "pack token grids into training sequences");
  std::string b_in = "tokens.toks", b_mod = "video", b_out = "seqs.toks";
  int b_rows = 8, b_cols = 8, b_frames = 16;
  bs->add_option("--tokens", b_in)->required();
  bs->add_option("--rows", b_rows);
  bs->add_option("--cols", b_cols);
  bs->add_option("--frames", b_frames);
  bs->add_option("--modality", b_mod)->check(CLI::IsMember({"video", "image"}));
  bs->add_option("--out", b_out);
  add_common(bs, common);

  // train
  auto* tr = app.add_subcommand("train", "next-token pre-training");
  ModelFlags tr_model;
  tr_model.add(tr);
  std::string tr_seqs, tr_prefix = "run";
  long tr_steps = 100, tr_batch = 0, tr_warmup = 10;
  double tr_lr = 3e-4;
  tr->add_option("--seqs", tr_seqs)->required();
  tr->add_option("--steps", tr_steps);
  tr->add_option("--batch-tokens", tr_batch, "0 = one sequence per step");
  tr->add_option("--lr", tr_lr);
  tr->add_option("--warmup", tr_warmup);
  tr->add_option("--out-prefix", tr_prefix);
  add_common(tr, common);

  // profile-loss
  auto* pl = app.add_subcommand("profile-loss", "per-position loss profile");
  std::string pl_ckpt, pl_seqs, pl_out = "profile.csv";
  long pl_tpf = 256;
  pl->add_option("--ckpt", pl_ckpt)->required();
  pl->add_option("--seqs", pl_seqs)->required();
  pl->add_option("--tokens-per-frame", pl_tpf);
  pl->add_option("--out", pl_out);
  add_common(pl, common);

  // probe
  auto* pr = app.add_subcommand("probe", "train a pooled linear probe at one tap");
  std::string pr_ckpt, pr_cb, pr_pool = "attention";
  long pr_layer = 1, pr_epochs = 20;
  int pr_samples = 60, pr_frames = 4, pr_size = 32, pr_patch = 8;
  pr->add_option("--ckpt", pr_ckpt)->required();
  pr->add_option("--codebook", pr_cb)->required();
  pr->add_option("--layer", pr_layer);
  pr->add_option("--pool", pr_pool)->check(CLI::IsMember({"attention", "average"}));
  pr->add_option("--samples", pr_samples);
  pr->add_option("--frames", pr_frames);
  pr->add_option("--size", pr_size);
  pr->add_option("--patch", pr_patch);
  pr->add_option("--epochs", pr_epochs);
  add_common(pr, common);

  // sweep-layers
  auto* sl = app.add_subcommand("sweep-layers", "probe accuracy at every tap");
  std::string sl_ckpt, sl_cb, sl_pool = "attention", sl_out = "sweep.json";
  long sl_epochs = 20;
  int sl_samples = 60, sl_frames = 4, sl_size = 32, sl_patch = 8;
  sl->add_option("--ckpt", sl_ckpt)->required();
  sl->add_option("--codebook", sl_cb)->required();
  sl->add_option("--pool", sl_pool)->check(CLI::IsMember({"attention", "average"}));
  sl->add_option("--samples", sl_samples);
  sl->add_option("--frames", sl_frames);
  sl->add_option("--size", sl_size);
  sl->add_option("--patch", sl_patch);
  sl->add_option("--epochs", sl_epochs);
  sl->add_option("--out", sl_out);
  add_common(sl, common);

  // coordcheck
  auto* cc = app.add_subcommand("coordcheck", "activation RMS across a width ladder");
  std::vector<long> cc_widths = {16, 32, 64, 128};
  long cc_steps = 10, cc_vocab = 68, cc_seq = 66;
  double cc_lr = 1e-2;
  bool cc_standard = false;
  std::string cc_out = "coordcheck.csv";
  cc->add_option("--widths", cc_widths)->delimiter(',');
  cc->add_option("--steps", cc_steps);
  cc->add_option("--vocab", cc_vocab);
  cc->add_option("--seq-len", cc_seq);
  cc->add_option("--lr", cc_lr);
  cc->add_flag("--standard", cc_standard, "positive control without muP");
  cc->add_option("--out", cc_out);
  add_common(cc, common);

  // lr-sweep
  auto* ls = app.add_subcommand("lr-sweep", "loss matrix over widths and learning rates");
  std::vector<long> ls_widths = {16, 32, 64};
  std::vector<double> ls_lrs;
  long ls_steps = 30, ls_vocab = 68, ls_seq = 66;
  bool ls_standard = false;
  std::string ls_out = "lrsweep.csv";
  ls->add_option("--widths", ls_widths)->delimiter(',');
  ls->add_option("--lrs", ls_lrs, "grid; default powers of 2 from 2^-10 to 2^-4")->delimiter(',');
  ls->add_option("--steps", ls_steps);
  ls->add_option("--vocab", ls_vocab);
  ls->add_option("--seq-len", ls_seq);
  ls->add_flag("--standard", ls_standard);
  ls->add_option("--out", ls_out);
  add_common(ls, common);

  // fit-law
  auto* fl = app.add_subcommand("fit-law", "power-law fit on compute,loss points");
  std::string fl_points, fl_out = "law.json";
  fl->add_option("--points", fl_points)->required();
  fl->add_option("--out", fl_out);
  add_common(fl, common);

  // ngram
  auto* ng = app.add_subcommand("ngram", "n-gram statistics of a token file");
  std::string ng_tokens;
  int ng_n = 1;
  ng->add_option("--tokens", ng_tokens)->required();
  ng->add_option("--n", ng_n)->check(CLI::Range(1, 3));
  add_common(ng, common);

  // track
  auto* tk = app.add_subcommand("track", "label propagation on a synthetic clip");
  std::string tk_ckpt, tk_cb, tk_prefix = "track";
  long tk_layer = 1, tk_context = 7, tk_topk = 7;
  double tk_temp = 0.07;
  bool tk_pixel = false;
  int tk_frames = 8, tk_size = 40, tk_patch = 4;
  tk->add_option("--ckpt", tk_ckpt);
  tk->add_option("--codebook", tk_cb);
  tk->add_option("--layer", tk_layer);
  tk->add_flag("--pixel-oracle", tk_pixel, "raw patch features instead of model taps");
  tk->add_option("--frames", tk_frames);
  tk->add_option("--size", tk_size);
  tk->add_option("--patch", tk_patch);
  tk->add_option("--context", tk_context);
  tk->add_option("--top-k", tk_topk);
  tk->add_option("--temperature", tk_temp);
  tk->add_option("--out-prefix", tk_prefix);
  add_common(tk, common);

  // gen
  auto* gn = app.add_subcommand("gen", "autoregressive continuation of a prefix");
  std::string gn_ckpt, gn_prefix = "1";
  long gn_steps = 16, gn_topk = 0;
  double gn_temp = 0.0;
  gn->add_option("--ckpt", gn_ckpt)->required();
  gn->add_option("--prefix", gn_prefix, "comma-separated token ids");
  gn->add_option("--steps", gn_steps);
  gn->add_option("--temperature", gn_temp);
  gn->add_option("--top-k", gn_topk);
  add_common(gn, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*tok) return cmd_tokenize(t_videos, t_frames, t_size, t_patch, t_K, t_iters, t_cb, t_out, common);
    if (*bs) return cmd_build_seqs(b_in, b_rows, b_cols, b_frames, b_mod, b_out, common);
    if (*tr) return cmd_train(tr_model, tr_seqs, tr_steps, tr_batch, tr_lr, tr_warmup, tr_prefix, common);
    if (*pl) return cmd_profile(pl_ckpt, pl_seqs, pl_tpf, pl_out, common);
    if (*pr) return cmd_probe(pr_ckpt, pr_cb, pr_layer, pr_pool, pr_samples, pr_frames, pr_size, pr_patch, pr_epochs, common);
    if (*sl) return cmd_sweep_layers(sl_ckpt, sl_cb, sl_pool, sl_samples, sl_frames, sl_size, sl_patch, sl_epochs, sl_out, common);
    if (*cc) return cmd_coordcheck(cc_widths, cc_steps, cc_standard, cc_vocab, cc_seq, cc_lr, cc_out, common);
    if (*ls) {
      if (ls_lrs.empty()) ls_lrs = paper_lr_grid();
      return cmd_lr_sweep(ls_widths, ls_lrs, ls_steps, ls_standard, ls_vocab, ls_seq, ls_out, common);
    }
    if (*fl) return cmd_fit_law(fl_points, fl_out, common);
    if (*ng) return cmd_ngram(ng_tokens, ng_n, common);
    if (*tk) {
      if (!tk_pixel && (tk_ckpt.empty() || tk_cb.empty()))
        throw config_error("track: --ckpt and --codebook required without --pixel-oracle");
      return cmd_track(tk_ckpt, tk_cb, tk_layer, tk_pixel, tk_frames, tk_size, tk_patch,
                       tk_context, tk_topk, tk_temp, tk_prefix, common);
    }
    if (*gn) return cmd_gen(gn_ckpt, gn_prefix, gn_steps, gn_temp, gn_topk, common);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
