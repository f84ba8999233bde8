#pragma once

// Binary file formats and run manifests. All integers and floats are
// little-endian. Formats:
//   codebook:   "VQCB" u32 version=1, u32 K, u32 D, K*D float32 row-major
//   tokens:     "TOKS" u32 K, u32 sequence count, per sequence u32 length
//               then u32 ids
//   checkpoint: "TOTO" u32 version, u32 tensor count; per tensor u16 name
//               length, name bytes, u8 dtype (0=f32, 1=f64), u8 rank,
//               u32 dims, raw data
// Round-trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtlab/common.hpp"
#include "vtlab/model.hpp"
#include "vtlab/sequence.hpp"
#include "vtlab/sprites.hpp"
#include "vtlab/vq.hpp"

namespace vtlab {

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw io_error("unexpected end of file");
  return v;
}

inline void write_magic(std::ostream& os, const char magic[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char magic[5], const std::string& what) {
  char buf[4];
  is.read(buf, 4);
  if (!is || std::memcmp(buf, magic, 4) != 0) throw io_error("bad magic for " + what);
}

}  // namespace detail

// ---- codebook ---------------------------------------------------------------

inline void save_codebook(const Codebook& cb, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path);
  detail::write_magic(os, "VQCB");
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint32_t>(os, cb.K);
  detail::write_pod<std::uint32_t>(os, cb.D);
  os.write(reinterpret_cast<const char*>(cb.centroids.data()),
           static_cast<std::streamsize>(cb.centroids.size() * sizeof(float)));
  if (!os) throw io_error("write failed: " + path);
}

inline Codebook load_codebook(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  detail::expect_magic(is, "VQCB", path);
  auto version = detail::read_pod<std::uint32_t>(is);
  if (version != 1) throw io_error("unsupported codebook version");
  Codebook cb;
  cb.K = detail::read_pod<std::uint32_t>(is);
  cb.D = detail::read_pod<std::uint32_t>(is);
  cb.centroids.resize(static_cast<size_t>(cb.K) * cb.D);
  is.read(reinterpret_cast<char*>(cb.centroids.data()),
          static_cast<std::streamsize>(cb.centroids.size() * sizeof(float)));
  if (!is) throw io_error("truncated codebook: " + path);
  return cb;
}

// ---- token files --------------------------------------------------------------

struct TokenFile {
  std::uint32_t vocab = 0;  // id space of the stored sequences
  std::vector<std::vector<std::uint32_t>> sequences;
};

inline void save_tokens(const TokenFile& tf, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path);
  detail::write_magic(os, "TOKS");
  detail::write_pod<std::uint32_t>(os, tf.vocab);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tf.sequences.size()));
  for (const auto& seq : tf.sequences) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(seq.size()));
    os.write(reinterpret_cast<const char*>(seq.data()),
             static_cast<std::streamsize>(seq.size() * sizeof(std::uint32_t)));
  }
  if (!os) throw io_error("write failed: " + path);
}

inline TokenFile load_tokens(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  detail::expect_magic(is, "TOKS", path);
  TokenFile tf;
  tf.vocab = detail::read_pod<std::uint32_t>(is);
  auto count = detail::read_pod<std::uint32_t>(is);
  tf.sequences.resize(count);
  for (auto& seq : tf.sequences) {
    auto len = detail::read_pod<std::uint32_t>(is);
    seq.resize(len);
    is.read(reinterpret_cast<char*>(seq.data()),
            static_cast<std::streamsize>(len * sizeof(std::uint32_t)));
    if (!is) throw io_error("truncated token file: " + path);
  }
  return tf;
}

// ---- checkpoints --------------------------------------------------------------

template <class T>
struct Checkpoint {
  ModelConfig config;
  ModelParams<T> params;
};

namespace detail {

template <class T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <class T>
void write_tensor(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint8_t>(os, dtype_code<T>());
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape().size()));
  for (long d : t.shape()) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.val().data()),
           static_cast<std::streamsize>(t.val().size() * sizeof(T)));
}

template <class T>
std::pair<std::string, Tensor<T>> read_tensor(std::istream& is) {
  auto name_len = read_pod<std::uint16_t>(is);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  auto dtype = read_pod<std::uint8_t>(is);
  if (dtype != dtype_code<T>()) throw io_error("checkpoint dtype mismatch for " + name);
  auto rank = read_pod<std::uint8_t>(is);
  std::vector<long> shape(rank);
  for (auto& d : shape) d = static_cast<long>(read_pod<std::uint32_t>(is));
  auto t = Tensor<T>::zeros(shape, true);
  is.read(reinterpret_cast<char*>(t.val().data()),
          static_cast<std::streamsize>(t.val().size() * sizeof(T)));
  if (!is) throw io_error("truncated checkpoint tensor " + name);
  return {name, t};
}

}  // namespace detail

// Config is stored as extra scalar tensors under a reserved prefix.
template <class T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path);
  detail::write_magic(os, "TOTO");
  detail::write_pod<std::uint32_t>(os, 1);
  auto named = ckpt.params.named();
  const auto& c = ckpt.config;
  std::vector<std::pair<std::string, Tensor<T>>> meta = {
      {"__config.dim", Tensor<T>::scalar(static_cast<T>(c.dim))},
      {"__config.n_heads", Tensor<T>::scalar(static_cast<T>(c.n_heads))},
      {"__config.n_layers", Tensor<T>::scalar(static_cast<T>(c.n_layers))},
      {"__config.vocab", Tensor<T>::scalar(static_cast<T>(c.vocab))},
      {"__config.max_ctx", Tensor<T>::scalar(static_cast<T>(c.max_ctx))},
      {"__config.rope_base", Tensor<T>::scalar(static_cast<T>(c.rope_base))},
      {"__config.mlp_hidden", Tensor<T>::scalar(static_cast<T>(c.mlp()))},
      {"__config.pos_mode", Tensor<T>::scalar(static_cast<T>(c.pos_mode == PosMode::Rope ? 0 : 1))},
      {"__config.param_mode", Tensor<T>::scalar(static_cast<T>(c.param_mode == ParamMode::Standard ? 0 : 1))},
      {"__config.mup_base_width", Tensor<T>::scalar(static_cast<T>(c.mup_base_width))},
  };
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(named.size() + meta.size()));
  for (const auto& [name, t] : meta) detail::write_tensor(os, name, t);
  for (const auto& [name, t] : named) detail::write_tensor(os, name, t);
  if (!os) throw io_error("write failed: " + path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  detail::expect_magic(is, "TOTO", path);
  auto version = detail::read_pod<std::uint32_t>(is);
  if (version != 1) throw io_error("unsupported checkpoint version");
  auto count = detail::read_pod<std::uint32_t>(is);
  std::map<std::string, Tensor<T>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = detail::read_tensor<T>(is);
    tensors.emplace(name, t);
  }
  auto scalar = [&](const std::string& name) {
    auto it = tensors.find("__config." + name);
    if (it == tensors.end()) throw io_error("checkpoint missing config field " + name);
    return static_cast<double>(it->second.item());
  };
  Checkpoint<T> ckpt;
  auto& c = ckpt.config;
  c.dim = static_cast<long>(scalar("dim"));
  c.n_heads = static_cast<long>(scalar("n_heads"));
  c.n_layers = static_cast<long>(scalar("n_layers"));
  c.vocab = static_cast<long>(scalar("vocab"));
  c.max_ctx = static_cast<long>(scalar("max_ctx"));
  c.rope_base = scalar("rope_base");
  c.mlp_hidden = static_cast<long>(scalar("mlp_hidden"));
  c.pos_mode = scalar("pos_mode") == 0 ? PosMode::Rope : PosMode::SincosAbsolute;
  c.param_mode = scalar("param_mode") == 0 ? ParamMode::Standard : ParamMode::MuP;
  c.mup_base_width = static_cast<long>(scalar("mup_base_width"));

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw io_error("checkpoint missing tensor " + name);
    return it->second;
  };
  auto& p = ckpt.params;
  p.tok_embed = take("tok_embed");
  for (long l = 0; l < c.n_layers; ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams<T> lp;
    lp.Wq = take(pre + "Wq");
    lp.Wk = take(pre + "Wk");
    lp.Wv = take(pre + "Wv");
    lp.Wo = take(pre + "Wo");
    lp.rms_gain_1 = take(pre + "rms_gain_1");
    lp.rms_gain_2 = take(pre + "rms_gain_2");
    lp.W_gate = take(pre + "W_gate");
    lp.W_up = take(pre + "W_up");
    lp.W_down = take(pre + "W_down");
    p.layers.push_back(std::move(lp));
  }
  p.final_gain = take("final_gain");
  p.head = take("head");
  return ckpt;
}

// ---- label masks ----------------------------------------------------------------

// Graymap-style text grid: "P2", width height, max label, then rows of labels.
inline void save_mask(const PixelMask& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path);
  int mx = 0;
  for (auto l : m.labels) mx = std::max(mx, static_cast<int>(l));
  os << "P2\n" << m.width << " " << m.height << "\n" << std::max(mx, 1) << "\n";
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) os << (x ? " " : "") << m.at(y, x);
    os << "\n";
  }
}

inline PixelMask load_mask(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P2") throw io_error("bad mask magic in " + path);
  PixelMask m;
  int maxval;
  is >> m.width >> m.height >> maxval;
  m.labels.resize(static_cast<size_t>(m.width) * m.height);
  for (auto& l : m.labels) {
    int v;
    if (!(is >> v)) throw io_error("truncated mask: " + path);
    l = static_cast<std::uint16_t>(v);
  }
  return m;
}

// ---- manifests ----------------------------------------------------------------

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot hash " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;
  std::vector<std::string> outputs;

  void write(const std::string& path) const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["inputs"] = input_hashes;
    j["outputs"] = outputs;
    std::ofstream os(path);
    if (!os) throw io_error("cannot open " + path);
    os << j.dump(2) << "\n";
  }
};

// Dataset manifests: plain-text lines "tag path weight".
struct DatasetEntry {
  std::string tag;
  std::string path;
  double weight = 0;
};

inline std::vector<DatasetEntry> load_dataset_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  std::vector<DatasetEntry> entries;
  std::string tag, file;
  double w;
  while (is >> tag >> file >> w) entries.push_back({tag, file, w});
  return entries;
}

}  // namespace vtlab
