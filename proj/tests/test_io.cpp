#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vtlab/io.hpp"

using namespace vtlab;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("codebook round-trip is bit-exact") {
  Codebook cb;
  cb.K = 7;
  cb.D = 5;
  cb.centroids.resize(35);
  Rng rng(1);
  std::normal_distribution<float> dist;
  for (auto& v : cb.centroids) v = dist(rng);
  cb.centroids[3] = 0.1f;  // not exactly representable, must survive unchanged

  auto path = tmp_path("cb_roundtrip.vqcb");
  save_codebook(cb, path);
  auto back = load_codebook(path);
  CHECK(back.K == 7);
  CHECK(back.D == 5);
  REQUIRE(back.centroids.size() == cb.centroids.size());
  for (size_t i = 0; i < cb.centroids.size(); ++i) {
    REQUIRE(std::memcmp(&back.centroids[i], &cb.centroids[i], sizeof(float)) == 0);
  }
  std::remove(path.c_str());
}

TEST_CASE("codebook header layout") {
  Codebook cb;
  cb.K = 2;
  cb.D = 3;
  cb.centroids = {1, 2, 3, 4, 5, 6};
  auto path = tmp_path("cb_header.vqcb");
  save_codebook(cb, path);
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  // magic + 3 u32 header words + 6 floats
  REQUIRE(bytes.size() == 4 + 12 + 24);
  CHECK(bytes.substr(0, 4) == "VQCB");
  std::uint32_t version, K, D;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&K, bytes.data() + 8, 4);
  std::memcpy(&D, bytes.data() + 12, 4);
  CHECK(version == 1);
  CHECK(K == 2);
  CHECK(D == 3);
  std::remove(path.c_str());
}

TEST_CASE("codebook load rejects bad inputs") {
  CHECK_THROWS_AS(load_codebook(tmp_path("does_not_exist.vqcb")), io_error);

  auto path = tmp_path("cb_bad_magic.vqcb");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE" << std::string(12, '\0');
  }
  CHECK_THROWS_AS(load_codebook(path), io_error);

  // declared size larger than the file
  Codebook cb;
  cb.K = 4;
  cb.D = 4;
  cb.centroids.assign(16, 1.0f);
  save_codebook(cb, path);
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 8);
  CHECK_THROWS_AS(load_codebook(path), io_error);
  std::remove(path.c_str());
}

TEST_CASE("token file round-trip with ragged sequences") {
  TokenFile tf;
  tf.vocab = 8196;
  tf.sequences = {{1, 5, 9, 2}, {}, {3}, std::vector<std::uint32_t>(4098, 7)};
  auto path = tmp_path("tokens_roundtrip.toks");
  save_tokens(tf, path);
  auto back = load_tokens(path);
  CHECK(back.vocab == 8196);
  REQUIRE(back.sequences.size() == 4);
  for (size_t i = 0; i < 4; ++i) REQUIRE(back.sequences[i] == tf.sequences[i]);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint round-trip restores config and every tensor bit-exactly") {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.vocab = 37;
  cfg.max_ctx = 64;
  cfg.mlp_hidden = 24;
  cfg.param_mode = ParamMode::MuP;
  cfg.mup_base_width = 8;
  auto init = init_params<float>(cfg, 99);

  Checkpoint<float> ckpt{cfg, init.params};
  auto path = tmp_path("model_roundtrip.toto");
  save_checkpoint(ckpt, path);
  auto back = load_checkpoint<float>(path);

  CHECK(back.config.dim == cfg.dim);
  CHECK(back.config.n_heads == cfg.n_heads);
  CHECK(back.config.n_layers == cfg.n_layers);
  CHECK(back.config.vocab == cfg.vocab);
  CHECK(back.config.max_ctx == cfg.max_ctx);
  CHECK(back.config.mlp_hidden == cfg.mlp_hidden);
  CHECK(back.config.pos_mode == cfg.pos_mode);
  CHECK(back.config.param_mode == ParamMode::MuP);
  CHECK(back.config.mup_base_width == 8);

  auto a = ckpt.params.named();
  auto b = back.params.named();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].first == b[i].first);
    REQUIRE(a[i].second.shape() == b[i].second.shape());
    REQUIRE(std::memcmp(a[i].second.val().data(), b[i].second.val().data(),
                        a[i].second.val().size() * sizeof(float)) == 0);
  }

  // a reloaded model must produce identical logits
  std::vector<int> ids = {1, 5, 9, 33, 2};
  auto f1 = forward(ids, cfg, ckpt.params, false);
  auto f2 = forward(ids, back.config, back.params, false);
  REQUIRE(f1.logits.val() == f2.logits.val());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint dtype and truncation errors") {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.vocab = 11;
  cfg.max_ctx = 16;
  auto init = init_params<double>(cfg, 1);
  auto path = tmp_path("model_dtype.toto");
  save_checkpoint(Checkpoint<double>{cfg, init.params}, path);
  CHECK_THROWS_AS(load_checkpoint<float>(path), io_error);
  CHECK_NOTHROW(load_checkpoint<double>(path));

  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 16);
  CHECK_THROWS_AS(load_checkpoint<double>(path), io_error);
  std::remove(path.c_str());
}

TEST_CASE("fnv1a matches reference values") {
  // published FNV-1a 64-bit test vectors
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("hash_file hashes the file bytes") {
  auto path = tmp_path("hash_input.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "foobar";
  }
  CHECK(hash_file(path) == "85944171f73967e8");
  CHECK_THROWS_AS(hash_file(tmp_path("missing_hash_input.bin")), io_error);
  std::remove(path.c_str());
}

TEST_CASE("run manifest writes valid json") {
  RunManifest m;
  m.command = "train";
  m.config = {{"dim", "64"}, {"lr", "0.0003"}};
  m.seed = 1234;
  m.input_hashes = {{"tokens.toks", "85944171f73967e8"}};
  m.outputs = {"ckpt.toto", "metrics.jsonl"};
  auto path = tmp_path("manifest.json");
  m.write(path);

  std::ifstream is(path);
  auto j = nlohmann::json::parse(is);
  CHECK(j["command"] == "train");
  CHECK(j["seed"] == 1234);
  CHECK(j["config"]["dim"] == "64");
  CHECK(j["inputs"]["tokens.toks"] == "85944171f73967e8");
  CHECK(j["outputs"].size() == 2);
  std::remove(path.c_str());
}

TEST_CASE("mask files round-trip through the text grid format") {
  PixelMask m;
  m.width = 3;
  m.height = 2;
  m.labels = {0, 1, 2, 2, 0, 1};
  auto path = tmp_path("mask.pgm");
  save_mask(m, path);
  auto back = load_mask(path);
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.labels == m.labels);

  std::ifstream is(path);
  std::string magic;
  is >> magic;
  CHECK(magic == "P2");
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_mask(path), io_error);
}

TEST_CASE("dataset manifest parses tag path weight lines") {
  auto path = tmp_path("datasets.txt");
  {
    std::ofstream os(path);
    os << "imagenet in.toks 0.2\n";
    os << "ego4d eg.toks 0.1\n";
    os << "kinetics ki.toks 0.1\n";
    os << "howto ht.toks 0.6\n";
  }
  auto entries = load_dataset_manifest(path);
  REQUIRE(entries.size() == 4);
  CHECK(entries[0].tag == "imagenet");
  CHECK(entries[0].path == "in.toks");
  CHECK(entries[0].weight == 0.2);
  CHECK(entries[3].tag == "howto");
  CHECK(entries[3].weight == 0.6);
  std::remove(path.c_str());
}
