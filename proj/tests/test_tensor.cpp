#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vtlab/gradcheck.hpp"
#include "vtlab/tensor.hpp"

using namespace vtlab;
using Catch::Approx;

namespace {

Tensor<double> rand_tensor(std::vector<long> shape, Rng& rng, bool rg = true) {
  return Tensor<double>::randn(std::move(shape), rng, 1.0, rg);
}

}  // namespace

TEST_CASE("matmul identity") {
  Rng rng(1);
  auto a = rand_tensor({4, 4}, rng, false);
  auto eye = Tensor<double>::zeros({4, 4});
  for (long i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  auto out = matmul(eye, a);
  for (long i = 0; i < 16; ++i) CHECK(out.val()[i] == Approx(a.val()[i]));
}

TEST_CASE("matmul shape mismatch throws") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), shape_error);
}

TEST_CASE("softmax of zeros is uniform") {
  auto a = Tensor<double>::zeros({3, 5});
  auto s = softmax_rows(a);
  for (double v : s.val()) CHECK(v == Approx(0.2));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(2);
  auto a = rand_tensor({6, 9}, rng, false);
  auto s = softmax_rows(a);
  for (long r = 0; r < 6; ++r) {
    double sum = 0;
    for (long c = 0; c < 9; ++c) sum += s.at(r, c);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  auto shifted = a.detach();
  for (long r = 0; r < 6; ++r)
    for (long c = 0; c < 9; ++c) shifted.at(r, c) += 3.7;
  auto s2 = softmax_rows(shifted);
  for (long i = 0; i < a.numel(); ++i) CHECK(std::abs(s.val()[i] - s2.val()[i]) < 1e-12);
}

TEST_CASE("grad of sum is ones, grad of x*x is 2x") {
  auto x = Tensor<double>::from({3}, {1.0, 2.0, 3.0}, true);
  auto loss = reduce_sum(x);
  backward(loss);
  for (double g : x.grad()) CHECK(g == Approx(1.0));

  auto y = Tensor<double>::from({1}, {3.0}, true);
  auto l2 = reduce_sum(mul(y, y));
  backward(l2);
  CHECK(y.grad()[0] == Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto y = scale(x, 2.0);
  CHECK_THROWS_AS(backward(y), contract_error);
}

TEST_CASE("every kernel passes finite differences") {
  Rng rng(7);
  // matmul + add + mul + transpose chain
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({4, 5}, rng);
  auto c = rand_tensor({3, 5}, rng);
  auto check = finite_diff_check(
      [&]() { return reduce_mean(mul(add(matmul(a, b), c), c)); },
      {{"a", a}, {"b", b}, {"c", c}});
  CHECK(check.max_rel_err < 1e-6);

  auto t = rand_tensor({4, 3}, rng);
  auto check_t = finite_diff_check(
      [&]() { return reduce_sum(matmul(transpose(t), b)); }, {{"t", t}});
  CHECK(check_t.max_rel_err < 1e-6);

  // softmax, silu, sigmoid, scale, reduce_mean
  auto x = rand_tensor({5, 6}, rng);
  auto check_sm = finite_diff_check(
      [&]() { return reduce_mean(mul(softmax_rows(x), x)); }, {{"x", x}});
  CHECK(check_sm.max_rel_err < 1e-6);
  auto check_act = finite_diff_check(
      [&]() { return reduce_mean(add(silu(x), scale(sigmoid(x), 0.5))); }, {{"x", x}});
  CHECK(check_act.max_rel_err < 1e-6);

  // embedding lookup
  auto table = rand_tensor({7, 4}, rng);
  std::vector<int> ids = {0, 3, 6, 3};
  auto check_emb = finite_diff_check(
      [&]() { return reduce_mean(mul(embedding_lookup(table, ids),
                                     embedding_lookup(table, ids))); },
      {{"table", table}});
  CHECK(check_emb.max_rel_err < 1e-6);

  // concat / slice
  auto u = rand_tensor({3, 2}, rng);
  auto v = rand_tensor({3, 3}, rng);
  auto check_cat = finite_diff_check(
      [&]() {
        auto cat = concat<double>({u, v}, 1);
        return reduce_mean(mul(slice_cols(cat, 1, 4), slice_cols(cat, 0, 3)));
      },
      {{"u", u}, {"v", v}});
  CHECK(check_cat.max_rel_err < 1e-6);

  // masked_fill
  std::vector<std::uint8_t> mask(30, 0);
  for (size_t i = 0; i < mask.size(); i += 3) mask[i] = 1;
  auto check_mf = finite_diff_check(
      [&]() { return reduce_mean(mul(softmax_rows(masked_fill(x, mask, -1e9)), x)); },
      {{"x", x}});
  CHECK(check_mf.max_rel_err < 1e-6);
}

TEST_CASE("masked fill never broadcasts silently") {
  auto x = Tensor<double>::zeros({2, 2});
  std::vector<std::uint8_t> mask(3, 0);
  CHECK_THROWS_AS(masked_fill(x, mask, 0.0), shape_error);
}

TEST_CASE("finite differences are near exact for quadratic and linear forms") {
  Rng rng(11);
  auto x = rand_tensor({4}, rng);
  auto q = finite_diff_check([&]() { return reduce_sum(mul(x, x)); }, {{"x", x}});
  CHECK(q.max_rel_err < 1e-9);
  auto l = finite_diff_check([&]() { return reduce_sum(scale(x, 2.5)); }, {{"x", x}});
  CHECK(l.max_rel_err < 1e-9);
  CHECK(l.argmax_coord >= 0);  // report carries the argmax coordinate
}

TEST_CASE("cross entropy closed forms") {
  // uniform logits, V = 8192 content + 4 specials
  long V = 8196;
  auto logits = Tensor<double>::zeros({3, V});
  auto loss = cross_entropy(logits, {0, 17, 8195});
  CHECK(loss.item() == Approx(std::log(static_cast<double>(V))).epsilon(1e-12));
  CHECK(std::log(8192.0) == Approx(9.0109).margin(1e-4));

  // near one-hot
  auto hot = Tensor<double>::zeros({1, 8});
  hot.at(0, 2) = 1e4;
  CHECK(cross_entropy(hot, {2}).item() == Approx(0.0).margin(1e-12));

  // out-of-range target
  CHECK_THROWS_AS(cross_entropy(hot, {9}), contract_error);
}

TEST_CASE("cross entropy matches probability-space oracle") {
  Rng rng(13);
  auto logits = rand_tensor({6, 10}, rng, false);
  std::vector<int> targets = {1, 0, 9, 4, 4, 7};
  double expect = 0;
  for (long r = 0; r < 6; ++r) {
    double z = 0;
    for (long c = 0; c < 10; ++c) z += std::exp(logits.at(r, c));
    expect += -std::log(std::exp(logits.at(r, targets[r])) / z);
  }
  expect /= 6;
  double rel = std::abs(cross_entropy(logits, targets).item() - expect) / std::abs(expect);
  CHECK(rel < 1e-10);
}

TEST_CASE("cross entropy gradient passes finite differences") {
  Rng rng(17);
  auto logits = rand_tensor({5, 7}, rng);
  std::vector<int> targets = {0, 6, 3, 3, 1};
  auto check = finite_diff_check(
      [&]() { return cross_entropy(logits, targets); }, {{"logits", logits}});
  CHECK(check.max_rel_err < 1e-6);
}

TEST_CASE("determinism: same graph twice gives bit-identical grads") {
  Rng rng1(23), rng2(23);
  auto run = [](Rng& rng) {
    auto a = rand_tensor({8, 8}, rng);
    auto b = rand_tensor({8, 8}, rng);
    auto loss = reduce_mean(mul(matmul(a, b), matmul(a, b)));
    backward(loss);
    return a.grad();
  };
  CHECK(run(rng1) == run(rng2));
}

TEST_CASE("mac counter counts matmul macs") {
  std::uint64_t macs = 0;
  {
    MacCounterScope scope(macs);
    auto a = Tensor<double>::zeros({3, 4});
    auto b = Tensor<double>::zeros({4, 5});
    matmul(a, b);
  }
  CHECK(macs == 3u * 4u * 5u);
}
