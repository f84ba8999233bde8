#pragma once

// Central finite-difference gradient checking. Independent of the autograd
// path: it only evaluates the target function at perturbed parameter values.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vtlab/common.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string argmax_param;   // name of the worst tensor
  std::int64_t argmax_coord = -1;  // flat coordinate within it
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
};

// f builds a fresh graph from the given parameters and returns the scalar
// loss. Checks >= max_coords coordinates per tensor (all, when smaller),
// sampled deterministically.
inline GradCheckReport finite_diff_check(
    const std::function<Tensor<double>()>& f,
    const std::vector<std::pair<std::string, Tensor<double>>>& params,
    double eps = 1e-5, std::int64_t max_coords = 64, std::uint64_t seed = 0) {
  // Analytic gradients.
  auto loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, p] : params) analytic.push_back(p.impl()->grad);

  GradCheckReport rep;
  Rng rng(seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& tensor = const_cast<Tensor<double>&>(params[pi].second);
    std::int64_t n = tensor.numel();
    std::vector<std::int64_t> coords;
    if (n <= max_coords) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<std::int64_t> dist(0, n - 1);
      for (std::int64_t i = 0; i < max_coords; ++i) coords.push_back(dist(rng));
    }
    for (std::int64_t c : coords) {
      double orig = tensor.val()[c];
      tensor.val()[c] = orig + eps;
      double fp = f().item();
      tensor.val()[c] = orig - eps;
      double fm = f().item();
      tensor.val()[c] = orig;
      double numeric = (fp - fm) / (2 * eps);
      double a = analytic[pi].empty() ? 0.0 : analytic[pi][c];
      // the 1e-6 floor keeps finite-difference truncation noise on
      // near-zero gradients from dominating the report
      double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-6);
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.argmax_param = params[pi].first;
        rep.argmax_coord = c;
        rep.analytic_at_max = a;
        rep.numeric_at_max = numeric;
      }
    }
  }
  return rep;
}

}  // namespace vtlab
