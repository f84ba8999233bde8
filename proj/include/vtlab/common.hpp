#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vtlab {

// Error taxonomy used across the library. Contract violations throw; nothing
// is silently clamped or broadcast.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct contract_error : std::runtime_error {
  explicit contract_error(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

using Rng = std::mt19937_64;

// Optional global multiply-accumulate counter. When non-null, GEMM-backed ops
// (matmul, attention score/value products) add their MAC counts here. Used to
// cross-check the analytic compute model against real execution.
inline std::uint64_t* mac_counter = nullptr;

struct MacCounterScope {
  explicit MacCounterScope(std::uint64_t& counter) { mac_counter = &counter; }
  ~MacCounterScope() { mac_counter = nullptr; }
};

inline std::int64_t numel_of(const std::vector<long>& shape) {
  std::int64_t n = 1;
  for (long d : shape) n *= d;
  return n;
}

}  // namespace vtlab
