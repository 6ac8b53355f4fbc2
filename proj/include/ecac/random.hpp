#pragma once

#include <cstdint>
#include <string_view>

namespace ecac {

std::uint64_t mix64(std::uint64_t x);

/// Stable 64-bit id for a named sub-stream ("data", "init", "shuffle", ...).
std::uint64_t stream_id(std::string_view name);

/// Counter-based generator: the n-th draw is a pure function of
/// (seed, stream, index, n), so independent streams need no shared state.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);
  CounterRng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
      : CounterRng(seed, stream_id(stream), index) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ecac
