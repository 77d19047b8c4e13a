#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "vidflow/tensor.hpp"

namespace vidflow {

/// Seeded pseudo-random source. All randomness in the library flows through
/// explicit Rng instances; named sub-streams keep components independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream for (seed, name, index), e.g. derive(seed, "train", step).
  static Rng derive(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform integer on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal (Box-Muller, no cached pair).
  double normal();

  template <class T>
  Tensor<T> normal_tensor(const Shape& shape) {
    Tensor<T> out(shape);
    for (auto& v : out.data()) v = static_cast<T>(normal());
    return out;
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vidflow
