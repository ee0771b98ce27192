#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace late {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// splitmix64 step; used to derive independent child seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic seed for a named stream, e.g. derive_seed(base, trial, kStreamPsd).
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t base, Parts... parts) {
  std::uint64_t s = mix_seed(base);
  ((s = mix_seed(s ^ static_cast<std::uint64_t>(parts))), ...);
  return s;
}

}  // namespace late
