#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "winn/tensor.hpp"

namespace winn {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Random streams derived from the master seed. Each stream id is fixed;
/// adding a new stream never shifts the seeds of existing ones.
enum class Stream : std::uint64_t {
  ParamInit = 1,
  PositiveBatches = 2,
  PoolBatches = 3,
  Interpolation = 4,
  Threshold = 5,
  SynthesisInit = 6,
  Dropout = 7,
  PoolCap = 8,
  Data = 9,
  AltInitializer = 10,
  Evaluation = 11,
  Langevin = 12,
  PatchSampler = 13,
};

/// seed = splitmix64(master ^ splitmix64(stream) ^ splitmix64(splitmix64(index)))
inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream)) ^ splitmix64(splitmix64(index)));
}

inline Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

inline std::string serialize_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

inline Rng deserialize_rng(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw ParseError("bad RNG state", 0);
  return rng;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace winn
