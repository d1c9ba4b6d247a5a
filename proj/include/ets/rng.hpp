#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace ets {

// All randomness in the project flows from a single 64-bit root seed through
// named streams, so that e.g. the dataset draw is unaffected by how many
// normals the initial ensemble consumed. Stream labels in use:
//   "dataset", "init-ensemble", "noise", "prior-spd".
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t root) : root_(root) {}

  // Stable sub-seed for (label, index). FNV-1a over the label bytes mixed
  // with the root and index through splitmix64 finalizers.
  std::uint64_t derive(std::string_view label, std::uint64_t index = 0) const;

  std::uint64_t root() const { return root_; }

 private:
  std::uint64_t root_;
};

// mt19937_64 wrapped with explicit uniform/normal generation. The standard
// distributions are implementation-defined, so we generate doubles ourselves
// to keep streams stable across library versions. Normals come from the
// trigonometric Box-Muller transform: exactly two uniforms per pair.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  double normal();

  Eigen::VectorXd normal_vector(Eigen::Index n);
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  // Bernoulli(p) as 0.0 / 1.0.
  double bernoulli(double p) { return uniform() < p ? 1.0 : 0.0; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ets
