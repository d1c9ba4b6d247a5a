#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace ets {

// A particle cloud in R^D, one particle per column. Treated as an immutable
// value between sampler steps: every update builds a new Ensemble, so
// concurrent readers of a step's ensemble are always safe.
struct Ensemble {
  Eigen::MatrixXd particles;  // D x J

  Eigen::Index dim() const { return particles.rows(); }
  Eigen::Index size() const { return particles.cols(); }

  static Ensemble from_particles(const std::vector<Eigen::VectorXd>& columns);

  // D >= 1, J >= 1, all entries finite. Statistics additionally need J >= 2.
  void validate() const;
};

// Exact empirical statistics. Covariance uses the 1/J normalization, not the
// usual 1/(J-1) sample estimator; every formula downstream assumes 1/J.
struct EnsembleStats {
  Eigen::VectorXd mean;        // D
  Eigen::MatrixXd deviations;  // D x J, columns sum to zero
  Eigen::MatrixXd covariance;  // D x D, (1/J) * deviations * deviations^T
};

// Recomputed from scratch on demand; pure, safe for concurrent callers.
EnsembleStats compute_stats(const Ensemble& ensemble);

// (1/J) sum_j f(particle_j). Throws NumericError (naming the particle index)
// if f produces a non-finite value.
Eigen::VectorXd empirical_expectation(
    const Ensemble& ensemble,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f);

// CSV layout: header theta_0,...,theta_{D-1}, one particle per row, rows in
// particle order.
std::string ensemble_to_csv(const Ensemble& ensemble);
Ensemble ensemble_from_csv(const std::string& text, const std::string& origin = "<string>");
void save_ensemble_csv(const std::filesystem::path& path, const Ensemble& ensemble);
Ensemble load_ensemble_csv(const std::filesystem::path& path);

}  // namespace ets
