#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ets/ensemble.hpp"
#include "ets/meanfield.hpp"
#include "ets/model.hpp"
#include "ets/rng.hpp"

namespace ets {

// Configuration of the finite-time transport sampler: K steps of size dt
// with dt * K = 1, so the flow ends exactly at s = 1.
struct HomotopyConfig {
  double step_size = 1e-3;
  int step_count = 1000;
  bool diagonal_inverse = false;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class StopNorm { frobenius, spectral };

// Configuration of the infinite-time sampler. The loop stops when the
// relative covariance change drops below stop_threshold, or after max_steps.
// A disengaged stop_threshold runs exactly max_steps steps (used to integrate
// to a fixed time). The stop rule uses the Frobenius norm by default; the
// spectral norm (power iteration) is available as a switch, the two are
// equivalent up to sqrt(D) for these matrices.
struct SecondOrderConfig {
  double step_size = 0.1;
  std::optional<double> stop_threshold = 1e-4;
  int max_steps = 300;
  bool diagonal_inverse = false;
  StopNorm stop_norm = StopNorm::frobenius;
  std::uint64_t seed = 0;

  void validate() const;

  // Experiments run for roughly 20 time units; a cap at 30 is generous.
  static int default_max_steps(double step_size);
};

enum class Termination { homotopy_end, threshold, step_cap };

const char* to_string(Termination t);

struct StepDiagnostics {
  double cov_rel_change;  // ||P_next - P|| / ||P||, the stop-rule quantity
  double mean_norm;
  double cov_trace;
};

struct RunReport {
  Ensemble final_ensemble;
  std::vector<StepDiagnostics> diagnostics;  // one entry per step taken
  int steps_taken = 0;
  Termination terminated_by = Termination::homotopy_end;
  std::uint64_t seed = 0;
};

// Tamed inverse (dt * Phi^T P Phi + diag(r_mean))^{-1}. In diagonal mode only
// the diagonal entries of the matrix are inverted, which is the cheap variant
// for large N; the two coincide whenever Phi^T P Phi is diagonal.
struct Taming {
  bool diagonal = false;
  Eigen::MatrixXd full;   // N x N inverse (full mode)
  Eigen::VectorXd diag;   // reciprocal diagonal (diagonal mode)

  Eigen::MatrixXd apply(const Eigen::MatrixXd& rhs) const;
};

Taming taming_matrix(const EnsembleStats& stats, const Eigen::MatrixXd& features,
                     const Eigen::VectorXd& r_mean, double dt, bool diagonal = false);

// One tamed moment-matching update: the mean moves along the ensemble
// preconditioned gradient, the deviations contract through the tamed inverse,
// and particles are rebuilt as mean + deviation.
Ensemble homotopy_step(const Ensemble& ensemble, const Dataset& data,
                       const HomotopyConfig& config, int step_index);

// The same kernel used as the first Trotter half-step of the second-order
// sampler.
Ensemble second_order_half_step(const Ensemble& ensemble, const Dataset& data, double dt,
                                bool diagonal_inverse = false);

// Second Trotter half-step: tamed relaxation toward the prior plus the
// spread-restoring drift. With diagonal_inverse set, the inverse of
// (dt * P + P_prior) is taken on its diagonal only (sensible when P_prior is
// diagonal). with_spread_term = false gives the bare relaxation drift, which
// is what the stochastic variant combines with Gaussian noise.
Ensemble prior_relax_step(const Ensemble& half_step, const GaussianPrior& prior, double dt,
                          bool diagonal_inverse = false, bool with_spread_term = true);

RunReport run_homotopy(const Ensemble& initial, const Dataset& data, const GaussianPrior& prior,
                       const HomotopyConfig& config);

RunReport run_second_order(const Ensemble& initial, const Dataset& data,
                           const GaussianPrior& prior, const SecondOrderConfig& config);

// Euler-Maruyama discretization of the stochastic variant: the same drift
// with the spread-restoring term replaced by sqrt(dt) P^{1/2} noise. Only
// used as the distribution-level comparator for the deterministic sampler.
RunReport run_stochastic_second_order(const Ensemble& initial, const Dataset& data,
                                      const GaussianPrior& prior, double dt, int steps,
                                      std::uint64_t seed);

// J i.i.d. Gaussian draws through the Cholesky factor; reproducible per seed.
Ensemble sample_prior_ensemble(const GaussianMoments& moments, int count, Rng& rng);
Ensemble sample_prior_ensemble(const GaussianPrior& prior, int count, Rng& rng);

// Symmetric PSD square root with eigenvalues below 1e-12 * lambda_max
// clamped to zero, so rank-deficient ensemble covariances are handled.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& matrix);

double matrix_norm(const Eigen::MatrixXd& matrix, StopNorm norm);

}  // namespace ets
