#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ets/ensemble.hpp"
#include "ets/meanfield.hpp"
#include "ets/model.hpp"
#include "ets/rng.hpp"
#include "ets/samplers.hpp"

namespace ets {

enum class Method { homotopy, second_order };

const char* to_string(Method m);
Method method_from_string(const std::string& name);

struct SyntheticProblem {
  Dataset data;
  Eigen::VectorXd theta_ref;
};

// Known-parameter protocol: theta_ref and the sample points are standard
// normal, the feature map is the identity, labels are Bernoulli of the model
// probability. Degenerate label vectors (all 0 or all 1) are redrawn.
SyntheticProblem synthesize_logistic_dataset(Eigen::Index dim, Eigen::Index count, Rng& rng);
// Test hook with a forced reference parameter.
SyntheticProblem synthesize_logistic_dataset(Eigen::Index dim, Eigen::Index count, Rng& rng,
                                             const Eigen::VectorXd& theta_ref);

enum class PriorKind { identity, random_spd };

// A^T A + dim * 1e-3 * I from a standard normal A: always SPD, well away
// from singular.
GaussianPrior make_random_spd_prior(Eigen::Index dim, Rng& rng);

// Sampler settings shared by the recovery protocol.
struct RecoveryProtocol {
  Eigen::Index dim = 20;
  Eigen::Index count = 300;
  double homotopy_dt = 1e-3;
  double second_order_dt = 0.1;
  double stop_threshold = 1e-4;
};

struct RecoveryResult {
  Method method = Method::second_order;
  int ensemble_size = 0;
  std::vector<double> errors;  // one l2 error per successful repeat
  int failed_repeats = 0;

  // Aggregates are always recomputed from the raw errors.
  double mean_error() const;
  double std_of_mean() const;
};

// Per repeat: fresh dataset, fresh initial ensemble, run the method, record
// ||ensemble mean - theta_ref||_2. More than 10% failed repeats aborts.
RecoveryResult recovery_experiment(Method method, int ensemble_size, int repeats,
                                   PriorKind prior_kind, std::uint64_t seed,
                                   const RecoveryProtocol& protocol = {});

struct RateFit {
  std::vector<int> ensemble_sizes;
  std::vector<double> errors;  // mean error per ensemble size
  double slope = 0.0;
  double intercept = 0.0;
  double slope_half_width = 0.0;  // ~2 sigma, from per-point variances
};

// Ordinary least squares of log(error) on log(J). Requires >= 4 distinct
// sizes; per-point variances propagate into the slope half-width.
RateFit fit_log_log(const std::vector<int>& ensemble_sizes, const std::vector<double>& errors,
                    const std::vector<double>& error_variances);

enum class RateMetric {
  moments,      // ||m_ens - m_mf||_2 + ||P_ens - P_mf||_F at time T
  wasserstein,  // exact assignment W2 against the coupled mean-field cloud
};

struct RateStudyOptions {
  Eigen::Index dim = 5;
  Eigen::Index count = 20;
  double ips_dt = 0.01;
  double ode_dt = 0.01;
  RateMetric metric = RateMetric::moments;
};

// Convergence study of the second-order interacting system toward its
// mean-field limit on one fixed instance: for each ensemble size, run the
// particle system to time T and compare with the moment flow started from
// the same law.
RateFit meanfield_rate_study(const std::vector<int>& ensemble_sizes, double total_time,
                             int repeats, std::uint64_t seed,
                             const RateStudyOptions& options = {});

// Class-1 probability of each test column under the ensemble-averaged
// predictive.
Eigen::VectorXd predictive_probability(const Ensemble& ensemble,
                                       const Eigen::MatrixXd& test_features);
// max(p, 1-p) per test column, in [1/2, 1].
Eigen::VectorXd predictive_confidence(const Ensemble& ensemble,
                                      const Eigen::MatrixXd& test_features);
// Probit-approximate counterparts for a Gaussian posterior.
Eigen::VectorXd predictive_probability(const GaussianMoments& moments,
                                       const Eigen::MatrixXd& test_features);
Eigen::VectorXd predictive_confidence(const GaussianMoments& moments,
                                      const Eigen::MatrixXd& test_features);

// Averaged softmax probabilities (K x M) for a stacked multiclass ensemble.
Eigen::MatrixXd multiclass_predictive(const Ensemble& stacked, int num_classes,
                                      const Eigen::MatrixXd& test_features);

struct OodCurve {
  Eigen::VectorXd centers;          // bin centers in distance delta
  Eigen::VectorXd mean_confidence;  // NaN for empty bins
  Eigen::VectorXd std_confidence;
  Eigen::VectorXi counts;
};

// Bins every grid point by its Euclidean distance to the nearest training
// feature and aggregates the ensemble confidence per bin.
OodCurve ood_confidence_curve(const Ensemble& ensemble, const Eigen::MatrixXd& train_features,
                              const Eigen::MatrixXd& test_grid, int bins);
// Same binning for an externally supplied confidence field (e.g. a point
// estimate's confidence).
OodCurve ood_curve_from_confidence(const Eigen::VectorXd& confidence,
                                   const Eigen::MatrixXd& train_features,
                                   const Eigen::MatrixXd& test_grid, int bins);

// Uniform grid over the training bounding box scaled about its center;
// requires 2-D features.
Eigen::MatrixXd make_box_grid(const Eigen::MatrixXd& train_features, double scale = 3.0,
                              int per_axis = 200);
// Any dimension: random unit directions from the feature centroid at the
// given radii.
Eigen::MatrixXd make_radial_grid(const Eigen::MatrixXd& train_features,
                                 const std::vector<double>& radii, int per_radius, Rng& rng);

struct SweepEntry {
  int ensemble_size = 0;
  bool low_rank = false;  // J <= D: the ensemble cannot span parameter space
  double recovery_error = 0.0;
  Ensemble final_ensemble;
};

// Runs the chosen method once per ensemble size on a fixed problem with
// nested seeds.
std::vector<SweepEntry> ensemble_size_sweep(const std::vector<int>& ensemble_sizes,
                                            Method method, const SyntheticProblem& problem,
                                            const GaussianPrior& prior, std::uint64_t seed,
                                            const RecoveryProtocol& protocol = {});

// Two Gaussian clusters in the plane with labels 0/1; the workhorse for the
// out-of-distribution experiments.
SyntheticProblem synthesize_two_clusters(Eigen::Index per_cluster, double separation, Rng& rng);

struct MulticlassProblem {
  Dataset data;  // labels 1..num_classes
  int num_classes = 0;
};

// K Gaussian blobs in the plane at equal angles, labels 1..K.
MulticlassProblem synthesize_blobs(int num_classes, Eigen::Index per_class, double separation,
                                   Rng& rng);

}  // namespace ets
