#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "ets/model.hpp"

namespace ets {

// Mean/covariance pair of a Gaussian law. This is what the mean-field moment
// ODEs evolve and what the Laplace and equilibrium solvers return.
struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  Eigen::Index dim() const { return mean.size(); }
  // Symmetric to 1e-12 relative, eigenvalues >= -1e-10 * scale.
  void validate() const;
};

std::string moments_to_json(const GaussianMoments& moments);
GaussianMoments moments_from_json(const std::string& text, const std::string& origin = "<string>");
void save_moments_json(const std::filesystem::path& path, const GaussianMoments& moments);
GaussianMoments load_moments_json(const std::filesystem::path& path);

// Gauss-Hermite rule (physicists' weight exp(-x^2)), nodes/weights from the
// Golub-Welsch eigenproblem. expect() integrates f against N(mean, var); the
// table for the default order is built once and reused.
class GaussHermite {
 public:
  explicit GaussHermite(int order);

  double expect(double mean, double var, const std::function<double(double)>& f) const;

  const Eigen::VectorXd& nodes() const { return nodes_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  // Order 40 keeps the relative error of sigmoid-family expectations below
  // 1e-10 over |mean| <= 30, var <= 100.
  static const GaussHermite& default_rule();

 private:
  Eigen::VectorXd nodes_;
  Eigen::VectorXd weights_;
};

struct GaussianExpectations {
  Eigen::VectorXd y_bar;  // E[sigmoid(z_n)], z_n ~ N(phi_n.m, phi_n.P phi_n)
  Eigen::VectorXd r_bar;  // E[sigmoid(z_n) (1 - sigmoid(z_n))]
};

// The D-dimensional Gaussian expectations reduce exactly to one scalar
// integral per sample because the integrand depends on theta only through
// <theta, phi_n>.
GaussianExpectations gaussian_expectations(const GaussianMoments& moments,
                                           const Eigen::MatrixXd& features);

enum class MomentVariant { homotopy, second_order };

struct MomentRhs {
  Eigen::VectorXd dmean;
  Eigen::MatrixXd dcov;  // exactly symmetric
};

// Right-hand sides of the Gaussian moment flow. The homotopy variant drops
// the prior coupling and the spread restoration term.
MomentRhs moment_ode_rhs(const GaussianMoments& moments, const Dataset& data,
                         const GaussianPrior& prior, MomentVariant variant);

struct MomentTrajectory {
  std::vector<double> times;
  std::vector<GaussianMoments> points;  // includes the initial point

  const GaussianMoments& final_point() const { return points.back(); }
};

// Classical fourth-order explicit integration with fixed step; the covariance
// is re-symmetrized after every stage. Throws NumericError if the covariance
// develops an eigenvalue below -1e-8 * scale.
MomentTrajectory integrate_moments(const GaussianMoments& initial, const Dataset& data,
                                   const GaussianPrior& prior, double dt, double total_time,
                                   MomentVariant variant);

// Integrates the second-order flow until the drift norms fall below
// drift_tol, starting from the prior. Throws NumericError if max_time is
// exhausted first.
GaussianMoments solve_equilibrium(const Dataset& data, const GaussianPrior& prior, double dt,
                                  double drift_tol = 1e-10, double max_time = 200.0);

struct EquilibriumResidual {
  double mean_res;  // ||m - m_prior + P_prior Phi (y_bar - d)||_2 / (1 + ||m||_2)
  double cov_res;   // ||P^{-1} - Phi diag(r_bar) Phi^T - P_prior^{-1}||_F / ||P^{-1}||_F
};

EquilibriumResidual equilibrium_residual(const GaussianMoments& moments, const Dataset& data,
                                         const GaussianPrior& prior);

// Gaussian posterior approximation N(theta_MAP, H^{-1}) with H the Hessian of
// the negative log-posterior at the mode. Newton iteration with step halving;
// the H-solve goes through the prior Cholesky factor so the prior precision
// is never formed.
GaussianMoments laplace_fit(const Dataset& data, const GaussianPrior& prior,
                            double tol = 1e-10, int max_iter = 100);

// sigmoid(a / sqrt(1 + pi v / 8)) with a = phi.m, v = phi.P phi: the
// probit-matched closed form for the Gaussian integral of a sigmoid.
double probit_predictive(const GaussianMoments& moments, const Eigen::VectorXd& phi);

// Evolves a cloud of independent mean-field particles jointly with the moment
// ODE (one RK4 system, since the moments do not depend on the particles).
// Used to couple the interacting system to its limit for the Wasserstein
// cross-check: pass the interacting system's initial particles and the law
// they were drawn from. Returns the particle matrix at total_time.
Eigen::MatrixXd integrate_meanfield_particles(const Eigen::MatrixXd& initial_particles,
                                              const GaussianMoments& initial_law,
                                              const Dataset& data, const GaussianPrior& prior,
                                              double dt, double total_time);

}  // namespace ets
