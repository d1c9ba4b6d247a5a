#include "ets/meanfield.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ets/errors.hpp"
#include "ets/io.hpp"

namespace ets {

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

void check_psd(const Eigen::MatrixXd& cov, double floor, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -floor * scale)
    throw NumericError(std::string(what) + ": covariance has eigenvalue " +
                       std::to_string(eig.eigenvalues().minCoeff()) +
                       ", below the PSD tolerance");
}

}  // namespace

void GaussianMoments::validate() const {
  if (covariance.rows() != covariance.cols() || covariance.rows() != mean.size())
    throw StructuralError("moments: covariance must be square and match the mean dimension");
  if (!mean.allFinite() || !covariance.allFinite())
    throw NumericError("moments contain non-finite values");
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw StructuralError("moments: covariance is not symmetric");
  check_psd(covariance, 1e-10, "moments");
}

std::string moments_to_json(const GaussianMoments& moments) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(moments.mean.data(), moments.mean.data() + moments.mean.size());
  std::vector<std::vector<double>> cov;
  for (Eigen::Index r = 0; r < moments.covariance.rows(); ++r) {
    cov.emplace_back(moments.covariance.row(r).begin(), moments.covariance.row(r).end());
  }
  j["covariance"] = cov;
  return j.dump(2) + "\n";
}

GaussianMoments moments_from_json(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw StructuralError(origin + ": invalid JSON: " + e.what());
  }
  if (!j.contains("mean") || !j.contains("covariance"))
    throw StructuralError(origin + ": moments JSON needs 'mean' and 'covariance'");
  GaussianMoments moments;
  const auto mean = j["mean"].get<std::vector<double>>();
  moments.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
  const auto cov = j["covariance"].get<std::vector<std::vector<double>>>();
  moments.covariance.resize(cov.size(), cov.size());
  for (std::size_t r = 0; r < cov.size(); ++r) {
    if (cov[r].size() != cov.size())
      throw StructuralError(origin + ": covariance rows must form a square matrix");
    for (std::size_t c = 0; c < cov.size(); ++c) moments.covariance(r, c) = cov[r][c];
  }
  moments.validate();
  return moments;
}

void save_moments_json(const std::filesystem::path& path, const GaussianMoments& moments) {
  atomic_write_file(path, moments_to_json(moments));
}

GaussianMoments load_moments_json(const std::filesystem::path& path) {
  return moments_from_json(read_file(path), path.string());
}

GaussHermite::GaussHermite(int order) {
  if (order < 1) throw StructuralError("Gauss-Hermite order must be >= 1");
  // Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix with
  // off-diagonal sqrt(k/2); weights come from the first eigenvector entries.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double off = std::sqrt(0.5 * k);
    jacobi(k - 1, k) = off;
    jacobi(k, k - 1) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  nodes_ = eig.eigenvalues();
  weights_.resize(order);
  const double total_mass = std::sqrt(std::numbers::pi);
  for (int i = 0; i < order; ++i) {
    const double first = eig.eigenvectors()(0, i);
    weights_[i] = total_mass * first * first;
  }
}

double GaussHermite::expect(double mean, double var,
                            const std::function<double(double)>& f) const {
  if (var < 0.0) throw StructuralError("Gauss-Hermite expectation needs var >= 0");
  const double spread = std::sqrt(2.0 * var);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < nodes_.size(); ++i)
    acc += weights_[i] * f(mean + spread * nodes_[i]);
  return acc / std::sqrt(std::numbers::pi);
}

const GaussHermite& GaussHermite::default_rule() {
  static const GaussHermite rule(40);
  return rule;
}

GaussianExpectations gaussian_expectations(const GaussianMoments& moments,
                                           const Eigen::MatrixXd& features) {
  if (features.rows() != moments.dim())
    throw StructuralError("gaussian_expectations: feature dimension mismatch");
  const auto& rule = GaussHermite::default_rule();
  const Eigen::Index count = features.cols();
  GaussianExpectations out;
  out.y_bar.resize(count);
  out.r_bar.resize(count);
  for (Eigen::Index n = 0; n < count; ++n) {
    const Eigen::VectorXd phi = features.col(n);
    const double a = phi.dot(moments.mean);
    double v = phi.dot(moments.covariance * phi);
    if (v < -1e-10)
      throw StructuralError("gaussian_expectations: negative logit variance " +
                            std::to_string(v));
    if (v < 0.0) v = 0.0;
    out.y_bar[n] = rule.expect(a, v, [](double z) { return sigmoid(z); });
    out.r_bar[n] = rule.expect(a, v, [](double z) {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    });
  }
  return out;
}

MomentRhs moment_ode_rhs(const GaussianMoments& moments, const Dataset& data,
                         const GaussianPrior& prior, MomentVariant variant) {
  const GaussianExpectations expectations = gaussian_expectations(moments, data.features);
  const Eigen::MatrixXd cov_features = moments.covariance * data.features;  // D x N

  MomentRhs rhs;
  rhs.dmean = -cov_features * (expectations.y_bar - data.labels);
  rhs.dcov = -cov_features * expectations.r_bar.asDiagonal() * cov_features.transpose();
  if (variant == MomentVariant::second_order) {
    const Eigen::VectorXd centered = moments.mean - prior.mean();
    rhs.dmean -= moments.covariance * prior.precision_apply(centered);
    rhs.dcov -= moments.covariance * prior.precision_apply(moments.covariance);
    rhs.dcov += moments.covariance;
  }
  rhs.dcov = symmetrized(rhs.dcov);
  return rhs;
}

namespace {

GaussianMoments moments_axpy(const GaussianMoments& base, double scale, const MomentRhs& rhs) {
  GaussianMoments out;
  out.mean = base.mean + scale * rhs.dmean;
  out.covariance = symmetrized(base.covariance + scale * rhs.dcov);
  return out;
}

}  // namespace

MomentTrajectory integrate_moments(const GaussianMoments& initial, const Dataset& data,
                                   const GaussianPrior& prior, double dt, double total_time,
                                   MomentVariant variant) {
  if (dt <= 0.0) throw StructuralError("integrate_moments: dt must be positive");
  if (total_time <= 0.0) throw StructuralError("integrate_moments: total_time must be positive");
  initial.validate();

  const int steps = std::max<int>(1, static_cast<int>(std::llround(total_time / dt)));
  const double h = total_time / steps;

  MomentTrajectory trajectory;
  trajectory.times.reserve(steps + 1);
  trajectory.points.reserve(steps + 1);
  trajectory.times.push_back(0.0);
  trajectory.points.push_back(initial);

  GaussianMoments current = initial;
  for (int k = 0; k < steps; ++k) {
    const MomentRhs k1 = moment_ode_rhs(current, data, prior, variant);
    const MomentRhs k2 = moment_ode_rhs(moments_axpy(current, 0.5 * h, k1), data, prior, variant);
    const MomentRhs k3 = moment_ode_rhs(moments_axpy(current, 0.5 * h, k2), data, prior, variant);
    const MomentRhs k4 = moment_ode_rhs(moments_axpy(current, h, k3), data, prior, variant);

    current.mean += (h / 6.0) * (k1.dmean + 2.0 * k2.dmean + 2.0 * k3.dmean + k4.dmean);
    current.covariance = symmetrized(
        current.covariance +
        (h / 6.0) * (k1.dcov + 2.0 * k2.dcov + 2.0 * k3.dcov + k4.dcov));
    if (!current.mean.allFinite() || !current.covariance.allFinite())
      throw NumericError("integrate_moments: non-finite state at s = " +
                         std::to_string((k + 1) * h));
    check_psd(current.covariance, 1e-8, "integrate_moments");
    trajectory.times.push_back((k + 1) * h);
    trajectory.points.push_back(current);
  }
  return trajectory;
}

GaussianMoments solve_equilibrium(const Dataset& data, const GaussianPrior& prior, double dt,
                                  double drift_tol, double max_time) {
  GaussianMoments current{prior.mean(), prior.covariance()};
  double elapsed = 0.0;
  const double chunk = 1.0;
  while (elapsed < max_time) {
    const MomentRhs rhs = moment_ode_rhs(current, data, prior, MomentVariant::second_order);
    const double drift = std::max(rhs.dmean.norm(), rhs.dcov.norm());
    if (drift < drift_tol) return current;
    const MomentTrajectory leg =
        integrate_moments(current, data, prior, dt, chunk, MomentVariant::second_order);
    current = leg.final_point();
    elapsed += chunk;
  }
  throw NumericError("solve_equilibrium: drift above " + std::to_string(drift_tol) +
                     " after " + std::to_string(max_time) + " time units");
}

EquilibriumResidual equilibrium_residual(const GaussianMoments& moments, const Dataset& data,
                                         const GaussianPrior& prior) {
  moments.validate();
  const GaussianExpectations expectations = gaussian_expectations(moments, data.features);

  EquilibriumResidual res;
  const Eigen::VectorXd mean_gap =
      moments.mean - prior.mean() +
      prior.covariance() * (data.features * (expectations.y_bar - data.labels));
  res.mean_res = mean_gap.norm() / (1.0 + moments.mean.norm());

  Eigen::LLT<Eigen::MatrixXd> chol(moments.covariance);
  if (chol.info() != Eigen::Success)
    throw StructuralError("equilibrium_residual: covariance is singular");
  const Eigen::Index dim = moments.dim();
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd precision = chol.solve(identity);
  const Eigen::MatrixXd target = data.features * expectations.r_bar.asDiagonal() *
                                     data.features.transpose() +
                                 prior.precision_apply(identity);
  res.cov_res = (precision - target).norm() / precision.norm();
  return res;
}

GaussianMoments laplace_fit(const Dataset& data, const GaussianPrior& prior, double tol,
                            int max_iter) {
  if (max_iter < 1) throw StructuralError("laplace_fit: max_iter must be >= 1");
  const Eigen::Index dim = data.dim();
  if (prior.dim() != dim)
    throw StructuralError("laplace_fit: prior/dataset dimension mismatch");

  // H^{-1} = L (I + L^T Phi R Phi^T L)^{-1} L^T with L the prior factor.
  const Eigen::MatrixXd& factor = prior.sqrt_factor();
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(dim, dim);

  Eigen::VectorXd theta = prior.mean();
  double objective = neg_log_posterior(theta, data, prior);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd grad = grad_neg_log_posterior(theta, data, prior);
    if (grad.norm() < tol) {
      const Eigen::MatrixXd hess_loss = hessian_loss(theta, data);
      const Eigen::MatrixXd inner = identity + factor.transpose() * hess_loss * factor;
      const Eigen::LLT<Eigen::MatrixXd> inner_chol(inner);
      GaussianMoments moments;
      moments.mean = theta;
      moments.covariance =
          symmetrized(factor * inner_chol.solve(factor.transpose()));
      return moments;
    }
    const Eigen::MatrixXd hess_loss = hessian_loss(theta, data);
    const Eigen::MatrixXd inner = identity + factor.transpose() * hess_loss * factor;
    const Eigen::LLT<Eigen::MatrixXd> inner_chol(inner);
    if (inner_chol.info() != Eigen::Success)
      throw NumericError("laplace_fit: Hessian solve failed");
    const Eigen::VectorXd step = factor * inner_chol.solve(factor.transpose() * grad);

    // Step halving keeps the strictly convex objective decreasing.
    double scale = 1.0;
    Eigen::VectorXd candidate = theta - scale * step;
    double cand_objective = neg_log_posterior(candidate, data, prior);
    int halvings = 0;
    while (cand_objective > objective && halvings < 60) {
      scale *= 0.5;
      candidate = theta - scale * step;
      cand_objective = neg_log_posterior(candidate, data, prior);
      ++halvings;
    }
    theta = candidate;
    objective = cand_objective;
  }
  throw NumericError("laplace_fit: no convergence after " + std::to_string(max_iter) +
                     " iterations; last gradient norm " +
                     std::to_string(grad_neg_log_posterior(theta, data, prior).norm()));
}

double probit_predictive(const GaussianMoments& moments, const Eigen::VectorXd& phi) {
  if (phi.size() != moments.dim())
    throw StructuralError("probit_predictive: feature dimension mismatch");
  const double a = phi.dot(moments.mean);
  double v = phi.dot(moments.covariance * phi);
  if (v < 0.0) v = 0.0;
  return sigmoid(a / std::sqrt(1.0 + std::numbers::pi * v / 8.0));
}

namespace {

struct CoupledState {
  GaussianMoments moments;
  Eigen::MatrixXd particles;  // D x J
};

struct CoupledRhs {
  MomentRhs moments;
  Eigen::MatrixXd particles;
};

// Drift of one mean-field particle cloud given the law N(m, P): the same
// update as the interacting system, with empirical statistics replaced by the
// law's moments and Gaussian expectations.
CoupledRhs coupled_rhs(const CoupledState& state, const Dataset& data,
                       const GaussianPrior& prior) {
  CoupledRhs rhs;
  rhs.moments = moment_ode_rhs(state.moments, data, prior, MomentVariant::second_order);

  const GaussianExpectations expectations =
      gaussian_expectations(state.moments, data.features);
  const Eigen::MatrixXd cov_features = state.moments.covariance * data.features;  // D x N
  const Eigen::MatrixXd centered =
      state.particles.colwise() - state.moments.mean;  // D x J

  rhs.particles =
      -0.5 * cov_features *
          (expectations.r_bar.asDiagonal() * (data.features.transpose() * centered));
  rhs.particles.colwise() -= cov_features * (expectations.y_bar - data.labels);
  Eigen::MatrixXd shifted = state.particles;
  shifted.colwise() += state.moments.mean - 2.0 * prior.mean();
  rhs.particles -= 0.5 * state.moments.covariance * prior.precision_apply(shifted);
  rhs.particles += 0.5 * centered;
  return rhs;
}

CoupledState coupled_axpy(const CoupledState& base, double scale, const CoupledRhs& rhs) {
  CoupledState out;
  out.moments.mean = base.moments.mean + scale * rhs.moments.dmean;
  out.moments.covariance = symmetrized(base.moments.covariance + scale * rhs.moments.dcov);
  out.particles = base.particles + scale * rhs.particles;
  return out;
}

}  // namespace

Eigen::MatrixXd integrate_meanfield_particles(const Eigen::MatrixXd& initial_particles,
                                              const GaussianMoments& initial_law,
                                              const Dataset& data, const GaussianPrior& prior,
                                              double dt, double total_time) {
  if (dt <= 0.0 || total_time <= 0.0)
    throw StructuralError("integrate_meanfield_particles: dt and total_time must be positive");
  initial_law.validate();
  CoupledState state;
  state.moments = initial_law;
  state.particles = initial_particles;

  const int steps = std::max<int>(1, static_cast<int>(std::llround(total_time / dt)));
  const double h = total_time / steps;
  for (int k = 0; k < steps; ++k) {
    const CoupledRhs k1 = coupled_rhs(state, data, prior);
    const CoupledRhs k2 = coupled_rhs(coupled_axpy(state, 0.5 * h, k1), data, prior);
    const CoupledRhs k3 = coupled_rhs(coupled_axpy(state, 0.5 * h, k2), data, prior);
    const CoupledRhs k4 = coupled_rhs(coupled_axpy(state, h, k3), data, prior);
    state.moments.mean +=
        (h / 6.0) * (k1.moments.dmean + 2.0 * k2.moments.dmean + 2.0 * k3.moments.dmean +
                     k4.moments.dmean);
    state.moments.covariance = symmetrized(
        state.moments.covariance +
        (h / 6.0) * (k1.moments.dcov + 2.0 * k2.moments.dcov + 2.0 * k3.moments.dcov +
                     k4.moments.dcov));
    state.particles +=
        (h / 6.0) *
        (k1.particles + 2.0 * k2.particles + 2.0 * k3.particles + k4.particles);
    if (!state.particles.allFinite())
      throw NumericError("integrate_meanfield_particles: non-finite particles at s = " +
                         std::to_string((k + 1) * h));
  }
  return state.particles;
}

}  // namespace ets
