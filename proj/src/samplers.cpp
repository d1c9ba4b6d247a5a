#include "ets/samplers.hpp"

#include <cmath>

#include "ets/errors.hpp"

namespace ets {

namespace {

constexpr double kBlowUpNorm = 1e8;

// Per-sample probabilities for every particle: y(n, j) = sigmoid(phi_n . theta_j).
struct EnsembleLikelihood {
  Eigen::VectorXd y_mean;  // mu[y], length N
  Eigen::VectorXd r_mean;  // diagonal of mu[R], length N
};

EnsembleLikelihood ensemble_likelihood(const Ensemble& ensemble, const Dataset& data) {
  const Eigen::MatrixXd logits = data.features.transpose() * ensemble.particles;  // N x J
  const Eigen::ArrayXXd probs = logits.array().unaryExpr([](double z) { return sigmoid(z); });
  EnsembleLikelihood out;
  out.y_mean = probs.rowwise().mean();
  out.r_mean = (probs * (1.0 - probs)).rowwise().mean();
  return out;
}

void check_finite(const Ensemble& ensemble, const char* where, int step_index, double dt) {
  if (ensemble.particles.allFinite() &&
      ensemble.particles.colwise().norm().maxCoeff() < kBlowUpNorm)
    return;
  throw NumericError(std::string(where) + ": ensemble blew up at step " +
                     std::to_string(step_index) + " (dt = " + std::to_string(dt) +
                     "); try a smaller step size");
}

// Shared tamed moment-matching kernel. Solves with the factorization of
// dt * Phi^T P Phi + diag(r_mean) instead of forming the inverse; the result
// matches the explicit taming_matrix application to roundoff.
Ensemble likelihood_step_impl(const Ensemble& ensemble, const Dataset& data, double dt,
                              bool diagonal_inverse, const char* where, int step_index) {
  data.validate();
  if (data.dim() != ensemble.dim())
    throw StructuralError(std::string(where) + ": dataset dimension " +
                          std::to_string(data.dim()) + " does not match ensemble dimension " +
                          std::to_string(ensemble.dim()));
  const EnsembleStats stats = compute_stats(ensemble);
  const EnsembleLikelihood like = ensemble_likelihood(ensemble, data);
  const double count = static_cast<double>(ensemble.size());

  const Eigen::MatrixXd feat_dev = data.features.transpose() * stats.deviations;  // N x J
  const Eigen::MatrixXd cov_feat = stats.deviations * feat_dev.transpose() / count;  // P Phi, D x N

  // Phi^T P Phi assembled as a rank update of feat_dev, exactly PSD.
  Eigen::MatrixXd tamed = Eigen::MatrixXd::Zero(data.count(), data.count());
  tamed.selfadjointView<Eigen::Lower>().rankUpdate(feat_dev, dt / count);
  tamed = tamed.selfadjointView<Eigen::Lower>();
  tamed.diagonal() += like.r_mean;

  Eigen::MatrixXd contracted;  // M_k Phi^T Theta, N x J
  if (diagonal_inverse) {
    contracted = tamed.diagonal().cwiseInverse().asDiagonal() * feat_dev;
  } else {
    // r_mean entries can underflow to zero at saturated logits, leaving the
    // tamed matrix only positive semidefinite. Any solution of the
    // consistent system works: the kernel is annihilated by the P Phi factor
    // applied next. LDLT covers that case when the Cholesky rejects.
    const Eigen::LLT<Eigen::MatrixXd> chol(tamed);
    if (chol.info() == Eigen::Success) {
      contracted = chol.solve(feat_dev);
    } else {
      // LDLT flags semidefinite matrices as a numerical issue yet still
      // produces a valid solution of the consistent system, so judge by the
      // result instead of info().
      contracted = tamed.ldlt().solve(feat_dev);
    }
    if (!contracted.allFinite())
      throw NumericError(std::string(where) + ": tamed solve produced non-finite values");
  }

  // Delta form: mean shift plus deviation shift applied to the particles
  // directly. Algebraically the same as rebuilding mean + deviation, and an
  // all-zero update (e.g. zero features) leaves the particles bit-identical.
  const Eigen::VectorXd mean_shift = -dt * (cov_feat * (like.y_mean - data.labels));
  Ensemble next;
  next.particles =
      (ensemble.particles - (0.5 * dt) * (cov_feat * contracted)).colwise() + mean_shift;
  check_finite(next, where, step_index, dt);
  return next;
}

// Second Trotter half-step with the spread term optional: the stochastic
// variant uses the same relaxation but replaces the spread drift by noise.
Ensemble prior_relax_impl(const Ensemble& ensemble, const GaussianPrior& prior, double dt,
                          bool diagonal_inverse, bool with_spread_term, const char* where,
                          int step_index) {
  if (prior.dim() != ensemble.dim())
    throw StructuralError(std::string(where) + ": prior dimension " +
                          std::to_string(prior.dim()) + " does not match ensemble dimension " +
                          std::to_string(ensemble.dim()));
  const EnsembleStats stats = compute_stats(ensemble);

  // u_j = theta_j + mean - 2 m_prior
  Eigen::MatrixXd shifted = ensemble.particles;
  shifted.colwise() += stats.mean - 2.0 * prior.mean();

  const Eigen::MatrixXd tamed = dt * stats.covariance + prior.covariance();
  Eigen::MatrixXd solved;  // (dt P + P_prior)^{-1} u
  if (diagonal_inverse) {
    solved = tamed.diagonal().cwiseInverse().asDiagonal() * shifted;
  } else {
    const Eigen::LLT<Eigen::MatrixXd> chol(tamed);
    if (chol.info() != Eigen::Success)
      throw NumericError(std::string(where) + ": prior relaxation solve failed");
    solved = chol.solve(shifted);
  }

  Ensemble next;
  next.particles = ensemble.particles - (0.5 * dt) * (stats.covariance * solved);
  if (with_spread_term) next.particles += (0.5 * dt) * stats.deviations;
  check_finite(next, where, step_index, dt);
  return next;
}

StepDiagnostics make_diagnostics(const Eigen::MatrixXd& cov_prev,
                                 const EnsembleStats& stats_next, StopNorm norm) {
  StepDiagnostics diag;
  const double denom = matrix_norm(cov_prev, norm);
  const double change = matrix_norm(stats_next.covariance - cov_prev, norm);
  diag.cov_rel_change = denom > 0.0 ? change / denom : 0.0;
  diag.mean_norm = stats_next.mean.norm();
  diag.cov_trace = stats_next.covariance.trace();
  return diag;
}

}  // namespace

void HomotopyConfig::validate() const {
  if (step_size <= 0.0) throw StructuralError("homotopy step size must be positive");
  if (step_count < 1) throw StructuralError("homotopy step count must be >= 1");
  if (std::abs(step_size * step_count - 1.0) > 1e-12)
    throw StructuralError("homotopy requires step_size * step_count = 1 (got " +
                          std::to_string(step_size * step_count) + ")");
}

void SecondOrderConfig::validate() const {
  if (step_size <= 0.0) throw StructuralError("second-order step size must be positive");
  if (stop_threshold && *stop_threshold <= 0.0)
    throw StructuralError("stop threshold must be positive");
  if (max_steps < 1) throw StructuralError("max_steps must be >= 1");
}

int SecondOrderConfig::default_max_steps(double step_size) {
  return static_cast<int>(std::ceil(30.0 / step_size));
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::homotopy_end: return "homotopy_end";
    case Termination::threshold: return "threshold";
    case Termination::step_cap: return "step_cap";
  }
  return "unknown";
}

Eigen::MatrixXd Taming::apply(const Eigen::MatrixXd& rhs) const {
  if (diagonal) return diag.asDiagonal() * rhs;
  return full * rhs;
}

Taming taming_matrix(const EnsembleStats& stats, const Eigen::MatrixXd& features,
                     const Eigen::VectorXd& r_mean, double dt, bool diagonal) {
  if (dt < 0.0) throw StructuralError("taming_matrix: dt must be >= 0");
  if (features.cols() != r_mean.size())
    throw StructuralError("taming_matrix: r_mean length must match the sample count");
  if ((r_mean.array() <= 0.0).any() || (r_mean.array() > 0.25 + 1e-15).any())
    throw StructuralError("taming_matrix: r_mean entries must lie in (0, 1/4]");

  const Eigen::MatrixXd base =
      dt * (features.transpose() * stats.covariance * features) +
      Eigen::MatrixXd(r_mean.asDiagonal());
  Taming result;
  result.diagonal = diagonal;
  if (diagonal) {
    result.diag = base.diagonal().cwiseInverse();
  } else {
    const Eigen::LLT<Eigen::MatrixXd> chol(base);
    if (chol.info() != Eigen::Success)
      throw NumericError("taming_matrix: factorization failed unexpectedly");
    result.full = chol.solve(Eigen::MatrixXd::Identity(base.rows(), base.cols()));
  }
  return result;
}

Ensemble homotopy_step(const Ensemble& ensemble, const Dataset& data,
                       const HomotopyConfig& config, int step_index) {
  return likelihood_step_impl(ensemble, data, config.step_size, config.diagonal_inverse,
                              "homotopy_step", step_index);
}

Ensemble second_order_half_step(const Ensemble& ensemble, const Dataset& data, double dt,
                                bool diagonal_inverse) {
  return likelihood_step_impl(ensemble, data, dt, diagonal_inverse, "second_order_half_step",
                              -1);
}

Ensemble prior_relax_step(const Ensemble& half_step, const GaussianPrior& prior, double dt,
                          bool diagonal_inverse, bool with_spread_term) {
  return prior_relax_impl(half_step, prior, dt, diagonal_inverse, with_spread_term,
                          "prior_relax_step", -1);
}

RunReport run_homotopy(const Ensemble& initial, const Dataset& data, const GaussianPrior& prior,
                       const HomotopyConfig& config) {
  config.validate();
  if (prior.dim() != initial.dim())
    throw StructuralError("run_homotopy: prior/ensemble dimension mismatch");

  RunReport report;
  report.seed = config.seed;
  report.diagnostics.reserve(config.step_count);
  Ensemble current = initial;
  Eigen::MatrixXd cov_prev = compute_stats(current).covariance;
  for (int k = 0; k < config.step_count; ++k) {
    current = homotopy_step(current, data, config, k);
    const EnsembleStats stats = compute_stats(current);
    report.diagnostics.push_back(make_diagnostics(cov_prev, stats, StopNorm::frobenius));
    cov_prev = stats.covariance;
  }
  report.final_ensemble = std::move(current);
  report.steps_taken = config.step_count;
  report.terminated_by = Termination::homotopy_end;
  return report;
}

RunReport run_second_order(const Ensemble& initial, const Dataset& data,
                           const GaussianPrior& prior, const SecondOrderConfig& config) {
  config.validate();
  RunReport report;
  report.seed = config.seed;
  Ensemble current = initial;
  Eigen::MatrixXd cov_prev = compute_stats(current).covariance;
  for (int k = 0; k < config.max_steps; ++k) {
    const Ensemble half =
        second_order_half_step(current, data, config.step_size, config.diagonal_inverse);
    current = prior_relax_impl(half, prior, config.step_size, config.diagonal_inverse,
                               /*with_spread_term=*/true, "run_second_order", k);
    const EnsembleStats stats = compute_stats(current);
    report.diagnostics.push_back(make_diagnostics(cov_prev, stats, config.stop_norm));
    cov_prev = stats.covariance;
    ++report.steps_taken;
    if (config.stop_threshold &&
        report.diagnostics.back().cov_rel_change < *config.stop_threshold) {
      report.final_ensemble = std::move(current);
      report.terminated_by = Termination::threshold;
      return report;
    }
  }
  report.final_ensemble = std::move(current);
  report.terminated_by = Termination::step_cap;
  return report;
}

RunReport run_stochastic_second_order(const Ensemble& initial, const Dataset& data,
                                      const GaussianPrior& prior, double dt, int steps,
                                      std::uint64_t seed) {
  if (dt <= 0.0) throw StructuralError("run_stochastic_second_order: dt must be positive");
  if (steps < 1) throw StructuralError("run_stochastic_second_order: steps must be >= 1");
  Rng rng(SeedStream(seed).derive("noise"));

  RunReport report;
  report.seed = seed;
  Ensemble current = initial;
  Eigen::MatrixXd cov_prev = compute_stats(current).covariance;
  const double noise_scale = std::sqrt(dt);
  for (int k = 0; k < steps; ++k) {
    const Eigen::MatrixXd noise_root = psd_sqrt(cov_prev);
    const Ensemble half = likelihood_step_impl(current, data, dt, false,
                                               "run_stochastic_second_order", k);
    current = prior_relax_impl(half, prior, dt, false, /*with_spread_term=*/false,
                               "run_stochastic_second_order", k);
    current.particles +=
        noise_scale * (noise_root * rng.normal_matrix(current.dim(), current.size()));
    check_finite(current, "run_stochastic_second_order", k, dt);
    const EnsembleStats stats = compute_stats(current);
    report.diagnostics.push_back(make_diagnostics(cov_prev, stats, StopNorm::frobenius));
    cov_prev = stats.covariance;
    ++report.steps_taken;
  }
  report.final_ensemble = std::move(current);
  report.terminated_by = Termination::step_cap;
  return report;
}

Ensemble sample_prior_ensemble(const GaussianMoments& moments, int count, Rng& rng) {
  if (count < 1) throw StructuralError("sample_prior_ensemble: count must be >= 1");
  moments.validate();
  Eigen::LLT<Eigen::MatrixXd> chol(moments.covariance);
  if (chol.info() != Eigen::Success)
    throw StructuralError("sample_prior_ensemble: covariance is not positive definite");
  const Eigen::MatrixXd factor = chol.matrixL();
  Ensemble ensemble;
  ensemble.particles =
      (factor * rng.normal_matrix(moments.dim(), count)).colwise() + moments.mean;
  return ensemble;
}

Ensemble sample_prior_ensemble(const GaussianPrior& prior, int count, Rng& rng) {
  if (count < 1) throw StructuralError("sample_prior_ensemble: count must be >= 1");
  Ensemble ensemble;
  ensemble.particles =
      (prior.sqrt_factor() * rng.normal_matrix(prior.dim(), count)).colwise() + prior.mean();
  return ensemble;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& matrix) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(matrix);
  if (eig.info() != Eigen::Success) throw NumericError("psd_sqrt: eigendecomposition failed");
  const double lambda_max = eig.eigenvalues().maxCoeff();
  const double floor = 1e-12 * std::max(lambda_max, 0.0);
  Eigen::VectorXd roots = eig.eigenvalues();
  for (Eigen::Index i = 0; i < roots.size(); ++i)
    roots[i] = roots[i] > floor ? std::sqrt(roots[i]) : 0.0;
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double matrix_norm(const Eigen::MatrixXd& matrix, StopNorm norm) {
  if (norm == StopNorm::frobenius) return matrix.norm();
  // Power iteration on matrix^2: immune to +/- eigenvalue pairs of equal
  // magnitude, which symmetric difference matrices often have.
  const Eigen::Index dim = matrix.rows();
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = 1.0 + static_cast<double>(i) / dim;
  v.normalize();
  double value = 0.0;
  for (int iter = 0; iter < 500; ++iter) {
    Eigen::VectorXd next = matrix * (matrix * v);
    const double next_norm = next.norm();
    if (next_norm == 0.0) return 0.0;
    next /= next_norm;
    const double estimate = std::sqrt(next_norm);
    if (std::abs(estimate - value) <= 1e-12 * std::max(1.0, estimate)) return estimate;
    value = estimate;
    v = next;
  }
  return value;
}

}  // namespace ets
