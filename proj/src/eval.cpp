#include "ets/eval.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "ets/assignment.hpp"
#include "ets/errors.hpp"

namespace ets {

const char* to_string(Method m) {
  return m == Method::homotopy ? "homotopy" : "second-order";
}

Method method_from_string(const std::string& name) {
  if (name == "homotopy") return Method::homotopy;
  if (name == "second-order" || name == "second_order") return Method::second_order;
  throw UsageError("unknown method '" + name + "' (expected homotopy or second-order)");
}

SyntheticProblem synthesize_logistic_dataset(Eigen::Index dim, Eigen::Index count, Rng& rng) {
  if (dim < 1 || count < 1)
    throw StructuralError("synthesize_logistic_dataset: dim and count must be >= 1");
  return synthesize_logistic_dataset(dim, count, rng, rng.normal_vector(dim));
}

SyntheticProblem synthesize_logistic_dataset(Eigen::Index dim, Eigen::Index count, Rng& rng,
                                             const Eigen::VectorXd& theta_ref) {
  if (dim < 1 || count < 1)
    throw StructuralError("synthesize_logistic_dataset: dim and count must be >= 1");
  if (theta_ref.size() != dim)
    throw StructuralError("synthesize_logistic_dataset: theta_ref dimension mismatch");

  SyntheticProblem problem;
  problem.theta_ref = theta_ref;
  problem.data.num_classes = 2;
  problem.data.features = rng.normal_matrix(dim, count);
  problem.data.labels.resize(count);

  // Degenerate label vectors make the likelihood uninformative about scale;
  // redraw them (features kept) up to a generous retry cap.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (Eigen::Index n = 0; n < count; ++n) {
      const double p = sigmoid(problem.data.features.col(n).dot(theta_ref));
      problem.data.labels[n] = rng.bernoulli(p);
    }
    const double label_mean = problem.data.labels.mean();
    if (label_mean > 0.0 && label_mean < 1.0) return problem;
  }
  throw NumericError("synthesize_logistic_dataset: labels degenerate after 1000 redraws");
}

GaussianPrior make_random_spd_prior(Eigen::Index dim, Rng& rng) {
  const Eigen::MatrixXd a = rng.normal_matrix(dim, dim);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose(), 1.0);
  cov = cov.selfadjointView<Eigen::Lower>();
  cov.diagonal().array() += static_cast<double>(dim) * 1e-3;
  return GaussianPrior(Eigen::VectorXd::Zero(dim), cov);
}

double RecoveryResult::mean_error() const {
  if (errors.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double e : errors) acc += e;
  return acc / static_cast<double>(errors.size());
}

double RecoveryResult::std_of_mean() const {
  if (errors.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double mean = mean_error();
  double acc = 0.0;
  for (double e : errors) acc += (e - mean) * (e - mean);
  const double var = acc / static_cast<double>(errors.size() - 1);
  return std::sqrt(var / static_cast<double>(errors.size()));
}

namespace {

GaussianPrior make_recovery_prior(PriorKind kind, Eigen::Index dim, const SeedStream& streams) {
  if (kind == PriorKind::identity) return GaussianPrior::identity(dim);
  Rng rng(streams.derive("prior-spd"));
  return make_random_spd_prior(dim, rng);
}

RunReport run_method(Method method, const Ensemble& initial, const Dataset& data,
                     const GaussianPrior& prior, const RecoveryProtocol& protocol,
                     std::uint64_t seed) {
  if (method == Method::homotopy) {
    HomotopyConfig config;
    config.step_size = protocol.homotopy_dt;
    config.step_count = static_cast<int>(std::llround(1.0 / protocol.homotopy_dt));
    config.seed = seed;
    return run_homotopy(initial, data, prior, config);
  }
  SecondOrderConfig config;
  config.step_size = protocol.second_order_dt;
  config.stop_threshold = protocol.stop_threshold;
  config.max_steps = SecondOrderConfig::default_max_steps(protocol.second_order_dt);
  config.seed = seed;
  return run_second_order(initial, data, prior, config);
}

}  // namespace

RecoveryResult recovery_experiment(Method method, int ensemble_size, int repeats,
                                   PriorKind prior_kind, std::uint64_t seed,
                                   const RecoveryProtocol& protocol) {
  if (ensemble_size < 2) throw StructuralError("recovery_experiment: J must be >= 2");
  if (repeats < 1) throw StructuralError("recovery_experiment: repeats must be >= 1");

  const SeedStream streams(seed);
  const GaussianPrior prior = make_recovery_prior(prior_kind, protocol.dim, streams);

  RecoveryResult result;
  result.method = method;
  result.ensemble_size = ensemble_size;
  result.errors.reserve(repeats);
  for (int repeat = 0; repeat < repeats; ++repeat) {
    Rng data_rng(streams.derive("dataset", repeat));
    Rng init_rng(streams.derive("init-ensemble", repeat));
    try {
      const SyntheticProblem problem =
          synthesize_logistic_dataset(protocol.dim, protocol.count, data_rng);
      const Ensemble initial = sample_prior_ensemble(prior, ensemble_size, init_rng);
      const RunReport report =
          run_method(method, initial, problem.data, prior, protocol, seed);
      const Eigen::VectorXd posterior_mean =
          report.final_ensemble.particles.rowwise().mean();
      result.errors.push_back((posterior_mean - problem.theta_ref).norm());
    } catch (const NumericError&) {
      ++result.failed_repeats;
    }
  }
  if (10 * result.failed_repeats > repeats)
    throw NumericError("recovery_experiment: " + std::to_string(result.failed_repeats) +
                       " of " + std::to_string(repeats) + " repeats blew up");
  return result;
}

RateFit fit_log_log(const std::vector<int>& ensemble_sizes, const std::vector<double>& errors,
                    const std::vector<double>& error_variances) {
  if (ensemble_sizes.size() < 4)
    throw StructuralError("rate fit needs at least 4 distinct ensemble sizes");
  if (errors.size() != ensemble_sizes.size() || error_variances.size() != errors.size())
    throw StructuralError("rate fit: mismatched input lengths");
  for (std::size_t i = 0; i < ensemble_sizes.size(); ++i) {
    for (std::size_t j = i + 1; j < ensemble_sizes.size(); ++j)
      if (ensemble_sizes[i] == ensemble_sizes[j])
        throw StructuralError("rate fit: ensemble sizes must be distinct");
    if (errors[i] <= 0.0) throw StructuralError("rate fit: errors must be positive");
  }

  const std::size_t n = ensemble_sizes.size();
  Eigen::VectorXd x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[static_cast<Eigen::Index>(i)] = std::log(static_cast<double>(ensemble_sizes[i]));
    y[static_cast<Eigen::Index>(i)] = std::log(errors[i]);
  }
  const double x_mean = x.mean();
  const Eigen::VectorXd x_centered = x.array() - x_mean;
  const double sxx = x_centered.squaredNorm();

  RateFit fit;
  fit.ensemble_sizes = ensemble_sizes;
  fit.errors = errors;
  fit.slope = x_centered.dot(y) / sxx;
  fit.intercept = y.mean() - fit.slope * x_mean;

  // Propagate the per-point variances: var(log e) ~ var(e) / e^2, and the
  // slope is a fixed linear combination of the y values.
  double slope_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double weight = x_centered[static_cast<Eigen::Index>(i)] / sxx;
    const double log_var = error_variances[i] / (errors[i] * errors[i]);
    slope_var += weight * weight * log_var;
  }
  fit.slope_half_width = 2.0 * std::sqrt(slope_var);
  return fit;
}

RateFit meanfield_rate_study(const std::vector<int>& ensemble_sizes, double total_time,
                             int repeats, std::uint64_t seed,
                             const RateStudyOptions& options) {
  if (ensemble_sizes.size() < 4)
    throw StructuralError("meanfield_rate_study needs at least 4 ensemble sizes");
  if (repeats < 2) throw StructuralError("meanfield_rate_study needs repeats >= 2");
  if (total_time <= 0.0) throw StructuralError("meanfield_rate_study: total_time must be > 0");

  const SeedStream streams(seed);
  Rng data_rng(streams.derive("dataset"));
  const SyntheticProblem problem =
      synthesize_logistic_dataset(options.dim, options.count, data_rng);
  const GaussianPrior prior = GaussianPrior::identity(options.dim);
  const GaussianMoments initial_law{prior.mean(), prior.covariance()};

  // One moment-flow reference serves every ensemble size.
  const MomentTrajectory reference =
      integrate_moments(initial_law, problem.data, prior, options.ode_dt, total_time,
                        MomentVariant::second_order);
  const GaussianMoments& limit = reference.final_point();

  const int steps = static_cast<int>(std::llround(total_time / options.ips_dt));
  SecondOrderConfig config;
  config.step_size = options.ips_dt;
  config.stop_threshold.reset();  // run to fixed time
  config.max_steps = steps;
  config.seed = seed;

  std::vector<double> means(ensemble_sizes.size());
  std::vector<double> variances(ensemble_sizes.size());
  for (std::size_t ji = 0; ji < ensemble_sizes.size(); ++ji) {
    const int count = ensemble_sizes[ji];
    if (count < 2) throw StructuralError("meanfield_rate_study: J must be >= 2");
    std::vector<double> samples;
    samples.reserve(repeats);
    for (int repeat = 0; repeat < repeats; ++repeat) {
      Rng init_rng(streams.derive("init-ensemble",
                                  static_cast<std::uint64_t>(count) * 1000003ULL + repeat));
      const Ensemble initial = sample_prior_ensemble(prior, count, init_rng);
      const RunReport report = run_second_order(initial, problem.data, prior, config);

      double err = 0.0;
      if (options.metric == RateMetric::moments) {
        const EnsembleStats stats = compute_stats(report.final_ensemble);
        err = (stats.mean - limit.mean).norm() +
              (stats.covariance - limit.covariance).norm();
      } else {
        const Eigen::MatrixXd coupled = integrate_meanfield_particles(
            initial.particles, initial_law, problem.data, prior, options.ode_dt, total_time);
        err = wasserstein2(report.final_ensemble.particles, coupled);
      }
      samples.push_back(err);
    }
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    var /= static_cast<double>(samples.size() - 1);
    means[ji] = mean;
    variances[ji] = var / static_cast<double>(samples.size());  // variance of the mean
  }
  return fit_log_log(ensemble_sizes, means, variances);
}

Eigen::VectorXd predictive_probability(const Ensemble& ensemble,
                                       const Eigen::MatrixXd& test_features) {
  ensemble.validate();
  if (test_features.cols() < 1) throw StructuralError("predictive: empty test set");
  if (test_features.rows() != ensemble.dim())
    throw StructuralError("predictive: feature dimension " +
                          std::to_string(test_features.rows()) +
                          " does not match ensemble dimension " +
                          std::to_string(ensemble.dim()));
  const Eigen::MatrixXd logits = test_features.transpose() * ensemble.particles;  // M x J
  return logits.array().unaryExpr([](double z) { return sigmoid(z); }).rowwise().mean();
}

Eigen::VectorXd predictive_confidence(const Ensemble& ensemble,
                                      const Eigen::MatrixXd& test_features) {
  const Eigen::VectorXd p = predictive_probability(ensemble, test_features);
  return p.cwiseMax(Eigen::VectorXd::Ones(p.size()) - p);
}

Eigen::VectorXd predictive_probability(const GaussianMoments& moments,
                                       const Eigen::MatrixXd& test_features) {
  if (test_features.cols() < 1) throw StructuralError("predictive: empty test set");
  Eigen::VectorXd p(test_features.cols());
  for (Eigen::Index i = 0; i < test_features.cols(); ++i)
    p[i] = probit_predictive(moments, test_features.col(i));
  return p;
}

Eigen::VectorXd predictive_confidence(const GaussianMoments& moments,
                                      const Eigen::MatrixXd& test_features) {
  const Eigen::VectorXd p = predictive_probability(moments, test_features);
  return p.cwiseMax(Eigen::VectorXd::Ones(p.size()) - p);
}

Eigen::MatrixXd multiclass_predictive(const Ensemble& stacked, int num_classes,
                                      const Eigen::MatrixXd& test_features) {
  if (num_classes < 2) throw StructuralError("multiclass_predictive: K must be >= 2");
  if (stacked.dim() != num_classes * test_features.rows())
    throw StructuralError("multiclass_predictive: stacked dimension must be K * D");
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(num_classes, test_features.cols());
  for (Eigen::Index m = 0; m < test_features.cols(); ++m) {
    for (Eigen::Index j = 0; j < stacked.size(); ++j)
      probs.col(m) +=
          softmax_probs(stacked.particles.col(j), num_classes, test_features.col(m));
    probs.col(m) /= static_cast<double>(stacked.size());
  }
  return probs;
}

namespace {

Eigen::VectorXd nearest_train_distance(const Eigen::MatrixXd& train_features,
                                       const Eigen::MatrixXd& test_grid) {
  Eigen::VectorXd delta(test_grid.cols());
  for (Eigen::Index i = 0; i < test_grid.cols(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index n = 0; n < train_features.cols(); ++n)
      best = std::min(best, (test_grid.col(i) - train_features.col(n)).norm());
    delta[i] = best;
  }
  return delta;
}

}  // namespace

OodCurve ood_curve_from_confidence(const Eigen::VectorXd& confidence,
                                   const Eigen::MatrixXd& train_features,
                                   const Eigen::MatrixXd& test_grid, int bins) {
  if (bins < 1) throw StructuralError("ood curve: bins must be >= 1");
  if (test_grid.cols() < 1) throw StructuralError("ood curve: empty grid");
  if (confidence.size() != test_grid.cols())
    throw StructuralError("ood curve: confidence length must match the grid");
  const Eigen::VectorXd delta = nearest_train_distance(train_features, test_grid);
  const double delta_max = delta.maxCoeff();
  const double width = delta_max > 0.0 ? delta_max / bins : 1.0;

  OodCurve curve;
  curve.centers.resize(bins);
  curve.mean_confidence = Eigen::VectorXd::Constant(bins, std::numeric_limits<double>::quiet_NaN());
  curve.std_confidence = Eigen::VectorXd::Constant(bins, std::numeric_limits<double>::quiet_NaN());
  curve.counts = Eigen::VectorXi::Zero(bins);

  std::vector<double> sums(bins, 0.0), squares(bins, 0.0);
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    int bin = static_cast<int>(delta[i] / width);
    if (bin >= bins) bin = bins - 1;
    curve.counts[bin] += 1;
    sums[bin] += confidence[i];
    squares[bin] += confidence[i] * confidence[i];
  }
  for (int b = 0; b < bins; ++b) {
    curve.centers[b] = (b + 0.5) * width;
    if (curve.counts[b] == 0) continue;
    const double mean = sums[b] / curve.counts[b];
    curve.mean_confidence[b] = mean;
    const double var = std::max(0.0, squares[b] / curve.counts[b] - mean * mean);
    curve.std_confidence[b] = std::sqrt(var);
  }
  return curve;
}

OodCurve ood_confidence_curve(const Ensemble& ensemble, const Eigen::MatrixXd& train_features,
                              const Eigen::MatrixXd& test_grid, int bins) {
  return ood_curve_from_confidence(predictive_confidence(ensemble, test_grid), train_features,
                                   test_grid, bins);
}

Eigen::MatrixXd make_box_grid(const Eigen::MatrixXd& train_features, double scale,
                              int per_axis) {
  if (train_features.rows() != 2)
    throw StructuralError("make_box_grid expects 2-D features; use make_radial_grid otherwise");
  if (per_axis < 2) throw StructuralError("make_box_grid: per_axis must be >= 2");
  const Eigen::Vector2d lo = train_features.rowwise().minCoeff();
  const Eigen::Vector2d hi = train_features.rowwise().maxCoeff();
  const Eigen::Vector2d center = 0.5 * (lo + hi);
  const Eigen::Vector2d half = 0.5 * scale * (hi - lo).cwiseMax(1e-12);

  Eigen::MatrixXd grid(2, static_cast<Eigen::Index>(per_axis) * per_axis);
  Eigen::Index col = 0;
  for (int iy = 0; iy < per_axis; ++iy) {
    for (int ix = 0; ix < per_axis; ++ix) {
      const double fx = -1.0 + 2.0 * ix / (per_axis - 1);
      const double fy = -1.0 + 2.0 * iy / (per_axis - 1);
      grid(0, col) = center[0] + fx * half[0];
      grid(1, col) = center[1] + fy * half[1];
      ++col;
    }
  }
  return grid;
}

Eigen::MatrixXd make_radial_grid(const Eigen::MatrixXd& train_features,
                                 const std::vector<double>& radii, int per_radius, Rng& rng) {
  if (radii.empty() || per_radius < 1)
    throw StructuralError("make_radial_grid: need radii and per_radius >= 1");
  const Eigen::VectorXd center = train_features.rowwise().mean();
  Eigen::MatrixXd grid(train_features.rows(),
                       static_cast<Eigen::Index>(radii.size()) * per_radius);
  Eigen::Index col = 0;
  for (double radius : radii) {
    for (int i = 0; i < per_radius; ++i) {
      Eigen::VectorXd direction = rng.normal_vector(train_features.rows());
      const double norm = direction.norm();
      if (norm > 0.0) direction /= norm;
      grid.col(col++) = center + radius * direction;
    }
  }
  return grid;
}

std::vector<SweepEntry> ensemble_size_sweep(const std::vector<int>& ensemble_sizes,
                                            Method method, const SyntheticProblem& problem,
                                            const GaussianPrior& prior, std::uint64_t seed,
                                            const RecoveryProtocol& protocol) {
  if (ensemble_sizes.empty()) throw StructuralError("ensemble_size_sweep: empty size list");
  const SeedStream streams(seed);
  std::vector<SweepEntry> entries;
  entries.reserve(ensemble_sizes.size());
  for (std::size_t i = 0; i < ensemble_sizes.size(); ++i) {
    const int count = ensemble_sizes[i];
    Rng init_rng(streams.derive("init-ensemble", i));
    const Ensemble initial = sample_prior_ensemble(prior, count, init_rng);
    const RunReport report = run_method(method, initial, problem.data, prior, protocol, seed);

    SweepEntry entry;
    entry.ensemble_size = count;
    entry.low_rank = count <= problem.data.dim();
    const Eigen::VectorXd mean = report.final_ensemble.particles.rowwise().mean();
    entry.recovery_error = (mean - problem.theta_ref).norm();
    entry.final_ensemble = report.final_ensemble;
    entries.push_back(std::move(entry));
  }
  return entries;
}

SyntheticProblem synthesize_two_clusters(Eigen::Index per_cluster, double separation, Rng& rng) {
  if (per_cluster < 1) throw StructuralError("synthesize_two_clusters: per_cluster must be >= 1");
  SyntheticProblem problem;
  problem.data.num_classes = 2;
  problem.data.features.resize(2, 2 * per_cluster);
  problem.data.labels.resize(2 * per_cluster);
  const Eigen::Vector2d offset(0.5 * separation, 0.0);
  for (Eigen::Index i = 0; i < per_cluster; ++i) {
    problem.data.features.col(i) = Eigen::Vector2d(rng.normal(), rng.normal()) - offset;
    problem.data.labels[i] = 0.0;
    problem.data.features.col(per_cluster + i) =
        Eigen::Vector2d(rng.normal(), rng.normal()) + offset;
    problem.data.labels[per_cluster + i] = 1.0;
  }
  // The separating direction, handy as a reference parameter.
  problem.theta_ref = Eigen::Vector2d(1.0, 0.0);
  return problem;
}

MulticlassProblem synthesize_blobs(int num_classes, Eigen::Index per_class, double separation,
                                   Rng& rng) {
  if (num_classes < 3) throw StructuralError("synthesize_blobs: need at least 3 classes");
  if (per_class < 1) throw StructuralError("synthesize_blobs: per_class must be >= 1");
  MulticlassProblem problem;
  problem.num_classes = num_classes;
  problem.data.num_classes = num_classes;
  problem.data.features.resize(2, num_classes * per_class);
  problem.data.labels.resize(num_classes * per_class);
  for (int k = 0; k < num_classes; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / num_classes;
    const Eigen::Vector2d center(separation * std::cos(angle), separation * std::sin(angle));
    for (Eigen::Index i = 0; i < per_class; ++i) {
      const Eigen::Index col = static_cast<Eigen::Index>(k) * per_class + i;
      problem.data.features.col(col) =
          center + Eigen::Vector2d(rng.normal(), rng.normal());
      problem.data.labels[col] = k + 1;
    }
  }
  return problem;
}

}  // namespace ets
