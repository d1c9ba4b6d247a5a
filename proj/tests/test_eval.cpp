#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ets/assignment.hpp"
#include "ets/errors.hpp"
#include "ets/eval.hpp"

using namespace ets;

namespace {

double brute_force_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n; ++i) rank[idx[i]] = static_cast<double>(i);
    return rank;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST_CASE("assignment solver matches brute force on small random instances") {
  Rng rng(179);
  for (int n = 1; n <= 7; ++n) {
    for (int trial = 0; trial < 4; ++trial) {
      const Eigen::MatrixXd cost = rng.normal_matrix(n, n).cwiseAbs();
      const auto assignment = solve_assignment(cost);
      // Valid permutation.
      std::vector<bool> seen(n, false);
      for (int col : assignment) {
        REQUIRE(col >= 0);
        REQUIRE(col < n);
        REQUIRE(!seen[col]);
        seen[col] = true;
      }
      CHECK(assignment_cost(cost, assignment) ==
            doctest::Approx(brute_force_assignment(cost)).epsilon(1e-12));
    }
  }
}

TEST_CASE("wasserstein distance: identity, permutation invariance, hand value") {
  Rng rng(181);
  const Eigen::MatrixXd cloud = rng.normal_matrix(3, 12);
  CHECK(wasserstein2(cloud, cloud) == doctest::Approx(0.0));

  Eigen::MatrixXd shuffled = cloud;
  for (int j = 0; j < 12; ++j) shuffled.col(j) = cloud.col((j * 5) % 12);
  CHECK(wasserstein2(cloud, shuffled) == doctest::Approx(0.0));

  // Two points each, shifted by t: W2 = t.
  Eigen::MatrixXd a(1, 2), b(1, 2);
  a << 0.0, 1.0;
  b << 0.7, 1.7;
  CHECK(wasserstein2(a, b) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("synthetic dataset: forced zero parameter gives balanced labels") {
  Rng rng(SeedStream(0).derive("dataset"));
  const SyntheticProblem problem =
      synthesize_logistic_dataset(20, 300, rng, Eigen::VectorXd::Zero(20));
  const double mean = problem.data.labels.mean();
  CHECK(mean > 0.4);
  CHECK(mean < 0.6);
  problem.data.validate();
}

TEST_CASE("synthetic dataset is reproducible per seed") {
  Rng a(SeedStream(7).derive("dataset"));
  Rng b(SeedStream(7).derive("dataset"));
  const SyntheticProblem first = synthesize_logistic_dataset(5, 40, a);
  const SyntheticProblem second = synthesize_logistic_dataset(5, 40, b);
  CHECK(dataset_to_csv(first.data) == dataset_to_csv(second.data));
  CHECK((first.theta_ref - second.theta_ref).norm() == 0.0);
}

TEST_CASE("random SPD prior is SPD and reproducible") {
  Rng a(SeedStream(3).derive("prior-spd"));
  Rng b(SeedStream(3).derive("prior-spd"));
  const GaussianPrior first = make_random_spd_prior(6, a);
  const GaussianPrior second = make_random_spd_prior(6, b);
  CHECK((first.covariance() - second.covariance()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(first.covariance(),
                                                     Eigen::EigenvaluesOnly);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("log-log fit: exact power law and precondition checks") {
  const std::vector<int> sizes{50, 100, 200, 400, 800};
  std::vector<double> errors;
  for (int j : sizes) errors.push_back(3.0 * std::pow(j, -0.5));
  const std::vector<double> variances(5, 1e-8);
  const RateFit fit = fit_log_log(sizes, errors, variances);
  CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-10));

  CHECK_THROWS_AS(fit_log_log({10, 20, 30}, {1.0, 0.5, 0.3}, {0.0, 0.0, 0.0}),
                  StructuralError);
  CHECK_THROWS_AS(fit_log_log({10, 20, 20, 40}, {1, .5, .5, .3}, {0, 0, 0, 0}),
                  StructuralError);

  // Halving every per-point variance shrinks the half-width by sqrt(2).
  std::vector<double> tight(5, 0.5e-8);
  const RateFit fit2 = fit_log_log(sizes, errors, tight);
  CHECK(fit.slope_half_width / fit2.slope_half_width ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("recovery experiment: aggregates recompute from raw errors") {
  RecoveryProtocol protocol;
  protocol.dim = 3;
  protocol.count = 25;
  protocol.second_order_dt = 0.1;
  const RecoveryResult result =
      recovery_experiment(Method::second_order, 20, 4, PriorKind::identity, 42, protocol);
  REQUIRE(result.errors.size() == 4);
  CHECK(result.failed_repeats == 0);
  double mean = 0.0;
  for (double e : result.errors) mean += e;
  mean /= 4.0;
  CHECK(result.mean_error() == doctest::Approx(mean));
  double var = 0.0;
  for (double e : result.errors) var += (e - mean) * (e - mean);
  CHECK(result.std_of_mean() == doctest::Approx(std::sqrt(var / 3.0 / 4.0)));
  for (double e : result.errors) CHECK(e > 0.0);
}

TEST_CASE("predictive: pairing symmetry, single particle, Monte Carlo oracle") {
  // theta and -theta paired: the averaged sigmoid is exactly 1/2.
  Ensemble paired;
  paired.particles.resize(2, 4);
  paired.particles << 1.0, -1.0, 0.3, -0.3, -2.0, 2.0, 0.9, -0.9;
  Eigen::MatrixXd test = Eigen::MatrixXd::Random(2, 6);
  const Eigen::VectorXd p = predictive_probability(paired, test);
  for (int i = 0; i < p.size(); ++i) {
    CHECK(p[i] == doctest::Approx(0.5).epsilon(1e-14));
  }
  const Eigen::VectorXd conf = predictive_confidence(paired, test);
  for (int i = 0; i < conf.size(); ++i) CHECK(conf[i] == doctest::Approx(0.5));

  Ensemble single;
  single.particles = Eigen::Vector2d(0.8, -0.4);
  const Eigen::VectorXd one = predictive_probability(single, test);
  for (int i = 0; i < test.cols(); ++i)
    CHECK(one[i] == doctest::Approx(sigmoid(test.col(i).dot(single.particles.col(0)))));

  // Ensemble average against a Gaussian Monte Carlo estimate of the same
  // integral, both under N(mean, cov).
  GaussianMoments moments;
  moments.mean = Eigen::Vector2d(0.4, -0.2);
  moments.covariance.resize(2, 2);
  moments.covariance << 1.0, 0.3, 0.3, 0.8;
  Rng ens_rng(SeedStream(5).derive("init-ensemble"));
  const Ensemble sampled = sample_prior_ensemble(moments, 20000, ens_rng);
  const Eigen::VectorXd phi = Eigen::Vector2d(1.2, 0.7);
  const double ens_value = predictive_probability(sampled, phi)[0];

  Rng mc_rng(SeedStream(6).derive("noise"));
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(moments.covariance).matrixL();
  const int samples = 1000000;
  double acc = 0.0, acc_sq = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Eigen::VectorXd draw = moments.mean + chol * mc_rng.normal_vector(2);
    const double s = sigmoid(draw.dot(phi));
    acc += s;
    acc_sq += s * s;
  }
  const double mc = acc / samples;
  const double var = acc_sq / samples - mc * mc;
  const double se_combined = std::sqrt(var / samples + var / 20000.0);
  CHECK(std::abs(ens_value - mc) < 2.0 * se_combined + 1e-12);
}

TEST_CASE("predictive rejects an empty test set and mismatched dims") {
  Ensemble ens;
  ens.particles = Eigen::MatrixXd::Random(2, 3);
  CHECK_THROWS_AS(predictive_probability(ens, Eigen::MatrixXd(2, 0)), StructuralError);
  CHECK_THROWS_AS(predictive_probability(ens, Eigen::MatrixXd::Random(3, 2)), StructuralError);
}

TEST_CASE("ood binning: zero-distance points land in the first bin") {
  Eigen::MatrixXd train(2, 3);
  train << 0, 1, 2, 0, 0, 0;
  Eigen::MatrixXd grid(2, 4);
  grid << 0, 5, 9, 1, 0, 0, 0, 0;  // first grid point coincides with training
  Ensemble ens;
  ens.particles = Eigen::MatrixXd::Random(2, 5);
  const OodCurve curve = ood_confidence_curve(ens, train, grid, 4);
  CHECK(curve.counts[0] >= 2);  // delta = 0 and delta = 0 (the value 1 point)
  CHECK(curve.counts.sum() == 4);
  CHECK(curve.centers.size() == 4);
}

TEST_CASE("ood binning: identical training points reduce to plain distance") {
  Eigen::MatrixXd train = Eigen::MatrixXd::Zero(2, 5);  // five copies of the origin
  Eigen::MatrixXd grid(2, 2);
  grid << 3.0, 0.0, 4.0, 0.0;
  Eigen::VectorXd confidence(2);
  confidence << 0.9, 0.6;
  const OodCurve curve = ood_curve_from_confidence(confidence, train, grid, 2);
  // Distances are 5 and 0, so the two bins get one point each.
  CHECK(curve.counts[0] == 1);
  CHECK(curve.counts[1] == 1);
  CHECK(curve.mean_confidence[1] == doctest::Approx(0.9));
  CHECK(curve.mean_confidence[0] == doctest::Approx(0.6));
}

TEST_CASE("box grid covers a scaled bounding box") {
  Eigen::MatrixXd train(2, 2);
  train << -1.0, 1.0, -2.0, 2.0;
  const Eigen::MatrixXd grid = make_box_grid(train, 3.0, 5);
  CHECK(grid.cols() == 25);
  CHECK(grid.row(0).minCoeff() == doctest::Approx(-3.0));
  CHECK(grid.row(0).maxCoeff() == doctest::Approx(3.0));
  CHECK(grid.row(1).minCoeff() == doctest::Approx(-6.0));
  CHECK(grid.row(1).maxCoeff() == doctest::Approx(6.0));
}

TEST_CASE("radial grid: points sit at the requested radii") {
  Rng rng(191);
  Eigen::MatrixXd train = Eigen::MatrixXd::Zero(4, 3);
  const Eigen::MatrixXd grid = make_radial_grid(train, {2.0, 5.0}, 10, rng);
  CHECK(grid.cols() == 20);
  for (int i = 0; i < 10; ++i) CHECK(grid.col(i).norm() == doctest::Approx(2.0));
  for (int i = 10; i < 20; ++i) CHECK(grid.col(i).norm() == doctest::Approx(5.0));
}

TEST_CASE("ensemble size sweep: low-rank flag and downward error trend") {
  RecoveryProtocol protocol;
  protocol.dim = 4;
  protocol.count = 60;
  const std::vector<int> sizes{2, 6, 15, 40, 100};

  // Average the per-size errors across independent sweeps, then check the
  // trend is decreasing in rank correlation.
  std::vector<double> avg_errors(sizes.size(), 0.0);
  const int sweeps = 5;
  for (int s = 0; s < sweeps; ++s) {
    Rng data_rng(SeedStream(100 + s).derive("dataset"));
    const SyntheticProblem problem = synthesize_logistic_dataset(4, 60, data_rng);
    const GaussianPrior prior = GaussianPrior::identity(4);
    const auto entries = ensemble_size_sweep(sizes, Method::second_order, problem, prior,
                                             200 + s, protocol);
    REQUIRE(entries.size() == sizes.size());
    CHECK(entries[0].low_rank);       // J = 2 <= D
    CHECK(!entries.back().low_rank);  // J = 100 > D
    for (std::size_t i = 0; i < entries.size(); ++i)
      avg_errors[i] += entries[i].recovery_error / sweeps;
  }
  std::vector<double> sizes_d(sizes.begin(), sizes.end());
  CHECK(spearman_rho(sizes_d, avg_errors) < 0.0);
}

TEST_CASE("multiclass predictive: simplex output and confidence range") {
  Rng rng(193);
  Ensemble stacked;
  stacked.particles = rng.normal_matrix(6, 30);  // K = 3 classes in the plane
  const Eigen::MatrixXd test = rng.normal_matrix(2, 8);
  const Eigen::MatrixXd probs = multiclass_predictive(stacked, 3, test);
  REQUIRE(probs.rows() == 3);
  REQUIRE(probs.cols() == 8);
  for (int m = 0; m < 8; ++m) {
    CHECK(probs.col(m).sum() == doctest::Approx(1.0).epsilon(1e-12));
    const double confidence = probs.col(m).maxCoeff();
    CHECK(confidence >= 1.0 / 3.0);
    CHECK(confidence <= 1.0);
  }
}

TEST_CASE("two-cluster and blob synthesis") {
  Rng rng(197);
  const SyntheticProblem clusters = synthesize_two_clusters(20, 4.0, rng);
  CHECK(clusters.data.count() == 40);
  CHECK(clusters.data.labels.head(20).maxCoeff() == 0.0);
  CHECK(clusters.data.labels.tail(20).minCoeff() == 1.0);
  clusters.data.validate();

  const MulticlassProblem blobs = synthesize_blobs(3, 15, 5.0, rng);
  CHECK(blobs.data.count() == 45);
  CHECK(blobs.data.labels.minCoeff() == 1.0);
  CHECK(blobs.data.labels.maxCoeff() == 3.0);
  blobs.data.validate();
}
