#include <doctest.h>

#include <algorithm>
#include <random>

#include "ets/ensemble.hpp"
#include "ets/errors.hpp"
#include "ets/model.hpp"
#include "ets/rng.hpp"

using namespace ets;

TEST_CASE("two-point cloud: mean, deviations, 1/J covariance") {
  Ensemble ens;
  ens.particles.resize(1, 2);
  ens.particles << 1.0, 3.0;
  const EnsembleStats stats = compute_stats(ens);
  CHECK(stats.mean[0] == doctest::Approx(2.0));
  CHECK(stats.deviations(0, 0) == doctest::Approx(-1.0));
  CHECK(stats.deviations(0, 1) == doctest::Approx(1.0));
  // 1/J normalization: variance 1, not the 1/(J-1) value 2.
  CHECK(stats.covariance(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("identical particles give a zero covariance") {
  Ensemble ens;
  ens.particles = Eigen::Vector3d(0.5, -2.0, 4.0).replicate(1, 5);
  const EnsembleStats stats = compute_stats(ens);
  CHECK(stats.covariance.cwiseAbs().maxCoeff() == 0.0);
  CHECK(stats.deviations.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stats match a streaming-moments oracle on normal draws") {
  Rng rng(12345);
  const int dim = 3, count = 100;
  Ensemble ens;
  ens.particles = rng.normal_matrix(dim, count);

  // Independent accumulation: sum of x and of x x^T, covariance from raw
  // second moments.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(dim, dim);
  for (int j = 0; j < count; ++j) {
    const Eigen::VectorXd x = ens.particles.col(j);
    sum += x;
    sum_sq += x * x.transpose();
  }
  const Eigen::VectorXd mean = sum / count;
  const Eigen::MatrixXd cov = sum_sq / count - mean * mean.transpose();

  const EnsembleStats stats = compute_stats(ens);
  CHECK((stats.mean - mean).norm() < 1e-12);
  CHECK((stats.covariance - cov).norm() < 1e-12);
  // O(J^{-1/2}) closeness to the identity for standard normal draws.
  CHECK((stats.covariance - Eigen::MatrixXd::Identity(dim, dim)).norm() < 5.0 / std::sqrt(100.0));
}

TEST_CASE("stats invariants: column sums, symmetry, rank, permutation") {
  Rng rng(7);
  Ensemble ens;
  ens.particles = rng.normal_matrix(6, 4);  // J - 1 = 3 < D
  const EnsembleStats stats = compute_stats(ens);

  CHECK(stats.deviations.rowwise().sum().cwiseAbs().maxCoeff() <
        1e-10 * std::max(1.0, ens.particles.cwiseAbs().maxCoeff()));
  CHECK((stats.covariance - stats.covariance.transpose()).cwiseAbs().maxCoeff() <=
        1e-12 * stats.covariance.cwiseAbs().maxCoeff());
  const Eigen::MatrixXd recomputed =
      stats.deviations * stats.deviations.transpose() / ens.size();
  CHECK((stats.covariance - recomputed).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stats.covariance);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > 1e-12 * svd.singularValues()[0]) ++rank;
  CHECK(rank <= 3);

  Ensemble shuffled = ens;
  std::vector<int> order{2, 0, 3, 1};
  for (int j = 0; j < 4; ++j) shuffled.particles.col(j) = ens.particles.col(order[j]);
  const EnsembleStats stats2 = compute_stats(shuffled);
  CHECK((stats.mean - stats2.mean).norm() < 1e-14);
  CHECK((stats.covariance - stats2.covariance).norm() < 1e-14);
}

TEST_CASE("affine bookkeeping: stats of A x + b") {
  Rng rng(99);
  const int dim = 4, count = 30;
  Ensemble ens;
  ens.particles = rng.normal_matrix(dim, count);
  Eigen::MatrixXd map = rng.normal_matrix(dim, dim);
  map += 5.0 * Eigen::MatrixXd::Identity(dim, dim);  // keep it invertible
  const Eigen::VectorXd shift = rng.normal_vector(dim);

  Ensemble mapped;
  mapped.particles = (map * ens.particles).colwise() + shift;

  const EnsembleStats base = compute_stats(ens);
  const EnsembleStats after = compute_stats(mapped);
  const Eigen::VectorXd mean_expect = map * base.mean + shift;
  const Eigen::MatrixXd cov_expect = map * base.covariance * map.transpose();
  CHECK((after.mean - mean_expect).norm() < 1e-10 * std::max(1.0, mean_expect.norm()));
  CHECK((after.covariance - cov_expect).norm() < 1e-10 * std::max(1.0, cov_expect.norm()));
}

TEST_CASE("empirical expectation: identity, constant, sigmoid loop oracle") {
  Rng rng(3);
  Ensemble ens;
  ens.particles = rng.normal_matrix(3, 11);
  const EnsembleStats stats = compute_stats(ens);

  const Eigen::VectorXd id_mean = empirical_expectation(
      ens, [](const Eigen::VectorXd& x) { return x; });
  CHECK((id_mean - stats.mean).norm() < 1e-14);

  const Eigen::VectorXd constant = empirical_expectation(
      ens, [](const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(2, 3.25); });
  CHECK(constant[0] == doctest::Approx(3.25));
  CHECK(constant[1] == doctest::Approx(3.25));

  const Eigen::Vector3d phi(0.3, -1.1, 0.7);
  const Eigen::VectorXd quad = empirical_expectation(ens, [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out[0] = sigmoid(x.dot(phi));
    return out;
  });
  double acc = 0.0;
  for (int j = 0; j < ens.size(); ++j) acc += sigmoid(ens.particles.col(j).dot(phi));
  CHECK(quad[0] == doctest::Approx(acc / ens.size()).epsilon(1e-14));
}

TEST_CASE("empirical expectation rejects non-finite values with the particle index") {
  Ensemble ens;
  ens.particles = Eigen::MatrixXd::Zero(1, 3);
  ens.particles(0, 2) = 2.0;
  CHECK_THROWS_WITH_AS(
      empirical_expectation(ens,
                            [](const Eigen::VectorXd& x) {
                              Eigen::VectorXd out(1);
                              out[0] = x[0] > 1.0 ? std::nan("") : 0.0;
                              return out;
                            }),
      doctest::Contains("particle 2"), NumericError);
}

TEST_CASE("stats preconditions") {
  Ensemble single;
  single.particles = Eigen::MatrixXd::Zero(2, 1);
  CHECK_THROWS_AS(compute_stats(single), StructuralError);

  Ensemble bad;
  bad.particles = Eigen::MatrixXd::Zero(2, 3);
  bad.particles(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(compute_stats(bad), NumericError);

  CHECK_THROWS_AS(Ensemble::from_particles({Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3)}),
                  StructuralError);
}

TEST_CASE("ensemble CSV round trip is exact") {
  Rng rng(41);
  Ensemble ens;
  ens.particles = rng.normal_matrix(5, 9);
  ens.particles(0, 0) = 1e-300;
  ens.particles(1, 1) = -3.141592653589793;
  const std::string text = ensemble_to_csv(ens);
  const Ensemble back = ensemble_from_csv(text);
  REQUIRE(back.dim() == ens.dim());
  REQUIRE(back.size() == ens.size());
  CHECK((back.particles - ens.particles).cwiseAbs().maxCoeff() == 0.0);
  CHECK(text.substr(0, 7) == "theta_0");
}
