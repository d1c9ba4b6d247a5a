#include <doctest.h>

#include <cmath>

#include "ets/errors.hpp"
#include "ets/model.hpp"
#include "ets/rng.hpp"

using namespace ets;

namespace {

Dataset random_dataset(int dim, int count, Rng& rng) {
  Dataset data;
  data.features = rng.normal_matrix(dim, count);
  data.labels.resize(count);
  for (int n = 0; n < count; ++n) data.labels[n] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  if (data.labels.mean() == 0.0) data.labels[0] = 1.0;
  if (data.labels.mean() == 1.0) data.labels[0] = 0.0;
  return data;
}

Eigen::VectorXd central_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& theta, double h) {
  Eigen::VectorXd grad(theta.size());
  for (int i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd up = theta, down = theta;
    up[i] += h;
    down[i] -= h;
    grad[i] = (f(up) - f(down)) / (2.0 * h);
  }
  return grad;
}

}  // namespace

TEST_CASE("sigmoid basics") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
  // Saturation without overflow: within 1e-17 of 1.
  CHECK(sigmoid(40.0) <= 1.0);
  CHECK(sigmoid(40.0) >= 1.0 - 1e-17);
  CHECK(sigmoid(-40.0) >= 0.0);
  CHECK(sigmoid(-40.0) <= 1e-17);
  CHECK(std::isfinite(sigmoid(700.0)));
  CHECK(std::isfinite(sigmoid(-700.0)));
  // sigma(-z) = 1 - sigma(z) and monotonicity.
  Rng rng(11);
  double prev = sigmoid(-30.0);
  for (int i = 0; i < 50; ++i) {
    const double z = -30.0 + i * 1.2;
    CHECK(sigmoid(-z) == doctest::Approx(1.0 - sigmoid(z)).epsilon(1e-15));
    CHECK(sigmoid(z) >= prev);
    prev = sigmoid(z);
  }
  (void)rng;
}

TEST_CASE("cross entropy at theta = 0 is N log 2") {
  Rng rng(5);
  Dataset data = random_dataset(3, 4, rng);
  CHECK(cross_entropy(Eigen::VectorXd::Zero(3), data) ==
        doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy single-sample value from the sigmoid identity") {
  Dataset data;
  data.features = Eigen::MatrixXd::Constant(1, 1, 1.0);
  data.labels = Eigen::VectorXd::Constant(1, 1.0);
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, std::log(3.0));
  // y = sigma(log 3) = 3/4, loss = -log(3/4).
  CHECK(cross_entropy(theta, data) == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
}

TEST_CASE("loss decreases along the negative gradient") {
  Rng rng(17);
  Dataset data = random_dataset(5, 12, rng);
  const Eigen::VectorXd theta = rng.normal_vector(5);
  const double base = cross_entropy(theta, data);
  const Eigen::VectorXd grad = grad_loss(theta, data);
  REQUIRE(grad.norm() > 0.0);
  CHECK(cross_entropy(theta - 1e-3 * grad / grad.norm(), data) < base);
}

TEST_CASE("gradient matches central finite differences") {
  Rng rng(23);
  Dataset data = random_dataset(5, 7, rng);
  const Eigen::VectorXd theta = rng.normal_vector(5);
  const Eigen::VectorXd grad = grad_loss(theta, data);
  const Eigen::VectorXd fd = central_diff_grad(
      [&](const Eigen::VectorXd& t) { return cross_entropy(t, data); }, theta, 1e-5);
  CHECK((grad - fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gradient trivial zeros") {
  // Balanced labels on a shared feature: y = 1/2 cancels exactly.
  Dataset data;
  data.features.resize(2, 2);
  data.features.col(0) = Eigen::Vector2d(0.4, -1.0);
  data.features.col(1) = Eigen::Vector2d(0.4, -1.0);
  data.labels.resize(2);
  data.labels << 1.0, 0.0;
  CHECK(grad_loss(Eigen::VectorXd::Zero(2), data).norm() == 0.0);

  // Labels replaced by the model's own probabilities.
  Rng rng(31);
  Dataset soft = random_dataset(3, 6, rng);
  const Eigen::VectorXd theta = rng.normal_vector(3);
  Dataset consistent = soft;
  consistent.labels = sigmoid(soft.features.transpose() * theta);
  // Such labels are not valid {0,1} data, so call the formula directly.
  const Eigen::VectorXd y = sigmoid(consistent.features.transpose() * theta);
  const Eigen::VectorXd grad = consistent.features * (y - consistent.labels);
  CHECK(grad.norm() == 0.0);
}

TEST_CASE("hessian at theta = 0 is 0.25 Phi Phi^T") {
  Rng rng(37);
  Dataset data = random_dataset(4, 9, rng);
  const Eigen::MatrixXd hess = hessian_loss(Eigen::VectorXd::Zero(4), data);
  const Eigen::MatrixXd expect = 0.25 * data.features * data.features.transpose();
  CHECK((hess - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scalar hessian value at y = 3/4") {
  Dataset data;
  data.features = Eigen::MatrixXd::Constant(1, 1, 2.0);
  data.labels = Eigen::VectorXd::Constant(1, 1.0);
  // sigma(2 theta) = 3/4 at theta = log(3)/2; hessian = phi^2 r = 4 * (3/16).
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 0.5 * std::log(3.0));
  CHECK(hessian_loss(theta, data)(0, 0) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("hessian is SPSD and matches finite differences of the gradient") {
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    Dataset data = random_dataset(4, 10, rng);
    const Eigen::VectorXd theta = rng.normal_vector(4);
    const Eigen::MatrixXd hess = hessian_loss(theta, data);
    CHECK((hess - hess.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess, Eigen::EigenvaluesOnly);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);

    const double h = 1e-5;
    Eigen::MatrixXd fd(4, 4);
    for (int i = 0; i < 4; ++i) {
      Eigen::VectorXd up = theta, down = theta;
      up[i] += h;
      down[i] -= h;
      fd.col(i) = (grad_loss(up, data) - grad_loss(down, data)) / (2.0 * h);
    }
    const double scale = std::max(1.0, hess.cwiseAbs().maxCoeff());
    CHECK((hess - fd).cwiseAbs().maxCoeff() < 1e-5 * scale);
  }
}

TEST_CASE("likelihood bounds: y in (0,1), r in (0, 1/4]") {
  Rng rng(47);
  Dataset data = random_dataset(3, 25, rng);
  const Eigen::VectorXd theta = 2.0 * rng.normal_vector(3);
  const LikelihoodEval eval = evaluate_likelihood(theta, data);
  for (int n = 0; n < data.count(); ++n) {
    CHECK(eval.y[n] > 0.0);
    CHECK(eval.y[n] < 1.0);
    CHECK(eval.r_diag[n] > 0.0);
    CHECK(eval.r_diag[n] <= 0.25);
    CHECK(eval.r_diag[n] == eval.y[n] * (1.0 - eval.y[n]));
  }
  CHECK(eval.loss >= 0.0);
}

TEST_CASE("cross entropy is midpoint convex along random segments") {
  Rng rng(53);
  Dataset data = random_dataset(4, 15, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd a = 3.0 * rng.normal_vector(4);
    const Eigen::VectorXd b = 3.0 * rng.normal_vector(4);
    const double mid = cross_entropy(0.5 * (a + b), data);
    CHECK(mid <= 0.5 * (cross_entropy(a, data) + cross_entropy(b, data)) + 1e-12);
  }
}

TEST_CASE("negative log posterior: values and finite-difference gradient") {
  Dataset data;
  data.features = Eigen::MatrixXd::Zero(2, 1);
  data.labels = Eigen::VectorXd::Constant(1, 1.0);
  const GaussianPrior prior = GaussianPrior::identity(2);

  // Zero features: loss is N log 2 regardless of theta, plus the quadratic.
  CHECK(neg_log_posterior(Eigen::VectorXd::Zero(2), data, prior) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  const Eigen::VectorXd theta = Eigen::Vector2d(0.7, -1.2);
  CHECK(neg_log_posterior(theta, data, prior) ==
        doctest::Approx(std::log(2.0) + 0.5 * theta.squaredNorm()).epsilon(1e-14));

  Rng rng(59);
  Dataset full = random_dataset(3, 8, rng);
  Eigen::MatrixXd cov = rng.normal_matrix(3, 3);
  cov = cov * cov.transpose() + Eigen::MatrixXd::Identity(3, 3);
  const GaussianPrior wide(rng.normal_vector(3), cov);
  const Eigen::VectorXd point = rng.normal_vector(3);
  const Eigen::VectorXd grad = grad_neg_log_posterior(point, full, wide);
  const Eigen::VectorXd fd = central_diff_grad(
      [&](const Eigen::VectorXd& t) { return neg_log_posterior(t, full, wide); }, point, 1e-5);
  CHECK((grad - fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("prior construction rejects non-SPD covariance") {
  Eigen::MatrixXd not_spd = Eigen::MatrixXd::Identity(2, 2);
  not_spd(0, 0) = -1.0;
  CHECK_THROWS_AS(GaussianPrior(Eigen::VectorXd::Zero(2), not_spd), StructuralError);
  Eigen::MatrixXd asym = Eigen::MatrixXd::Identity(2, 2);
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(GaussianPrior(Eigen::VectorXd::Zero(2), asym), StructuralError);
}

TEST_CASE("labels outside {0,1} are rejected") {
  Dataset data;
  data.features = Eigen::MatrixXd::Ones(1, 2);
  data.labels.resize(2);
  data.labels << 0.0, 2.0;
  CHECK_THROWS_AS(cross_entropy(Eigen::VectorXd::Zero(1), data), StructuralError);
}

TEST_CASE("softmax: uniform, binary reduction, extreme logits") {
  const Eigen::VectorXd phi = Eigen::Vector2d(1.0, -0.5);
  Eigen::MatrixXd equal = Eigen::MatrixXd::Zero(2, 3);
  const Eigen::VectorXd uniform = softmax_probs(equal, phi);
  for (int k = 0; k < 3; ++k) CHECK(uniform[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(uniform.sum() == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(61);
  Eigen::MatrixXd two = rng.normal_matrix(2, 2);
  const Eigen::VectorXd probs = softmax_probs(two, phi);
  const double z1 = two.col(0).dot(phi), z2 = two.col(1).dot(phi);
  CHECK(probs[0] == doctest::Approx(sigmoid(z1 - z2)).epsilon(1e-12));

  // Logit spread of 100: no overflow, tiny class stays tiny but positive.
  Eigen::MatrixXd spread(1, 2);
  spread << 100.0, 0.0;
  const Eigen::VectorXd extreme = softmax_probs(spread, Eigen::VectorXd::Ones(1));
  CHECK(extreme[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(extreme[1] > 0.0);
  CHECK(extreme[1] == doctest::Approx(std::exp(-100.0)).epsilon(1e-10));
  CHECK(std::isfinite(extreme.sum()));
}

TEST_CASE("one-vs-rest stacking") {
  Dataset mc;
  mc.num_classes = 3;
  mc.features.resize(2, 4);
  mc.features << 1, 2, 3, 4, 5, 6, 7, 8;
  mc.labels.resize(4);
  mc.labels << 1, 2, 3, 1;
  const Dataset stacked = stack_one_vs_rest(mc);
  CHECK(stacked.dim() == 6);
  CHECK(stacked.count() == 12);
  CHECK(stacked.num_classes == 2);
  // Sample (n=1, k=2) sits at column 1*4+1=5 with the feature in block 1.
  CHECK(stacked.features(2, 5) == 2.0);
  CHECK(stacked.features(3, 5) == 6.0);
  CHECK(stacked.features(0, 5) == 0.0);
  CHECK(stacked.labels[5] == 1.0);
  CHECK(stacked.labels[1] == 0.0);
  stacked.validate();
}

TEST_CASE("dataset CSV round trip") {
  Rng rng(67);
  Dataset data;
  data.features = rng.normal_matrix(3, 5);
  data.labels.resize(5);
  data.labels << 1, 0, 0, 1, 1;
  const std::string text = dataset_to_csv(data);
  const Dataset back = dataset_from_csv(text);
  CHECK((back.features - data.features).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.labels - data.labels).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.num_classes == 2);
}
