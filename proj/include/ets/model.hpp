#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace ets {

// Classification data. Columns of `features` are the per-sample feature
// vectors; `labels` holds 0/1 for binary problems and 1..K when
// num_classes = K > 2. Immutable after construction.
struct Dataset {
  Eigen::MatrixXd features;  // D x N
  Eigen::VectorXd labels;    // N
  int num_classes = 2;

  Eigen::Index dim() const { return features.rows(); }
  Eigen::Index count() const { return features.cols(); }

  void validate() const;
  bool is_binary() const { return num_classes == 2; }
};

// CSV layout: one sample per row, D feature columns named x_0..x_{D-1}
// followed by a `label` column; the loader transposes into D x N.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(const std::string& text, const std::string& origin = "<string>");
void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset_csv(const std::filesystem::path& path);

// Gaussian prior with an SPD covariance. The Cholesky factor is computed once
// at construction; the precision matrix is never formed densely, precision
// products go through triangular solves.
class GaussianPrior {
 public:
  GaussianPrior(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  Eigen::Index dim() const { return mean_.size(); }

  // covariance^{-1} * rhs via the stored factorization.
  Eigen::MatrixXd precision_apply(const Eigen::MatrixXd& rhs) const;

  // Lower Cholesky factor L with L L^T = covariance.
  const Eigen::MatrixXd& sqrt_factor() const { return chol_lower_; }

  static GaussianPrior identity(Eigen::Index dim, double scale = 1.0);

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::MatrixXd chol_lower_;
};

struct LikelihoodEval {
  Eigen::VectorXd y;       // per-sample class-1 probabilities, raw sigmoid values
  Eigen::VectorXd r_diag;  // y * (1 - y), the Bernoulli variances
  double loss = 0.0;       // cross-entropy with clamped probabilities
};

// Numerically stable logistic function; total on finite inputs.
double sigmoid(double z);
Eigen::VectorXd sigmoid(const Eigen::VectorXd& z);

// Probabilities are clamped to [1e-12, 1 - 1e-12] inside log terms only; raw
// sigmoid values feed r_diag and all gradients, so the dynamics are unbiased.
LikelihoodEval evaluate_likelihood(const Eigen::VectorXd& theta, const Dataset& data);

double cross_entropy(const Eigen::VectorXd& theta, const Dataset& data);

// Gradient of the cross-entropy loss: features * (y(theta) - labels).
Eigen::VectorXd grad_loss(const Eigen::VectorXd& theta, const Dataset& data);

// Hessian features * diag(r) * features^T; symmetric positive semidefinite.
Eigen::MatrixXd hessian_loss(const Eigen::VectorXd& theta, const Dataset& data);

// loss + 0.5 (theta - m)^T P^{-1} (theta - m); the log normalization constant
// of the prior is dropped.
double neg_log_posterior(const Eigen::VectorXd& theta, const Dataset& data,
                         const GaussianPrior& prior);
Eigen::VectorXd grad_neg_log_posterior(const Eigen::VectorXd& theta, const Dataset& data,
                                       const GaussianPrior& prior);

// Softmax class probabilities with max-subtraction; class_params holds one
// column per class. The stacked overload reads a K*D vector laid out class
// block by class block.
Eigen::VectorXd softmax_probs(const Eigen::MatrixXd& class_params, const Eigen::VectorXd& phi);
Eigen::VectorXd softmax_probs(const Eigen::VectorXd& stacked, int num_classes,
                              const Eigen::VectorXd& phi);

// Reduces a K-class dataset (labels 1..K) to a single stacked binary problem
// on R^{K*D}: pseudo-sample (n, k) has feature e_k (x) phi_n and label
// 1{label_n == k}. The samplers then run unchanged on the stacked vector;
// prediction recombines the per-class blocks through softmax_probs.
Dataset stack_one_vs_rest(const Dataset& multiclass);

}  // namespace ets
