#include "ets/model.hpp"

#include <cmath>

#include "ets/errors.hpp"
#include "ets/io.hpp"

namespace ets {

namespace {
constexpr double kProbClamp = 1e-12;

double clamped_log(double p) {
  if (p < kProbClamp) p = kProbClamp;
  if (p > 1.0 - kProbClamp) p = 1.0 - kProbClamp;
  return std::log(p);
}
}  // namespace

void Dataset::validate() const {
  if (count() < 1) throw StructuralError("dataset needs N >= 1 samples");
  if (dim() < 1) throw StructuralError("dataset needs D >= 1 features");
  if (labels.size() != count())
    throw StructuralError("dataset has " + std::to_string(count()) + " samples but " +
                          std::to_string(labels.size()) + " labels");
  if (!features.allFinite()) throw NumericError("dataset features contain non-finite values");
  if (num_classes < 2) throw StructuralError("num_classes must be >= 2");
  for (Eigen::Index n = 0; n < labels.size(); ++n) {
    const double label = labels[n];
    if (num_classes == 2) {
      if (label != 0.0 && label != 1.0)
        throw StructuralError("binary label at sample " + std::to_string(n) +
                              " is " + std::to_string(label) + ", expected 0 or 1");
    } else {
      if (label != std::floor(label) || label < 1.0 || label > num_classes)
        throw StructuralError("multiclass label at sample " + std::to_string(n) +
                              " is " + std::to_string(label) + ", expected 1.." +
                              std::to_string(num_classes));
    }
  }
}

std::string dataset_to_csv(const Dataset& data) {
  std::vector<std::string> header;
  for (Eigen::Index i = 0; i < data.dim(); ++i) header.push_back("x_" + std::to_string(i));
  header.push_back("label");
  Eigen::MatrixXd rows(data.count(), data.dim() + 1);
  rows.leftCols(data.dim()) = data.features.transpose();
  rows.col(data.dim()) = data.labels;
  return to_csv(header, rows);
}

Dataset dataset_from_csv(const std::string& text, const std::string& origin) {
  const CsvTable table = parse_csv(text, origin);
  if (table.header.size() < 2 || table.header.back() != "label")
    throw StructuralError(origin + ": dataset CSV must end with a 'label' column");
  const Eigen::Index dim = static_cast<Eigen::Index>(table.header.size()) - 1;
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (table.header[static_cast<std::size_t>(i)] != "x_" + std::to_string(i))
      throw StructuralError(origin + ": expected feature header x_" + std::to_string(i));
  }
  Dataset data;
  data.features = table.values.leftCols(dim).transpose();
  data.labels = table.values.col(dim);
  double max_label = 0.0;
  for (Eigen::Index n = 0; n < data.labels.size(); ++n)
    max_label = std::max(max_label, data.labels[n]);
  data.num_classes = max_label > 1.0 ? static_cast<int>(max_label) : 2;
  data.validate();
  return data;
}

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  atomic_write_file(path, dataset_to_csv(data));
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  return dataset_from_csv(read_file(path), path.string());
}

GaussianPrior::GaussianPrior(Eigen::VectorXd mean, Eigen::MatrixXd covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  if (covariance_.rows() != covariance_.cols() || covariance_.rows() != mean_.size())
    throw StructuralError("prior covariance must be square and match the mean dimension");
  if (!mean_.allFinite() || !covariance_.allFinite())
    throw NumericError("prior moments contain non-finite values");
  const double asym = (covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff();
  const double scale = covariance_.cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(1.0, scale))
    throw StructuralError("prior covariance is not symmetric");
  chol_.compute(covariance_);
  if (chol_.info() != Eigen::Success)
    throw StructuralError("prior covariance is not positive definite (Cholesky failed)");
  chol_lower_ = chol_.matrixL();
}

Eigen::MatrixXd GaussianPrior::precision_apply(const Eigen::MatrixXd& rhs) const {
  return chol_.solve(rhs);
}

GaussianPrior GaussianPrior::identity(Eigen::Index dim, double scale) {
  if (scale <= 0.0) throw StructuralError("identity prior scale must be positive");
  return GaussianPrior(Eigen::VectorXd::Zero(dim),
                       scale * Eigen::MatrixXd::Identity(dim, dim));
}

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& z) {
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

LikelihoodEval evaluate_likelihood(const Eigen::VectorXd& theta, const Dataset& data) {
  data.validate();
  if (!data.is_binary())
    throw StructuralError("likelihood evaluation expects binary labels");
  if (theta.size() != data.dim())
    throw StructuralError("theta has dimension " + std::to_string(theta.size()) +
                          ", dataset expects " + std::to_string(data.dim()));
  LikelihoodEval eval;
  eval.y = sigmoid(data.features.transpose() * theta);
  eval.r_diag = eval.y.array() * (1.0 - eval.y.array());
  eval.loss = 0.0;
  for (Eigen::Index n = 0; n < data.count(); ++n) {
    const double d = data.labels[n];
    eval.loss -= d * clamped_log(eval.y[n]) + (1.0 - d) * clamped_log(1.0 - eval.y[n]);
  }
  return eval;
}

double cross_entropy(const Eigen::VectorXd& theta, const Dataset& data) {
  return evaluate_likelihood(theta, data).loss;
}

Eigen::VectorXd grad_loss(const Eigen::VectorXd& theta, const Dataset& data) {
  const LikelihoodEval eval = evaluate_likelihood(theta, data);
  return data.features * (eval.y - data.labels);
}

Eigen::MatrixXd hessian_loss(const Eigen::VectorXd& theta, const Dataset& data) {
  const LikelihoodEval eval = evaluate_likelihood(theta, data);
  const Eigen::MatrixXd weighted =
      data.features * eval.r_diag.cwiseSqrt().asDiagonal();
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(data.dim(), data.dim());
  hess.selfadjointView<Eigen::Lower>().rankUpdate(weighted, 1.0);
  return hess.selfadjointView<Eigen::Lower>();
}

double neg_log_posterior(const Eigen::VectorXd& theta, const Dataset& data,
                         const GaussianPrior& prior) {
  if (prior.dim() != data.dim())
    throw StructuralError("prior dimension " + std::to_string(prior.dim()) +
                          " does not match dataset dimension " + std::to_string(data.dim()));
  const Eigen::VectorXd centered = theta - prior.mean();
  const Eigen::VectorXd solved = prior.precision_apply(centered);
  return cross_entropy(theta, data) + 0.5 * centered.dot(solved);
}

Eigen::VectorXd grad_neg_log_posterior(const Eigen::VectorXd& theta, const Dataset& data,
                                       const GaussianPrior& prior) {
  return grad_loss(theta, data) + prior.precision_apply(theta - prior.mean());
}

Eigen::VectorXd softmax_probs(const Eigen::MatrixXd& class_params, const Eigen::VectorXd& phi) {
  if (class_params.cols() < 2) throw StructuralError("softmax needs K >= 2 classes");
  if (class_params.rows() != phi.size())
    throw StructuralError("softmax: class parameter dimension does not match feature dimension");
  Eigen::VectorXd logits = class_params.transpose() * phi;
  const double max_logit = logits.maxCoeff();
  Eigen::VectorXd probs = (logits.array() - max_logit).exp();
  return probs / probs.sum();
}

Eigen::VectorXd softmax_probs(const Eigen::VectorXd& stacked, int num_classes,
                              const Eigen::VectorXd& phi) {
  if (num_classes < 2) throw StructuralError("softmax needs K >= 2 classes");
  if (stacked.size() != num_classes * phi.size())
    throw StructuralError("stacked parameter size must be K * D");
  Eigen::MatrixXd class_params(phi.size(), num_classes);
  for (int k = 0; k < num_classes; ++k)
    class_params.col(k) = stacked.segment(k * phi.size(), phi.size());
  return softmax_probs(class_params, phi);
}

Dataset stack_one_vs_rest(const Dataset& multiclass) {
  multiclass.validate();
  if (multiclass.is_binary())
    throw StructuralError("stack_one_vs_rest expects a multiclass dataset");
  const int classes = multiclass.num_classes;
  const Eigen::Index dim = multiclass.dim();
  const Eigen::Index count = multiclass.count();

  Dataset stacked;
  stacked.num_classes = 2;
  stacked.features = Eigen::MatrixXd::Zero(classes * dim, classes * count);
  stacked.labels.resize(classes * count);
  for (int k = 0; k < classes; ++k) {
    for (Eigen::Index n = 0; n < count; ++n) {
      const Eigen::Index col = static_cast<Eigen::Index>(k) * count + n;
      stacked.features.block(k * dim, col, dim, 1) = multiclass.features.col(n);
      stacked.labels[col] = (multiclass.labels[n] == k + 1) ? 1.0 : 0.0;
    }
  }
  return stacked;
}

}  // namespace ets
