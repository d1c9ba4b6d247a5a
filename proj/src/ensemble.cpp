#include "ets/ensemble.hpp"

#include "ets/errors.hpp"
#include "ets/io.hpp"

namespace ets {

Ensemble Ensemble::from_particles(const std::vector<Eigen::VectorXd>& columns) {
  if (columns.empty()) throw StructuralError("ensemble needs at least one particle");
  const Eigen::Index dim = columns.front().size();
  Ensemble ensemble;
  ensemble.particles.resize(dim, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].size() != dim)
      throw StructuralError("particle " + std::to_string(j) + " has dimension " +
                            std::to_string(columns[j].size()) + ", expected " +
                            std::to_string(dim));
    ensemble.particles.col(static_cast<Eigen::Index>(j)) = columns[j];
  }
  return ensemble;
}

void Ensemble::validate() const {
  if (dim() < 1 || size() < 1)
    throw StructuralError("ensemble must have D >= 1 and J >= 1");
  if (!particles.allFinite())
    throw NumericError("ensemble contains non-finite particle entries");
}

EnsembleStats compute_stats(const Ensemble& ensemble) {
  ensemble.validate();
  if (ensemble.size() < 2)
    throw StructuralError("empirical covariance needs J >= 2 particles");
  const double count = static_cast<double>(ensemble.size());

  EnsembleStats stats;
  stats.mean = ensemble.particles.rowwise().mean();
  stats.deviations = ensemble.particles.colwise() - stats.mean;
  // Rank update keeps the covariance symmetric to the last bit.
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(ensemble.dim(), ensemble.dim());
  cov.selfadjointView<Eigen::Lower>().rankUpdate(stats.deviations, 1.0 / count);
  stats.covariance = cov.selfadjointView<Eigen::Lower>();
  return stats;
}

Eigen::VectorXd empirical_expectation(
    const Ensemble& ensemble,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f) {
  ensemble.validate();
  Eigen::VectorXd acc;
  for (Eigen::Index j = 0; j < ensemble.size(); ++j) {
    Eigen::VectorXd value = f(ensemble.particles.col(j));
    if (!value.allFinite())
      throw NumericError("empirical expectation: f(particle " + std::to_string(j) +
                         ") is non-finite");
    if (j == 0) {
      acc = value;
    } else {
      if (value.size() != acc.size())
        throw StructuralError("empirical expectation: f returned inconsistent sizes");
      acc += value;
    }
  }
  return acc / static_cast<double>(ensemble.size());
}

std::string ensemble_to_csv(const Ensemble& ensemble) {
  std::vector<std::string> header;
  header.reserve(static_cast<std::size_t>(ensemble.dim()));
  for (Eigen::Index i = 0; i < ensemble.dim(); ++i)
    header.push_back("theta_" + std::to_string(i));
  return to_csv(header, ensemble.particles.transpose());
}

Ensemble ensemble_from_csv(const std::string& text, const std::string& origin) {
  const CsvTable table = parse_csv(text, origin);
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (table.header[i] != "theta_" + std::to_string(i))
      throw StructuralError(origin + ": expected ensemble header theta_0..theta_" +
                            std::to_string(table.header.size() - 1) + ", got '" +
                            table.header[i] + "' at column " + std::to_string(i));
  }
  if (table.values.rows() < 1)
    throw StructuralError(origin + ": ensemble CSV has no particles");
  Ensemble ensemble;
  ensemble.particles = table.values.transpose();
  ensemble.validate();
  return ensemble;
}

void save_ensemble_csv(const std::filesystem::path& path, const Ensemble& ensemble) {
  atomic_write_file(path, ensemble_to_csv(ensemble));
}

Ensemble load_ensemble_csv(const std::filesystem::path& path) {
  return ensemble_from_csv(read_file(path), path.string());
}

}  // namespace ets
