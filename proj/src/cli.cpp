#include "ets/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ets/assignment.hpp"
#include "ets/ensemble.hpp"
#include "ets/errors.hpp"
#include "ets/eval.hpp"
#include "ets/io.hpp"
#include "ets/meanfield.hpp"
#include "ets/model.hpp"
#include "ets/report.hpp"
#include "ets/rng.hpp"
#include "ets/samplers.hpp"

namespace ets {

namespace {

constexpr const char* kToolVersion = "0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

struct Manifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> digest
  json config;

  json to_json() const {
    json j;
    j["tool"] = "ets";
    j["version"] = kToolVersion;
    j["subcommand"] = subcommand;
    j["argv"] = argv;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["config"] = config;
    return j;
  }
};

void write_manifest(const fs::path& out_dir, const Manifest& manifest) {
  atomic_write_file(out_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared option plumbing

struct CommonOpts {
  std::string out = ".";
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--out", opts.out, "Output directory");
  cmd->add_option("--seed", opts.seed, "Root seed; all randomness derives from it");
}

// Prior specs: identity[:scale] | file:PATH (moments JSON) | random-spd[:seed]
GaussianPrior resolve_prior(const std::string& spec, Eigen::Index dim,
                            std::uint64_t root_seed, Manifest& manifest) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "identity") {
    const double scale = arg.empty() ? 1.0 : std::stod(arg);
    if (scale <= 0.0) throw UsageError("prior identity scale must be positive");
    return GaussianPrior::identity(dim, scale);
  }
  if (kind == "file") {
    if (arg.empty()) throw UsageError("prior spec 'file:' needs a path");
    manifest.inputs[arg] = file_digest(arg);
    const GaussianMoments moments = load_moments_json(arg);
    if (moments.dim() != dim)
      throw StructuralError("prior file dimension " + std::to_string(moments.dim()) +
                            " does not match feature dimension " + std::to_string(dim));
    return GaussianPrior(moments.mean, moments.covariance);
  }
  if (kind == "random-spd") {
    const std::uint64_t seed = arg.empty() ? root_seed : std::stoull(arg);
    Rng rng(SeedStream(seed).derive("prior-spd"));
    return make_random_spd_prior(dim, rng);
  }
  throw UsageError("unknown prior spec '" + spec +
                   "' (expected identity[:scale], file:PATH, random-spd[:seed])");
}

// Feature CSV: x_0..x_{D-1} columns with an optional trailing label column.
Eigen::MatrixXd load_features_csv(const fs::path& path) {
  const CsvTable table = read_csv_file(path);
  Eigen::Index dim = static_cast<Eigen::Index>(table.header.size());
  if (!table.header.empty() && table.header.back() == "label") --dim;
  if (dim < 1) throw StructuralError(path.string() + ": no feature columns");
  for (Eigen::Index i = 0; i < dim; ++i)
    if (table.header[static_cast<std::size_t>(i)] != "x_" + std::to_string(i))
      throw StructuralError(path.string() + ": expected feature header x_" + std::to_string(i));
  if (table.values.rows() < 1) throw StructuralError(path.string() + ": no rows");
  return table.values.leftCols(dim).transpose();
}

std::vector<int> parse_j_list(const std::string& text) {
  std::vector<int> sizes;
  std::stringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    try {
      sizes.push_back(std::stoi(token));
    } catch (const std::exception&) {
      throw UsageError("bad ensemble size '" + token + "' in list");
    }
    if (sizes.back() < 2) throw UsageError("ensemble sizes must be >= 2");
  }
  if (sizes.empty()) throw UsageError("empty ensemble size list");
  return sizes;
}

std::string join_sizes(const std::vector<int>& sizes, char sep = '-') {
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(sizes[i]);
  }
  return out;
}

std::string upper_triangle_header(Eigen::Index dim) {
  std::string out;
  for (Eigen::Index r = 0; r < dim; ++r)
    for (Eigen::Index c = r; c < dim; ++c)
      out += ",P_" + std::to_string(r) + "_" + std::to_string(c);
  return out;
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeOpts {
  CommonOpts common;
  int dim = 20;
  int count = 300;
};

int cmd_synthesize(const SynthesizeOpts& opts, const std::vector<std::string>& argv) {
  if (opts.dim < 1) throw UsageError("--d must be >= 1");
  if (opts.count < 1) throw UsageError("--n must be >= 1");
  const fs::path out_dir(opts.common.out);

  Rng rng(SeedStream(opts.common.seed).derive("dataset"));
  const SyntheticProblem problem = synthesize_logistic_dataset(opts.dim, opts.count, rng);

  save_dataset_csv(out_dir / "dataset.csv", problem.data);
  std::vector<std::string> header;
  for (int i = 0; i < opts.dim; ++i) header.push_back("theta_" + std::to_string(i));
  atomic_write_file(out_dir / "theta_ref.csv",
                    to_csv(header, problem.theta_ref.transpose()));

  Manifest manifest;
  manifest.subcommand = "synthesize";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.config = {{"d", opts.dim}, {"n", opts.count}};
  write_manifest(out_dir, manifest);

  std::cout << "wrote dataset.csv (" << opts.count << " samples, " << opts.dim
            << " features) and theta_ref.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sample

struct SampleOpts {
  CommonOpts common;
  std::string data_path;
  std::string method = "second-order";
  std::string prior_spec = "identity";
  std::string init_moments_path;
  int ensemble_size = 100;
  std::optional<double> dt;  // resolved per method
  std::optional<int> steps;  // homotopy K / stochastic step count
  double eps = 1e-4;
  std::optional<int> max_steps;
  bool diag_inverse = false;
  bool spectral_stop = false;
};

int cmd_sample(const SampleOpts& opts, const std::vector<std::string>& argv) {
  if (opts.dt && *opts.dt <= 0.0) throw UsageError("--dt must be positive");
  if (opts.steps && *opts.steps < 1) throw UsageError("--steps must be >= 1");
  if (opts.ensemble_size < 2) throw UsageError("--j must be >= 2");
  const fs::path out_dir(opts.common.out);

  Manifest manifest;
  manifest.subcommand = "sample";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.inputs[opts.data_path] = file_digest(opts.data_path);
  const Dataset data = load_dataset_csv(opts.data_path);
  const GaussianPrior prior =
      resolve_prior(opts.prior_spec, data.dim(), opts.common.seed, manifest);

  // Initial law: the prior unless an explicit override is supplied.
  GaussianMoments initial_law{prior.mean(), prior.covariance()};
  if (!opts.init_moments_path.empty()) {
    manifest.inputs[opts.init_moments_path] = file_digest(opts.init_moments_path);
    initial_law = load_moments_json(opts.init_moments_path);
    if (initial_law.dim() != data.dim())
      throw StructuralError("init moments dimension " + std::to_string(initial_law.dim()) +
                            " does not match feature dimension " + std::to_string(data.dim()));
  }
  Rng init_rng(SeedStream(opts.common.seed).derive("init-ensemble"));
  const Ensemble initial = sample_prior_ensemble(initial_law, opts.ensemble_size, init_rng);

  RunReport report;
  json config;
  if (opts.method == "homotopy") {
    HomotopyConfig config_h;
    config_h.step_size = opts.dt.value_or(1e-3);
    config_h.step_count = opts.steps
                              ? *opts.steps
                              : static_cast<int>(std::llround(1.0 / config_h.step_size));
    config_h.diagonal_inverse = opts.diag_inverse;
    config_h.seed = opts.common.seed;
    config_h.validate();
    report = run_homotopy(initial, data, prior, config_h);
    config = {{"method", "homotopy"},
              {"dt", config_h.step_size},
              {"steps", config_h.step_count},
              {"diag_inverse", config_h.diagonal_inverse},
              {"j", opts.ensemble_size},
              {"prior", opts.prior_spec}};
  } else if (opts.method == "second-order") {
    SecondOrderConfig config_s;
    config_s.step_size = opts.dt.value_or(0.1);
    config_s.stop_threshold = opts.eps;
    config_s.max_steps = opts.max_steps
                             ? *opts.max_steps
                             : SecondOrderConfig::default_max_steps(config_s.step_size);
    config_s.diagonal_inverse = opts.diag_inverse;
    config_s.stop_norm = opts.spectral_stop ? StopNorm::spectral : StopNorm::frobenius;
    config_s.seed = opts.common.seed;
    config_s.validate();
    report = run_second_order(initial, data, prior, config_s);
    config = {{"method", "second-order"},
              {"dt", config_s.step_size},
              {"eps", opts.eps},
              {"max_steps", config_s.max_steps},
              {"diag_inverse", config_s.diagonal_inverse},
              {"spectral_stop", opts.spectral_stop},
              {"j", opts.ensemble_size},
              {"prior", opts.prior_spec}};
  } else if (opts.method == "stochastic") {
    const double dt = opts.dt.value_or(0.1);
    const int steps = opts.steps.value_or(200);
    report = run_stochastic_second_order(initial, data, prior, dt, steps, opts.common.seed);
    config = {{"method", "stochastic"},
              {"dt", dt},
              {"steps", steps},
              {"j", opts.ensemble_size},
              {"prior", opts.prior_spec}};
  } else {
    throw UsageError("unknown method '" + opts.method +
                     "' (expected homotopy, second-order, stochastic)");
  }

  save_ensemble_csv(out_dir / "ensemble.csv", report.final_ensemble);
  save_report_json(out_dir / "report.json", report, config.dump(), "ensemble.csv");
  manifest.config = config;
  write_manifest(out_dir, manifest);

  std::cout << "method " << opts.method << ": " << report.steps_taken << " steps, terminated by "
            << to_string(report.terminated_by) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
  CommonOpts common;
  std::string ensemble_path;
  std::string moments_path;
  std::string test_path;
  bool probit = false;
};

int cmd_predict(const PredictOpts& opts, const std::vector<std::string>& argv) {
  const fs::path out_dir(opts.common.out);
  Manifest manifest;
  manifest.subcommand = "predict";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.inputs[opts.test_path] = file_digest(opts.test_path);
  const Eigen::MatrixXd test = load_features_csv(opts.test_path);

  Eigen::VectorXd probability;
  if (opts.probit) {
    if (opts.moments_path.empty())
      throw UsageError("--probit needs --moments FILE (Laplace output)");
    manifest.inputs[opts.moments_path] = file_digest(opts.moments_path);
    const GaussianMoments moments = load_moments_json(opts.moments_path);
    if (moments.dim() != test.rows())
      throw StructuralError("moments dimension " + std::to_string(moments.dim()) +
                            " does not match test feature dimension " +
                            std::to_string(test.rows()));
    probability = predictive_probability(moments, test);
  } else {
    if (opts.ensemble_path.empty()) throw UsageError("predict needs --ensemble FILE");
    manifest.inputs[opts.ensemble_path] = file_digest(opts.ensemble_path);
    const Ensemble ensemble = load_ensemble_csv(opts.ensemble_path);
    if (ensemble.dim() != test.rows())
      throw StructuralError("ensemble dimension " + std::to_string(ensemble.dim()) +
                            " does not match test feature dimension " +
                            std::to_string(test.rows()));
    probability = predictive_probability(ensemble, test);
  }

  Eigen::MatrixXd rows(probability.size(), 2);
  rows.col(0) = probability;
  rows.col(1) = probability.cwiseMax(Eigen::VectorXd::Ones(probability.size()) - probability);
  atomic_write_file(out_dir / "predictions.csv", to_csv({"probability", "confidence"}, rows));
  manifest.config = {{"probit", opts.probit}};
  write_manifest(out_dir, manifest);
  std::cout << "wrote predictions.csv (" << probability.size() << " rows)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// laplace

struct LaplaceOpts {
  CommonOpts common;
  std::string data_path;
  std::string prior_spec = "identity";
  double tol = 1e-10;
  int max_iter = 100;
};

int cmd_laplace(const LaplaceOpts& opts, const std::vector<std::string>& argv) {
  const fs::path out_dir(opts.common.out);
  Manifest manifest;
  manifest.subcommand = "laplace";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.inputs[opts.data_path] = file_digest(opts.data_path);
  const Dataset data = load_dataset_csv(opts.data_path);
  const GaussianPrior prior =
      resolve_prior(opts.prior_spec, data.dim(), opts.common.seed, manifest);

  const GaussianMoments fit = laplace_fit(data, prior, opts.tol, opts.max_iter);
  save_moments_json(out_dir / "moments.json", fit);
  manifest.config = {{"tol", opts.tol}, {"max_iter", opts.max_iter}, {"prior", opts.prior_spec}};
  write_manifest(out_dir, manifest);

  const double grad_norm = grad_neg_log_posterior(fit.mean, data, prior).norm();
  std::cout << "laplace fit: gradient norm " << grad_norm << ", wrote moments.json\n";
  return 0;
}

// ---------------------------------------------------------------------------
// meanfield

struct MeanfieldOpts {
  CommonOpts common;
  std::string data_path;
  std::string prior_spec = "identity";
  std::string variant = "second-order";
  double dt = 0.01;
  double total_time = 1.0;
};

int cmd_meanfield(const MeanfieldOpts& opts, const std::vector<std::string>& argv) {
  if (opts.dt <= 0.0) throw UsageError("--dt must be positive");
  if (opts.total_time <= 0.0) throw UsageError("--T must be positive");
  const fs::path out_dir(opts.common.out);
  Manifest manifest;
  manifest.subcommand = "meanfield";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.inputs[opts.data_path] = file_digest(opts.data_path);
  const Dataset data = load_dataset_csv(opts.data_path);
  const GaussianPrior prior =
      resolve_prior(opts.prior_spec, data.dim(), opts.common.seed, manifest);

  MomentVariant variant;
  if (opts.variant == "homotopy") {
    variant = MomentVariant::homotopy;
  } else if (opts.variant == "second-order") {
    variant = MomentVariant::second_order;
  } else {
    throw UsageError("unknown variant '" + opts.variant + "'");
  }
  const GaussianMoments initial{prior.mean(), prior.covariance()};
  const MomentTrajectory trajectory =
      integrate_moments(initial, data, prior, opts.dt, opts.total_time, variant);

  const Eigen::Index dim = data.dim();
  std::string csv = "s";
  for (Eigen::Index i = 0; i < dim; ++i) csv += ",m_" + std::to_string(i);
  csv += upper_triangle_header(dim);
  csv += ",res_m,res_P\n";
  for (std::size_t k = 0; k < trajectory.points.size(); ++k) {
    const auto& point = trajectory.points[k];
    const EquilibriumResidual res = equilibrium_residual(point, data, prior);
    csv += format_double(trajectory.times[k]);
    for (Eigen::Index i = 0; i < dim; ++i) csv += "," + format_double(point.mean[i]);
    for (Eigen::Index r = 0; r < dim; ++r)
      for (Eigen::Index c = r; c < dim; ++c) csv += "," + format_double(point.covariance(r, c));
    csv += "," + format_double(res.mean_res) + "," + format_double(res.cov_res) + "\n";
  }
  atomic_write_file(out_dir / "trajectory.csv", csv);
  manifest.config = {{"variant", opts.variant},
                     {"dt", opts.dt},
                     {"T", opts.total_time},
                     {"prior", opts.prior_spec}};
  write_manifest(out_dir, manifest);

  const EquilibriumResidual final_res =
      equilibrium_residual(trajectory.final_point(), data, prior);
  std::cout << "integrated to s = " << opts.total_time << "; final residuals res_m = "
            << final_res.mean_res << ", res_P = " << final_res.cov_res << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// experiment recipes

struct ExperimentOpts {
  CommonOpts common;
  std::string recipe;
  std::string method = "second-order";
  std::string j_list;
  std::string prior_kind = "identity";
  std::string dataset_path;
  int repeats = -1;
  bool full = false;
  double total_time = 10.0;
  std::string metric = "moments";
  int dim = -1;
  int count = -1;
  int bins = 20;
  int grid = 80;
  int classes = 3;
  int per_class = 30;
  int ensemble_size = 200;
};

int recipe_recovery(const ExperimentOpts& opts, const std::vector<std::string>& argv) {
  const fs::path out_dir(opts.common.out);
  const Method method = method_from_string(opts.method);
  const std::vector<int> sizes = parse_j_list(opts.j_list.empty() ? "10,20,50,100" : opts.j_list);
  const int repeats = opts.repeats > 0 ? opts.repeats : (opts.full ? 100 : 20);
  PriorKind prior_kind;
  if (opts.prior_kind == "identity") {
    prior_kind = PriorKind::identity;
  } else if (opts.prior_kind == "random-spd") {
    prior_kind = PriorKind::random_spd;
  } else {
    throw UsageError("unknown prior kind '" + opts.prior_kind + "'");
  }
  RecoveryProtocol protocol;
  if (opts.dim > 0) protocol.dim = opts.dim;
  if (opts.count > 0) protocol.count = opts.count;

  std::printf("%-14s", "method / J");
  for (int j : sizes) std::printf("  %12d", j);
  std::printf("\n%-14s", opts.method.c_str());
  json results = json::array();
  for (int j : sizes) {
    const RecoveryResult result =
        recovery_experiment(method, j, repeats, prior_kind, opts.common.seed, protocol);
    std::printf("  %6.3f+-%.3f", result.mean_error(), result.std_of_mean());
    std::fflush(stdout);

    const std::string stem = "recovery_" + opts.method + "_J" + std::to_string(j) + "_seed" +
                             std::to_string(opts.common.seed);
    Eigen::MatrixXd raw(result.errors.size(), 2);
    for (std::size_t r = 0; r < result.errors.size(); ++r) {
      raw(static_cast<Eigen::Index>(r), 0) = static_cast<double>(r);
      raw(static_cast<Eigen::Index>(r), 1) = result.errors[r];
    }
    atomic_write_file(out_dir / (stem + ".csv"), to_csv({"repeat", "l2_error"}, raw));
    results.push_back({{"method", opts.method},
                       {"J", j},
                       {"repeats", repeats},
                       {"failed_repeats", result.failed_repeats},
                       {"mean_error", result.mean_error()},
                       {"std_of_mean", result.std_of_mean()}});
    atomic_write_file(out_dir / (stem + ".json"), results.back().dump(2) + "\n");
  }
  std::printf("\n");

  Manifest manifest;
  manifest.subcommand = "experiment recovery";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.config = {{"method", opts.method},
                     {"j_list", sizes},
                     {"repeats", repeats},
                     {"prior_kind", opts.prior_kind}};
  write_manifest(out_dir, manifest);
  return 0;
}

int recipe_rate(const ExperimentOpts& opts, const std::vector<std::string>& argv) {
  const fs::path out_dir(opts.common.out);
  const std::vector<int> sizes =
      parse_j_list(opts.j_list.empty() ? "50,100,200,400,800" : opts.j_list);
  const int repeats = opts.repeats > 0 ? opts.repeats : 20;
  RateStudyOptions options;
  if (opts.dim > 0) options.dim = opts.dim;
  if (opts.count > 0) options.count = opts.count;
  if (opts.metric == "moments") {
    options.metric = RateMetric::moments;
  } else if (opts.metric == "wasserstein") {
    options.metric = RateMetric::wasserstein;
  } else {
    throw UsageError("unknown metric '" + opts.metric + "' (moments or wasserstein)");
  }

  const RateFit fit =
      meanfield_rate_study(sizes, opts.total_time, repeats, opts.common.seed, options);

  const std::string stem = "rate_" + opts.metric + "_J" + join_sizes(sizes) + "_seed" +
                           std::to_string(opts.common.seed);
  Eigen::MatrixXd raw(sizes.size(), 2);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    raw(static_cast<Eigen::Index>(i), 0) = sizes[i];
    raw(static_cast<Eigen::Index>(i), 1) = fit.errors[i];
  }
  atomic_write_file(out_dir / (stem + ".csv"), to_csv({"J", "error"}, raw));
  json j = {{"metric", opts.metric},       {"J", sizes},
            {"errors", fit.errors},        {"slope", fit.slope},
            {"intercept", fit.intercept},  {"slope_half_width", fit.slope_half_width},
            {"repeats", repeats},          {"T", opts.total_time}};
  atomic_write_file(out_dir / (stem + ".json"), j.dump(2) + "\n");

  Manifest manifest;
  manifest.subcommand = "experiment rate";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.config = j;
  write_manifest(out_dir, manifest);

  std::printf("rate fit (%s): slope %.4f +- %.4f (mean-field rate is -0.5)\n",
              opts.metric.c_str(), fit.slope, fit.slope_half_width);
  return 0;
}

int recipe_ood(const ExperimentOpts& opts, const std::vector<std::string>& argv) {
  const fs::path out_dir(opts.common.out);
  Manifest manifest;
  manifest.subcommand = "experiment ood";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;

  const SeedStream streams(opts.common.seed);
  Dataset data;
  if (!opts.dataset_path.empty()) {
    manifest.inputs[opts.dataset_path] = file_digest(opts.dataset_path);
    data = load_dataset_csv(opts.dataset_path);
    if (data.dim() != 2) throw StructuralError("ood recipe needs 2-D features");
  } else {
    Rng rng(streams.derive("dataset"));
    data = synthesize_two_clusters(40, 4.0, rng).data;
  }
  const GaussianPrior prior = GaussianPrior::identity(2, 2.0);

  Rng init(streams.derive("init-ensemble"));
  const Ensemble initial = sample_prior_ensemble(prior, opts.ensemble_size, init);
  SecondOrderConfig config;
  config.seed = opts.common.seed;
  const RunReport report = run_second_order(initial, data, prior, config);

  const Eigen::MatrixXd grid = make_box_grid(data.features, 3.0, opts.grid);
  const OodCurve posterior = ood_confidence_curve(report.final_ensemble, data.features, grid,
                                                  opts.bins);
  // Point-estimate comparison: confidence of the MAP parameter alone.
  const GaussianMoments map_fit = laplace_fit(data, prior);
  Ensemble map_point;
  map_point.particles = map_fit.mean;
  const OodCurve map_curve =
      ood_confidence_curve(map_point, data.features, grid, opts.bins);

  Eigen::MatrixXd rows(opts.bins, 6);
  for (int b = 0; b < opts.bins; ++b) {
    rows(b, 0) = posterior.centers[b];
    rows(b, 1) = posterior.mean_confidence[b];
    rows(b, 2) = posterior.std_confidence[b];
    rows(b, 3) = posterior.counts[b];
    rows(b, 4) = map_curve.mean_confidence[b];
    rows(b, 5) = map_curve.std_confidence[b];
  }
  const std::string stem =
      "ood_second-order_J" + std::to_string(opts.ensemble_size) + "_seed" +
      std::to_string(opts.common.seed);
  atomic_write_file(out_dir / (stem + ".csv"),
                    to_csv({"delta", "mean_confidence", "std_confidence", "count",
                            "map_mean_confidence", "map_std_confidence"},
                           rows));
  manifest.config = {{"j", opts.ensemble_size}, {"bins", opts.bins}, {"grid", opts.grid}};
  write_manifest(out_dir, manifest);

  int first = 0;
  while (first < opts.bins && posterior.counts[first] == 0) ++first;
  int last = opts.bins - 1;
  while (last >= 0 && posterior.counts[last] == 0) --last;
  std::printf("ood curve: near confidence %.4f, far confidence %.4f (map far %.4f)\n",
              posterior.mean_confidence[first], posterior.mean_confidence[last],
              map_curve.mean_confidence[last]);
  return 0;
}

int recipe_sweep(const ExperimentOpts& opts, const std::vector<std::string>& argv) {
  const fs::path out_dir(opts.common.out);
  const Method method = method_from_string(opts.method);
  const std::vector<int> sizes =
      parse_j_list(opts.j_list.empty() ? "30,50,100,200,300" : opts.j_list);
  RecoveryProtocol protocol;
  protocol.dim = opts.dim > 0 ? opts.dim : 10;
  protocol.count = opts.count > 0 ? opts.count : 150;

  const SeedStream streams(opts.common.seed);
  Rng data_rng(streams.derive("dataset"));
  const SyntheticProblem problem =
      synthesize_logistic_dataset(protocol.dim, protocol.count, data_rng);
  const GaussianPrior prior = GaussianPrior::identity(protocol.dim);
  const auto entries =
      ensemble_size_sweep(sizes, method, problem, prior, opts.common.seed, protocol);

  Eigen::MatrixXd rows(entries.size(), 3);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    rows(static_cast<Eigen::Index>(i), 0) = entries[i].ensemble_size;
    rows(static_cast<Eigen::Index>(i), 1) = entries[i].low_rank ? 1.0 : 0.0;
    rows(static_cast<Eigen::Index>(i), 2) = entries[i].recovery_error;
    save_ensemble_csv(out_dir / ("sweep_" + opts.method + "_J" +
                                 std::to_string(entries[i].ensemble_size) + "_seed" +
                                 std::to_string(opts.common.seed) + ".csv"),
                      entries[i].final_ensemble);
  }
  const std::string stem = "sweep_" + opts.method + "_J" + join_sizes(sizes) + "_seed" +
                           std::to_string(opts.common.seed);
  atomic_write_file(out_dir / (stem + ".csv"),
                    to_csv({"J", "low_rank", "recovery_error"}, rows));

  Manifest manifest;
  manifest.subcommand = "experiment sweep";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.config = {{"method", opts.method}, {"j_list", sizes}, {"d", protocol.dim},
                     {"n", protocol.count}};
  write_manifest(out_dir, manifest);

  std::printf("sweep (%s):", opts.method.c_str());
  for (const auto& entry : entries)
    std::printf(" J=%d err=%.3f%s", entry.ensemble_size, entry.recovery_error,
                entry.low_rank ? " (low-rank)" : "");
  std::printf("\n");
  return 0;
}

int recipe_multiclass_demo(const ExperimentOpts& opts, const std::vector<std::string>& argv) {
  const fs::path out_dir(opts.common.out);
  const SeedStream streams(opts.common.seed);
  Rng data_rng(streams.derive("dataset"));
  const MulticlassProblem problem =
      synthesize_blobs(opts.classes, opts.per_class, 4.0, data_rng);

  // One stacked binary problem in R^{K*D}; block-diagonal prior copies.
  const Dataset stacked = stack_one_vs_rest(problem.data);
  const GaussianPrior prior = GaussianPrior::identity(stacked.dim(), 2.0);
  Rng init(streams.derive("init-ensemble"));
  const Ensemble initial = sample_prior_ensemble(prior, opts.ensemble_size, init);
  SecondOrderConfig config;
  config.seed = opts.common.seed;
  const RunReport report = run_second_order(initial, stacked, prior, config);

  // Training accuracy of the averaged softmax predictive.
  const Eigen::MatrixXd train_probs =
      multiclass_predictive(report.final_ensemble, opts.classes, problem.data.features);
  int correct = 0;
  for (Eigen::Index n = 0; n < problem.data.count(); ++n) {
    Eigen::Index arg_max = 0;
    train_probs.col(n).maxCoeff(&arg_max);
    if (arg_max + 1 == static_cast<Eigen::Index>(problem.data.labels[n])) ++correct;
  }
  const double accuracy = static_cast<double>(correct) / problem.data.count();

  const Eigen::MatrixXd grid = make_box_grid(problem.data.features, 3.0, opts.grid);
  const Eigen::MatrixXd grid_probs =
      multiclass_predictive(report.final_ensemble, opts.classes, grid);
  Eigen::MatrixXd rows(grid.cols(), 3);
  for (Eigen::Index i = 0; i < grid.cols(); ++i) {
    rows(i, 0) = grid(0, i);
    rows(i, 1) = grid(1, i);
    rows(i, 2) = grid_probs.col(i).maxCoeff();
  }
  const std::string stem = "multiclass-demo_second-order_J" +
                           std::to_string(opts.ensemble_size) + "_seed" +
                           std::to_string(opts.common.seed);
  atomic_write_file(out_dir / (stem + ".csv"), to_csv({"x_0", "x_1", "confidence"}, rows));

  const OodCurve curve = ood_curve_from_confidence(rows.col(2), problem.data.features, grid,
                                                   opts.bins);
  int last = opts.bins - 1;
  while (last >= 0 && curve.counts[last] == 0) --last;

  Manifest manifest;
  manifest.subcommand = "experiment multiclass-demo";
  manifest.argv = argv;
  manifest.seed = opts.common.seed;
  manifest.config = {{"classes", opts.classes},
                     {"per_class", opts.per_class},
                     {"j", opts.ensemble_size},
                     {"accuracy", accuracy}};
  write_manifest(out_dir, manifest);

  std::printf("multiclass demo: train accuracy %.4f, far-bin confidence %.4f (1/K = %.4f)\n",
              accuracy, curve.mean_confidence[last], 1.0 / opts.classes);
  return 0;
}

int cmd_experiment(const ExperimentOpts& opts, const std::vector<std::string>& argv) {
  if (opts.recipe == "recovery") return recipe_recovery(opts, argv);
  if (opts.recipe == "rate") return recipe_rate(opts, argv);
  if (opts.recipe == "ood") return recipe_ood(opts, argv);
  if (opts.recipe == "sweep") return recipe_sweep(opts, argv);
  if (opts.recipe == "multiclass-demo") return recipe_multiclass_demo(opts, argv);
  throw UsageError("unknown recipe '" + opts.recipe +
                   "'; available: recovery, rate, ood, sweep, multiclass-demo");
}

// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args);

int replay_manifest(const std::string& path) {
  json manifest;
  try {
    manifest = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw StructuralError(std::string("manifest parse error: ") + e.what());
  }
  if (!manifest.contains("argv"))
    throw StructuralError("manifest has no argv to replay");
  const auto argv = manifest["argv"].get<std::vector<std::string>>();
  for (const auto& arg : argv)
    if (arg == "--manifest") throw StructuralError("manifest replay cannot nest");
  std::cout << "replaying: ets";
  for (const auto& arg : argv) std::cout << ' ' << arg;
  std::cout << "\n";
  return dispatch(argv);
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"ensemble transform samplers for Bayesian logistic regression"};
  app.require_subcommand(0, 1);

  std::string manifest_path;
  app.add_option("--manifest", manifest_path,
                 "Replay a previously written manifest.json and exit");

  SynthesizeOpts synth;
  auto* synth_cmd = app.add_subcommand("synthesize", "Generate a known-parameter dataset");
  add_common(synth_cmd, synth.common);
  synth_cmd->add_option("--d", synth.dim, "Parameter dimension");
  synth_cmd->add_option("--n", synth.count, "Sample count");

  SampleOpts sample;
  auto* sample_cmd = app.add_subcommand("sample", "Run a sampler on a dataset");
  add_common(sample_cmd, sample.common);
  sample_cmd->add_option("--data", sample.data_path, "Dataset CSV")->required();
  sample_cmd->add_option("--method", sample.method, "homotopy | second-order | stochastic");
  sample_cmd->add_option("--j", sample.ensemble_size, "Ensemble size");
  sample_cmd->add_option("--dt", sample.dt, "Step size");
  sample_cmd->add_option("--steps", sample.steps, "Step count (homotopy / stochastic)");
  sample_cmd->add_option("--eps", sample.eps, "Stop threshold (second-order)");
  sample_cmd->add_option("--max-steps", sample.max_steps, "Step cap (second-order)");
  sample_cmd->add_option("--prior", sample.prior_spec,
                         "identity[:scale] | file:PATH | random-spd[:seed]");
  sample_cmd->add_option("--init-moments", sample.init_moments_path,
                         "Moments JSON overriding the initial Gaussian");
  sample_cmd->add_flag("--diag-inverse", sample.diag_inverse,
                       "Invert only diagonals in the tamed solves");
  sample_cmd->add_flag("--spectral-stop", sample.spectral_stop,
                       "Use the spectral norm in the stop rule");

  PredictOpts predict;
  auto* predict_cmd = app.add_subcommand("predict", "Predictive probabilities for test points");
  add_common(predict_cmd, predict.common);
  predict_cmd->add_option("--ensemble", predict.ensemble_path, "Posterior ensemble CSV");
  predict_cmd->add_option("--moments", predict.moments_path, "Gaussian moments JSON");
  predict_cmd->add_option("--test", predict.test_path, "Test features CSV")->required();
  predict_cmd->add_flag("--probit", predict.probit, "Probit predictive from moments");

  LaplaceOpts laplace;
  auto* laplace_cmd = app.add_subcommand("laplace", "Laplace (MAP + inverse Hessian) fit");
  add_common(laplace_cmd, laplace.common);
  laplace_cmd->add_option("--data", laplace.data_path, "Dataset CSV")->required();
  laplace_cmd->add_option("--prior", laplace.prior_spec, "Prior spec");
  laplace_cmd->add_option("--tol", laplace.tol, "Gradient norm tolerance");
  laplace_cmd->add_option("--max-iter", laplace.max_iter, "Newton iteration cap");

  MeanfieldOpts meanfield;
  auto* meanfield_cmd =
      app.add_subcommand("meanfield", "Integrate the Gaussian moment flow");
  add_common(meanfield_cmd, meanfield.common);
  meanfield_cmd->add_option("--data", meanfield.data_path, "Dataset CSV")->required();
  meanfield_cmd->add_option("--prior", meanfield.prior_spec, "Prior spec");
  meanfield_cmd->add_option("--variant", meanfield.variant, "homotopy | second-order");
  meanfield_cmd->add_option("--dt", meanfield.dt, "Integrator step");
  meanfield_cmd->add_option("--T", meanfield.total_time, "Final time");

  ExperimentOpts experiment;
  auto* experiment_cmd = app.add_subcommand("experiment", "Run an experiment recipe");
  add_common(experiment_cmd, experiment.common);
  experiment_cmd
      ->add_option("recipe", experiment.recipe,
                   "recovery | rate | ood | sweep | multiclass-demo")
      ->required();
  experiment_cmd->add_option("--method", experiment.method, "homotopy | second-order");
  experiment_cmd->add_option("--j-list", experiment.j_list, "Comma-separated ensemble sizes");
  experiment_cmd->add_option("--j", experiment.ensemble_size, "Single ensemble size");
  experiment_cmd->add_option("--repeats", experiment.repeats, "Number of repeats");
  experiment_cmd->add_flag("--full", experiment.full, "Paper-scale 100 repeats");
  experiment_cmd->add_option("--prior-kind", experiment.prior_kind, "identity | random-spd");
  experiment_cmd->add_option("--dataset", experiment.dataset_path, "Dataset CSV (ood)");
  experiment_cmd->add_option("--T", experiment.total_time, "Horizon for the rate study");
  experiment_cmd->add_option("--metric", experiment.metric, "moments | wasserstein");
  experiment_cmd->add_option("--d", experiment.dim, "Parameter dimension override");
  experiment_cmd->add_option("--n", experiment.count, "Sample count override");
  experiment_cmd->add_option("--bins", experiment.bins, "Distance bins (ood)");
  experiment_cmd->add_option("--grid", experiment.grid, "Grid points per axis (ood)");
  experiment_cmd->add_option("--classes", experiment.classes, "Class count (multiclass-demo)");
  experiment_cmd->add_option("--per-class", experiment.per_class,
                             "Samples per class (multiclass-demo)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  if (!manifest_path.empty()) return replay_manifest(manifest_path);

  if (app.got_subcommand(synth_cmd)) return cmd_synthesize(synth, args);
  if (app.got_subcommand(sample_cmd)) return cmd_sample(sample, args);
  if (app.got_subcommand(predict_cmd)) return cmd_predict(predict, args);
  if (app.got_subcommand(laplace_cmd)) return cmd_laplace(laplace, args);
  if (app.got_subcommand(meanfield_cmd)) return cmd_meanfield(meanfield, args);
  if (app.got_subcommand(experiment_cmd)) return cmd_experiment(experiment, args);
  std::cout << app.help();
  return 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const StructuralError& e) {
    std::cerr << "structural error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ets
