#include "dlmgp/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dlmgp/errors.hpp"

namespace dlmgp {

namespace fs = std::filesystem;

std::uint64_t ExperimentConfig::repetition_seed(int r) const {
  if (!split_seeds.empty()) return split_seeds.at(static_cast<std::size_t>(r));
  return seed + static_cast<std::uint64_t>(r);
}

std::string ExperimentConfig::series_label() const {
  if (!label.empty()) return label;
  std::string out = to_string(objective.kind);
  if (objective.kind != ObjectiveKind::kDlmSquare) {
    out += "/" + to_string(estimator.kind);
    if (estimator.kind != EstimatorKind::kExact) {
      out += "-L" + std::to_string(estimator.samples);
    }
  }
  return out;
}

void ExperimentConfig::validate() const {
  objective.validate();
  estimator.validate();
  train.validate();
  if (repetitions < 1) throw InputError("repetitions must be at least 1");
  if (!split_seeds.empty() &&
      split_seeds.size() < static_cast<std::size_t>(repetitions)) {
    throw InputError("split_seeds has fewer entries than repetitions");
  }
  if (model.num_inducing < 1) throw InputError("num_inducing must be >= 1");
  if (dataset.source != "synthetic" && dataset.source != "file") {
    throw InputError("dataset.source must be 'synthetic' or 'file'");
  }
  if (dataset.source == "file" && dataset.path.empty()) {
    throw InputError("dataset.path is required for file data sets");
  }
  if (objective.kind == ObjectiveKind::kDlmSquare &&
      dataset.task != Task::kRegression) {
    throw InputError("dlm-square needs a regression task");
  }
  const bool binary_lik = likelihood.kind == LikelihoodKind::kProbit ||
                          likelihood.kind == LikelihoodKind::kLogistic;
  const bool count_lik = likelihood.kind == LikelihoodKind::kPoissonExp ||
                         likelihood.kind == LikelihoodKind::kPoissonSoftplus;
  if ((dataset.task == Task::kBinary) != binary_lik ||
      (dataset.task == Task::kCount) != count_lik) {
    throw InputError("likelihood '" + to_string(likelihood.kind) +
                     "' does not match task '" + to_string(dataset.task) + "'");
  }
  if (likelihood.kind == LikelihoodKind::kStudentT && !(likelihood.dof > 0.0)) {
    throw InputError("student-t degrees of freedom must be positive");
  }
  if ((likelihood.kind == LikelihoodKind::kGaussian ||
       likelihood.kind == LikelihoodKind::kStudentT) &&
      !(likelihood.variance > 0.0)) {
    throw InputError("likelihood variance must be positive");
  }
}

namespace {

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw InputError(std::string("config field '") + key + "': " + e.what());
  }
}

const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) {
    throw InputError(std::string("config section '") + key + "' must be an object");
  }
  return j.at(key);
}

std::string kernel_name(KernelKind k) {
  return k == KernelKind::kIsotropicRbf ? "rbf" : "ard-rbf";
}
KernelKind kernel_from_name(const std::string& s) {
  if (s == "rbf") return KernelKind::kIsotropicRbf;
  if (s == "ard-rbf") return KernelKind::kArdRbf;
  throw InputError("unknown kernel '" + s + "'");
}
std::string mean_name(MeanKind k) { return k == MeanKind::kZero ? "zero" : "constant"; }
MeanKind mean_from_name(const std::string& s) {
  if (s == "zero") return MeanKind::kZero;
  if (s == "constant") return MeanKind::kConstant;
  throw InputError("unknown mean function '" + s + "'");
}

Json vec_to_json(const VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}
VectorXd vec_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
}
Json mat_to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}
MatrixXd mat_from_json(const Json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const VectorXd row = vec_from_json(j.at(static_cast<std::size_t>(r)));
    if (row.size() != cols) throw InputError("ragged matrix in model file");
    m.row(r) = row.transpose();
  }
  return m;
}

Json telemetry_to_json(const SamplerTelemetry& t) {
  Json j;
  j["accepted"] = t.accepted;
  j["rejected"] = t.rejected;
  j["rejections_per_accept"] =
      t.accepted > 0 ? static_cast<double>(t.rejected) / static_cast<double>(t.accepted)
                     : 0.0;
  j["chosen_widths"] = t.chosen_widths;
  j["rounds_used"] = t.rounds_used;
  j["sampling_failures"] = t.sampling_failures;
  j["zero_likelihood_events"] = t.zero_likelihood_events;
  if (t.has_min_mean_likelihood) {
    j["min_mean_likelihood"] = t.min_mean_likelihood;
  } else {
    j["min_mean_likelihood"] = nullptr;
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  ExperimentConfig cfg;
  cfg.label = get_or<std::string>(j, "label", "");

  const Json& d = section(j, "dataset");
  cfg.dataset.source = get_or<std::string>(d, "source", cfg.dataset.source);
  cfg.dataset.name = get_or<std::string>(d, "name", cfg.dataset.name);
  cfg.dataset.path = get_or<std::string>(d, "path", "");
  cfg.dataset.format = data_format_from_string(get_or<std::string>(d, "format", "csv"));
  cfg.dataset.label_column = get_or<std::string>(d, "label_column", "");
  cfg.dataset.n = get_or<Index>(d, "n", cfg.dataset.n);
  cfg.dataset.noise_sd = get_or<double>(d, "noise_sd", cfg.dataset.noise_sd);
  if (d.contains("data_seed") && !d.at("data_seed").is_null()) {
    cfg.dataset.data_seed = get_or<std::uint64_t>(d, "data_seed", 0);
  }
  std::string default_task = "regression";
  if (cfg.dataset.source == "synthetic") {
    if (cfg.dataset.name == "sine-probit" || cfg.dataset.name == "two-moons") {
      default_task = "binary";
    } else if (cfg.dataset.name == "poisson") {
      default_task = "count";
    }
  }
  cfg.dataset.task = task_from_string(get_or<std::string>(d, "task", default_task));

  const Json& l = section(j, "likelihood");
  std::string default_lik = "gaussian";
  if (cfg.dataset.task == Task::kBinary) default_lik = "probit";
  if (cfg.dataset.task == Task::kCount) default_lik = "poisson-exp";
  cfg.likelihood.kind =
      likelihood_kind_from_string(get_or<std::string>(l, "kind", default_lik));
  cfg.likelihood.variance = get_or<double>(l, "variance", 0.1);
  cfg.likelihood.dof = get_or<double>(l, "dof", 3.0);

  const Json& o = section(j, "objective");
  cfg.objective.kind =
      objective_kind_from_string(get_or<std::string>(o, "kind", "dlm-log"));
  cfg.objective.beta = get_or<double>(o, "beta", 1.0);
  cfg.objective.scaling =
      loss_scaling_from_string(get_or<std::string>(o, "loss_scaling", "mean"));
  cfg.objective.quadrature_nodes = get_or<int>(o, "quadrature_nodes", 20);

  const Json& e = section(j, "estimator");
  cfg.estimator.kind =
      estimator_kind_from_string(get_or<std::string>(e, "kind", "exact"));
  cfg.estimator.samples = get_or<int>(e, "samples", 10);
  cfg.estimator.smoothing = get_or<double>(e, "smoothing", 0.0);
  cfg.estimator.max_width_multiplier = get_or<int>(e, "max_width_multiplier", 10);
  cfg.estimator.vectorized_rounds = get_or<int>(e, "vectorized_rounds", 2);
  cfg.estimator.max_individual_attempts =
      get_or<int>(e, "max_individual_attempts", 1000);
  cfg.estimator.rng_seed = get_or<std::uint64_t>(e, "rng_seed", 0);
  cfg.estimator.exact_quadrature_nodes = get_or<int>(e, "exact_quadrature_nodes", 64);

  const Json& t = section(j, "train");
  const int batch = get_or<int>(t, "batch_size", 0);
  TrainConfig tc = TrainConfig::defaults(cfg.dataset.task, batch > 0);
  tc.batch_size = batch;
  tc.learning_rate = get_or<double>(t, "learning_rate", tc.learning_rate);
  tc.max_iters = get_or<int>(t, "max_iters", tc.max_iters);
  tc.convergence_window = get_or<int>(t, "convergence_window", tc.convergence_window);
  tc.convergence_tol = get_or<double>(t, "convergence_tol", tc.convergence_tol);
  tc.mode = train_mode_from_string(get_or<std::string>(t, "mode", "joint"));
  tc.square_hyper_steps = get_or<int>(t, "square_hyper_steps", tc.square_hyper_steps);
  tc.monitor_every = get_or<int>(t, "monitor_every", 0);
  tc.whiten = get_or<bool>(t, "whiten", true);
  const Json& a = section(t, "adam");
  tc.adam.beta1 = get_or<double>(a, "beta1", tc.adam.beta1);
  tc.adam.beta2 = get_or<double>(a, "beta2", tc.adam.beta2);
  tc.adam.epsilon = get_or<double>(a, "epsilon", tc.adam.epsilon);
  cfg.train = tc;

  const Json& m = section(j, "model");
  cfg.model.num_inducing = get_or<Index>(m, "num_inducing", cfg.model.num_inducing);
  cfg.model.kernel = kernel_from_name(get_or<std::string>(m, "kernel", "rbf"));
  if (m.contains("mean") && !m.at("mean").is_null()) {
    cfg.model.mean = mean_from_name(m.at("mean").get<std::string>());
  }

  cfg.select_beta = get_or<bool>(j, "select_beta", false);
  cfg.repetitions = get_or<int>(j, "repetitions", 1);
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
  cfg.split_seeds = get_or<std::vector<std::uint64_t>>(j, "split_seeds", {});
  cfg.out_dir = get_or<std::string>(j, "out_dir", "");
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["label"] = cfg.label;
  Json d;
  d["source"] = cfg.dataset.source;
  d["name"] = cfg.dataset.name;
  d["path"] = cfg.dataset.path;
  d["format"] = to_string(cfg.dataset.format);
  d["task"] = to_string(cfg.dataset.task);
  d["label_column"] = cfg.dataset.label_column;
  d["n"] = cfg.dataset.n;
  d["noise_sd"] = cfg.dataset.noise_sd;
  d["data_seed"] = cfg.dataset.data_seed ? Json(*cfg.dataset.data_seed) : Json(nullptr);
  j["dataset"] = d;
  j["likelihood"] = {{"kind", to_string(cfg.likelihood.kind)},
                     {"variance", cfg.likelihood.variance},
                     {"dof", cfg.likelihood.dof}};
  j["objective"] = {{"kind", to_string(cfg.objective.kind)},
                    {"beta", cfg.objective.beta},
                    {"loss_scaling", to_string(cfg.objective.scaling)},
                    {"quadrature_nodes", cfg.objective.quadrature_nodes}};
  j["estimator"] = {{"kind", to_string(cfg.estimator.kind)},
                    {"samples", cfg.estimator.samples},
                    {"smoothing", cfg.estimator.smoothing},
                    {"max_width_multiplier", cfg.estimator.max_width_multiplier},
                    {"vectorized_rounds", cfg.estimator.vectorized_rounds},
                    {"max_individual_attempts", cfg.estimator.max_individual_attempts},
                    {"rng_seed", cfg.estimator.rng_seed},
                    {"exact_quadrature_nodes", cfg.estimator.exact_quadrature_nodes}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"max_iters", cfg.train.max_iters},
                {"convergence_window", cfg.train.convergence_window},
                {"convergence_tol", cfg.train.convergence_tol},
                {"batch_size", cfg.train.batch_size},
                {"mode", to_string(cfg.train.mode)},
                {"square_hyper_steps", cfg.train.square_hyper_steps},
                {"monitor_every", cfg.train.monitor_every},
                {"whiten", cfg.train.whiten},
                {"adam",
                 {{"beta1", cfg.train.adam.beta1},
                  {"beta2", cfg.train.adam.beta2},
                  {"epsilon", cfg.train.adam.epsilon}}}};
  j["model"] = {{"num_inducing", cfg.model.num_inducing},
                {"kernel", kernel_name(cfg.model.kernel)},
                {"mean", cfg.model.mean ? Json(mean_name(*cfg.model.mean)) : Json(nullptr)}};
  j["select_beta"] = cfg.select_beta;
  j["repetitions"] = cfg.repetitions;
  j["seed"] = cfg.seed;
  j["split_seeds"] = cfg.split_seeds;
  j["out_dir"] = cfg.out_dir;
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw InputError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

Dataset materialize_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  Dataset data;
  if (cfg.source == "synthetic") {
    data = make_synthetic(cfg.name, cfg.n, cfg.noise_sd, cfg.data_seed.value_or(seed));
  } else {
    data = load_dataset(cfg.path, cfg.format, cfg.task, cfg.label_column);
  }
  if (data.task != cfg.task) {
    throw InputError("data set '" + data.name + "' is a " + to_string(data.task) +
                     " task, config says " + to_string(cfg.task));
  }
  return data;
}

Json metrics_to_json(const Metrics& m) {
  Json j;
  j["nll"] = m.nll;
  if (m.mse) j["mse"] = *m.mse;
  if (m.error_rate) j["error_rate"] = *m.error_rate;
  if (m.mre) j["mre"] = *m.mre;
  return j;
}

Json model_to_json(const TrainResult& result, const NormalizationStats& stats,
                   Task task) {
  Json j;
  const KernelModel& m = result.model;
  j["kernel"] = kernel_name(m.kind);
  j["lengthscales"] = vec_to_json(m.lengthscales);
  j["signal_variance"] = m.signal_variance;
  j["inducing"] = mat_to_json(m.inducing);
  j["mean"] = mean_name(m.mean_kind);
  j["mean_constant"] = m.mean_constant;
  j["noise_variance"] = m.noise_variance;
  j["jitter"] = m.jitter;
  j["q_mean"] = vec_to_json(result.q.mean);
  j["q_chol"] = mat_to_json(result.q.chol);
  j["likelihood"] = {{"kind", to_string(result.lik.kind)},
                     {"variance", result.lik.variance},
                     {"dof", result.lik.dof}};
  j["task"] = to_string(task);
  j["normalization"] = {{"feature_mean", vec_to_json(stats.feature_mean)},
                        {"feature_scale", vec_to_json(stats.feature_scale)},
                        {"label_mean", stats.label_mean},
                        {"label_scale", stats.label_scale},
                        {"labels_normalized", stats.labels_normalized}};
  return j;
}

SavedModel model_from_json(const Json& j) {
  try {
    SavedModel out;
    KernelModel& m = out.model;
    m.kind = kernel_from_name(j.at("kernel").get<std::string>());
    m.lengthscales = vec_from_json(j.at("lengthscales"));
    m.signal_variance = j.at("signal_variance").get<double>();
    m.inducing = mat_from_json(j.at("inducing"));
    m.mean_kind = mean_from_name(j.at("mean").get<std::string>());
    m.mean_constant = j.at("mean_constant").get<double>();
    m.noise_variance = j.at("noise_variance").get<double>();
    m.jitter = j.at("jitter").get<double>();
    m.validate();
    out.q.mean = vec_from_json(j.at("q_mean"));
    out.q.chol = mat_from_json(j.at("q_chol"));
    if (out.q.mean.size() != m.num_inducing() || out.q.chol.rows() != m.num_inducing() ||
        out.q.chol.cols() != m.num_inducing()) {
      throw InputError("posterior size does not match the inducing inputs");
    }
    const Json& l = j.at("likelihood");
    out.lik.kind = likelihood_kind_from_string(l.at("kind").get<std::string>());
    out.lik.variance = l.at("variance").get<double>();
    out.lik.dof = l.at("dof").get<double>();
    out.task = task_from_string(j.at("task").get<std::string>());
    const Json& s = j.at("normalization");
    out.stats.feature_mean = vec_from_json(s.at("feature_mean"));
    out.stats.feature_scale = vec_from_json(s.at("feature_scale"));
    out.stats.label_mean = s.at("label_mean").get<double>();
    out.stats.label_scale = s.at("label_scale").get<double>();
    out.stats.labels_normalized = s.at("labels_normalized").get<bool>();
    return out;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed model file: ") + e.what());
  }
}

void write_trace_csv(const std::vector<TracePoint>& trace, std::ostream& out) {
  out << "iter,objective,wall_ms\n";
  out << std::setprecision(17);
  for (const auto& p : trace) {
    out << p.iter << ',' << p.objective << ',' << std::setprecision(6) << p.wall_ms
        << std::setprecision(17) << '\n';
  }
}

namespace {

KernelModel initial_model(const ExperimentConfig& cfg, const TrainingData& train,
                          std::uint64_t seed) {
  const MeanKind mean = cfg.model.mean.value_or(
      cfg.dataset.task == Task::kBinary ? MeanKind::kConstant : MeanKind::kZero);
  KernelModel model =
      make_default_model(train.x, std::min(cfg.model.num_inducing, train.size()),
                         cfg.model.kernel, mean, seed);
  if (mean == MeanKind::kConstant && cfg.dataset.task == Task::kRegression) {
    model.mean_constant = train.y.mean();
  }
  if (cfg.likelihood.kind == LikelihoodKind::kGaussian) {
    model.noise_variance = cfg.likelihood.variance;
  }
  return model;
}

RepetitionRecord run_repetition(const ExperimentConfig& cfg, int r) {
  RepetitionRecord rec;
  rec.repetition = r;
  rec.seed = cfg.repetition_seed(r);
  const Dataset data = materialize_dataset(cfg.dataset, rec.seed);
  const DataSplit split = split_and_normalize(data, rec.seed);
  rec.stats = split.stats;

  EstimatorConfig est = cfg.estimator;
  est.rng_seed = cfg.estimator.rng_seed * 0x9E3779B97F4A7C15ULL + rec.seed;
  TrainConfig tc = cfg.train;
  tc.seed = rec.seed;

  TrainInit init;
  init.model = initial_model(cfg, split.train, rec.seed);
  init.monitor = &split.test;
  init.monitor_task = cfg.dataset.task;

  if (tc.mode == TrainMode::kFixedHyper) {
    // Hyperparameters come from a jointly trained ELBO model; the variational
    // parameters restart from the prior.
    ObjectiveSpec donor_spec = cfg.objective;
    donor_spec.kind = ObjectiveKind::kElbo;
    donor_spec.beta = 1.0;
    EstimatorConfig donor_est = est;
    donor_est.kind = EstimatorKind::kExact;
    TrainConfig donor_cfg = tc;
    donor_cfg.mode = TrainMode::kJoint;
    donor_cfg.monitor_every = 0;
    const TrainResult donor =
        train(split.train, cfg.likelihood, donor_spec, donor_est, donor_cfg, init);
    if (donor.diverged) {
      rec.failed = true;
      rec.failure = "hyperparameter donor training failed: " + donor.failure;
      return rec;
    }
    init.model = donor.model;
  }

  std::optional<TrainResult> result;
  if (cfg.select_beta) {
    try {
      BetaSelection sel = select_beta(split.train, split.validation, cfg.dataset.task,
                                      cfg.likelihood, cfg.objective, est, tc, init);
      rec.beta_records = sel.records;
      rec.beta = sel.best_beta;
      result = std::move(sel.best);
    } catch (const NumericalError& e) {
      rec.failed = true;
      rec.failure = e.what();
      return rec;
    }
  } else {
    rec.beta = cfg.objective.beta;
    result = train(split.train, cfg.likelihood, cfg.objective, est, tc, init);
  }
  rec.converged = result->converged;
  rec.iterations = result->iterations;
  rec.telemetry = result->telemetry;
  if (result->diverged) {
    rec.failed = true;
    rec.failure = result->failure;
  } else {
    try {
      rec.metrics = evaluate(result->model, result->q, result->lik, split.test,
                             cfg.dataset.task);
    } catch (const NumericalError& e) {
      rec.failed = true;
      rec.failure = e.what();
    }
  }
  rec.result = std::move(result);
  return rec;
}

Json summarize(const std::vector<RepetitionRecord>& reps) {
  Json summary = Json::object();
  for (const char* key : {"nll", "mse", "error_rate", "mre"}) {
    std::vector<double> values;
    for (const auto& rec : reps) {
      if (!rec.metrics) continue;
      const Json m = metrics_to_json(*rec.metrics);
      if (m.contains(key)) values.push_back(m.at(key).get<double>());
    }
    if (values.empty()) continue;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double k = static_cast<double>(values.size());
    const double stderr_ = values.size() > 1 ? std::sqrt(var / (k - 1.0) / k) : 0.0;
    summary[key] = {{"mean", mean}, {"stderr", stderr_}, {"count", values.size()}};
  }
  return summary;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult out;
  out.config = cfg;
  for (int r = 0; r < cfg.repetitions; ++r) {
    out.repetitions.push_back(run_repetition(cfg, r));
  }

  Json records = Json::array();
  Json telemetry = Json::array();
  for (const auto& rec : out.repetitions) {
    Json j;
    j["repetition"] = rec.repetition;
    j["seed"] = rec.seed;
    j["beta"] = rec.beta;
    j["converged"] = rec.converged;
    j["iterations"] = rec.iterations;
    j["failed"] = rec.failed;
    j["failure"] = rec.failure;
    j["metrics"] = rec.metrics ? metrics_to_json(*rec.metrics) : Json(nullptr);
    if (cfg.select_beta) {
      Json grid = Json::array();
      for (const auto& b : rec.beta_records) {
        grid.push_back({{"beta", b.beta},
                        {"score", b.failed ? Json(nullptr) : Json(b.score)},
                        {"failed", b.failed},
                        {"failure", b.failure},
                        {"converged", b.converged},
                        {"iterations", b.iterations}});
      }
      j["beta_grid"] = grid;
      j["selected_beta"] = rec.beta;
    }
    if (rec.result && !rec.result->monitor.empty()) {
      Json curve = Json::array();
      for (const auto& p : rec.result->monitor) curve.push_back({p.iter, p.nll});
      j["test_nll_curve"] = curve;
    }
    records.push_back(j);
    telemetry.push_back({{"repetition", rec.repetition},
                         {"telemetry", telemetry_to_json(rec.telemetry)}});
  }
  out.metrics["series"] = cfg.series_label();
  out.metrics["objective"] = to_string(cfg.objective.kind);
  out.metrics["estimator"] = to_string(cfg.estimator.kind);
  out.metrics["task"] = to_string(cfg.dataset.task);
  out.metrics["records"] = records;
  out.metrics["summary"] = summarize(out.repetitions);

  if (!cfg.out_dir.empty()) {
    const fs::path dir(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(dir / "traces", ec);
    fs::create_directories(dir / "models", ec);
    if (ec) throw InputError("cannot create output directory '" + cfg.out_dir + "'");
    write_text(dir / "config.resolved.json", config_to_json(cfg).dump(2) + "\n");
    write_text(dir / "metrics.json", out.metrics.dump(2) + "\n");
    write_text(dir / "telemetry.json", telemetry.dump(2) + "\n");
    for (const auto& rec : out.repetitions) {
      if (!rec.result) continue;
      std::ostringstream trace;
      write_trace_csv(rec.result->trace, trace);
      write_text(dir / "traces" / ("rep" + std::to_string(rec.repetition) + ".csv"),
                 trace.str());
      if (!rec.failed) {
        write_text(dir / "models" / ("rep" + std::to_string(rec.repetition) + ".json"),
                   model_to_json(*rec.result, rec.stats, cfg.dataset.task).dump(2) + "\n");
      }
    }
  }
  return out;
}

void emit_curves(const std::vector<Json>& results, std::ostream& out) {
  out << "series,x_kind,x,metric,y\n";
  out << std::setprecision(17);
  for (const Json& res : results) {
    const std::string series = res.value("series", std::string("run"));
    const std::string score =
        res.value("objective", std::string()) == "dlm-square" ? "val_mse" : "val_nll";
    if (!res.contains("records")) continue;
    for (const Json& rec : res.at("records")) {
      if (rec.contains("beta_grid")) {
        for (const Json& cell : rec.at("beta_grid")) {
          if (cell.at("score").is_null()) continue;
          out << series << ",beta," << cell.at("beta").get<double>() << ',' << score
              << ',' << cell.at("score").get<double>() << '\n';
        }
      }
      if (rec.contains("test_nll_curve")) {
        for (const Json& p : rec.at("test_nll_curve")) {
          out << series << ",iter," << p.at(0).get<int>() << ",test_nll,"
              << p.at(1).get<double>() << '\n';
        }
      }
    }
  }
}

}  // namespace dlmgp
