// Command-line front end: train, select-beta, evaluate, diagnose-bias,
// check-bounds and emit-curves.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "dlmgp/data.hpp"
#include "dlmgp/diagnostics.hpp"
#include "dlmgp/errors.hpp"
#include "dlmgp/experiment.hpp"
#include "dlmgp/simd.hpp"
#include "dlmgp/trainer.hpp"

namespace fs = std::filesystem;
using namespace dlmgp;

namespace {

struct RunFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::optional<std::string> objective, estimator, likelihood, dataset, data_path,
      format, task, mode, label_column, label;
  std::optional<double> beta, smoothing, learning_rate, lik_variance, noise_sd;
  std::optional<int> samples, repetitions, max_iters, batch_size, monitor_every;
  std::optional<long> num_inducing, n;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool require_run) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)");
  auto* seed = cmd->add_option("--seed", f.seed, "Base seed");
  auto* out = cmd->add_option("--out-dir", f.out_dir, "Output directory");
  if (require_run) {
    seed->required();
    out->required();
  }
  cmd->add_option("--objective", f.objective, "elbo | dlm-log | dlm-square");
  cmd->add_option("--beta", f.beta, "KL / regularizer weight");
  cmd->add_option("--estimator", f.estimator, "exact | bmc | smooth-bmc | ups");
  cmd->add_option("--samples", f.samples, "Monte Carlo samples per point");
  cmd->add_option("--smoothing", f.smoothing, "smooth-bmc denominator offset");
  cmd->add_option("--likelihood", f.likelihood,
                  "gaussian | probit | logistic | poisson-exp | poisson-softplus | student-t");
  cmd->add_option("--likelihood-variance", f.lik_variance, "Initial noise variance");
  cmd->add_option("--dataset", f.dataset,
                  "Synthetic generator: sine | sine-probit | two-moons | poisson");
  cmd->add_option("--data", f.data_path, "Data file (csv or libsvm)");
  cmd->add_option("--format", f.format, "csv | libsvm");
  cmd->add_option("--task", f.task, "regression | binary | count");
  cmd->add_option("--label-column", f.label_column, "CSV label column");
  cmd->add_option("--n", f.n, "Synthetic data size");
  cmd->add_option("--noise-sd", f.noise_sd, "Synthetic noise level");
  cmd->add_option("--num-inducing", f.num_inducing, "Number of inducing inputs M");
  cmd->add_option("--repetitions", f.repetitions, "Number of repetitions");
  cmd->add_option("--max-iters", f.max_iters, "Iteration cap");
  cmd->add_option("--batch-size", f.batch_size, "Minibatch size (0 = full batch)");
  cmd->add_option("--learning-rate", f.learning_rate, "Adam step size");
  cmd->add_option("--mode", f.mode, "joint | fixed-hyper");
  cmd->add_option("--monitor-every", f.monitor_every, "Test NLL every k iterations");
  cmd->add_option("--label", f.label, "Series name for curve tables");
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

ExperimentConfig resolve_config(const RunFlags& f) {
  Json j = f.config.empty() ? Json::object() : read_json(f.config);
  auto set = [&](const char* sec, const char* key, const auto& value) {
    if (value) j[sec][key] = *value;
  };
  set("objective", "kind", f.objective);
  set("objective", "beta", f.beta);
  set("estimator", "kind", f.estimator);
  set("estimator", "samples", f.samples);
  set("estimator", "smoothing", f.smoothing);
  set("likelihood", "kind", f.likelihood);
  set("likelihood", "variance", f.lik_variance);
  set("dataset", "format", f.format);
  set("dataset", "task", f.task);
  set("dataset", "label_column", f.label_column);
  set("dataset", "n", f.n);
  set("dataset", "noise_sd", f.noise_sd);
  if (f.dataset) {
    j["dataset"]["source"] = "synthetic";
    j["dataset"]["name"] = *f.dataset;
  }
  if (f.data_path) {
    j["dataset"]["source"] = "file";
    j["dataset"]["path"] = *f.data_path;
  }
  set("model", "num_inducing", f.num_inducing);
  set("train", "max_iters", f.max_iters);
  set("train", "batch_size", f.batch_size);
  set("train", "learning_rate", f.learning_rate);
  set("train", "mode", f.mode);
  set("train", "monitor_every", f.monitor_every);
  if (f.repetitions) j["repetitions"] = *f.repetitions;
  if (f.label) j["label"] = *f.label;
  j["seed"] = f.seed;
  if (!f.out_dir.empty()) j["out_dir"] = f.out_dir;
  return config_from_json(j);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + dir + "'");
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

int run_train(const RunFlags& f, bool select) {
  ExperimentConfig cfg = resolve_config(f);
  cfg.select_beta = select || cfg.select_beta;
  const ExperimentResult result = run_experiment(cfg);
  int failed = 0;
  for (const auto& rec : result.repetitions) {
    std::cout << "repetition " << rec.repetition << " seed " << rec.seed;
    if (cfg.select_beta) std::cout << " selected_beta " << rec.beta;
    if (rec.failed) {
      ++failed;
      std::cout << " FAILED: " << rec.failure << "\n";
      continue;
    }
    std::cout << " nll " << rec.metrics->nll;
    if (rec.metrics->mse) std::cout << " mse " << *rec.metrics->mse;
    if (rec.metrics->error_rate) std::cout << " error_rate " << *rec.metrics->error_rate;
    if (rec.metrics->mre) std::cout << " mre " << *rec.metrics->mre;
    std::cout << (rec.converged ? " converged" : " not-converged") << " after "
              << rec.iterations << " iterations\n";
  }
  std::cout << "wrote " << cfg.out_dir << "/metrics.json\n";
  return failed == cfg.repetitions ? static_cast<int>(ExitCode::kNumericalFailure) : 0;
}

struct EvalFlags {
  std::string model;
  RunFlags run;
};

int run_evaluate(const EvalFlags& f) {
  const SavedModel saved = model_from_json(read_json(f.model));
  TrainingData test;
  if (f.run.data_path && f.run.config.empty()) {
    const Dataset data = load_dataset(
        *f.run.data_path,
        data_format_from_string(f.run.format.value_or("csv")),
        f.run.task ? task_from_string(*f.run.task) : saved.task,
        f.run.label_column.value_or(""));
    test = TrainingData{data.features, data.labels};
    if (test.x.cols() != saved.stats.feature_mean.size()) {
      throw InputError("data dimension does not match the model");
    }
    apply_stats(saved.stats, test);
  } else {
    const ExperimentConfig cfg = resolve_config(f.run);
    const Dataset data = materialize_dataset(cfg.dataset, cfg.repetition_seed(0));
    test = split_and_normalize(data, cfg.repetition_seed(0)).test;
  }
  const Metrics m = evaluate(saved.model, saved.q, saved.lik, test, saved.task);
  Json j = metrics_to_json(m);
  j["n"] = test.size();
  ensure_dir(f.run.out_dir);
  write_json(fs::path(f.run.out_dir) / "metrics.json", j);
  std::cout << j.dump() << "\n";
  return 0;
}

struct BiasFlags {
  RunFlags run;
  int repeats = 1000;
  std::string reference = "exact";
  int reference_samples = 10000;
  long points = 20;
};

int run_diagnose_bias(const BiasFlags& f) {
  RunFlags rf = f.run;
  if (rf.config.empty() && !rf.dataset && !rf.data_path) rf.dataset = "sine-probit";
  const ExperimentConfig cfg = resolve_config(rf);
  const std::uint64_t seed = cfg.repetition_seed(0);
  const Dataset data = materialize_dataset(cfg.dataset, seed);
  const DataSplit split = split_and_normalize(data, seed);
  const MeanKind mean = cfg.model.mean.value_or(
      cfg.dataset.task == Task::kBinary ? MeanKind::kConstant : MeanKind::kZero);
  KernelModel model = make_default_model(
      split.train.x, std::min<Index>(cfg.model.num_inducing, split.train.size()),
      cfg.model.kernel, mean, seed);
  if (cfg.likelihood.kind == LikelihoodKind::kGaussian) {
    model.noise_variance = cfg.likelihood.variance;
  }
  const KuuFactor factor(model);
  const VariationalPosterior q = VariationalPosterior::prior(factor);
  const Index points = std::min<Index>(f.points, split.train.size());
  const BiasFixture fixture =
      make_bias_fixture(model, q, bind_likelihood(cfg.likelihood, model),
                        split.train.x.topRows(points), split.train.y.head(points));

  BiasOptions opts;
  opts.estimator = cfg.estimator;
  opts.estimator.rng_seed = seed;
  opts.reference = reference_kind_from_string(f.reference);
  opts.reference_samples = f.reference_samples;
  opts.repeats = f.repeats;
  opts.seed = seed;
  const BiasReport r = estimate_bias(fixture, opts);

  auto vec = [](const VectorXd& v) {
    return Json(std::vector<double>(v.data(), v.data() + v.size()));
  };
  Json j;
  j["estimator"] = to_string(r.kind);
  j["samples"] = r.samples;
  j["reference"] = to_string(r.reference);
  j["reference_samples"] = r.reference_samples;
  j["repeats"] = r.repeats;
  j["points"] = points;
  j["bias_norm"] = r.bias_norm;
  j["bias_norm_m"] = r.bias_norm_m;
  j["bias_norm_chol"] = r.bias_norm_chol;
  j["bias"] = vec(r.bias);
  j["standard_error"] = vec(r.standard_error);
  j["reference_gradient"] = vec(r.reference_gradient);
  j["c1_mean_direction"] = r.c1_mean;
  j["c2_mean_direction"] = r.c2_mean;
  j["c1_worst_draw"] = r.c1_worst;
  j["c2_worst_draw"] = r.c2_worst;
  j["min_mean_likelihood"] =
      std::isnan(r.min_mean_likelihood) ? Json(nullptr) : Json(r.min_mean_likelihood);
  j["zero_likelihood_events"] = r.zero_likelihood_events;
  j["accepted"] = r.accepted;
  j["rejected"] = r.rejected;
  ensure_dir(rf.out_dir);
  write_json(fs::path(rf.out_dir) / "bias.json", j);
  std::cout << "bias_norm " << r.bias_norm << " (m " << r.bias_norm_m << ", L "
            << r.bias_norm_chol << ") c1 " << r.c1_mean << " c2 " << r.c2_mean << "\n";
  return 0;
}

struct BoundFlags {
  std::string likelihood = "gaussian";
  double variance = 1.0;
  double dof = 3.0;
  std::vector<double> ys;
  double lo = -20.0;
  double hi = 20.0;
  std::size_t grid_points = 40001;
  std::string out_dir;
};

int run_check_bounds(const BoundFlags& f) {
  Likelihood lik{likelihood_kind_from_string(f.likelihood), f.variance, f.dof};
  std::vector<double> ys = f.ys;
  if (ys.empty()) {
    switch (lik.kind) {
      case LikelihoodKind::kProbit:
      case LikelihoodKind::kLogistic: ys = {0.0, 1.0}; break;
      case LikelihoodKind::kPoissonExp:
      case LikelihoodKind::kPoissonSoftplus: ys = {0, 1, 2, 5, 10}; break;
      default: ys = {0.0}; break;
    }
  }
  const auto grid = uniform_grid(f.lo, f.hi, f.grid_points);
  const BoundCheck check = check_bounds(lik, ys, grid);
  Json j;
  j["likelihood"] = to_string(lik.kind);
  j["pass"] = check.pass;
  j["worst_slack"] = check.worst_slack;
  j["worst_quantity"] = check.worst_quantity;
  j["worst_y"] = check.worst_y;
  j["worst_f"] = check.worst_f;
  Json per = Json::array();
  for (const auto& e : check.per_y) {
    per.push_back({{"y", e.y},
                   {"B", e.bounds.upper},
                   {"b1", e.bounds.lower_d1},
                   {"B1", e.bounds.upper_d1},
                   {"b2", e.bounds.lower_d2},
                   {"B2", e.bounds.upper_d2},
                   {"max_phi", e.max_phi},
                   {"min_d1", e.min_d1},
                   {"argmin_d1", e.argmin_d1},
                   {"max_d1", e.max_d1},
                   {"argmax_d1", e.argmax_d1},
                   {"min_d2", e.min_d2},
                   {"argmin_d2", e.argmin_d2},
                   {"max_d2", e.max_d2},
                   {"argmax_d2", e.argmax_d2}});
  }
  j["per_y"] = per;
  ensure_dir(f.out_dir);
  write_json(fs::path(f.out_dir) / "bounds.json", j);
  std::cout << (check.pass ? "PASS" : "FAIL") << " " << to_string(lik.kind)
            << " worst slack " << check.worst_slack << " (" << check.worst_quantity
            << " at y=" << check.worst_y << ", f=" << check.worst_f << ")\n";
  return 0;
}

int run_emit_curves(const std::vector<std::string>& inputs, const std::string& out_dir) {
  std::vector<Json> results;
  for (const auto& path : inputs) results.push_back(read_json(path));
  ensure_dir(out_dir);
  const fs::path target = fs::path(out_dir) / "curves.csv";
  std::ofstream out(target, std::ios::binary);
  if (!out) throw InputError("cannot write '" + target.string() + "'");
  emit_curves(results, out);
  std::cout << "wrote " << target.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse GP training by direct loss minimization and ELBO"};
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "Force kernel ISA: scalar | avx2");

  RunFlags train_flags, select_flags;
  auto* train_cmd = app.add_subcommand("train", "Train and evaluate over repetitions");
  add_run_flags(train_cmd, train_flags, true);
  auto* select_cmd =
      app.add_subcommand("select-beta", "Grid-search beta on validation data");
  add_run_flags(select_cmd, select_flags, true);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a saved model");
  eval_cmd->add_option("--model", eval_flags.model, "Model JSON")->required();
  add_run_flags(eval_cmd, eval_flags.run, false);
  eval_cmd->get_option("--out-dir")->required();

  BiasFlags bias_flags;
  auto* bias_cmd =
      app.add_subcommand("diagnose-bias", "Gradient bias against a reference");
  add_run_flags(bias_cmd, bias_flags.run, true);
  bias_cmd->add_option("--repeats", bias_flags.repeats, "Independent estimates");
  bias_cmd->add_option("--reference", bias_flags.reference, "exact | bmc");
  bias_cmd->add_option("--reference-samples", bias_flags.reference_samples,
                       "Samples for a bmc reference");
  bias_cmd->add_option("--points", bias_flags.points, "Training points in the fixture");

  BoundFlags bound_flags;
  auto* bound_cmd =
      app.add_subcommand("check-bounds", "Verify derivative bounds on a grid");
  bound_cmd->add_option("--likelihood", bound_flags.likelihood, "Likelihood kind");
  bound_cmd->add_option("--variance", bound_flags.variance, "sigma^2");
  bound_cmd->add_option("--dof", bound_flags.dof, "Student-t degrees of freedom");
  bound_cmd->add_option("--y", bound_flags.ys, "Observations to check");
  bound_cmd->add_option("--lo", bound_flags.lo, "Grid start");
  bound_cmd->add_option("--hi", bound_flags.hi, "Grid end");
  bound_cmd->add_option("--grid-points", bound_flags.grid_points, "Grid size");
  bound_cmd->add_option("--out-dir", bound_flags.out_dir, "Output directory")->required();

  std::vector<std::string> curve_inputs;
  std::string curve_out;
  auto* curve_cmd =
      app.add_subcommand("emit-curves", "Long-format plot table from metrics files");
  curve_cmd->add_option("--input", curve_inputs, "metrics.json files");
  curve_cmd->add_option("--out-dir", curve_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kInputError);
  }

  try {
    if (!isa.empty()) {
      simd::set_isa(isa == "scalar" ? simd::Isa::kScalar
                    : isa == "avx2"  ? simd::Isa::kAvx2
                                     : throw InputError("unknown ISA '" + isa + "'"));
    }
    if (*train_cmd) return run_train(train_flags, false);
    if (*select_cmd) return run_train(select_flags, true);
    if (*eval_cmd) return run_evaluate(eval_flags);
    if (*bias_cmd) return run_diagnose_bias(bias_flags);
    if (*bound_cmd) return run_check_bounds(bound_flags);
    if (*curve_cmd) return run_emit_curves(curve_inputs, curve_out);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kInputError);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kNumericalFailure);
  } catch (const SamplingError& e) {
    std::cerr << "sampling failure: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kSamplingFailure);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kInputError);
  }
  return 0;
}
