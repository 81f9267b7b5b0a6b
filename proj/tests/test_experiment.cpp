#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dlmgp/errors.hpp"
#include "dlmgp/experiment.hpp"

using namespace dlmgp;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  Json j = {
      {"dataset", {{"source", "synthetic"}, {"name", "sine"}, {"n", 80}, {"noise_sd", 0.2}}},
      {"objective", {{"kind", "dlm-log"}, {"beta", 0.5}}},
      {"model", {{"num_inducing", 6}}},
      {"train", {{"max_iters", 40}}},
      {"repetitions", 2},
      {"seed", 11},
  };
  return config_from_json(j);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(ExperimentConfig, DefaultsFollowTask) {
  const ExperimentConfig reg = config_from_json(Json::object());
  EXPECT_EQ(reg.dataset.task, Task::kRegression);
  EXPECT_EQ(reg.likelihood.kind, LikelihoodKind::kGaussian);
  EXPECT_EQ(reg.train.max_iters, 5000);
  EXPECT_EQ(reg.train.convergence_window, 50);
  const ExperimentConfig cls =
      config_from_json({{"dataset", {{"name", "two-moons"}}}, {"train", {{"batch_size", 32}}}});
  EXPECT_EQ(cls.dataset.task, Task::kBinary);
  EXPECT_EQ(cls.likelihood.kind, LikelihoodKind::kProbit);
  EXPECT_EQ(cls.train.max_iters, 3000);
  EXPECT_EQ(cls.train.convergence_window, 20);
  EXPECT_DOUBLE_EQ(cls.train.learning_rate, 1e-3);
  const ExperimentConfig cnt = config_from_json({{"dataset", {{"name", "poisson"}}}});
  EXPECT_EQ(cnt.dataset.task, Task::kCount);
  EXPECT_EQ(cnt.likelihood.kind, LikelihoodKind::kPoissonExp);
}

TEST(ExperimentConfig, ResolvedConfigRoundTrips) {
  ExperimentConfig cfg = small_config();
  cfg.estimator.kind = EstimatorKind::kSmoothBmc;
  cfg.estimator.smoothing = 1e-3;
  cfg.train.mode = TrainMode::kFixedHyper;
  cfg.train.whiten = false;
  cfg.model.mean = MeanKind::kConstant;
  cfg.split_seeds = {3, 4};
  cfg.dataset.data_seed = 99;
  const Json once = config_to_json(cfg);
  const Json twice = config_to_json(config_from_json(once));
  EXPECT_EQ(once, twice);
  const Json reparsed = Json::parse(once.dump());
  EXPECT_EQ(config_to_json(config_from_json(reparsed)), once);
}

TEST(ExperimentConfig, RejectsInvalidValues) {
  EXPECT_THROW(config_from_json({{"objective", {{"kind", "mle"}}}}), InputError);
  EXPECT_THROW(config_from_json({{"objective", {{"beta", -1.0}}}}), InputError);
  EXPECT_THROW(config_from_json({{"estimator", {{"samples", 0}}}}), InputError);
  EXPECT_THROW(config_from_json({{"repetitions", 0}}), InputError);
  EXPECT_THROW(config_from_json({{"dataset", {{"source", "file"}}}}), InputError);
  EXPECT_THROW(config_from_json({{"dataset", "sine"}}), InputError);
}

TEST(RunExperiment, EmitsSeedStampedRecordsAndSummary) {
  ExperimentConfig cfg = small_config();
  const fs::path dir = fresh_dir("dlmgp_experiment_records");
  cfg.out_dir = dir.string();
  const ExperimentResult r = run_experiment(cfg);
  ASSERT_EQ(r.repetitions.size(), 2u);
  const Json& recs = r.metrics.at("records");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].at("seed").get<std::uint64_t>(), cfg.repetition_seed(0));
  EXPECT_NE(recs[0].at("seed"), recs[1].at("seed"));
  EXPECT_EQ(r.metrics.at("summary").at("nll").at("count").get<int>(), 2);
  EXPECT_TRUE(r.metrics.at("summary").at("mse").contains("stderr"));

  for (const char* f : {"config.resolved.json", "metrics.json", "telemetry.json",
                        "traces/rep0.csv", "traces/rep1.csv", "models/rep0.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const std::string trace = slurp(dir / "traces/rep0.csv");
  EXPECT_EQ(trace.rfind("iter,objective,wall_ms\n", 0), 0u);
  const Json resolved = Json::parse(slurp(dir / "config.resolved.json"));
  EXPECT_EQ(config_to_json(config_from_json(resolved)), resolved);

  // The saved model reproduces the recorded test metrics.
  const SavedModel saved = model_from_json(Json::parse(slurp(dir / "models/rep0.json")));
  EXPECT_EQ(saved.q.mean, r.repetitions[0].result->q.mean);
  EXPECT_EQ(saved.model.inducing, r.repetitions[0].result->model.inducing);
  fs::remove_all(dir);
}

TEST(RunExperiment, RerunIsBitExact) {
  Json j = config_to_json(small_config());
  j["dataset"]["name"] = "sine-probit";
  j["dataset"]["task"] = "binary";
  j["likelihood"]["kind"] = "probit";
  j["estimator"]["kind"] = "ups";
  j["estimator"]["samples"] = 3;
  j["train"]["batch_size"] = 20;
  j["train"]["max_iters"] = 24;
  const ExperimentConfig cfg = config_from_json(j);
  const ExperimentResult a = run_experiment(cfg);
  const ExperimentResult b = run_experiment(cfg);
  for (std::size_t k = 0; k < a.repetitions.size(); ++k) {
    ASSERT_TRUE(a.repetitions[k].metrics.has_value()) << a.repetitions[k].failure;
    EXPECT_EQ(a.repetitions[k].metrics->nll, b.repetitions[k].metrics->nll);
    EXPECT_EQ(*a.repetitions[k].metrics->error_rate, *b.repetitions[k].metrics->error_rate);
    EXPECT_EQ(a.repetitions[k].result->q.mean, b.repetitions[k].result->q.mean);
  }
  EXPECT_EQ(a.metrics.at("records"), b.metrics.at("records"));
}

TEST(RunExperiment, BetaSweepRecordsEveryGridValue) {
  ExperimentConfig cfg = small_config();
  cfg.objective.kind = ObjectiveKind::kDlmSquare;
  cfg.select_beta = true;
  cfg.repetitions = 1;
  const ExperimentResult r = run_experiment(cfg);
  const Json& rec = r.metrics.at("records")[0];
  ASSERT_TRUE(rec.contains("beta_grid"));
  ASSERT_TRUE(rec.contains("selected_beta"));
  // 80 rows -> 53 training rows under the 67/8/25 split.
  EXPECT_EQ(rec.at("beta_grid").size(), beta_grid(53.0).size());
  bool found = false;
  for (const Json& cell : rec.at("beta_grid")) {
    found |= cell.at("beta").get<double>() == rec.at("selected_beta").get<double>();
  }
  EXPECT_TRUE(found);

  std::ostringstream table;
  emit_curves({r.metrics}, table);
  std::istringstream lines(table.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "series,x_kind,x,metric,y");
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    EXPECT_NE(line.find(",beta,"), std::string::npos);
    EXPECT_NE(line.find(",val_mse,"), std::string::npos);
    ++rows;
  }
  EXPECT_EQ(rows, rec.at("beta_grid").size());
}

TEST(RunExperiment, MonitoredRunGivesLearningCurve) {
  ExperimentConfig cfg = small_config();
  cfg.repetitions = 1;
  cfg.train.monitor_every = 10;
  const ExperimentResult r = run_experiment(cfg);
  std::ostringstream table;
  emit_curves({r.metrics}, table);
  const std::string s = table.str();
  EXPECT_NE(s.find(",iter,0,test_nll,"), std::string::npos);
  EXPECT_NE(s.find(",iter,30,test_nll,"), std::string::npos);
}

TEST(EmitCurves, EmptyInputGivesHeaderOnly) {
  std::ostringstream out;
  emit_curves({}, out);
  EXPECT_EQ(out.str(), "series,x_kind,x,metric,y\n");
}

TEST(WriteTraceCsv, Columns) {
  std::ostringstream out;
  write_trace_csv({{0, 1.5, 0.25}, {1, 1.25, 0.5}}, out);
  EXPECT_EQ(out.str(), "iter,objective,wall_ms\n0,1.5,0.25\n1,1.25,0.5\n");
}

TEST(ModelJson, RejectsMalformedInput) {
  EXPECT_THROW(model_from_json(Json::object()), InputError);
}
