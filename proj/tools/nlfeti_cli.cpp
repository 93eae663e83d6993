#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nlfeti/experiment.hpp"

using namespace nlfeti;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_json(const std::string& path, const json& j) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

MlPipelineConfig ml_config(const std::string& path) {
  return path.empty() ? MlPipelineConfig{} : ml_pipeline_config_from_json(read_json(path));
}

int report_and_status(const ExperimentReport& r) {
  std::cout << table_csv(r);
  for (const auto& c : r.cells)
    if (!c.report) std::cerr << to_string(c.cell.method) << " " << cell_coarse_label(c.cell) << ": " << c.error << "\n";
  std::cerr << "outputs written to " << r.config.output_dir << "\n";
  return r.any_failed() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FETI-DP solvers and coarse spaces for high-contrast p-Laplace problems"};
  app.require_subcommand(1);

  std::string config_path, out_dir, method = "nk", coarse = "vertices", models;
  double tol = 100.0;
  int k = 2;
  auto* solve = app.add_subcommand("solve", "Run one solver cell");
  solve->add_option("-c,--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  solve->add_option("-m,--method", method, "nk or nl2")->check(CLI::IsMember({"nk", "nl2"}));
  solve->add_option("--coarse", coarse, "vertices, adaptive, learned or learned_classified")
      ->check(CLI::IsMember({"vertices", "adaptive", "learned", "learned_classified"}));
  solve->add_option("--tol", tol, "Adaptive eigenvalue tolerance");
  solve->add_option("-k", k, "Learned constraints per edge")->check(CLI::Range(0, 3));
  solve->add_option("--models", models, "Model bank directory (overrides the config)");
  solve->add_option("-o,--out", out_dir, "Output directory (overrides the config)");

  auto* bench = app.add_subcommand("bench", "Run the configured matrix (all eight cells when none is given)");
  bench->add_option("-c,--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  bench->add_option("--models", models, "Model bank directory (overrides the config)");
  bench->add_option("-o,--out", out_dir, "Output directory (overrides the config)");

  std::string ml_path, dataset_path, models_dir, metrics_path;
  auto* gen = app.add_subcommand("ml-gen", "Generate an edge dataset");
  gen->add_option("-c,--config", ml_path, "ML config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("-o,--out", dataset_path, "Dataset file")->required();

  auto* train = app.add_subcommand("ml-train", "Train the classifier and the regressors");
  train->add_option("-d,--dataset", dataset_path, "Dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("-c,--config", ml_path, "ML config (JSON); only 'training' is used")->check(CLI::ExistingFile);
  train->add_option("-o,--models", models_dir, "Model bank directory")->required();

  auto* eval = app.add_subcommand("ml-eval", "Evaluate a model bank on the dataset test split");
  eval->add_option("-d,--dataset", dataset_path, "Dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("-m,--models", models_dir, "Model bank directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("-o,--out", metrics_path, "Metrics file");

  auto* pipeline = app.add_subcommand("ml-run", "Generate, train and evaluate in one go");
  pipeline->add_option("-c,--config", ml_path, "ML config (JSON)")->check(CLI::ExistingFile);
  pipeline->add_option("-o,--out", out_dir, "Output directory (overrides the config)");

  std::string space_a, space_b;
  auto* diff = app.add_subcommand("coarse-diff", "Compare two coarse space files edge by edge");
  diff->add_option("a", space_a, "First coarse space (JSON)")->required()->check(CLI::ExistingFile);
  diff->add_option("b", space_b, "Second coarse space (JSON)")->required()->check(CLI::ExistingFile);
  diff->add_option("-o,--out", metrics_path, "Diff report file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve || *bench) {
      ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_experiment_config(config_path);
      if (!models.empty()) config.models = models;
      if (!out_dir.empty()) config.output_dir = out_dir;
      if (*solve) {
        config.matrix = {{method_from_string(method), coarse_kind_from_string(coarse), tol, k}};
      } else if (config.matrix.empty()) {
        config.matrix = full_matrix();
      }
      return report_and_status(run_and_write(config));
    }
    if (*gen) {
      const Dataset data = generate_dataset(ml_config(ml_path).dataset);
      save_dataset(data, dataset_path);
      std::cerr << data.samples.size() << " samples (" << data.train.size() << " train, " << data.validation.size()
                << " validation, " << data.test.size() << " test), " << data.skipped_configs
                << " configurations skipped\n";
      return 0;
    }
    if (*train) {
      const Dataset data = load_dataset(dataset_path);
      BankMetrics m;
      const ModelBank bank = train_bank(data, ml_config(ml_path).training, &m);
      save_bank(bank, models_dir);
      std::cerr << "classifier train accuracy " << m.classifier.train_accuracy << ", validation accuracy "
                << m.classifier.validation_accuracy << "\n";
      return 0;
    }
    if (*eval) {
      const json metrics = evaluate_bank(load_bank(models_dir), load_dataset(dataset_path));
      if (!metrics_path.empty()) write_json(metrics_path, metrics);
      std::cout << metrics.dump(2) << "\n";
      return 0;
    }
    if (*pipeline) {
      MlPipelineConfig config = ml_config(ml_path);
      if (!out_dir.empty()) config.output_dir = out_dir;
      const MlPipelineResult r = run_ml_pipeline(config);
      std::cout << r.metrics.dump(2) << "\n";
      return 0;
    }
    if (*diff) {
      const json report = to_json(diff_coarse(coarse_from_json(read_json(space_a)), coarse_from_json(read_json(space_b))));
      if (!metrics_path.empty()) write_json(metrics_path, report);
      std::cout << report.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
