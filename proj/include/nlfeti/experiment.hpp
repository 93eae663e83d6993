#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlfeti/coarse_space.hpp"
#include "nlfeti/coefficients.hpp"
#include "nlfeti/learned.hpp"
#include "nlfeti/solvers.hpp"

namespace nlfeti {

enum class Method { nk, nl2 };
enum class CoarseKind { vertices, adaptive, learned, learned_classified };

std::string to_string(Method m);
std::string to_string(CoarseKind k);
Method method_from_string(const std::string& s);
CoarseKind coarse_kind_from_string(const std::string& s);

struct CellSpec {
  Method method = Method::nk;
  CoarseKind coarse = CoarseKind::vertices;
  double tol = 100.0;  // adaptive
  int k = 2;           // learned

  bool operator==(const CellSpec&) const = default;
};

struct ExperimentConfig {
  int subdomains_per_dim = 5;
  int elements_per_edge = 20;
  double p = 4.0;
  double epsilon = 0.0;
  double source = 1.0;
  double contrast = 1e6;
  PatternSpec pattern;  // alpha_low = 1, alpha_high = contrast
  std::vector<CellSpec> matrix;
  SolverSettings settings;
  std::string models;  // model bank directory, needed by learned cells
  std::string output_dir = "out";
  std::uint64_t seed = 1;  // pattern seed for random kinds without one

  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const PatternSpec& p);
/// alpha_low and alpha_high are not part of the file format; they are set
/// from the problem contrast.
PatternSpec pattern_spec_from_json(const nlohmann::json& j);

/// Every key is optional except where noted; unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::string& path);

/// The 2 x 4 matrix: both methods with vertices, adaptive(TOL), learned(2)
/// and learned_classified.
std::vector<CellSpec> full_matrix(double tol = 100.0);

struct CellResult {
  CellSpec cell;
  std::optional<SolveReport> report;
  std::string error;  // set when the cell failed
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<CellResult> cells;
  /// Distinct coarse spaces built for the matrix, keyed by cell_coarse_label.
  std::vector<std::pair<std::string, CoarseSpace>> coarse_spaces;

  bool any_failed() const;
};

/// Runs the matrix; a failing cell is recorded and the others still run.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Builds the coarse space of a cell (models are loaded lazily by the caller).
CoarseSpace build_coarse(const CellSpec& cell, const Problem& problem, const ModelBank* bank);

/// Frozen column order of the table CSV.
const std::vector<std::string>& table_columns();
const std::vector<std::string>& trace_columns();
std::string table_csv(const ExperimentReport& r);
std::string trace_csv(const ExperimentReport& r);
nlohmann::json to_json(const SolveReport& r);
nlohmann::json to_json(const ExperimentReport& r);

/// "vertices", "adaptive(TOL=100)", "learned(k=2)", "learned_classified".
std::string cell_coarse_label(const CellSpec& cell);

/// Writes table.csv, trace.csv, report.json and coarse_<label>.json for each
/// coarse space into config.output_dir.
void write_experiment_outputs(const ExperimentReport& r);

/// run_experiment plus writing all outputs.
ExperimentReport run_and_write(const ExperimentConfig& config);

struct MlPipelineConfig {
  DatasetConfig dataset;
  BankTraining training;
  std::string output_dir = "ml";

  bool operator==(const MlPipelineConfig&) const = default;
};

MlPipelineConfig ml_pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MlPipelineConfig& c);

/// Test-split metrics for the classifier and all six regressors.
nlohmann::json evaluate_bank(const ModelBank& bank, const Dataset& data);

struct MlPipelineResult {
  Dataset dataset;
  ModelBank bank;
  nlohmann::json metrics;
};

/// generate -> train -> evaluate; writes dataset.json, models/ and
/// metrics.json into output_dir (skipped when output_dir is empty).
MlPipelineResult run_ml_pipeline(const MlPipelineConfig& config);

struct EdgeDiff {
  int edge = 0;
  int count_a = 0;
  int count_b = 0;
  std::vector<double> principal_angles;  // radians, ascending
};

struct CoarseDiff {
  bool same_vertices = true;
  std::vector<EdgeDiff> edges;

  bool identical(double angle_tol = 1e-8) const;
};

/// Throws std::invalid_argument when the spaces live on different interfaces.
CoarseDiff diff_coarse(const CoarseSpace& a, const CoarseSpace& b);
nlohmann::json to_json(const CoarseDiff& d);

}  // namespace nlfeti
