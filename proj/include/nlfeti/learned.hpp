#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlfeti/assembly.hpp"
#include "nlfeti/coarse_space.hpp"
#include "nlfeti/coefficients.hpp"
#include "nlfeti/geometry.hpp"
#include "nlfeti/mlp.hpp"

namespace nlfeti {

constexpr int kDefaultOutputLattice = 39;

/// One edge of a training configuration.
struct EdgeSample {
  std::vector<double> input;  // sample_on_grid in the canonical frame
  bool touches_dirichlet = false;
  int label_class = 0;  // 0, 1, or 2 for two or more constraints
  /// Leading adaptive constraints on the output lattice, unit norm and
  /// sign-fixed; min(#eigenvalues above TOL, 3) of them.
  std::vector<Vector> targets;
  std::vector<double> eigenvalues;  // leading three, descending
  int config = 0;                   // generating configuration
};

struct DatasetConfig {
  int n_configs = 100;
  std::vector<PatternKind> families{PatternKind::random_channels, PatternKind::random_boxes};
  double tol = 100.0;
  std::uint64_t seed = 1;
  int subdomains_per_dim = 3;
  int elements_per_edge = 20;
  int resolution = kDefaultSamplingResolution;
  int n_out = kDefaultOutputLattice;
  double contrast = 1e6;
  double density_min = 0.3;
  double density_max = 1.5;
  int width_min = 2;
  int width_max = 3;
  double train_fraction = 0.7;
  double validation_fraction = 0.15;
  int threads = 0;  // 0: hardware concurrency

  bool operator==(const DatasetConfig&) const = default;
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct Dataset {
  DatasetConfig config;
  std::vector<EdgeSample> samples;
  /// Sample indices; split by generating configuration, so all edges of one
  /// configuration land in the same split.
  std::vector<int> train, validation, test;
  int skipped_configs = 0;
};

/// Random p = 2 diffusion problems on small decompositions; every interface
/// edge becomes one sample labeled by the edge eigenproblem with TOL.
/// Deterministic given the config (also when run on several threads).
Dataset generate_dataset(const DatasetConfig& config);

nlohmann::json to_json(const Dataset& d);
Dataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Piecewise-linear resampling between interior lattices of [0, 1]: n points
/// at (k + 1) / (n + 1). Values beyond the outermost source points are
/// extrapolated linearly, so affine functions are reproduced exactly.
Vector resample_linear(const Vector& values, int n_target);

/// Resamples a lattice constraint onto the edge-interior nodes and normalizes.
Vector interpolate_to_edge(const Vector& lattice_values, const Edge& edge);

/// Classifier plus regressors indexed [variant][rank - 1].
struct ModelBank {
  Mlp classifier;
  std::array<std::array<std::optional<Mlp>, 3>, 2> regressors;

  const Mlp& regressor(DirichletVariant v, int rank) const;
  int resolution() const { return classifier.resolution; }
};

std::string model_file_name(const ModelRole& role);
void save_bank(const ModelBank& bank, const std::string& directory);
ModelBank load_bank(const std::string& directory);

/// argmax of the classifier outputs: 0, 1 or 2 (two or more constraints).
int predict_class(const Mlp& classifier, const std::vector<double>& input);

/// Ranks 1..k of the variant selected by `touches_dirichlet`, each unit norm
/// and sign-fixed, on the output lattice.
std::vector<Vector> predict_constraints(const ModelBank& bank, const std::vector<double>& input,
                                        bool touches_dirichlet, int k);

enum class LearnedMode { fixed_k, classified };

/// fixed_k: ranks 1..k on every edge. classified: the classifier picks 0, 1
/// or 2 constraints per edge.
CoarseSpace learned_coarse(const Decomposition& d, const CoefficientField& field, const ModelBank& bank,
                           LearnedMode mode, int k = 2);

/// Like the classified mode, with the per-edge counts supplied.
CoarseSpace learned_coarse_with_counts(const Decomposition& d, const CoefficientField& field, const ModelBank& bank,
                                       const std::vector<int>& counts);

struct BankTraining {
  std::vector<int> hidden{512, 256};
  TrainParams classifier{20, 64, 1e-3, 11};
  TrainParams regressor{60, 32, 1e-3, 12, 0.01};
  /// Adds the mirrored copies of each regression sample (two on edges touching
  /// the Dirichlet boundary, four elsewhere).
  bool augment = true;

  bool operator==(const BankTraining&) const = default;
};

struct BankMetrics {
  TrainMetrics classifier;
  /// [variant][rank - 1]; empty when no training sample carries that rank.
  std::array<std::array<std::optional<TrainMetrics>, 3>, 2> regressors;
};

/// Trains the classifier on all training samples and regressor (r, v) on the
/// training samples of variant v with at least r targets. A regressor whose
/// restricted training set is empty is left out of the bank.
ModelBank train_bank(const Dataset& data, const BankTraining& spec, BankMetrics* metrics = nullptr);

/// Throws std::invalid_argument when the restricted training set is empty.
Mlp train_regressor_for(const Dataset& data, DirichletVariant variant, int rank, const BankTraining& spec,
                        TrainMetrics* metrics = nullptr);

struct RegressionEval {
  int samples = 0;
  double mean_error = 0.0;
  double fraction_within = 0.0;  // error <= threshold
};

/// min(|y^ - y|, |y^ + y|) over the test samples carrying a rank-r target of
/// the variant, with y^ the normalized prediction.
RegressionEval evaluate_regressor(const ModelBank& bank, const Dataset& data, const std::vector<int>& indices,
                                  DirichletVariant variant, int rank, double threshold = 0.5);
double evaluate_classifier(const Mlp& classifier, const Dataset& data, const std::vector<int>& indices);

}  // namespace nlfeti
