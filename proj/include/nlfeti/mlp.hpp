#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace nlfeti {

enum class Activation { tanh, identity, softmax };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

enum class DirichletVariant { touching, interior };

std::string to_string(DirichletVariant v);
DirichletVariant dirichlet_variant_from_string(const std::string& name);

struct ModelRole {
  bool classifier = true;
  int rank = 0;  // regressors: constraint rank 1..3
  DirichletVariant variant = DirichletVariant::interior;

  bool operator==(const ModelRole&) const = default;
};

/// Dense feedforward network. Layer l maps sizes[l] to sizes[l + 1]; hidden
/// layers use `hidden`, the last layer `output`.
struct Mlp {
  std::vector<int> sizes;
  std::vector<Eigen::MatrixXd> weights;  // sizes[l + 1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;
  Activation hidden = Activation::tanh;
  Activation output = Activation::identity;
  ModelRole role;
  int resolution = 12;  // coefficient sampling resolution of the inputs
  int n_out = 39;       // regressors: output lattice size

  int input_size() const { return sizes.front(); }
  int output_size() const { return sizes.back(); }
  /// Columns are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const;
  /// Throws std::invalid_argument if the layer shapes do not chain.
  void validate() const;
};

/// Glorot-uniform weights, zero biases.
Mlp make_mlp(const std::vector<int>& sizes, Activation output, std::uint64_t seed);

struct TrainParams {
  int epochs = 40;
  int batch_size = 64;
  double step_size = 1e-3;
  std::uint64_t seed = 1;
  /// Cosine decay of the step size over the epochs down to this fraction of
  /// step_size (1: constant).
  double final_step_fraction = 1.0;

  bool operator==(const TrainParams&) const = default;
};

struct TrainMetrics {
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double train_accuracy = 0.0;       // classifiers
  double validation_accuracy = 0.0;  // classifiers
  int epochs = 0;
};

/// Columns of `x` are samples. Classifier targets are class indices; Adam on
/// the softmax cross-entropy.
TrainMetrics train_classifier(Mlp& model, const Eigen::MatrixXd& x, const std::vector<int>& labels,
                              const Eigen::MatrixXd& x_val, const std::vector<int>& labels_val,
                              const TrainParams& params);

/// Adam on the sign-symmetric squared error min(|y^ - y|^2, |y^ + y|^2),
/// averaged over samples and outputs.
TrainMetrics train_regressor(Mlp& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                             const Eigen::MatrixXd& x_val, const Eigen::MatrixXd& y_val, const TrainParams& params);

double classification_accuracy(const Mlp& model, const Eigen::MatrixXd& x, const std::vector<int>& labels);
double sign_symmetric_mse(const Mlp& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

constexpr int kModelFormatVersion = 1;

nlohmann::json to_json(const Mlp& model);
/// Rejects files with a missing or unsupported version.
Mlp mlp_from_json(const nlohmann::json& j);
void save_model(const Mlp& model, const std::string& path);
Mlp load_model(const std::string& path);

}  // namespace nlfeti
