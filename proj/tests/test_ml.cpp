#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "nlfeti/coarse.hpp"
#include "nlfeti/learned.hpp"
#include "nlfeti/solvers.hpp"

using namespace nlfeti;

namespace {

// Inputs of length 2 * 4^2: class 0 all low, class 1 a crossing channel,
// class 2 two distinct channels.
void toy_classification(Eigen::MatrixXd& x, std::vector<int>& labels, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> row(0, 3);
  x.setConstant(32, n, 1e-6);
  labels.assign(n, 0);
  for (int c = 0; c < n; ++c) {
    labels[c] = c % 3;
    for (int k = 0; k < labels[c]; ++k) {
      int r = row(rng);
      while (k == 1 && x(r * 4, c) == 1.0) r = row(rng);
      for (int blk = 0; blk < 2; ++blk)
        for (int normal = 0; normal < 4; ++normal) x(blk * 16 + r * 4 + normal, c) = 1.0;
    }
  }
}

Mlp random_regressor(int rank, DirichletVariant v, std::uint64_t seed, int resolution = 12, int n_out = 39) {
  Mlp m = make_mlp({2 * resolution * resolution, 16, n_out}, Activation::identity, seed);
  m.role = {false, rank, v};
  m.resolution = resolution;
  m.n_out = n_out;
  return m;
}

ModelBank random_bank(int max_rank = 3) {
  ModelBank bank;
  bank.classifier = make_mlp({288, 16, 3}, Activation::softmax, 1);
  for (auto v : {DirichletVariant::touching, DirichletVariant::interior})
    for (int r = 1; r <= max_rank; ++r)
      bank.regressors[v == DirichletVariant::touching ? 0 : 1][r - 1] =
          random_regressor(r, v, 10 * r + (v == DirichletVariant::touching ? 1 : 2));
  return bank;
}

DatasetConfig small_config() {
  DatasetConfig c;
  c.n_configs = 8;
  c.elements_per_edge = 8;
  c.seed = 3;
  c.threads = 2;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nlfeti_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("mlp shapes and activations") {
  Mlp m = make_mlp({5, 7, 3}, Activation::softmax, 4);
  CHECK(m.weights[0].rows() == 7);
  CHECK(m.weights[0].cols() == 5);
  CHECK(m.weights[1].rows() == 3);
  m.validate();
  const Eigen::MatrixXd p = m.forward(Eigen::MatrixXd(Eigen::MatrixXd::Random(5, 4)));
  for (int c = 0; c < 4; ++c) {
    CHECK(p.col(c).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.col(c).minCoeff() > 0.0);
  }
  CHECK_THROWS_AS(m.forward_one(Eigen::VectorXd::Zero(4)), std::invalid_argument);
  Mlp bad = make_mlp({5, 7, 4}, Activation::softmax, 4);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);  // classifiers have 3 outputs
  Mlp broken = m;
  broken.weights[1] = Eigen::MatrixXd::Zero(3, 6);
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_mlp({5}, Activation::identity, 1), std::invalid_argument);
}

TEST_CASE("classifier separates a constructed toy set") {
  Eigen::MatrixXd x, xv;
  std::vector<int> y, yv;
  toy_classification(x, y, 120, 1);
  toy_classification(xv, yv, 30, 2);
  Mlp m = make_mlp({32, 24, 3}, Activation::softmax, 5);
  const auto metrics = train_classifier(m, x, y, xv, yv, {80, 16, 3e-3, 7});
  CHECK(metrics.train_accuracy == 1.0);
  CHECK(classification_accuracy(m, x, y) == 1.0);

  Mlp again = make_mlp({32, 24, 3}, Activation::softmax, 5);
  const auto metrics2 = train_classifier(again, x, y, xv, yv, {80, 16, 3e-3, 7});
  CHECK(metrics2.train_loss == metrics.train_loss);
  CHECK(metrics2.validation_loss == metrics.validation_loss);
  CHECK(again.weights[0] == m.weights[0]);

  std::vector<int> out_of_range = y;
  out_of_range[0] = 3;
  CHECK_THROWS_AS(train_classifier(m, x, out_of_range, xv, yv, {}), std::invalid_argument);
  CHECK_THROWS_AS(train_classifier(m, Eigen::MatrixXd::Zero(31, 120), y, xv, yv, {}), std::invalid_argument);
}

TEST_CASE("regressor fits a constant target") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(288, 40) + 1e-3 * Eigen::MatrixXd::Random(288, 40);
  Eigen::VectorXd target = Eigen::VectorXd::LinSpaced(39, -1.0, 2.0).normalized();
  Eigen::MatrixXd y = target.replicate(1, 40);
  Mlp m = random_regressor(1, DirichletVariant::interior, 3);
  const auto metrics = train_regressor(m, x.leftCols(30), y.leftCols(30), x.rightCols(10), y.rightCols(10),
                                       {300, 10, 1e-3, 9});
  CHECK(metrics.validation_loss < 1e-4);
  CHECK(metrics.train_loss < 1e-4);

  Mlp empty = random_regressor(1, DirichletVariant::interior, 3);
  CHECK_THROWS_AS(train_regressor(empty, Eigen::MatrixXd(288, 0), Eigen::MatrixXd(39, 0), x, y, {}),
                  std::invalid_argument);
}

TEST_CASE("regression loss is sign symmetric") {
  Mlp m = random_regressor(1, DirichletVariant::interior, 3);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(288, 5);
  const Eigen::MatrixXd pred = m.forward(x);
  CHECK(sign_symmetric_mse(m, x, pred) == 0.0);
  CHECK(sign_symmetric_mse(m, x, -pred) == 0.0);
  CHECK(sign_symmetric_mse(m, x, 2.0 * pred) > 0.0);
}

TEST_CASE("model json round trip") {
  Mlp m = random_regressor(2, DirichletVariant::touching, 8);
  const Mlp back = mlp_from_json(to_json(m));
  CHECK(back.sizes == m.sizes);
  CHECK(back.role == m.role);
  CHECK(back.resolution == 12);
  CHECK(back.n_out == 39);
  const Eigen::VectorXd x = Eigen::VectorXd::Random(288);
  CHECK(back.forward_one(x) == m.forward_one(x));

  auto j = to_json(m);
  j.erase("version");
  CHECK_THROWS_AS(mlp_from_json(j), std::invalid_argument);
  j = to_json(m);
  j["version"] = 99;
  CHECK_THROWS_AS(mlp_from_json(j), std::invalid_argument);
  j = to_json(m);
  j["weights"][0].erase(0);
  CHECK_THROWS_AS(mlp_from_json(j), std::invalid_argument);
}

TEST_CASE("predict_class") {
  Mlp c = make_mlp({288, 16, 3}, Activation::softmax, 2);
  std::vector<double> input(288, 1e-6);
  for (int k = 0; k < 288; k += 7) input[k] = 1.0;
  const int cls = predict_class(c, input);
  CHECK(cls >= 0);
  CHECK(cls <= 2);
  CHECK(predict_class(c, input) == cls);
  Mlp shifted = c;
  shifted.biases.back().array() += 5.0;  // softmax is invariant to a common shift
  CHECK(predict_class(shifted, input) == cls);
  CHECK_THROWS_AS(predict_class(c, std::vector<double>(287, 0.0)), std::invalid_argument);
}

TEST_CASE("linear resampling") {
  const Eigen::VectorXd v = Eigen::VectorXd::Random(19);
  CHECK((resample_linear(v, 19) - v).norm() <= 1e-14);
  CHECK((resample_linear(Eigen::VectorXd::Constant(7, 2.5), 39).array() - 2.5).abs().maxCoeff() <= 1e-14);

  // Affine functions of the lattice position are reproduced exactly.
  auto ramp = [](int n) {
    Eigen::VectorXd r(n);
    for (int k = 0; k < n; ++k) r[k] = 3.0 * (k + 1.0) / (n + 1.0) - 1.0;
    return r;
  };
  CHECK((resample_linear(ramp(39), 19) - ramp(19)).norm() <= 1e-13);
  CHECK((resample_linear(resample_linear(ramp(39), 19), 39) - ramp(39)).norm() <= 1e-13);
  CHECK((resample_linear(ramp(9), 39) - ramp(39)).norm() <= 1e-13);

  // 19 edge nodes sit on the odd points of the 39-point lattice.
  const Eigen::VectorXd fine = Eigen::VectorXd::Random(39);
  const Eigen::VectorXd coarse = resample_linear(fine, 19);
  for (int j = 0; j < 19; ++j) CHECK(coarse[j] == doctest::Approx(fine[2 * j + 1]).epsilon(1e-14));

  Edge e;
  e.nodes.assign(19, 0);
  const Eigen::VectorXd on_edge = interpolate_to_edge(fine, e);
  CHECK(on_edge.norm() == doctest::Approx(1.0));
  CHECK((on_edge - coarse.normalized()).norm() <= 1e-14);
  e.nodes.assign(9, 0);
  const Eigen::VectorXd constant = interpolate_to_edge(Eigen::VectorXd::Constant(39, 4.0), e);
  CHECK((constant.array() - 1.0 / 3.0).abs().maxCoeff() <= 1e-14);
  CHECK_THROWS_AS(interpolate_to_edge(fine, Edge{}), std::invalid_argument);
  CHECK_THROWS_AS(resample_linear(Eigen::VectorXd(), 3), std::invalid_argument);
}

TEST_CASE("predict_constraints") {
  const ModelBank bank = random_bank();
  std::vector<double> input(288, 1e-6);
  for (int k = 0; k < 288; k += 5) input[k] = 1.0;
  const auto interior = predict_constraints(bank, input, false, 3);
  REQUIRE(interior.size() == 3);
  for (const auto& v : interior) {
    CHECK(v.size() == 39);
    CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((sign_fixed(v) - v).norm() == 0.0);
  }
  const auto touching = predict_constraints(bank, input, true, 3);
  for (int r = 0; r < 3; ++r) CHECK((touching[r] - interior[r]).norm() > 1e-6);
  CHECK(predict_constraints(bank, input, false, 0).empty());

  const ModelBank partial = random_bank(2);
  CHECK(predict_constraints(partial, input, false, 2).size() == 2);
  CHECK_THROWS_AS(predict_constraints(partial, input, false, 3), std::runtime_error);
  CHECK_THROWS_AS(predict_constraints(bank, input, false, 4), std::invalid_argument);
}

TEST_CASE("bank files round trip") {
  const auto dir = temp_dir("bank");
  const ModelBank bank = random_bank(2);
  save_bank(bank, dir.string());
  CHECK(std::filesystem::exists(dir / "classifier.json"));
  CHECK(std::filesystem::exists(dir / "regressor_rank1_touching.json"));
  CHECK(!std::filesystem::exists(dir / "regressor_rank3_interior.json"));
  const ModelBank back = load_bank(dir.string());
  CHECK(back.classifier.weights[0] == bank.classifier.weights[0]);
  CHECK(back.regressor(DirichletVariant::interior, 2).weights[1] ==
        bank.regressor(DirichletVariant::interior, 2).weights[1]);
  CHECK(!back.regressors[1][2].has_value());
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_bank(dir.string()));
}

TEST_CASE("dataset generation") {
  const DatasetConfig cfg = small_config();
  const Dataset a = generate_dataset(cfg);
  const Decomposition d = decompose(cfg.subdomains_per_dim, cfg.elements_per_edge);
  CHECK(a.samples.size() == static_cast<std::size_t>(cfg.n_configs * d.num_edges()));
  CHECK(a.skipped_configs == 0);

  std::set<int> seen;
  for (const auto* split : {&a.train, &a.validation, &a.test})
    for (int i : *split) CHECK(seen.insert(i).second);
  CHECK(seen.size() == a.samples.size());
  // Splits are by configuration.
  std::set<int> train_configs, test_configs;
  for (int i : a.train) train_configs.insert(a.samples[i].config);
  for (int i : a.test) CHECK(!train_configs.count(a.samples[i].config));

  int touching = 0;
  for (const auto& s : a.samples) {
    CHECK(s.input.size() == 288u);
    CHECK(s.label_class == std::min<int>(2, static_cast<int>(s.targets.size())));
    touching += s.touches_dirichlet;
    for (const auto& t : s.targets) {
      CHECK(t.size() == 39);
      CHECK(t.norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK((sign_fixed(t) - t).norm() == 0.0);
    }
  }
  CHECK(touching == 2 * cfg.n_configs);

  DatasetConfig single = cfg;
  single.threads = 1;
  const Dataset b = generate_dataset(single);
  REQUIRE(b.samples.size() == a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].input == b.samples[i].input);
    CHECK(a.samples[i].label_class == b.samples[i].label_class);
    REQUIRE(a.samples[i].targets.size() == b.samples[i].targets.size());
    for (std::size_t k = 0; k < a.samples[i].targets.size(); ++k)
      CHECK(a.samples[i].targets[k] == b.samples[i].targets[k]);
  }
  CHECK(a.train == b.train);

  DatasetConfig bad = cfg;
  bad.n_configs = 0;
  CHECK_THROWS_AS(generate_dataset(bad), std::invalid_argument);
}

TEST_CASE("dataset labels follow the eigenproblem") {
  DatasetConfig cfg = small_config();
  cfg.families = {PatternKind::constant};
  cfg.n_configs = 2;
  for (const auto& s : generate_dataset(cfg).samples) {
    CHECK(s.label_class == 0);
    CHECK(s.targets.empty());
  }
  cfg.families = {PatternKind::channels_and_us};
  int labeled = 0;
  for (const auto& s : generate_dataset(cfg).samples) labeled += s.label_class >= 1;
  CHECK(labeled > 0);
}

TEST_CASE("dataset files round trip") {
  DatasetConfig cfg = small_config();
  cfg.n_configs = 3;
  const Dataset a = generate_dataset(cfg);
  const Dataset b = dataset_from_json(to_json(a));
  CHECK(b.config == a.config);
  CHECK(b.test == a.test);
  REQUIRE(b.samples.size() == a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(b.samples[i].input == a.samples[i].input);
    CHECK(b.samples[i].eigenvalues == a.samples[i].eigenvalues);
    for (std::size_t k = 0; k < a.samples[i].targets.size(); ++k)
      CHECK(b.samples[i].targets[k] == a.samples[i].targets[k]);
  }
  auto j = to_json(cfg);
  CHECK(dataset_config_from_json(j) == cfg);
  j["bogus"] = 1;
  CHECK_THROWS_AS(dataset_config_from_json(j), std::invalid_argument);
}

TEST_CASE("bank training respects the restricted sets") {
  DatasetConfig cfg = small_config();
  cfg.n_configs = 12;
  cfg.families = {PatternKind::random_channels};
  cfg.density_min = 2.0;
  cfg.density_max = 4.0;
  const Dataset data = generate_dataset(cfg);
  BankTraining spec;
  spec.hidden = {8};
  spec.classifier.epochs = 2;
  spec.regressor.epochs = 2;
  BankMetrics metrics;
  const ModelBank bank = train_bank(data, spec, &metrics);
  for (auto v : {DirichletVariant::touching, DirichletVariant::interior})
    for (int r = 1; r <= 3; ++r) {
      bool any = false;
      for (int i : data.train) {
        const auto& s = data.samples[i];
        any |= s.touches_dirichlet == (v == DirichletVariant::touching) && static_cast<int>(s.targets.size()) >= r;
      }
      const int vi = v == DirichletVariant::touching ? 0 : 1;
      CHECK(bank.regressors[vi][r - 1].has_value() == any);
      CHECK(metrics.regressors[vi][r - 1].has_value() == any);
      if (!any) CHECK_THROWS_AS(train_regressor_for(data, v, r, spec), std::invalid_argument);
    }
  CHECK(bank.classifier.role.classifier);
  CHECK(bank.resolution() == cfg.resolution);
}

TEST_CASE("learned coarse spaces") {
  const Decomposition d = decompose(5, 8);
  PatternSpec spec;
  spec.kind = PatternKind::channels_and_us;
  const CoefficientField field = generate(spec, d.mesh);
  const ModelBank bank = random_bank();

  const CoarseSpace fixed = learned_coarse(d, field, bank, LearnedMode::fixed_k, 2);
  CHECK(fixed.size() == 108);
  CHECK(fixed.label == "learned");
  for (const auto& e : fixed.edges) {
    REQUIRE(e.count() == 2);
    CHECK(e.provenance[0].source == ConstraintSource::learned);
    CHECK(e.provenance[0].rank == 1);
    CHECK(e.provenance[1].rank == 2);
  }
  const CoarseSpace classified = learned_coarse(d, field, bank, LearnedMode::classified);
  CHECK(classified.size() >= 28);
  CHECK(classified.size() <= 108);
  CHECK(classified.label == "learned_classified");

  // With eigenproblem labels (capped at 2) the size matches the adaptive space
  // whenever adaptive never asks for more than two constraints on an edge.
  Problem prob = make_problem(d, field, 4.0);
  const auto results =
      adaptive_edge_analysis(d, field, local_tangents(prob, restrict_to_subdomains(d, initial_guess(d))), 100.0, 0);
  std::vector<int> counts;
  bool capped = false;
  for (const auto& r : results) {
    counts.push_back(std::min(r.count_above_tol, 2));
    capped |= r.count_above_tol > 2;
  }
  REQUIRE(!capped);
  const CoarseSpace oracle = learned_coarse_with_counts(d, field, bank, counts);
  CHECK(oracle.size() == adaptive_coarse_from(d, results, 100.0).size());
  CHECK(oracle.size() > 28);
  CHECK_THROWS_AS(learned_coarse_with_counts(d, field, bank, {1, 2}), std::invalid_argument);
}

TEST_CASE("network inputs do not depend on the mesh size") {
  // Same geometric field on H/h = 10 and 20: a horizontal channel in
  // y in [0.4, 0.5) plus a box.
  auto field_for = [](const DecomposedMesh& m) {
    const int n = m.cells_per_dim();
    std::vector<double> cells(static_cast<std::size_t>(n) * n, 1.0);
    for (int cy = 0; cy < n; ++cy)
      for (int cx = 0; cx < n; ++cx) {
        const double x = (cx + 0.5) / n, y = (cy + 0.5) / n;
        if ((y >= 0.4 && y < 0.5) || (x >= 0.6 && x < 0.8 && y >= 0.1 && y < 0.3)) cells[cy * n + cx] = 1e6;
      }
    return field_from_cells(m, cells, 1.0, 1e6);
  };
  const Decomposition d10 = decompose(3, 10), d20 = decompose(3, 20);
  const auto f10 = field_for(d10.mesh), f20 = field_for(d20.mesh);
  const ModelBank bank = random_bank();
  for (int e = 0; e < d10.num_edges(); ++e) {
    const auto in10 = sample_on_grid(f10, d10.mesh, d10.interface.edges[e]);
    const auto in20 = sample_on_grid(f20, d20.mesh, d20.interface.edges[e]);
    CHECK(in10 == in20);
  }
  const CoarseSpace c10 = learned_coarse(d10, f10, bank, LearnedMode::fixed_k, 2);
  const CoarseSpace c20 = learned_coarse(d20, f20, bank, LearnedMode::fixed_k, 2);
  CHECK(c10.edges[0].vectors[0].size() == 9);
  CHECK(c20.edges[0].vectors[0].size() == 19);
}
