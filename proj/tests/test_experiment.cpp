#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nlfeti/coarse.hpp"
#include "nlfeti/experiment.hpp"

using namespace nlfeti;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nlfeti_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

ModelBank random_bank(int max_rank) {
  ModelBank bank;
  bank.classifier = make_mlp({288, 8, 3}, Activation::softmax, 1);
  for (auto v : {DirichletVariant::touching, DirichletVariant::interior})
    for (int r = 1; r <= max_rank; ++r) {
      Mlp m = make_mlp({288, 8, 39}, Activation::identity, 10 * r + (v == DirichletVariant::touching ? 1 : 2));
      m.role = {false, r, v};
      bank.regressors[v == DirichletVariant::touching ? 0 : 1][r - 1] = m;
    }
  return bank;
}

ExperimentConfig small_config(const std::string& out) {
  ExperimentConfig c;
  c.subdomains_per_dim = 3;
  c.elements_per_edge = 6;
  c.p = 2.0;
  c.pattern.kind = PatternKind::channels_and_us;
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("config parse and serialize round trip") {
  const json j = json::parse(R"({
    "mesh": {"subdomains": 4, "elements_per_edge": 10},
    "problem": {"p": 3, "epsilon": 0.01, "source": 2, "contrast": 1e4,
                "pattern": {"kind": "combs", "width": 2, "offset": 1}},
    "matrix": [{"method": "nk", "coarse": "vertices"},
               {"method": "nl2", "coarse": "adaptive", "tol": 50},
               {"method": "nl2", "coarse": "learned", "k": 3}],
    "tolerances": {"newton_tol": 1e-9, "max_outer": 30},
    "models": "m", "output_dir": "o", "seed": 9})");
  const ExperimentConfig c = experiment_config_from_json(j);
  CHECK(c.subdomains_per_dim == 4);
  CHECK(c.elements_per_edge == 10);
  CHECK(c.p == 3.0);
  CHECK(c.pattern.kind == PatternKind::combs);
  CHECK(c.pattern.alpha_high == 1e4);
  CHECK(c.matrix.size() == 3);
  CHECK(c.matrix[1].tol == 50.0);
  CHECK(c.matrix[2].k == 3);
  CHECK(c.settings.newton_tol == 1e-9);
  CHECK(c.settings.max_outer == 30);
  CHECK(c.seed == 9);
  const ExperimentConfig again = experiment_config_from_json(to_json(c));
  CHECK(again == c);
  CHECK(to_json(again) == to_json(c));

  ExperimentConfig defaults;
  defaults.matrix = full_matrix();
  CHECK(experiment_config_from_json(to_json(defaults)) == defaults);
}

TEST_CASE("config rejects unknown keys and invalid values") {
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"meshh": {}})")), std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"mesh": {"subdomain": 3}})")), std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"problem": {"pattern": {"kinds": "combs"}}})")),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"tolerances": {"pcg": 1}})")), std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"matrix": [{"method": "nk"}]})")),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"matrix": [{"method": "gmres", "coarse": "vertices"}]})")),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"problem": {"p": 1.5}})")), std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"matrix": [{"method": "nk", "coarse": "learned", "k": 4}]})")),
                  std::invalid_argument);
  CHECK_THROWS_AS(ml_pipeline_config_from_json(json::parse(R"({"training": {"hiden": [4]}})")), std::invalid_argument);
}

TEST_CASE("ml config round trip") {
  const json j = json::parse(R"({"dataset": {"n_configs": 5, "seed": 4},
    "training": {"hidden": [16], "classifier": {"epochs": 3}, "augment": false}, "output_dir": "x"})");
  const MlPipelineConfig c = ml_pipeline_config_from_json(j);
  CHECK(c.dataset.n_configs == 5);
  CHECK(c.training.hidden == std::vector<int>{16});
  CHECK(c.training.classifier.epochs == 3);
  CHECK_FALSE(c.training.augment);
  CHECK(ml_pipeline_config_from_json(to_json(c)) == c);
}

TEST_CASE("golden CSV headers") {
  const ExperimentReport empty;
  CHECK(table_csv(empty) == "method,coarse,coarse_size,outer_it,inner_it,pcg_it,min_cond,max_cond,seconds,status\n");
  CHECK(trace_csv(empty) == "method,coarse,step,residual_norm,inner_it,step_length,pcg_it,cond\n");
  CHECK(cell_coarse_label({Method::nk, CoarseKind::adaptive, 100.0, 2}) == "adaptive(TOL=100)");
  CHECK(cell_coarse_label({Method::nk, CoarseKind::learned, 100.0, 2}) == "learned(k=2)");
}

TEST_CASE("single vertices cell on p = 2 takes one outer step") {
  ExperimentConfig c = small_config(temp_dir("single").string());
  c.pattern.kind = PatternKind::constant;
  c.matrix = {{Method::nl2, CoarseKind::vertices}};
  const ExperimentReport r = run_and_write(c);
  REQUIRE(r.cells.size() == 1);
  REQUIRE(r.cells[0].report);
  CHECK(r.cells[0].report->trace.outer == 1);
  const auto table = lines(read_file(std::filesystem::path(c.output_dir) / "table.csv"));
  REQUIRE(table.size() == 2);
  const Decomposition d = decompose(3, 6);
  CHECK(table[1].rfind("nl2,vertices," + std::to_string(vertex_coarse(d.interface).size()) + ",1,", 0) == 0);
  CHECK(table[1].substr(table[1].size() - 3) == ",ok");
  const auto trace = lines(read_file(std::filesystem::path(c.output_dir) / "trace.csv"));
  CHECK(trace.size() == 2);
  CHECK(std::filesystem::exists(std::filesystem::path(c.output_dir) / "report.json"));
  CHECK(std::filesystem::exists(std::filesystem::path(c.output_dir) / "coarse_vertices.json"));
  CHECK_FALSE(r.any_failed());
}

TEST_CASE("full matrix gives eight rows and isolates failures") {
  const auto dir = temp_dir("matrix");
  save_bank(random_bank(2), (dir / "models").string());
  ExperimentConfig c = small_config((dir / "out").string());
  c.models = (dir / "models").string();
  c.matrix = full_matrix();
  ExperimentReport r = run_and_write(c);
  CHECK(r.cells.size() == 8);
  CHECK_FALSE(r.any_failed());
  const auto table = lines(table_csv(r));
  CHECK(table.size() == 9);
  CHECK(r.coarse_spaces.size() == 4);
  for (const auto& name : {"coarse_vertices.json", "coarse_adaptive_TOL_100.json", "coarse_learned_k_2.json",
                           "coarse_learned_classified.json"})
    CHECK(std::filesystem::exists(dir / "out" / name));
  const json report = json::parse(read_file(dir / "out" / "report.json"));
  CHECK(report.at("cells").size() == 8);
  CHECK(experiment_config_from_json(report.at("config")) == c);

  // No rank-3 regressors in the bank: the learned(k=3) cell fails, the rest run.
  c.matrix = {{Method::nk, CoarseKind::vertices}, {Method::nk, CoarseKind::learned, 100.0, 3},
              {Method::nl2, CoarseKind::learned, 100.0, 3}, {Method::nl2, CoarseKind::adaptive}};
  r = run_experiment(c);
  REQUIRE(r.cells.size() == 4);
  CHECK(r.any_failed());
  CHECK(r.cells[0].report);
  CHECK_FALSE(r.cells[1].report);
  CHECK_FALSE(r.cells[2].report);
  CHECK(r.cells[3].report);
  CHECK(r.cells[1].error.find("coarse space") != std::string::npos);
  const auto rows = lines(table_csv(r));
  REQUIRE(rows.size() == 5);
  CHECK(rows[2].find("failed") != std::string::npos);
}

TEST_CASE("learned cells without models are rejected") {
  ExperimentConfig c = small_config(temp_dir("nomodels").string());
  c.matrix = {{Method::nk, CoarseKind::learned}};
  CHECK_THROWS_AS(run_experiment(c), std::invalid_argument);
  c.models = temp_dir("missing_bank").string();
  CHECK_THROWS(run_experiment(c));
}

TEST_CASE("coarse diff") {
  const Decomposition d = decompose(3, 6);
  const CoefficientField homogeneous = generate(PatternSpec{}, d.mesh);
  const Problem prob = make_problem(d, homogeneous, 2.0);
  const CoarseSpace adaptive =
      adaptive_coarse(d, homogeneous, local_tangents(prob, restrict_to_subdomains(d, initial_guess(d))), 100.0);
  const CoarseSpace learned = learned_coarse(d, homogeneous, random_bank(2), LearnedMode::fixed_k, 2);

  const CoarseDiff same = diff_coarse(learned, coarse_from_json(to_json(learned)));
  CHECK(same.identical());
  for (const auto& e : same.edges)
    for (double a : e.principal_angles) CHECK(a < 1e-10);

  const CoarseDiff ab = diff_coarse(learned, adaptive);
  const CoarseDiff ba = diff_coarse(adaptive, learned);
  CHECK_FALSE(ab.identical());
  for (const auto& e : ab.edges) {
    CHECK(e.count_a == 2);
    CHECK(e.count_b == 0);  // homogeneous field: no adaptive constraints
  }

  const CoarseSpace other = learned_coarse(d, generate(PatternSpec{PatternKind::channels_and_us}, d.mesh),
                                           random_bank(2), LearnedMode::fixed_k, 1);
  const CoarseDiff xy = diff_coarse(learned, other), yx = diff_coarse(other, learned);
  for (std::size_t e = 0; e < xy.edges.size(); ++e) {
    REQUIRE(xy.edges[e].principal_angles.size() == yx.edges[e].principal_angles.size());
    for (std::size_t k = 0; k < xy.edges[e].principal_angles.size(); ++k)
      CHECK(xy.edges[e].principal_angles[k] == doctest::Approx(yx.edges[e].principal_angles[k]).epsilon(1e-10));
  }
  CHECK(ba.edges.size() == ab.edges.size());
  CHECK(to_json(ab).at("edge_constraints_b") == 0);

  const Decomposition other_geometry = decompose(3, 8);
  CHECK_THROWS_AS(diff_coarse(learned, vertex_coarse(other_geometry.interface)), std::invalid_argument);
}

TEST_CASE("ml pipeline smoke run") {
  MlPipelineConfig c;
  c.dataset.n_configs = 17;  // 204 edge samples
  c.dataset.elements_per_edge = 8;
  c.dataset.threads = 2;
  c.training.hidden = {16};
  c.training.classifier.epochs = 5;
  c.training.regressor.epochs = 5;
  c.output_dir = temp_dir("pipeline").string();
  const MlPipelineResult r = run_ml_pipeline(c);
  CHECK(r.dataset.samples.size() >= 200);
  CHECK(r.metrics.at("models").size() == 7);
  const auto dir = std::filesystem::path(c.output_dir);
  CHECK(std::filesystem::exists(dir / "dataset.json"));
  CHECK(std::filesystem::exists(dir / "metrics.json"));
  CHECK(std::filesystem::exists(dir / "models" / "classifier.json"));
  CHECK(json::parse(read_file(dir / "metrics.json")) == r.metrics);

  c.output_dir.clear();
  const MlPipelineResult again = run_ml_pipeline(c);
  CHECK(again.metrics == r.metrics);
}

TEST_CASE("shipped configs parse") {
  const std::filesystem::path dir(NLFETI_CONFIG_DIR);
  for (const auto* name : {"table_channels_and_us.json", "table_combs.json"}) {
    const ExperimentConfig c = load_experiment_config((dir / name).string());
    CHECK(c.matrix.size() == 8);
    CHECK(c.subdomains_per_dim == 5);
  }
  const MlPipelineConfig ml = ml_pipeline_config_from_json(json::parse(read_file(dir / "ml.json")));
  CHECK(ml.dataset.n_configs * 12 * ml.dataset.train_fraction >= 4000);
}
