#include "nlfeti/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>
#include <stdexcept>

#include "nlfeti/coarse.hpp"

namespace nlfeti {

using nlohmann::json;

std::string to_string(Method m) { return m == Method::nk ? "nk" : "nl2"; }

std::string to_string(CoarseKind k) {
  switch (k) {
    case CoarseKind::vertices: return "vertices";
    case CoarseKind::adaptive: return "adaptive";
    case CoarseKind::learned: return "learned";
    case CoarseKind::learned_classified: return "learned_classified";
  }
  return "vertices";
}

Method method_from_string(const std::string& s) {
  if (s == "nk") return Method::nk;
  if (s == "nl2") return Method::nl2;
  throw std::invalid_argument("unknown method '" + s + "' (expected nk or nl2)");
}

CoarseKind coarse_kind_from_string(const std::string& s) {
  for (auto k : {CoarseKind::vertices, CoarseKind::adaptive, CoarseKind::learned, CoarseKind::learned_classified})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown coarse space '" + s + "'");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json to_json(const TrainParams& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"step_size", t.step_size},
          {"final_step_fraction", t.final_step_fraction},
          {"seed", t.seed}};
}

TrainParams train_params_from_json(const json& j, TrainParams t, const std::string& where) {
  check_keys(j, {"epochs", "batch_size", "step_size", "final_step_fraction", "seed"}, where);
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "step_size", t.step_size);
  read(j, "final_step_fraction", t.final_step_fraction);
  read(j, "seed", t.seed);
  return t;
}

json to_json(const SolverSettings& s) {
  return {{"newton_tol", s.newton_tol},   {"inner_tol", s.inner_tol},         {"pcg_tol", s.pcg_tol},
          {"max_outer", s.max_outer},     {"max_inner", s.max_inner},         {"max_pcg", s.max_pcg},
          {"line_search", s.line_search}, {"outer_damping", s.outer_damping}, {"max_damping", s.max_damping},
          {"epsilon_fallback", s.epsilon_fallback}};
}

SolverSettings settings_from_json(const json& j) {
  check_keys(j,
             {"newton_tol", "inner_tol", "pcg_tol", "max_outer", "max_inner", "max_pcg", "line_search",
              "outer_damping", "max_damping", "epsilon_fallback"},
             "tolerances");
  SolverSettings s;
  read(j, "newton_tol", s.newton_tol);
  read(j, "inner_tol", s.inner_tol);
  read(j, "pcg_tol", s.pcg_tol);
  read(j, "max_outer", s.max_outer);
  read(j, "max_inner", s.max_inner);
  read(j, "max_pcg", s.max_pcg);
  read(j, "line_search", s.line_search);
  read(j, "outer_damping", s.outer_damping);
  read(j, "max_damping", s.max_damping);
  read(j, "epsilon_fallback", s.epsilon_fallback);
  return s;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

json to_json(const PatternSpec& p) {
  return {{"kind", to_string(p.kind)},
          {"seed", p.seed ? json(*p.seed) : json(nullptr)},
          {"width", p.width},
          {"density", p.density},
          {"offset", p.offset}};
}

PatternSpec pattern_spec_from_json(const json& j) {
  check_keys(j, {"kind", "seed", "width", "density", "offset"}, "pattern");
  PatternSpec p;
  if (j.contains("kind")) p.kind = pattern_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<std::uint64_t>();
  read(j, "width", p.width);
  read(j, "density", p.density);
  read(j, "offset", p.offset);
  return p;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_keys(j, {"mesh", "problem", "matrix", "tolerances", "models", "output_dir", "seed"}, "config");
  ExperimentConfig c;
  if (j.contains("mesh")) {
    const auto& m = j.at("mesh");
    check_keys(m, {"subdomains", "elements_per_edge"}, "mesh");
    read(m, "subdomains", c.subdomains_per_dim);
    read(m, "elements_per_edge", c.elements_per_edge);
  }
  if (j.contains("problem")) {
    const auto& p = j.at("problem");
    check_keys(p, {"p", "epsilon", "source", "contrast", "pattern"}, "problem");
    read(p, "p", c.p);
    read(p, "epsilon", c.epsilon);
    read(p, "source", c.source);
    read(p, "contrast", c.contrast);
    if (p.contains("pattern")) c.pattern = pattern_spec_from_json(p.at("pattern"));
  }
  c.pattern.alpha_low = 1.0;
  c.pattern.alpha_high = c.contrast;
  if (j.contains("matrix")) {
    if (!j.at("matrix").is_array()) throw std::invalid_argument("matrix: expected an array");
    for (const auto& cell : j.at("matrix")) {
      check_keys(cell, {"method", "coarse", "tol", "k"}, "matrix cell");
      CellSpec s;
      if (!cell.contains("method") || !cell.contains("coarse"))
        throw std::invalid_argument("matrix cell: 'method' and 'coarse' are required");
      s.method = method_from_string(cell.at("method").get<std::string>());
      s.coarse = coarse_kind_from_string(cell.at("coarse").get<std::string>());
      read(cell, "tol", s.tol);
      read(cell, "k", s.k);
      c.matrix.push_back(s);
    }
  }
  if (j.contains("tolerances")) c.settings = settings_from_json(j.at("tolerances"));
  read(j, "models", c.models);
  read(j, "output_dir", c.output_dir);
  read(j, "seed", c.seed);

  if (c.subdomains_per_dim < 2 || c.elements_per_edge < 2)
    throw std::invalid_argument("mesh: need at least 2 subdomains per direction and 2 elements per subdomain edge");
  if (!(c.p >= 2.0)) throw std::invalid_argument("problem: p must be >= 2");
  if (!(c.contrast > 0.0)) throw std::invalid_argument("problem: contrast must be positive");
  for (const auto& cell : c.matrix) {
    if (cell.coarse == CoarseKind::adaptive && !(cell.tol > 0.0))
      throw std::invalid_argument("matrix cell: adaptive TOL must be positive");
    if (cell.coarse == CoarseKind::learned && (cell.k < 0 || cell.k > 3))
      throw std::invalid_argument("matrix cell: learned k must be in 0..3");
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json matrix = json::array();
  for (const auto& cell : c.matrix)
    matrix.push_back({{"method", to_string(cell.method)}, {"coarse", to_string(cell.coarse)}, {"tol", cell.tol},
                      {"k", cell.k}});
  return {{"mesh", {{"subdomains", c.subdomains_per_dim}, {"elements_per_edge", c.elements_per_edge}}},
          {"problem",
           {{"p", c.p}, {"epsilon", c.epsilon}, {"source", c.source}, {"contrast", c.contrast},
            {"pattern", to_json(c.pattern)}}},
          {"matrix", matrix},
          {"tolerances", to_json(c.settings)},
          {"models", c.models},
          {"output_dir", c.output_dir},
          {"seed", c.seed}};
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return experiment_config_from_json(json::parse(in));
}

std::vector<CellSpec> full_matrix(double tol) {
  std::vector<CellSpec> out;
  for (auto m : {Method::nk, Method::nl2})
    for (auto k : {CoarseKind::vertices, CoarseKind::adaptive, CoarseKind::learned, CoarseKind::learned_classified})
      out.push_back({m, k, tol, 2});
  return out;
}

bool ExperimentReport::any_failed() const {
  return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return !c.report; });
}

std::string cell_coarse_label(const CellSpec& cell) {
  switch (cell.coarse) {
    case CoarseKind::vertices: return "vertices";
    case CoarseKind::adaptive: return "adaptive(TOL=" + format_number(cell.tol) + ")";
    case CoarseKind::learned: return "learned(k=" + std::to_string(cell.k) + ")";
    case CoarseKind::learned_classified: return "learned_classified";
  }
  return "vertices";
}

CoarseSpace build_coarse(const CellSpec& cell, const Problem& problem, const ModelBank* bank) {
  const Decomposition& d = problem.decomp();
  CoarseSpace c;
  switch (cell.coarse) {
    case CoarseKind::vertices: c = vertex_coarse(d.interface); break;
    case CoarseKind::adaptive:
      c = adaptive_coarse(d, problem.field, local_tangents(problem, restrict_to_subdomains(d, initial_guess(d))),
                          cell.tol);
      break;
    case CoarseKind::learned:
    case CoarseKind::learned_classified:
      if (!bank) throw std::invalid_argument("learned coarse space requested without models");
      c = learned_coarse(d, problem.field, *bank,
                         cell.coarse == CoarseKind::learned ? LearnedMode::fixed_k : LearnedMode::classified, cell.k);
      break;
  }
  c.label = cell_coarse_label(cell);
  return c;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  ExperimentReport rep;
  rep.config = config;
  const Decomposition d = decompose(config.subdomains_per_dim, config.elements_per_edge);
  PatternSpec spec = config.pattern;
  spec.alpha_low = 1.0;
  spec.alpha_high = config.contrast;
  if (!spec.seed) spec.seed = config.seed;
  Problem problem = make_problem(d, generate(spec, d.mesh), config.p, config.epsilon);
  problem.set_source(config.source);

  std::optional<ModelBank> bank;
  const bool needs_models = std::any_of(config.matrix.begin(), config.matrix.end(), [](const CellSpec& c) {
    return c.coarse == CoarseKind::learned || c.coarse == CoarseKind::learned_classified;
  });
  if (needs_models) {
    if (config.models.empty()) throw std::invalid_argument("config: learned coarse spaces need 'models'");
    bank = load_bank(config.models);
  }

  std::map<std::string, std::size_t> built;
  std::map<std::string, std::string> build_errors;
  for (const auto& cell : config.matrix) {
    CellResult result;
    result.cell = cell;
    const std::string label = cell_coarse_label(cell);
    try {
      if (auto err = build_errors.find(label); err != build_errors.end()) throw std::runtime_error(err->second);
      if (!built.count(label)) {
        try {
          rep.coarse_spaces.emplace_back(label, build_coarse(cell, problem, bank ? &*bank : nullptr));
          built[label] = rep.coarse_spaces.size() - 1;
        } catch (const std::exception& e) {
          build_errors[label] = std::string("coarse space: ") + e.what();
          throw std::runtime_error(build_errors[label]);
        }
      }
      const CoarseSpace& coarse = rep.coarse_spaces[built[label]].second;
      result.report = cell.method == Method::nk ? nk_fetidp(problem, coarse, config.settings)
                                                : nl_fetidp2(problem, coarse, config.settings);
      if (!result.report->trace.converged) {
        result.error = "not converged within max_outer";
        result.report.reset();
      }
    } catch (const std::exception& e) {
      result.error = e.what();
    }
    rep.cells.push_back(std::move(result));
  }
  return rep;
}

const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> cols{"method",  "coarse",  "coarse_size", "outer_it", "inner_it",
                                             "pcg_it",  "min_cond", "max_cond",   "seconds",  "status"};
  return cols;
}

const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> cols{"method", "coarse",     "step",   "residual_norm",
                                             "inner_it", "step_length", "pcg_it", "cond"};
  return cols;
}

namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out + "\n";
}

std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

std::string table_csv(const ExperimentReport& r) {
  std::string out = join(table_columns());
  for (const auto& c : r.cells) {
    const std::string method = to_string(c.cell.method);
    const std::string coarse = csv_field(cell_coarse_label(c.cell));
    if (!c.report) {
      out += join({method, coarse, "", "", "", "", "", "", "", csv_field("failed: " + c.error)});
      continue;
    }
    const auto& t = c.report->trace;
    out += join({method, coarse, std::to_string(c.report->coarse_size), std::to_string(t.outer),
                 c.cell.method == Method::nl2 ? std::to_string(t.inner) : std::string("-"), std::to_string(t.pcg),
                 format_number(t.min_cond), format_number(t.max_cond), format_number(c.report->seconds), "ok"});
  }
  return out;
}

std::string trace_csv(const ExperimentReport& r) {
  std::string out = join(trace_columns());
  for (const auto& c : r.cells) {
    if (!c.report) continue;
    const std::string method = to_string(c.cell.method);
    const std::string coarse = csv_field(cell_coarse_label(c.cell));
    const auto& steps = c.report->trace.steps;
    for (std::size_t s = 0; s < steps.size(); ++s)
      out += join({method, coarse, std::to_string(s + 1), format_number(steps[s].residual_norm),
                   c.cell.method == Method::nl2 ? std::to_string(steps[s].inner_iterations) : std::string("-"),
                   format_number(steps[s].step_length), std::to_string(steps[s].pcg.iterations),
                   format_number(steps[s].pcg.condition_estimate)});
  }
  return out;
}

json to_json(const SolveReport& r) {
  json steps = json::array();
  for (const auto& s : r.trace.steps)
    steps.push_back({{"residual_norm", s.residual_norm},
                     {"inner_iterations", s.inner_iterations},
                     {"step_length", s.step_length},
                     {"pcg_iterations", s.pcg.iterations},
                     {"pcg_converged", s.pcg.converged},
                     {"condition_estimate", s.pcg.condition_estimate},
                     {"lambda_min", s.pcg.lambda_min},
                     {"lambda_max", s.pcg.lambda_max}});
  return {{"method", r.method},
          {"coarse", r.coarse_label},
          {"coarse_size", r.coarse_size},
          {"outer_iterations", r.trace.outer},
          {"inner_iterations", r.trace.inner},
          {"initial_inner_iterations", r.trace.initial_inner},
          {"pcg_iterations", r.trace.pcg},
          {"min_cond", r.trace.min_cond},
          {"max_cond", r.trace.max_cond},
          {"converged", r.trace.converged},
          {"epsilon_fallback", r.epsilon_fallback},
          {"seconds", r.seconds},
          {"solution_norm", r.solution.norm()},
          {"steps", steps}};
}

json to_json(const ExperimentReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json cell = {{"method", to_string(c.cell.method)}, {"coarse", cell_coarse_label(c.cell)}};
    if (c.report) {
      cell["status"] = "ok";
      cell["report"] = to_json(*c.report);
    } else {
      cell["status"] = "failed";
      cell["error"] = c.error;
    }
    cells.push_back(std::move(cell));
  }
  return {{"config", to_json(r.config)}, {"cells", cells}, {"failed", r.any_failed()}};
}

namespace {

std::string file_safe(const std::string& label) {
  std::string out;
  for (char c : label) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' ? c : '_';
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace

void write_experiment_outputs(const ExperimentReport& r) {
  const std::filesystem::path dir(r.config.output_dir);
  std::filesystem::create_directories(dir);
  write_file(dir / "table.csv", table_csv(r));
  write_file(dir / "trace.csv", trace_csv(r));
  write_file(dir / "report.json", to_json(r).dump(2) + "\n");
  for (const auto& [label, space] : r.coarse_spaces)
    write_file(dir / ("coarse_" + file_safe(label) + ".json"), to_json(space).dump() + "\n");
}

ExperimentReport run_and_write(const ExperimentConfig& config) {
  ExperimentReport r = run_experiment(config);
  write_experiment_outputs(r);
  return r;
}

MlPipelineConfig ml_pipeline_config_from_json(const json& j) {
  check_keys(j, {"dataset", "training", "output_dir"}, "ml config");
  MlPipelineConfig c;
  if (j.contains("dataset")) c.dataset = dataset_config_from_json(j.at("dataset"));
  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t, {"hidden", "classifier", "regressor", "augment"}, "training");
    read(t, "hidden", c.training.hidden);
    read(t, "augment", c.training.augment);
    if (t.contains("classifier"))
      c.training.classifier = train_params_from_json(t.at("classifier"), c.training.classifier, "training.classifier");
    if (t.contains("regressor"))
      c.training.regressor = train_params_from_json(t.at("regressor"), c.training.regressor, "training.regressor");
  }
  read(j, "output_dir", c.output_dir);
  return c;
}

json to_json(const MlPipelineConfig& c) {
  return {{"dataset", to_json(c.dataset)},
          {"training",
           {{"hidden", c.training.hidden},
            {"classifier", to_json(c.training.classifier)},
            {"regressor", to_json(c.training.regressor)},
            {"augment", c.training.augment}}},
          {"output_dir", c.output_dir}};
}

json evaluate_bank(const ModelBank& bank, const Dataset& data) {
  json models = json::array();
  models.push_back({{"name", "classifier"},
                    {"trained", true},
                    {"test_samples", data.test.size()},
                    {"test_accuracy", evaluate_classifier(bank.classifier, data, data.test)}});
  int rank1_samples = 0;
  double rank1_within = 0.0;
  for (auto v : {DirichletVariant::touching, DirichletVariant::interior})
    for (int r = 1; r <= 3; ++r) {
      const ModelRole role{false, r, v};
      std::string name = model_file_name(role);
      name = name.substr(0, name.size() - 5);  // drop ".json"
      const bool trained = bank.regressors[v == DirichletVariant::touching ? 0 : 1][r - 1].has_value();
      json entry = {{"name", name}, {"rank", r}, {"variant", to_string(v)}, {"trained", trained}};
      if (trained) {
        const RegressionEval ev = evaluate_regressor(bank, data, data.test, v, r);
        entry["test_samples"] = ev.samples;
        entry["mean_error"] = ev.mean_error;
        entry["fraction_within_0.5"] = ev.fraction_within;
        if (r == 1) {
          rank1_samples += ev.samples;
          rank1_within += ev.fraction_within * ev.samples;
        }
      }
      models.push_back(std::move(entry));
    }
  return {{"models", models},
          {"classifier_test_accuracy", models[0]["test_accuracy"]},
          {"rank1_test_samples", rank1_samples},
          {"rank1_fraction_within_0.5", rank1_samples ? rank1_within / rank1_samples : 0.0}};
}

MlPipelineResult run_ml_pipeline(const MlPipelineConfig& config) {
  MlPipelineResult out;
  out.dataset = generate_dataset(config.dataset);
  BankMetrics training;
  out.bank = train_bank(out.dataset, config.training, &training);
  out.metrics = evaluate_bank(out.bank, out.dataset);
  out.metrics["samples"] = out.dataset.samples.size();
  out.metrics["train_samples"] = out.dataset.train.size();
  out.metrics["validation_samples"] = out.dataset.validation.size();
  out.metrics["skipped_configs"] = out.dataset.skipped_configs;
  out.metrics["classifier_validation_accuracy"] = training.classifier.validation_accuracy;
  if (!config.output_dir.empty()) {
    const std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    save_dataset(out.dataset, (dir / "dataset.json").string());
    save_bank(out.bank, (dir / "models").string());
    write_file(dir / "metrics.json", out.metrics.dump(2) + "\n");
  }
  return out;
}

bool CoarseDiff::identical(double angle_tol) const {
  if (!same_vertices) return false;
  for (const auto& e : edges) {
    if (e.count_a != e.count_b) return false;
    for (double a : e.principal_angles)
      if (a > angle_tol) return false;
  }
  return true;
}

namespace {

// Principal angles between span(a) and span(b), computed from cosines and
// sines so that small angles keep full relative accuracy.
std::vector<double> principal_angles(const std::vector<Vector>& a, const std::vector<Vector>& b, int n) {
  if (a.empty() || b.empty()) return {};
  auto basis = [n](const std::vector<Vector>& vs) {
    Matrix m(n, static_cast<Eigen::Index>(vs.size()));
    for (std::size_t k = 0; k < vs.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = vs[k];
    Eigen::HouseholderQR<Matrix> qr(m);
    return Matrix(qr.householderQ() * Matrix::Identity(n, m.cols()));
  };
  Matrix x = basis(a), y = basis(b);
  if (x.cols() > y.cols()) std::swap(x, y);
  const Matrix c = y.transpose() * x;
  const Matrix s = x - y * c;
  const Vector cosines = Eigen::JacobiSVD<Matrix>(c).singularValues();  // descending
  Vector sines = Eigen::JacobiSVD<Matrix>(s).singularValues();
  std::sort(sines.data(), sines.data() + sines.size());
  std::vector<double> out;
  for (Eigen::Index k = 0; k < x.cols(); ++k) out.push_back(std::atan2(sines[k], cosines[k]));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

CoarseDiff diff_coarse(const CoarseSpace& a, const CoarseSpace& b) {
  if (a.edges.size() != b.edges.size() || a.edge_sizes != b.edge_sizes)
    throw std::invalid_argument("diff_coarse: coarse spaces belong to different geometries");
  CoarseDiff d;
  d.same_vertices = a.vertex_nodes == b.vertex_nodes;
  for (std::size_t e = 0; e < a.edges.size(); ++e) {
    EdgeDiff ed;
    ed.edge = static_cast<int>(e);
    ed.count_a = a.edges[e].count();
    ed.count_b = b.edges[e].count();
    ed.principal_angles = principal_angles(a.edges[e].vectors, b.edges[e].vectors, a.edge_sizes[e]);
    d.edges.push_back(std::move(ed));
  }
  return d;
}

json to_json(const CoarseDiff& d) {
  json edges = json::array();
  int total_a = 0, total_b = 0;
  double max_angle = 0.0;
  for (const auto& e : d.edges) {
    edges.push_back({{"edge", e.edge}, {"count_a", e.count_a}, {"count_b", e.count_b},
                     {"principal_angles", e.principal_angles}});
    total_a += e.count_a;
    total_b += e.count_b;
    for (double a : e.principal_angles) max_angle = std::max(max_angle, a);
  }
  return {{"same_vertices", d.same_vertices}, {"identical", d.identical()}, {"edge_constraints_a", total_a},
          {"edge_constraints_b", total_b},    {"max_angle", max_angle},     {"edges", edges}};
}

}  // namespace nlfeti
