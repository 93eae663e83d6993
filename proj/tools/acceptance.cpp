// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <string>

#include <Eigen/Eigenvalues>

#include "CLI11.hpp"
#include "nlfeti/coarse.hpp"
#include "nlfeti/experiment.hpp"

using namespace nlfeti;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fail]");
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

PatternSpec pattern(PatternKind kind, double contrast = 1e6) {
  PatternSpec p;
  p.kind = kind;
  p.alpha_high = contrast;
  return p;
}

std::vector<SparseMatrix> initial_tangents(const Problem& prob) {
  const auto& d = prob.decomp();
  return local_tangents(prob, restrict_to_subdomains(d, initial_guess(d)));
}

CoarseSpace adaptive_for(const Problem& prob, double tol) {
  return adaptive_coarse(prob.decomp(), prob.field, initial_tangents(prob), tol);
}

Outcome linear_equivalence() {
  Outcome o;
  const auto t0 = Clock::now();
  const Decomposition d = decompose(3, 8);
  for (const auto& spec : {pattern(PatternKind::constant, 1.0), pattern(PatternKind::channels_and_us)}) {
    const Problem prob = make_problem(d, generate(spec, d.mesh), 2.0);
    const Vector ref = direct_reference_solve(prob);
    const CoarseSpace coarse = vertex_coarse(d.interface);
    const DualPrimalSpace space(d, coarse);
    const ScaledJumpOperator scaling(space, prob.field);
    std::vector<Vector> rhs;
    std::vector<SparseMatrix> k;
    for (const auto& l : prob.locals) {
      rhs.push_back(l.load());
      k.push_back(l.tangent(Vector::Zero(l.num_dofs())));
    }
    const auto res = linear_fetidp(space, scaling, k, rhs, 1e-12, 2000);
    const double err = relative_l2(res.solution, ref);
    o.require(res.report.converged && err <= 1e-8,
              std::string(spec.alpha_high == 1.0 ? "alpha=1" : "contrast 1e6") + fmt(" rel L2 %.2e", err));
  }
  const double s = since(t0);
  o.require(s < 5.0, fmt("%.2f s", s));
  return o;
}

Outcome nonlinear_equivalence(const ModelBank& bank) {
  Outcome o;
  const auto t0 = Clock::now();
  const Decomposition d = decompose(3, 8);
  const Problem prob = make_problem(d, generate(pattern(PatternKind::channels_and_us), d.mesh), 4.0);
  SolverSettings tight;
  tight.newton_tol = 1e-12;
  std::vector<std::pair<std::string, Vector>> solutions{{"direct", direct_reference_solve(prob, tight)}};
  const std::vector<CoarseSpace> spaces{vertex_coarse(d.interface), adaptive_for(prob, 100.0),
                                        learned_coarse(d, prob.field, bank, LearnedMode::fixed_k, 2),
                                        learned_coarse(d, prob.field, bank, LearnedMode::classified)};
  const auto nk = nk_fetidp(prob, spaces[0], tight);
  o.require(nk.trace.converged, "NK converged");
  solutions.emplace_back("nk", nk.solution);
  for (const auto& c : spaces) {
    const auto nl = nl_fetidp2(prob, c, tight);
    o.require(nl.trace.converged, "NL2 " + c.label + " converged");
    solutions.emplace_back("nl2 " + c.label, nl.solution);
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < solutions.size(); ++a)
    for (std::size_t b = a + 1; b < solutions.size(); ++b)
      worst = std::max(worst, relative_l2(solutions[a].second, solutions[b].second));
  o.require(worst <= 1e-6, fmt("max pairwise rel L2 %.2e over 6 solutions", worst));
  const double s = since(t0);
  o.require(s < 60.0, fmt("%.1f s", s));
  return o;
}

Outcome tangent_check() {
  Outcome o;
  const Decomposition d = decompose(2, 4);
  const CoefficientField field = generate(pattern(PatternKind::channels_and_us, 1e3), d.mesh);
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> pick(0, 3);
  for (double p : {2.0, 3.0, 4.0}) {
    double worst = 0.0;
    for (int state = 0; state < 20; ++state) {
      const int sd = pick(rng);
      const LocalProblem lp = make_local_problem(d, field, sd, p);
      Vector u(lp.num_dofs()), dir(lp.num_dofs());
      for (int i = 0; i < lp.num_dofs(); ++i) {
        u[i] = normal(rng);
        dir[i] = normal(rng);
      }
      const double h = 1e-6;
      const Vector fd = (lp.residual(u + h * dir) - lp.residual(u - h * dir)) / (2 * h);
      const Vector an = lp.tangent(u) * dir;
      worst = std::max(worst, (fd - an).norm() / an.norm());
    }
    o.require(worst <= 1e-5, fmt("p=%g worst rel err %.2e", p, worst));
  }
  return o;
}

Outcome condition_estimate() {
  Outcome o;
  const Decomposition d = decompose(2, 4);
  for (const auto& spec : {pattern(PatternKind::constant, 1.0), pattern(PatternKind::combs)}) {
    const Problem prob = make_problem(d, generate(spec, d.mesh), 2.0);
    const CoarseSpace coarse = vertex_coarse(d.interface);
    const DualPrimalSpace space(d, coarse);
    const ScaledJumpOperator scaling(space, prob.field);
    const auto local_u = restrict_to_subdomains(d, initial_guess(d));
    const auto tangents = local_tangents(prob, local_u);
    const PartialTangent k(space, tangents);
    const DirichletPreconditioner m(k, scaling);
    const int n = space.num_multipliers();
    Matrix mf(n, n);
    for (int j = 0; j < n; ++j) mf.col(j) = m.apply(k.apply_F(Vector::Unit(n, j)));
    const Vector ev = Eigen::EigenSolver<Matrix>(mf).eigenvalues().real();
    const double dense_cond = ev.maxCoeff() / ev.minCoeff();
    std::vector<Vector> rhs;
    for (std::size_t i = 0; i < local_u.size(); ++i) rhs.push_back(-prob.locals[i].residual(local_u[i]));
    const auto rep = linear_fetidp(space, scaling, tangents, rhs, 1e-10, 1000).report;
    const double rel = std::abs(rep.condition_estimate - dense_cond) / dense_cond;
    const std::string name = spec.alpha_high == 1.0 ? "alpha=1" : "combs";
    o.require(rel <= 0.05, name + fmt(" estimate %.4g vs dense %.4g", rep.condition_estimate, dense_cond));
    o.require(ev.minCoeff() >= 1.0 - 1e-8, name + fmt(" lambda_min %.10f", ev.minCoeff()));
  }
  return o;
}

Outcome adaptive_bound() {
  Outcome o;
  const auto t0 = Clock::now();
  const Decomposition d = decompose(5, 20);
  for (auto kind : {PatternKind::channels_and_us, PatternKind::random_channels}) {
    PatternSpec spec = pattern(kind);
    if (kind == PatternKind::random_channels) spec.seed = 1;
    const Problem prob = make_problem(d, generate(spec, d.mesh), 2.0);
    const auto adaptive = nk_fetidp(prob, adaptive_for(prob, 100.0));
    const auto vertices = nk_fetidp(prob, vertex_coarse(d.interface));
    o.require(adaptive.trace.max_cond <= 100.0, to_string(kind) + fmt(" adaptive cond %.3g", adaptive.trace.max_cond));
    o.require(vertices.trace.max_cond >= 1e3, to_string(kind) + fmt(" vertex cond %.3g", vertices.trace.max_cond));
  }
  const double s = since(t0);
  o.require(s < 600.0, fmt("%.0f s", s));
  return o;
}

Outcome nonlinear_trend() {
  Outcome o;
  const auto t0 = Clock::now();
  const Decomposition d = decompose(5, 20);
  const Problem prob = make_problem(d, generate(pattern(PatternKind::combs), d.mesh), 4.0);
  const auto adaptive = nl_fetidp2(prob, adaptive_for(prob, 100.0));
  const auto vertices = nl_fetidp2(prob, vertex_coarse(d.interface));
  o.require(adaptive.trace.converged && vertices.trace.converged, "both converged");
  o.require(3 * adaptive.trace.outer <= vertices.trace.outer,
            fmt("outer adaptive %g vs vertices %g", adaptive.trace.outer, vertices.trace.outer));
  o.require(3 * adaptive.trace.pcg <= vertices.trace.pcg,
            fmt("PCG adaptive %g vs vertices %g", adaptive.trace.pcg, vertices.trace.pcg));
  const double s = since(t0);
  o.require(s < 1800.0, fmt("%.0f s", s));
  return o;
}

Outcome learned_quality(const ModelBank& bank, const MlPipelineResult& ml) {
  Outcome o;
  o.require(ml.dataset.train.size() >= 4000, fmt("%g training samples", static_cast<double>(ml.dataset.train.size())));
  const auto& families = ml.dataset.config.families;
  o.require(std::find(families.begin(), families.end(), PatternKind::channels_and_us) == families.end(),
            "channels_and_us held out of training");
  const Decomposition d = decompose(5, 20);
  const Problem prob = make_problem(d, generate(pattern(PatternKind::channels_and_us), d.mesh), 4.0);
  const CoarseSpace learned = learned_coarse(d, prob.field, bank, LearnedMode::fixed_k, 2);
  const CoarseSpace adaptive = adaptive_for(prob, 100.0);
  const auto nk_vertices = nk_fetidp(prob, vertex_coarse(d.interface));
  const auto nk_learned = nk_fetidp(prob, learned);
  o.require(nk_learned.trace.max_cond <= nk_vertices.trace.max_cond / 100.0,
            fmt("NK max cond learned %.3g vs vertices %.3g", nk_learned.trace.max_cond, nk_vertices.trace.max_cond));
  const auto nl_learned = nl_fetidp2(prob, learned);
  const auto nl_adaptive = nl_fetidp2(prob, adaptive);
  o.require(nl_learned.trace.converged && nl_adaptive.trace.converged, "NL2 converged");
  o.require(nl_learned.trace.outer <= 2 * nl_adaptive.trace.outer,
            fmt("NL2 outer learned %g vs adaptive %g", nl_learned.trace.outer, nl_adaptive.trace.outer));
  o.require(nl_learned.trace.pcg <= 1.5 * nl_adaptive.trace.pcg,
            fmt("NL2 PCG learned %g vs adaptive %g", nl_learned.trace.pcg, nl_adaptive.trace.pcg));
  return o;
}

Outcome coarse_sizes(const ModelBank& bank) {
  Outcome o;
  const Decomposition d = decompose(5, 20);
  o.require(vertex_coarse(d.interface).size() == 28, fmt("vertices |Pi| %g", vertex_coarse(d.interface).size()));
  for (auto kind : {PatternKind::channels_and_us, PatternKind::combs}) {
    const Problem prob = make_problem(d, generate(pattern(kind), d.mesh), 4.0);
    const std::string name = to_string(kind);
    const int fixed = learned_coarse(d, prob.field, bank, LearnedMode::fixed_k, 2).size();
    o.require(fixed == 108, name + fmt(" learned |Pi| %g", fixed));
    const int classified = learned_coarse(d, prob.field, bank, LearnedMode::classified).size();
    o.require(classified >= 28 && classified <= 108, name + fmt(" classified |Pi| %g", classified));
    const auto results = adaptive_edge_analysis(d, prob.field, initial_tangents(prob), 100.0);
    std::vector<int> oracle;
    bool at_most_two = true;
    for (const auto& r : results) {
      oracle.push_back(std::min(r.count_above_tol, 2));
      at_most_two = at_most_two && r.count_above_tol <= 2;
    }
    const int adaptive = adaptive_coarse_from(d, results, 100.0).size();
    const int with_oracle = learned_coarse_with_counts(d, prob.field, bank, oracle).size();
    if (at_most_two)
      o.require(with_oracle == adaptive, name + fmt(" oracle-labelled |Pi| %g vs adaptive %g", with_oracle, adaptive));
    else
      o.detail += "; " + name + " has an edge with more than 2 adaptive constraints, comparison skipped";
  }
  return o;
}

Outcome ml_metrics(const MlPipelineResult& ml, const MlPipelineConfig& config) {
  Outcome o;
  const double acc = ml.metrics.at("classifier_test_accuracy").get<double>();
  const double within = ml.metrics.at("rank1_fraction_within_0.5").get<double>();
  o.require(acc >= 0.85, fmt("classifier test accuracy %.3f", acc));
  o.require(within >= 0.90, fmt("rank-1 within 0.5: %.3f of %g test samples", within,
                                ml.metrics.at("rank1_test_samples").get<double>()));
  // Determinism on a reduced copy of the same configuration.
  MlPipelineConfig small = config;
  small.output_dir.clear();
  small.dataset.n_configs = 24;
  small.training.classifier.epochs = 3;
  small.training.regressor.epochs = 3;
  const auto a = run_ml_pipeline(small);
  small.dataset.threads = 1;
  const auto b = run_ml_pipeline(small);
  bool same = a.metrics == b.metrics && to_json(a.bank.classifier) == to_json(b.bank.classifier);
  for (int v = 0; v < 2; ++v)
    for (int r = 0; r < 3; ++r)
      same = same && a.bank.regressors[v][r].has_value() == b.bank.regressors[v][r].has_value() &&
             (!a.bank.regressors[v][r] || to_json(*a.bank.regressors[v][r]) == to_json(*b.bank.regressors[v][r]));
  o.require(same, "repeat run bit-identical");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string ml_path = NLFETI_DEFAULT_ML_CONFIG, work = "acceptance_out";
  std::vector<int> only;
  app.add_option("--ml-config", ml_path, "ML pipeline config used for criteria 2 and 7-9")->check(CLI::ExistingFile);
  app.add_option("--work", work, "Directory for the pipeline artifacts");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::optional<MlPipelineResult> ml;
  MlPipelineConfig ml_config;
  if (wanted(2) || wanted(7) || wanted(8) || wanted(9)) {
    std::ifstream in(ml_path);
    ml_config = ml_pipeline_config_from_json(nlohmann::json::parse(in));
    ml_config.output_dir = (std::filesystem::path(work) / "ml").string();
    const auto t0 = Clock::now();
    ml = run_ml_pipeline(ml_config);
    std::printf("ML pipeline: %zu samples, %.0f s, artifacts in %s\n", ml->dataset.samples.size(), since(t0),
                ml_config.output_dir.c_str());
    std::fflush(stdout);
  }

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, linear_equivalence},
      {2, [&] { return nonlinear_equivalence(ml->bank); }},
      {3, tangent_check},
      {4, condition_estimate},
      {5, adaptive_bound},
      {6, nonlinear_trend},
      {7, [&] { return learned_quality(ml->bank, *ml); }},
      {8, [&] { return coarse_sizes(ml->bank); }},
      {9, [&] { return ml_metrics(*ml, ml_config); }},
  };
  bool all = true;
  for (const auto& [id, run] : criteria) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all = all && o.pass;
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
