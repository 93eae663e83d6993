#include "nlfeti/learned.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "nlfeti/coarse.hpp"
#include "nlfeti/solvers.hpp"

namespace nlfeti {

nlohmann::json to_json(const DatasetConfig& c) {
  std::vector<std::string> families;
  for (auto f : c.families) families.push_back(to_string(f));
  return {{"n_configs", c.n_configs},
          {"families", families},
          {"tol", c.tol},
          {"seed", c.seed},
          {"subdomains_per_dim", c.subdomains_per_dim},
          {"elements_per_edge", c.elements_per_edge},
          {"resolution", c.resolution},
          {"n_out", c.n_out},
          {"contrast", c.contrast},
          {"density_min", c.density_min},
          {"density_max", c.density_max},
          {"width_min", c.width_min},
          {"width_max", c.width_max},
          {"train_fraction", c.train_fraction},
          {"validation_fraction", c.validation_fraction},
          {"threads", c.threads}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw std::invalid_argument("dataset config: unknown key '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_configs", c.n_configs);
  if (j.contains("families")) {
    c.families.clear();
    for (const auto& f : j.at("families")) c.families.push_back(pattern_kind_from_string(f.get<std::string>()));
  }
  get("tol", c.tol);
  get("seed", c.seed);
  get("subdomains_per_dim", c.subdomains_per_dim);
  get("elements_per_edge", c.elements_per_edge);
  get("resolution", c.resolution);
  get("n_out", c.n_out);
  get("contrast", c.contrast);
  get("density_min", c.density_min);
  get("density_max", c.density_max);
  get("width_min", c.width_min);
  get("width_max", c.width_max);
  get("train_fraction", c.train_fraction);
  get("validation_fraction", c.validation_fraction);
  get("threads", c.threads);
  return c;
}

Vector resample_linear(const Vector& values, int n_target) {
  const auto n = static_cast<int>(values.size());
  if (n < 1 || n_target < 1) throw std::invalid_argument("resample_linear: empty lattice");
  Vector out(n_target);
  if (n == 1) {
    out.setConstant(values[0]);
    return out;
  }
  for (int k = 0; k < n_target; ++k) {
    // Position in source index units: source point j sits at (j + 1) / (n + 1).
    const double s = static_cast<double>(k + 1) * (n + 1) / (n_target + 1) - 1.0;
    const int j = std::clamp(static_cast<int>(std::floor(s)), 0, n - 2);
    const double t = s - j;
    out[k] = (1.0 - t) * values[j] + t * values[j + 1];
  }
  return out;
}

Vector interpolate_to_edge(const Vector& lattice_values, const Edge& edge) {
  if (edge.nodes.empty()) throw std::invalid_argument("interpolate_to_edge: edge has no interior nodes");
  Vector v = resample_linear(lattice_values, static_cast<int>(edge.nodes.size()));
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

namespace {

// Leading constraints on the output lattice, normalized and sign-fixed.
Vector to_lattice(const Vector& constraint, int n_out) {
  Vector v = resample_linear(constraint, n_out);
  v.normalize();
  return sign_fixed(v);
}

std::vector<EdgeSample> generate_config(const DatasetConfig& cfg, const Decomposition& d, int index) {
  std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(index)};
  std::mt19937_64 rng(seq);
  PatternSpec spec;
  spec.kind = cfg.families[std::uniform_int_distribution<std::size_t>(0, cfg.families.size() - 1)(rng)];
  spec.density = std::uniform_real_distribution<double>(cfg.density_min, cfg.density_max)(rng);
  spec.width = std::uniform_int_distribution<int>(cfg.width_min, cfg.width_max)(rng);
  spec.offset = std::uniform_int_distribution<int>(0, cfg.elements_per_edge - 1)(rng);
  spec.alpha_low = 1.0;
  spec.alpha_high = cfg.contrast;
  spec.seed = rng();

  Problem prob = make_problem(d, generate(spec, d.mesh), 2.0);
  const auto tangents = local_tangents(prob, restrict_to_subdomains(d, initial_guess(d)));
  const auto results = adaptive_edge_analysis(d, prob.field, tangents, cfg.tol, 0);
  std::vector<EdgeSample> out;
  for (const auto& r : results) {
    const Edge& e = d.interface.edges[r.edge];
    EdgeSample s;
    s.input = sample_on_grid(prob.field, d.mesh, e, cfg.resolution);
    s.touches_dirichlet = e.touches_dirichlet;
    s.label_class = std::min(r.count_above_tol, 2);
    const int n_targets = std::min({r.count_above_tol, 3, static_cast<int>(r.constraints.size())});
    for (int k = 0; k < n_targets; ++k) s.targets.push_back(to_lattice(r.constraints[k], cfg.n_out));
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(3, r.eigenvalues.size()); ++k)
      s.eigenvalues.push_back(r.eigenvalues[k]);
    s.config = index;
    out.push_back(std::move(s));
  }
  return out;
}

void split(Dataset& data) {
  const DatasetConfig& cfg = data.config;
  std::vector<int> configs(static_cast<std::size_t>(cfg.n_configs));
  std::iota(configs.begin(), configs.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  std::shuffle(configs.begin(), configs.end(), rng);
  const int n_train = static_cast<int>(std::lround(cfg.train_fraction * cfg.n_configs));
  const int n_val = static_cast<int>(std::lround(cfg.validation_fraction * cfg.n_configs));
  std::vector<int> which(configs.size(), 2);
  for (int k = 0; k < cfg.n_configs; ++k) which[configs[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  data.train.clear();
  data.validation.clear();
  data.test.clear();
  for (int i = 0; i < static_cast<int>(data.samples.size()); ++i) {
    const int w = which.at(data.samples[i].config);
    (w == 0 ? data.train : (w == 1 ? data.validation : data.test)).push_back(i);
  }
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& config) {
  if (config.n_configs < 1) throw std::invalid_argument("generate_dataset: n_configs must be >= 1");
  if (config.families.empty()) throw std::invalid_argument("generate_dataset: no pattern families");
  if (!(config.tol > 0.0)) throw std::invalid_argument("generate_dataset: TOL must be positive");
  if (config.train_fraction < 0.0 || config.validation_fraction < 0.0 ||
      config.train_fraction + config.validation_fraction > 1.0)
    throw std::invalid_argument("generate_dataset: invalid split fractions");
  if (config.width_min < 1 || config.width_max < config.width_min || !(config.density_min > 0.0) ||
      config.density_max < config.density_min)
    throw std::invalid_argument("generate_dataset: invalid pattern ranges");

  const Decomposition d = decompose(config.subdomains_per_dim, config.elements_per_edge);
  std::vector<std::vector<EdgeSample>> per_config(static_cast<std::size_t>(config.n_configs));
  std::vector<char> failed(per_config.size(), 0);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < config.n_configs; i = next++) {
      try {
        per_config[i] = generate_config(config, d, i);
      } catch (const std::exception&) {
        failed[i] = 1;
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int n_threads = std::min(config.n_configs, config.threads > 0 ? config.threads : static_cast<int>(hw));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  Dataset data;
  data.config = config;
  for (std::size_t i = 0; i < per_config.size(); ++i) {
    data.skipped_configs += failed[i];
    for (auto& s : per_config[i]) data.samples.push_back(std::move(s));
  }
  if (data.skipped_configs > 0)
    std::clog << "generate_dataset: skipped " << data.skipped_configs << " configuration(s) after solver failures\n";
  split(data);
  return data;
}

nlohmann::json to_json(const Dataset& d) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : d.samples) {
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : s.targets) targets.push_back(std::vector<double>(t.data(), t.data() + t.size()));
    samples.push_back({{"input", s.input},
                       {"touches_dirichlet", s.touches_dirichlet},
                       {"label_class", s.label_class},
                       {"targets", targets},
                       {"eigenvalues", s.eigenvalues},
                       {"config", s.config}});
  }
  return {{"format", "nlfeti-dataset"},
          {"version", 1},
          {"config", to_json(d.config)},
          {"skipped_configs", d.skipped_configs},
          {"train", d.train},
          {"validation", d.validation},
          {"test", d.test},
          {"samples", samples}};
}

Dataset dataset_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw std::invalid_argument("dataset file: missing or unsupported version");
  Dataset d;
  d.config = dataset_config_from_json(j.at("config"));
  d.skipped_configs = j.at("skipped_configs").get<int>();
  d.train = j.at("train").get<std::vector<int>>();
  d.validation = j.at("validation").get<std::vector<int>>();
  d.test = j.at("test").get<std::vector<int>>();
  for (const auto& js : j.at("samples")) {
    EdgeSample s;
    s.input = js.at("input").get<std::vector<double>>();
    s.touches_dirichlet = js.at("touches_dirichlet").get<bool>();
    s.label_class = js.at("label_class").get<int>();
    for (const auto& t : js.at("targets")) {
      const auto v = t.get<std::vector<double>>();
      s.targets.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    s.eigenvalues = js.at("eigenvalues").get<std::vector<double>>();
    s.config = js.at("config").get<int>();
    d.samples.push_back(std::move(s));
  }
  const auto n = static_cast<int>(d.samples.size());
  for (const auto* split : {&d.train, &d.validation, &d.test})
    for (int i : *split)
      if (i < 0 || i >= n) throw std::invalid_argument("dataset file: split index out of range");
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  out << to_json(d).dump() << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  return dataset_from_json(nlohmann::json::parse(in));
}

const Mlp& ModelBank::regressor(DirichletVariant v, int rank) const {
  if (rank < 1 || rank > 3) throw std::invalid_argument("regressor rank must be 1, 2 or 3");
  const auto& slot = regressors[v == DirichletVariant::touching ? 0 : 1][rank - 1];
  if (!slot)
    throw std::runtime_error("no regressor for rank " + std::to_string(rank) + " (" + to_string(v) + " edges)");
  return *slot;
}

std::string model_file_name(const ModelRole& role) {
  if (role.classifier) return "classifier.json";
  return "regressor_rank" + std::to_string(role.rank) + "_" + to_string(role.variant) + ".json";
}

void save_bank(const ModelBank& bank, const std::string& directory) {
  std::filesystem::create_directories(directory);
  const std::filesystem::path dir(directory);
  save_model(bank.classifier, (dir / model_file_name(bank.classifier.role)).string());
  for (const auto& variant : bank.regressors)
    for (const auto& m : variant)
      if (m) save_model(*m, (dir / model_file_name(m->role)).string());
}

ModelBank load_bank(const std::string& directory) {
  const std::filesystem::path dir(directory);
  ModelBank bank;
  bank.classifier = load_model((dir / model_file_name(ModelRole{})).string());
  if (!bank.classifier.role.classifier) throw std::runtime_error("classifier.json does not hold a classifier");
  for (auto v : {DirichletVariant::touching, DirichletVariant::interior})
    for (int r = 1; r <= 3; ++r) {
      const ModelRole role{false, r, v};
      const auto path = dir / model_file_name(role);
      if (!std::filesystem::exists(path)) continue;
      Mlp m = load_model(path.string());
      if (!(m.role == role)) throw std::runtime_error(path.string() + ": role does not match file name");
      if (m.resolution != bank.classifier.resolution)
        throw std::runtime_error(path.string() + ": sampling resolution differs from the classifier's");
      bank.regressors[v == DirichletVariant::touching ? 0 : 1][r - 1] = std::move(m);
    }
  return bank;
}

namespace {

Vector as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

int predict_class(const Mlp& classifier, const std::vector<double>& input) {
  if (static_cast<int>(input.size()) != classifier.input_size())
    throw std::invalid_argument("predict_class: input length mismatch");
  Eigen::Index arg = 0;
  classifier.forward_one(as_vector(input)).maxCoeff(&arg);
  return static_cast<int>(arg);
}

std::vector<Vector> predict_constraints(const ModelBank& bank, const std::vector<double>& input,
                                        bool touches_dirichlet, int k) {
  if (k < 0 || k > 3) throw std::invalid_argument("predict_constraints: k must be in 0..3");
  const auto variant = touches_dirichlet ? DirichletVariant::touching : DirichletVariant::interior;
  const Vector x = as_vector(input);
  std::vector<Vector> out;
  for (int r = 1; r <= k; ++r) {
    Vector y = bank.regressor(variant, r).forward_one(x);
    const double norm = y.norm();
    if (norm > 0.0) y /= norm;
    out.push_back(sign_fixed(y));
  }
  return out;
}

CoarseSpace learned_coarse_with_counts(const Decomposition& d, const CoefficientField& field, const ModelBank& bank,
                                       const std::vector<int>& counts) {
  if (counts.size() != d.interface.edges.size())
    throw std::invalid_argument("learned_coarse: one count per edge required");
  std::vector<std::vector<CandidateConstraint>> cands(d.interface.edges.size());
  for (const auto& e : d.interface.edges) {
    if (counts[e.id] == 0) continue;
    const auto input = sample_on_grid(field, d.mesh, e, bank.resolution());
    const auto lattice = predict_constraints(bank, input, e.touches_dirichlet, counts[e.id]);
    for (std::size_t r = 0; r < lattice.size(); ++r) {
      ConstraintProvenance p;
      p.source = ConstraintSource::learned;
      p.rank = static_cast<int>(r) + 1;
      cands[e.id].push_back({interpolate_to_edge(lattice[r], e), p});
    }
  }
  return manual_coarse(d.interface, cands);
}

CoarseSpace learned_coarse(const Decomposition& d, const CoefficientField& field, const ModelBank& bank,
                           LearnedMode mode, int k) {
  std::vector<int> counts(d.interface.edges.size(), k);
  if (mode == LearnedMode::classified) {
    for (const auto& e : d.interface.edges)
      counts[e.id] = std::min(2, predict_class(bank.classifier, sample_on_grid(field, d.mesh, e, bank.resolution())));
  } else if (k < 0 || k > 3) {
    throw std::invalid_argument("learned_coarse: k must be in 0..3");
  }
  CoarseSpace c = learned_coarse_with_counts(d, field, bank, counts);
  c.label = mode == LearnedMode::classified ? "learned_classified" : "learned";
  return c;
}

namespace {

Eigen::MatrixXd input_matrix(const Dataset& data, const std::vector<int>& idx) {
  const int n_in = 2 * data.config.resolution * data.config.resolution;
  Eigen::MatrixXd x(n_in, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& in = data.samples[idx[k]].input;
    if (static_cast<int>(in.size()) != n_in) throw std::invalid_argument("dataset: input length mismatch");
    x.col(static_cast<Eigen::Index>(k)) = as_vector(in);
  }
  return x;
}

std::vector<int> restrict_to(const Dataset& data, const std::vector<int>& idx, DirichletVariant variant, int rank) {
  std::vector<int> out;
  for (int i : idx) {
    const auto& s = data.samples[i];
    if (s.touches_dirichlet == (variant == DirichletVariant::touching) && static_cast<int>(s.targets.size()) >= rank)
      out.push_back(i);
  }
  return out;
}

// Lattice index is side * res^2 + along * res + normal, with (side, normal)
// running continuously across the edge. Mirroring across the edge line swaps
// the subdomains and keeps the constraint; reversing the edge direction
// reverses it and is only a symmetry away from the Dirichlet end.
Eigen::VectorXd mirror_input(const Eigen::VectorXd& in, int res, bool across, bool along) {
  Eigen::VectorXd out(in.size());
  for (int g = 0; g < 2 * res; ++g)
    for (int b = 0; b < res; ++b) {
      const int gs = across ? 2 * res - 1 - g : g;
      const int bs = along ? res - 1 - b : b;
      out((g / res) * res * res + b * res + g % res) = in((gs / res) * res * res + bs * res + gs % res);
    }
  return out;
}

std::vector<int> hidden_chain(int n_in, const std::vector<int>& hidden, int n_out) {
  std::vector<int> sizes{n_in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(n_out);
  return sizes;
}

}  // namespace

Mlp train_regressor_for(const Dataset& data, DirichletVariant variant, int rank, const BankTraining& spec,
                        TrainMetrics* metrics) {
  const auto train = restrict_to(data, data.train, variant, rank);
  if (train.empty())
    throw std::invalid_argument("train: no training samples with rank " + std::to_string(rank) + " targets on " +
                                to_string(variant) + " edges");
  const auto val = restrict_to(data, data.validation, variant, rank);
  const int n_in = 2 * data.config.resolution * data.config.resolution;
  auto targets = [&](const std::vector<int>& idx) {
    Eigen::MatrixXd y(data.config.n_out, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) y.col(static_cast<Eigen::Index>(k)) = data.samples[idx[k]].targets[rank - 1];
    return y;
  };
  TrainParams params = spec.regressor;
  params.seed += static_cast<std::uint64_t>(10 * rank + (variant == DirichletVariant::touching ? 1 : 2));
  Mlp m = make_mlp(hidden_chain(n_in, spec.hidden, data.config.n_out), Activation::identity, params.seed);
  m.role = {false, rank, variant};
  m.resolution = data.config.resolution;
  m.n_out = data.config.n_out;
  Eigen::MatrixXd x = input_matrix(data, train);
  Eigen::MatrixXd y = targets(train);
  if (spec.augment) {
    const int res = data.config.resolution;
    const int copies = variant == DirichletVariant::interior ? 4 : 2;
    const Eigen::Index n = x.cols();
    Eigen::MatrixXd xa(x.rows(), copies * n), ya(y.rows(), copies * n);
    for (int c = 0; c < copies; ++c)
      for (Eigen::Index k = 0; k < n; ++k) {
        const bool across = c % 2 == 1, along = c >= 2;
        xa.col(c * n + k) = mirror_input(x.col(k), res, across, along);
        ya.col(c * n + k) = along ? Eigen::VectorXd(y.col(k).reverse()) : Eigen::VectorXd(y.col(k));
      }
    x = std::move(xa);
    y = std::move(ya);
  }
  const TrainMetrics tm = train_regressor(m, x, y, input_matrix(data, val), targets(val), params);
  if (metrics) *metrics = tm;
  return m;
}

ModelBank train_bank(const Dataset& data, const BankTraining& spec, BankMetrics* metrics) {
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  const int n_in = 2 * data.config.resolution * data.config.resolution;
  auto labels = [&](const std::vector<int>& idx) {
    std::vector<int> out;
    for (int i : idx) out.push_back(data.samples[i].label_class);
    return out;
  };
  ModelBank bank;
  bank.classifier = make_mlp(hidden_chain(n_in, spec.hidden, 3), Activation::softmax, spec.classifier.seed);
  bank.classifier.resolution = data.config.resolution;
  bank.classifier.n_out = data.config.n_out;
  const TrainMetrics cm = train_classifier(bank.classifier, input_matrix(data, data.train), labels(data.train),
                                           input_matrix(data, data.validation), labels(data.validation),
                                           spec.classifier);
  if (metrics) metrics->classifier = cm;
  for (auto v : {DirichletVariant::touching, DirichletVariant::interior})
    for (int r = 1; r <= 3; ++r) {
      const int vi = v == DirichletVariant::touching ? 0 : 1;
      if (restrict_to(data, data.train, v, r).empty()) continue;
      TrainMetrics tm;
      bank.regressors[vi][r - 1] = train_regressor_for(data, v, r, spec, &tm);
      if (metrics) metrics->regressors[vi][r - 1] = tm;
    }
  return bank;
}

RegressionEval evaluate_regressor(const ModelBank& bank, const Dataset& data, const std::vector<int>& indices,
                                  DirichletVariant variant, int rank, double threshold) {
  RegressionEval ev;
  int within = 0;
  double total = 0.0;
  for (int i : indices) {
    const auto& s = data.samples.at(i);
    if (s.touches_dirichlet != (variant == DirichletVariant::touching)) continue;
    if (static_cast<int>(s.targets.size()) < rank) continue;
    const auto pred = predict_constraints(bank, s.input, s.touches_dirichlet, rank).back();
    const auto& y = s.targets[rank - 1];
    const double err = std::min((pred - y).norm(), (pred + y).norm());
    total += err;
    within += err <= threshold;
    ++ev.samples;
  }
  if (ev.samples > 0) {
    ev.mean_error = total / ev.samples;
    ev.fraction_within = static_cast<double>(within) / ev.samples;
  }
  return ev;
}

double evaluate_classifier(const Mlp& classifier, const Dataset& data, const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  int hits = 0;
  for (int i : indices) hits += predict_class(classifier, data.samples.at(i).input) == data.samples.at(i).label_class;
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

}  // namespace nlfeti
