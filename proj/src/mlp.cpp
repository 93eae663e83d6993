#include "nlfeti/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nlfeti {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
    case Activation::softmax: return "softmax";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  for (auto a : {Activation::tanh, Activation::identity, Activation::softmax})
    if (to_string(a) == name) return a;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(DirichletVariant v) { return v == DirichletVariant::touching ? "touching" : "interior"; }

DirichletVariant dirichlet_variant_from_string(const std::string& name) {
  if (name == "touching") return DirichletVariant::touching;
  if (name == "interior") return DirichletVariant::interior;
  throw std::invalid_argument("unknown Dirichlet variant '" + name + "'");
}

namespace {

void activate(Activation a, Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::identity: break;
    case Activation::softmax:
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        auto col = z.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp().matrix();
        col /= col.sum();
      }
      break;
  }
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<int>& idx, std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = m.col(idx[k]);
  return out;
}

// Sign-symmetric squared error per column; `sign` receives the chosen sign.
double column_error(const Eigen::VectorXd& pred, const Eigen::VectorXd& target, double& sign) {
  const double minus = (pred - target).squaredNorm();
  const double plus = (pred + target).squaredNorm();
  sign = plus < minus ? -1.0 : 1.0;
  return std::min(minus, plus);
}

struct Adam {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  explicit Adam(const Mlp& m) {
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      mw.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
      vw.push_back(mw.back());
      mb.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
      vb.push_back(mb.back());
    }
  }

  void update(Mlp& m, const std::vector<Eigen::MatrixXd>& gw, const std::vector<Eigen::VectorXd>& gb, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      mw[l] = beta1 * mw[l] + (1.0 - beta1) * gw[l];
      vw[l] = beta2 * vw[l] + (1.0 - beta2) * gw[l].cwiseProduct(gw[l]);
      m.weights[l].array() -= lr * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + eps);
      mb[l] = beta1 * mb[l] + (1.0 - beta1) * gb[l];
      vb[l] = beta2 * vb[l] + (1.0 - beta2) * gb[l].cwiseProduct(gb[l]);
      m.biases[l].array() -= lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
    }
  }
};

double step_size_at(const TrainParams& p, int epoch) {
  const double f = p.final_step_fraction;
  const double progress = p.epochs > 1 ? static_cast<double>(epoch) / (p.epochs - 1) : 0.0;
  return p.step_size * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// One pass of minibatch Adam. `output_delta(out, batch_begin, batch_end)`
// returns dLoss/dz of the last layer for the batch (already divided by the
// batch size).
template <class Delta>
void adam_epoch(Mlp& m, Adam& opt, const Eigen::MatrixXd& x, std::vector<int>& order, std::mt19937_64& rng,
                const TrainParams& params, int epoch, Delta&& output_delta) {
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = order.size();
  const std::size_t bs = static_cast<std::size_t>(std::max(1, params.batch_size));
  const std::size_t layers = m.weights.size();
  std::vector<Eigen::MatrixXd> acts(layers + 1), gw(layers);
  std::vector<Eigen::VectorXd> gb(layers);
  for (std::size_t b0 = 0; b0 < n; b0 += bs) {
    const std::size_t b1 = std::min(n, b0 + bs);
    acts[0] = gather(x, order, b0, b1);
    for (std::size_t l = 0; l < layers; ++l) {
      Eigen::MatrixXd z = m.weights[l] * acts[l];
      z.colwise() += m.biases[l];
      activate(l + 1 == layers ? m.output : m.hidden, z);
      acts[l + 1] = std::move(z);
    }
    Eigen::MatrixXd delta = output_delta(acts[layers], b0, b1);
    for (std::size_t l = layers; l-- > 0;) {
      gw[l] = delta * acts[l].transpose();
      gb[l] = delta.rowwise().sum();
      if (l > 0) {
        Eigen::MatrixXd back = m.weights[l].transpose() * delta;
        if (m.hidden == Activation::tanh) back.array() *= 1.0 - acts[l].array().square();
        delta = std::move(back);
      }
    }
    opt.update(m, gw, gb, step_size_at(params, epoch));
  }
}

void check_inputs(const Mlp& m, const Eigen::MatrixXd& x, Eigen::Index n) {
  if (x.rows() != m.input_size()) throw std::invalid_argument("train: input dimension mismatch");
  if (x.cols() != n) throw std::invalid_argument("train: sample count mismatch");
}

double cross_entropy(const Mlp& m, const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  if (x.cols() == 0) return 0.0;
  const Eigen::MatrixXd p = m.forward(x);
  double loss = 0.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) loss -= std::log(std::max(p(labels[c], c), 1e-300));
  return loss / static_cast<double>(p.cols());
}

}  // namespace

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  if (x.rows() != input_size()) throw std::invalid_argument("Mlp::forward: input length mismatch");
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::MatrixXd z = weights[l] * a;
    z.colwise() += biases[l];
    activate(l + 1 == weights.size() ? output : hidden, z);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd Mlp::forward_one(const Eigen::VectorXd& x) const {
  return forward(Eigen::MatrixXd(x)).col(0);
}

void Mlp::validate() const {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least two layer sizes");
  if (weights.size() != sizes.size() - 1 || biases.size() != weights.size())
    throw std::invalid_argument("Mlp: layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (sizes[l] < 1 || sizes[l + 1] < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
    if (weights[l].rows() != sizes[l + 1] || weights[l].cols() != sizes[l] || biases[l].size() != sizes[l + 1])
      throw std::invalid_argument("Mlp: layer dimensions do not chain");
  }
  if (role.classifier && output_size() != 3) throw std::invalid_argument("Mlp: classifier must have 3 outputs");
  if (!role.classifier && output_size() != n_out)
    throw std::invalid_argument("Mlp: regressor output size must equal n_out");
  if (!role.classifier && (role.rank < 1 || role.rank > 3))
    throw std::invalid_argument("Mlp: regressor rank must be 1, 2 or 3");
}

Mlp make_mlp(const std::vector<int>& sizes, Activation output, std::uint64_t seed) {
  if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least two layer sizes");
  Mlp m;
  m.sizes = sizes;
  m.output = output;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l] < 1 || sizes[l + 1] < 1) throw std::invalid_argument("make_mlp: layer sizes must be positive");
    const double limit = std::sqrt(6.0 / (sizes[l] + sizes[l + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Eigen::MatrixXd w(sizes[l + 1], sizes[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
  }
  return m;
}

double classification_accuracy(const Mlp& model, const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  if (x.cols() == 0) return 0.0;
  const Eigen::MatrixXd p = model.forward(x);
  int hits = 0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    Eigen::Index arg = 0;
    p.col(c).maxCoeff(&arg);
    hits += static_cast<int>(arg) == labels[c];
  }
  return static_cast<double>(hits) / static_cast<double>(p.cols());
}

double sign_symmetric_mse(const Mlp& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.cols() == 0) return 0.0;
  const Eigen::MatrixXd p = model.forward(x);
  double loss = 0.0, sign = 1.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) loss += column_error(p.col(c), y.col(c), sign);
  return loss / static_cast<double>(p.cols() * p.rows());
}

TrainMetrics train_classifier(Mlp& model, const Eigen::MatrixXd& x, const std::vector<int>& labels,
                              const Eigen::MatrixXd& x_val, const std::vector<int>& labels_val,
                              const TrainParams& params) {
  model.validate();
  if (!model.role.classifier || model.output != Activation::softmax)
    throw std::invalid_argument("train_classifier: model is not a softmax classifier");
  check_inputs(model, x, static_cast<Eigen::Index>(labels.size()));
  check_inputs(model, x_val, static_cast<Eigen::Index>(labels_val.size()));
  if (labels.empty()) throw std::invalid_argument("train_classifier: empty training set");
  for (const auto* ls : {&labels, &labels_val})
    for (int l : *ls)
      if (l < 0 || l >= model.output_size()) throw std::invalid_argument("train_classifier: label out of range");

  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(params.seed);
  Adam opt(model);
  for (int epoch = 0; epoch < params.epochs; ++epoch)
    adam_epoch(model, opt, x, order, rng, params, epoch, [&](const Eigen::MatrixXd& out, std::size_t b0, std::size_t b1) {
      Eigen::MatrixXd delta = out;
      for (std::size_t k = b0; k < b1; ++k) delta(labels[order[k]], static_cast<Eigen::Index>(k - b0)) -= 1.0;
      return Eigen::MatrixXd(delta / static_cast<double>(b1 - b0));
    });

  TrainMetrics m;
  m.epochs = params.epochs;
  m.train_loss = cross_entropy(model, x, labels);
  m.validation_loss = cross_entropy(model, x_val, labels_val);
  m.train_accuracy = classification_accuracy(model, x, labels);
  m.validation_accuracy = classification_accuracy(model, x_val, labels_val);
  return m;
}

TrainMetrics train_regressor(Mlp& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                             const Eigen::MatrixXd& x_val, const Eigen::MatrixXd& y_val, const TrainParams& params) {
  model.validate();
  if (model.role.classifier || model.output != Activation::identity)
    throw std::invalid_argument("train_regressor: model is not a linear-output regressor");
  check_inputs(model, x, y.cols());
  check_inputs(model, x_val, y_val.cols());
  if (y.rows() != model.output_size() || y_val.rows() != model.output_size())
    throw std::invalid_argument("train_regressor: target dimension mismatch");
  if (x.cols() == 0) throw std::invalid_argument("train_regressor: empty training set");

  std::vector<int> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(params.seed);
  Adam opt(model);
  const double n_out = static_cast<double>(model.output_size());
  for (int epoch = 0; epoch < params.epochs; ++epoch)
    adam_epoch(model, opt, x, order, rng, params, epoch, [&](const Eigen::MatrixXd& out, std::size_t b0, std::size_t b1) {
      Eigen::MatrixXd delta(out.rows(), out.cols());
      double sign = 1.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const auto c = static_cast<Eigen::Index>(k - b0);
        const Eigen::VectorXd target = y.col(order[k]);
        column_error(out.col(c), target, sign);
        delta.col(c) = 2.0 * (out.col(c) - sign * target);
      }
      return Eigen::MatrixXd(delta / (n_out * static_cast<double>(b1 - b0)));
    });

  TrainMetrics m;
  m.epochs = params.epochs;
  m.train_loss = sign_symmetric_mse(model, x, y);
  m.validation_loss = sign_symmetric_mse(model, x_val, y_val);
  return m;
}

nlohmann::json to_json(const Mlp& model) {
  model.validate();
  nlohmann::json j;
  j["format"] = "nlfeti-mlp";
  j["version"] = kModelFormatVersion;
  j["layers"] = model.sizes;
  j["hidden_activation"] = to_string(model.hidden);
  j["output_activation"] = to_string(model.output);
  if (model.role.classifier) {
    j["role"] = {{"kind", "classifier"}};
  } else {
    j["role"] = {{"kind", "regressor"}, {"rank", model.role.rank}, {"variant", to_string(model.role.variant)}};
  }
  j["resolution"] = model.resolution;
  j["n_out"] = model.n_out;
  nlohmann::json ws = nlohmann::json::array(), bs = nlohmann::json::array();
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const auto& w = model.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    ws.push_back(flat);
    bs.push_back(std::vector<double>(model.biases[l].data(), model.biases[l].data() + model.biases[l].size()));
  }
  j["weights"] = std::move(ws);
  j["biases"] = std::move(bs);
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  if (!j.contains("version")) throw std::invalid_argument("model file: missing version field");
  if (j.at("version").get<int>() != kModelFormatVersion)
    throw std::invalid_argument("model file: unsupported version " + j.at("version").dump());
  Mlp m;
  m.sizes = j.at("layers").get<std::vector<int>>();
  m.hidden = activation_from_string(j.at("hidden_activation").get<std::string>());
  m.output = activation_from_string(j.at("output_activation").get<std::string>());
  const auto& role = j.at("role");
  const std::string kind = role.at("kind").get<std::string>();
  if (kind == "classifier") {
    m.role = {};
  } else if (kind == "regressor") {
    m.role.classifier = false;
    m.role.rank = role.at("rank").get<int>();
    m.role.variant = dirichlet_variant_from_string(role.at("variant").get<std::string>());
  } else {
    throw std::invalid_argument("model file: unknown role '" + kind + "'");
  }
  m.resolution = j.at("resolution").get<int>();
  m.n_out = j.at("n_out").get<int>();
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  if (m.sizes.size() < 2 || ws.size() != m.sizes.size() - 1 || bs.size() != ws.size())
    throw std::invalid_argument("model file: layer count mismatch");
  for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
    const auto flat = ws[l].get<std::vector<double>>();
    const auto b = bs[l].get<std::vector<double>>();
    const int rows = m.sizes[l + 1], cols = m.sizes[l];
    if (flat.size() != static_cast<std::size_t>(rows) * cols || b.size() != static_cast<std::size_t>(rows))
      throw std::invalid_argument("model file: layer dimensions do not chain");
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r) * cols + c];
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), rows));
  }
  m.validate();
  return m;
}

void save_model(const Mlp& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file " + path);
  out << to_json(model).dump() << '\n';
}

Mlp load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file " + path);
  return mlp_from_json(nlohmann::json::parse(in));
}

}  // namespace nlfeti
