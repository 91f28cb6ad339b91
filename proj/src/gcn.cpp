#include "tagx/gcn.hpp"

#include "tagx/checkpoint.hpp"
#include "tagx/rng.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace tagx {

using nlohmann::json;

void GcnModel::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (biases[i].size() != weights[i].cols()) {
      throw ShapeError("layer " + std::to_string(i + 1) + " bias has size " +
                       std::to_string(biases[i].size()) + ", expected " +
                       std::to_string(weights[i].cols()));
    }
  }
  if (weights[1].rows() != weights[0].cols() || weights[2].rows() != weights[1].cols()) {
    throw ShapeError("GCN weight shapes do not chain");
  }
  for (const auto& w : weights) {
    if (!w.allFinite()) throw DivergenceError("GCN weights contain non-finite values");
  }
}

GcnModel zero_gcn(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_classes) {
  const auto d = static_cast<Eigen::Index>(feature_dim);
  const auto h = static_cast<Eigen::Index>(hidden_dim);
  const auto c = static_cast<Eigen::Index>(num_classes);
  GcnModel m;
  m.weights = {Matrix::Zero(d, h), Matrix::Zero(h, h), Matrix::Zero(h, c)};
  m.biases = {Vector::Zero(h), Vector::Zero(h), Vector::Zero(c)};
  return m;
}

GcnModel init_gcn(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_classes,
                  std::uint64_t seed) {
  GcnModel m = zero_gcn(feature_dim, hidden_dim, num_classes);
  Rng rng(mix_seed(seed, 0x6763'6e00));
  for (auto& w : m.weights) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  }
  return m;
}

std::size_t default_hidden_dim(std::size_t feature_dim) noexcept {
  return feature_dim >= 1000 ? 512 : 64;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (epochs < 0) throw Error("epochs must be non-negative");
}

SparseMatrix normalized_adjacency(const TextAttributedGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<double> inv_sqrt_deg(g.num_nodes());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    inv_sqrt_deg[v] = 1.0 / std::sqrt(static_cast<double>(g.degree(static_cast<NodeId>(v)) + 1));
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(g.num_nodes() + 2 * g.num_edges());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const auto i = static_cast<Eigen::Index>(v);
    triplets.emplace_back(i, i, inv_sqrt_deg[v] * inv_sqrt_deg[v]);
  }
  for (auto [u, v] : g.edges()) {
    const double w = inv_sqrt_deg[static_cast<std::size_t>(u)] * inv_sqrt_deg[static_cast<std::size_t>(v)];
    triplets.emplace_back(u, v, w);
    triplets.emplace_back(v, u, w);
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  return a;
}

namespace {

/// Graph-dependent quantities that stay fixed across training epochs.
struct Propagation {
  SparseMatrix adjacency;
  SparseMatrix propagated_features;  // A_hat X, kept sparse for bag-of-words inputs
};

Propagation make_propagation(const TextAttributedGraph& g) {
  Propagation p;
  p.adjacency = normalized_adjacency(g);
  const SparseMatrix x = g.features().sparseView();
  p.propagated_features = p.adjacency * x;
  return p;
}

struct Activations {
  Matrix z1, h1, a1, z2, h2, a2, logits;
};

Activations forward(const GcnModel& m, const Propagation& p) {
  Activations act;
  act.z1 = p.propagated_features * m.weights[0];
  act.z1.rowwise() += m.biases[0].transpose();
  act.h1 = act.z1.cwiseMax(0.0);
  act.a1 = p.adjacency * act.h1;
  act.z2 = act.a1 * m.weights[1];
  act.z2.rowwise() += m.biases[1].transpose();
  act.h2 = act.z2.cwiseMax(0.0);
  act.a2 = p.adjacency * act.h2;
  act.logits = act.a2 * m.weights[2];
  act.logits.rowwise() += m.biases[2].transpose();
  return act;
}

void check_input(const GcnModel& m, const TextAttributedGraph& g) {
  m.validate();
  if (m.feature_dim() != g.feature_dim()) {
    throw ShapeError("model expects " + std::to_string(m.feature_dim()) + " features, graph has " +
                     std::to_string(g.feature_dim()));
  }
  if (m.num_classes() != g.num_classes()) {
    throw ShapeError("model has " + std::to_string(m.num_classes()) + " classes, graph has " +
                     std::to_string(g.num_classes()));
  }
}

/// Mean cross-entropy over `nodes`; fills d(loss)/d(logits) when grad is non-null.
double cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                     const std::vector<NodeId>& nodes, Matrix* grad) {
  if (grad) *grad = Matrix::Zero(logits.rows(), logits.cols());
  if (nodes.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(nodes.size());
  double loss = 0.0;
  for (NodeId v : nodes) {
    const auto row = logits.row(static_cast<Eigen::Index>(v));
    const double max = row.maxCoeff();
    const double lse = max + std::log((row.array() - max).exp().sum());
    const int y = labels[static_cast<std::size_t>(v)];
    loss -= (row[y] - lse) * scale;
    if (grad) {
      auto g = grad->row(static_cast<Eigen::Index>(v));
      g = (row.array() - lse).exp().matrix() * scale;
      g[y] -= scale;
    }
  }
  return loss;
}

GcnGradients backward(const GcnModel& m, const Propagation& p, const Activations& act,
                      const std::vector<int>& labels, const std::vector<NodeId>& nodes) {
  GcnGradients out;
  Matrix d_logits;
  out.loss = cross_entropy(act.logits, labels, nodes, &d_logits);

  out.weights[2] = act.a2.transpose() * d_logits;
  out.biases[2] = d_logits.colwise().sum().transpose();
  // A_hat is symmetric, so the transpose product is another A_hat product.
  Matrix d_h2 = p.adjacency * (d_logits * m.weights[2].transpose());
  Matrix d_z2 = d_h2.cwiseProduct((act.z2.array() > 0.0).cast<double>().matrix());

  out.weights[1] = act.a1.transpose() * d_z2;
  out.biases[1] = d_z2.colwise().sum().transpose();
  Matrix d_h1 = p.adjacency * (d_z2 * m.weights[1].transpose());
  Matrix d_z1 = d_h1.cwiseProduct((act.z1.array() > 0.0).cast<double>().matrix());

  out.weights[0] = p.propagated_features.transpose() * d_z1;
  out.biases[0] = d_z1.colwise().sum().transpose();
  return out;
}

struct AdamState {
  std::array<Matrix, 3> mw, vw;
  std::array<Vector, 3> mb, vb;
  long step = 0;

  explicit AdamState(const GcnModel& m) {
    for (std::size_t i = 0; i < 3; ++i) {
      mw[i] = vw[i] = Matrix::Zero(m.weights[i].rows(), m.weights[i].cols());
      mb[i] = vb[i] = Vector::Zero(m.biases[i].size());
    }
  }
};

template <typename Param, typename Moment>
void adam_update(Param& param, const Param& grad, Moment& m, Moment& v, const TrainConfig& cfg,
                 double bias1, double bias2) {
  m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
  v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
  param.array() -= cfg.learning_rate * (m.array() / bias1) /
                   ((v.array() / bias2).sqrt() + cfg.adam_epsilon);
}

}  // namespace

GcnOutput gcn_forward(const GcnModel& model, const TextAttributedGraph& g) {
  check_input(model, g);
  const Propagation p = make_propagation(g);
  Activations act = forward(model, p);
  if (!act.logits.allFinite()) throw DivergenceError("GCN forward produced non-finite logits");
  return {std::move(act.logits), std::move(act.h2)};
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()), 0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

int predict(const GcnModel& model, const TextAttributedGraph& g, NodeId v) {
  g.check_node(v);
  return predict_all(model, g)[static_cast<std::size_t>(v)];
}

std::vector<int> predict_all(const GcnModel& model, const TextAttributedGraph& g) {
  return argmax_rows(gcn_forward(model, g).logits);
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels,
                const std::vector<NodeId>& nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hits = 0;
  for (NodeId v : nodes) {
    if (predicted[static_cast<std::size_t>(v)] == labels[static_cast<std::size_t>(v)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

GcnGradients gcn_loss_and_gradients(const GcnModel& model, const TextAttributedGraph& g,
                                    const std::vector<NodeId>& nodes) {
  check_input(model, g);
  for (NodeId v : nodes) g.check_node(v);
  const Propagation p = make_propagation(g);
  return backward(model, p, forward(model, p), g.labels(), nodes);
}

double gcn_loss(const GcnModel& model, const TextAttributedGraph& g, const std::vector<NodeId>& nodes) {
  check_input(model, g);
  const Propagation p = make_propagation(g);
  return cross_entropy(forward(model, p).logits, g.labels(), nodes, nullptr);
}

GcnTrainResult train_gcn(const TextAttributedGraph& g, const TrainConfig& cfg) {
  cfg.validate();
  if (g.splits().train.empty()) throw Error("train_gcn: graph has no training split");
  const std::size_t hidden = cfg.hidden_dim ? cfg.hidden_dim : default_hidden_dim(g.feature_dim());

  GcnTrainResult result;
  result.model = init_gcn(g.feature_dim(), hidden, g.num_classes(), cfg.seed);
  result.model.trained_on = g.name();
  GcnModel& model = result.model;

  const Propagation p = make_propagation(g);
  AdamState adam(model);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Activations act = forward(model, p);
    GcnGradients grads = backward(model, p, act, g.labels(), g.splits().train);
    if (!std::isfinite(grads.loss)) {
      throw DivergenceError("GCN training loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(grads.loss);
    ++adam.step;
    const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
    const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
    for (std::size_t i = 0; i < 3; ++i) {
      adam_update(model.weights[i], grads.weights[i], adam.mw[i], adam.vw[i], cfg, bias1, bias2);
      adam_update(model.biases[i], grads.biases[i], adam.mb[i], adam.vb[i], cfg, bias1, bias2);
    }
    if (epoch % 50 == 0) spdlog::debug("gcn epoch {} loss {:.6f}", epoch, grads.loss);
  }

  const Activations act = forward(model, p);
  if (!act.logits.allFinite()) throw DivergenceError("GCN training diverged");
  const std::vector<int> predicted = argmax_rows(act.logits);
  result.train_accuracy = accuracy(predicted, g.labels(), g.splits().train);
  result.val_accuracy = accuracy(predicted, g.labels(), g.splits().val);
  result.test_accuracy = accuracy(predicted, g.labels(), g.splits().test);
  return result;
}

void save_gcn(const GcnModel& model, const std::filesystem::path& path, const json& config_echo) {
  model.validate();
  json j;
  j["format"] = "tagx-gcn";
  j["version"] = 1;
  j["trained_on"] = model.trained_on;
  j["activation"] = model.activation;
  j["feature_dim"] = model.feature_dim();
  j["hidden_dim"] = model.hidden_dim();
  j["num_classes"] = model.num_classes();
  for (std::size_t i = 0; i < 3; ++i) {
    j["weights"].push_back(checkpoint::encode_matrix(model.weights[i]));
    j["biases"].push_back(checkpoint::encode_vector(model.biases[i]));
  }
  if (!config_echo.is_null()) j["config"] = config_echo;
  checkpoint::write_json(path, j);
}

GcnModel load_gcn(const std::filesystem::path& path) {
  const json j = checkpoint::read_json(path);
  if (j.value("format", "") != "tagx-gcn") throw DataError(path.string() + ": not a GCN checkpoint");
  GcnModel m;
  try {
    m.trained_on = j.value("trained_on", "");
    m.activation = j.value("activation", "relu");
    for (std::size_t i = 0; i < 3; ++i) {
      m.weights[i] = checkpoint::decode_matrix(j.at("weights").at(i));
      m.biases[i] = checkpoint::decode_vector(j.at("biases").at(i));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  m.validate();
  if (m.feature_dim() != j.at("feature_dim").get<std::size_t>() ||
      m.hidden_dim() != j.at("hidden_dim").get<std::size_t>() ||
      m.num_classes() != j.at("num_classes").get<std::size_t>()) {
    throw DataError(path.string() + ": shape metadata does not match weight matrices");
  }
  return m;
}

}  // namespace tagx
