#pragma once

#include "tagx/common.hpp"
#include "tagx/graph.hpp"

#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace tagx {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Three-layer graph convolutional network. Layers 1 and 2 use a rectifier;
/// layer 3 produces class logits. Biases are zero-initialized.
struct GcnModel {
  std::array<Matrix, 3> weights;  // d x hid, hid x hid, hid x C
  std::array<Vector, 3> biases;
  std::string activation = "relu";
  std::string trained_on;

  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(weights[0].rows()); }
  std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(weights[0].cols()); }
  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(weights[2].cols()); }

  /// Throws ShapeError unless shapes chain d -> hid -> hid -> C.
  void validate() const;
};

/// Glorot-uniform weights drawn from a seeded stream, zero biases.
GcnModel init_gcn(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_classes,
                  std::uint64_t seed);

/// Zero weights and biases of the given shape.
GcnModel zero_gcn(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_classes);

/// Hidden width used when TrainConfig::hidden_dim is 0: 512 for wide
/// bag-of-words inputs (d >= 1000), 64 otherwise.
std::size_t default_hidden_dim(std::size_t feature_dim) noexcept;

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 400;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 0;  // 0 selects default_hidden_dim
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

/// D^-1/2 (A + I) D^-1/2 for the graph's undirected edges.
SparseMatrix normalized_adjacency(const TextAttributedGraph& g);

struct GcnOutput {
  Matrix logits;      // n x C
  Matrix embeddings;  // n x hid, after layer 2's rectifier
};

GcnOutput gcn_forward(const GcnModel& model, const TextAttributedGraph& g);

/// argmax of each logits row; ties go to the lowest class index.
std::vector<int> argmax_rows(const Matrix& logits);

int predict(const GcnModel& model, const TextAttributedGraph& g, NodeId v);
std::vector<int> predict_all(const GcnModel& model, const TextAttributedGraph& g);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels,
                const std::vector<NodeId>& nodes);

struct GcnGradients {
  double loss = 0.0;
  std::array<Matrix, 3> weights;
  std::array<Vector, 3> biases;
};

/// Mean cross-entropy over `nodes` and its gradient with respect to every parameter.
GcnGradients gcn_loss_and_gradients(const GcnModel& model, const TextAttributedGraph& g,
                                    const std::vector<NodeId>& nodes);

double gcn_loss(const GcnModel& model, const TextAttributedGraph& g, const std::vector<NodeId>& nodes);

struct GcnTrainResult {
  GcnModel model;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> loss_history;  // training loss before each update
};

GcnTrainResult train_gcn(const TextAttributedGraph& g, const TrainConfig& cfg);

void save_gcn(const GcnModel& model, const std::filesystem::path& path,
              const nlohmann::json& config_echo = {});
GcnModel load_gcn(const std::filesystem::path& path);

}  // namespace tagx
