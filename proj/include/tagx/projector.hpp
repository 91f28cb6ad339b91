#pragma once

#include "tagx/common.hpp"
#include "tagx/graph.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace tagx {

/// Per-node GNN embeddings (one row per node).
struct EmbeddingTable {
  Matrix vectors;
  std::string source;
};

/// Per-node unit-norm text embeddings produced by a language-model backend.
struct TextEmbeddingTable {
  Matrix vectors;
  std::string backend_id;

  /// Throws unless every row has unit norm within 1e-6.
  void validate() const;
};

enum class ProjectorKind {
  /// Two-layer perceptron m -> 2m -> k*h with a rectifier in between.
  mlp,
  /// Single bias-free linear map m -> k*h. Used for hand-checkable cases.
  linear,
};

/// Maps a GNN embedding in R^m to k soft-prompt tokens in R^h.
struct ProjectorModel {
  ProjectorKind kind = ProjectorKind::mlp;
  std::size_t input_dim = 0;  // m
  std::size_t tokens = 0;     // k
  std::size_t token_dim = 0;  // h

  // mlp: w1 is (2m x m), w2 is (k*h x 2m). linear: w1 is (k*h x m); b1, w2, b2 are empty.
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  // Training hyperparameters, stored with the checkpoint.
  double beta = 0.5;
  double tau = 0.1;
  std::uint64_t seed = 0;

  std::size_t output_dim() const noexcept { return tokens * token_dim; }
  void validate() const;
};

ProjectorModel make_projector(std::size_t input_dim, std::size_t tokens, std::size_t token_dim,
                              std::uint64_t seed, ProjectorKind kind = ProjectorKind::mlp);

/// Z = Pi(f), a k x h matrix.
Matrix project(const ProjectorModel& p, const Vector& f);

/// Normalized row mean of Z. Throws DegeneratePromptError on a zero mean.
Vector mean_pool_normalize(const Matrix& z);

/// Row-stochastic softmax over pairwise cosine similarities divided by
/// `temperature`. The self term is included. Zero rows have cosine 0 with
/// everything.
Matrix similarity_distribution(const Matrix& rows, double temperature);

/// -mean_v <zbar_v, text_v>. Rows must be unit norm.
double context_loss(const Matrix& zbar, const Matrix& text);

/// -(1/|B|) sum_v sum_u pF_vu log pZ_vu, where pF is the tau-tempered
/// similarity softmax of the GNN embeddings and pZ the softmax of the pooled
/// soft-prompt cosines divided by `soft_temperature` (1 unless the shared
/// temperature switch is on).
double contrastive_loss(const Matrix& zbar, const Matrix& gnn, double tau, double soft_temperature = 1.0);

struct ProjectorLossConfig {
  double beta = 0.5;
  double tau = 0.1;
  /// Apply tau to the soft-prompt similarities as well.
  bool shared_temperature = false;

  double soft_temperature() const noexcept { return shared_temperature ? tau : 1.0; }
  void validate() const;
};

struct ProjectorLoss {
  double context = 0.0;
  double contrast = 0.0;
  double total = 0.0;
};

/// Full-batch loss over aligned rows of GNN and text embeddings.
ProjectorLoss projector_loss(const ProjectorModel& p, const Matrix& gnn, const Matrix& text,
                             const ProjectorLossConfig& cfg);

struct ProjectorGradients {
  ProjectorLoss loss;
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  /// Batch rows dropped because their soft prompt was degenerate.
  std::vector<std::size_t> skipped;
};

/// Loss and analytic gradient for one batch. Degenerate rows are skipped.
ProjectorGradients projector_loss_and_gradients(const ProjectorModel& p, const Matrix& gnn,
                                                const Matrix& text, const ProjectorLossConfig& cfg);

struct ProjectorTrainConfig {
  std::size_t tokens = 4;
  double beta = 0.5;
  double tau = 0.1;
  double learning_rate = 1e-3;
  int epochs = 200;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  bool shared_temperature = false;
  ProjectorKind kind = ProjectorKind::mlp;
  /// Nodes scored after every epoch to pick the best parameters.
  std::size_t selection_nodes = 1024;

  ProjectorLossConfig loss_config() const { return {beta, tau, shared_temperature}; }
  void validate() const;
};

struct ProjectorTrainResult {
  ProjectorModel model;
  ProjectorLoss initial_loss;  // all nodes, at initialization
  ProjectorLoss final_loss;    // all nodes, returned parameters
  std::vector<ProjectorLoss> history;  // selection-set loss after each epoch
  int best_epoch = -1;  // -1 when the initialization was never improved on
  std::size_t skipped_samples = 0;
};

ProjectorTrainResult train_projector(const TextAttributedGraph& g, const EmbeddingTable& gnn,
                                     const TextEmbeddingTable& texts, const ProjectorTrainConfig& cfg);

struct GradCheckConfig {
  double beta = 0.5;
  double tau = 0.1;
  double epsilon = 1e-4;
  std::size_t tokens = 2;
  std::size_t token_dim = 6;
  std::uint64_t seed = 0;
  ProjectorKind kind = ProjectorKind::mlp;
  bool shared_temperature = false;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  std::string worst_parameter;
};

/// Relative error used by the gradient checks: |a - n| / max(|a|, |n|, 1e-7).
double relative_error(double analytic, double numeric) noexcept;

/// Compares analytic projector gradients against central finite differences
/// on a small graph: GNN inputs are the graph's features and text targets are
/// seeded random unit vectors.
GradCheckReport grad_check(const GradCheckConfig& cfg, const TextAttributedGraph& sample);

void save_projector(const ProjectorModel& p, const std::filesystem::path& path,
                    const nlohmann::json& config_echo = {});
ProjectorModel load_projector(const std::filesystem::path& path);

}  // namespace tagx
