#pragma once

#include "tagx/explain.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tagx {

/// Fraction of targets whose prediction on G[S_v] matches `reference`
/// (full-graph predictions). Each set must contain its target.
double fidelity(const GcnModel& gnn, const TextAttributedGraph& g, const std::map<NodeId, NodeSet>& results,
                const std::vector<int>& reference);
double fidelity(const GcnModel& gnn, const TextAttributedGraph& g, const std::map<NodeId, NodeSet>& results);

/// Whether the prediction for v on G[s] matches reference[v].
bool faithful(const GcnModel& gnn, const TextAttributedGraph& g, NodeId v, const NodeSet& s,
              const std::vector<int>& reference);

double avg_size(const std::map<NodeId, NodeSet>& results);

NodeSet baseline_node(const TextAttributedGraph& g, NodeId v);

/// v plus round(q * (tree_size - 1)) distinct candidates from the unique
/// computation-tree nodes.
NodeSet baseline_random(const TextAttributedGraph& g, NodeId v, double q, int tree_depth, std::uint64_t seed);

enum class MethodKind { node, random, llm_text, llm_pr, llm_pr_po };

struct MethodSpec {
  MethodKind kind = MethodKind::node;
  double q = 0.5;  // random only

  std::string name() const;
  bool uses_backend() const noexcept { return kind == MethodKind::llm_text || kind == MethodKind::llm_pr || kind == MethodKind::llm_pr_po; }
};

/// Parses "node", "random(0.5)", "random" (q = 0.5), "llm_text", "llm_pr", "llm_pr_po".
MethodSpec parse_method(const std::string& s);

/// Explanation sizes reported for the full method on the benchmark datasets;
/// used to derive p when none is given.
std::optional<double> reference_explanation_size(const std::string& dataset);

struct BenchmarkConfig {
  std::vector<MethodSpec> methods;
  /// 0 evaluates every target.
  std::size_t num_targets = 0;
  std::uint64_t target_seed = 0;
  /// Random-baseline seeds; metrics are averaged over them.
  std::vector<std::uint64_t> random_seeds = {0, 1, 2, 3, 4};
  ExplainConfig explain;
  /// When unset: reference size / mean tree size, else 0.5.
  std::optional<double> p;
  std::size_t workers = 1;
  std::string gnn_checkpoint;
  /// Extra keys echoed into the report (projector and backend settings).
  nlohmann::json echo = nlohmann::json::object();

  void validate() const;
};

struct TargetFailure {
  NodeId target;
  std::string error;
};

struct MethodRow {
  std::string method;
  std::string population;
  double fidelity = 0.0;
  double fidelity_std = 0.0;
  double size = 0.0;
  double size_std = 0.0;
  std::size_t num_targets = 0;
  std::size_t successes = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<TargetFailure> failures;
};

struct EvalReport {
  std::string dataset;
  std::string gnn_checkpoint;
  std::vector<MethodRow> rows;
  nlohmann::json config;
  double wall_clock_seconds = 0.0;

  /// False when a requested method had no successful target.
  bool all_methods_succeeded() const;
};

/// Evaluation targets: the test split (non-dummy labels when the dataset
/// declares a dummy label), optionally subsampled.
std::vector<NodeId> evaluation_targets(const TextAttributedGraph& g, const BenchmarkConfig& cfg,
                                       bool include_dummy = false);

/// `projector` and `backend` may be null when no LLM method is requested.
EvalReport run_benchmark(const TextAttributedGraph& g, const GcnModel& gnn, const ProjectorModel* projector,
                         const LlmBackend* backend, const PromptTemplate& tmpl, const BenchmarkConfig& cfg);

/// Deterministic report (no timing).
nlohmann::json report_to_json(const EvalReport& r);
std::string report_to_markdown(const EvalReport& r);

/// Writes report.json, report.md and report.meta.json (timing) into dir.
void write_report(const EvalReport& r, const std::filesystem::path& dir);

}  // namespace tagx
