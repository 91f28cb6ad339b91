#pragma once

#include "tagx/backend.hpp"
#include "tagx/common.hpp"
#include "tagx/gcn.hpp"
#include "tagx/graph.hpp"
#include "tagx/projector.hpp"
#include "tagx/prompt.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tagx {

/// Per-candidate verdicts extracted from a model response.
struct ChiMap {
  /// +1 supports, -1 opposes, 0 unmentioned or unparseable. One entry per candidate.
  std::map<NodeId, int> chi;
  /// Response line index of the stanza header that decided each verdict.
  std::map<NodeId, std::size_t> provenance;
  /// Ids named in the response that were not declared candidates (ascending).
  std::vector<NodeId> hallucinated;
  /// Candidate stanzas without a usable Support line.
  std::size_t unparseable = 0;
};

/// Reads stanzas of the form "<noun> <id>: ... Support: YES|NO". Matching is
/// case-insensitive and tolerates list bullets and markdown emphasis. The
/// first decisive stanza per id wins. Mentions of `target` are ignored.
ChiMap parse_response(const std::string& text, const std::vector<NodeId>& candidates,
                      const std::string& entity_noun, std::optional<NodeId> target = std::nullopt);

/// Number of neutral nodes added by refine():
/// min(|S0|, max(0, round(p * tree_size) - |S+| - 1)).
std::size_t refine_padding(std::size_t supporters, std::size_t neutrals, std::size_t tree_size, double p);

/// S+ plus a uniform sample of refine_padding() nodes from S0.
NodeSet refine(const NodeSet& s_plus, const NodeSet& s_zero, std::size_t tree_size, double p,
               std::uint64_t seed);

struct ExplainConfig {
  int tree_depth = 2;
  PromptMode mode = PromptMode::soft;
  /// Neutral padding; the hallucination filter always runs.
  bool post_processing = true;
  double p = 0.5;
  std::uint64_t seed = 0;
  bool include_text_in_soft_mode = false;
  /// Measure the tree with repeated nodes instead of unique nodes.
  bool tree_size_with_repetitions = false;
  GenerationConfig generation;

  void validate() const;
};

nlohmann::json explain_config_to_json(const ExplainConfig& c);

struct Explanation {
  NodeId target = 0;
  ChiMap chi;
  NodeSet s_plus;
  NodeSet s_minus;
  NodeSet s_zero;
  NodeSet s_v;
  Subgraph subgraph;
  std::string raw_response;
  std::string prompt_text;
  std::vector<NodeId> dropped_hallucinations;
  /// Candidates left out of the prompt because their soft prompt was degenerate.
  std::vector<NodeId> excluded_degenerate;
  PromptMode mode = PromptMode::soft;
  bool post_processing = true;
  double p_used = 0.0;
  std::size_t tree_size = 0;
  std::uint64_t seed = 0;

  std::vector<NodeId> candidates() const;
};

/// Shared, immutable state for explaining many nodes of one graph.
class Explainer {
 public:
  /// `projector` may be null when only text mode is used. All references must
  /// outlive the explainer.
  Explainer(const TextAttributedGraph& g, const GcnModel& gnn, const ProjectorModel* projector,
            const LlmBackend& backend, PromptTemplate tmpl, ExplainConfig cfg = {});

  Explanation explain(NodeId v) const { return explain(v, config_); }
  Explanation explain(NodeId v, const ExplainConfig& cfg) const;

  const TextAttributedGraph& graph() const noexcept { return graph_; }
  const GcnModel& gnn() const noexcept { return gnn_; }
  const std::vector<int>& predictions() const noexcept { return predictions_; }
  const Matrix& embeddings() const noexcept { return embeddings_; }
  const ExplainConfig& config() const noexcept { return config_; }
  const PromptTemplate& prompt_template() const noexcept { return template_; }
  const LlmBackend& backend() const noexcept { return backend_; }

 private:
  const TextAttributedGraph& graph_;
  const GcnModel& gnn_;
  const ProjectorModel* projector_;
  const LlmBackend& backend_;
  PromptTemplate template_;
  ExplainConfig config_;
  std::vector<int> predictions_;
  Matrix embeddings_;
};

Explanation explain_node(const TextAttributedGraph& g, NodeId v, const GcnModel& gnn,
                         const ProjectorModel* projector, const LlmBackend& backend,
                         const ExplainConfig& cfg, const PromptTemplate& tmpl);

nlohmann::json explanation_to_json(const Explanation& e);
void write_explanation(const Explanation& e, const std::filesystem::path& dir);

/// Graphviz rendering of G[S_v]: target double-circled, supporters green,
/// padded neutrals grey.
std::string explanation_to_dot(const Explanation& e, const TextAttributedGraph& g);

}  // namespace tagx
