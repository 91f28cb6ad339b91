#pragma once

#include "tagx/common.hpp"
#include "tagx/graph.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace tagx {

/// Prompt layout for one dataset. Placeholders: {ID} (node id),
/// {CATEGORY} (predicted class name), {CATEGORY_LIST} (all class names).
struct PromptTemplate {
  std::string dataset;
  std::string entity_noun = "Node";
  std::string system_preamble;  // may use {CATEGORY_LIST}
  std::string target_header;    // may use {ID}, {CATEGORY}
  std::string target_begin = "\\BEGIN TARGET KEYWORDS";
  std::string target_end = "\\END TARGET KEYWORDS";
  std::string neighbor_header;
  std::string node_stanza;  // must use {ID}
  std::string node_begin = "\\BEGIN KEYWORDS";
  std::string node_end = "\\END KEYWORDS";
  std::string instructions;  // may use {CATEGORY}; {ID} is left verbatim as a format hint

  void validate() const;
};

PromptTemplate template_from_json(const nlohmann::json& j);
nlohmann::json template_to_json(const PromptTemplate& t);
PromptTemplate load_template(const std::filesystem::path& path);

/// Generic template used when no dataset-specific file exists.
PromptTemplate default_template(const std::string& dataset = "default");

/// templates_dir/<lowercase dataset>.json, else templates_dir/default.json,
/// else default_template().
PromptTemplate find_template(const std::filesystem::path& templates_dir, const std::string& dataset);

/// Directory holding the bundled templates (compile-time default, overridable
/// with the TAGX_TEMPLATES environment variable).
std::filesystem::path bundled_template_dir();

enum class PromptMode { soft, text };

std::string to_string(PromptMode mode);
PromptMode prompt_mode_from_string(const std::string& s);

struct TextSegment {
  std::string content;
  /// Set when the text is a node payload (text mode or hybrid stanzas).
  std::optional<NodeId> node;
};

struct SoftSegment {
  NodeId node;
  Matrix matrix;  // k x h
};

using PromptSegment = std::variant<TextSegment, SoftSegment>;

struct HybridPrompt {
  std::vector<PromptSegment> segments;
  NodeId target = 0;
  /// Declared candidate nodes, ascending, target excluded.
  std::vector<NodeId> candidates;
  std::string entity_noun;
  PromptMode mode = PromptMode::soft;

  std::size_t soft_segment_count() const;
};

struct PromptOptions {
  PromptMode mode = PromptMode::soft;
  /// Predicted class index of the target; rendered through class_names.
  int predicted_class = 0;
  /// In soft mode, append each node's raw text after its soft segment.
  bool include_text_in_soft_mode = false;
};

/// Builds the interleaved prompt for `target`. `tree_nodes` are the unique
/// nodes of its computation tree (target included); candidates are those
/// nodes minus the target, ascending. In soft mode `soft` must hold a matrix
/// for the target and every candidate.
HybridPrompt build_hybrid_prompt(const TextAttributedGraph& g, NodeId target,
                                 const std::vector<NodeId>& tree_nodes,
                                 const std::map<NodeId, Matrix>& soft, const PromptTemplate& tmpl,
                                 const PromptOptions& options);

HybridPrompt build_hybrid_prompt(const TextAttributedGraph& g, NodeId target, const ComputationTree& tree,
                                 const std::map<NodeId, Matrix>& soft, const PromptTemplate& tmpl,
                                 const PromptOptions& options);

/// Text with every soft segment replaced by [SOFT:<node>:<k>x<h>].
std::string render_text_only(const HybridPrompt& p);

}  // namespace tagx
