#include "tagx/prompt.hpp"

#include "tagx/checkpoint.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>

#ifndef TAGX_TEMPLATE_DIR
#define TAGX_TEMPLATE_DIR "templates"
#endif

namespace tagx {

using nlohmann::json;

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

void PromptTemplate::validate() const {
  if (entity_noun.empty()) throw DataError("template '" + dataset + "': entity_noun is empty");
  if (target_begin.empty() || target_end.empty() || node_begin.empty() || node_end.empty()) {
    throw DataError("template '" + dataset + "': marker pairs must be non-empty");
  }
  if (node_stanza.find("{ID}") == std::string::npos) {
    throw DataError("template '" + dataset + "': node_stanza lacks the {ID} placeholder");
  }
  if (instructions.find("Support: YES or NO") == std::string::npos) {
    throw DataError("template '" + dataset + "': instructions lack the 'Support: YES or NO' contract");
  }
}

PromptTemplate template_from_json(const json& j) {
  PromptTemplate t;
  try {
    t.dataset = j.value("dataset", "");
    t.entity_noun = j.value("entity_noun", t.entity_noun);
    t.system_preamble = j.at("system_preamble").get<std::string>();
    t.target_header = j.at("target_header").get<std::string>();
    t.target_begin = j.value("target_begin", t.target_begin);
    t.target_end = j.value("target_end", t.target_end);
    t.neighbor_header = j.at("neighbor_header").get<std::string>();
    t.node_stanza = j.at("node_stanza").get<std::string>();
    t.node_begin = j.value("node_begin", t.node_begin);
    t.node_end = j.value("node_end", t.node_end);
    t.instructions = j.at("instructions").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed prompt template: ") + e.what());
  }
  t.validate();
  return t;
}

json template_to_json(const PromptTemplate& t) {
  return {{"dataset", t.dataset},           {"entity_noun", t.entity_noun},
          {"system_preamble", t.system_preamble}, {"target_header", t.target_header},
          {"target_begin", t.target_begin}, {"target_end", t.target_end},
          {"neighbor_header", t.neighbor_header}, {"node_stanza", t.node_stanza},
          {"node_begin", t.node_begin},     {"node_end", t.node_end},
          {"instructions", t.instructions}};
}

PromptTemplate load_template(const std::filesystem::path& path) {
  return template_from_json(checkpoint::read_json(path));
}

PromptTemplate default_template(const std::string& dataset) {
  PromptTemplate t;
  t.dataset = dataset;
  t.entity_noun = "Node";
  t.system_preamble = "Decide which neighbors of a node back its predicted class. Classes: {CATEGORY_LIST}.";
  t.target_header = "Target Node ID: {ID}\nPredicted Category: {CATEGORY}\n";
  t.neighbor_header = "Neighbors:\n";
  t.node_stanza = "- Node {ID}:\n";
  t.instructions =
      "Instructions:\n"
      "Answer once per neighbor in this format:\n\n"
      "Node {ID}:\n"
      "Summary: one sentence.\n"
      "Support: YES or NO (does it back '{CATEGORY}'?)\n";
  return t;
}

std::filesystem::path bundled_template_dir() {
  if (const char* env = std::getenv("TAGX_TEMPLATES"); env && *env) return env;
  return TAGX_TEMPLATE_DIR;
}

PromptTemplate find_template(const std::filesystem::path& templates_dir, const std::string& dataset) {
  for (const auto& candidate : {templates_dir / (lowercase(dataset) + ".json"), templates_dir / "default.json"}) {
    if (std::filesystem::exists(candidate)) return load_template(candidate);
  }
  spdlog::debug("no template for '{}' under {}; using the built-in default", dataset, templates_dir.string());
  return default_template(dataset);
}

std::string to_string(PromptMode mode) { return mode == PromptMode::soft ? "soft" : "text"; }

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "soft") return PromptMode::soft;
  if (s == "text") return PromptMode::text;
  throw Error("unknown prompt mode '" + s + "' (expected soft or text)");
}

std::size_t HybridPrompt::soft_segment_count() const {
  return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(), [](const auto& s) {
    return std::holds_alternative<SoftSegment>(s);
  }));
}

namespace {

class PromptBuilder {
 public:
  explicit PromptBuilder(HybridPrompt& p) : prompt_(p) {}

  void text(const std::string& s) {
    if (s.empty()) return;
    if (!prompt_.segments.empty()) {
      if (auto* last = std::get_if<TextSegment>(&prompt_.segments.back()); last && !last->node) {
        last->content += s;
        return;
      }
    }
    prompt_.segments.emplace_back(TextSegment{s, std::nullopt});
  }

  void payload(const TextAttributedGraph& g, NodeId node, const std::map<NodeId, Matrix>& soft,
               const PromptOptions& options) {
    if (options.mode == PromptMode::soft) {
      const auto it = soft.find(node);
      if (it == soft.end()) throw Error("no soft prompt for node " + std::to_string(node));
      prompt_.segments.emplace_back(SoftSegment{node, it->second});
      if (options.include_text_in_soft_mode && !g.text(node).empty()) {
        prompt_.segments.emplace_back(TextSegment{" " + g.text(node), node});
      }
    } else {
      if (g.text(node).empty()) throw Error("node " + std::to_string(node) + " has no text for a text-mode prompt");
      prompt_.segments.emplace_back(TextSegment{g.text(node), node});
    }
  }

 private:
  HybridPrompt& prompt_;
};

}  // namespace

HybridPrompt build_hybrid_prompt(const TextAttributedGraph& g, NodeId target,
                                 const std::vector<NodeId>& tree_nodes,
                                 const std::map<NodeId, Matrix>& soft, const PromptTemplate& tmpl,
                                 const PromptOptions& options) {
  g.check_node(target);
  tmpl.validate();
  if (options.predicted_class < 0 || static_cast<std::size_t>(options.predicted_class) >= g.num_classes()) {
    throw Error("predicted class " + std::to_string(options.predicted_class) + " out of range");
  }
  HybridPrompt p;
  p.target = target;
  p.entity_noun = tmpl.entity_noun;
  p.mode = options.mode;
  for (NodeId u : tree_nodes) {
    g.check_node(u);
    if (u != target) p.candidates.push_back(u);
  }
  std::sort(p.candidates.begin(), p.candidates.end());
  p.candidates.erase(std::unique(p.candidates.begin(), p.candidates.end()), p.candidates.end());
  if (p.candidates.empty()) spdlog::warn("node {} has no candidates; emitting a target-only prompt", target);

  const std::string category = g.class_names()[static_cast<std::size_t>(options.predicted_class)];
  const std::string id = std::to_string(target);

  PromptBuilder b(p);
  b.text(replace_all(tmpl.system_preamble, "{CATEGORY_LIST}", join(g.class_names(), ", ")) + "\n\n");
  b.text(replace_all(replace_all(tmpl.target_header, "{ID}", id), "{CATEGORY}", category));
  b.text(tmpl.target_begin + " ");
  b.payload(g, target, soft, options);
  b.text(" " + tmpl.target_end + "\n\n");
  if (!p.candidates.empty()) {
    b.text(tmpl.neighbor_header + "\n");
    for (NodeId u : p.candidates) {
      b.text(replace_all(tmpl.node_stanza, "{ID}", std::to_string(u)));
      b.text("  " + tmpl.node_begin + " ");
      b.payload(g, u, soft, options);
      b.text(" " + tmpl.node_end + "\n");
    }
    b.text("\n");
  }
  b.text(replace_all(tmpl.instructions, "{CATEGORY}", category));
  return p;
}

HybridPrompt build_hybrid_prompt(const TextAttributedGraph& g, NodeId target, const ComputationTree& tree,
                                 const std::map<NodeId, Matrix>& soft, const PromptTemplate& tmpl,
                                 const PromptOptions& options) {
  if (tree.root != target) throw Error("computation tree is rooted at a different node");
  return build_hybrid_prompt(g, target, tree.unique_nodes, soft, tmpl, options);
}

std::string render_text_only(const HybridPrompt& p) {
  std::string out;
  for (const auto& seg : p.segments) {
    if (const auto* t = std::get_if<TextSegment>(&seg)) {
      out += t->content;
    } else {
      const auto& s = std::get<SoftSegment>(seg);
      out += "[SOFT:" + std::to_string(s.node) + ":" + std::to_string(s.matrix.rows()) + "x" +
             std::to_string(s.matrix.cols()) + "]";
    }
  }
  return out;
}

}  // namespace tagx
