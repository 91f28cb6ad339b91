#include "tagx/explain.hpp"

#include "tagx/checkpoint.hpp"
#include "tagx/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

namespace tagx {

using nlohmann::json;

namespace {

std::string regex_escape(const std::string& s) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

struct Stanza {
  NodeId id;
  std::size_t line;
  std::string body;
};

}  // namespace

ChiMap parse_response(const std::string& text, const std::vector<NodeId>& candidates,
                      const std::string& entity_noun, std::optional<NodeId> target) {
  const auto icase = std::regex::ECMAScript | std::regex::icase;
  const std::regex header("^[\\s>*_#\\-.)0-9]*?[*_]*" + regex_escape(entity_noun) +
                              "[*_]*\\s+#?([0-9]+)[*_]*\\s*[*_]*:(.*)$",
                          icase);
  const std::regex verdict("support[*_]*\\s*:\\s*[*_]*\\s*(yes|no)\\b", icase);
  const std::regex ambiguous("support[*_]*\\s*:\\s*[*_]*\\s*(yes|no)\\s+or\\s+(yes|no)\\b", icase);

  std::vector<Stanza> stanzas;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::smatch m;
    if (std::regex_search(lines[i], m, header)) {
      NodeId id;
      try {
        id = std::stoll(m[1].str());
      } catch (const std::exception&) {
        continue;  // out-of-range digit run
      }
      stanzas.push_back({id, i, m[2].str()});
    } else if (!stanzas.empty()) {
      stanzas.back().body += "\n" + lines[i];
    }
  }

  ChiMap out;
  for (NodeId c : candidates) out.chi[c] = 0;
  NodeSet hallucinated;
  NodeSet unresolved;
  for (const auto& s : stanzas) {
    if (target && s.id == *target) continue;
    if (!out.chi.count(s.id)) {
      hallucinated.insert(s.id);
      continue;
    }
    std::smatch m;
    if (std::regex_search(s.body, ambiguous) || !std::regex_search(s.body, m, verdict)) {
      unresolved.insert(s.id);
      continue;
    }
    const int value = (std::tolower(static_cast<unsigned char>(m[1].str()[0])) == 'y') ? 1 : -1;
    if (out.provenance.count(s.id)) {
      if (out.chi[s.id] != value) {
        spdlog::warn("conflicting verdicts for {} (lines {} and {}); keeping the first", s.id,
                     out.provenance[s.id], s.line);
      }
      continue;
    }
    out.chi[s.id] = value;
    out.provenance[s.id] = s.line;
  }
  for (NodeId id : unresolved) {
    if (!out.provenance.count(id)) {
      ++out.unparseable;
      spdlog::warn("no usable Support line for {}; treating it as unmentioned", id);
    }
  }
  out.hallucinated.assign(hallucinated.begin(), hallucinated.end());
  return out;
}

std::size_t refine_padding(std::size_t supporters, std::size_t neutrals, std::size_t tree_size, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error("p must lie in (0, 1]");
  const long budget = std::lround(p * static_cast<double>(tree_size)) - static_cast<long>(supporters) - 1;
  return std::min(neutrals, static_cast<std::size_t>(std::max(0L, budget)));
}

NodeSet refine(const NodeSet& s_plus, const NodeSet& s_zero, std::size_t tree_size, double p, std::uint64_t seed) {
  for (NodeId u : s_plus) {
    if (s_zero.count(u)) throw Error("refine: S+ and S0 overlap at node " + std::to_string(u));
  }
  const std::size_t g = refine_padding(s_plus.size(), s_zero.size(), tree_size, p);
  NodeSet out = s_plus;
  Rng rng(seed);
  for (NodeId u : rng.sample(std::vector<NodeId>(s_zero.begin(), s_zero.end()), g)) out.insert(u);
  return out;
}

void ExplainConfig::validate() const {
  if (tree_depth < 1) throw Error("tree_depth must be >= 1");
  if (!(p > 0.0 && p <= 1.0)) throw Error("p must lie in (0, 1]");
  generation.validate();
}

json explain_config_to_json(const ExplainConfig& c) {
  return {{"tree_depth", c.tree_depth},
          {"mode", to_string(c.mode)},
          {"post_processing", c.post_processing},
          {"p", c.p},
          {"seed", c.seed},
          {"include_text_in_soft_mode", c.include_text_in_soft_mode},
          {"tree_size_with_repetitions", c.tree_size_with_repetitions},
          {"max_tokens", c.generation.max_tokens},
          {"decoding", c.generation.decoding},
          {"stop", c.generation.stop}};
}

std::vector<NodeId> Explanation::candidates() const {
  NodeSet all = s_plus;
  all.insert(s_minus.begin(), s_minus.end());
  all.insert(s_zero.begin(), s_zero.end());
  return {all.begin(), all.end()};
}

Explainer::Explainer(const TextAttributedGraph& g, const GcnModel& gnn, const ProjectorModel* projector,
                     const LlmBackend& backend, PromptTemplate tmpl, ExplainConfig cfg)
    : graph_(g), gnn_(gnn), projector_(projector), backend_(backend), template_(std::move(tmpl)),
      config_(std::move(cfg)) {
  config_.validate();
  template_.validate();
  if (gnn_.feature_dim() != g.feature_dim()) {
    throw ShapeError("GCN expects " + std::to_string(gnn_.feature_dim()) + " features, graph has " +
                     std::to_string(g.feature_dim()));
  }
  if (gnn_.num_classes() != g.num_classes()) throw ShapeError("GCN class count does not match the graph");
  if (projector_) {
    projector_->validate();
    if (projector_->input_dim != gnn_.hidden_dim()) {
      throw ShapeError("projector input dim " + std::to_string(projector_->input_dim) +
                       " does not match GCN hidden dim " + std::to_string(gnn_.hidden_dim()));
    }
    const auto h = backend_.descriptor().embedding_dim;
    if (projector_->token_dim != h) {
      throw ShapeError("projector token dim " + std::to_string(projector_->token_dim) +
                       " does not match backend h=" + std::to_string(h));
    }
  }
  auto out = gcn_forward(gnn_, graph_);
  predictions_ = argmax_rows(out.logits);
  embeddings_ = std::move(out.embeddings);
}

Explanation Explainer::explain(NodeId v, const ExplainConfig& cfg) const {
  cfg.validate();
  Explanation e;
  e.target = v;
  e.mode = cfg.mode;
  e.post_processing = cfg.post_processing;
  e.p_used = cfg.p;
  e.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(v));

  std::vector<NodeId> nodes;
  try {
    graph_.check_node(v);
    nodes = tree_unique_nodes(graph_, v, cfg.tree_depth);
    e.tree_size = cfg.tree_size_with_repetitions
                      ? static_cast<std::size_t>(tree_walk_count(graph_, v, cfg.tree_depth))
                      : nodes.size();
  } catch (const std::exception& ex) {
    throw StageError("tree", ex.what());
  }

  std::map<NodeId, Matrix> soft;
  std::vector<NodeId> prompt_nodes;
  if (cfg.mode == PromptMode::soft) {
    if (!projector_) throw StageError("project", "soft mode requires a trained projector");
    for (NodeId u : nodes) {
      Matrix z = project(*projector_, embeddings_.row(u).transpose());
      try {
        mean_pool_normalize(z);
      } catch (const DegeneratePromptError&) {
        if (u == v) throw StageError("project", "target soft prompt is degenerate");
        spdlog::warn("node {}: degenerate soft prompt; excluded from the prompt for {}", u, v);
        e.excluded_degenerate.push_back(u);
        continue;
      }
      soft.emplace(u, std::move(z));
      prompt_nodes.push_back(u);
    }
  } else {
    prompt_nodes = nodes;
  }

  HybridPrompt prompt;
  try {
    PromptOptions opts;
    opts.mode = cfg.mode;
    opts.predicted_class = predictions_[static_cast<std::size_t>(v)];
    opts.include_text_in_soft_mode = cfg.include_text_in_soft_mode;
    prompt = build_hybrid_prompt(graph_, v, prompt_nodes, soft, template_, opts);
  } catch (const std::exception& ex) {
    throw StageError("prompt", ex.what());
  }
  e.prompt_text = render_text_only(prompt);

  try {
    e.raw_response = backend_.generate(prompt, cfg.generation);
  } catch (const std::exception& ex) {
    throw StageError("generate", ex.what());
  }

  e.chi = parse_response(e.raw_response, prompt.candidates, template_.entity_noun, v);
  e.dropped_hallucinations = e.chi.hallucinated;
  for (NodeId u : nodes) {
    if (u == v) continue;
    const auto it = e.chi.chi.find(u);
    const int value = it == e.chi.chi.end() ? 0 : it->second;
    (value > 0 ? e.s_plus : value < 0 ? e.s_minus : e.s_zero).insert(u);
  }

  e.s_v = cfg.post_processing ? refine(e.s_plus, e.s_zero, e.tree_size, cfg.p, e.seed) : e.s_plus;
  e.s_v.insert(v);

  try {
    e.subgraph = induced_subgraph(graph_, e.s_v);
  } catch (const std::exception& ex) {
    throw StageError("subgraph", ex.what());
  }
  return e;
}

Explanation explain_node(const TextAttributedGraph& g, NodeId v, const GcnModel& gnn,
                         const ProjectorModel* projector, const LlmBackend& backend,
                         const ExplainConfig& cfg, const PromptTemplate& tmpl) {
  return Explainer(g, gnn, projector, backend, tmpl, cfg).explain(v);
}

json explanation_to_json(const Explanation& e) {
  json chi = json::object();
  for (const auto& [id, value] : e.chi.chi) chi[std::to_string(id)] = value;
  json provenance = json::object();
  for (const auto& [id, line] : e.chi.provenance) provenance[std::to_string(id)] = line;
  return {{"target", e.target},
          {"chi", std::move(chi)},
          {"provenance", std::move(provenance)},
          {"S_plus", e.s_plus},
          {"S_minus", e.s_minus},
          {"S_zero", e.s_zero},
          {"S_v", e.s_v},
          {"dropped", e.dropped_hallucinations},
          {"excluded_degenerate", e.excluded_degenerate},
          {"unparseable", e.chi.unparseable},
          {"raw_response", e.raw_response},
          {"mode", {{"prompt", to_string(e.mode)}, {"post_processing", e.post_processing}}},
          {"p", e.p_used},
          {"tree_size", e.tree_size},
          {"seed", e.seed}};
}

void write_explanation(const Explanation& e, const std::filesystem::path& dir) {
  checkpoint::write_json(dir / (std::to_string(e.target) + ".expl.json"), explanation_to_json(e));
}

std::string explanation_to_dot(const Explanation& e, const TextAttributedGraph& g) {
  std::ostringstream out;
  out << "graph explanation_" << e.target << " {\n";
  out << "  node [style=filled, fontname=\"Helvetica\"];\n";
  for (NodeId u : e.s_v) {
    const auto& names = g.class_names();
    const int label = g.label(u);
    std::string cls = label >= 0 && static_cast<std::size_t>(label) < names.size() ? names[static_cast<std::size_t>(label)] : "?";
    std::string escaped;
    for (char c : cls) {
      if (c == '"' || c == '\\') escaped.push_back('\\');
      escaped.push_back(c);
    }
    out << "  " << u << " [label=\"" << u << "\\n" << escaped << "\"";
    if (u == e.target) {
      out << ", shape=doublecircle, fillcolor=\"#f6c85f\"";
    } else if (e.s_plus.count(u)) {
      out << ", shape=circle, fillcolor=\"#8fd19e\"";
    } else {
      out << ", shape=circle, fillcolor=\"#d9d9d9\"";
    }
    out << "];\n";
  }
  for (const auto& [a, b] : e.subgraph.graph.edges()) {
    out << "  " << e.subgraph.to_original[static_cast<std::size_t>(a)] << " -- "
        << e.subgraph.to_original[static_cast<std::size_t>(b)] << ";\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace tagx
