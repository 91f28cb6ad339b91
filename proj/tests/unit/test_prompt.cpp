#include "tagx/prompt.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <regex>

using namespace tagx;
using tagx::test::make_graph;

namespace {

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

std::map<NodeId, Matrix> soft_for(const std::vector<NodeId>& nodes, Eigen::Index k = 2, Eigen::Index h = 3) {
  std::map<NodeId, Matrix> m;
  for (NodeId v : nodes) m[v] = Matrix::Constant(k, h, static_cast<double>(v) + 1.0);
  return m;
}

PromptTemplate amazon_template() {
  return load_template(std::filesystem::path(TAGX_SOURCE_DIR) / "templates" / "amazon.json");
}

TextAttributedGraph amazon_like() {
  GraphParts p;
  p.name = "amazon";
  p.features = Matrix::Identity(4, 4);
  p.labels = {0, 1, 0, 0};
  p.class_names = {"Clothing, Shoes & Jewelry", "Books"};
  p.texts = {"soft cotton shirt", "mystery novel", "leather shoes", "silver ring"};
  p.edges = {{0, 1}, {0, 2}, {2, 3}};
  p.splits.test = {0, 1, 2, 3};
  return TextAttributedGraph(std::move(p));
}

}  // namespace

TEST(Prompt, TriangleCandidatesAppearOnce) {
  const auto g = make_graph(3, {{0, 1}, {1, 2}, {0, 2}});
  const auto tree = computation_tree(g, 0, 2);
  ASSERT_EQ(tree.nodes.size(), 7u);
  const auto p = build_hybrid_prompt(g, 0, tree, soft_for({0, 1, 2}), default_template(), {});
  EXPECT_EQ(p.candidates, (std::vector<NodeId>{1, 2}));
  EXPECT_EQ(p.soft_segment_count(), 3u);
  const auto text = render_text_only(p);
  EXPECT_EQ(count(text, "- Node 1:"), 1u);
  EXPECT_EQ(count(text, "- Node 2:"), 1u);
  EXPECT_EQ(count(text, "- Node 0:"), 0u);
}

TEST(Prompt, IsolatedNodeHasOnlyTargetSegment) {
  const auto g = make_graph(2, {});
  const auto p = build_hybrid_prompt(g, 1, computation_tree(g, 1, 2), soft_for({1}), default_template(), {});
  EXPECT_TRUE(p.candidates.empty());
  EXPECT_EQ(p.soft_segment_count(), 1u);
  EXPECT_EQ(count(render_text_only(p), "- Node"), 0u);
}

TEST(Prompt, SoftSegmentsAreBracketedByMarkers) {
  const auto g = make_graph(4, {{0, 1}, {1, 2}, {2, 3}});
  const auto tmpl = default_template();
  const auto p = build_hybrid_prompt(g, 1, tree_unique_nodes(g, 1, 2), soft_for({0, 1, 2, 3}), tmpl, {});
  EXPECT_EQ(p.candidates, (std::vector<NodeId>{0, 2, 3}));
  ASSERT_EQ(p.soft_segment_count(), 4u);
  for (std::size_t i = 0; i < p.segments.size(); ++i) {
    const auto* s = std::get_if<SoftSegment>(&p.segments[i]);
    if (!s) continue;
    ASSERT_GT(i, 0u);
    ASSERT_LT(i + 1, p.segments.size());
    const auto& before = std::get<TextSegment>(p.segments[i - 1]).content;
    const auto& after = std::get<TextSegment>(p.segments[i + 1]).content;
    if (s->node == 1) {
      EXPECT_TRUE(before.ends_with(tmpl.target_begin + " "));
      EXPECT_TRUE(after.starts_with(" " + tmpl.target_end));
    } else {
      EXPECT_TRUE(before.ends_with(tmpl.node_begin + " "));
      EXPECT_TRUE(after.starts_with(" " + tmpl.node_end));
    }
  }
  // Candidates are enumerated in ascending order.
  const auto text = render_text_only(p);
  EXPECT_LT(text.find("[SOFT:0:"), text.find("[SOFT:2:"));
  EXPECT_LT(text.find("[SOFT:2:"), text.find("[SOFT:3:"));
}

TEST(Prompt, MissingSoftMatrixThrows) {
  const auto g = make_graph(3, {{0, 1}, {1, 2}});
  EXPECT_THROW(build_hybrid_prompt(g, 0, tree_unique_nodes(g, 0, 2), soft_for({0, 1}), default_template(), {}),
               Error);
}

TEST(Prompt, AmazonLayout) {
  const auto g = amazon_like();
  const auto tmpl = amazon_template();
  EXPECT_EQ(tmpl.entity_noun, "Product");
  PromptOptions opt;
  opt.predicted_class = 0;
  const auto p = build_hybrid_prompt(g, 0, tree_unique_nodes(g, 0, 2), soft_for({0, 1, 2, 3}, 4, 8), tmpl, opt);
  const auto text = render_text_only(p);
  EXPECT_NE(text.find("Target Product ID: 0\nPredicted Category: Clothing, Shoes & Jewelry\n"), std::string::npos);
  EXPECT_NE(text.find("Clothing, Shoes & Jewelry, Books"), std::string::npos);
  EXPECT_EQ(count(text, "\\BEGIN TARGET KEYWORDS"), 1u);
  EXPECT_EQ(count(text, "\\END TARGET KEYWORDS"), 1u);
  EXPECT_EQ(count(text, "\\BEGIN KEYWORDS"), 3u);
  EXPECT_EQ(count(text, "\\END KEYWORDS"), 3u);
  for (int u : {1, 2, 3}) EXPECT_EQ(count(text, "- Product " + std::to_string(u) + ":\n"), 1u);
  EXPECT_NE(text.find("[SOFT:0:4x8]"), std::string::npos);
  EXPECT_NE(text.find("Support: YES or NO"), std::string::npos);
  EXPECT_NE(text.find("category 'Clothing, Shoes & Jewelry'"), std::string::npos);
  EXPECT_LT(text.find("TARGET KEYWORDS"), text.find("- Product 1:"));
  EXPECT_LT(text.find("- Product 3:"), text.find("Instructions:"));
}

TEST(Prompt, NamedIdsAreDeclared) {
  const auto g = amazon_like();
  const auto p = build_hybrid_prompt(g, 2, tree_unique_nodes(g, 2, 1), soft_for({0, 2, 3}), amazon_template(), {});
  const auto text = render_text_only(p);
  const std::regex id_re(R"(Product (?:ID: )?(\d+))");
  std::size_t named = 0;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), id_re); it != std::sregex_iterator(); ++it) {
    const NodeId id = std::stoll((*it)[1]);
    EXPECT_TRUE(id == p.target || std::binary_search(p.candidates.begin(), p.candidates.end(), id)) << id;
    ++named;
  }
  EXPECT_EQ(named, 3u);
}

TEST(Prompt, BuildsAreByteIdentical) {
  const auto g = amazon_like();
  const auto a = build_hybrid_prompt(g, 0, tree_unique_nodes(g, 0, 2), soft_for({0, 1, 2, 3}), amazon_template(), {});
  const auto b = build_hybrid_prompt(g, 0, tree_unique_nodes(g, 0, 2), soft_for({0, 1, 2, 3}), amazon_template(), {});
  EXPECT_EQ(render_text_only(a), render_text_only(b));
}

TEST(Prompt, TextModeUsesNodeText) {
  const auto g = amazon_like();
  PromptOptions opt;
  opt.mode = PromptMode::text;
  const auto p = build_hybrid_prompt(g, 0, tree_unique_nodes(g, 0, 1), {}, amazon_template(), opt);
  EXPECT_EQ(p.soft_segment_count(), 0u);
  const auto text = render_text_only(p);
  EXPECT_NE(text.find("\\BEGIN TARGET KEYWORDS soft cotton shirt \\END TARGET KEYWORDS"), std::string::npos);
  EXPECT_NE(text.find("\\BEGIN KEYWORDS mystery novel \\END KEYWORDS"), std::string::npos);
  EXPECT_EQ(text.find("[SOFT:"), std::string::npos);
  // With no soft segments the rendering is the plain concatenation.
  std::string concat;
  for (const auto& s : p.segments) concat += std::get<TextSegment>(s).content;
  EXPECT_EQ(text, concat);
}

TEST(Prompt, TextModeRejectsEmptyText) {
  GraphParts parts;
  parts.features = Matrix::Identity(2, 2);
  parts.labels = {0, 0};
  parts.class_names = {"a"};
  parts.texts = {"x", ""};
  parts.edges = {{0, 1}};
  const TextAttributedGraph g(std::move(parts));
  PromptOptions opt;
  opt.mode = PromptMode::text;
  EXPECT_THROW(build_hybrid_prompt(g, 0, tree_unique_nodes(g, 0, 1), {}, default_template(), opt), Error);
}

TEST(Prompt, IncludeTextInSoftMode) {
  const auto g = amazon_like();
  PromptOptions opt;
  opt.include_text_in_soft_mode = true;
  const auto p = build_hybrid_prompt(g, 0, tree_unique_nodes(g, 0, 1), soft_for({0, 1, 2}), amazon_template(), opt);
  EXPECT_EQ(p.soft_segment_count(), 3u);
  const auto text = render_text_only(p);
  EXPECT_NE(text.find("[SOFT:1:2x3] mystery novel \\END KEYWORDS"), std::string::npos);
}

TEST(Prompt, RenderPlaceholder) {
  HybridPrompt p;
  p.segments.emplace_back(TextSegment{"a ", std::nullopt});
  p.segments.emplace_back(SoftSegment{7, Matrix::Zero(4, 8)});
  p.segments.emplace_back(TextSegment{" b", std::nullopt});
  EXPECT_EQ(render_text_only(p), "a [SOFT:7:4x8] b");
}

TEST(Prompt, TemplateValidation) {
  auto t = default_template();
  EXPECT_NO_THROW(t.validate());
  auto no_id = t;
  no_id.node_stanza = "- Node:\n";
  EXPECT_THROW(no_id.validate(), DataError);
  auto no_contract = t;
  no_contract.instructions = "Answer YES/NO";
  EXPECT_THROW(no_contract.validate(), DataError);
  auto no_marker = t;
  no_marker.node_end.clear();
  EXPECT_THROW(no_marker.validate(), DataError);
  EXPECT_THROW(template_from_json(nlohmann::json{{"dataset", "x"}}), DataError);
  EXPECT_EQ(template_to_json(template_from_json(template_to_json(t))), template_to_json(t));
}

TEST(Prompt, BundledTemplatesAreValid) {
  const std::filesystem::path dir = std::filesystem::path(TAGX_SOURCE_DIR) / "templates";
  for (const char* name : {"amazon", "cora", "wikics", "liar", "default"}) {
    EXPECT_NO_THROW(load_template(dir / (std::string(name) + ".json"))) << name;
  }
  EXPECT_EQ(find_template(dir, "Cora").entity_noun, "Paper");
  EXPECT_EQ(find_template(dir, "unknown-set").dataset, "default");
  tagx::test::TempDir empty;
  EXPECT_EQ(find_template(empty.path(), "cora").entity_noun, "Node");
}

TEST(Prompt, ModeNames) {
  EXPECT_EQ(prompt_mode_from_string("soft"), PromptMode::soft);
  EXPECT_EQ(to_string(PromptMode::text), "text");
  EXPECT_THROW(prompt_mode_from_string("hybrid"), Error);
}
