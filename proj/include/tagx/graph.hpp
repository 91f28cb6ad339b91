#pragma once

#include "tagx/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tagx {

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
};

using Edge = std::pair<NodeId, NodeId>;

/// Raw material for a graph. Edges may contain self-loops and duplicates in
/// either orientation; the graph constructor cleans them up.
struct GraphParts {
  std::string name;
  std::vector<std::string> texts;
  Matrix features;
  std::vector<int> labels;
  std::vector<Edge> edges;
  std::vector<std::string> class_names;
  Splits splits;
  /// Label carried by nodes that are not classification targets (e.g. the
  /// speaker/topic nodes of a homogenized knowledge graph).
  std::optional<int> dummy_label;
};

struct IngestStats {
  std::size_t input_edges = 0;
  std::size_t self_loops_removed = 0;
  std::size_t duplicates_removed = 0;
};

/// Text-attributed graph. Immutable once constructed.
///
/// Edges are undirected and stored once as (u, v) with u < v, sorted.
/// Adjacency lists are sorted ascending.
class TextAttributedGraph {
 public:
  TextAttributedGraph() = default;
  explicit TextAttributedGraph(GraphParts parts);

  const std::string& name() const noexcept { return name_; }
  std::size_t num_nodes() const noexcept { return texts_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_classes() const noexcept { return class_names_.size(); }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }

  const std::vector<std::string>& texts() const noexcept { return texts_; }
  const std::string& text(NodeId v) const { return texts_.at(index(v)); }
  const Matrix& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  int label(NodeId v) const { return labels_.at(index(v)); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<NodeId>& neighbors(NodeId v) const { return adjacency_.at(index(v)); }
  std::size_t degree(NodeId v) const { return neighbors(v).size(); }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const Splits& splits() const noexcept { return splits_; }
  std::optional<int> dummy_label() const noexcept { return dummy_label_; }
  const IngestStats& ingest_stats() const noexcept { return stats_; }

  bool contains(NodeId v) const noexcept {
    return v >= 0 && static_cast<std::size_t>(v) < num_nodes();
  }

  /// Throws if v is not a node of this graph.
  void check_node(NodeId v) const;

 private:
  std::size_t index(NodeId v) const {
    check_node(v);
    return static_cast<std::size_t>(v);
  }

  std::string name_;
  std::vector<std::string> texts_;
  Matrix features_;
  std::vector<int> labels_;
  std::vector<Edge> edges_;
  std::vector<std::vector<NodeId>> adjacency_;
  std::vector<std::string> class_names_;
  Splits splits_;
  std::optional<int> dummy_label_;
  IngestStats stats_;
};

struct LoadOptions {
  /// Keep only node ids < max_nodes and the edges among them.
  std::optional<std::size_t> max_nodes;
};

/// Reads a dataset directory holding meta.json, nodes.jsonl and edges.tsv.
TextAttributedGraph load_tag_dataset(const std::filesystem::path& dir, const std::string& name = {},
                                     const LoadOptions& options = {});

/// Writes a graph in the same directory layout load_tag_dataset reads.
void write_tag_dataset(const TextAttributedGraph& g, const std::filesystem::path& dir);

struct Subgraph {
  TextAttributedGraph graph;
  /// Local id -> original id, ascending.
  std::vector<NodeId> to_original;

  /// Local id of an original node, or -1 when absent.
  NodeId local_id(NodeId original) const;
};

/// Subgraph induced by `nodes`. Local ids follow ascending original id.
Subgraph induced_subgraph(const TextAttributedGraph& g, const NodeSet& nodes);

struct TreeNode {
  NodeId node;
  /// Position of the parent in ComputationTree::nodes; -1 for the root.
  std::int64_t parent;
  int level;
};

/// All walks of length <= depth from root, arranged as a tree with
/// repetitions. Walks may backtrack.
struct ComputationTree {
  NodeId root = 0;
  int depth = 0;
  /// Level order; position 0 is the root.
  std::vector<TreeNode> nodes;
  /// Distinct graph nodes appearing in the tree, ascending, root included.
  std::vector<NodeId> unique_nodes;
};

/// Materializes the tree. Throws when the tree would exceed max_tree_nodes.
ComputationTree computation_tree(const TextAttributedGraph& g, NodeId root, int depth,
                                 std::size_t max_tree_nodes = 20'000'000);

/// unique_nodes of the computation tree without materializing it (BFS).
std::vector<NodeId> tree_unique_nodes(const TextAttributedGraph& g, NodeId root, int depth);

/// Number of positions in the computation tree (walks of length <= depth).
std::uint64_t tree_walk_count(const TextAttributedGraph& g, NodeId root, int depth);

}  // namespace tagx
