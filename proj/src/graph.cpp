#include "tagx/graph.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace tagx {

namespace fs = std::filesystem;
using nlohmann::json;

TextAttributedGraph::TextAttributedGraph(GraphParts parts)
    : name_(std::move(parts.name)),
      texts_(std::move(parts.texts)),
      features_(std::move(parts.features)),
      labels_(std::move(parts.labels)),
      class_names_(std::move(parts.class_names)),
      splits_(std::move(parts.splits)),
      dummy_label_(parts.dummy_label) {
  const std::size_t n = texts_.size();
  if (static_cast<std::size_t>(features_.rows()) != n) {
    throw ShapeError("feature matrix has " + std::to_string(features_.rows()) + " rows for " +
                     std::to_string(n) + " nodes");
  }
  if (labels_.size() != n) {
    throw ShapeError("label vector has " + std::to_string(labels_.size()) + " entries for " +
                     std::to_string(n) + " nodes");
  }
  const int num_classes = static_cast<int>(class_names_.size());
  for (std::size_t v = 0; v < n; ++v) {
    if (labels_[v] < 0 || labels_[v] >= num_classes) {
      throw DataError("label " + std::to_string(labels_[v]) + " of node " + std::to_string(v) +
                      " is outside 0.." + std::to_string(num_classes - 1));
    }
  }
  if (!features_.allFinite()) throw DataError("non-finite feature value");

  stats_.input_edges = parts.edges.size();
  std::vector<Edge> clean;
  clean.reserve(parts.edges.size());
  for (auto [u, v] : parts.edges) {
    if (!contains(u) || !contains(v)) {
      throw DataError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                      ") has an endpoint outside 0.." + std::to_string(n - 1));
    }
    if (u == v) {
      ++stats_.self_loops_removed;
      continue;
    }
    clean.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(clean.begin(), clean.end());
  const auto last = std::unique(clean.begin(), clean.end());
  stats_.duplicates_removed = static_cast<std::size_t>(clean.end() - last);
  clean.erase(last, clean.end());
  edges_ = std::move(clean);
  if (stats_.self_loops_removed > 0) {
    spdlog::warn("{}: removed {} self-loop(s)", name_, stats_.self_loops_removed);
  }
  if (stats_.duplicates_removed > 0) {
    spdlog::warn("{}: removed {} duplicate edge(s)", name_, stats_.duplicates_removed);
  }

  adjacency_.assign(n, {});
  for (auto [u, v] : edges_) {
    adjacency_[static_cast<std::size_t>(u)].push_back(v);
    adjacency_[static_cast<std::size_t>(v)].push_back(u);
  }
  for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());

  std::vector<char> seen(n, 0);
  for (const auto* split : {&splits_.train, &splits_.val, &splits_.test}) {
    for (NodeId v : *split) {
      if (!contains(v)) throw DataError("split node " + std::to_string(v) + " out of range");
      if (seen[static_cast<std::size_t>(v)]) {
        throw DataError("node " + std::to_string(v) + " appears in more than one split");
      }
      seen[static_cast<std::size_t>(v)] = 1;
    }
  }
  const bool any_split = !(splits_.train.empty() && splits_.val.empty() && splits_.test.empty());
  if (any_split) {
    std::size_t uncovered = 0;
    for (std::size_t v = 0; v < n; ++v) {
      if (!seen[v] && !(dummy_label_ && labels_[v] == *dummy_label_)) ++uncovered;
    }
    if (uncovered > 0) spdlog::warn("{}: {} labeled node(s) belong to no split", name_, uncovered);
  }
}

void TextAttributedGraph::check_node(NodeId v) const {
  if (!contains(v)) {
    throw Error("node " + std::to_string(v) + " is not in graph '" + name_ + "' (" +
                std::to_string(num_nodes()) + " nodes)");
  }
}

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<NodeId> read_split(const json& splits, const char* key, std::size_t keep_below) {
  std::vector<NodeId> out;
  if (!splits.contains(key)) return out;
  for (const auto& v : splits.at(key)) {
    const auto id = v.get<NodeId>();
    if (static_cast<std::size_t>(id) < keep_below) out.push_back(id);
  }
  return out;
}

}  // namespace

TextAttributedGraph load_tag_dataset(const fs::path& dir, const std::string& name,
                                     const LoadOptions& options) {
  const fs::path meta_path = dir / "meta.json";
  const fs::path nodes_path = dir / "nodes.jsonl";
  const fs::path edges_path = dir / "edges.tsv";
  for (const auto& p : {meta_path, nodes_path, edges_path}) {
    if (!fs::exists(p)) throw DataError("missing dataset file " + p.string());
  }

  const json meta = read_json_file(meta_path);
  std::size_t n = 0;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  GraphParts parts;
  try {
    n = meta.at("num_nodes").get<std::size_t>();
    num_classes = meta.at("num_classes").get<std::size_t>();
    dim = meta.at("feature_dim").get<std::size_t>();
    parts.class_names = meta.at("class_names").get<std::vector<std::string>>();
    parts.name = name.empty() ? meta.at("name").get<std::string>() : name;
    if (meta.contains("dummy_label")) parts.dummy_label = meta["dummy_label"].get<int>();
  } catch (const json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  if (parts.class_names.size() != num_classes) {
    throw DataError(meta_path.string() + ": num_classes is " + std::to_string(num_classes) +
                    " but class_names has " + std::to_string(parts.class_names.size()) +
                    " entries");
  }

  const std::size_t keep = options.max_nodes ? std::min(*options.max_nodes, n) : n;
  parts.texts.assign(keep, {});
  parts.labels.assign(keep, -1);
  parts.features = Matrix::Zero(static_cast<Eigen::Index>(keep), static_cast<Eigen::Index>(dim));
  std::vector<char> seen(n, 0);

  {
    std::ifstream in(nodes_path);
    if (!in) throw DataError("cannot open " + nodes_path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = nodes_path.string() + ":" + std::to_string(line_no);
      json node;
      try {
        node = json::parse(line);
      } catch (const json::exception& e) {
        throw DataError(where + ": malformed line: " + e.what());
      }
      try {
        const auto id = node.at("id").get<std::int64_t>();
        if (id < 0 || static_cast<std::size_t>(id) >= n) {
          throw DataError(where + ": node id " + std::to_string(id) + " outside 0.." +
                          std::to_string(n - 1));
        }
        if (seen[static_cast<std::size_t>(id)]) {
          throw DataError(where + ": duplicate node id " + std::to_string(id));
        }
        seen[static_cast<std::size_t>(id)] = 1;
        const auto label = node.at("label").get<int>();
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
          throw DataError(where + ": label " + std::to_string(label) + " out of range 0.." +
                          std::to_string(num_classes - 1));
        }
        const auto& feats = node.at("features");
        if (!feats.is_array() || feats.size() != dim) {
          throw DataError(where + ": feature length " +
                          std::to_string(feats.is_array() ? feats.size() : 0) +
                          " does not match feature_dim " + std::to_string(dim));
        }
        if (static_cast<std::size_t>(id) >= keep) continue;
        const auto row = static_cast<Eigen::Index>(id);
        for (std::size_t j = 0; j < dim; ++j) {
          parts.features(row, static_cast<Eigen::Index>(j)) = feats[j].get<double>();
        }
        parts.texts[static_cast<std::size_t>(id)] =
            node.contains("text") && !node["text"].is_null() ? node["text"].get<std::string>()
                                                             : std::string{};
        parts.labels[static_cast<std::size_t>(id)] = label;
      } catch (const json::exception& e) {
        throw DataError(where + ": " + e.what());
      }
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (!seen[v]) throw DataError(nodes_path.string() + ": node " + std::to_string(v) + " missing");
  }

  std::size_t input_edges = 0;
  {
    std::ifstream in(edges_path);
    if (!in) throw DataError("cannot open " + edges_path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const auto tab = line.find('\t');
      NodeId u = 0;
      NodeId v = 0;
      bool ok = tab != std::string::npos;
      if (ok) {
        std::istringstream a(line.substr(0, tab));
        std::istringstream b(line.substr(tab + 1));
        ok = static_cast<bool>(a >> u) && static_cast<bool>(b >> v) && (a >> std::ws).eof() &&
             (b >> std::ws).eof();
      }
      if (!ok) {
        throw DataError(edges_path.string() + ":" + std::to_string(line_no) +
                        ": malformed edge line '" + line + "'");
      }
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
        throw DataError(edges_path.string() + ":" + std::to_string(line_no) + ": endpoint out of range");
      }
      ++input_edges;
      if (static_cast<std::size_t>(u) < keep && static_cast<std::size_t>(v) < keep) {
        parts.edges.emplace_back(u, v);
      }
    }
  }
  if (meta.contains("num_edges") && !options.max_nodes) {
    const auto declared = meta["num_edges"].get<std::size_t>();
    if (declared != input_edges) {
      throw DataError(meta_path.string() + ": num_edges is " + std::to_string(declared) + " but " +
                      edges_path.string() + " has " + std::to_string(input_edges) + " edge lines");
    }
  }

  if (meta.contains("splits")) {
    const auto& s = meta["splits"];
    parts.splits.train = read_split(s, "train", keep);
    parts.splits.val = read_split(s, "val", keep);
    parts.splits.test = read_split(s, "test", keep);
  }
  return TextAttributedGraph(std::move(parts));
}

void write_tag_dataset(const TextAttributedGraph& g, const fs::path& dir) {
  fs::create_directories(dir);
  json meta;
  meta["name"] = g.name();
  meta["num_nodes"] = g.num_nodes();
  meta["num_edges"] = g.num_edges();
  meta["num_classes"] = g.num_classes();
  meta["feature_dim"] = g.feature_dim();
  meta["class_names"] = g.class_names();
  meta["splits"] = {{"train", g.splits().train}, {"val", g.splits().val}, {"test", g.splits().test}};
  if (g.dummy_label()) meta["dummy_label"] = *g.dummy_label();
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

  std::ofstream nodes(dir / "nodes.jsonl");
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const auto row = g.features().row(static_cast<Eigen::Index>(v));
    json node;
    node["id"] = v;
    node["text"] = g.texts()[v];
    node["label"] = g.labels()[v];
    node["features"] = std::vector<double>(row.data(), row.data() + row.size());
    nodes << node.dump() << '\n';
  }
  std::ofstream edges(dir / "edges.tsv");
  for (auto [u, v] : g.edges()) edges << u << '\t' << v << '\n';
}

NodeId Subgraph::local_id(NodeId original) const {
  const auto it = std::lower_bound(to_original.begin(), to_original.end(), original);
  if (it == to_original.end() || *it != original) return -1;
  return static_cast<NodeId>(it - to_original.begin());
}

Subgraph induced_subgraph(const TextAttributedGraph& g, const NodeSet& nodes) {
  if (nodes.empty()) throw Error("induced_subgraph: empty node set");
  for (NodeId v : nodes) g.check_node(v);

  Subgraph sub;
  sub.to_original.assign(nodes.begin(), nodes.end());
  std::vector<NodeId> local(g.num_nodes(), -1);
  for (std::size_t i = 0; i < sub.to_original.size(); ++i) {
    local[static_cast<std::size_t>(sub.to_original[i])] = static_cast<NodeId>(i);
  }

  GraphParts parts;
  parts.name = g.name();
  parts.class_names = g.class_names();
  parts.dummy_label = g.dummy_label();
  const auto k = static_cast<Eigen::Index>(sub.to_original.size());
  parts.features.resize(k, static_cast<Eigen::Index>(g.feature_dim()));
  for (Eigen::Index i = 0; i < k; ++i) {
    const NodeId v = sub.to_original[static_cast<std::size_t>(i)];
    parts.features.row(i) = g.features().row(static_cast<Eigen::Index>(v));
    parts.texts.push_back(g.text(v));
    parts.labels.push_back(g.label(v));
  }
  // Only member adjacency is scanned, so small subgraphs of large graphs stay cheap.
  for (NodeId v : sub.to_original) {
    for (NodeId u : g.neighbors(v)) {
      if (u > v && local[static_cast<std::size_t>(u)] >= 0) {
        parts.edges.emplace_back(local[static_cast<std::size_t>(v)], local[static_cast<std::size_t>(u)]);
      }
    }
  }
  auto remap = [&](const std::vector<NodeId>& in) {
    std::vector<NodeId> out;
    for (NodeId v : in) {
      if (local[static_cast<std::size_t>(v)] >= 0) out.push_back(local[static_cast<std::size_t>(v)]);
    }
    return out;
  };
  parts.splits = {remap(g.splits().train), remap(g.splits().val), remap(g.splits().test)};
  sub.graph = TextAttributedGraph(std::move(parts));
  return sub;
}

ComputationTree computation_tree(const TextAttributedGraph& g, NodeId root, int depth,
                                 std::size_t max_tree_nodes) {
  g.check_node(root);
  if (depth < 1) throw Error("computation_tree: depth must be >= 1");
  const std::uint64_t total = tree_walk_count(g, root, depth);
  if (total > max_tree_nodes) {
    throw Error("computation tree of node " + std::to_string(root) + " at depth " +
                std::to_string(depth) + " has " + std::to_string(total) + " positions (limit " +
                std::to_string(max_tree_nodes) + ")");
  }

  ComputationTree tree;
  tree.root = root;
  tree.depth = depth;
  tree.nodes.reserve(static_cast<std::size_t>(total));
  tree.nodes.push_back({root, -1, 0});
  std::size_t level_begin = 0;
  for (int level = 1; level <= depth; ++level) {
    const std::size_t level_end = tree.nodes.size();
    for (std::size_t pos = level_begin; pos < level_end; ++pos) {
      const NodeId at = tree.nodes[pos].node;
      for (NodeId next : g.neighbors(at)) {
        tree.nodes.push_back({next, static_cast<std::int64_t>(pos), level});
      }
    }
    level_begin = level_end;
  }
  tree.unique_nodes = tree_unique_nodes(g, root, depth);
  return tree;
}

std::vector<NodeId> tree_unique_nodes(const TextAttributedGraph& g, NodeId root, int depth) {
  g.check_node(root);
  std::vector<NodeId> frontier{root};
  std::unordered_set<NodeId> seen{root};
  for (int level = 0; level < depth && !frontier.empty(); ++level) {
    std::vector<NodeId> next;
    for (NodeId v : frontier) {
      for (NodeId u : g.neighbors(v)) {
        if (seen.insert(u).second) next.push_back(u);
      }
    }
    frontier = std::move(next);
  }
  std::vector<NodeId> out(seen.begin(), seen.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t tree_walk_count(const TextAttributedGraph& g, NodeId root, int depth) {
  g.check_node(root);
  // walks[u] = number of walks of the current length from root ending at u.
  std::unordered_map<NodeId, std::uint64_t> walks{{root, 1}};
  std::uint64_t total = 1;
  for (int level = 1; level <= depth; ++level) {
    std::unordered_map<NodeId, std::uint64_t> next;
    for (auto [v, count] : walks) {
      for (NodeId u : g.neighbors(v)) next[u] += count;
    }
    for (auto [_, count] : next) total += count;
    walks = std::move(next);
  }
  return total;
}

}  // namespace tagx
