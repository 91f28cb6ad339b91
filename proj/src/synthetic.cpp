#include "tagx/synthetic.hpp"

#include "tagx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace tagx {

void SyntheticConfig::validate() const {
  if (num_nodes < 2 || num_classes < 2) throw Error("synthetic graph needs >= 2 nodes and classes");
  if (num_classes > num_nodes) throw Error("more classes than nodes");
  if (vocabulary < num_classes) throw Error("vocabulary must cover every class");
  if (signal < 0.0 || signal > 1.0 || homophily < 0.0 || homophily > 1.0) {
    throw Error("signal and homophily must lie in [0, 1]");
  }
  if (train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction >= 1.0) {
    throw Error("split fractions must leave room for a test split");
  }
  if (num_edges > num_nodes * (num_nodes - 1) / 2) throw Error("too many edges requested");
}

namespace {

std::string word(std::size_t cls, std::size_t i) {
  static const char* const roots[] = {"astro", "bio", "chrono", "dyna", "electro", "ferro", "geo", "hydro",
                                      "info", "kine", "litho", "magneto", "neuro", "opto", "photo", "quanto"};
  return std::string(roots[cls % 16]) + (cls >= 16 ? std::to_string(cls / 16) : "") + "w" + std::to_string(i);
}

}  // namespace

TextAttributedGraph make_synthetic_graph(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t n = cfg.num_nodes;
  const std::size_t C = cfg.num_classes;
  const std::size_t block = cfg.vocabulary / C;

  GraphParts parts;
  parts.name = cfg.name;
  for (std::size_t c = 0; c < C; ++c) parts.class_names.push_back("class_" + std::to_string(c));

  // Balanced labels in shuffled order.
  parts.labels.resize(n);
  for (std::size_t v = 0; v < n; ++v) parts.labels[v] = static_cast<int>(v % C);
  rng.shuffle(parts.labels);

  parts.features = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.vocabulary));
  parts.texts.resize(n);
  std::vector<std::vector<NodeId>> members(C);
  for (std::size_t v = 0; v < n; ++v) {
    const auto c = static_cast<std::size_t>(parts.labels[v]);
    members[c].push_back(static_cast<NodeId>(v));
    std::string text;
    for (std::size_t w = 0; w < cfg.words_per_node; ++w) {
      std::size_t idx = rng.uniform() < cfg.signal ? c * block + rng.index(block) : rng.index(cfg.vocabulary);
      parts.features(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(idx)) += 1.0;
      if (!text.empty()) text += ' ';
      text += word(std::min(idx / block, C - 1), idx);
    }
    parts.texts[v] = text;
  }

  std::set<Edge> edges;
  std::size_t attempts = 0;
  while (edges.size() < cfg.num_edges) {
    if (++attempts > 1000 * cfg.num_edges + 1000) throw Error("could not place the requested edges");
    const auto u = static_cast<NodeId>(rng.index(n));
    const auto cu = static_cast<std::size_t>(parts.labels[static_cast<std::size_t>(u)]);
    NodeId v;
    if (rng.uniform() < cfg.homophily) {
      if (members[cu].size() < 2) continue;
      v = members[cu][rng.index(members[cu].size())];
    } else {
      v = static_cast<NodeId>(rng.index(n));
      if (static_cast<std::size_t>(parts.labels[static_cast<std::size_t>(v)]) == cu) continue;
    }
    if (u == v) continue;
    edges.insert({std::min(u, v), std::max(u, v)});
  }
  parts.edges.assign(edges.begin(), edges.end());

  std::vector<NodeId> order(n);
  for (std::size_t v = 0; v < n; ++v) order[v] = static_cast<NodeId>(v);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(n)));
  parts.splits.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  parts.splits.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                          order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  parts.splits.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto* s : {&parts.splits.train, &parts.splits.val, &parts.splits.test}) std::sort(s->begin(), s->end());
  return TextAttributedGraph(std::move(parts));
}

TextAttributedGraph make_two_cliques(std::size_t clique_size) {
  if (clique_size < 3) throw Error("cliques need at least 3 nodes for the three splits");
  GraphParts parts;
  parts.name = "two_cliques";
  parts.class_names = {"left", "right"};
  const std::size_t n = 2 * clique_size;
  parts.features = Matrix::Zero(static_cast<Eigen::Index>(n), 2);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < clique_size; ++i) {
      const auto v = static_cast<NodeId>(c * clique_size + i);
      parts.labels.push_back(static_cast<int>(c));
      parts.features(v, static_cast<Eigen::Index>(c)) = 1.0;
      parts.texts.push_back(std::string(c == 0 ? "left" : "right") + " clique member " + std::to_string(i));
      for (std::size_t j = i + 1; j < clique_size; ++j) {
        parts.edges.push_back({v, static_cast<NodeId>(c * clique_size + j)});
      }
      auto& split = i % 3 == 0 ? parts.splits.train : i % 3 == 1 ? parts.splits.val : parts.splits.test;
      split.push_back(v);
    }
  }
  return TextAttributedGraph(std::move(parts));
}

}  // namespace tagx
