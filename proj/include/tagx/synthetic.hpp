#pragma once

#include "tagx/graph.hpp"

#include <cstdint>
#include <string>

namespace tagx {

/// Random text-attributed graph with planted classes. Each class owns a block
/// of the vocabulary; a node draws `words_per_node` words, each from its own
/// class block with probability `signal`, otherwise uniformly. Features are
/// word counts and the text is the word sequence. Edges join same-class nodes
/// with probability `homophily`.
struct SyntheticConfig {
  std::string name = "synthetic";
  std::size_t num_nodes = 60;
  std::size_t num_classes = 3;
  std::size_t vocabulary = 30;
  std::size_t words_per_node = 8;
  double signal = 0.6;
  std::size_t num_edges = 120;
  double homophily = 0.6;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

TextAttributedGraph make_synthetic_graph(const SyntheticConfig& cfg);

/// Two disjoint cliques of `clique_size` nodes each; class c has one-hot
/// feature e_c. Splits alternate train/val/test inside each clique.
TextAttributedGraph make_two_cliques(std::size_t clique_size = 5);

}  // namespace tagx
