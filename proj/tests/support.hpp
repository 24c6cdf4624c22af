#ifndef SDLT_TESTS_SUPPORT_HPP
#define SDLT_TESTS_SUPPORT_HPP

#include <random>
#include <string>
#include <vector>

#include "sdlt/phylo.hpp"

namespace sdlt::testing {

inline std::vector<std::string> taxon_names(int L) {
  std::vector<std::string> out;
  for (int k = 0; k < L; ++k) out.push_back("t" + std::to_string(k));
  return out;
}

// Random ranked tree: internal node k attaches to a uniformly chosen open child slot of the
// already placed nodes, leaves fill the remaining slots in random order.
inline Phylogeny random_tree(int L, std::mt19937_64& rng, double root_time = -1000.0,
                             int catastrophes = 0, bool offset_leaves = false) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> times(L);
  for (int k = 1; k < L; ++k) times[k] = root_time * unit(rng);
  std::sort(times.begin() + 1, times.end());
  times[1] = root_time;
  std::vector<Phylogeny::Node> nodes(2 * L);
  nodes[0].child = {1, -1};
  nodes[1].parent = 0;
  nodes[1].time = root_time;
  std::vector<std::pair<int, int>> open{{1, 0}, {1, 1}};
  auto take = [&]() {
    std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
    const std::size_t idx = pick(rng);
    const auto slot = open[idx];
    open.erase(open.begin() + static_cast<std::ptrdiff_t>(idx));
    return slot;
  };
  for (int k = 2; k < L; ++k) {
    const auto [p, side] = take();
    nodes[p].child[side] = k;
    nodes[k].parent = p;
    nodes[k].time = times[k];
    open.push_back({k, 0});
    open.push_back({k, 1});
  }
  for (int leaf = L; leaf < 2 * L; ++leaf) {
    const auto [p, side] = take();
    nodes[p].child[side] = leaf;
    nodes[leaf].parent = p;
    const double tp = nodes[p].time;
    nodes[leaf].time = offset_leaves ? tp + (0.0 - tp) * (0.2 + 0.8 * unit(rng)) : 0.0;
  }
  if (offset_leaves) nodes[2 * L - 1].time = 0.0;
  std::vector<Catastrophe> cats;
  std::uniform_int_distribution<int> branch(2, 2 * L - 1);
  for (int c = 0; c < catastrophes; ++c) cats.push_back({branch(rng), 0.05 + 0.9 * unit(rng)});
  return Phylogeny(taxon_names(L), std::move(nodes), std::move(cats));
}

// The eight-leaf example tree: 1->(8,2), 2->(4,3), 3->(7,15), 4->(6,5), 5,6,7 split into
// leaves, with t_i = i - 8 for internal nodes.
inline Phylogeny eight_leaf_tree() {
  std::vector<Phylogeny::Node> n(16);
  auto link = [&](int p, int a, int b) {
    n[p].child = {a, b};
    n[a].parent = p;
    n[b].parent = p;
  };
  n[0].child = {1, -1};
  n[1].parent = 0;
  link(1, 8, 2);
  link(2, 4, 3);
  link(3, 7, 15);
  link(4, 6, 5);
  link(5, 11, 12);
  link(6, 9, 10);
  link(7, 13, 14);
  for (int i = 1; i < 8; ++i) n[i].time = i - 8.0;
  for (int i = 8; i < 16; ++i) n[i].time = 0.0;
  return Phylogeny(taxon_names(8), std::move(n));
}

}  // namespace sdlt::testing

#endif  // SDLT_TESTS_SUPPORT_HPP
