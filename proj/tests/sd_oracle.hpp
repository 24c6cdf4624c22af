#ifndef SDLT_TESTS_SD_ORACLE_HPP
#define SDLT_TESTS_SD_ORACLE_HPP

// Expected pattern frequencies without transfer, by summing over birth locations.  A trait
// present at the top of a segment of length l survives it with probability e^{-mu l}; a
// catastrophe multiplies survival by (1 - kappa) and contributes lambda kappa / mu births.

#include <cmath>
#include <map>

#include "sdlt/phylo.hpp"
#include "sdlt/types.hpp"

namespace sdlt::oracle {

// Distribution over leaf patterns (taxon bits, zero allowed) given presence at node v.
inline std::map<PatternBits, double> below_node(const Phylogeny& tree, int v, double mu, double kappa);

// Presence just below the top of branch c (at time s on the branch) -> distribution at leaves.
inline std::map<PatternBits, double> along_branch(const Phylogeny& tree, int c, double from_time, double mu,
                                                  double kappa) {
  double survive = std::exp(-mu * (tree.time(c) - from_time));
  for (const auto& cat : tree.catastrophes()) {
    if (cat.branch == c && tree.catastrophe_time(cat) > from_time) survive *= 1.0 - kappa;
  }
  std::map<PatternBits, double> out;
  for (const auto& [p, w] : below_node(tree, c, mu, kappa)) out[p] += survive * w;
  out[0] += 1.0 - survive;
  return out;
}

inline std::map<PatternBits, double> below_node(const Phylogeny& tree, int v, double mu, double kappa) {
  if (tree.is_leaf(v)) return {{PatternBits{1} << (v - tree.leaf_count()), 1.0}};
  const auto left = along_branch(tree, tree.child(v, 0), tree.time(v), mu, kappa);
  const auto right = along_branch(tree, tree.child(v, 1), tree.time(v), mu, kappa);
  std::map<PatternBits, double> out;
  for (const auto& [a, wa] : left) {
    for (const auto& [b, wb] : right) out[a | b] += wa * wb;
  }
  return out;
}

// Probability that a trait present on branch c at time s reaches node c; catastrophes at
// exactly s count when `inclusive`.
inline double survival(const Phylogeny& tree, int c, double s, double mu, double kappa, bool inclusive) {
  double p = std::exp(-mu * (tree.time(c) - s));
  for (const auto& cat : tree.catastrophes()) {
    const double t = tree.catastrophe_time(cat);
    if (cat.branch == c && (t > s || (inclusive && t == s))) p *= 1.0 - kappa;
  }
  return p;
}

inline Vector sd_frequencies(const Phylogeny& tree, double lambda, double mu, double kappa) {
  const int L = tree.leaf_count();
  Vector x = Vector::Zero(Eigen::Index{1} << L);
  auto add = [&](int node, double mass) {
    for (const auto& [p, w] : below_node(tree, node, mu, kappa)) {
      if (p) x[p] += mass * w;
    }
  };
  add(1, lambda / mu);  // equilibrium mass present at the root
  for (int c = 2; c < tree.node_count(); ++c) {
    std::vector<double> cuts;
    for (const auto& cat : tree.catastrophes()) {
      if (cat.branch == c) cuts.push_back(tree.catastrophe_time(cat));
    }
    std::sort(cuts.begin(), cuts.end());
    double a = tree.time(tree.parent(c));
    for (double b : cuts) {
      add(c, lambda * (1.0 - std::exp(-mu * (b - a))) / mu * survival(tree, c, b, mu, kappa, true));
      add(c, lambda * kappa / mu * survival(tree, c, b, mu, kappa, false));
      a = b;
    }
    add(c, lambda * (1.0 - std::exp(-mu * (tree.time(c) - a))) / mu);
  }
  return x;
}

}  // namespace sdlt::oracle

#endif  // SDLT_TESTS_SD_ORACLE_HPP
