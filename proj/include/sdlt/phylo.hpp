#ifndef SDLT_PHYLO_HPP
#define SDLT_PHYLO_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdlt/types.hpp"

namespace sdlt {

// Bit k is set when leaf L+k lies in the clade.
using CladeMask = std::uint64_t;
inline constexpr int kMaxLeaves = 64;

// A catastrophe on branch `branch` (edges are labelled by their offspring node).
// It occurs at t_b + rel_pos * (t_pa(b) - t_b).
struct Catastrophe {
  int branch = 0;
  double rel_pos = 0.5;

  friend bool operator==(const Catastrophe&, const Catastrophe&) = default;
  friend auto operator<=>(const Catastrophe&, const Catastrophe&) = default;
};

// Rooted, dated, binary tree with an Adam node.
//
// Labels follow a fixed convention: node 0 is Adam (time -inf), nodes 1..L-1 are internal
// with strictly increasing times (node 1 is the root), and nodes L..2L-1 are the leaves.
// Leaf L+k always carries taxon k; leaf labels never change.  Children are ordered; the
// left child takes the lower position in the lineage tuple after a split.
class Phylogeny {
 public:
  struct Node {
    int parent = -1;
    std::array<int, 2> child{-1, -1};
    double time = 0.0;
  };

  Phylogeny() = default;

  // `nodes` must have size 2L with node 0 Adam and node 1 the root.  Internal labels are
  // re-sorted by time on construction; the result is validated.
  Phylogeny(std::vector<std::string> taxa, std::vector<Node> nodes,
            std::vector<Catastrophe> catastrophes = {});

  int leaf_count() const { return static_cast<int>(taxa_.size()); }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  static constexpr int root() { return 1; }

  bool is_leaf(int i) const { return i >= leaf_count() && i < node_count(); }
  bool is_internal(int i) const { return i >= 1 && i < leaf_count(); }

  int parent(int i) const { return nodes_[i].parent; }
  int child(int i, int side) const { return nodes_[i].child[side]; }
  int sibling(int i) const;
  double time(int i) const { return nodes_[i].time; }
  int degree(int i) const { return (i == 0 || is_leaf(i)) ? 1 : 3; }

  // t_i - t_pa(i); infinite for the root branch.
  double branch_length(int i) const;
  // Total length of all branches below the root.
  double tree_length() const;
  // Latest leaf time; the trait process is observed there.
  double final_time() const;

  const std::vector<std::string>& taxa() const { return taxa_; }
  const std::string& leaf_name(int leaf) const { return taxa_[leaf - leaf_count()]; }
  int leaf_of_taxon(int taxon) const { return leaf_count() + taxon; }
  std::optional<int> leaf_by_name(std::string_view name) const;

  const std::vector<Catastrophe>& catastrophes() const { return catastrophes_; }
  double catastrophe_time(const Catastrophe& c) const;
  int catastrophes_on(int branch) const;

  // Clade mask of every node (Adam's mask equals the root's).
  std::vector<CladeMask> clade_masks() const;

  // Editing.  Callers restore the labelling with relabel() and verify with validate().
  Node& node(int i) { return nodes_[i]; }
  const Node& node(int i) const { return nodes_[i]; }
  void set_time(int i, double t) { nodes_[i].time = t; }
  std::vector<Catastrophe>& mutable_catastrophes() { return catastrophes_; }
  void add_catastrophe(Catastrophe c);
  void remove_catastrophe(std::size_t index);

  // Re-sorts internal labels so times increase with the label, remapping catastrophes.
  // Returns the old->new label map.
  std::vector<int> relabel();

  // Throws Error if any structural or temporal invariant is violated.
  void validate() const;
  bool is_valid() const;

  friend bool operator==(const Phylogeny&, const Phylogeny&);

 private:
  void sort_catastrophes();

  std::vector<std::string> taxa_;
  std::vector<Node> nodes_;
  std::vector<Catastrophe> catastrophes_;
};

inline bool operator==(const Phylogeny::Node& a, const Phylogeny::Node& b) {
  return a.parent == b.parent && a.child == b.child && a.time == b.time;
}

// Branch labels alive at a time slice, in canonical left-to-right order.
struct LineageSlice {
  double time = 0.0;
  std::vector<int> branches;
  std::vector<bool> extinct;

  int lineage_count() const { return static_cast<int>(branches.size()); }
  int extant_count() const;
  // Bit i set when position i+1 is extant.
  PatternBits extant_mask() const;
};

// k^(t): branches with t_pa(i) <= t < t_i (internal) or t_pa(i) <= t (leaves).  Leaves with
// t_i < t stay in the tuple, flagged extinct.
LineageSlice slice_lineages(const Phylogeny& tree, double t);

// Position (1-based) in k^(t_j-) of the lineage that splits at internal node j.
int branching_index(const Phylogeny& tree, int j);

// ---------------------------------------------------------------------------------------
// Clade constraints and the calibrated tree prior.

enum class ConstraintKind { RootTime, NodeTime, Clade, LeafTime };

struct CladeConstraint {
  ConstraintKind kind = ConstraintKind::RootTime;
  std::vector<std::string> leaves;  // node-time: leaf set whose MRCA is bounded
  double lower = kNegInf;
  double upper = kPosInf;
};

struct TimeWindow {
  double lower = kNegInf;
  double upper = kPosInf;
  bool contains(double t) const { return lower <= t && t <= upper; }
};

class ConstraintSet {
 public:
  ConstraintSet() = default;
  ConstraintSet(std::vector<CladeConstraint> constraints, const std::vector<std::string>& taxa);

  // One constraint per line: `root LO HI`, `node A,B,.. LO HI`, `clade A,B,..`,
  // `leaf A LO HI`.  Blank lines and `#` comments are skipped.
  static ConstraintSet parse(std::string_view text, const std::vector<std::string>& taxa);
  std::string to_text() const;

  const std::vector<CladeConstraint>& constraints() const { return constraints_; }
  bool empty() const { return constraints_.empty(); }

  bool satisfied(const Phylogeny& tree) const;
  bool satisfied(const Phylogeny& tree, std::span<const CladeMask> masks) const;

  TimeWindow root_window() const;
  // Window the constraints put on node i of this tree (leaf windows for leaves).
  TimeWindow node_window(const Phylogeny& tree, std::span<const CladeMask> masks, int i) const;
  std::optional<TimeWindow> leaf_window(int taxon) const;
  bool has_node_time_windows() const;

  // Copy with constraint `index` replaced.
  ConstraintSet with_replaced(std::size_t index, CladeConstraint c) const;

 private:
  struct Resolved {
    ConstraintKind kind;
    CladeMask mask;
    double lower;
    double upper;
  };
  std::vector<CladeConstraint> constraints_;
  std::vector<Resolved> resolved_;
  std::vector<std::string> taxa_;
};

// Number of orderings of the internal node times admissible under the constraints.
// Unconstrained orderings are counted with the hook-length formula; with node-time windows
// a subset DP counts the realisable linear extensions exactly (up to 20 internal nodes).
double count_node_orderings(const Phylogeny& tree, const ConstraintSet& constraints);
double hook_length_count(const Phylogeny& tree);

// log f_G(g) up to a constant; -inf outside the constrained space.
double log_tree_prior(const Phylogeny& tree, const ConstraintSet& constraints);

// Describes why the calibrated prior may be far from uniform, if it might be.
std::optional<std::string> prior_uniformity_warning(const Phylogeny& tree,
                                                    const ConstraintSet& constraints);

// ---------------------------------------------------------------------------------------
// Text serialisation: parenthesised binary trees with `[&time=..,cat={u,..}]` annotations.

Phylogeny parse_tree(std::string_view text);
std::string write_tree(const Phylogeny& tree);

// Same tree with leaf L+k carrying taxa[k].  The names must match the tree's taxa.
Phylogeny with_taxon_order(const Phylogeny& tree, const std::vector<std::string>& taxa);

}  // namespace sdlt

#endif  // SDLT_PHYLO_HPP
