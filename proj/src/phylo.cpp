#include "sdlt/phylo.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sdlt {

Phylogeny::Phylogeny(std::vector<std::string> taxa, std::vector<Node> nodes,
                     std::vector<Catastrophe> catastrophes)
    : taxa_(std::move(taxa)), nodes_(std::move(nodes)), catastrophes_(std::move(catastrophes)) {
  if (nodes_.size() != 2 * taxa_.size()) {
    throw Error("phylogeny on " + std::to_string(taxa_.size()) + " taxa needs " +
                std::to_string(2 * taxa_.size()) + " nodes, got " + std::to_string(nodes_.size()));
  }
  if (leaf_count() < 2 || leaf_count() > kMaxLeaves) {
    throw Error("phylogeny must have between 2 and 64 leaves");
  }
  nodes_[0].time = kNegInf;
  relabel();
  validate();
}

int Phylogeny::sibling(int i) const {
  const auto& p = nodes_[nodes_[i].parent];
  return p.child[0] == i ? p.child[1] : p.child[0];
}

double Phylogeny::branch_length(int i) const {
  if (i <= 1) return kPosInf;
  return nodes_[i].time - nodes_[nodes_[i].parent].time;
}

double Phylogeny::tree_length() const {
  double total = 0.0;
  for (int i = 2; i < node_count(); ++i) total += branch_length(i);
  return total;
}

double Phylogeny::final_time() const {
  double t = kNegInf;
  for (int i = leaf_count(); i < node_count(); ++i) t = std::max(t, nodes_[i].time);
  return t;
}

std::optional<int> Phylogeny::leaf_by_name(std::string_view name) const {
  for (int k = 0; k < leaf_count(); ++k) {
    if (taxa_[k] == name) return leaf_count() + k;
  }
  return std::nullopt;
}

double Phylogeny::catastrophe_time(const Catastrophe& c) const {
  const double tb = nodes_[c.branch].time;
  const double tp = nodes_[nodes_[c.branch].parent].time;
  return tb + c.rel_pos * (tp - tb);
}

int Phylogeny::catastrophes_on(int branch) const {
  return static_cast<int>(std::count_if(catastrophes_.begin(), catastrophes_.end(),
                                        [branch](const Catastrophe& c) { return c.branch == branch; }));
}

std::vector<CladeMask> Phylogeny::clade_masks() const {
  std::vector<CladeMask> masks(nodes_.size(), 0);
  const int L = leaf_count();
  for (int k = 0; k < L; ++k) masks[L + k] = CladeMask{1} << k;
  // Internal labels are time sorted, so children always carry larger labels than parents.
  for (int i = L - 1; i >= 1; --i) {
    masks[i] = masks[nodes_[i].child[0]] | masks[nodes_[i].child[1]];
  }
  masks[0] = masks[1];
  return masks;
}

void Phylogeny::add_catastrophe(Catastrophe c) {
  catastrophes_.push_back(c);
  sort_catastrophes();
}

void Phylogeny::remove_catastrophe(std::size_t index) {
  catastrophes_.erase(catastrophes_.begin() + static_cast<std::ptrdiff_t>(index));
}

void Phylogeny::sort_catastrophes() { std::sort(catastrophes_.begin(), catastrophes_.end()); }

std::vector<int> Phylogeny::relabel() {
  const int L = leaf_count();
  std::vector<int> internal(L - 1);
  std::iota(internal.begin(), internal.end(), 1);
  std::stable_sort(internal.begin(), internal.end(),
                   [this](int a, int b) { return nodes_[a].time < nodes_[b].time; });
  std::vector<int> map(nodes_.size());
  std::iota(map.begin(), map.end(), 0);
  for (int k = 0; k < L - 1; ++k) map[internal[k]] = k + 1;

  std::vector<Node> relabelled(nodes_.size());
  for (int i = 0; i < node_count(); ++i) {
    Node n = nodes_[i];
    if (n.parent >= 0) n.parent = map[n.parent];
    for (auto& c : n.child) {
      if (c >= 0) c = map[c];
    }
    relabelled[map[i]] = n;
  }
  nodes_ = std::move(relabelled);
  for (auto& c : catastrophes_) c.branch = map[c.branch];
  sort_catastrophes();
  return map;
}

void Phylogeny::validate() const {
  const int L = leaf_count();
  const int n = node_count();
  if (n != 2 * L) throw Error("node count mismatch");
  if (nodes_[0].parent != -1 || nodes_[0].child[0] != 1 || nodes_[0].child[1] != -1) {
    throw Error("node 0 must be the Adam node with the root as its only child");
  }
  if (nodes_[1].parent != 0) throw Error("node 1 must be the root");
  for (int i = 1; i < n; ++i) {
    const auto& nd = nodes_[i];
    if (nd.parent < 0 || nd.parent >= L) throw Error("node " + std::to_string(i) + " has an invalid parent");
    const auto& p = nodes_[nd.parent];
    if (p.child[0] != i && p.child[1] != i) {
      throw Error("node " + std::to_string(i) + " is not a child of its parent");
    }
    if (!std::isfinite(nd.time)) throw Error("node " + std::to_string(i) + " has a non-finite time");
    if (i >= 2 && !(p.time < nd.time)) {
      throw Error("node " + std::to_string(i) + " is not later than its parent");
    }
    if (i < L) {
      if (nd.child[0] < 1 || nd.child[1] < 1 || nd.child[0] == nd.child[1]) {
        throw Error("internal node " + std::to_string(i) + " needs two children");
      }
      for (int c : nd.child) {
        if (nodes_[c].parent != i) throw Error("child/parent links disagree at node " + std::to_string(i));
      }
      if (i >= 2 && !(nodes_[i - 1].time < nd.time)) {
        throw Error("internal node times must strictly increase with the label");
      }
    } else if (nd.child[0] != -1 || nd.child[1] != -1) {
      throw Error("leaf " + std::to_string(i) + " has children");
    }
  }
  // Reachability: every node must hang below the root.
  std::vector<int> stack{1};
  int seen = 0;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    if (++seen > n) throw Error("tree contains a cycle");
    if (i < L) {
      stack.push_back(nodes_[i].child[0]);
      stack.push_back(nodes_[i].child[1]);
    }
  }
  if (seen != n - 1) throw Error("tree is not connected");
  for (const auto& c : catastrophes_) {
    if (c.branch < 2 || c.branch >= n) throw Error("catastrophe on invalid branch " + std::to_string(c.branch));
    if (!(c.rel_pos > 0.0 && c.rel_pos < 1.0)) throw Error("catastrophe position must lie in (0,1)");
  }
}

bool Phylogeny::is_valid() const {
  try {
    validate();
    return true;
  } catch (const Error&) {
    return false;
  }
}

bool operator==(const Phylogeny& a, const Phylogeny& b) {
  return a.taxa_ == b.taxa_ && a.nodes_ == b.nodes_ && a.catastrophes_ == b.catastrophes_;
}

// ---------------------------------------------------------------------------------------

int LineageSlice::extant_count() const {
  return static_cast<int>(std::count(extinct.begin(), extinct.end(), false));
}

PatternBits LineageSlice::extant_mask() const {
  PatternBits mask = 0;
  for (std::size_t i = 0; i < extinct.size(); ++i) {
    if (!extinct[i]) mask |= PatternBits{1} << i;
  }
  return mask;
}

namespace {

// Left-to-right collection of branches alive at t.  With `strict`, a node splits only if
// its time is strictly before t (the tuple just before t).
void collect_lineages(const Phylogeny& tree, int i, double t, bool strict, LineageSlice& out) {
  if (tree.is_internal(i) && (strict ? tree.time(i) < t : tree.time(i) <= t)) {
    collect_lineages(tree, tree.child(i, 0), t, strict, out);
    collect_lineages(tree, tree.child(i, 1), t, strict, out);
    return;
  }
  out.branches.push_back(i);
  out.extinct.push_back(tree.is_leaf(i) && tree.time(i) < t);
}

}  // namespace

LineageSlice slice_lineages(const Phylogeny& tree, double t) {
  if (t < tree.time(1)) throw Error("slice time is earlier than the root");
  LineageSlice slice;
  slice.time = t;
  collect_lineages(tree, 1, t, false, slice);
  return slice;
}

int branching_index(const Phylogeny& tree, int j) {
  if (!tree.is_internal(j)) throw Error("node " + std::to_string(j) + " is not internal");
  LineageSlice before;
  collect_lineages(tree, 1, tree.time(j), true, before);
  const auto it = std::find(before.branches.begin(), before.branches.end(), j);
  return static_cast<int>(it - before.branches.begin()) + 1;
}

// ---------------------------------------------------------------------------------------

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

const char* kind_name(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::RootTime: return "root";
    case ConstraintKind::NodeTime: return "node";
    case ConstraintKind::Clade: return "clade";
    case ConstraintKind::LeafTime: return "leaf";
  }
  return "?";
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ConstraintSet::ConstraintSet(std::vector<CladeConstraint> constraints,
                             const std::vector<std::string>& taxa)
    : constraints_(std::move(constraints)), taxa_(taxa) {
  for (const auto& c : constraints_) {
    if (c.lower > c.upper) throw Error(std::string(kind_name(c.kind)) + " constraint has lower > upper");
    CladeMask mask = 0;
    for (const auto& name : c.leaves) {
      const auto it = std::find(taxa.begin(), taxa.end(), name);
      if (it == taxa.end()) throw Error("constraint names unknown taxon '" + name + "'");
      mask |= CladeMask{1} << (it - taxa.begin());
    }
    if (c.kind == ConstraintKind::LeafTime && c.leaves.size() != 1) {
      throw Error("leaf constraint takes exactly one taxon");
    }
    if ((c.kind == ConstraintKind::NodeTime || c.kind == ConstraintKind::Clade) && c.leaves.empty()) {
      throw Error("clade constraint needs a leaf set");
    }
    resolved_.push_back({c.kind, mask, c.lower, c.upper});
  }
}

ConstraintSet ConstraintSet::parse(std::string_view text, const std::vector<std::string>& taxa) {
  std::vector<CladeConstraint> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string w; ls >> w;) tok.push_back(w);
    if (tok.empty()) continue;
    auto number = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw ParseError("bad number '" + s + "' in constraint", line_start);
      }
    };
    CladeConstraint c;
    if (tok[0] == "root" && tok.size() == 3) {
      c.kind = ConstraintKind::RootTime;
      c.lower = number(tok[1]);
      c.upper = number(tok[2]);
    } else if (tok[0] == "node" && tok.size() == 4) {
      c.kind = ConstraintKind::NodeTime;
      c.leaves = split(tok[1], ',');
      c.lower = number(tok[2]);
      c.upper = number(tok[3]);
    } else if (tok[0] == "clade" && tok.size() == 2) {
      c.kind = ConstraintKind::Clade;
      c.leaves = split(tok[1], ',');
    } else if (tok[0] == "leaf" && tok.size() == 4) {
      c.kind = ConstraintKind::LeafTime;
      c.leaves = {tok[1]};
      c.lower = number(tok[2]);
      c.upper = number(tok[3]);
    } else {
      throw ParseError("unrecognised constraint line '" + line + "'", line_start);
    }
    out.push_back(std::move(c));
  }
  return ConstraintSet(std::move(out), taxa);
}

std::string ConstraintSet::to_text() const {
  std::ostringstream os;
  for (const auto& c : constraints_) {
    os << kind_name(c.kind);
    if (!c.leaves.empty()) {
      os << ' ';
      for (std::size_t k = 0; k < c.leaves.size(); ++k) os << (k ? "," : "") << c.leaves[k];
    }
    if (c.kind != ConstraintKind::Clade) os << ' ' << format_number(c.lower) << ' ' << format_number(c.upper);
    os << '\n';
  }
  return os.str();
}

namespace {

int mrca(std::span<const CladeMask> masks, int L, CladeMask target) {
  int best = 1;
  int best_size = L + 1;
  for (int i = 1; i < L; ++i) {
    if ((masks[i] & target) == target) {
      const int size = std::popcount(masks[i]);
      if (size < best_size) {
        best = i;
        best_size = size;
      }
    }
  }
  return best;
}

}  // namespace

bool ConstraintSet::satisfied(const Phylogeny& tree) const {
  const auto masks = tree.clade_masks();
  return satisfied(tree, masks);
}

bool ConstraintSet::satisfied(const Phylogeny& tree, std::span<const CladeMask> masks) const {
  const int L = tree.leaf_count();
  for (const auto& r : resolved_) {
    switch (r.kind) {
      case ConstraintKind::RootTime:
        if (!(r.lower <= tree.time(1) && tree.time(1) <= r.upper)) return false;
        break;
      case ConstraintKind::NodeTime: {
        const double t = tree.time(mrca(masks, L, r.mask));
        if (!(r.lower <= t && t <= r.upper)) return false;
        break;
      }
      case ConstraintKind::Clade: {
        bool found = false;
        for (int i = 1; i < tree.node_count() && !found; ++i) found = masks[i] == r.mask;
        if (!found) return false;
        break;
      }
      case ConstraintKind::LeafTime: {
        const double t = tree.time(L + std::countr_zero(r.mask));
        if (!(r.lower <= t && t <= r.upper)) return false;
        break;
      }
    }
  }
  return true;
}

TimeWindow ConstraintSet::root_window() const {
  TimeWindow w;
  for (const auto& r : resolved_) {
    if (r.kind == ConstraintKind::RootTime) {
      w.lower = std::max(w.lower, r.lower);
      w.upper = std::min(w.upper, r.upper);
    }
  }
  return w;
}

TimeWindow ConstraintSet::node_window(const Phylogeny& tree, std::span<const CladeMask> masks,
                                      int i) const {
  const int L = tree.leaf_count();
  if (tree.is_leaf(i)) {
    if (auto w = leaf_window(i - L)) return *w;
    return {tree.time(i), tree.time(i)};
  }
  TimeWindow w = i == 1 ? root_window() : TimeWindow{};
  for (const auto& r : resolved_) {
    if (r.kind == ConstraintKind::NodeTime && mrca(masks, L, r.mask) == i) {
      w.lower = std::max(w.lower, r.lower);
      w.upper = std::min(w.upper, r.upper);
    }
  }
  return w;
}

std::optional<TimeWindow> ConstraintSet::leaf_window(int taxon) const {
  std::optional<TimeWindow> w;
  for (const auto& r : resolved_) {
    if (r.kind == ConstraintKind::LeafTime && r.mask == (CladeMask{1} << taxon)) {
      if (!w) w = TimeWindow{};
      w->lower = std::max(w->lower, r.lower);
      w->upper = std::min(w->upper, r.upper);
    }
  }
  return w;
}

bool ConstraintSet::has_node_time_windows() const {
  return std::any_of(resolved_.begin(), resolved_.end(),
                     [](const Resolved& r) { return r.kind == ConstraintKind::NodeTime; });
}

ConstraintSet ConstraintSet::with_replaced(std::size_t index, CladeConstraint c) const {
  auto copy = constraints_;
  copy.at(index) = std::move(c);
  return ConstraintSet(std::move(copy), taxa_);
}

// ---------------------------------------------------------------------------------------

namespace {

struct AdmissibleBounds {
  std::vector<double> earliest;  // lower bar t_i
  std::vector<double> latest;    // upper bar t_i
};

AdmissibleBounds admissible_bounds(const Phylogeny& tree, const ConstraintSet& constraints,
                                   std::span<const CladeMask> masks) {
  const int n = tree.node_count();
  const int L = tree.leaf_count();
  AdmissibleBounds b{std::vector<double>(n, kNegInf), std::vector<double>(n, kPosInf)};
  std::vector<TimeWindow> own(n);
  for (int i = 1; i < n; ++i) own[i] = constraints.node_window(tree, masks, i);
  // Parents carry smaller labels than their internal children, leaves come last.
  for (int i = 1; i < n; ++i) {
    const double from_parent = i == 1 ? kNegInf : b.earliest[tree.parent(i)];
    b.earliest[i] = std::max(own[i].lower, from_parent);
  }
  for (int i = n - 1; i >= 1; --i) {
    double w = own[i].upper;
    if (i < L) w = std::min({w, b.latest[tree.child(i, 0)], b.latest[tree.child(i, 1)]});
    b.latest[i] = w;
  }
  return b;
}

double log_factorial(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

}  // namespace

double hook_length_count(const Phylogeny& tree) {
  const int L = tree.leaf_count();
  std::vector<int> size(L, 0);
  double log_prod = 0.0;
  for (int i = L - 1; i >= 1; --i) {
    size[i] = 1;
    for (int side = 0; side < 2; ++side) {
      const int c = tree.child(i, side);
      if (tree.is_internal(c)) size[i] += size[c];
    }
    log_prod += std::log(static_cast<double>(size[i]));
  }
  return std::exp(log_factorial(L - 1) - log_prod);
}

namespace {

double subset_dp_count(const Phylogeny& tree, const AdmissibleBounds& b) {
  const int n = tree.leaf_count() - 1;
  if (n > 20) throw Error("counting constrained node orderings is unsupported above 21 leaves");
  const std::size_t states = std::size_t{1} << n;
  std::vector<double> count(states, 0.0);
  std::vector<double> max_lower(states, kNegInf);
  count[0] = 1.0;
  for (std::size_t s = 0; s < states; ++s) {
    if (s) {
      const int low = std::countr_zero(s);
      max_lower[s] = std::max(max_lower[s & (s - 1)], b.earliest[low + 1]);
    }
    if (count[s] == 0.0) continue;
    for (int k = 0; k < n; ++k) {
      const std::size_t bit = std::size_t{1} << k;
      if (s & bit) continue;
      const int node = k + 1;
      const bool parent_placed = node == 1 ? s == 0 : (s >> (tree.parent(node) - 1)) & 1;
      if (!parent_placed) continue;
      if (std::max(max_lower[s], b.earliest[node]) > b.latest[node]) continue;
      count[s | bit] += count[s];
    }
  }
  return count[states - 1];
}

}  // namespace

double count_node_orderings(const Phylogeny& tree, const ConstraintSet& constraints) {
  if (!constraints.has_node_time_windows()) return hook_length_count(tree);
  const auto masks = tree.clade_masks();
  return subset_dp_count(tree, admissible_bounds(tree, constraints, masks));
}

double log_tree_prior(const Phylogeny& tree, const ConstraintSet& constraints) {
  const auto masks = tree.clade_masks();
  if (!constraints.satisfied(tree, masks)) return kNegInf;
  const auto b = admissible_bounds(tree, constraints, masks);
  const double root_lower = b.earliest[1];
  if (!std::isfinite(root_lower)) throw Error("the tree prior needs a finite lower bound on the root time");
  const double z = constraints.has_node_time_windows() ? subset_dp_count(tree, b) : hook_length_count(tree);
  if (!(z > 0.0)) return kNegInf;
  double lp = -std::log(z);
  for (int i = 2; i < tree.leaf_count(); ++i) {
    if (b.earliest[i] == root_lower) {
      lp += std::log((root_lower - b.latest[i]) / (tree.time(1) - b.latest[i]));
    }
  }
  return lp;
}

std::optional<std::string> prior_uniformity_warning(const Phylogeny& tree,
                                                    const ConstraintSet& constraints) {
  const auto masks = tree.clade_masks();
  const auto b = admissible_bounds(tree, constraints, masks);
  const double root_lower = b.earliest[1];
  double min_other = kPosInf;
  for (int i = 2; i < tree.leaf_count(); ++i) {
    if (b.earliest[i] != root_lower) min_other = std::min(min_other, b.earliest[i]);
  }
  if (!std::isfinite(min_other)) return std::nullopt;
  const double horizon = tree.final_time();
  if (horizon - root_lower < 2.0 * (horizon - min_other)) {
    return "root lower bound " + format_number(root_lower) +
           " is not much earlier than the earliest constrained node bound " + format_number(min_other) +
           "; the root-time prior may be far from uniform";
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------------------

namespace {

struct TextNode {
  std::array<int, 2> child{-1, -1};
  std::string name;
  std::optional<double> time;
  std::optional<double> length;
  std::vector<double> cats;
  std::size_t where = 0;
};

class TreeReader {
 public:
  explicit TreeReader(std::string_view s) : s_(s) {}

  std::vector<TextNode> read() {
    subtree();
    skip_ws();
    expect(';');
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after ';'");
    return std::move(nodes_);
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool peek(char c) {
    skip_ws();
    return pos_ < s_.size() && s_[pos_] == c;
  }
  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  int subtree() {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    nodes_[id].where = pos_;
    if (peek('(')) {
      ++pos_;
      const int a = subtree();
      expect(',');
      const int b = subtree();
      if (peek(',')) fail("only binary trees are supported");
      expect(')');
      nodes_[id].child = {a, b};
      nodes_[id].name = name(false);
    } else {
      nodes_[id].name = name(true);
    }
    if (peek('[')) annotation(nodes_[id]);
    if (peek(':')) {
      ++pos_;
      nodes_[id].length = number();
    }
    if (peek('[')) annotation(nodes_[id]);
    return id;
  }

  std::string name(bool required) {
    skip_ws();
    std::string out;
    if (pos_ < s_.size() && s_[pos_] == '\'') {
      ++pos_;
      while (true) {
        if (pos_ >= s_.size()) fail("unterminated quoted name");
        if (s_[pos_] == '\'') {
          if (pos_ + 1 < s_.size() && s_[pos_ + 1] == '\'') {
            out.push_back('\'');
            pos_ += 2;
            continue;
          }
          ++pos_;
          break;
        }
        out.push_back(s_[pos_++]);
      }
      return out;
    }
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (std::isspace(static_cast<unsigned char>(c)) || std::string_view("(),:;[]'").find(c) != std::string_view::npos) break;
      out.push_back(c);
      ++pos_;
    }
    if (required && out.empty()) fail("expected a leaf name");
    return out;
  }

  double number() {
    skip_ws();
    double v = 0.0;
    const char* first = s_.data() + pos_;
    const char* last = s_.data() + s_.size();
    if (first < last && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{}) fail("expected a number");
    pos_ = static_cast<std::size_t>(ptr - s_.data());
    return v;
  }

  void annotation(TextNode& node) {
    expect('[');
    if (!peek('&')) fail("annotations must start with '[&'");
    ++pos_;
    while (!peek(']')) {
      skip_ws();
      std::string key;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
        key.push_back(s_[pos_++]);
      }
      if (key.empty()) fail("expected an annotation key");
      expect('=');
      if (peek('{')) {
        ++pos_;
        std::vector<double> values;
        while (!peek('}')) {
          values.push_back(number());
          if (!peek(',')) break;
          ++pos_;
        }
        expect('}');
        if (key == "cat") node.cats = std::move(values);
      } else if (key == "time") {
        node.time = number();
      } else {
        // Unknown scalar values are skipped.
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']') ++pos_;
      }
      if (!peek(',')) break;
      ++pos_;
    }
    expect(']');
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::vector<TextNode> nodes_;
};

}  // namespace

Phylogeny parse_tree(std::string_view text) {
  auto tn = TreeReader(text).read();
  const int m = static_cast<int>(tn.size());
  const int L = (m + 1) / 2;
  if (L < 2) throw ParseError("a tree needs at least two leaves", 0);
  if (L > kMaxLeaves) throw ParseError("too many leaves", 0);

  const bool any_time = std::any_of(tn.begin(), tn.end(), [](const TextNode& n) { return n.time.has_value(); });
  if (any_time) {
    for (const auto& n : tn) {
      if (!n.time) throw ParseError("every node needs a time once any node has one", n.where);
    }
  } else {
    // Times from branch lengths, with the latest leaf at time zero.
    std::vector<double> depth(m, 0.0);
    for (int i = 0; i < m; ++i) {
      for (int c : tn[i].child) {
        if (c < 0) continue;
        if (!tn[c].length) throw ParseError("node has neither a time nor a branch length", tn[c].where);
        depth[c] = depth[i] + *tn[c].length;
      }
    }
    const double latest = *std::max_element(depth.begin(), depth.end());
    for (int i = 0; i < m; ++i) tn[i].time = depth[i] - latest;
  }

  // Text order of creation is pre-order, so tn[0] is the root.
  std::vector<int> label(m, -1);
  std::vector<std::string> taxa;
  int next_internal = 1;
  for (int i = 0; i < m; ++i) {
    if (tn[i].child[0] < 0) {
      label[i] = L + static_cast<int>(taxa.size());
      if (std::find(taxa.begin(), taxa.end(), tn[i].name) != taxa.end()) {
        throw ParseError("duplicate leaf name '" + tn[i].name + "'", tn[i].where);
      }
      taxa.push_back(tn[i].name);
    } else {
      label[i] = next_internal++;
    }
  }
  std::vector<Phylogeny::Node> nodes(2 * L);
  nodes[0].child = {1, -1};
  nodes[0].time = kNegInf;
  nodes[1].parent = 0;
  std::vector<Catastrophe> cats;
  for (int i = 0; i < m; ++i) {
    auto& n = nodes[label[i]];
    n.time = *tn[i].time;
    for (int side = 0; side < 2; ++side) {
      const int c = tn[i].child[side];
      if (c < 0) continue;
      n.child[side] = label[c];
      nodes[label[c]].parent = label[i];
    }
    for (double u : tn[i].cats) {
      if (i == 0) throw ParseError("the root branch cannot carry catastrophes", tn[i].where);
      cats.push_back({label[i], u});
    }
  }
  try {
    return Phylogeny(std::move(taxa), std::move(nodes), std::move(cats));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what(), 0);
  }
}

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string quote_name(const std::string& name) {
  const bool plain = !name.empty() && name.find_first_of("(),:;[]' \t\n") == std::string::npos;
  if (plain) return name;
  std::string out = "'";
  for (char c : name) {
    out.push_back(c);
    if (c == '\'') out.push_back('\'');
  }
  return out + "'";
}

void write_node(const Phylogeny& tree, int i, std::string& out) {
  if (tree.is_internal(i)) {
    out += '(';
    write_node(tree, tree.child(i, 0), out);
    out += ',';
    write_node(tree, tree.child(i, 1), out);
    out += ')';
  } else {
    out += quote_name(tree.leaf_name(i));
  }
  out += "[&time=" + shortest(tree.time(i));
  std::vector<double> us;
  for (const auto& c : tree.catastrophes()) {
    if (c.branch == i) us.push_back(c.rel_pos);
  }
  if (!us.empty()) {
    out += ",cat={";
    for (std::size_t k = 0; k < us.size(); ++k) out += (k ? "," : "") + shortest(us[k]);
    out += '}';
  }
  out += ']';
}

}  // namespace

std::string write_tree(const Phylogeny& tree) {
  std::string out;
  write_node(tree, 1, out);
  out += ';';
  return out;
}

Phylogeny with_taxon_order(const Phylogeny& tree, const std::vector<std::string>& taxa) {
  const int L = tree.leaf_count();
  if (static_cast<int>(taxa.size()) != L) throw Error("taxon list does not match the tree");
  std::vector<int> map(tree.node_count());
  std::iota(map.begin(), map.end(), 0);
  for (int k = 0; k < L; ++k) {
    const auto leaf = tree.leaf_by_name(taxa[k]);
    if (!leaf) throw Error("taxon '" + taxa[k] + "' is not in the tree");
    map[*leaf] = L + k;
  }
  std::vector<Phylogeny::Node> nodes(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) {
    Phylogeny::Node n = tree.node(i);
    if (n.parent >= 0) n.parent = map[n.parent];
    for (auto& c : n.child) {
      if (c >= 0) c = map[c];
    }
    nodes[map[i]] = n;
  }
  auto cats = tree.catastrophes();
  for (auto& c : cats) c.branch = map[c.branch];
  return Phylogeny(taxa, std::move(nodes), std::move(cats));
}

}  // namespace sdlt
