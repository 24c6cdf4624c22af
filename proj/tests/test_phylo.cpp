#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sdlt/phylo.hpp"
#include "support.hpp"

using namespace sdlt;
using sdlt::testing::eight_leaf_tree;
using sdlt::testing::random_tree;

namespace {

// Replays the splitting rule event by event: the lineage at position i is replaced by its
// left and right children.
std::vector<std::vector<int>> replay_tuples(const Phylogeny& tree) {
  std::vector<std::vector<int>> before(tree.leaf_count());
  std::vector<int> tuple{1};
  for (int j = 1; j < tree.leaf_count(); ++j) {
    before[j] = tuple;
    auto it = std::find(tuple.begin(), tuple.end(), j);
    REQUIRE(it != tuple.end());
    it = tuple.erase(it);
    tuple.insert(it, {tree.child(j, 0), tree.child(j, 1)});
  }
  before[0] = tuple;  // final tuple stored in slot 0
  return before;
}

// Counts linear extensions of the parent order that admit increasing times in the windows.
double enumerate_orderings(const Phylogeny& tree, const std::vector<TimeWindow>& own) {
  const int n = tree.leaf_count() - 1;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 1);
  double count = 0;
  do {
    std::vector<int> rank(tree.leaf_count());
    for (int k = 0; k < n; ++k) rank[perm[k]] = k;
    bool ok = perm[0] == 1;
    for (int v = 2; v <= n && ok; ++v) ok = rank[tree.parent(v)] < rank[v];
    double t = kNegInf;
    for (int k = 0; k < n && ok; ++k) {
      t = std::max(t, own[perm[k]].lower);
      ok = t <= own[perm[k]].upper;
    }
    if (ok) count += 1;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return count;
}

}  // namespace

TEST_CASE("eight-leaf tree slices") {
  const auto tree = eight_leaf_tree();
  const auto s2 = slice_lineages(tree, tree.time(2));
  CHECK(s2.branches == std::vector<int>{8, 4, 3});
  const auto s4m = slice_lineages(tree, 0.5 * (tree.time(3) + tree.time(4)));
  CHECK(s4m.branches == std::vector<int>{8, 4, 7, 15});
  CHECK(slice_lineages(tree, tree.time(4)).branches == std::vector<int>{8, 6, 5, 7, 15});
  CHECK(branching_index(tree, 4) == 2);
  CHECK(branching_index(tree, 1) == 1);
  CHECK(slice_lineages(tree, tree.time(1)).lineage_count() == 2);
  CHECK_THROWS_AS(slice_lineages(tree, tree.time(1) - 1.0), Error);
  CHECK_THROWS_AS(branching_index(tree, 9), Error);
}

TEST_CASE("slices agree with sequential replay on random trees") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const int L = 2 + rep % 9;
    const auto tree = random_tree(L, rng);
    const auto tuples = replay_tuples(tree);
    for (int j = 1; j < L; ++j) {
      const int pos = branching_index(tree, j);
      REQUIRE(pos >= 1);
      CHECK(tuples[j][pos - 1] == j);
      const double mid = j + 1 < L ? 0.5 * (tree.time(j) + tree.time(j + 1)) : 0.5 * tree.time(j);
      std::vector<int> after = tuples[j];
      after.erase(after.begin() + pos - 1);
      after.insert(after.begin() + pos - 1, {tree.child(j, 0), tree.child(j, 1)});
      CHECK(slice_lineages(tree, mid).branches == after);
    }
    const auto final_slice = slice_lineages(tree, 0.0);
    CHECK(final_slice.branches == tuples[0]);
    CHECK(final_slice.extant_count() == L);
  }
}

TEST_CASE("lineage count grows by one per internal node") {
  std::mt19937_64 rng(5);
  const auto tree = random_tree(9, rng);
  std::uniform_real_distribution<double> u(tree.time(1), 0.0);
  for (int k = 0; k < 200; ++k) {
    const double t = u(rng);
    int below = 0;
    for (int i = 1; i < tree.leaf_count(); ++i) below += tree.time(i) <= t;
    CHECK(slice_lineages(tree, t).lineage_count() == 1 + below);
  }
}

TEST_CASE("offset leaves stay in the tuple flagged extinct") {
  std::mt19937_64 rng(3);
  const auto tree = random_tree(6, rng, -1000.0, 0, true);
  const auto s = slice_lineages(tree, 0.0);
  CHECK(s.lineage_count() == 6);
  int extinct = 0;
  for (int k = 0; k < 6; ++k) {
    const int b = s.branches[k];
    CHECK(s.extinct[k] == (tree.time(b) < 0.0));
    extinct += s.extinct[k];
  }
  CHECK(s.extant_count() == 6 - extinct);
  CHECK(std::popcount(s.extant_mask()) == s.extant_count());
}

TEST_CASE("relabelling keeps internal times sorted") {
  std::mt19937_64 rng(7);
  auto tree = random_tree(7, rng, -500.0, 3);
  auto& n = tree.node(3);
  const double old = n.time;
  n.time = tree.time(tree.leaf_count() - 1) + 1e-3;
  bool descendant_earlier = false;
  for (int c : n.child) descendant_earlier |= tree.time(c) <= n.time;
  if (!descendant_earlier) {
    const auto map = tree.relabel();
    CHECK(tree.is_valid());
    CHECK(tree.time(map[3]) == doctest::Approx(tree.time(tree.leaf_count() - 1)));
  } else {
    n.time = old;
  }
  for (int i = 2; i < tree.leaf_count(); ++i) CHECK(tree.time(i - 1) < tree.time(i));
}

TEST_CASE("hook-length count equals enumeration of orderings") {
  std::mt19937_64 rng(19);
  for (int rep = 0; rep < 30; ++rep) {
    const int L = 3 + rep % 6;
    const auto tree = random_tree(L, rng);
    std::vector<TimeWindow> own(tree.leaf_count());
    CHECK(hook_length_count(tree) == doctest::Approx(enumerate_orderings(tree, own)));
  }
  std::mt19937_64 r3(1);
  const auto three = random_tree(3, r3);
  CHECK(hook_length_count(three) == doctest::Approx(1.0));
}

TEST_CASE("constrained ordering count equals enumeration") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1000.0, 0.0);
  for (int rep = 0; rep < 40; ++rep) {
    const int L = 4 + rep % 5;
    const auto tree = random_tree(L, rng);
    const auto masks = tree.clade_masks();
    std::vector<CladeConstraint> cs{{ConstraintKind::RootTime, {}, -1500.0, -900.0}};
    for (int i = 2; i < L; ++i) {
      if (u(rng) < -500.0) continue;
      std::vector<std::string> leaves;
      for (int k = 0; k < L; ++k) {
        if (masks[i] >> k & 1) leaves.push_back(tree.taxa()[k]);
      }
      const double a = std::min(tree.time(i), u(rng));
      const double b = std::max(tree.time(i), u(rng));
      cs.push_back({ConstraintKind::NodeTime, leaves, a, b});
    }
    const ConstraintSet set(cs, tree.taxa());
    std::vector<TimeWindow> own(tree.leaf_count());
    for (int i = 1; i < L; ++i) own[i] = set.node_window(tree, masks, i);
    CHECK(count_node_orderings(tree, set) == doctest::Approx(enumerate_orderings(tree, own)));
  }
}

TEST_CASE("tree prior") {
  std::mt19937_64 rng(29);
  const auto tree = random_tree(5, rng, -1000.0);
  const auto masks = tree.clade_masks();
  auto names_of = [&](int i) {
    std::vector<std::string> out;
    for (int k = 0; k < 5; ++k) {
      if (masks[i] >> k & 1) out.push_back(tree.taxa()[k]);
    }
    return out;
  };

  SUBCASE("violating a clade constraint gives zero density") {
    // One taxon from each side of the root never forms a clade unless L = 2.
    const int left = tree.child(1, 0);
    const int right = tree.child(1, 1);
    const int a = std::countr_zero(masks[left]);
    const int b = std::countr_zero(masks[right]);
    if (std::popcount(masks[left]) + std::popcount(masks[right]) > 2) {
      const ConstraintSet set({{ConstraintKind::RootTime, {}, -2000.0, 0.0},
                               {ConstraintKind::Clade, {tree.taxa()[a], tree.taxa()[b]}, kNegInf, kPosInf}},
                              tree.taxa());
      CHECK(log_tree_prior(tree, set) == kNegInf);
    }
    const ConstraintSet ok({{ConstraintKind::RootTime, {}, -2000.0, 0.0}}, tree.taxa());
    CHECK(std::isfinite(log_tree_prior(tree, ok)));
    const ConstraintSet late({{ConstraintKind::RootTime, {}, -900.0, 0.0}}, tree.taxa());
    CHECK(log_tree_prior(tree, late) == kNegInf);
  }

  SUBCASE("free nodes only: closed form") {
    const ConstraintSet set({{ConstraintKind::RootTime, {}, -2000.0, 0.0}}, tree.taxa());
    double expected = -std::log(hook_length_count(tree));
    for (int i = 2; i < 5; ++i) {
      // Every non-root internal node is free; its latest admissible time is the leaf time 0.
      expected += std::log((-2000.0 - 0.0) / (tree.time(1) - 0.0));
    }
    CHECK(log_tree_prior(tree, set) == doctest::Approx(expected));
  }

  SUBCASE("root time is uniform when no other node is free") {
    std::vector<CladeConstraint> cs{{ConstraintKind::RootTime, {}, -2000.0, 0.0}};
    for (int i = 2; i < 5; ++i) cs.push_back({ConstraintKind::NodeTime, names_of(i), -990.0, 0.0});
    const ConstraintSet set(cs, tree.taxa());
    auto moved = tree;
    moved.set_time(1, -1700.0);
    REQUIRE(moved.is_valid());
    CHECK(log_tree_prior(tree, set) == doctest::Approx(log_tree_prior(moved, set)));
  }

  SUBCASE("finite iff constraints hold") {
    std::mt19937_64 r(31);
    std::uniform_real_distribution<double> u(-1200.0, 0.0);
    for (int rep = 0; rep < 100; ++rep) {
      const auto t = random_tree(5, r, u(r) - 10.0);
      const auto m = t.clade_masks();
      std::vector<std::string> leaves;
      for (int k = 0; k < 5; ++k) {
        if (m[2] >> k & 1) leaves.push_back(t.taxa()[k]);
      }
      const ConstraintSet set({{ConstraintKind::RootTime, {}, -1000.0, 0.0},
                               {ConstraintKind::NodeTime, leaves, -800.0, -100.0}},
                              t.taxa());
      CHECK(std::isfinite(log_tree_prior(t, set)) == set.satisfied(t));
    }
  }
}

TEST_CASE("constraint file parsing") {
  const std::vector<std::string> taxa{"a", "b", "c", "d"};
  const auto set = ConstraintSet::parse("# calibrations\nroot -2000 -500\nnode a,b -800 -100\n\nclade c,d\nleaf d -300 0\n", taxa);
  REQUIRE(set.constraints().size() == 4);
  CHECK(set.root_window().lower == -2000.0);
  CHECK(set.leaf_window(3)->lower == -300.0);
  CHECK(!set.leaf_window(0));
  CHECK(set.has_node_time_windows());
  const auto again = ConstraintSet::parse(set.to_text(), taxa);
  CHECK(again.to_text() == set.to_text());
  CHECK_THROWS_AS(ConstraintSet::parse("root -1\n", taxa), ParseError);
  CHECK_THROWS_AS(ConstraintSet::parse("clade a,z\n", taxa), Error);
  CHECK_THROWS_AS(ConstraintSet::parse("root 0 -1\n", taxa), Error);
}

TEST_CASE("tree text round trips") {
  const std::vector<std::string> corpus{
      "(a[&time=0],b[&time=0])[&time=-300];",
      "((a[&time=0],b[&time=-12.5,cat={0.25,0.5}])[&time=-100],c[&time=0])[&time=-300.25];",
      "(('x y'[&time=0],'it''s'[&time=0])[&time=-1,cat={0.125}],z[&time=0])[&time=-2];",
  };
  for (const auto& s : corpus) CHECK(write_tree(parse_tree(s)) == s);

  const auto two = parse_tree("((a[&time=0],b[&time=0,cat={0.75,0.1}])[&time=-5],c[&time=0])[&time=-9];");
  CHECK(two.catastrophes().size() == 2);
  CHECK(two.catastrophes_on(two.leaf_of_taxon(1)) == 2);
  CHECK(write_tree(two).find("cat={0.1,0.75}") != std::string::npos);

  const auto lengths = parse_tree("((a:1,b:1):2,c:3);");
  CHECK(lengths.time(1) == -3.0);
  CHECK(lengths.time(2) == -1.0);
  const auto spaced = parse_tree(" ( a [&time=0, note=x] , b[&time=0] ) [&time=-4] ; ");
  CHECK(write_tree(spaced) == "(a[&time=0],b[&time=0])[&time=-4];");

  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 25; ++rep) {
    auto tree = random_tree(2 + rep % 12, rng, -1000.0 * (1 + rep), rep % 4, rep % 2);
    // Text order fixes the taxon order, so compare against the first reparse.
    const auto canonical = parse_tree(write_tree(tree));
    CHECK(write_tree(canonical) == write_tree(tree));
    auto copy = canonical;
    for (int k = 0; k < 100; ++k) copy = parse_tree(write_tree(copy));
    CHECK(copy == canonical);
  }
}

TEST_CASE("malformed tree text reports a position") {
  const std::vector<std::pair<std::string, std::size_t>> bad{
      {"(a[&time=0],b[&time=0])[&time=-3]", 33},
      {"(a[&time=0],b[&time=0],c[&time=0])[&time=-3];", 22},
      {"(a[&time=0],[&time=0])[&time=-3];", 12},
  };
  for (const auto& [s, where] : bad) {
    try {
      parse_tree(s);
      FAIL("expected a parse error for " << s);
    } catch (const ParseError& e) {
      CHECK(e.position() == where);
    }
  }
  CHECK_THROWS_AS(parse_tree("(a[&time=0],b[&time=-5])[&time=-3];"), ParseError);
  CHECK_THROWS_AS(parse_tree("(a[&time=0],a[&time=0])[&time=-3];"), ParseError);
  CHECK_THROWS_AS(parse_tree("(a,b[&time=0])[&time=-3];"), ParseError);
}
