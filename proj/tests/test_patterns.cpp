#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "sdlt/patterns.hpp"
#include "sdlt/traits.hpp"

using namespace sdlt;

namespace {

Pattern from_bits(std::initializer_list<int> entries) {
  Pattern p;
  int i = 0;
  for (int e : entries) p.bits |= static_cast<PatternBits>(e) << i++;
  p.width = i;
  return p;
}

int naive_distance(const Pattern& p, const Pattern& q) {
  int d = 0;
  for (int i = 0; i < p.width; ++i) d += ((p.bits >> i) & 1) != ((q.bits >> i) & 1);
  return d;
}

ObservedPattern random_observed(int L, std::mt19937_64& rng) {
  std::string s;
  std::uniform_int_distribution<int> u(0, 2);
  for (int k = 0; k < L; ++k) s.push_back("01?"[u(rng)]);
  return ObservedPattern::from_string(s);
}

}  // namespace

TEST_CASE("hamming weight and distance") {
  const auto p = from_bits({1, 0, 1, 0, 0, 0});
  const auto q = from_bits({1, 0, 0, 0, 0, 0});
  CHECK(hamming_weight(p) == 2);
  CHECK(hamming_distance(q, p) == 1);
  CHECK(hamming_distance(p, p) == 0);
  CHECK_THROWS_AS(hamming_distance(p, from_bits({1, 0})), Error);

  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    const int w = 1 + static_cast<int>(rng() % 24);
    const PatternBits mask = (PatternBits{1} << w) - 1;
    const Pattern a{static_cast<PatternBits>(rng()) & mask, w};
    const Pattern b{static_cast<PatternBits>(rng()) & mask, w};
    CHECK(hamming_distance(a, b) == naive_distance(a, b));
    CHECK(hamming_weight(a) == naive_distance(a, Pattern{0, w}));
  }
}

TEST_CASE("communication neighbourhoods") {
  const auto p = from_bits({1, 0});
  CHECK(neighbors_down(p).empty());
  REQUIRE(neighbors_up(p).size() == 1);
  CHECK(neighbors_up(p)[0] == from_bits({1, 1}));

  for (int L = 1; L <= 4; ++L) {
    CHECK(pattern_space_size(L) == (std::size_t{1} << L) - 1);
    for (PatternBits a = 1; a < (PatternBits{1} << L); ++a) {
      const Pattern pa{a, L};
      std::set<Pattern> down, up;
      for (PatternBits b = 1; b < (PatternBits{1} << L); ++b) {
        const Pattern pb{b, L};
        if (hamming_distance(pa, pb) != 1) continue;
        if (hamming_weight(pb) == hamming_weight(pa) - 1) down.insert(pb);
        if (hamming_weight(pb) == hamming_weight(pa) + 1) up.insert(pb);
      }
      const auto nd = neighbors_down(pa);
      const auto nu = neighbors_up(pa);
      CHECK(std::set<Pattern>(nd.begin(), nd.end()) == down);
      CHECK(std::set<Pattern>(nu.begin(), nu.end()) == up);
      const int s = hamming_weight(pa);
      CHECK(static_cast<int>(nd.size()) == s - (s == 1));
      CHECK(static_cast<int>(nu.size()) == L - s);
      for (const auto& q : nu) {
        const auto back = neighbors_down(q);
        CHECK(std::find(back.begin(), back.end(), pa) != back.end());
      }
    }
  }
}

TEST_CASE("branch expansion") {
  Vector v = Vector::Zero(16);
  v[0b0001] = 3.0;  // (1,0,0,0)
  const Vector first = branch_expand(v, 4, 1);
  CHECK(first[0b00011] == 3.0);  // (1,1,0,0,0)
  CHECK(first.sum() == 3.0);
  const Vector second = branch_expand(v, 4, 2);
  CHECK(second[0b00001] == 3.0);  // (1,0,0,0,0)

  Vector ones = Vector::Zero(8);
  ones[7] = 1.0;
  for (int i = 1; i <= 3; ++i) CHECK(branch_expand(ones, 3, i)[15] == 1.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int w = 1; w <= 8; ++w) {
    Vector x(Eigen::Index{1} << w);
    for (auto& e : x) e = u(rng);
    x[0] = 0.0;
    for (int i = 1; i <= w; ++i) {
      const Vector y = branch_expand(x, w, i);
      CHECK(y.sum() == doctest::Approx(x.sum()).epsilon(1e-14));
      std::set<PatternBits> image;
      for (PatternBits p = 1; p < (PatternBits{1} << w); ++p) image.insert(expand_bits(p, i));
      CHECK(image.size() == (std::size_t{1} << w) - 1);
      for (PatternBits q = 0; q < (PatternBits{1} << (w + 1)); ++q) {
        const bool consistent = ((q >> (i - 1)) & 1) == ((q >> i) & 1);
        if (!consistent || q == 0) CHECK(y[q] == 0.0);
        CHECK((y[q] != 0.0) == (image.count(q) == 1));
      }
    }
  }
  CHECK_THROWS_AS(branch_expand(ones, 3, 4), Error);

  const VectorT<long double> lx = VectorT<long double>::Constant(4, 0.5L);
  CHECK(branch_expand(lx, 2, 2).sum() == doctest::Approx(1.5));
}

TEST_CASE("compatible binary patterns") {
  const auto q = ObservedPattern::from_string("1?0");
  const auto u = compatible_binary_patterns(q);
  CHECK(u == std::vector<Pattern>{{0b001, 3}, {0b011, 3}});
  CHECK(compatible_binary_patterns(ObservedPattern::from_string("101")) == std::vector<Pattern>{{0b101, 3}});
  for (int L = 1; L <= 4; ++L) {
    int total = 1;
    for (int k = 0; k < L; ++k) total *= 3;
    for (int code = 0; code < total; ++code) {
      std::string s;
      for (int k = 0, c = code; k < L; ++k, c /= 3) s.push_back("01?"[c % 3]);
      const auto obs = ObservedPattern::from_string(s);
      std::set<Pattern> oracle;
      for (PatternBits p = 1; p < (PatternBits{1} << L); ++p) {
        bool ok = true;
        for (int k = 0; k < L; ++k) {
          if (s[k] != '?') ok &= ((p >> k) & 1) == static_cast<PatternBits>(s[k] - '0');
        }
        if (ok) oracle.insert({p, L});
      }
      const auto got = compatible_binary_patterns(obs);
      CHECK(std::set<Pattern>(got.begin(), got.end()) == oracle);
      const int nq = std::popcount(obs.missing);
      CHECK(static_cast<int>(got.size()) == (1 << nq) - (obs.ones == 0 ? 1 : 0));
    }
  }
  CHECK(ObservedPattern::from_string("1?0").to_string() == "1?0");
  CHECK_THROWS_AS(ObservedPattern::from_string("1x0"), ParseError);
}

TEST_CASE("registration rules") {
  const auto rule = RegistrationRule::parse("absent:0,at_most_ones:1,at_least_ones:4,at_least_nonzero:5");
  CHECK(rule.parts().size() == 4);
  CHECK(RegistrationRule::parse(rule.to_string()) == rule);
  CHECK(RegistrationRule::parse("none").empty());
  CHECK_THROWS_AS(RegistrationRule::parse("bogus:1"), ParseError);
  CHECK_THROWS_AS(RegistrationRule::parse("absent:x"), ParseError);

  CHECK(!RegistrationRule::parse("absent:1").admits(ObservedPattern::from_string("101")));
  CHECK(RegistrationRule::parse("absent:1").admits(ObservedPattern::from_string("1?1")));
  CHECK(!RegistrationRule::parse("at_most_ones:1").admits(ObservedPattern::from_string("1??")));
  CHECK(RegistrationRule::parse("at_most_ones:1").admits(ObservedPattern::from_string("11?")));
  CHECK(!RegistrationRule::parse("at_least_ones:2").admits(ObservedPattern::from_string("110")));
  CHECK(!RegistrationRule::parse("at_least_nonzero:2").admits(ObservedPattern::from_string("1?0")));

  TraitMatrix m({"a", "b", "c"}, {});
  m.add_trait("x", {Cell::Present, Cell::Absent, Cell::Absent});
  m.add_trait("y", {Cell::Absent, Cell::Absent, Cell::Absent});
  m.add_trait("z", {Cell::Absent, Cell::Missing, Cell::Absent});
  m.add_trait("w", {Cell::Present, Cell::Present, Cell::Missing});
  const auto all = m.pattern_counts();
  CHECK(all.total() == 3);  // the all-absent column is not observable
  const auto kept = register_counts(all, RegistrationRule::present_somewhere());
  CHECK(kept.total() == 2);
  CHECK(kept.count(ObservedPattern::from_string("0?0")) == 0);
  CHECK(register_counts(all, RegistrationRule()).counts == all.counts);

  std::mt19937_64 rng(5);
  const std::vector<std::string> pool{"absent:0", "absent:3", "at_most_ones:0", "at_most_ones:2",
                                      "at_least_ones:5", "at_least_nonzero:6"};
  for (int rep = 0; rep < 50; ++rep) {
    PatternCounts counts;
    counts.width = 6;
    for (int k = 0; k < 200; ++k) {
      const auto q = random_observed(6, rng);
      if (q.ones | q.missing) ++counts.counts[q];
    }
    const auto r1 = RegistrationRule::parse(pool[rng() % pool.size()]);
    const auto r2 = RegistrationRule::parse(pool[rng() % pool.size()]);
    const auto composed = register_counts(counts, r1.then(r2));
    CHECK(composed.counts == register_counts(register_counts(counts, r1), r2).counts);
    CHECK(register_counts(composed, r1.then(r2)).counts == composed.counts);
  }
}

TEST_CASE("trait matrix text") {
  const std::string tsv = "taxon\th1\th2\th3\nA\t1\t0\t?\nB\t0\t1\t1\n";
  const auto m = TraitMatrix::parse(tsv);
  CHECK(m.taxon_count() == 2);
  CHECK(m.trait_count() == 3);
  CHECK(m.at(0, 2) == Cell::Missing);
  CHECK(m.to_text() == tsv);
  CHECK(TraitMatrix::parse("taxon,h1,h2\r\nA,1,0\r\nB,0,1\r\n").at(1, 1) == Cell::Present);
  CHECK(m.column(2).to_string() == "?1");
  CHECK(m.present_count(1) == 2);
  const auto r = m.reordered({"B", "A"});
  CHECK(r.at(0, 0) == Cell::Absent);
  CHECK_THROWS_AS(m.reordered({"B", "C"}), Error);

  try {
    TraitMatrix::parse("taxon\th1\th2\nA\t1\nB\t0\t1\n");
    FAIL("ragged row accepted");
  } catch (const ParseError& e) {
    CHECK(e.position() == 12);
  }
  CHECK_THROWS_AS(TraitMatrix::parse("taxon\th1\nA\t2\n"), ParseError);
  CHECK_THROWS_AS(TraitMatrix::parse("taxon\th1\nA\t1\nA\t0\n"), ParseError);
  CHECK_THROWS_AS(TraitMatrix::parse(""), ParseError);
}

TEST_CASE("trait matrix ingestion") {
  // 'woman/wife' is one cognate shared by both; the words for 'mother' are unrelated.
  const auto words = TraitMatrix::parse(
      "taxon\twoman.wahine\tmother.whaea\tmother.makuahine\n"
      "Maori\t1\t1\t0\n"
      "Hawaiian\t1\t0\t1\n");
  CHECK(words.column(0).to_string() == "11");
  CHECK(words.column(1).to_string() == "10");
  CHECK(words.column(2).to_string() == "01");

  const std::string toy = "taxon\ta\tb\tc\nX\t1\t?\t1\nY\t0\t1\t0\n";
  const auto m = TraitMatrix::parse(toy);
  const auto counts = m.pattern_counts();
  CHECK(counts.total() == 3);
  CHECK(counts.count(ObservedPattern::from_string("10")) == 2);
  CHECK(counts.count(ObservedPattern::from_string("?1")) == 1);
  CHECK(TraitMatrix::parse(m.to_text()).pattern_counts().counts == counts.counts);
  CHECK(m.missing_count(0) == 1);
  CHECK(m.missing_count(1) == 0);

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> cell(0, 2);
  for (int rep = 0; rep < 20; ++rep) {
    const int taxa = 1 + rep % 6;
    const int traits = 1 + static_cast<int>(rng() % 40);
    std::string text = "taxon";
    for (int j = 0; j < traits; ++j) text += "\th" + std::to_string(j);
    std::vector<std::string> rows(taxa);
    std::vector<std::string> columns(traits, std::string(taxa, '0'));
    for (int k = 0; k < taxa; ++k) {
      rows[k] = "\nt" + std::to_string(k);
      for (int j = 0; j < traits; ++j) {
        const char c = "01?"[cell(rng)];
        rows[k] += std::string("\t") + c;
        columns[j][k] = c;
      }
    }
    for (const auto& r : rows) text += r;
    std::map<std::string, long> tally;
    for (const auto& c : columns) {
      if (c.find_first_not_of('0') != std::string::npos) ++tally[c];
    }
    const auto got = TraitMatrix::parse(text + "\n").pattern_counts();
    std::map<std::string, long> seen;
    for (const auto& [q, n] : got.counts) seen[q.to_string()] = n;
    CHECK(seen == tally);
  }
}
