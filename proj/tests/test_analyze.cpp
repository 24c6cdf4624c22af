#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "sdlt/analyze.hpp"
#include "sdlt/simulate.hpp"
#include "support.hpp"

using namespace sdlt;
using sdlt::testing::random_tree;

namespace {

std::vector<double> ar1(double phi, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> x(n);
  double v = z(rng) / std::sqrt(1 - phi * phi);
  for (auto& e : x) {
    v = phi * v + z(rng);
    e = v;
  }
  return x;
}

// Leaf-name sets of every internal node, by walking the text form.
std::set<std::set<std::string>> clades_by_name(const Phylogeny& t) {
  std::set<std::set<std::string>> out;
  std::function<std::set<std::string>(int)> walk = [&](int v) {
    if (t.is_leaf(v)) return std::set<std::string>{t.leaf_name(v)};
    auto a = walk(t.child(v, 0));
    const auto b = walk(t.child(v, 1));
    a.insert(b.begin(), b.end());
    out.insert(a);
    return a;
  };
  walk(1);
  return out;
}

}  // namespace

TEST_CASE("effective sample size") {
  const auto iid = ar1(0.0, 20000, 1);
  CHECK(effective_sample_size(iid).ess / 20000 == doctest::Approx(1.0).epsilon(0.1));

  const auto x = ar1(0.5, 100000, 2);
  CHECK(effective_sample_size(x).ess / 100000 == doctest::Approx(1.0 / 3.0).epsilon(0.1));
  CHECK(autocorrelation(x, 3)[1] == doctest::Approx(0.5).epsilon(0.05));

  std::vector<double> twice;
  for (double v : iid) {
    twice.push_back(v);
    twice.push_back(v);
  }
  CHECK(effective_sample_size(twice).ess == doctest::Approx(effective_sample_size(iid).ess).epsilon(0.1));

  const std::vector<double> flat(50, 3.0);
  const auto e = effective_sample_size(flat);
  CHECK(e.constant);
  CHECK(e.ess == 50.0);
  CHECK_THROWS(effective_sample_size(std::vector<double>(5, 1.0)));
}

TEST_CASE("test statistics") {
  CHECK(kolmogorov_pvalue(1.3581 / std::sqrt(1e8), 1e8) == doctest::Approx(0.05).epsilon(1e-3));
  CHECK(kolmogorov_pvalue(1.6276 / std::sqrt(1e8), 1e8) == doctest::Approx(0.01).epsilon(1e-3));
  CHECK(chi_square_pvalue(3.841459, 1) == doctest::Approx(0.05).epsilon(1e-5));
  CHECK(chi_square_pvalue(18.307038, 10) == doctest::Approx(0.05).epsilon(1e-5));
  double sum = 0.0;
  for (int k = 0; k <= 7; ++k) sum += std::exp(-4.5 + k * std::log(4.5) - std::lgamma(k + 1.0));
  CHECK(poisson_cdf(7, 4.5) == doctest::Approx(sum).epsilon(1e-12));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> xs(2000);
  for (auto& v : xs) v = u(rng);
  CHECK(ks_test(xs, [](double t) { return t; }).p_value > 0.01);
  CHECK(ks_test(xs, [](double t) { return t * t; }).p_value < 1e-6);
}

TEST_CASE("distribution validation") {
  std::mt19937_64 rng(4);
  const std::vector<ObservedPattern> patterns{ObservedPattern::from_string("10"), ObservedPattern::from_string("01"),
                                              ObservedPattern::from_string("11")};
  const std::vector<double> means{3.0, 40.0, 150.0};
  std::vector<PatternCounts> reps(1000);
  for (auto& r : reps) {
    r.width = 2;
    for (std::size_t i = 0; i < 3; ++i) r.counts[patterns[i]] = std::poisson_distribution<long>(means[i])(rng);
  }
  const auto good = validate_distribution(reps, patterns, means);
  CHECK(good.passed());
  CHECK(good.max_discrepancy < 0.06);
  for (const auto& c : good.patterns) CHECK(c.variance / c.mean == doctest::Approx(1.0).epsilon(0.15));

  const std::vector<double> wrong{3.0 * 0.5, 40.0 * 0.5, 150.0 * 0.5};
  const auto bad = validate_distribution(reps, patterns, wrong);
  CHECK(!bad.passed());
  CHECK(bad.failures == 3);
  CHECK(good.to_text().find("failures=0") != std::string::npos);
  CHECK(!good.cdf_table(reps).empty());
}

TEST_CASE("consensus trees") {
  std::mt19937_64 rng(5);
  const auto t = random_tree(6, rng, -1000.0, 2);
  const std::vector<Phylogeny> same(4, t);
  const auto c = consensus_tree(same);
  CHECK(c.clades.size() == 5);
  for (const auto& cl : c.clades) CHECK(cl.support == 1.0);

  const auto ab = parse_tree("(((A:1,B:1):1,C:2):1,D:3);");
  const auto ab2 = parse_tree("((A:1,B:1):2,(C:1.5,D:1.5):1.5);");
  const auto ac = parse_tree("(((A:1,C:1):1,B:2):1,D:3);");
  const std::vector<Phylogeny> three{ab, ab2, ac};
  const auto con = consensus_tree(three);
  const CladeMask AB = 0b11;  // taxa in text order A, B, C, D
  bool found = false;
  for (const auto& cl : con.clades) {
    if (cl.mask == AB) {
      found = true;
      CHECK(cl.support == doctest::Approx(2.0 / 3.0));
    }
  }
  CHECK(found);
  CHECK(con.clades.size() == 3);  // root, {A,B} and {A,B,C}

  // Clade counting by leaf-name sets as an independent tally.
  std::vector<Phylogeny> sample;
  std::mt19937_64 r2(6);
  const auto base = random_tree(7, r2, -1000.0);
  for (int k = 0; k < 40; ++k) sample.push_back(k % 3 == 0 ? random_tree(7, r2, -1000.0) : base);
  std::map<std::set<std::string>, int> tally;
  for (const auto& s : sample) {
    for (const auto& cl : clades_by_name(s)) ++tally[cl];
  }
  const auto cons = consensus_tree(sample);
  std::size_t majority = 0;
  for (const auto& [names, n] : tally) {
    if (n * 2 <= 40) continue;
    ++majority;
    CladeMask m = 0;
    for (const auto& nm : names) m |= CladeMask{1} << (*base.leaf_by_name(nm) - 7);
    CHECK(cons.contains(m));
  }
  CHECK(cons.clades.size() == majority);
  CHECK(cons.to_text().back() == ';');

  // Sample order does not matter.
  auto shuffled = sample;
  std::shuffle(shuffled.begin(), shuffled.end(), r2);
  const auto cons2 = consensus_tree(shuffled);
  REQUIRE(cons2.clades.size() == cons.clades.size());
  for (std::size_t i = 0; i < cons.clades.size(); ++i) CHECK(cons2.clades[i].support == cons.clades[i].support);
}

TEST_CASE("Savage-Dickey ratios") {
  const std::vector<double> prior{-10, 10, 70, 90};
  const std::vector<double> post{0, 60, 80, 100};
  const auto r = savage_dickey(prior, post, {-50, 50});
  CHECK(r.prior_proportion == 0.5);
  CHECK(r.posterior_proportion == 0.25);
  CHECK(r.bayes_factor == 2.0);
  CHECK(!r.lower_bound);

  const std::vector<double> far(10000, 500.0);
  const auto lb = savage_dickey(prior, far, {-50, 50});
  CHECK(lb.lower_bound);
  CHECK(lb.bayes_factor == doctest::Approx(0.5 / 1e-4));
}

TEST_CASE("predictive scores") {
  const std::vector<double> one{-123.5};
  CHECK(predictive_score(one).log_score == -123.5);
  const std::vector<double> many{-1000.0, -1001.0, -1002.0};
  const double direct = -1000.0 + std::log((1 + std::exp(-1.0) + std::exp(-2.0)) / 3.0);
  CHECK(predictive_score(many).log_score == doctest::Approx(direct));

  std::mt19937_64 rng(7);
  SampleLog log;
  for (int k = 0; k < 3; ++k) {
    ChainState s{random_tree(4, rng, -1000.0), {}};
    s.params.mu = 4e-4 + 1e-4 * k;
    s.params.beta = 1e-4;
    s.params.kappa = 0.5;
    log.samples.push_back({k, s, 0, 0, 0});
  }
  const PatternCounts empty{4, {}};
  CHECK(predictive_score(log, empty, RegistrationRule::present_somewhere()).log_score == 0.0);
}

TEST_CASE("train/test split") {
  std::mt19937_64 rng(8);
  SimConfig cfg;
  cfg.tree = random_tree(5, rng, -1000.0);
  cfg.xi = std::vector<double>(5, 0.8);
  cfg.seed = 1;
  const auto m = gillespie_simulate(cfg).observed;
  const auto rule = RegistrationRule::present_somewhere();
  const auto [train, test] = split_traits(m, rule, 99);
  const long registered = m.pattern_counts(rule).total();
  CHECK(train.trait_count() == registered / 2);
  CHECK(train.trait_count() + test.trait_count() == registered);
  std::set<std::string> a(train.traits().begin(), train.traits().end());
  for (const auto& t : test.traits()) CHECK(!a.count(t));
  CHECK(split_traits(m, rule, 99).first == train);
}

TEST_CASE("node times from samples") {
  SampleLog log;
  ChainState s{parse_tree("((a[&time=0],b[&time=0])[&time=-400],c[&time=0])[&time=-1000];"), {}};
  log.samples.push_back({0, s, 0, 0, 0});
  CHECK(mrca_times(log, {"a", "b"}) == std::vector<double>{-400.0});
  CHECK(mrca_times(log, {"a", "c"}) == std::vector<double>{-1000.0});
  CHECK(mrca_times(log, {"c"}) == std::vector<double>{0.0});
}
