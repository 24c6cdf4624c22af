#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sdlt/epf.hpp"
#include "sdlt/simulate.hpp"
#include "support.hpp"

using namespace sdlt;
using sdlt::testing::random_tree;

namespace {

long total_present(const TraitMatrix& m) {
  long n = 0;
  for (int k = 0; k < m.taxon_count(); ++k) n += m.present_count(k);
  return n;
}

}  // namespace

TEST_CASE("equilibrium trait count") {
  SimConfig cfg;
  cfg.tree = parse_tree("(a[&time=0],b[&time=0])[&time=-20000];");
  cfg.rates = {0.1, 5e-4, 0.0};
  cfg.keep_events = false;
  const int reps = 200;
  double sum = 0.0, sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    cfg.seed = replicate_seed(11, r);
    const auto sim = gillespie_simulate(cfg);
    const double n = sim.complete.present_count(0);
    sum += n;
    sq += n * n;
    CHECK(sim.transfers == 0);
  }
  const double mean = sum / reps;
  const double var = sq / reps - mean * mean;
  CHECK(std::abs(mean - 200.0) < 4.0);  // four standard errors
  CHECK(var / mean == doctest::Approx(1.0).epsilon(0.35));
}

TEST_CASE("no transfers without a transfer rate") {
  std::mt19937_64 rng(2);
  SimConfig cfg;
  cfg.tree = random_tree(6, rng, -2000.0, 2);
  cfg.rates = {0.1, 5e-4, 0.0};
  cfg.kappa = 0.3;
  for (int r = 0; r < 5; ++r) {
    cfg.seed = r;
    const auto sim = gillespie_simulate(cfg);
    CHECK(sim.transfers == 0);
    for (const auto& h : sim.histories) {
      for (const auto& e : h.events) CHECK(e.kind != TraitEvent::Kind::Transfer);
    }
    CHECK(strip_transfers(sim) == sim.observed);
  }
}

TEST_CASE("per-leaf counts are Poisson without transfers") {
  // Leaf counts stay Poisson(lambda / mu) whatever the tree when nothing is transferred.
  std::mt19937_64 rng(3);
  SimConfig cfg;
  cfg.tree = random_tree(5, rng, -3000.0);
  cfg.rates = {0.05, 5e-4, 0.0};
  cfg.keep_events = false;
  const int reps = 150;
  for (int k = 0; k < 5; ++k) {
    double sum = 0.0;
    for (int r = 0; r < reps; ++r) {
      cfg.seed = replicate_seed(100 + k, r);
      sum += gillespie_simulate(cfg).complete.present_count(k);
    }
    CHECK(std::abs(sum / reps - 100.0) < 4.0 * std::sqrt(100.0 / reps));
  }
}

TEST_CASE("replicate pattern means match the expected frequencies") {
  std::mt19937_64 rng(4);
  for (int config = 0; config < 2; ++config) {
    SimConfig cfg;
    cfg.tree = random_tree(4, rng, -1500.0, 1, config == 1);
    cfg.rates = {0.05, 6e-4, 2e-3};
    cfg.kappa = 0.4;
    cfg.keep_events = false;
    const Vector x = leaf_frequencies(cfg.tree, cfg.rates, cfg.kappa);
    const int reps = 400;
    Vector sum = Vector::Zero(x.size());
    for (int r = 0; r < reps; ++r) {
      cfg.seed = replicate_seed(1000 * config, r);
      const auto counts = gillespie_simulate(cfg).complete.pattern_counts();
      for (const auto& [q, n] : counts.counts) sum[q.ones] += static_cast<double>(n);
    }
    double chi2 = 0.0;
    for (Eigen::Index p = 1; p < x.size(); ++p) {
      const double z = (sum[p] / reps - x[p]) / std::sqrt(x[p] / reps);
      CHECK(std::abs(z) < 4.5);
      chi2 += z * z;
    }
    CHECK(chi2 < 40.0);  // 15 degrees of freedom
  }
}

TEST_CASE("missingness thins cells at the configured rate") {
  std::mt19937_64 rng(5);
  SimConfig cfg;
  cfg.tree = random_tree(3, rng, -1000.0);
  cfg.rates = {0.1, 5e-4, 1e-3};
  cfg.xi = {1.0, 0.7, 0.4};
  cfg.seed = 9;
  const auto sim = gillespie_simulate(cfg);
  const int n = sim.observed.trait_count();
  REQUIRE(n > 100);
  for (int k = 0; k < 3; ++k) {
    int missing = 0;
    for (int j = 0; j < n; ++j) {
      const Cell c = sim.observed.at(k, j);
      if (c == Cell::Missing) {
        ++missing;
      } else {
        CHECK(c == sim.complete.at(k, j));
      }
    }
    const double p = 1.0 - cfg.xi[k];
    CHECK(std::abs(missing - n * p) <= 4.0 * std::sqrt(n * p * (1 - p)) + 1e-9);
  }
}

TEST_CASE("observed pattern means with missing data") {
  std::mt19937_64 rng(6);
  SimConfig cfg;
  cfg.tree = random_tree(3, rng, -1200.0, 1);
  cfg.rates = {0.05, 5e-4, 1e-3};
  cfg.kappa = 0.3;
  cfg.xi = {0.9, 0.6, 0.8};
  cfg.keep_events = false;
  const auto expected = expected_frequencies(cfg.tree, cfg.rates, cfg.kappa, cfg.xi, RegistrationRule());
  const int reps = 300;
  std::map<ObservedPattern, double> sum;
  for (int r = 0; r < reps; ++r) {
    cfg.seed = replicate_seed(77, r);
    for (const auto& [q, n] : gillespie_simulate(cfg).observed.pattern_counts().counts) sum[q] += n;
  }
  for (std::size_t i = 0; i < expected.patterns.size(); ++i) {
    const double x = expected.values[i];
    const double z = (sum[expected.patterns[i]] / reps - x) / std::sqrt(x / reps);
    CHECK(std::abs(z) < 4.5);
  }
}

TEST_CASE("stripping transfers") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    SimConfig cfg;
    cfg.tree = random_tree(6, rng, -1000.0, 1);
    cfg.rates = {0.1, 5e-4, 5e-4};
    cfg.kappa = 0.2;
    cfg.xi = std::vector<double>(6, 0.9);
    cfg.seed = 40 + rep;
    const auto sim = gillespie_simulate(cfg);
    CHECK(sim.transfers > 0);
    const auto none = strip_transfers(sim);
    const auto late = strip_transfers(sim, -250.0);
    CHECK(strip_transfers(sim, -std::numeric_limits<double>::infinity()) == none);
    CHECK(strip_transfers(sim, 1.0) == sim.observed);
    for (int k = 0; k < 6; ++k) {
      CHECK(none.present_count(k) <= late.present_count(k));
      CHECK(late.present_count(k) <= sim.observed.present_count(k));
    }
    CHECK(total_present(none) < total_present(sim.observed));
    for (int j = 0; j < none.trait_count(); ++j) {
      for (int k = 0; k < 6; ++k) {
        if (sim.observed.at(k, j) == Cell::Missing) CHECK(none.at(k, j) == Cell::Missing);
        if (none.at(k, j) == Cell::Present) CHECK(sim.observed.at(k, j) == Cell::Present);
      }
    }
  }
}

TEST_CASE("stripped data follow the transfer-free model") {
  // Removing every transferred copy leaves Stochastic Dollo data: each trait is then held
  // only by descendants of its birth branch.
  std::mt19937_64 rng(8);
  SimConfig cfg;
  cfg.tree = random_tree(5, rng, -1000.0);
  cfg.rates = {0.1, 5e-4, 2e-3};
  cfg.seed = 3;
  const auto sim = gillespie_simulate(cfg);
  const auto none = strip_transfers(sim);
  const auto masks = cfg.tree.clade_masks();
  for (int j = 0; j < none.trait_count(); ++j) {
    const auto& h = sim.histories[sim.column_trait[j]];
    const auto q = none.column(j);
    CHECK((q.ones & ~masks[h.birth_branch]) == 0u);
  }
}

TEST_CASE("instance bookkeeping") {
  std::mt19937_64 rng(9);
  SimConfig cfg;
  cfg.tree = random_tree(4, rng, -800.0, 2);
  cfg.rates = {0.1, 5e-4, 3e-3};
  cfg.kappa = 0.5;
  cfg.seed = 12;
  const auto sim = gillespie_simulate(cfg);
  long transfers = 0;
  for (std::size_t i = 0; i < sim.instances.size(); ++i) {
    const auto& a = sim.instances[i];
    if (a.parent >= 0) {
      REQUIRE(a.parent < static_cast<int>(i));
      CHECK(sim.instances[a.parent].trait == a.trait);
    }
    if (a.origin == TraitInstance::Origin::Transfer) {
      ++transfers;
      CHECK(sim.instances[a.parent].branch != a.branch);
    }
    if (a.origin == TraitInstance::Origin::Birth || a.origin == TraitInstance::Origin::Root) CHECK(a.parent == -1);
  }
  CHECK(transfers == sim.transfers);
  long logged = 0;
  for (const auto& h : sim.histories) {
    for (const auto& e : h.events) logged += e.kind == TraitEvent::Kind::Transfer;
  }
  CHECK(logged == sim.transfers);

  // Each trait has exactly one birth record.
  const auto log = history_log(sim);
  std::istringstream in(log);
  std::string line;
  std::getline(in, line);
  CHECK(line == "time\tkind\tbranch\ttrait");
  long births = 0;
  while (std::getline(in, line)) births += line.find("\tbirth\t") != std::string::npos;
  CHECK(births == static_cast<long>(sim.histories.size()));
}

TEST_CASE("seed determinism") {
  std::mt19937_64 rng(10);
  SimConfig cfg;
  cfg.tree = random_tree(5, rng, -1000.0, 1);
  cfg.kappa = 0.3;
  cfg.xi = std::vector<double>(5, 0.8);
  cfg.seed = 2024;
  const auto a = gillespie_simulate(cfg);
  const auto b = gillespie_simulate(cfg);
  CHECK(a.observed == b.observed);
  CHECK(history_log(a) == history_log(b));
  cfg.seed = 2025;
  CHECK(!(gillespie_simulate(cfg).observed == a.observed));
  CHECK(replicate_seed(5, 0) != replicate_seed(5, 1));
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
}
