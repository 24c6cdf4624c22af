#ifndef SDLT_ANALYZE_HPP
#define SDLT_ANALYZE_HPP

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdlt/mcmc.hpp"
#include "sdlt/traits.hpp"

namespace sdlt {

// ---------------------------------------------------------------------------------------
// Convergence.

std::vector<double> autocorrelation(std::span<const double> x, int max_lag);

struct EssEstimate {
  double ess = 0.0;
  bool constant = false;  // ESS undefined; reported as N
};

// Geyer's initial positive sequence estimator.  Needs at least 10 values.
EssEstimate effective_sample_size(std::span<const double> x);

// ---------------------------------------------------------------------------------------
// Tests.

// P(sqrt(n) D > lambda) for the Kolmogorov limit, with Stephens' small-sample correction.
double kolmogorov_pvalue(double statistic, double n);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

TestResult ks_test(std::span<const double> sample, const std::function<double(double)>& cdf);
// Against an integer-valued law given by its CDF on 0, 1, 2, ...; conservative.
TestResult ks_test_discrete(std::span<const long> sample, const std::function<double(long)>& cdf);
TestResult chi_square_test(std::span<const double> observed, std::span<const double> expected, int dof);
double chi_square_pvalue(double statistic, int dof);

// ---------------------------------------------------------------------------------------
// Trees.

struct ConsensusClade {
  CladeMask mask = 0;
  double support = 0.0;
  double mean_time = 0.0;          // over samples containing the clade
  double mean_catastrophes = 0.0;  // on the branch above the clade
  int catastrophes = 0;            // rounded to the nearest integer
};

struct ConsensusTree {
  std::vector<std::string> taxa;
  std::vector<ConsensusClade> clades;  // internal clades, largest first; the root comes first
  std::vector<ConsensusClade> leaves;  // one per taxon

  // Multifurcating text tree with [&support=..,time=..,cat=..] annotations.
  std::string to_text() const;
  bool contains(CladeMask m) const;
};

ConsensusTree consensus_tree(std::span<const Phylogeny> trees, double threshold = 0.5);

// Rooted labelled topology as its sorted internal clade masks.
std::string topology_key(const Phylogeny& tree);
std::map<std::string, double> topology_frequencies(std::span<const Phylogeny> trees);

std::vector<Phylogeny> trees_of(const SampleLog& log);
// Time of the most recent common ancestor of `leaves` in every sample.
std::vector<double> mrca_times(const SampleLog& log, const std::vector<std::string>& leaves);

// ---------------------------------------------------------------------------------------
// Bayes factors and predictive scores.

struct BayesFactorReport {
  std::string label;
  double prior_proportion = 0.0;
  double posterior_proportion = 0.0;
  double bayes_factor = 0.0;  // prior / posterior proportion
  bool lower_bound = false;   // no posterior sample fell in the window

  double log_bf() const { return std::log(bayes_factor); }
};

// Window proportions of a quantity sampled in a likelihood-off run and in the relaxed run.
BayesFactorReport savage_dickey(std::span<const double> prior_values, std::span<const double> posterior_values,
                                const TimeWindow& window, std::string label = {});

struct PredictiveScore {
  double log_score = 0.0;
  double standard_error = 0.0;  // batch means over the posterior samples
  int samples = 0;
};

// log of the posterior mean of the multinomial likelihood of the test counts.
PredictiveScore predictive_score(const SampleLog& train, const PatternCounts& test, const RegistrationRule& rule,
                                 const OdeTolerance& tol = {});
PredictiveScore predictive_score(std::span<const double> sample_logliks);

// Random even split of the registered trait columns.
std::pair<TraitMatrix, TraitMatrix> split_traits(const TraitMatrix& m, const RegistrationRule& rule,
                                                 std::uint64_t seed);

// ---------------------------------------------------------------------------------------
// Simulated counts against the exact Poisson laws.

struct PatternCheck {
  ObservedPattern pattern;
  double expected = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double ks = 0.0;
  double p_value = 1.0;
};

struct ValidationReport {
  std::vector<PatternCheck> patterns;
  double familywise = 0.01;
  double max_discrepancy = 0.0;
  int failures = 0;  // p below familywise / number of patterns

  bool passed() const { return failures == 0; }
  std::string to_text() const;
  // Empirical and exact CDF pairs per pattern, for plotting.
  std::string cdf_table(std::span<const PatternCounts> replicates) const;
};

ValidationReport validate_distribution(std::span<const PatternCounts> replicates,
                                       const std::vector<ObservedPattern>& patterns,
                                       const std::vector<double>& expected, double familywise = 0.01);

double poisson_cdf(long k, double mean);

}  // namespace sdlt

#endif  // SDLT_ANALYZE_HPP
