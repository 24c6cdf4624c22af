#ifndef SDLT_LIKELIHOOD_HPP
#define SDLT_LIKELIHOOD_HPP

#include <span>
#include <vector>

#include "sdlt/epf.hpp"
#include "sdlt/patterns.hpp"
#include "sdlt/phylo.hpp"

namespace sdlt {

// Sum over patterns of n log x - log n! - x, plus the mass of unobserved patterns:
// `total` is the sum of x over every registered pattern.
double poisson_loglik(std::span<const long> counts, std::span<const double> rates, double total);

// Sum over patterns of n (log y - log total).
double multinomial_loglik(std::span<const long> counts, std::span<const double> y, double total);

struct ModelParams {
  double mu = 5e-4;
  double beta = 5e-4;
  double kappa = 0.5;
  std::vector<double> xi;  // per taxon, in tree taxon order; empty means fully observed
  bool sd_mode = false;    // beta held at zero

  RateParams rates(double lambda = 1.0) const { return {lambda, mu, sd_mode ? 0.0 : beta}; }
};

struct PriorConfig {
  double rate_shape = 1e-3;  // Gamma(shape, rate) on mu and beta
  double rate_rate = 1e-3;
  double kappa_min = 0.25;
  double kappa_max = 1.0;
  double catastrophe_a = 1.5;  // Gamma(a, b) on the catastrophe rate, integrated out
  double catastrophe_b = 5e3;
};

// log Gamma(x; shape, rate), -inf off the positive half line.
double log_gamma_density(double x, double shape, double rate);

// Negative Binomial count times uniform locations: log[Gamma(n+a) / (Gamma(a) n!)]
// + n log(D/(D+b)) + a log(b/(D+b)) + log(n!/D^n), with D the tree length below the root.
double log_catastrophe_prior(int n, double tree_length, double a, double b);

struct PosteriorTerms {
  double tree = 0.0;
  double mu = 0.0;
  double beta = 0.0;
  double kappa = 0.0;
  double xi = 0.0;
  double catastrophes = 0.0;
  double loglik = 0.0;

  double prior() const { return tree + mu + beta + kappa + xi + catastrophes; }
  double total() const { return prior() + loglik; }
  double total_without_beta() const { return tree + mu + kappa + xi + catastrophes + loglik; }
};

// Every prior term; loglik is left at zero.
PosteriorTerms log_priors(const Phylogeny& tree, const ConstraintSet& constraints, const ModelParams& params,
                          const PriorConfig& config = {});

// Posterior with lambda integrated out, evaluated on registered counts whose patterns are
// in the tree's taxon order.  Keeps an evaluator cache between calls.
class PosteriorEvaluator {
 public:
  PosteriorEvaluator(PatternCounts counts, RegistrationRule rule, ConstraintSet constraints,
                     PriorConfig config = {}, OdeTolerance tol = {});

  PosteriorTerms evaluate(const Phylogeny& tree, const ModelParams& params);
  // Multinomial log-likelihood of other counts under the same state.
  double loglik_of(const PatternCounts& counts, const Phylogeny& tree, const ModelParams& params);

  const PatternCounts& counts() const { return counts_; }
  const RegistrationRule& rule() const { return rule_; }
  const ConstraintSet& constraints() const { return constraints_; }
  const PriorConfig& config() const { return config_; }
  EpfEvaluator& epf() { return epf_; }

 private:
  PatternCounts counts_;
  std::vector<ObservedPattern> patterns_;
  std::vector<long> n_;
  RegistrationRule rule_;
  ConstraintSet constraints_;
  PriorConfig config_;
  EpfEvaluator epf_;
};

double log_posterior(const PatternCounts& counts, const Phylogeny& tree, const ConstraintSet& constraints,
                     const ModelParams& params, const RegistrationRule& rule);

}  // namespace sdlt

#endif  // SDLT_LIKELIHOOD_HPP
