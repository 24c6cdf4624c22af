#include "sdlt/likelihood.hpp"

#include <cmath>

namespace sdlt {

double poisson_loglik(std::span<const long> counts, std::span<const double> rates, double total) {
  if (counts.size() != rates.size()) throw Error("counts and rates differ in length");
  double ll = -total;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const long n = counts[k];
    if (n == 0) continue;
    if (!(rates[k] > 0.0)) return kNegInf;
    ll += n * std::log(rates[k]) - std::lgamma(static_cast<double>(n) + 1.0);
  }
  return ll;
}

double multinomial_loglik(std::span<const long> counts, std::span<const double> y, double total) {
  if (counts.size() != y.size()) throw Error("counts and frequencies differ in length");
  if (!(total > 0.0)) throw Error("registered patterns have zero total frequency");
  const double log_total = std::log(total);
  double ll = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const long n = counts[k];
    if (n == 0) continue;
    if (!(y[k] > 0.0)) return kNegInf;
    ll += n * (std::log(y[k]) - log_total);
  }
  return ll;
}

double log_gamma_density(double x, double shape, double rate) {
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_catastrophe_prior(int n, double tree_length, double a, double b) {
  if (n < 0) return kNegInf;
  const double d = tree_length;
  const double log_nfact = std::lgamma(n + 1.0);
  double lp = std::lgamma(n + a) - std::lgamma(a) - log_nfact + a * std::log(b / (d + b)) + log_nfact;
  if (n > 0) lp += n * std::log(d / (d + b)) - n * std::log(d);
  return lp;
}

PosteriorTerms log_priors(const Phylogeny& tree, const ConstraintSet& constraints, const ModelParams& params,
                          const PriorConfig& config) {
  PosteriorTerms t;
  t.tree = log_tree_prior(tree, constraints);
  t.mu = log_gamma_density(params.mu, config.rate_shape, config.rate_rate);
  t.beta = params.sd_mode ? 0.0 : log_gamma_density(params.beta, config.rate_shape, config.rate_rate);
  t.kappa = (params.kappa >= config.kappa_min && params.kappa < config.kappa_max)
                ? -std::log(config.kappa_max - config.kappa_min)
                : kNegInf;
  if (!params.xi.empty() && static_cast<int>(params.xi.size()) != tree.leaf_count()) {
    throw Error("need one observation probability per taxon");
  }
  for (double v : params.xi) {
    if (!(v >= 0.0 && v <= 1.0)) t.xi = kNegInf;
  }
  for (const auto& c : tree.catastrophes()) {
    if (!(c.rel_pos > 0.0 && c.rel_pos < 1.0) || c.branch < 2 || c.branch >= tree.node_count()) {
      t.catastrophes = kNegInf;
      return t;
    }
  }
  t.catastrophes = log_catastrophe_prior(static_cast<int>(tree.catastrophes().size()), tree.tree_length(),
                                         config.catastrophe_a, config.catastrophe_b);
  return t;
}

PosteriorEvaluator::PosteriorEvaluator(PatternCounts counts, RegistrationRule rule, ConstraintSet constraints,
                                       PriorConfig config, OdeTolerance tol)
    : counts_(register_counts(counts, rule)),
      rule_(std::move(rule)),
      constraints_(std::move(constraints)),
      config_(config),
      epf_(tol) {
  for (const auto& [q, n] : counts_.counts) {
    patterns_.push_back(q);
    n_.push_back(n);
  }
}

PosteriorTerms PosteriorEvaluator::evaluate(const Phylogeny& tree, const ModelParams& params) {
  PosteriorTerms t = log_priors(tree, constraints_, params, config_);
  // The likelihood is still reported when only the beta prior vanishes (beta = 0).
  if (!std::isfinite(t.total_without_beta())) return t;
  if (counts_.width != tree.leaf_count()) throw Error("data and tree have different numbers of taxa");
  const Vector& y = epf_.leaf_frequencies(tree, params.rates(), params.kappa);
  std::vector<double> yq(patterns_.size());
  for (std::size_t k = 0; k < patterns_.size(); ++k) yq[k] = observed_frequency(y, patterns_[k], params.xi);
  t.loglik = multinomial_loglik(n_, yq, registered_total(y, params.xi, rule_));
  return t;
}

double PosteriorEvaluator::loglik_of(const PatternCounts& counts, const Phylogeny& tree, const ModelParams& params) {
  const auto registered = register_counts(counts, rule_);
  const Vector& y = epf_.leaf_frequencies(tree, params.rates(), params.kappa);
  std::vector<long> n;
  std::vector<double> yq;
  for (const auto& [q, c] : registered.counts) {
    n.push_back(c);
    yq.push_back(observed_frequency(y, q, params.xi));
  }
  return multinomial_loglik(n, yq, registered_total(y, params.xi, rule_));
}

double log_posterior(const PatternCounts& counts, const Phylogeny& tree, const ConstraintSet& constraints,
                     const ModelParams& params, const RegistrationRule& rule) {
  PosteriorEvaluator ev(counts, rule, constraints);
  return ev.evaluate(tree, params).total();
}

}  // namespace sdlt
