#ifndef SDLT_MCMC_HPP
#define SDLT_MCMC_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sdlt/likelihood.hpp"

namespace sdlt {

struct ChainState {
  Phylogeny tree;
  ModelParams params;
};

enum class Kernel : int {
  ScaleMu,
  ScaleBeta,
  AddCatastrophe,
  DeleteCatastrophe,
  MoveCatastrophe,
  Spr,
  NodeTime,
  LeafTime,
  TreeScale,
  Kappa,
  Xi,
};
inline constexpr int kKernelCount = 11;
const char* to_string(Kernel k);
std::optional<Kernel> kernel_from_string(std::string_view name);

struct Proposal {
  ChainState state;
  double log_hastings = 0.0;
  bool valid = false;  // false: reject without evaluating the target
};

struct KernelTuning {
  double rate_scale = 1.6;      // multiplier window for mu and beta
  double tree_scale = 1.3;      // multiplier window for the joint tree/rate move
  double node_fraction = 0.4;   // node-time half-window as a fraction of the admissible interval
  double kappa_window = 0.3;
  double xi_window = 0.1;
  double catastrophe_rate_scale = 1.0;  // add/delete also rescale the rates when above 1
  // Adding the first catastrophe draws a new kappa, favouring the lowest fraction of its prior
  // range, and deleting the last one redraws kappa from the prior.  0 keeps kappa as it is.
  double first_kappa_fraction = 0.1;
};

// Proposals.  Each draws from `rng` and returns the new state with its log Hastings ratio.
// Catastrophes keep their relative position on a branch, so every move that changes branch
// lengths carries the factor prod over catastrophes of (new length / old length).
Proposal propose_scale_rate(const ChainState& s, bool beta, double scale, std::mt19937_64& rng);
Proposal propose_add_catastrophe(const ChainState& s, double p_add, double p_delete, std::mt19937_64& rng);
// Multiplies mu (and beta outside SD mode) by one c ~ U[1/scale, scale] inside proposal p.
void rescale_rates(Proposal& p, double scale, std::mt19937_64& rng);
Proposal propose_delete_catastrophe(const ChainState& s, double p_add, double p_delete, std::mt19937_64& rng);
Proposal propose_move_catastrophe(const ChainState& s, std::mt19937_64& rng);
Proposal propose_spr(const ChainState& s, const ConstraintSet& constraints, std::mt19937_64& rng);
Proposal propose_node_time(const ChainState& s, const ConstraintSet& constraints, double fraction,
                           std::mt19937_64& rng);
Proposal propose_leaf_time(const ChainState& s, const ConstraintSet& constraints, double fraction,
                           std::mt19937_64& rng);
Proposal propose_tree_scale(const ChainState& s, double scale, std::mt19937_64& rng);
Proposal propose_kappa(const ChainState& s, double window, double lo, double hi, std::mt19937_64& rng);
Proposal propose_xi(const ChainState& s, double window, std::mt19937_64& rng);

// Sum over catastrophes of log branch length after the move minus the same sum before.
double catastrophe_jacobian(const Phylogeny& before, const Phylogeny& after);

// Builds a tree from nodes in any labelling (the root is the child of node 0).
Phylogeny assemble_tree(const std::vector<std::string>& taxa, std::vector<Phylogeny::Node> nodes,
                        std::vector<Catastrophe> catastrophes);

// Random tree satisfying the clade and time constraints, with every leaf at `leaf_time`
// unless the constraints give it a window.
Phylogeny random_constrained_tree(const std::vector<std::string>& taxa, const ConstraintSet& constraints,
                                  std::mt19937_64& rng, double leaf_time = 0.0);

struct McmcConfig {
  long iterations = 10000;
  long thin = 10;
  long burn_in = 0;
  std::uint64_t seed = 1;
  bool sd_mode = false;
  bool likelihood = true;  // off: the chain samples the prior
  bool sample_xi = false;
  std::array<double, kKernelCount> weights{0.1, 0.1, 0.05, 0.05, 0.05, 0.15, 0.2, 0.05, 0.1, 0.05, 0.1};
  KernelTuning tuning;
  PriorConfig prior;
  OdeTolerance tolerance;
  bool caching = true;
};

struct Sample {
  long iteration = 0;
  ChainState state;
  double log_posterior = 0.0;
  double log_likelihood = 0.0;
  double log_prior = 0.0;
};

struct KernelStats {
  long proposed = 0;
  long accepted = 0;
  double rate() const { return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct SampleLog {
  std::vector<Sample> samples;
  std::array<KernelStats, kKernelCount> stats{};

  // Scalar columns: iteration, log_posterior, log_likelihood, log_prior, mu, beta, kappa,
  // root_time, catastrophes, tree_length, then xi_<taxon> when xi is sampled.
  std::string scalar_table() const;
  // A `#taxa` line, then the iteration and the tree on each line.
  std::string tree_table() const;
  static SampleLog parse(std::string_view scalars, std::string_view trees);
  // Any scalar column, plus beta_over_mu.
  std::vector<double> column(std::string_view name) const;
};

class Chain {
 public:
  Chain(PatternCounts counts, RegistrationRule rule, ConstraintSet constraints, McmcConfig config);

  // One Metropolis-Hastings update with the given kernel.  Returns true on acceptance.
  bool step(Kernel k);
  bool step();  // kernel drawn from the configured weights

  SampleLog run(ChainState init, const std::function<void(long)>& progress = {});

  void set_state(ChainState s);
  const ChainState& state() const { return state_; }
  const PosteriorTerms& terms() const { return terms_; }
  const std::array<KernelStats, kKernelCount>& stats() const { return stats_; }
  PosteriorTerms evaluate(const ChainState& s);
  // Kernels that can act on the current state and configuration.
  std::array<double, kKernelCount> effective_weights() const;
  PosteriorEvaluator& evaluator() { return evaluator_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  Proposal propose(Kernel k);
  double target(const PosteriorTerms& t) const;
  double first_kappa_draw(std::mt19937_64& rng) const;
  double log_first_kappa(double kappa) const;

  McmcConfig config_;
  PosteriorEvaluator evaluator_;
  std::mt19937_64 rng_;
  ChainState state_;
  PosteriorTerms terms_;
  std::array<KernelStats, kKernelCount> stats_{};
};

// Start state: random constraint-satisfying tree, rates at the prior median clipped to
// [1e-6, 1], no catastrophes, kappa mid-range and xi = 0.9 when sampled.
ChainState initial_state(const std::vector<std::string>& taxa, const ConstraintSet& constraints,
                         const McmcConfig& config, std::mt19937_64& rng);

// Key=value lines (`#` comments) into a config: iterations, thin, burn_in, seed, mode
// (SDLT or SD), likelihood (on/off), sample_xi, weight.<kernel>, and the tuning keys.
McmcConfig parse_mcmc_config(std::string_view text, McmcConfig base = {});
void apply_mcmc_option(McmcConfig& cfg, std::string_view key, std::string_view value);
// The settable part of a config as text that parse_mcmc_config reads back.
std::string mcmc_config_text(const McmcConfig& cfg);

}  // namespace sdlt

#endif  // SDLT_MCMC_HPP
