#ifndef SDLT_SIMULATE_HPP
#define SDLT_SIMULATE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdlt/epf.hpp"
#include "sdlt/phylo.hpp"
#include "sdlt/traits.hpp"

namespace sdlt {

struct SimConfig {
  Phylogeny tree;
  RateParams rates{0.1, 5e-4, 5e-4};
  double kappa = 0.0;
  std::vector<double> severities;  // per catastrophe in tree order; empty means kappa for all
  std::vector<double> xi;          // per taxon; empty means no missing data
  std::uint64_t seed = 1;
  bool keep_events = true;

  double severity(std::size_t catastrophe) const;
};

struct TraitEvent {
  enum class Kind : std::uint8_t { Death, Transfer, CatastropheDeath, CatastropheBirth };
  double time = 0.0;
  Kind kind = Kind::Death;
  int branch = 0;  // recipient for transfers
  int source = 0;  // donor branch for transfers
};

const char* to_string(TraitEvent::Kind k);

// One copy of a trait on one branch.  Copies made at a branching point, by a transfer or
// carried through a catastrophe all point back to the copy they came from.
struct TraitInstance {
  enum class Origin : std::uint8_t { Root, Birth, Branching, Transfer };
  int trait = 0;
  int branch = 0;
  int parent = -1;
  Origin origin = Origin::Birth;
  double start = 0.0;
  bool alive = true;  // present when its branch ended (or at the end of the run)
};

struct TraitHistory {
  int birth_branch = 0;
  double birth_time = 0.0;  // the root time for traits present at the root
  std::vector<TraitEvent> events;
  std::vector<int> leaves;  // taxa holding the trait at the end, before missingness
};

struct SimResult {
  TraitMatrix complete;           // traits present at one or more leaves
  TraitMatrix observed;           // same columns after missingness
  std::vector<int> column_trait;  // trait id of each column
  std::vector<TraitHistory> histories;
  std::vector<TraitInstance> instances;
  long transfers = 0;  // effective transfers, including those inside catastrophes
};

SimResult gillespie_simulate(const SimConfig& cfg);

// Presence left once transfers after `cutoff` (all transfers if none) and every copy
// descending from them are removed.  Missing cells of the observed matrix stay missing.
TraitMatrix strip_transfers(const SimResult& sim, std::optional<double> cutoff = std::nullopt);

// One line per event: time, kind, branch, trait id.
std::string history_log(const SimResult& sim);

std::uint64_t splitmix64(std::uint64_t x);
// Seed of replicate i under master seed m.
inline std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t i) { return splitmix64(master + i); }

// Registered pattern counts of the observed matrices of `replicates` runs, replicate i
// seeded with replicate_seed(cfg.seed, i).  Same result for any thread count.
std::vector<PatternCounts> replicate_counts(const SimConfig& cfg, int replicates, const RegistrationRule& rule,
                                            int threads = 1);

}  // namespace sdlt

#endif  // SDLT_SIMULATE_HPP
