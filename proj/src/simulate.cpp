#include "sdlt/simulate.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <unordered_map>

#include "sdlt/parallel.hpp"

namespace sdlt {

double SimConfig::severity(std::size_t catastrophe) const {
  if (severities.empty()) return kappa;
  if (severities.size() != tree.catastrophes().size()) {
    throw Error("one severity per catastrophe is required");
  }
  return severities[catastrophe];
}

const char* to_string(TraitEvent::Kind k) {
  switch (k) {
    case TraitEvent::Kind::Death: return "death";
    case TraitEvent::Kind::Transfer: return "transfer";
    case TraitEvent::Kind::CatastropheDeath: return "catastrophe-death";
    case TraitEvent::Kind::CatastropheBirth: return "catastrophe-birth";
  }
  return "?";
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

class Simulator {
 public:
  explicit Simulator(const SimConfig& cfg)
      : cfg_(cfg), tree_(cfg.tree), r_(cfg.rates), rng_(cfg.seed), held_(tree_.node_count()) {
    if (!(r_.lambda >= 0 && r_.mu > 0 && r_.beta >= 0)) throw Error("invalid simulation rates");
    if (!cfg.xi.empty() && static_cast<int>(cfg.xi.size()) != tree_.leaf_count()) {
      throw Error("one missingness parameter per taxon is required");
    }
  }

  SimResult run();

 private:
  struct Event {
    double time;
    int kind;  // 0 branch, 1 catastrophe, 2 freeze
    int index;
  };

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  void log(int trait, TraitEvent e) {
    if (cfg_.keep_events) out_.histories[trait].events.push_back(e);
  }

  int create(int trait, int branch, int parent, TraitInstance::Origin origin, double t) {
    const int id = static_cast<int>(out_.instances.size());
    out_.instances.push_back({trait, branch, parent, origin, t, true});
    held_[branch].emplace(trait, id);
    pool_pos_.push_back(static_cast<int>(pool_.size()));
    pool_.push_back(id);
    return id;
  }

  int new_trait(int branch, double t) {
    out_.histories.push_back({branch, t, {}, {}});
    return static_cast<int>(out_.histories.size()) - 1;
  }

  void leave_pool(int id) {
    const int at = pool_pos_[id];
    if (at < 0) return;
    const int last = pool_.back();
    pool_[at] = last;
    pool_pos_[last] = at;
    pool_.pop_back();
    pool_pos_[id] = -1;
  }

  void kill(int id) {
    auto& inst = out_.instances[id];
    inst.alive = false;
    held_[inst.branch].erase(inst.trait);
    leave_pool(id);
  }

  // Copies of `id` on `branch` unless the branch already holds the trait.
  bool transfer(int id, int branch, double t) {
    const auto& src = out_.instances[id];
    if (held_[branch].count(src.trait)) return false;
    const int trait = src.trait;
    const int from = src.branch;
    create(trait, branch, id, TraitInstance::Origin::Transfer, t);
    log(trait, {t, TraitEvent::Kind::Transfer, branch, from});
    ++out_.transfers;
    return true;
  }

  void evolve(double& t, double until);
  void catastrophe(int branch, double t, double delta);
  void split(int node, double t);
  void freeze(int leaf);

  const SimConfig& cfg_;
  const Phylogeny& tree_;
  RateParams r_;
  std::mt19937_64 rng_;
  SimResult out_;
  std::vector<std::unordered_map<int, int>> held_;  // per branch: trait -> instance
  std::vector<int> pool_;                           // instances on extant branches
  std::vector<int> pool_pos_;
  std::vector<int> extant_;
};

void Simulator::evolve(double& t, double until) {
  const double lambda = r_.lambda;
  const double per_instance = r_.mu + r_.beta;
  while (true) {
    const double nE = static_cast<double>(extant_.size());
    const double nA = static_cast<double>(pool_.size());
    const double total = lambda * nE + per_instance * nA;
    if (total <= 0.0) break;
    const double dt = std::exponential_distribution<double>(total)(rng_);
    if (t + dt >= until) break;
    t += dt;
    const double u = uniform() * total;
    if (u < lambda * nE) {
      const int b = extant_[pick(extant_.size())];
      create(new_trait(b, t), b, -1, TraitInstance::Origin::Birth, t);
      continue;
    }
    const int id = pool_[pick(pool_.size())];
    if (uniform() * per_instance < r_.mu) {
      log(out_.instances[id].trait, {t, TraitEvent::Kind::Death, out_.instances[id].branch, 0});
      kill(id);
    } else {
      transfer(id, extant_[pick(extant_.size())], t);
    }
  }
  t = until;
}

// The branch alone runs for delta: births on it, deaths on it, and transfers into it from
// every instance on the extant branches, each at beta over the number of extant branches.
void Simulator::catastrophe(int branch, double t, double delta) {
  std::vector<int> local;
  std::unordered_map<int, int> local_pos;
  for (const auto& [trait, id] : held_[branch]) {
    local_pos[id] = static_cast<int>(local.size());
    local.push_back(id);
  }
  std::sort(local.begin(), local.end());
  for (std::size_t k = 0; k < local.size(); ++k) local_pos[local[k]] = static_cast<int>(k);
  auto add_local = [&](int id) {
    local_pos[id] = static_cast<int>(local.size());
    local.push_back(id);
  };
  auto drop_local = [&](int id) {
    const int at = local_pos[id];
    local[at] = local.back();
    local_pos[local[at]] = at;
    local.pop_back();
    local_pos.erase(id);
  };

  const double in_rate = r_.beta / static_cast<double>(extant_.size());
  double s = 0.0;
  while (true) {
    const double births = r_.lambda;
    const double deaths = r_.mu * static_cast<double>(local.size());
    const double transfers = in_rate * static_cast<double>(pool_.size());
    const double total = births + deaths + transfers;
    if (total <= 0.0) break;
    s += std::exponential_distribution<double>(total)(rng_);
    if (s >= delta) break;
    const double u = uniform() * total;
    if (u < births) {
      const int trait = new_trait(branch, t);
      add_local(create(trait, branch, -1, TraitInstance::Origin::Birth, t));
      log(trait, {t, TraitEvent::Kind::CatastropheBirth, branch, 0});
    } else if (u < births + deaths) {
      const int id = local[pick(local.size())];
      log(out_.instances[id].trait, {t, TraitEvent::Kind::CatastropheDeath, branch, 0});
      drop_local(id);
      kill(id);
    } else {
      const int id = pool_[pick(pool_.size())];
      if (out_.instances[id].branch != branch && transfer(id, branch, t)) {
        add_local(static_cast<int>(out_.instances.size()) - 1);
      }
    }
  }
}

void Simulator::split(int node, double t) {
  auto& here = held_[node];
  std::vector<int> ids;
  ids.reserve(here.size());
  for (const auto& [trait, id] : here) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (int id : ids) leave_pool(id);
  extant_.erase(std::find(extant_.begin(), extant_.end(), node));
  for (int side = 0; side < 2; ++side) {
    const int c = tree_.child(node, side);
    extant_.push_back(c);
    for (int id : ids) {
      create(out_.instances[id].trait, c, id, TraitInstance::Origin::Branching, t);
    }
  }
}

void Simulator::freeze(int leaf) {
  for (const auto& [trait, id] : held_[leaf]) leave_pool(id);
  extant_.erase(std::find(extant_.begin(), extant_.end(), leaf));
}

SimResult Simulator::run() {
  const int L = tree_.leaf_count();
  const double end = tree_.final_time();
  std::vector<Event> events;
  for (int j = 1; j < L; ++j) events.push_back({tree_.time(j), 0, j});
  const auto& cats = tree_.catastrophes();
  for (std::size_t c = 0; c < cats.size(); ++c) {
    events.push_back({tree_.catastrophe_time(cats[c]), 1, static_cast<int>(c)});
  }
  for (int leaf = L; leaf < 2 * L; ++leaf) {
    if (tree_.time(leaf) < end) events.push_back({tree_.time(leaf), 2, leaf});
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.time < b.time || (a.time == b.time && a.kind < b.kind);
  });

  double t = tree_.time(1);
  extant_.push_back(1);
  const long initial = std::poisson_distribution<long>(r_.lambda / r_.mu)(rng_);
  for (long k = 0; k < initial; ++k) create(new_trait(1, t), 1, -1, TraitInstance::Origin::Root, t);

  for (const auto& e : events) {
    evolve(t, e.time);
    switch (e.kind) {
      case 0: split(e.index, t); break;
      case 1: {
        const double kappa = cfg_.severity(static_cast<std::size_t>(e.index));
        catastrophe(cats[e.index].branch, t, catastrophe_duration(kappa, r_.mu));
        break;
      }
      default: freeze(e.index);
    }
  }
  evolve(t, end);

  std::vector<int> columns;
  for (int k = 0; k < L; ++k) {
    for (const auto& [trait, id] : held_[L + k]) out_.histories[trait].leaves.push_back(k);
  }
  for (std::size_t trait = 0; trait < out_.histories.size(); ++trait) {
    auto& h = out_.histories[trait];
    if (h.leaves.empty()) continue;
    std::sort(h.leaves.begin(), h.leaves.end());
    columns.push_back(static_cast<int>(trait));
  }

  std::vector<std::string> labels;
  labels.reserve(columns.size());
  for (int trait : columns) labels.push_back("t" + std::to_string(trait));
  out_.complete = TraitMatrix(tree_.taxa(), labels);
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (int k : out_.histories[columns[j]].leaves) out_.complete.set(k, static_cast<int>(j), Cell::Present);
  }
  out_.observed = out_.complete;
  if (!cfg_.xi.empty()) {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      for (int k = 0; k < L; ++k) {
        if (uniform() >= cfg_.xi[k]) out_.observed.set(k, static_cast<int>(j), Cell::Missing);
      }
    }
  }
  out_.column_trait = std::move(columns);
  return std::move(out_);
}

}  // namespace

SimResult gillespie_simulate(const SimConfig& cfg) { return Simulator(cfg).run(); }

TraitMatrix strip_transfers(const SimResult& sim, std::optional<double> cutoff) {
  const auto& inst = sim.instances;
  std::vector<char> tainted(inst.size(), 0);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const bool removed =
        inst[i].origin == TraitInstance::Origin::Transfer && (!cutoff || inst[i].start > *cutoff);
    tainted[i] = removed || (inst[i].parent >= 0 && tainted[inst[i].parent]);
  }
  std::unordered_map<int, int> column_of;
  for (std::size_t j = 0; j < sim.column_trait.size(); ++j) column_of[sim.column_trait[j]] = static_cast<int>(j);

  TraitMatrix out = sim.observed;
  const int L = out.taxon_count();
  for (int j = 0; j < out.trait_count(); ++j) {
    for (int k = 0; k < L; ++k) {
      if (out.at(k, j) == Cell::Present) out.set(k, j, Cell::Absent);
    }
  }
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const auto& a = inst[i];
    if (!a.alive || tainted[i] || a.branch < L) continue;
    const auto it = column_of.find(a.trait);
    if (it == column_of.end()) continue;
    const int k = a.branch - L;
    if (sim.observed.at(k, it->second) != Cell::Missing) out.set(k, it->second, Cell::Present);
  }
  return out;
}

std::string history_log(const SimResult& sim) {
  std::string out = "time\tkind\tbranch\ttrait\n";
  char buf[64];
  for (std::size_t trait = 0; trait < sim.histories.size(); ++trait) {
    const auto& h = sim.histories[trait];
    std::snprintf(buf, sizeof buf, "%.17g", h.birth_time);
    out += buf;
    out += "\tbirth\t" + std::to_string(h.birth_branch) + '\t' + std::to_string(trait) + '\n';
    for (const auto& e : h.events) {
      std::snprintf(buf, sizeof buf, "%.17g", e.time);
      out += buf;
      out += '\t';
      out += to_string(e.kind);
      out += '\t';
      if (e.kind == TraitEvent::Kind::Transfer) out += std::to_string(e.source) + '>';
      out += std::to_string(e.branch) + '\t' + std::to_string(trait) + '\n';
    }
  }
  return out;
}

std::vector<PatternCounts> replicate_counts(const SimConfig& cfg, int replicates, const RegistrationRule& rule,
                                            int threads) {
  std::vector<PatternCounts> out(static_cast<std::size_t>(replicates));
  parallel_for(replicates, threads, [&](int i) {
    SimConfig c = cfg;
    c.seed = replicate_seed(cfg.seed, static_cast<std::uint64_t>(i));
    c.keep_events = false;
    out[static_cast<std::size_t>(i)] = gillespie_simulate(c).observed.pattern_counts(rule);
  });
  return out;
}

}  // namespace sdlt
