#include "sdlt/mcmc.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/gamma.hpp>

namespace sdlt {

namespace {

constexpr std::array<const char*, kKernelCount> kKernelNames{
    "scale_mu",    "scale_beta", "add_catastrophe", "delete_catastrophe", "move_catastrophe", "spr",
    "node_time",   "leaf_time",  "tree_scale",      "kappa",              "xi"};

double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Proposal invalid(const ChainState& s) { return {s, 0.0, false}; }

double reflect(double x, double lo, double hi) {
  const double w = hi - lo;
  for (int k = 0; k < 64 && (x < lo || x > hi); ++k) x = x < lo ? 2 * lo - x : 2 * hi - x;
  return std::clamp(x, lo, lo + w);
}

std::string number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto at = line.find(delim, start);
    out.emplace_back(line.substr(start, at == std::string_view::npos ? line.size() - start : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

double to_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    if (s == "inf") return kPosInf;
    if (s == "-inf") return kNegInf;
    throw Error("not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<Phylogeny::Node> copy_nodes(const Phylogeny& tree) {
  std::vector<Phylogeny::Node> nodes(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) nodes[i] = tree.node(i);
  return nodes;
}

void replace_child(Phylogeny::Node& parent, int from, int to) {
  for (auto& c : parent.child) {
    if (c == from) {
      c = to;
      return;
    }
  }
  throw Error("internal error: child not found");
}

Proposal finish(const ChainState& s, const std::vector<Phylogeny::Node>& nodes, std::vector<Catastrophe> cats,
                double log_hastings) {
  Proposal p{s, log_hastings, false};
  try {
    p.state.tree = assemble_tree(s.tree.taxa(), nodes, std::move(cats));
  } catch (const Error&) {
    return invalid(s);
  }
  p.log_hastings += catastrophe_jacobian(s.tree, p.state.tree);
  p.valid = true;
  return p;
}

}  // namespace

const char* to_string(Kernel k) { return kKernelNames[static_cast<int>(k)]; }

std::optional<Kernel> kernel_from_string(std::string_view name) {
  for (int k = 0; k < kKernelCount; ++k) {
    if (name == kKernelNames[k]) return static_cast<Kernel>(k);
  }
  return std::nullopt;
}

double catastrophe_jacobian(const Phylogeny& before, const Phylogeny& after) {
  double out = 0.0;
  for (const auto& c : after.catastrophes()) out += std::log(after.branch_length(c.branch));
  for (const auto& c : before.catastrophes()) out -= std::log(before.branch_length(c.branch));
  return out;
}

Phylogeny assemble_tree(const std::vector<std::string>& taxa, std::vector<Phylogeny::Node> nodes,
                        std::vector<Catastrophe> catastrophes) {
  const int root = nodes.at(0).child[0];
  if (root != 1 && root > 0) {
    // Swap labels root <-> 1 so the constructor sees the root in place.
    auto swap_label = [&](int& x) {
      if (x == root) {
        x = 1;
      } else if (x == 1) {
        x = root;
      }
    };
    std::swap(nodes[root], nodes[1]);
    for (auto& n : nodes) {
      if (n.parent >= 0) swap_label(n.parent);
      for (auto& c : n.child) {
        if (c >= 0) swap_label(c);
      }
    }
    for (auto& c : catastrophes) swap_label(c.branch);
  }
  return Phylogeny(taxa, std::move(nodes), std::move(catastrophes));
}

Proposal propose_scale_rate(const ChainState& s, bool beta, double scale, std::mt19937_64& rng) {
  Proposal p{s, 0.0, true};
  double& v = beta ? p.state.params.beta : p.state.params.mu;
  const double old = v;
  if (!(old > 0.0)) return invalid(s);
  v = old * uniform(rng, 1.0 / scale, scale);
  p.log_hastings = std::log(old / v);
  return p;
}

void rescale_rates(Proposal& p, double scale, std::mt19937_64& rng) {
  if (!p.valid || !(scale > 1.0)) return;
  auto& r = p.state.params;
  const double c = uniform(rng, 1.0 / scale, scale);
  r.mu *= c;
  int rates = 1;
  if (!r.sd_mode) {
    r.beta *= c;
    ++rates;
  }
  // (rates, c) -> (c rates, 1 / c).
  p.log_hastings += static_cast<double>(rates - 2) * std::log(c);
}

Proposal propose_add_catastrophe(const ChainState& s, double p_add, double p_delete, std::mt19937_64& rng) {
  const auto& tree = s.tree;
  const double D = tree.tree_length();
  double x = uniform(rng, 0.0, D);
  int branch = tree.node_count() - 1;
  for (int i = 2; i < tree.node_count(); ++i) {
    const double len = tree.branch_length(i);
    if (x < len) {
      branch = i;
      break;
    }
    x -= len;
  }
  const double u = std::clamp(x / tree.branch_length(branch), 0.0, 1.0);
  if (!(u > 0.0 && u < 1.0)) return invalid(s);
  Proposal p{s, 0.0, true};
  p.state.tree.add_catastrophe({branch, u});
  const double n = static_cast<double>(tree.catastrophes().size());
  p.log_hastings = std::log(p_delete / p_add) - std::log(n + 1.0) + std::log(D);
  return p;
}

Proposal propose_delete_catastrophe(const ChainState& s, double p_add, double p_delete, std::mt19937_64& rng) {
  const auto& cats = s.tree.catastrophes();
  if (cats.empty()) return invalid(s);
  const int n = static_cast<int>(cats.size());
  Proposal p{s, 0.0, true};
  p.state.tree.remove_catastrophe(static_cast<std::size_t>(uniform_int(rng, 0, n - 1)));
  p.log_hastings = std::log(p_add / p_delete) + std::log(static_cast<double>(n)) - std::log(s.tree.tree_length());
  return p;
}

Proposal propose_move_catastrophe(const ChainState& s, std::mt19937_64& rng) {
  const auto& tree = s.tree;
  const auto& cats = tree.catastrophes();
  if (cats.empty()) return invalid(s);
  const int idx = uniform_int(rng, 0, static_cast<int>(cats.size()) - 1);
  const Catastrophe c = cats[idx];
  const int b = c.branch;
  std::vector<int> near;
  if (tree.is_internal(b)) {
    near.push_back(tree.child(b, 0));
    near.push_back(tree.child(b, 1));
  }
  near.push_back(tree.sibling(b));
  near.push_back(tree.parent(b));
  auto neighbours = [&](int i) { return tree.degree(i) + tree.degree(tree.parent(i)) - 2; };
  const int target = near[uniform_int(rng, 0, static_cast<int>(near.size()) - 1)];
  if (target <= 1) return invalid(s);
  Proposal p{s, 0.0, true};
  p.state.tree.remove_catastrophe(static_cast<std::size_t>(idx));
  p.state.tree.add_catastrophe({target, c.rel_pos});
  p.log_hastings = std::log(static_cast<double>(neighbours(b))) - std::log(static_cast<double>(neighbours(target))) +
                   std::log(tree.branch_length(target)) - std::log(tree.branch_length(b));
  return p;
}

Proposal propose_spr(const ChainState& s, const ConstraintSet& constraints, std::mt19937_64& rng) {
  const auto& tree = s.tree;
  const int L = tree.leaf_count();
  if (L < 3) return invalid(s);
  const double root_lo = constraints.root_window().lower;
  const int n = tree.node_count();

  const int i = uniform_int(rng, 2, n - 1);
  const int p = tree.parent(i);
  const int sib = tree.sibling(i);
  const int g = tree.parent(p);

  std::vector<char> pruned(n, 0);
  std::vector<int> stack{i};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    pruned[v] = 1;
    if (tree.is_internal(v)) {
      stack.push_back(tree.child(v, 0));
      stack.push_back(tree.child(v, 1));
    }
  }
  pruned[p] = 1;

  auto nodes = copy_nodes(tree);
  replace_child(nodes[g], p, sib);
  nodes[sib].parent = g;

  // Attachment window on the branch above j in the pruned tree.
  auto window = [&](int j) -> std::pair<double, double> {
    const int above = nodes[j].parent;
    if (above == 0) return {root_lo, nodes[j].time};
    return {nodes[above].time, nodes[j].time};
  };

  std::vector<int> targets;
  for (int j = 1; j < n; ++j) {
    if (!pruned[j]) targets.push_back(j);
  }
  const int j = targets[uniform_int(rng, 0, static_cast<int>(targets.size()) - 1)];
  const auto [lo, hi] = window(j);
  const auto [rlo, rhi] = window(sib);
  if (!std::isfinite(lo) || !std::isfinite(rlo) || !(hi > lo) || !(rhi > rlo)) return invalid(s);
  const double t_new = uniform(rng, lo, hi);
  if (!(t_new < nodes[i].time) || !(t_new > lo)) return invalid(s);

  const int jp = nodes[j].parent;
  const bool p_was_root = g == 0;
  const bool j_is_root = jp == 0;
  replace_child(nodes[jp], j, p);
  nodes[p].parent = jp;
  nodes[p].child = tree.child(p, 0) == i ? std::array<int, 2>{i, j} : std::array<int, 2>{j, i};
  nodes[p].time = t_new;
  nodes[j].parent = p;

  auto cats = tree.catastrophes();
  // The root branch carries no catastrophes, so a branch that becomes or stops being the
  // root branch hands its catastrophes over.
  if (p_was_root) {
    for (auto& c : cats) {
      if (c.branch == sib) c.branch = p;
    }
  }
  if (j_is_root) {
    for (auto& c : cats) {
      if (c.branch == p) c.branch = j;
    }
  }
  return finish(s, nodes, std::move(cats), std::log(hi - lo) - std::log(rhi - rlo));
}

Proposal propose_node_time(const ChainState& s, const ConstraintSet& constraints, double fraction,
                           std::mt19937_64& rng) {
  const auto& tree = s.tree;
  const int L = tree.leaf_count();
  const int j = uniform_int(rng, 1, L - 1);
  const auto masks = tree.clade_masks();
  const TimeWindow w = constraints.node_window(tree, masks, j);
  const double lo = std::max(j == 1 ? kNegInf : tree.time(tree.parent(j)), w.lower);
  const double hi = std::min({tree.time(tree.child(j, 0)), tree.time(tree.child(j, 1)), w.upper});
  if (!std::isfinite(lo) || !(hi > lo)) return invalid(s);
  const double half = fraction * (hi - lo);
  const double t = tree.time(j) + uniform(rng, -half, half);
  if (!(t > lo && t < hi)) return invalid(s);
  auto nodes = copy_nodes(tree);
  nodes[j].time = t;
  return finish(s, nodes, tree.catastrophes(), 0.0);
}

Proposal propose_leaf_time(const ChainState& s, const ConstraintSet& constraints, double fraction,
                           std::mt19937_64& rng) {
  const auto& tree = s.tree;
  const int L = tree.leaf_count();
  std::vector<int> free;
  for (int k = 0; k < L; ++k) {
    const auto w = constraints.leaf_window(k);
    if (w && w->upper > w->lower && std::isfinite(w->upper)) free.push_back(k);
  }
  if (free.empty()) return invalid(s);
  const int k = free[uniform_int(rng, 0, static_cast<int>(free.size()) - 1)];
  const int leaf = L + k;
  const auto w = *constraints.leaf_window(k);
  const double lo = std::max(tree.time(tree.parent(leaf)), w.lower);
  const double hi = w.upper;
  if (!(hi > lo)) return invalid(s);
  const double half = fraction * (hi - lo);
  const double t = tree.time(leaf) + uniform(rng, -half, half);
  if (!(t > lo && t <= hi)) return invalid(s);
  auto nodes = copy_nodes(tree);
  nodes[leaf].time = t;
  return finish(s, nodes, tree.catastrophes(), 0.0);
}

Proposal propose_tree_scale(const ChainState& s, double scale, std::mt19937_64& rng) {
  const auto& tree = s.tree;
  const int L = tree.leaf_count();
  const double anchor = tree.final_time();
  const double c = uniform(rng, 1.0 / scale, scale);
  auto nodes = copy_nodes(tree);
  for (int j = 1; j < L; ++j) nodes[j].time = anchor + c * (tree.time(j) - anchor);
  Proposal p = finish(s, nodes, tree.catastrophes(), 0.0);
  if (!p.valid) return p;
  int rates = 1;
  p.state.params.mu /= c;
  if (!s.params.sd_mode) {
    p.state.params.beta /= c;
    ++rates;
  }
  // (times, rates, c) -> (c times, rates / c, 1 / c).
  p.log_hastings += static_cast<double>(L - 1 - rates - 2) * std::log(c);
  return p;
}

Proposal propose_kappa(const ChainState& s, double window, double lo, double hi, std::mt19937_64& rng) {
  Proposal p{s, 0.0, true};
  p.state.params.kappa = reflect(s.params.kappa + uniform(rng, -window, window), lo, hi);
  if (!(p.state.params.kappa < hi)) return invalid(s);
  return p;
}

Proposal propose_xi(const ChainState& s, double window, std::mt19937_64& rng) {
  if (s.params.xi.empty()) return invalid(s);
  Proposal p{s, 0.0, true};
  const int k = uniform_int(rng, 0, static_cast<int>(s.params.xi.size()) - 1);
  p.state.params.xi[k] = reflect(s.params.xi[k] + uniform(rng, -window, window), 0.0, 1.0);
  return p;
}

// ---------------------------------------------------------------------------------------

Phylogeny random_constrained_tree(const std::vector<std::string>& taxa, const ConstraintSet& constraints,
                                  std::mt19937_64& rng, double leaf_time) {
  const int L = static_cast<int>(taxa.size());
  auto mask_of = [&](const std::vector<std::string>& names) {
    CladeMask m = 0;
    for (const auto& nm : names) {
      const auto it = std::find(taxa.begin(), taxa.end(), nm);
      if (it == taxa.end()) throw Error("constraint names unknown taxon '" + nm + "'");
      m |= CladeMask{1} << (it - taxa.begin());
    }
    return m;
  };
  std::vector<CladeMask> strict, loose;
  for (const auto& c : constraints.constraints()) {
    if (c.kind != ConstraintKind::Clade && c.kind != ConstraintKind::NodeTime) continue;
    const CladeMask m = mask_of(c.leaves);
    if (std::popcount(m) < 2) continue;
    loose.push_back(m);
    if (c.kind == ConstraintKind::Clade) strict.push_back(m);
  }
  const CladeMask all = L == 64 ? ~CladeMask{0} : (CladeMask{1} << L) - 1;

  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<Phylogeny::Node> nodes(2 * L);
    int next = 1;
    // Node-time leaf sets are tried as clades first, then left to chance.
    const auto& clades = attempt < 50 ? loose : strict;
    std::function<int(CladeMask)> build = [&](CladeMask set) -> int {
      if (std::popcount(set) == 1) return L + std::countr_zero(set);
      std::vector<CladeMask> inner;
      for (CladeMask c : clades) {
        if ((c & ~set) || c == set) continue;
        bool maximal = true;
        for (CladeMask d : clades) {
          if (d != c && d != set && !(d & ~set) && !(c & ~d)) maximal = false;
        }
        bool overlaps = false;
        for (CladeMask e : inner) overlaps |= (e & c) != 0;
        if (maximal && !overlaps) inner.push_back(c);
      }
      std::vector<int> units;
      CladeMask covered = 0;
      for (CladeMask c : inner) {
        units.push_back(build(c));
        covered |= c;
      }
      for (int k = 0; k < L; ++k) {
        if ((set >> k & 1) && !(covered >> k & 1)) units.push_back(L + k);
      }
      while (units.size() > 1) {
        const int a = uniform_int(rng, 0, static_cast<int>(units.size()) - 1);
        const int x = units[a];
        units.erase(units.begin() + a);
        const int b = uniform_int(rng, 0, static_cast<int>(units.size()) - 1);
        const int y = units[b];
        units.erase(units.begin() + b);
        const int v = next++;
        nodes[v].child = {x, y};
        nodes[x].parent = v;
        nodes[y].parent = v;
        units.push_back(v);
      }
      return units[0];
    };
    const int root = build(all);
    nodes[0].child = {root, -1};
    nodes[root].parent = 0;

    for (int k = 0; k < L; ++k) {
      double t = leaf_time;
      if (const auto w = constraints.leaf_window(k); w && !w->contains(t)) {
        t = std::isfinite(w->upper) ? (std::isfinite(w->lower) ? 0.5 * (w->lower + w->upper) : w->upper) : w->lower;
      }
      nodes[L + k].time = t;
    }
    // Placeholder times below every child, then constrained times top-down.
    std::function<double(int)> place = [&](int v) -> double {
      if (v >= L) return nodes[v].time;
      const double t = std::min(place(nodes[v].child[0]), place(nodes[v].child[1])) - 1.0 - 1e-3 * v;
      nodes[v].time = t;
      return t;
    };
    place(root);
    Phylogeny draft = assemble_tree(taxa, nodes, {});
    const auto masks = draft.clade_masks();
    const int n = draft.node_count();
    std::vector<TimeWindow> own(n);
    std::vector<double> latest(n, kPosInf);
    for (int i = 1; i < n; ++i) own[i] = constraints.node_window(draft, masks, i);
    double span = 0.0;
    for (int i = 1; i < L; ++i) {
      if (std::isfinite(own[i].lower)) span = std::max(span, draft.final_time() - own[i].lower);
    }
    if (span <= 0.0) span = 1000.0;
    const double gap = 1e-6 * span;
    for (int i = n - 1; i >= 1; --i) {
      if (draft.is_leaf(i)) {
        latest[i] = draft.time(i);
        continue;
      }
      latest[i] = std::min({own[i].upper, latest[draft.child(i, 0)] - gap, latest[draft.child(i, 1)] - gap});
    }
    auto nodes2 = copy_nodes(draft);
    bool ok = true;
    for (int i = 1; i < L && ok; ++i) {
      double lo = i == 1 ? own[1].lower : std::max(nodes2[draft.parent(i)].time + gap, own[i].lower);
      if (!std::isfinite(lo)) lo = latest[i] - span;
      const double hi = latest[i];
      if (!(hi > lo)) {
        ok = false;
        break;
      }
      nodes2[i].time = uniform(rng, lo, hi);
    }
    if (!ok) continue;
    try {
      Phylogeny tree = assemble_tree(taxa, nodes2, {});
      if (constraints.satisfied(tree)) return tree;
    } catch (const Error&) {
    }
  }
  throw Error("could not draw a tree satisfying the constraints");
}

ChainState initial_state(const std::vector<std::string>& taxa, const ConstraintSet& constraints,
                         const McmcConfig& config, std::mt19937_64& rng) {
  ChainState s{random_constrained_tree(taxa, constraints, rng), {}};
  const boost::math::gamma_distribution<double> g(config.prior.rate_shape, 1.0 / config.prior.rate_rate);
  const double median = std::clamp(boost::math::quantile(g, 0.5), 1e-6, 1.0);
  s.params.mu = median;
  s.params.beta = config.sd_mode ? 0.0 : median;
  s.params.sd_mode = config.sd_mode;
  s.params.kappa = 0.5 * (config.prior.kappa_min + config.prior.kappa_max);
  if (config.sample_xi) s.params.xi.assign(taxa.size(), 0.9);
  return s;
}

// ---------------------------------------------------------------------------------------

Chain::Chain(PatternCounts counts, RegistrationRule rule, ConstraintSet constraints, McmcConfig config)
    : config_(std::move(config)),
      evaluator_(std::move(counts), std::move(rule), std::move(constraints), config_.prior, config_.tolerance),
      rng_(config_.seed) {
  evaluator_.epf().set_caching(config_.caching);
  const auto& pr = config_.prior;
  if (!(0.0 <= pr.kappa_min && pr.kappa_min < pr.kappa_max && pr.kappa_max <= 1.0)) {
    throw Error("kappa prior needs 0 <= kappa_min < kappa_max <= 1");
  }
}

PosteriorTerms Chain::evaluate(const ChainState& s) {
  if (!config_.likelihood) return log_priors(s.tree, evaluator_.constraints(), s.params, config_.prior);
  try {
    return evaluator_.evaluate(s.tree, s.params);
  } catch (const IntegrationError&) {
    PosteriorTerms t;
    t.loglik = kNegInf;
    return t;
  }
}

double Chain::target(const PosteriorTerms& t) const { return config_.sd_mode ? t.total_without_beta() : t.total(); }

void Chain::set_state(ChainState s) {
  s.params.sd_mode = config_.sd_mode;
  if (config_.sd_mode) s.params.beta = 0.0;
  state_ = std::move(s);
  terms_ = evaluate(state_);
}

std::array<double, kKernelCount> Chain::effective_weights() const {
  auto w = config_.weights;
  auto off = [&](Kernel k) { w[static_cast<int>(k)] = 0.0; };
  if (config_.sd_mode) off(Kernel::ScaleBeta);
  if (!config_.sample_xi || state_.params.xi.empty()) off(Kernel::Xi);
  if (state_.tree.leaf_count() < 3) off(Kernel::Spr);
  bool leaf_free = false;
  const auto& cs = evaluator_.constraints();
  for (int k = 0; k < state_.tree.leaf_count(); ++k) {
    const auto lw = cs.leaf_window(k);
    leaf_free |= lw && lw->upper > lw->lower && std::isfinite(lw->upper);
  }
  if (!leaf_free) off(Kernel::LeafTime);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw Error("no kernel has positive weight");
  for (double& v : w) v /= total;
  return w;
}

// Kappa for a first catastrophe: half the time from the lowest fraction of the prior range,
// otherwise from the whole range.  Densities are relative to the (uniform) prior.
double Chain::first_kappa_draw(std::mt19937_64& rng) const {
  const auto& pr = config_.prior;
  const double w = config_.tuning.first_kappa_fraction;
  const double hi = uniform(rng) < 0.5 ? pr.kappa_min + w * (pr.kappa_max - pr.kappa_min) : pr.kappa_max;
  return uniform(rng, pr.kappa_min, hi);
}

double Chain::log_first_kappa(double kappa) const {
  const auto& pr = config_.prior;
  const double w = config_.tuning.first_kappa_fraction;
  const bool low = kappa < pr.kappa_min + w * (pr.kappa_max - pr.kappa_min);
  return std::log(0.5 + (low ? 0.5 / w : 0.0));
}

Proposal Chain::propose(Kernel k) {
  const auto& t = config_.tuning;
  const auto w = effective_weights();
  const double p_add = w[static_cast<int>(Kernel::AddCatastrophe)];
  const double p_del = w[static_cast<int>(Kernel::DeleteCatastrophe)];
  const auto& cs = evaluator_.constraints();
  switch (k) {
    case Kernel::ScaleMu: return propose_scale_rate(state_, false, t.rate_scale, rng_);
    case Kernel::ScaleBeta: return propose_scale_rate(state_, true, t.rate_scale, rng_);
    case Kernel::AddCatastrophe: {
      if (!(p_add > 0.0 && p_del > 0.0)) return invalid(state_);
      auto p = propose_add_catastrophe(state_, p_add, p_del, rng_);
      if (p.valid && t.first_kappa_fraction > 0.0 && state_.tree.catastrophes().empty()) {
        p.state.params.kappa = first_kappa_draw(rng_);
        p.log_hastings -= log_first_kappa(p.state.params.kappa);
      }
      rescale_rates(p, t.catastrophe_rate_scale, rng_);
      return p;
    }
    case Kernel::DeleteCatastrophe: {
      if (!(p_add > 0.0 && p_del > 0.0)) return invalid(state_);
      auto p = propose_delete_catastrophe(state_, p_add, p_del, rng_);
      if (p.valid && t.first_kappa_fraction > 0.0 && state_.tree.catastrophes().size() == 1) {
        p.log_hastings += log_first_kappa(state_.params.kappa);
        p.state.params.kappa = uniform(rng_, config_.prior.kappa_min, config_.prior.kappa_max);
      }
      rescale_rates(p, t.catastrophe_rate_scale, rng_);
      return p;
    }
    case Kernel::MoveCatastrophe: return propose_move_catastrophe(state_, rng_);
    case Kernel::Spr: return propose_spr(state_, cs, rng_);
    case Kernel::NodeTime: return propose_node_time(state_, cs, t.node_fraction, rng_);
    case Kernel::LeafTime: return propose_leaf_time(state_, cs, t.node_fraction, rng_);
    case Kernel::TreeScale: return propose_tree_scale(state_, t.tree_scale, rng_);
    case Kernel::Kappa:
      return propose_kappa(state_, t.kappa_window, config_.prior.kappa_min, config_.prior.kappa_max, rng_);
    case Kernel::Xi: return propose_xi(state_, t.xi_window, rng_);
  }
  return invalid(state_);
}

bool Chain::step(Kernel k) {
  auto& st = stats_[static_cast<int>(k)];
  ++st.proposed;
  Proposal p = propose(k);
  if (!p.valid) return false;
  const PosteriorTerms t = evaluate(p.state);
  const double next = target(t);
  if (std::isnan(next) || next == kNegInf) return false;
  const double log_alpha = next - target(terms_) + p.log_hastings;
  if (log_alpha < 0.0 && !(std::log(uniform(rng_)) < log_alpha)) return false;
  state_ = std::move(p.state);
  terms_ = t;
  ++st.accepted;
  return true;
}

bool Chain::step() {
  const auto w = effective_weights();
  double u = uniform(rng_);
  int k = 0;
  for (; k < kKernelCount - 1; ++k) {
    if (u < w[k]) break;
    u -= w[k];
  }
  while (w[k] == 0.0 && k > 0) --k;
  return step(static_cast<Kernel>(k));
}

SampleLog Chain::run(ChainState init, const std::function<void(long)>& progress) {
  set_state(std::move(init));
  SampleLog log;
  auto record = [&](long it) {
    const double lp = terms_.prior() - (config_.sd_mode ? terms_.beta : 0.0);
    log.samples.push_back({it, state_, target(terms_), terms_.loglik, lp});
  };
  if (config_.burn_in == 0 || config_.iterations == 0) record(0);
  for (long it = 1; it <= config_.iterations; ++it) {
    step();
    if (it > config_.burn_in && config_.thin > 0 && it % config_.thin == 0) record(it);
    if (progress) progress(it);
  }
  log.stats = stats_;
  return log;
}

// ---------------------------------------------------------------------------------------

std::string SampleLog::scalar_table() const {
  std::ostringstream os;
  os << "iteration\tlog_posterior\tlog_likelihood\tlog_prior\tmu\tbeta\tkappa\troot_time\tcatastrophes\ttree_length";
  const bool xi = !samples.empty() && !samples.front().state.params.xi.empty();
  if (xi) {
    for (const auto& name : samples.front().state.tree.taxa()) os << "\txi_" << name;
  }
  os << '\n';
  for (const auto& s : samples) {
    const auto& p = s.state.params;
    os << s.iteration << '\t' << number(s.log_posterior) << '\t' << number(s.log_likelihood) << '\t'
       << number(s.log_prior) << '\t' << number(p.mu) << '\t' << number(p.sd_mode ? 0.0 : p.beta) << '\t'
       << number(p.kappa) << '\t' << number(s.state.tree.time(1)) << '\t' << s.state.tree.catastrophes().size()
       << '\t' << number(s.state.tree.tree_length());
    if (xi) {
      for (double v : p.xi) os << '\t' << number(v);
    }
    os << '\n';
  }
  return os.str();
}

std::string SampleLog::tree_table() const {
  std::string out = "#taxa";
  if (!samples.empty()) {
    for (const auto& t : samples.front().state.tree.taxa()) out += '\t' + t;
  }
  out += '\n';
  for (const auto& s : samples) out += std::to_string(s.iteration) + '\t' + write_tree(s.state.tree) + '\n';
  return out;
}

SampleLog SampleLog::parse(std::string_view scalars, std::string_view trees) {
  SampleLog log;
  std::vector<std::string> header;
  std::istringstream in{std::string(scalars)};
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto cells = split(line, '\t');
    if (header.empty()) {
      header = std::move(cells);
      continue;
    }
    ++row;
    if (cells.size() != header.size()) throw ParseError("row " + std::to_string(row) + " has the wrong width", row);
    Sample s;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& h = header[c];
      const double v = to_double(cells[c]);
      if (h == "iteration") s.iteration = static_cast<long>(v);
      else if (h == "log_posterior") s.log_posterior = v;
      else if (h == "log_likelihood") s.log_likelihood = v;
      else if (h == "log_prior") s.log_prior = v;
      else if (h == "mu") s.state.params.mu = v;
      else if (h == "beta") s.state.params.beta = v;
      else if (h == "kappa") s.state.params.kappa = v;
      else if (h.rfind("xi_", 0) == 0) s.state.params.xi.push_back(v);
    }
    log.samples.push_back(std::move(s));
  }

  std::vector<std::string> taxa;
  std::map<long, Phylogeny> by_iteration;
  std::istringstream tin{std::string(trees)};
  while (std::getline(tin, line)) {
    if (trim(line).empty()) continue;
    auto cells = split(line, '\t');
    if (cells[0] == "#taxa") {
      taxa.assign(cells.begin() + 1, cells.end());
      continue;
    }
    if (cells.size() != 2) throw ParseError("tree lines need an iteration and a tree", 0);
    auto tree = parse_tree(cells[1]);
    if (!taxa.empty()) tree = with_taxon_order(tree, taxa);
    by_iteration.emplace(static_cast<long>(to_double(cells[0])), std::move(tree));
  }
  if (log.samples.empty()) {
    for (auto& [it, tree] : by_iteration) {
      Sample s;
      s.iteration = it;
      s.state.tree = std::move(tree);
      log.samples.push_back(std::move(s));
    }
    return log;
  }
  for (auto& s : log.samples) {
    const auto it = by_iteration.find(s.iteration);
    if (it != by_iteration.end()) s.state.tree = it->second;
  }
  return log;
}

std::vector<double> SampleLog::column(std::string_view name) const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto& p = s.state.params;
    const auto& tree = s.state.tree;
    if (name == "iteration") out.push_back(static_cast<double>(s.iteration));
    else if (name == "log_posterior") out.push_back(s.log_posterior);
    else if (name == "log_likelihood") out.push_back(s.log_likelihood);
    else if (name == "log_prior") out.push_back(s.log_prior);
    else if (name == "mu") out.push_back(p.mu);
    else if (name == "beta") out.push_back(p.beta);
    else if (name == "beta_over_mu") out.push_back(p.beta / p.mu);
    else if (name == "kappa") out.push_back(p.kappa);
    else if (name == "root_time") out.push_back(tree.time(1));
    else if (name == "catastrophes") out.push_back(static_cast<double>(tree.catastrophes().size()));
    else if (name == "tree_length") out.push_back(tree.tree_length());
    else if (name.rfind("xi_", 0) == 0) {
      const auto taxon = name.substr(3);
      const auto& taxa = tree.taxa();
      const auto it = std::find(taxa.begin(), taxa.end(), taxon);
      if (it == taxa.end() || p.xi.empty()) throw Error("no column " + std::string(name));
      out.push_back(p.xi[it - taxa.begin()]);
    } else {
      throw Error("no column " + std::string(name));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------

void apply_mcmc_option(McmcConfig& cfg, std::string_view key, std::string_view value) {
  const std::string v(trim(value));
  auto flag = [&]() {
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw Error("option " + std::string(key) + " expects on or off, got '" + v + "'");
  };
  auto positive = [&]() {
    const double x = to_double(v);
    if (!(x > 0.0)) throw Error("option " + std::string(key) + " must be positive");
    return x;
  };
  auto count = [&]() {
    const double x = to_double(v);
    if (!(x >= 0.0) || x != std::floor(x)) throw Error("option " + std::string(key) + " must be a whole number");
    return static_cast<long>(x);
  };
  if (key == "iterations") cfg.iterations = count();
  else if (key == "thin") cfg.thin = std::max(1L, count());
  else if (key == "burn_in" || key == "burn-in") cfg.burn_in = count();
  else if (key == "seed") cfg.seed = std::stoull(v);
  else if (key == "mode") {
    if (v == "SDLT" || v == "sdlt") cfg.sd_mode = false;
    else if (v == "SD" || v == "sd") cfg.sd_mode = true;
    else throw Error("mode must be SDLT or SD");
  } else if (key == "likelihood") cfg.likelihood = flag();
  else if (key == "sample_xi") cfg.sample_xi = flag();
  else if (key == "caching") cfg.caching = flag();
  else if (key == "rate_scale") cfg.tuning.rate_scale = positive();
  else if (key == "tree_scale") cfg.tuning.tree_scale = positive();
  else if (key == "node_fraction") cfg.tuning.node_fraction = positive();
  else if (key == "kappa_window") cfg.tuning.kappa_window = positive();
  else if (key == "xi_window") cfg.tuning.xi_window = positive();
  else if (key == "catastrophe_rate_scale") cfg.tuning.catastrophe_rate_scale = positive();
  else if (key == "first_kappa_fraction") cfg.tuning.first_kappa_fraction = to_double(v);
  else if (key == "rate_shape") cfg.prior.rate_shape = positive();
  else if (key == "rate_rate") cfg.prior.rate_rate = positive();
  else if (key == "kappa_min") cfg.prior.kappa_min = to_double(v);
  else if (key == "kappa_max") cfg.prior.kappa_max = to_double(v);
  else if (key == "catastrophe_a") cfg.prior.catastrophe_a = positive();
  else if (key == "catastrophe_b") cfg.prior.catastrophe_b = positive();
  else if (key == "rtol") cfg.tolerance.rtol = positive();
  else if (key == "atol") cfg.tolerance.atol = positive();
  else if (key.rfind("weight.", 0) == 0) {
    const auto k = kernel_from_string(key.substr(7));
    if (!k) throw Error("unknown kernel '" + std::string(key.substr(7)) + "'");
    const double x = to_double(v);
    if (!(x >= 0.0)) throw Error("kernel weights must be non-negative");
    cfg.weights[static_cast<int>(*k)] = x;
  } else {
    throw Error("unknown option '" + std::string(key) + "'");
  }
  if (cfg.tuning.rate_scale <= 1.0 || cfg.tuning.tree_scale <= 1.0) throw Error("scale windows must exceed 1");
  if (cfg.tuning.catastrophe_rate_scale < 1.0) throw Error("catastrophe_rate_scale must be at least 1");
  if (!(cfg.tuning.first_kappa_fraction >= 0.0 && cfg.tuning.first_kappa_fraction <= 1.0)) {
    throw Error("first_kappa_fraction must lie in [0, 1]");
  }
}

std::string mcmc_config_text(const McmcConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "iterations=" << cfg.iterations << "\nthin=" << cfg.thin << "\nburn_in=" << cfg.burn_in
     << "\nseed=" << cfg.seed << "\nmode=" << (cfg.sd_mode ? "SD" : "SDLT")
     << "\nlikelihood=" << (cfg.likelihood ? "on" : "off") << "\nsample_xi=" << (cfg.sample_xi ? "on" : "off")
     << "\ncaching=" << (cfg.caching ? "on" : "off") << "\nrate_scale=" << cfg.tuning.rate_scale
     << "\ntree_scale=" << cfg.tuning.tree_scale << "\nnode_fraction=" << cfg.tuning.node_fraction
     << "\nkappa_window=" << cfg.tuning.kappa_window << "\nxi_window=" << cfg.tuning.xi_window
     << "\ncatastrophe_rate_scale=" << cfg.tuning.catastrophe_rate_scale
     << "\nfirst_kappa_fraction=" << cfg.tuning.first_kappa_fraction
     << "\nrate_shape=" << cfg.prior.rate_shape << "\nrate_rate=" << cfg.prior.rate_rate
     << "\nkappa_min=" << cfg.prior.kappa_min << "\nkappa_max=" << cfg.prior.kappa_max
     << "\ncatastrophe_a=" << cfg.prior.catastrophe_a << "\ncatastrophe_b=" << cfg.prior.catastrophe_b
     << "\nrtol=" << cfg.tolerance.rtol << "\natol=" << cfg.tolerance.atol << "\n";
  for (int k = 0; k < kKernelCount; ++k) {
    os << "weight." << to_string(static_cast<Kernel>(k)) << "=" << cfg.weights[k] << "\n";
  }
  return os.str();
}

McmcConfig parse_mcmc_config(std::string_view text, McmcConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", here);
    try {
      apply_mcmc_option(base, trim(l.substr(0, eq)), l.substr(eq + 1));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), here);
    }
  }
  return base;
}

}  // namespace sdlt
