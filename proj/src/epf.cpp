#include "sdlt/epf.hpp"

#include <algorithm>

namespace sdlt {

Timeline build_timeline(const Phylogeny& tree) {
  const int L = tree.leaf_count();
  Timeline tl;
  tl.end = tree.final_time();

  std::vector<TimelineEvent> raw;
  for (int j = 1; j < L; ++j) raw.push_back({tree.time(j), TimelineEvent::Kind::Branch, 0, j, {}});
  for (const auto& c : tree.catastrophes()) {
    raw.push_back({tree.catastrophe_time(c), TimelineEvent::Kind::Catastrophe, 0, c.branch, {}});
  }
  for (int leaf = L; leaf < 2 * L; ++leaf) {
    if (tree.time(leaf) < tl.end) raw.push_back({tree.time(leaf), TimelineEvent::Kind::Freeze, 0, leaf, {}});
  }
  std::stable_sort(raw.begin(), raw.end(), [](const TimelineEvent& a, const TimelineEvent& b) {
    if (a.time != b.time) return a.time < b.time;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
  for (std::size_t k = 1; k < raw.size(); ++k) {
    using K = TimelineEvent::Kind;
    if (raw[k].time == raw[k - 1].time && raw[k - 1].kind == K::Branch && raw[k].kind == K::Catastrophe) {
      throw Error("a catastrophe coincides with a branching time");
    }
  }

  std::vector<int> tuple{1};
  std::vector<bool> extinct{false};
  auto locate = [&](int node) {
    const auto it = std::find(tuple.begin(), tuple.end(), node);
    if (it == tuple.end()) throw Error("event on a lineage that is not alive");
    return static_cast<int>(it - tuple.begin());
  };
  for (auto& e : raw) {
    const int idx = locate(e.node);
    e.position = idx + 1;
    switch (e.kind) {
      case TimelineEvent::Kind::Branch:
        if (static_cast<int>(tuple.size()) + 1 > kMaxLineages) throw Error("tree exceeds the lineage cap");
        tuple[idx] = tree.child(e.node, 0);
        tuple.insert(tuple.begin() + idx + 1, tree.child(e.node, 1));
        extinct.insert(extinct.begin() + idx + 1, false);
        break;
      case TimelineEvent::Kind::Catastrophe:
        if (extinct[idx]) throw Error("catastrophe on an extinct lineage");
        break;
      case TimelineEvent::Kind::Freeze:
        extinct[idx] = true;
        break;
    }
    e.after.width = static_cast<int>(tuple.size());
    e.after.extant = 0;
    for (std::size_t i = 0; i < extinct.size(); ++i) {
      if (!extinct[i]) e.after.extant |= PatternBits{1} << i;
    }
  }
  tl.events = std::move(raw);
  tl.final_branches = std::move(tuple);
  return tl;
}

Vector to_taxon_order(const Vector& x, const std::vector<int>& final_branches, int leaf_count) {
  const int w = static_cast<int>(final_branches.size());
  if (x.size() != (Eigen::Index{1} << w)) throw Error("vector does not match the final slice");
  std::vector<PatternBits> taxon_bit(w);
  for (int i = 0; i < w; ++i) taxon_bit[i] = PatternBits{1} << (final_branches[i] - leaf_count);
  std::vector<PatternBits> mapped(x.size(), 0);
  Vector out = Vector::Zero(x.size());
  for (PatternBits p = 1; p < static_cast<PatternBits>(x.size()); ++p) {
    mapped[p] = mapped[p & (p - 1)] | taxon_bit[std::countr_zero(p)];
    out[mapped[p]] = x[p];
  }
  return out;
}

void EpfEvaluator::clear() {
  have_cache_ = false;
  cached_events_.clear();
  checkpoints_.clear();
}

const Vector& EpfEvaluator::leaf_frequencies(const Phylogeny& tree, const RateParams& params, double kappa) {
  if (!(params.mu > 0.0) || !(params.beta >= 0.0) || !(params.lambda >= 0.0)) {
    throw Error("rates must satisfy mu > 0, beta >= 0, lambda >= 0");
  }
  // The solution is linear in lambda, so integrate once at lambda = 1.
  const Vector& unit = unit_frequencies(tree, {1.0, params.mu, params.beta}, kappa);
  if (params.lambda == 1.0) return unit;
  scaled_ = params.lambda * unit;
  return scaled_;
}

const Vector& EpfEvaluator::unit_frequencies(const Phylogeny& tree, const RateParams& params, double kappa) {
  const Timeline tl = build_timeline(tree);
  const double delta = tree.catastrophes().empty() ? 0.0 : catastrophe_duration(kappa, params.mu);
  const std::size_t n_events = tl.events.size();

  std::size_t reuse = 0;
  if (caching_ && have_cache_ && params.mu == cached_params_.mu &&
      params.beta == cached_params_.beta && kappa == cached_kappa_) {
    const std::size_t limit = std::min(n_events, cached_events_.size());
    while (reuse < limit && tl.events[reuse].same_effect(cached_events_[reuse])) ++reuse;
    if (reuse == n_events && n_events == cached_events_.size() && tl.end == cached_end_) {
      last_replayed_ = 0;
      if (tl.final_branches != cached_final_) {
        result_ = to_taxon_order(checkpoints_.back(), tl.final_branches, tree.leaf_count());
        cached_final_ = tl.final_branches;
      }
      return result_;
    }
  }

  checkpoints_.resize(n_events);
  Vector x;
  double t = tl.events[0].time;
  SliceShape shape;
  if (reuse == 0) {
    x = Vector::Zero(2);
    x[1] = params.lambda / params.mu;
    shape = SliceShape::full(1);
  } else {
    x = checkpoints_[reuse - 1];
    t = tl.events[reuse - 1].time;
    shape = tl.events[reuse - 1].after;
  }
  for (std::size_t k = reuse; k < n_events; ++k) {
    const auto& e = tl.events[k];
    if (e.time > t) solve_interval(x, t, e.time, params, shape, tol_, stats_, work_, scratch_);
    t = e.time;
    switch (e.kind) {
      case TimelineEvent::Kind::Branch:
        x = branch_expand(x, shape.width, e.position);
        break;
      case TimelineEvent::Kind::Catastrophe:
        apply_catastrophe(x, e.position, delta, params, shape);
        break;
      case TimelineEvent::Kind::Freeze:
        break;
    }
    shape = e.after;
    if (caching_) checkpoints_[k] = x;
  }
  solve_interval(x, t, tl.end, params, shape, tol_, stats_, work_, scratch_);
  last_replayed_ = static_cast<int>(n_events - reuse);

  result_ = to_taxon_order(x, tl.final_branches, tree.leaf_count());
  if (caching_) {
    // The final state rides along as an extra checkpoint.
    checkpoints_.push_back(std::move(x));
    cached_events_ = tl.events;
    cached_params_ = params;
    cached_kappa_ = kappa;
    cached_end_ = tl.end;
    cached_final_ = tl.final_branches;
    have_cache_ = true;
  }
  return result_;
}

Vector leaf_frequencies(const Phylogeny& tree, const RateParams& params, double kappa, const OdeTolerance& tol) {
  EpfEvaluator ev(tol, false);
  return ev.leaf_frequencies(tree, params, kappa);
}

// ---------------------------------------------------------------------------------------

namespace {

double xi_at(std::span<const double> xi, int k) { return xi.empty() ? 1.0 : xi[k]; }

int width_of(const Vector& x) { return std::countr_zero(static_cast<std::uint64_t>(x.size())); }

void check_xi(std::span<const double> xi, int L) {
  if (!xi.empty() && static_cast<int>(xi.size()) != L) throw Error("need one observation probability per taxon");
  for (double v : xi) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("observation probabilities must lie in [0, 1]");
  }
}

// P(sum of independent Bernoulli(probs[k]) lies in [lo, hi]).
double bernoulli_sum_between(const std::vector<double>& probs, int lo, int hi) {
  std::vector<double> dist(probs.size() + 1, 0.0);
  dist[0] = 1.0;
  int n = 0;
  for (double q : probs) {
    ++n;
    for (int k = n; k >= 1; --k) dist[k] = dist[k] * (1.0 - q) + dist[k - 1] * q;
    dist[0] *= 1.0 - q;
  }
  double total = 0.0;
  for (int k = std::max(lo, 0); k <= std::min(hi, n); ++k) total += dist[k];
  return total;
}

}  // namespace

double observed_frequency(const Vector& x, const ObservedPattern& q, std::span<const double> xi) {
  const int L = width_of(x);
  if (q.width != L) throw Error("observed pattern width does not match the frequency vector");
  check_xi(xi, L);
  double weight = 1.0;
  for (int k = 0; k < L; ++k) weight *= (q.missing >> k & 1) ? 1.0 - xi_at(xi, k) : xi_at(xi, k);
  if (weight == 0.0) return 0.0;
  double sum = 0.0;
  PatternBits sub = q.missing;
  while (true) {
    sum += x[q.ones | sub];  // x[0] is zero
    if (sub == 0) break;
    sub = (sub - 1) & q.missing;
  }
  return weight * sum;
}

double registered_total(const Vector& x, std::span<const double> xi, const RegistrationRule& rule) {
  const int L = width_of(x);
  check_xi(xi, L);
  const PatternBits all = static_cast<PatternBits>(x.size() - 1);
  int ones_lo = 0, ones_hi = L, nonzero_hi = L;
  PatternBits forced = 0;  // taxa that must not be observed absent
  for (const auto& part : rule.parts()) {
    switch (part.kind) {
      case RegistrationRule::Kind::AbsentIn:
        if (part.value >= L) throw Error("registration rule names a taxon beyond the data");
        forced |= PatternBits{1} << part.value;
        break;
      case RegistrationRule::Kind::AtMostOnes: ones_lo = std::max(ones_lo, part.value + 1); break;
      case RegistrationRule::Kind::AtLeastOnes: ones_hi = std::min(ones_hi, part.value - 1); break;
      case RegistrationRule::Kind::AtLeastNonzero: nonzero_hi = std::min(nonzero_hi, part.value - 1); break;
    }
  }

  // Product of (1 - xi) over the taxa of each pattern, built from the lowest set bit.
  std::vector<double> all_missing(x.size(), 1.0);
  for (PatternBits p = 1; p <= all; ++p) {
    all_missing[p] = all_missing[p & (p - 1)] * (1.0 - xi_at(xi, std::countr_zero(p)));
  }

  std::vector<double> probs;
  double total = 0.0;
  for (PatternBits p = 1; p <= all; ++p) {
    if (x[p] == 0.0) continue;
    const int s = std::popcount(p);
    // Ones: each taxon in p is observed present with probability xi.
    double a;
    if (ones_lo > ones_hi) {
      a = 0.0;
    } else if (ones_lo <= 0 && ones_hi >= s) {
      a = 1.0;
    } else if (ones_lo == 1 && ones_hi >= s) {
      a = 1.0 - all_missing[p];
    } else {
      probs.clear();
      for (PatternBits r = p; r; r &= r - 1) probs.push_back(xi_at(xi, std::countr_zero(r)));
      a = bernoulli_sum_between(probs, ones_lo, ones_hi);
    }
    if (a == 0.0) continue;
    // Nonzero entries: all of p plus the unknown entries among the other taxa.
    const PatternBits forced_out = forced & ~p;
    double b = all_missing[forced_out];
    const int cap = nonzero_hi - s - std::popcount(forced_out);
    const PatternBits others = all & ~p & ~forced;
    if (cap < 0) {
      b = 0.0;
    } else if (cap < std::popcount(others)) {
      probs.clear();
      for (PatternBits r = others; r; r &= r - 1) probs.push_back(1.0 - xi_at(xi, std::countr_zero(r)));
      b *= bernoulli_sum_between(probs, 0, cap);
    }
    total += x[p] * a * b;
  }
  return total;
}

ObservedFrequencies registered_frequencies(const Vector& x, std::span<const double> xi, const RegistrationRule& rule) {
  const int L = width_of(x);
  if (L > 14) throw Error("enumerating observable patterns is limited to 14 taxa");
  check_xi(xi, L);
  ObservedFrequencies out;
  std::size_t codes = 1;
  for (int k = 0; k < L; ++k) codes *= 3;
  for (std::size_t code = 0; code < codes; ++code) {
    ObservedPattern q;
    q.width = L;
    std::size_t c = code;
    for (int k = 0; k < L; ++k, c /= 3) {
      if (c % 3 == 1) q.ones |= PatternBits{1} << k;
      if (c % 3 == 2) q.missing |= PatternBits{1} << k;
    }
    if ((q.ones | q.missing) == 0 || !rule.admits(q)) continue;
    const double v = observed_frequency(x, q, xi);
    out.patterns.push_back(q);
    out.values.push_back(v);
    out.registered_total += v;
  }
  return out;
}

ObservedFrequencies expected_frequencies(const Phylogeny& tree, const RateParams& params, double kappa,
                                         std::span<const double> xi, const RegistrationRule& rule,
                                         const OdeTolerance& tol) {
  return registered_frequencies(leaf_frequencies(tree, params, kappa, tol), xi, rule);
}

}  // namespace sdlt
