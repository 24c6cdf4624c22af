#ifndef SDLT_EPF_HPP
#define SDLT_EPF_HPP

#include <bit>
#include <cmath>
#include <span>
#include <vector>

#include "sdlt/ode.hpp"
#include "sdlt/patterns.hpp"
#include "sdlt/phylo.hpp"
#include "sdlt/types.hpp"

namespace sdlt {

struct RateParams {
  double lambda = 1.0;
  double mu = 5e-4;
  double beta = 0.0;
};

// delta = -log(1 - kappa) / mu: the time a catastrophe advances its branch.
inline double catastrophe_duration(double kappa, double mu) {
  if (!(kappa >= 0.0 && kappa < 1.0)) throw Error("catastrophe severity must lie in [0, 1)");
  if (!(mu > 0.0)) throw Error("death rate must be positive");
  return -std::log1p(-kappa) / mu;
}

// Width of a slice and which of its lineages still evolve.
struct SliceShape {
  int width = 1;
  PatternBits extant = 1;

  static SliceShape full(int width) { return {width, (PatternBits{1} << width) - 1}; }
  int extant_count() const { return std::popcount(extant); }
  bool all_extant() const { return extant == (PatternBits{1} << width) - 1; }
  Eigen::Index size() const { return Eigen::Index{1} << width; }
};

namespace detail {

template <typename Scalar>
inline Scalar outflow_rate(int s, int lineages, Scalar mu, Scalar beta) {
  return -Scalar(s) * (mu + beta * (Scalar(1) - Scalar(s) / Scalar(lineages)));
}

// Calls body(p0, p1) for every pair differing only at `bit`, p0 without it.
template <typename Body>
inline void for_each_pair(Eigen::Index size, PatternBits bit, Body&& body) {
  const Eigen::Index stride = bit;
  for (Eigen::Index block = 0; block < size; block += 2 * stride) {
    for (Eigen::Index k = block; k < block + stride; ++k) body(k, k + stride);
  }
}

}  // namespace detail

// out = A x + b for the trait process on a slice.  On slices with extinct lineages only
// the extant entries communicate and weights and lineage counts are taken over them.
template <typename Scalar>
void generator_apply(const VectorT<Scalar>& x, VectorT<Scalar>& out, const RateParams& params,
                     const SliceShape& shape, VectorT<Scalar>& scratch) {
  const Eigen::Index n = shape.size();
  if (x.size() != n) throw Error("vector does not match the slice width");
  out.resize(n);
  scratch.resize(n);
  const Scalar mu = static_cast<Scalar>(params.mu);
  const Scalar beta = static_cast<Scalar>(params.beta);
  const Scalar lambda = static_cast<Scalar>(params.lambda);
  const int lineages = shape.extant_count();
  const PatternBits extant = shape.extant;
  const bool full = shape.all_extant();

  for (Eigen::Index p = 0; p < n; ++p) {
    const int s = std::popcount(full ? static_cast<PatternBits>(p) : static_cast<PatternBits>(p) & extant);
    out[p] = detail::outflow_rate(s, lineages, mu, beta) * x[p];
    scratch[p] = beta * Scalar(s) / Scalar(lineages) * x[p];
  }
  for (int j = 0; j < shape.width; ++j) {
    const PatternBits bit = PatternBits{1} << j;
    if (!(extant & bit)) continue;
    detail::for_each_pair(n, bit, [&](Eigen::Index p0, Eigen::Index p1) {
      out[p0] += mu * x[p1];
      out[p1] += scratch[p0];
    });
    out[bit] += lambda;
  }
  out[0] = Scalar(0);
}

template <typename Scalar>
void generator_apply(const VectorT<Scalar>& x, VectorT<Scalar>& out, const RateParams& params,
                     const SliceShape& shape) {
  VectorT<Scalar> scratch;
  generator_apply(x, out, params, shape, scratch);
}

// Advances the lineage at `position` (1-based) by delta in isolation: births and deaths on
// that lineage and transfers into it.
template <typename Scalar>
void apply_catastrophe(VectorT<Scalar>& x, int position, Scalar delta, const RateParams& params,
                       const SliceShape& shape) {
  using std::exp;
  using std::expm1;
  if (x.size() != shape.size()) throw Error("vector does not match the slice width");
  if (position < 1 || position > shape.width) throw Error("catastrophe position outside the slice");
  const PatternBits bit = PatternBits{1} << (position - 1);
  if (!(shape.extant & bit)) throw Error("catastrophe on an extinct lineage");
  if (delta == Scalar(0)) return;
  const Scalar mu = static_cast<Scalar>(params.mu);
  const Scalar beta = static_cast<Scalar>(params.beta);
  const Scalar lambda = static_cast<Scalar>(params.lambda);
  const int lineages = shape.extant_count();
  const PatternBits extant = shape.extant;

  const Scalar survive = exp(-mu * delta);
  x[bit] = survive * x[bit] - expm1(-mu * delta) * lambda / mu;
  detail::for_each_pair(shape.size(), bit, [&](Eigen::Index q, Eigen::Index r) {
    if (q == 0) return;
    const int s = std::popcount(static_cast<PatternBits>(q) & extant);
    const Scalar a = beta * Scalar(s) / Scalar(lineages);
    const Scalar rate = a + mu;
    // exp(M delta) = I + (1 - e^{-(a+mu) delta}) / (a+mu) * M for M = [[-a, mu], [a, -mu]].
    const Scalar f = -expm1(-rate * delta) / rate;
    const Scalar flow = f * (mu * x[r] - a * x[q]);
    x[q] += flow;
    x[r] -= flow;
  });
}

// x(t_end) from x(t_start) on a fixed slice.
template <typename Scalar>
void solve_interval(VectorT<Scalar>& x, Scalar t_start, Scalar t_end, const RateParams& params,
                    const SliceShape& shape, const OdeTolerance& tol, OdeStats& stats,
                    OdeWorkspace<Scalar>& work, VectorT<Scalar>& scratch) {
  if (x.size() != shape.size()) throw Error("vector does not match the slice width");
  auto rhs = [&](const VectorT<Scalar>& v, VectorT<Scalar>& out) {
    generator_apply(v, out, params, shape, scratch);
  };
  dopri5<Scalar>(rhs, x, t_start, t_end, tol, stats, work);
}

template <typename Scalar>
void solve_interval(VectorT<Scalar>& x, Scalar t_start, Scalar t_end, const RateParams& params,
                    const SliceShape& shape, const OdeTolerance& tol = {}) {
  OdeStats stats;
  OdeWorkspace<Scalar> work;
  VectorT<Scalar> scratch;
  solve_interval(x, t_start, t_end, params, shape, tol, stats, work, scratch);
}

// ---------------------------------------------------------------------------------------
// Event timeline between the root and the final observation time.

struct TimelineEvent {
  enum class Kind { Branch, Catastrophe, Freeze };
  double time = 0.0;
  Kind kind = Kind::Branch;
  int position = 1;  // 1-based position in the tuple just before the event
  int node = 0;      // splitting node, catastrophe branch or frozen leaf
  SliceShape after;  // slice in force until the next event

  // Everything the numerical result depends on, node labels excluded.
  bool same_effect(const TimelineEvent& o) const {
    return time == o.time && kind == o.kind && position == o.position && after.width == o.after.width &&
           after.extant == o.after.extant;
  }
};

struct Timeline {
  double end = 0.0;
  std::vector<TimelineEvent> events;  // events[0] is the root split
  std::vector<int> final_branches;    // k^(end), leaf labels
};

// Merges branchings, catastrophes and leaf freezes in time order.  A catastrophe that
// coincides with a branching time is rejected.
Timeline build_timeline(const Phylogeny& tree);

// Permutes a vector over the final tuple into taxon order (bit k for taxon k).
Vector to_taxon_order(const Vector& x, const std::vector<int>& final_branches, int leaf_count);

// Expected frequencies of the binary patterns at the final time, in taxon order.  Caches
// the state after every event and restarts from the first event that differs from the
// previous call.
class EpfEvaluator {
 public:
  explicit EpfEvaluator(OdeTolerance tol = {}, bool caching = true) : tol_(tol), caching_(caching) {}

  const Vector& leaf_frequencies(const Phylogeny& tree, const RateParams& params, double kappa);

  const OdeStats& stats() const { return stats_; }
  void reset_stats() { stats_ = {}; }
  void set_caching(bool on) {
    caching_ = on;
    clear();
  }
  void clear();
  const OdeTolerance& tolerance() const { return tol_; }
  // Events replayed (not restored from the cache) by the most recent call.
  int last_replayed() const { return last_replayed_; }

 private:
  const Vector& unit_frequencies(const Phylogeny& tree, const RateParams& params, double kappa);

  OdeTolerance tol_;
  bool caching_;
  OdeStats stats_;
  OdeWorkspace<double> work_;
  Vector scratch_;

  bool have_cache_ = false;
  RateParams cached_params_{};
  double cached_kappa_ = 0.0;
  std::vector<TimelineEvent> cached_events_;
  std::vector<Vector> checkpoints_;  // state just after each event
  double cached_end_ = 0.0;
  std::vector<int> cached_final_;
  Vector result_;
  Vector scaled_;
  int last_replayed_ = 0;
};

// One-shot convenience wrapper.
Vector leaf_frequencies(const Phylogeny& tree, const RateParams& params, double kappa,
                        const OdeTolerance& tol = {});

// ---------------------------------------------------------------------------------------
// Missing data and registration over the observable patterns.

// x_q = w(q) * sum over u(q) of x_p, with x in taxon order.
double observed_frequency(const Vector& x, const ObservedPattern& q, std::span<const double> xi);

// Sum of x_q over the registered observable patterns R(Q).
double registered_total(const Vector& x, std::span<const double> xi, const RegistrationRule& rule);

struct ObservedFrequencies {
  std::vector<ObservedPattern> patterns;
  std::vector<double> values;
  double registered_total = 0.0;
};

// x_q for every q in R(Q).  Enumerates 3^L patterns, so L is capped at 14.
ObservedFrequencies registered_frequencies(const Vector& x, std::span<const double> xi,
                                           const RegistrationRule& rule);

// The full pipeline: leaf frequencies, then missing data and registration over R(Q).
ObservedFrequencies expected_frequencies(const Phylogeny& tree, const RateParams& params, double kappa,
                                         std::span<const double> xi, const RegistrationRule& rule,
                                         const OdeTolerance& tol = {});

}  // namespace sdlt

#endif  // SDLT_EPF_HPP
