#include "sdlt/analyze.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>
#include <unsupported/Eigen/FFT>

namespace sdlt {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

double mean_of(std::span<const double> x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

}  // namespace

std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  max_lag = std::min<int>(max_lag, static_cast<int>(n) - 1);
  const double m = mean_of(x);
  std::size_t size = 1;
  while (size < 2 * n) size <<= 1;
  std::vector<double> padded(size, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - m;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> acov;
  fft.inv(acov, freq);
  std::vector<double> out(max_lag + 1, 0.0);
  if (!(acov[0] > 0.0)) {
    out[0] = 1.0;
    return out;
  }
  for (int k = 0; k <= max_lag; ++k) out[k] = acov[k] / acov[0];
  return out;
}

EssEstimate effective_sample_size(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 10) throw Error("effective sample size needs at least 10 values");
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*lo == *hi) return {static_cast<double>(n), true};
  const auto rho = autocorrelation(x, static_cast<int>(n) - 1);
  double tau = -1.0;
  double previous = kPosInf;
  for (std::size_t k = 0; 2 * k + 1 < rho.size(); ++k) {
    double gamma = rho[2 * k] + rho[2 * k + 1];
    if (!(gamma > 0.0)) break;
    gamma = std::min(gamma, previous);
    previous = gamma;
    tau += 2.0 * gamma;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(n)));  // caps ESS at N log10 N
  return {static_cast<double>(n) / tau, false};
}

double kolmogorov_pvalue(double statistic, double n) {
  const double s = std::sqrt(n);
  const double lambda = (s + 0.12 + 0.11 / s) * statistic;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-18) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

TestResult ks_test(std::span<const double> sample, const std::function<double(double)>& cdf) {
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, kolmogorov_pvalue(d, n)};
}

TestResult ks_test_discrete(std::span<const long> sample, const std::function<double(long)>& cdf) {
  std::vector<long> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  if (x.empty()) return {};
  double d = 0.0;
  std::size_t below = 0;
  for (long k = std::min(0L, x.front()); k <= x.back(); ++k) {
    while (below < x.size() && x[below] <= k) ++below;
    d = std::max(d, std::abs(static_cast<double>(below) / n - cdf(k)));
  }
  d = std::max(d, 1.0 - cdf(x.back()));
  return {d, kolmogorov_pvalue(d, n)};
}

double chi_square_pvalue(double statistic, int dof) {
  if (dof <= 0) throw Error("chi-square test needs positive degrees of freedom");
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
}

TestResult chi_square_test(std::span<const double> observed, std::span<const double> expected, int dof) {
  if (observed.size() != expected.size()) throw Error("observed and expected differ in length");
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double d = observed[i] - expected[i];
    stat += d * d / expected[i];
  }
  return {stat, chi_square_pvalue(stat, dof)};
}

double poisson_cdf(long k, double mean) {
  if (k < 0) return 0.0;
  if (mean <= 0.0) return 1.0;
  return boost::math::gamma_q(static_cast<double>(k) + 1.0, mean);
}

// ---------------------------------------------------------------------------------------

std::string topology_key(const Phylogeny& tree) {
  const auto masks = tree.clade_masks();
  std::vector<CladeMask> internal(masks.begin() + 1, masks.begin() + tree.leaf_count());
  std::sort(internal.begin(), internal.end());
  std::string key;
  for (CladeMask m : internal) key += std::to_string(m) + ',';
  return key;
}

std::map<std::string, double> topology_frequencies(std::span<const Phylogeny> trees) {
  std::map<std::string, double> out;
  for (const auto& t : trees) out[topology_key(t)] += 1.0;
  for (auto& [k, v] : out) v /= static_cast<double>(trees.size());
  return out;
}

ConsensusTree consensus_tree(std::span<const Phylogeny> trees, double threshold) {
  if (trees.empty()) throw Error("consensus needs at least one tree");
  const auto& taxa = trees.front().taxa();
  const int L = static_cast<int>(taxa.size());
  struct Tally {
    double count = 0, time = 0, cats = 0;
  };
  std::map<CladeMask, Tally> tally;
  std::vector<Tally> leaf(L);
  for (const auto& given : trees) {
    Phylogeny reordered;
    if (given.taxa() != taxa) {
      try {
        reordered = with_taxon_order(given, taxa);
      } catch (const Error&) {
        throw Error("trees do not share the same taxa");
      }
    }
    const Phylogeny& t = given.taxa() == taxa ? given : reordered;
    const auto masks = t.clade_masks();
    std::vector<int> on(t.node_count(), 0);
    for (const auto& c : t.catastrophes()) ++on[c.branch];
    for (int i = 1; i < L; ++i) {
      auto& e = tally[masks[i]];
      e.count += 1;
      e.time += t.time(i);
      e.cats += on[i];
    }
    for (int k = 0; k < L; ++k) {
      leaf[k].count += 1;
      leaf[k].time += t.time(L + k);
      leaf[k].cats += on[L + k];
    }
  }
  const double n = static_cast<double>(trees.size());
  ConsensusTree out;
  out.taxa = taxa;
  for (const auto& [mask, e] : tally) {
    if (e.count / n > threshold) {
      const double mc = e.cats / e.count;
      out.clades.push_back({mask, e.count / n, e.time / e.count, mc, static_cast<int>(std::lround(mc))});
    }
  }
  std::sort(out.clades.begin(), out.clades.end(), [](const ConsensusClade& a, const ConsensusClade& b) {
    const int pa = std::popcount(a.mask), pb = std::popcount(b.mask);
    return pa != pb ? pa > pb : a.mask < b.mask;
  });
  for (int k = 0; k < L; ++k) {
    const double mc = leaf[k].cats / n;
    out.leaves.push_back({CladeMask{1} << k, 1.0, leaf[k].time / n, mc, static_cast<int>(std::lround(mc))});
  }
  return out;
}

bool ConsensusTree::contains(CladeMask m) const {
  return std::any_of(clades.begin(), clades.end(), [m](const ConsensusClade& c) { return c.mask == m; });
}

std::string ConsensusTree::to_text() const {
  if (clades.empty()) return ";";
  auto quote = [](const std::string& name) {
    if (name.find_first_of("(),:;[]' \t") == std::string::npos && !name.empty()) return name;
    std::string q = "'";
    for (char ch : name) q += ch == '\'' ? std::string("''") : std::string(1, ch);
    return q + "'";
  };
  std::function<std::string(std::size_t)> emit = [&](std::size_t idx) {
    const auto& c = clades[idx];
    std::vector<std::pair<CladeMask, std::string>> parts;
    CladeMask covered = 0;
    for (std::size_t j = idx + 1; j < clades.size(); ++j) {
      const CladeMask m = clades[j].mask;
      if ((m & ~c.mask) || (m & covered)) continue;
      covered |= m;
      parts.emplace_back(m, emit(j));
    }
    for (std::size_t k = 0; k < taxa.size(); ++k) {
      const CladeMask bit = CladeMask{1} << k;
      if ((c.mask & bit) && !(covered & bit)) {
        const auto& l = leaves[k];
        parts.emplace_back(bit, quote(taxa[k]) + "[&time=" + fmt(l.mean_time) + ",cat=" + std::to_string(l.catastrophes) + "]");
      }
    }
    std::sort(parts.begin(), parts.end());
    std::string s = "(";
    for (std::size_t p = 0; p < parts.size(); ++p) s += (p ? "," : "") + parts[p].second;
    return s + ")[&support=" + fmt(c.support) + ",time=" + fmt(c.mean_time) + ",cat=" + std::to_string(c.catastrophes) + "]";
  };
  return emit(0) + ";";
}

std::vector<Phylogeny> trees_of(const SampleLog& log) {
  std::vector<Phylogeny> out;
  out.reserve(log.samples.size());
  for (const auto& s : log.samples) out.push_back(s.state.tree);
  return out;
}

std::vector<double> mrca_times(const SampleLog& log, const std::vector<std::string>& leaves) {
  std::vector<double> out;
  out.reserve(log.samples.size());
  for (const auto& s : log.samples) {
    const auto& tree = s.state.tree;
    CladeMask want = 0;
    for (const auto& name : leaves) {
      const auto leaf = tree.leaf_by_name(name);
      if (!leaf) throw Error("unknown taxon '" + name + "'");
      want |= CladeMask{1} << (*leaf - tree.leaf_count());
    }
    const auto masks = tree.clade_masks();
    int best = -1;
    for (int i = 1; i < tree.node_count(); ++i) {
      if ((masks[i] & want) == want && (best < 0 || std::popcount(masks[i]) < std::popcount(masks[best]))) best = i;
    }
    out.push_back(tree.time(best));
  }
  return out;
}

// ---------------------------------------------------------------------------------------

BayesFactorReport savage_dickey(std::span<const double> prior_values, std::span<const double> posterior_values,
                                const TimeWindow& window, std::string label) {
  if (prior_values.empty() || posterior_values.empty()) throw Error("Bayes factor needs prior and posterior samples");
  auto proportion = [&](std::span<const double> v) {
    const auto in = std::count_if(v.begin(), v.end(), [&](double t) { return window.contains(t); });
    return static_cast<double>(in) / static_cast<double>(v.size());
  };
  BayesFactorReport r;
  r.label = std::move(label);
  r.prior_proportion = proportion(prior_values);
  r.posterior_proportion = proportion(posterior_values);
  if (r.posterior_proportion == 0.0) {
    r.lower_bound = true;
    r.bayes_factor = r.prior_proportion * static_cast<double>(posterior_values.size());
  } else {
    r.bayes_factor = r.prior_proportion / r.posterior_proportion;
  }
  return r;
}

PredictiveScore predictive_score(std::span<const double> ll) {
  PredictiveScore out;
  out.samples = static_cast<int>(ll.size());
  if (ll.empty()) throw Error("predictive score needs posterior samples");
  const double top = *std::max_element(ll.begin(), ll.end());
  if (!std::isfinite(top)) {
    out.log_score = top;
    return out;
  }
  std::vector<double> w(ll.size());
  for (std::size_t i = 0; i < ll.size(); ++i) w[i] = std::exp(ll[i] - top);
  const double m = mean_of(w);
  out.log_score = top + std::log(m);
  const int batches = static_cast<int>(std::min<std::size_t>(20, w.size()));
  if (batches >= 2) {
    const std::size_t per = w.size() / static_cast<std::size_t>(batches);
    std::vector<double> bm;
    for (int b = 0; b < batches; ++b) {
      bm.push_back(mean_of(std::span<const double>(w).subspan(b * per, per)));
    }
    const double bmean = mean_of(bm);
    double var = 0.0;
    for (double v : bm) var += (v - bmean) * (v - bmean);
    var /= static_cast<double>(batches - 1);
    out.standard_error = std::sqrt(var / batches) / m;
  }
  return out;
}

PredictiveScore predictive_score(const SampleLog& train, const PatternCounts& test, const RegistrationRule& rule,
                                 const OdeTolerance& tol) {
  PosteriorEvaluator ev(test, rule, ConstraintSet(), PriorConfig(), tol);
  std::vector<double> ll;
  ll.reserve(train.samples.size());
  for (const auto& s : train.samples) ll.push_back(ev.loglik_of(test, s.state.tree, s.state.params));
  return predictive_score(ll);
}

std::pair<TraitMatrix, TraitMatrix> split_traits(const TraitMatrix& m, const RegistrationRule& rule,
                                                 std::uint64_t seed) {
  std::vector<int> keep;
  for (int j = 0; j < m.trait_count(); ++j) {
    const auto q = m.column(j);
    if (q.ones == 0 && q.missing == 0) continue;
    if (rule.admits(q)) keep.push_back(j);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(keep.begin(), keep.end(), rng);
  const std::size_t half = keep.size() / 2;
  std::sort(keep.begin(), keep.begin() + static_cast<std::ptrdiff_t>(half));
  std::sort(keep.begin() + static_cast<std::ptrdiff_t>(half), keep.end());
  auto take = [&](std::size_t from, std::size_t to) {
    TraitMatrix out(m.taxa(), {});
    for (std::size_t i = from; i < to; ++i) {
      std::vector<Cell> col(m.taxon_count());
      for (int k = 0; k < m.taxon_count(); ++k) col[k] = m.at(k, keep[i]);
      out.add_trait(m.traits()[keep[i]], col);
    }
    return out;
  };
  return {take(0, half), take(half, keep.size())};
}

// ---------------------------------------------------------------------------------------

ValidationReport validate_distribution(std::span<const PatternCounts> replicates,
                                       const std::vector<ObservedPattern>& patterns,
                                       const std::vector<double>& expected, double familywise) {
  if (patterns.size() != expected.size()) throw Error("one expected value per pattern is required");
  ValidationReport r;
  r.familywise = familywise;
  const double level = familywise / static_cast<double>(std::max<std::size_t>(1, patterns.size()));
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    std::vector<long> n;
    n.reserve(replicates.size());
    for (const auto& rep : replicates) n.push_back(rep.count(patterns[i]));
    PatternCheck c;
    c.pattern = patterns[i];
    c.expected = expected[i];
    std::vector<double> v(n.begin(), n.end());
    c.mean = mean_of(v);
    double var = 0.0;
    for (double x : v) var += (x - c.mean) * (x - c.mean);
    c.variance = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
    const double mu = expected[i];
    const auto t = ks_test_discrete(n, [mu](long k) { return poisson_cdf(k, mu); });
    c.ks = t.statistic;
    c.p_value = t.p_value;
    r.max_discrepancy = std::max(r.max_discrepancy, c.ks);
    if (c.p_value < level) ++r.failures;
    r.patterns.push_back(c);
  }
  return r;
}

std::string ValidationReport::to_text() const {
  std::ostringstream os;
  os << "pattern\texpected\tmean\tvariance\tks\tp_value\n";
  for (const auto& c : patterns) {
    os << c.pattern.to_string() << '\t' << fmt(c.expected) << '\t' << fmt(c.mean) << '\t' << fmt(c.variance) << '\t'
       << fmt(c.ks) << '\t' << fmt(c.p_value) << '\n';
  }
  os << "# patterns=" << patterns.size() << " max_discrepancy=" << fmt(max_discrepancy) << " failures=" << failures
     << " familywise=" << fmt(familywise) << '\n';
  return os.str();
}

std::string ValidationReport::cdf_table(std::span<const PatternCounts> replicates) const {
  std::ostringstream os;
  os << "pattern\tk\tempirical\texact\n";
  const double n = static_cast<double>(replicates.size());
  for (const auto& c : patterns) {
    std::vector<long> v;
    for (const auto& rep : replicates) v.push_back(rep.count(c.pattern));
    std::sort(v.begin(), v.end());
    if (v.empty()) continue;
    std::size_t below = 0;
    for (long k = 0; k <= v.back(); ++k) {
      while (below < v.size() && v[below] <= k) ++below;
      os << c.pattern.to_string() << '\t' << k << '\t' << fmt(static_cast<double>(below) / n) << '\t'
         << fmt(poisson_cdf(k, c.expected)) << '\n';
    }
  }
  return os.str();
}

}  // namespace sdlt
