#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdlt/analyze.hpp"
#include "sdlt/likelihood.hpp"
#include "sdlt/mcmc.hpp"
#include "sdlt/parallel.hpp"
#include "sdlt/simulate.hpp"

#ifndef SDLT_VERSION
#define SDLT_VERSION "unknown"
#endif
#ifndef SDLT_BUILD_TYPE
#define SDLT_BUILD_TYPE "unknown"
#endif

using namespace sdlt;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

int default_threads() {
  if (const char* env = std::getenv("SDLT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("SDLT_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<std::string> split(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::vector<double> numbers(const std::string& text) {
  std::vector<double> out;
  for (const auto& s : split(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size()) throw UsageError("'" + s + "' is not a number");
    out.push_back(v);
  }
  return out;
}

// Empty: fully observed.  One value: every taxon.  Otherwise one value per taxon.
std::vector<double> xi_values(const std::string& text, int taxa) {
  if (text.empty()) return {};
  auto v = numbers(text);
  if (v.size() == 1) v.assign(static_cast<std::size_t>(taxa), v[0]);
  if (static_cast<int>(v.size()) != taxa) {
    throw UsageError("--xi needs 1 or " + std::to_string(taxa) + " values, got " + std::to_string(v.size()));
  }
  for (double x : v) {
    if (!(x > 0.0 && x <= 1.0)) throw UsageError("xi values must lie in (0, 1]");
  }
  return v;
}

RegistrationRule rule_of(const std::string& text) {
  try {
    return RegistrationRule::parse(text);
  } catch (const Error& e) {
    throw UsageError(std::string("--registration: ") + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> key_values(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto l = s.find_first_not_of(" \t\r");
      const auto r = s.find_last_not_of(" \t\r");
      return l == std::string::npos ? std::string{} : s.substr(l, r - l + 1);
    };
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

// Options missing from the command line take their value from the file.
void fill_from_config(CLI::App& sub, const std::string& path) {
  for (auto [key, value] : key_values(path)) {
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw UsageError(path + ": unknown key '" + key + "' for " + sub.get_name());
    }
    if (opt->count() > 0) continue;
    opt->clear();
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "on" || value == "1") opt->add_result("true");
      else if (value != "false" && value != "off" && value != "0") throw UsageError(path + ": " + key + " expects on or off");
    } else {
      opt->add_result(value);
    }
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError(path + ": " + key + ": " + e.what());
    }
  }
}

class Manifest {
 public:
  Manifest(std::string command, std::string path) : path_(std::move(path)) {
    j_["tool"] = "sdlt";
    j_["version"] = SDLT_VERSION;
    j_["command"] = std::move(command);
  }

  void input(const std::string& role, const std::string& path) {
    j_["inputs"][role] = {{"path", path}, {"fnv1a", hex(fnv1a(read_file(path)))}};
  }
  void output(const std::string& path) { j_["outputs"].push_back(path); }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void config(const std::string& key, const std::string& value) { config_[key] = value; }

  // Resolved values of every option of the subcommand.
  void options(const CLI::App& sub) {
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config") continue;
      std::string value;
      if (opt->get_expected_min() == 0) {
        value = opt->count() ? "true" : "false";
      } else if (opt->count()) {
        for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      } else {
        value = opt->get_default_str();
      }
      config_[name] = value;
    }
  }

  void write() {
    std::string canon;
    for (const auto& [k, v] : config_) canon += k + "=" + v + "\n";
    j_["config"] = config_;
    j_["config_hash"] = hex(fnv1a(j_["command"].get<std::string>() + "\n" + canon));
    write_file(path_, j_.dump(2) + "\n");
  }

 private:
  std::string path_;
  nlohmann::ordered_json j_;
  std::map<std::string, std::string> config_;
};

TraitMatrix load_matrix(const std::string& path) { return TraitMatrix::parse(read_file(path)); }

std::string missingness_report(const TraitMatrix& m) {
  std::ostringstream os;
  os << "# taxon\tpresent\tmissing\tmissing_fraction\n";
  for (int k = 0; k < m.taxon_count(); ++k) {
    const int miss = m.missing_count(k);
    os << "# " << m.taxa()[k] << "\t" << m.present_count(k) << "\t" << miss << "\t"
       << num(m.trait_count() ? static_cast<double>(miss) / m.trait_count() : 0.0) << "\n";
  }
  return os.str();
}

SampleLog load_log(const std::string& prefix, double burn_fraction) {
  SampleLog log = SampleLog::parse(read_file(prefix + ".log.tsv"), read_file(prefix + ".trees"));
  if (burn_fraction < 0.0 || burn_fraction >= 1.0) throw UsageError("--burn-in must lie in [0, 1)");
  const auto drop = static_cast<std::ptrdiff_t>(burn_fraction * static_cast<double>(log.samples.size()));
  log.samples.erase(log.samples.begin(), log.samples.begin() + drop);
  if (log.samples.empty()) throw Error("no samples left in '" + prefix + "' after burn-in");
  return log;
}

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Summary {
  double mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0, ess = 0.0;
};

Summary summarise(const std::vector<double>& v) {
  Summary s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(s.sd / static_cast<double>(std::max<std::size_t>(v.size() - 1, 1)));
  s.lo = quantile(v, 0.025);
  s.hi = quantile(v, 0.975);
  s.ess = v.size() >= 10 ? effective_sample_size(v).ess : static_cast<double>(v.size());
  return s;
}

ValidationReport run_distribution_check(const SimConfig& sim, const RegistrationRule& rule, int replicates,
                                        double familywise, int threads, std::vector<PatternCounts>* keep = nullptr) {
  const auto exact = expected_frequencies(sim.tree, sim.rates, sim.kappa, sim.xi, rule);
  std::vector<ObservedPattern> patterns;
  std::vector<double> means;
  for (std::size_t i = 0; i < exact.patterns.size(); ++i) {
    if (exact.values[i] <= 0.0) continue;
    patterns.push_back(exact.patterns[i]);
    means.push_back(exact.values[i]);
  }
  auto reps = replicate_counts(sim, replicates, rule, threads);
  auto report = validate_distribution(reps, patterns, means, familywise);
  if (keep) *keep = std::move(reps);
  return report;
}

// ---------------------------------------------------------------------------------------

struct Global {
  int threads = 0;
  std::string manifest;
};

struct ModelOptions {
  double lambda = 0.1;
  double mu = 5e-4;
  double beta = 5e-4;
  double kappa = 0.2212;
  std::string xi;

  void add(CLI::App* sub, bool lambda_optional = false) {
    if (!lambda_optional) sub->add_option("--lambda", lambda, "Trait birth rate")->check(CLI::PositiveNumber);
    sub->add_option("--mu", mu, "Trait death rate")->check(CLI::PositiveNumber);
    sub->add_option("--beta", beta, "Lateral transfer rate")->check(CLI::NonNegativeNumber);
    sub->add_option("--kappa", kappa, "Catastrophe severity")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--xi", xi, "Observation probabilities: one value, or one per taxon in tree order");
  }
};

std::string manifest_path(const Global& g, const std::string& prefix) {
  if (!g.manifest.empty()) return g.manifest;
  return prefix.empty() ? "sdlt.manifest.json" : prefix + ".manifest.json";
}

// ---------------------------------------------------------------------------------------

struct SimulateCmd {
  std::string tree, out, config;
  ModelOptions model;
  int replicates = 1;
  std::uint64_t seed = 1;
  bool history = false, complete = false, strip = false;
  double strip_after = std::numeric_limits<double>::quiet_NaN();

  CLI::App* add(CLI::App& app) {
    auto* sub = app.add_subcommand("simulate", "Forward-simulate trait data on a dated tree");
    sub->add_option("--config", config, "key=value defaults for this command");
    sub->add_option("--tree", tree, "Tree file")->required();
    model.add(sub);
    sub->add_option("--replicates", replicates, "Number of data sets")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", out, "Output prefix")->required();
    sub->add_flag("--history", history, "Write the event log of each replicate");
    sub->add_flag("--complete", complete, "Also write the matrix before missing data");
    sub->add_flag("--strip", strip, "Also write the matrix with every transferred copy removed");
    sub->add_option("--strip-after", strip_after, "Also write the matrix with copies transferred after this time removed");
    return sub;
  }

  int run(const CLI::App& sub, const Global& g) {
    const Phylogeny t = parse_tree(read_file(tree));
    SimConfig base;
    base.tree = t;
    base.rates = {model.lambda, model.mu, model.beta};
    base.kappa = model.kappa;
    base.xi = xi_values(model.xi, t.leaf_count());
    base.keep_events = history;

    Manifest man("simulate", manifest_path(g, out));
    man.input("tree", tree);
    man.seed(seed);
    man.options(sub);

    std::vector<std::string> lines(static_cast<std::size_t>(replicates));
    std::vector<std::vector<std::string>> written(static_cast<std::size_t>(replicates));
    parallel_for(replicates, g.threads, [&](int i) {
      SimConfig c = base;
      c.seed = replicates == 1 ? seed : replicate_seed(seed, static_cast<std::uint64_t>(i));
      const SimResult r = gillespie_simulate(c);
      const std::string name = replicates == 1 ? out : out + "." + std::to_string(i);
      auto& files = written[static_cast<std::size_t>(i)];
      auto put = [&](const std::string& path, const std::string& text) {
        write_file(path, text);
        files.push_back(path);
      };
      put(name + ".tsv", r.observed.to_text());
      if (complete) put(name + ".complete.tsv", r.complete.to_text());
      if (strip) put(name + ".sd.tsv", strip_transfers(r).to_text());
      if (!std::isnan(strip_after)) put(name + ".recent.tsv", strip_transfers(r, strip_after).to_text());
      if (history) put(name + ".history.tsv", history_log(r));
      lines[static_cast<std::size_t>(i)] =
          std::to_string(i) + "\t" + std::to_string(r.observed.trait_count()) + "\t" + std::to_string(r.transfers);
    });
    std::cout << "replicate\ttraits\ttransfers\n";
    for (const auto& l : lines) std::cout << l << "\n";
    for (const auto& files : written) {
      for (const auto& f : files) man.output(f);
    }
    man.write();
    return 0;
  }
};

struct LikelihoodCmd {
  std::string tree, data, constraints, registration = "at_most_ones:0", out, config;
  ModelOptions model;
  double lambda = 0.0;
  double rtol = OdeTolerance{}.rtol, atol = OdeTolerance{}.atol;
  bool sd = false, observed_only = false;

  CLI::App* add(CLI::App& app) {
    auto* sub = app.add_subcommand("likelihood", "Expected pattern frequencies and log-likelihood");
    sub->add_option("--config", config, "key=value defaults for this command");
    sub->add_option("--tree", tree, "Tree file")->required();
    sub->add_option("--data", data, "Trait matrix")->required();
    model.add(sub, true);
    sub->add_option("--lambda", lambda, "Trait birth rate (default: maximum likelihood value)");
    sub->add_option("--constraints", constraints, "Constraint file; adds the log posterior");
    sub->add_option("--registration", registration, "Registration rule");
    sub->add_option("--rtol", rtol, "ODE relative tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--atol", atol, "ODE absolute tolerance")->check(CLI::PositiveNumber);
    sub->add_flag("--sd", sd, "Hold the transfer rate at zero");
    sub->add_flag("--observed-only", observed_only, "List only patterns present in the data");
    sub->add_option("--out", out, "Output file (default: standard output)");
    return sub;
  }

  int run(const CLI::App& sub, const Global& g) {
    const Phylogeny t = parse_tree(read_file(tree));
    const TraitMatrix m = load_matrix(data).reordered(t.taxa());
    const RegistrationRule rule = rule_of(registration);
    const auto counts = m.pattern_counts(rule);
    ModelParams p;
    p.mu = model.mu;
    p.beta = model.beta;
    p.kappa = model.kappa;
    p.xi = xi_values(model.xi, t.leaf_count());
    p.sd_mode = sd;
    const OdeTolerance tol{rtol, atol};

    const auto ef = expected_frequencies(t, p.rates(1.0), p.kappa, p.xi, rule, tol);
    const double n = static_cast<double>(counts.total());
    const double lam = lambda > 0.0 ? lambda : n / ef.registered_total;

    std::vector<long> nq;
    std::vector<double> rates, y;
    std::ostringstream os;
    os << missingness_report(m);
    os << "pattern\tcount\texpected\n";
    std::set<ObservedPattern> seen;
    for (std::size_t i = 0; i < ef.patterns.size(); ++i) {
      const long c = counts.count(ef.patterns[i]);
      seen.insert(ef.patterns[i]);
      nq.push_back(c);
      rates.push_back(lam * ef.values[i]);
      y.push_back(ef.values[i]);
      if (observed_only && c == 0) continue;
      os << ef.patterns[i].to_string() << "\t" << c << "\t" << num(lam * ef.values[i]) << "\n";
    }
    for (const auto& [q, c] : counts.counts) {
      if (!seen.count(q)) throw Error("observed pattern " + q.to_string() + " is not registered");
    }
    os.precision(12);
    os << "# lambda\t" << lam << "\n";
    os << "# registered_total\t" << lam * ef.registered_total << "\n";
    os << "# poisson_loglik\t" << poisson_loglik(nq, rates, lam * ef.registered_total) << "\n";
    os << "# multinomial_loglik\t" << multinomial_loglik(nq, y, ef.registered_total) << "\n";
    if (!constraints.empty()) {
      const auto cs = ConstraintSet::parse(read_file(constraints), t.taxa());
      PosteriorEvaluator ev(counts, rule, cs, {}, tol);
      const auto terms = ev.evaluate(t, p);
      os << "# log_prior\t" << terms.prior() << "\n";
      os << "# log_posterior\t" << (sd ? terms.total_without_beta() : terms.total()) << "\n";
    }
    if (out.empty()) std::cout << os.str();
    else write_file(out, os.str());

    Manifest man("likelihood", manifest_path(g, out));
    man.input("tree", tree);
    man.input("data", data);
    if (!constraints.empty()) man.input("constraints", constraints);
    man.options(sub);
    if (!out.empty()) man.output(out);
    man.write();
    return 0;
  }
};

struct McmcCmd {
  std::string data, constraints, config, out, init, registration = "at_most_ones:0";
  std::string iterations, thin, burn_in, seed, mode, likelihood, sample_xi;
  std::vector<std::string> settings;
  int chains = 1;

  CLI::App* add(CLI::App& app) {
    auto* sub = app.add_subcommand("mcmc", "Sample trees and parameters from the posterior");
    sub->add_option("--data", data, "Trait matrix")->required();
    sub->add_option("--constraints", constraints, "Constraint file")->required();
    sub->add_option("--config", config, "Sampler configuration (key=value lines)");
    sub->add_option("--out", out, "Output prefix")->required();
    sub->add_option("--init", init, "Starting tree (default: random under the constraints)");
    sub->add_option("--registration", registration, "Registration rule");
    sub->add_option("--chains", chains, "Independent chains")->check(CLI::PositiveNumber);
    sub->add_option("--iterations", iterations, "Total iterations, burn-in included");
    sub->add_option("--thin", thin, "Keep every n-th state");
    sub->add_option("--burn-in", burn_in, "Iterations discarded first");
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--mode", mode, "SDLT or SD");
    sub->add_option("--likelihood", likelihood, "on, or off to sample the prior");
    sub->add_option("--sample-xi", sample_xi, "on to sample observation probabilities");
    sub->add_option("--set", settings, "Any sampler key as key=value; repeatable");
    return sub;
  }

  McmcConfig resolve() const {
    McmcConfig cfg;
    try {
      if (!config.empty()) cfg = parse_mcmc_config(read_file(config));
      const std::pair<const char*, const std::string*> flags[] = {
          {"iterations", &iterations}, {"thin", &thin},       {"burn_in", &burn_in},     {"seed", &seed},
          {"mode", &mode},             {"likelihood", &likelihood}, {"sample_xi", &sample_xi}};
      for (const auto& [key, value] : flags) {
        if (!value->empty()) apply_mcmc_option(cfg, key, *value);
      }
      for (const auto& s : settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
        apply_mcmc_option(cfg, s.substr(0, eq), s.substr(eq + 1));
      }
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }

  int run(const CLI::App& sub, const Global& g) {
    const McmcConfig cfg = resolve();
    const TraitMatrix m = load_matrix(data);
    const RegistrationRule rule = rule_of(registration);
    const auto cs = ConstraintSet::parse(read_file(constraints), m.taxa());
    {
      std::mt19937_64 rng(cfg.seed);
      if (const auto w = prior_uniformity_warning(random_constrained_tree(m.taxa(), cs, rng), cs)) {
        std::cerr << "warning: " << *w << "\n";
      }
    }
    if (cfg.burn_in >= cfg.iterations) throw UsageError("burn-in must be shorter than the run");
    if (cfg.likelihood && !cfg.sample_xi) {
      for (int k = 0; k < m.taxon_count(); ++k) {
        if (m.missing_count(k) > 0) throw UsageError("the data has missing cells; use --sample-xi on");
      }
    }
    const auto counts = m.pattern_counts(rule);
    std::optional<Phylogeny> start;
    if (!init.empty()) start = with_taxon_order(parse_tree(read_file(init)), m.taxa());

    Manifest man("mcmc", manifest_path(g, out));
    man.input("data", data);
    man.input("constraints", constraints);
    if (!config.empty()) man.input("config", config);
    if (!init.empty()) man.input("init", init);
    man.seed(cfg.seed);
    for (const auto& [k, v] : key_values_of(mcmc_config_text(cfg))) man.config(k, v);
    man.config("registration", rule.to_string());
    man.config("chains", std::to_string(chains));

    std::vector<SampleLog> logs(static_cast<std::size_t>(chains));
    parallel_for(chains, g.threads, [&](int c) {
      McmcConfig cc = cfg;
      if (chains > 1) cc.seed = replicate_seed(cfg.seed, static_cast<std::uint64_t>(c));
      std::mt19937_64 rng(splitmix64(cc.seed));
      ChainState s = initial_state(m.taxa(), cs, cc, rng);
      if (start) s.tree = *start;
      Chain chain(counts, rule, cs, cc);
      logs[static_cast<std::size_t>(c)] = chain.run(s);
    });

    std::cout << "chain\tkernel\tproposed\taccepted\trate\n";
    for (int c = 0; c < chains; ++c) {
      const auto& log = logs[static_cast<std::size_t>(c)];
      const std::string name = chains == 1 ? out : out + ".chain" + std::to_string(c);
      write_file(name + ".log.tsv", log.scalar_table());
      write_file(name + ".trees", log.tree_table());
      std::ostringstream st;
      st << "kernel\tproposed\taccepted\trate\n";
      for (int k = 0; k < kKernelCount; ++k) {
        const auto& ks = log.stats[static_cast<std::size_t>(k)];
        st << to_string(static_cast<Kernel>(k)) << "\t" << ks.proposed << "\t" << ks.accepted << "\t"
           << num(ks.rate()) << "\n";
        std::cout << c << "\t" << to_string(static_cast<Kernel>(k)) << "\t" << ks.proposed << "\t" << ks.accepted
                  << "\t" << num(ks.rate()) << "\n";
      }
      write_file(name + ".stats.tsv", st.str());
      for (const char* ext : {".log.tsv", ".trees", ".stats.tsv"}) man.output(name + ext);
    }
    (void)sub;
    man.write();
    return 0;
  }

  static std::vector<std::pair<std::string, std::string>> key_values_of(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& line : split(text, '\n')) {
      const auto eq = line.find('=');
      out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------------------

struct AnalyzeCmd {
  CLI::App* ess = nullptr;
  CLI::App* consensus = nullptr;
  CLI::App* bf = nullptr;
  CLI::App* predict = nullptr;
  CLI::App* split_cmd = nullptr;
  CLI::App* validate = nullptr;

  std::vector<std::string> logs;
  std::string columns, acf_out, hist_out;
  int max_lag = 50, bins = 30;
  double burn = 0.0;

  std::string log;
  double threshold = 0.5;
  int topologies = 10;

  std::string prior_log, posterior_log, taxa, window, label;

  std::string test, registration = "at_most_ones:0";
  double rtol = OdeTolerance{}.rtol, atol = OdeTolerance{}.atol;

  std::string data, out;
  std::uint64_t seed = 1;

  std::string tree, cdf_out;
  ModelOptions model;
  int replicates = 1000;
  double familywise = 0.01;

  void add(CLI::App& app) {
    auto* a = app.add_subcommand("analyze", "Summaries of sampler output and simulation checks");
    a->require_subcommand(1);

    ess = a->add_subcommand("ess", "Posterior summaries and effective sample sizes");
    ess->add_option("--log", logs, "Sample log prefix; repeatable")->required();
    ess->add_option("--columns", columns, "Comma-separated columns (default: all)");
    ess->add_option("--burn-in", burn, "Fraction of samples discarded first");
    ess->add_option("--acf", acf_out, "Write autocorrelations to this file");
    ess->add_option("--max-lag", max_lag, "Largest autocorrelation lag")->check(CLI::PositiveNumber);
    ess->add_option("--hist", hist_out, "Write histograms to this file");
    ess->add_option("--bins", bins, "Histogram bins")->check(CLI::PositiveNumber);

    consensus = a->add_subcommand("consensus", "Majority-rule consensus tree and topology frequencies");
    consensus->add_option("--log", log, "Sample log prefix")->required();
    consensus->add_option("--threshold", threshold, "Minimum clade support")->check(CLI::Range(0.5, 1.0));
    consensus->add_option("--burn-in", burn, "Fraction of samples discarded first");
    consensus->add_option("--topologies", topologies, "Number of topologies listed");

    bf = a->add_subcommand("bf", "Savage-Dickey Bayes factor for a node-time constraint");
    bf->add_option("--prior", prior_log, "Prior-only run with the constraint relaxed")->required();
    bf->add_option("--posterior", posterior_log, "Posterior run with the constraint relaxed")->required();
    bf->add_option("--taxa", taxa, "Leaf set whose ancestor the constraint bounds")->required();
    bf->add_option("--window", window, "Constraint window lo,hi")->required();
    bf->add_option("--label", label, "Label for the report");
    bf->add_option("--burn-in", burn, "Fraction of samples discarded first");

    predict = a->add_subcommand("predict", "Posterior predictive log score of held-out traits");
    predict->add_option("--log", log, "Sample log prefix of the training run")->required();
    predict->add_option("--test", test, "Held-out trait matrix")->required();
    predict->add_option("--registration", registration, "Registration rule");
    predict->add_option("--burn-in", burn, "Fraction of samples discarded first");
    predict->add_option("--rtol", rtol, "ODE relative tolerance")->check(CLI::PositiveNumber);
    predict->add_option("--atol", atol, "ODE absolute tolerance")->check(CLI::PositiveNumber);

    split_cmd = a->add_subcommand("split", "Random even train/test split of registered traits");
    split_cmd->add_option("--data", data, "Trait matrix")->required();
    split_cmd->add_option("--registration", registration, "Registration rule");
    split_cmd->add_option("--seed", seed, "Seed");
    split_cmd->add_option("--out", out, "Output prefix")->required();

    validate = a->add_subcommand("validate", "Simulated pattern counts against their exact Poisson laws");
    validate->add_option("--tree", tree, "Tree file")->required();
    model.add(validate);
    validate->add_option("--registration", registration, "Registration rule");
    validate->add_option("--replicates", replicates, "Simulated data sets")->check(CLI::PositiveNumber);
    validate->add_option("--seed", seed, "Master seed");
    validate->add_option("--familywise", familywise, "Familywise level")->check(CLI::Range(0.0, 1.0));
    validate->add_option("--cdf", cdf_out, "Write empirical and exact CDFs to this file");
  }

  int run(const Global& g) {
    if (ess->parsed()) return run_ess(g);
    if (consensus->parsed()) return run_consensus(g);
    if (bf->parsed()) return run_bf(g);
    if (predict->parsed()) return run_predict(g);
    if (split_cmd->parsed()) return run_split(g);
    return run_validate(g);
  }

  int run_ess(const Global& g) {
    Manifest man("analyze ess", manifest_path(g, acf_out));
    std::ostringstream os, acf, hist;
    os << "log\tcolumn\tmean\tsd\tq025\tq975\tess\n";
    acf << "log\tcolumn\tlag\tacf\n";
    hist << "log\tcolumn\tlower\tupper\tcount\n";
    for (const auto& prefix : logs) {
      const SampleLog sl = load_log(prefix, burn);
      man.input(prefix + ".log.tsv", prefix + ".log.tsv");
      std::vector<std::string> cols = split(columns);
      if (cols.empty()) {
        const std::string text = read_file(prefix + ".log.tsv");
        const auto header = split(text.substr(0, text.find('\n')), '\t');
        for (const auto& h : header) {
          if (h != "iteration") cols.push_back(h);
        }
        cols.push_back("beta_over_mu");
      }
      for (const auto& c : cols) {
        const auto v = sl.column(c);
        const Summary s = summarise(v);
        os << prefix << "\t" << c << "\t" << num(s.mean) << "\t" << num(s.sd) << "\t" << num(s.lo) << "\t"
           << num(s.hi) << "\t" << num(s.ess) << "\n";
        if (!acf_out.empty() && v.size() > 1) {
          const auto r = autocorrelation(v, std::min<int>(max_lag, static_cast<int>(v.size()) - 1));
          for (std::size_t k = 0; k < r.size(); ++k) acf << prefix << "\t" << c << "\t" << k << "\t" << num(r[k]) << "\n";
        }
        if (!hist_out.empty()) {
          const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
          const double w = (*hi - *lo) / bins;
          std::vector<long> n(static_cast<std::size_t>(bins), 0);
          for (double x : v) {
            const int b = w > 0 ? std::min(bins - 1, static_cast<int>((x - *lo) / w)) : 0;
            ++n[static_cast<std::size_t>(b)];
          }
          for (int b = 0; b < bins; ++b) {
            hist << prefix << "\t" << c << "\t" << num(*lo + b * w) << "\t" << num(*lo + (b + 1) * w) << "\t"
                 << n[static_cast<std::size_t>(b)] << "\n";
          }
        }
      }
    }
    std::cout << os.str();
    if (!acf_out.empty()) {
      write_file(acf_out, acf.str());
      man.output(acf_out);
    }
    if (!hist_out.empty()) {
      write_file(hist_out, hist.str());
      man.output(hist_out);
    }
    man.options(*ess);
    man.write();
    return 0;
  }

  int run_consensus(const Global& g) {
    const SampleLog sl = load_log(log, burn);
    const auto trees = trees_of(sl);
    const auto con = consensus_tree(trees, threshold);
    std::cout << con.to_text() << "\n";
    std::cout << "clade\tsupport\tmean_time\tmean_catastrophes\n";
    for (const auto& c : con.clades) {
      std::string names;
      for (std::size_t k = 0; k < con.taxa.size(); ++k) {
        if (c.mask >> k & 1) names += (names.empty() ? "" : ",") + con.taxa[k];
      }
      std::cout << names << "\t" << num(c.support) << "\t" << num(c.mean_time) << "\t" << num(c.mean_catastrophes)
                << "\n";
    }
    auto freq = topology_frequencies(trees);
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [k, f] : freq) ranked.emplace_back(f, k);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::cout << "topology\tfrequency\n";
    for (int i = 0; i < std::min<int>(topologies, static_cast<int>(ranked.size())); ++i) {
      std::cout << ranked[static_cast<std::size_t>(i)].second << "\t" << num(ranked[static_cast<std::size_t>(i)].first)
                << "\n";
    }
    Manifest man("analyze consensus", manifest_path(g, log + ".consensus"));
    man.input("trees", log + ".trees");
    man.options(*consensus);
    man.write();
    return 0;
  }

  int run_bf(const Global& g) {
    const auto w = numbers(window);
    if (w.size() != 2 || !(w[0] <= w[1])) throw UsageError("--window expects lo,hi with lo <= hi");
    const auto names = split(taxa);
    const auto prior_times = mrca_times(load_log(prior_log, burn), names);
    const auto post_times = mrca_times(load_log(posterior_log, burn), names);
    const auto r = savage_dickey(prior_times, post_times, {w[0], w[1]}, label.empty() ? taxa : label);
    std::cout << "label\tprior\tposterior\tbayes_factor\tlog_bf\tlower_bound\n";
    std::cout << r.label << "\t" << num(r.prior_proportion) << "\t" << num(r.posterior_proportion) << "\t"
              << num(r.bayes_factor) << "\t" << num(r.log_bf()) << "\t" << (r.lower_bound ? "yes" : "no") << "\n";
    Manifest man("analyze bf", manifest_path(g, posterior_log + ".bf"));
    man.input("prior", prior_log + ".trees");
    man.input("posterior", posterior_log + ".trees");
    man.options(*bf);
    man.write();
    return 0;
  }

  int run_predict(const Global& g) {
    const SampleLog sl = load_log(log, burn);
    const RegistrationRule rule = rule_of(registration);
    const auto& taxa_order = sl.samples.front().state.tree.taxa();
    const TraitMatrix m = load_matrix(test).reordered(taxa_order);
    const auto score = predictive_score(sl, m.pattern_counts(rule), rule, OdeTolerance{rtol, atol});
    std::cout << "log_score\tstandard_error\tsamples\n";
    std::cout.precision(12);
    std::cout << score.log_score << "\t" << score.standard_error << "\t" << score.samples << "\n";
    Manifest man("analyze predict", manifest_path(g, log + ".predict"));
    man.input("trees", log + ".trees");
    man.input("test", test);
    man.options(*predict);
    man.write();
    return 0;
  }

  int run_split(const Global& g) {
    const auto [train, held] = split_traits(load_matrix(data), rule_of(registration), seed);
    write_file(out + ".train.tsv", train.to_text());
    write_file(out + ".test.tsv", held.to_text());
    std::cout << "train\t" << train.trait_count() << "\ntest\t" << held.trait_count() << "\n";
    Manifest man("analyze split", manifest_path(g, out));
    man.input("data", data);
    man.seed(seed);
    man.options(*split_cmd);
    man.output(out + ".train.tsv");
    man.output(out + ".test.tsv");
    man.write();
    return 0;
  }

  int run_validate(const Global& g) {
    SimConfig sim;
    sim.tree = parse_tree(read_file(tree));
    sim.rates = {model.lambda, model.mu, model.beta};
    sim.kappa = model.kappa;
    sim.xi = xi_values(model.xi, sim.tree.leaf_count());
    sim.seed = seed;
    std::vector<PatternCounts> reps;
    const auto report = run_distribution_check(sim, rule_of(registration), replicates, familywise, g.threads, &reps);
    std::cout << report.to_text();
    Manifest man("analyze validate", manifest_path(g, cdf_out));
    man.input("tree", tree);
    man.seed(seed);
    man.options(*validate);
    if (!cdf_out.empty()) {
      write_file(cdf_out, report.cdf_table(reps));
      man.output(cdf_out);
    }
    man.write();
    if (!report.passed()) throw Error("distribution check failed for " + std::to_string(report.failures) + " patterns");
    return 0;
  }
};

// ---------------------------------------------------------------------------------------

struct ValidateCmd {
  std::string tree, constraints, config;
  ModelOptions model;
  int replicates = 200;
  long iterations = 20000;
  std::uint64_t seed = 1;

  CLI::App* add(CLI::App& app) {
    auto* sub = app.add_subcommand("validate", "End-to-end self-check on a tree: simulation, likelihood and sampler");
    sub->add_option("--config", config, "key=value defaults for this command");
    sub->add_option("--tree", tree, "Tree file")->required();
    sub->add_option("--constraints", constraints, "Constraint file (default: root within twice its age)");
    model.add(sub);
    sub->add_option("--replicates", replicates, "Simulated data sets for the distribution check")
        ->check(CLI::PositiveNumber);
    sub->add_option("--iterations", iterations, "Sampler iterations per run")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Master seed");
    return sub;
  }

  int run(const CLI::App& sub, const Global& g) {
    const Phylogeny t = parse_tree(read_file(tree));
    const ConstraintSet cs = constraints.empty()
                                 ? ConstraintSet({{ConstraintKind::RootTime, {}, 2.0 * t.time(1), 0.0}}, t.taxa())
                                 : ConstraintSet::parse(read_file(constraints), t.taxa());
    Manifest man("validate", manifest_path(g, ""));
    man.input("tree", tree);
    if (!constraints.empty()) man.input("constraints", constraints);
    man.seed(seed);
    man.options(sub);
    bool ok = true;
    auto line = [&](const std::string& name, bool pass, const std::string& detail) {
      std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
      ok = ok && pass;
    };

    SimConfig sim;
    sim.tree = t;
    sim.rates = {model.lambda, model.mu, model.beta};
    sim.kappa = model.kappa;
    sim.xi = xi_values(model.xi, t.leaf_count());
    sim.seed = seed;
    const auto report = run_distribution_check(sim, RegistrationRule::present_somewhere(), replicates, 0.01, g.threads);
    line("pattern counts", report.passed(),
         std::to_string(report.patterns.size()) + " patterns, " + std::to_string(report.failures) + " rejected");

    // Sampler on the prior: the severity is uniform on its range.
    McmcConfig prior_cfg;
    prior_cfg.likelihood = false;
    prior_cfg.iterations = iterations * 10;
    prior_cfg.thin = 10;
    prior_cfg.seed = replicate_seed(seed, 1);
    std::mt19937_64 rng(prior_cfg.seed);
    Chain prior_chain(PatternCounts{t.leaf_count(), {}}, RegistrationRule::present_somewhere(), cs, prior_cfg);
    const auto prior_log = prior_chain.run(initial_state(t.taxa(), cs, prior_cfg, rng));
    const auto kappa = prior_log.column("kappa");
    const double klo = prior_cfg.prior.kappa_min, khi = prior_cfg.prior.kappa_max;
    const double kess = effective_sample_size(kappa).ess;
    // Thin to roughly independent draws before the KS test.
    std::vector<double> kthin;
    const std::size_t step = std::max<std::size_t>(1, static_cast<std::size_t>(kappa.size() / std::max(kess, 1.0)));
    for (std::size_t i = 0; i < kappa.size(); i += step) kthin.push_back(kappa[i]);
    const auto ks = ks_test(kthin, [&](double x) { return std::clamp((x - klo) / (khi - klo), 0.0, 1.0); });
    line("prior sampling", ks.p_value > 0.001, "kappa KS p = " + num(ks.p_value) + " over " + std::to_string(kthin.size()));

    // Sampler on one simulated data set.
    SimConfig one = sim;
    one.seed = replicate_seed(seed, 2);
    one.keep_events = false;
    const auto data = gillespie_simulate(one).observed;
    McmcConfig post_cfg;
    post_cfg.iterations = iterations;
    post_cfg.burn_in = iterations / 2;
    post_cfg.thin = 10;
    post_cfg.seed = replicate_seed(seed, 3);
    post_cfg.sample_xi = !sim.xi.empty();
    Chain chain(data.pattern_counts(RegistrationRule::present_somewhere()), RegistrationRule::present_somewhere(), cs,
                post_cfg);
    const auto post = chain.run(initial_state(t.taxa(), cs, post_cfg, rng));
    bool finite = true;
    for (const auto& s : post.samples) finite = finite && std::isfinite(s.log_posterior);
    line("posterior run", finite, std::to_string(post.samples.size()) + " samples, all finite");
    const Summary mu = summarise(post.column("mu"));
    const Summary root = summarise(post.column("root_time"));
    std::cout << "mu\ttrue " << num(model.mu) << "\tmean " << num(mu.mean) << "\t95% [" << num(mu.lo) << ", "
              << num(mu.hi) << "]\tess " << num(mu.ess) << "\n";
    std::cout << "root_time\ttrue " << num(t.time(1)) << "\tmean " << num(root.mean) << "\t95% [" << num(root.lo)
              << ", " << num(root.hi) << "]\tess " << num(root.ess) << "\n";
    man.write();
    if (!ok) throw Error("validation failed");
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic Dollo with lateral transfer: simulation, likelihood and inference", "sdlt"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string("sdlt ") + SDLT_VERSION + " (" + SDLT_BUILD_TYPE + ", C++" +
                                        std::to_string(__cplusplus / 100 % 100) + ", Eigen " +
                                        std::to_string(EIGEN_WORLD_VERSION) + "." +
                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                        std::to_string(EIGEN_MINOR_VERSION) + ")");
  Global g;
  app.add_option("--threads", g.threads, "Worker threads (default: SDLT_THREADS or all cores)");
  app.add_option("--manifest", g.manifest, "Manifest path (default: next to the outputs)");
  app.require_subcommand(1);

  SimulateCmd simulate;
  LikelihoodCmd likelihood;
  McmcCmd mcmc;
  AnalyzeCmd analyze;
  ValidateCmd validate;
  CLI::App* sim_app = simulate.add(app);
  CLI::App* lik_app = likelihood.add(app);
  CLI::App* mcmc_app = mcmc.add(app);
  analyze.add(app);
  CLI::App* val_app = validate.add(app);

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (g.threads <= 0) g.threads = default_threads();
    if (sim_app->parsed()) {
      if (!simulate.config.empty()) fill_from_config(*sim_app, simulate.config);
      return simulate.run(*sim_app, g);
    }
    if (lik_app->parsed()) {
      if (!likelihood.config.empty()) fill_from_config(*lik_app, likelihood.config);
      return likelihood.run(*lik_app, g);
    }
    if (mcmc_app->parsed()) return mcmc.run(*mcmc_app, g);
    if (val_app->parsed()) {
      if (!validate.config.empty()) fill_from_config(*val_app, validate.config);
      return validate.run(*val_app, g);
    }
    return analyze.run(g);
  } catch (const UsageError& e) {
    std::cerr << "sdlt: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "sdlt: " << e.what() << "\n";
    return 2;
  }
}
