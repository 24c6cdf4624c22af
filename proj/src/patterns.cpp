#include "sdlt/patterns.hpp"

#include <algorithm>
#include <charconv>

namespace sdlt {

int hamming_weight(const Pattern& p) { return std::popcount(p.bits); }

int hamming_distance(const Pattern& p, const Pattern& q) {
  if (p.width != q.width) throw Error("patterns of different widths");
  return std::popcount(p.bits ^ q.bits);
}

std::vector<Pattern> neighbors_down(const Pattern& p) {
  std::vector<Pattern> out;
  if (std::popcount(p.bits) <= 1) return out;
  for (PatternBits rest = p.bits; rest; rest &= rest - 1) {
    out.push_back({p.bits & ~(rest & -rest), p.width});
  }
  return out;
}

std::vector<Pattern> neighbors_up(const Pattern& p) {
  std::vector<Pattern> out;
  for (int i = 0; i < p.width; ++i) {
    const PatternBits bit = PatternBits{1} << i;
    if (!(p.bits & bit)) out.push_back({p.bits | bit, p.width});
  }
  return out;
}

ObservedPattern ObservedPattern::from_string(std::string_view s) {
  if (s.size() > static_cast<std::size_t>(kMaxLineages)) throw Error("pattern wider than the lineage cap");
  ObservedPattern q;
  q.width = static_cast<int>(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    const PatternBits bit = PatternBits{1} << k;
    switch (s[k]) {
      case '1': q.ones |= bit; break;
      case '?': q.missing |= bit; break;
      case '0': break;
      default: throw ParseError(std::string("illegal pattern symbol '") + s[k] + "'", k);
    }
  }
  return q;
}

std::string ObservedPattern::to_string() const {
  std::string s(width, '0');
  for (int k = 0; k < width; ++k) {
    if (ones >> k & 1) s[k] = '1';
    if (missing >> k & 1) s[k] = '?';
  }
  return s;
}

std::vector<Pattern> compatible_binary_patterns(const ObservedPattern& q) {
  std::vector<Pattern> out;
  // Walk the submasks of the missing positions.
  PatternBits sub = q.missing;
  while (true) {
    const PatternBits p = q.ones | sub;
    if (p) out.push_back({p, q.width});
    if (sub == 0) break;
    sub = (sub - 1) & q.missing;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

long PatternCounts::total() const {
  long n = 0;
  for (const auto& [q, c] : counts) n += c;
  return n;
}

long PatternCounts::count(const ObservedPattern& q) const {
  const auto it = counts.find(q);
  return it == counts.end() ? 0 : it->second;
}

namespace {

struct KindName {
  RegistrationRule::Kind kind;
  std::string_view name;
};
constexpr KindName kKindNames[] = {
    {RegistrationRule::Kind::AbsentIn, "absent"},
    {RegistrationRule::Kind::AtMostOnes, "at_most_ones"},
    {RegistrationRule::Kind::AtLeastOnes, "at_least_ones"},
    {RegistrationRule::Kind::AtLeastNonzero, "at_least_nonzero"},
};

}  // namespace

RegistrationRule RegistrationRule::parse(std::string_view text) {
  std::vector<Primitive> parts;
  if (text.empty() || text == "none") return RegistrationRule();
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string_view item = text.substr(start, end - start);
    const std::size_t colon = item.find(':');
    if (colon == std::string_view::npos) throw ParseError("registration rule needs NAME:VALUE", start);
    const std::string_view name = item.substr(0, colon);
    const std::string_view value = item.substr(colon + 1);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size() || v < 0) {
      throw ParseError("bad registration value '" + std::string(value) + "'", start + colon + 1);
    }
    bool known = false;
    for (const auto& kn : kKindNames) {
      if (kn.name == name) {
        parts.push_back({kn.kind, v});
        known = true;
      }
    }
    if (!known) throw ParseError("unknown registration rule '" + std::string(name) + "'", start);
    start = end + 1;
  }
  return RegistrationRule(std::move(parts));
}

std::string RegistrationRule::to_string() const {
  if (parts_.empty()) return "none";
  std::string out;
  for (const auto& p : parts_) {
    if (!out.empty()) out += ',';
    for (const auto& kn : kKindNames) {
      if (kn.kind == p.kind) out += std::string(kn.name) + ":" + std::to_string(p.value);
    }
  }
  return out;
}

bool RegistrationRule::admits(const ObservedPattern& q) const {
  for (const auto& p : parts_) {
    switch (p.kind) {
      case Kind::AbsentIn:
        if (p.value < q.width && !((q.ones | q.missing) >> p.value & 1)) return false;
        break;
      case Kind::AtMostOnes:
        if (q.count_ones() <= p.value) return false;
        break;
      case Kind::AtLeastOnes:
        if (q.count_ones() >= p.value) return false;
        break;
      case Kind::AtLeastNonzero:
        if (q.count_nonzero() >= p.value) return false;
        break;
    }
  }
  return true;
}

RegistrationRule RegistrationRule::then(const RegistrationRule& other) const {
  auto parts = parts_;
  parts.insert(parts.end(), other.parts_.begin(), other.parts_.end());
  return RegistrationRule(std::move(parts));
}

PatternCounts register_counts(const PatternCounts& counts, const RegistrationRule& rule) {
  PatternCounts out;
  out.width = counts.width;
  for (const auto& [q, n] : counts.counts) {
    if (rule.admits(q)) out.counts.emplace(q, n);
  }
  return out;
}

}  // namespace sdlt
