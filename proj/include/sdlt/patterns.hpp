#ifndef SDLT_PATTERNS_HPP
#define SDLT_PATTERNS_HPP

#include <bit>
#include <compare>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sdlt/types.hpp"

namespace sdlt {

// Presence bit-vector over the lineages of a slice.  Bit i-1 is position i.
struct Pattern {
  PatternBits bits = 0;
  int width = 0;

  friend bool operator==(const Pattern&, const Pattern&) = default;
  friend auto operator<=>(const Pattern&, const Pattern&) = default;
};

inline int hamming_weight(PatternBits p) { return std::popcount(p); }
int hamming_weight(const Pattern& p);
int hamming_distance(const Pattern& p, const Pattern& q);

// S_p^-: one bit cleared, never the empty pattern.  S_p^+: one bit set.
std::vector<Pattern> neighbors_down(const Pattern& p);
std::vector<Pattern> neighbors_up(const Pattern& p);

// Number of nonzero patterns on `width` lineages.
inline std::size_t pattern_space_size(int width) { return (std::size_t{1} << width) - 1; }

// Image of a width-w pattern when the lineage at `position` (1-based) splits: the entry at
// that position is duplicated into positions `position` and `position`+1.
inline PatternBits expand_bits(PatternBits p, int position) {
  const int b = position - 1;
  const PatternBits low = p & ((PatternBits{1} << b) - 1);
  const PatternBits bit = (p >> b) & 1;
  const PatternBits high = p >> (b + 1);
  return low | (bit << b) | (bit << (b + 1)) | (high << (b + 2));
}

// T^(j): moves every entry of a width-w vector to its duplicated image, zeros elsewhere.
template <typename Derived>
VectorT<typename Derived::Scalar> branch_expand(const Eigen::MatrixBase<Derived>& v, int width,
                                                int position) {
  using Scalar = typename Derived::Scalar;
  if (position < 1 || position > width) throw Error("split position outside the pattern");
  if (v.size() != (Eigen::Index{1} << width)) throw Error("vector does not match the pattern width");
  if (width + 1 > kMaxLineages) throw Error("pattern width exceeds the lineage cap");
  VectorT<Scalar> out = VectorT<Scalar>::Zero(Eigen::Index{1} << (width + 1));
  for (PatternBits p = 1; p < static_cast<PatternBits>(v.size()); ++p) {
    out[expand_bits(p, position)] = v[p];
  }
  return out;
}

// A site pattern over {0, 1, ?} on the L taxa, bit k for taxon k.
struct ObservedPattern {
  PatternBits ones = 0;
  PatternBits missing = 0;
  int width = 0;

  int count_ones() const { return std::popcount(ones); }
  int count_nonzero() const { return std::popcount(ones | missing); }
  bool is_binary() const { return missing == 0; }

  // Character k of the string is taxon k.
  static ObservedPattern from_string(std::string_view s);
  std::string to_string() const;

  friend bool operator==(const ObservedPattern&, const ObservedPattern&) = default;
  friend auto operator<=>(const ObservedPattern&, const ObservedPattern&) = default;
};

// u(q): the binary completions of q, without the empty pattern.
std::vector<Pattern> compatible_binary_patterns(const ObservedPattern& q);

// Column-collapsed data: n_q for every distinct observed pattern.
struct PatternCounts {
  int width = 0;
  std::map<ObservedPattern, long> counts;

  long total() const;
  long count(const ObservedPattern& q) const;
};

// Composition of primitive rules.  Each primitive names the columns it discards.
class RegistrationRule {
 public:
  enum class Kind {
    AbsentIn,        // q_t = 0 for taxon t
    AtMostOnes,      // #{q_i = 1} <= j
    AtLeastOnes,     // #{q_i = 1} >= j
    AtLeastNonzero,  // #{q_i != 0} >= j
  };
  struct Primitive {
    Kind kind;
    int value;
    friend bool operator==(const Primitive&, const Primitive&) = default;
  };

  RegistrationRule() = default;
  explicit RegistrationRule(std::vector<Primitive> parts) : parts_(std::move(parts)) {}

  // The rule most analyses use: keep traits observed present in at least one taxon.
  static RegistrationRule present_somewhere() { return RegistrationRule({{Kind::AtMostOnes, 0}}); }

  // Comma separated: `absent:T`, `at_most_ones:J`, `at_least_ones:J`, `at_least_nonzero:J`;
  // `none` or an empty string is the identity.
  static RegistrationRule parse(std::string_view text);
  std::string to_string() const;

  bool admits(const ObservedPattern& q) const;
  bool empty() const { return parts_.empty(); }
  const std::vector<Primitive>& parts() const { return parts_; }
  RegistrationRule then(const RegistrationRule& other) const;

  friend bool operator==(const RegistrationRule&, const RegistrationRule&) = default;

 private:
  std::vector<Primitive> parts_;
};

PatternCounts register_counts(const PatternCounts& counts, const RegistrationRule& rule);

}  // namespace sdlt

#endif  // SDLT_PATTERNS_HPP
