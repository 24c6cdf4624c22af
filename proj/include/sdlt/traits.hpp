#ifndef SDLT_TRAITS_HPP
#define SDLT_TRAITS_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sdlt/patterns.hpp"

namespace sdlt {

enum class Cell : std::uint8_t { Absent = 0, Present = 1, Missing = 2 };

// Taxa x traits over {0, 1, ?}.
class TraitMatrix {
 public:
  TraitMatrix() = default;
  TraitMatrix(std::vector<std::string> taxa, std::vector<std::string> traits);

  // Delimited text: a header row of trait labels after a leading corner cell, then one row
  // per taxon.  Tabs or commas, detected from the header line.
  static TraitMatrix parse(std::string_view text);
  std::string to_text(char delimiter = '\t') const;

  int taxon_count() const { return static_cast<int>(taxa_.size()); }
  int trait_count() const { return static_cast<int>(traits_.size()); }
  const std::vector<std::string>& taxa() const { return taxa_; }
  const std::vector<std::string>& traits() const { return traits_; }

  Cell at(int taxon, int trait) const { return cells_[index(taxon, trait)]; }
  void set(int taxon, int trait, Cell c) { cells_[index(taxon, trait)] = c; }
  void add_trait(std::string label, const std::vector<Cell>& column);

  ObservedPattern column(int trait) const;
  PatternCounts pattern_counts(const RegistrationRule& rule = {}) const;
  // Number of traits marked present in the taxon.
  int present_count(int taxon) const;
  int missing_count(int taxon) const;

  // Rows permuted into the given taxon order; every name must be present.
  TraitMatrix reordered(const std::vector<std::string>& taxa) const;

  friend bool operator==(const TraitMatrix&, const TraitMatrix&) = default;

 private:
  std::size_t index(int taxon, int trait) const {
    return static_cast<std::size_t>(trait) * taxa_.size() + static_cast<std::size_t>(taxon);
  }

  std::vector<std::string> taxa_;
  std::vector<std::string> traits_;
  std::vector<Cell> cells_;  // column-major
};

}  // namespace sdlt

#endif  // SDLT_TRAITS_HPP
