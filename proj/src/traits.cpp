#include "sdlt/traits.hpp"

#include <algorithm>
#include <unordered_set>

namespace sdlt {

TraitMatrix::TraitMatrix(std::vector<std::string> taxa, std::vector<std::string> traits)
    : taxa_(std::move(taxa)), traits_(std::move(traits)), cells_(taxa_.size() * traits_.size(), Cell::Absent) {
  std::unordered_set<std::string> seen;
  for (const auto& t : taxa_) {
    if (!seen.insert(t).second) throw Error("duplicate taxon '" + t + "'");
  }
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = line.find(delim, start);
    std::string_view field = line.substr(start, end == std::string_view::npos ? line.npos : end - start);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    out.push_back(field);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace

TraitMatrix TraitMatrix::parse(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) lines.emplace_back(start, line);
    start = end + 1;
  }
  if (lines.empty()) throw ParseError("empty trait matrix", 0);
  const char delim = lines[0].second.find('\t') != std::string_view::npos ? '\t' : ',';
  const auto header = split_fields(lines[0].second, delim);
  if (header.size() < 2) throw ParseError("header row has no trait labels", lines[0].first);

  std::vector<std::string> traits(header.begin() + 1, header.end());
  std::vector<std::string> taxa;
  std::vector<std::vector<Cell>> rows;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto [offset, line] = lines[r];
    const auto fields = split_fields(line, delim);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(r) + " has " + std::to_string(fields.size()) +
                           " fields, expected " + std::to_string(header.size()),
                       offset);
    }
    const std::string name(fields[0]);
    if (name.empty()) throw ParseError("row " + std::to_string(r) + " has no taxon name", offset);
    if (!seen.insert(name).second) throw ParseError("duplicate taxon '" + name + "'", offset);
    std::vector<Cell> row;
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const auto f = fields[c];
      const std::size_t where = offset + static_cast<std::size_t>(f.data() - line.data());
      if (f == "0") row.push_back(Cell::Absent);
      else if (f == "1") row.push_back(Cell::Present);
      else if (f == "?") row.push_back(Cell::Missing);
      else throw ParseError("illegal cell '" + std::string(f) + "' (row " + std::to_string(r) + ", column " + std::to_string(c) + ")", where);
    }
    taxa.push_back(name);
    rows.push_back(std::move(row));
  }
  if (taxa.empty()) throw ParseError("trait matrix has no taxa", lines[0].first);
  TraitMatrix m(std::move(taxa), std::move(traits));
  for (int i = 0; i < m.taxon_count(); ++i) {
    for (int j = 0; j < m.trait_count(); ++j) m.set(i, j, rows[i][j]);
  }
  return m;
}

std::string TraitMatrix::to_text(char delimiter) const {
  std::string out = "taxon";
  for (const auto& t : traits_) out += delimiter + t;
  out += '\n';
  for (int i = 0; i < taxon_count(); ++i) {
    out += taxa_[i];
    for (int j = 0; j < trait_count(); ++j) {
      out += delimiter;
      out += "01?"[static_cast<int>(at(i, j))];
    }
    out += '\n';
  }
  return out;
}

void TraitMatrix::add_trait(std::string label, const std::vector<Cell>& column) {
  if (column.size() != taxa_.size()) throw Error("trait column has the wrong length");
  traits_.push_back(std::move(label));
  cells_.insert(cells_.end(), column.begin(), column.end());
}

ObservedPattern TraitMatrix::column(int trait) const {
  if (taxon_count() > kMaxLineages) throw Error("too many taxa for pattern encoding");
  ObservedPattern q;
  q.width = taxon_count();
  for (int i = 0; i < taxon_count(); ++i) {
    const Cell c = at(i, trait);
    if (c == Cell::Present) q.ones |= PatternBits{1} << i;
    if (c == Cell::Missing) q.missing |= PatternBits{1} << i;
  }
  return q;
}

PatternCounts TraitMatrix::pattern_counts(const RegistrationRule& rule) const {
  PatternCounts out;
  out.width = taxon_count();
  for (int j = 0; j < trait_count(); ++j) {
    const auto q = column(j);
    if ((q.ones | q.missing) == 0) continue;  // the all-absent column is not an observable pattern
    if (rule.admits(q)) ++out.counts[q];
  }
  return out;
}

int TraitMatrix::present_count(int taxon) const {
  int n = 0;
  for (int j = 0; j < trait_count(); ++j) n += at(taxon, j) == Cell::Present;
  return n;
}

int TraitMatrix::missing_count(int taxon) const {
  int n = 0;
  for (int j = 0; j < trait_count(); ++j) n += at(taxon, j) == Cell::Missing;
  return n;
}

TraitMatrix TraitMatrix::reordered(const std::vector<std::string>& taxa) const {
  if (taxa.size() != taxa_.size()) throw Error("taxon sets differ in size");
  TraitMatrix out(taxa, traits_);
  for (int i = 0; i < out.taxon_count(); ++i) {
    const auto it = std::find(taxa_.begin(), taxa_.end(), taxa[i]);
    if (it == taxa_.end()) throw Error("taxon '" + taxa[i] + "' is missing from the trait matrix");
    const int src = static_cast<int>(it - taxa_.begin());
    for (int j = 0; j < trait_count(); ++j) out.set(i, j, at(src, j));
  }
  return out;
}

}  // namespace sdlt
