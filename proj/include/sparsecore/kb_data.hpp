#pragma once

// N-ary fact ingestion: TSV parsing, vocabularies, dataset splits, the
// filtered-evaluation index, and grouping by arity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sparsecore/error.hpp"
#include "sparsecore/random.hpp"

namespace sparsecore {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

/// A fact as written in a file, before symbols are mapped to ids.
struct RawFact {
  std::string relation;
  std::vector<std::string> entities;

  bool operator==(const RawFact&) const = default;
};

/// Parses `relation<TAB>e1<TAB>e2[<TAB>...]` lines. Blank lines and lines
/// starting with '#' are skipped. A trailing '\r' is stripped.
inline std::vector<RawFact> parse_facts(std::istream& in) {
  std::vector<RawFact> facts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.emplace_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 3) {
      throw ParseError("expected a relation and at least 2 entities, got " +
                           std::to_string(fields.size()) + " field(s)",
                       line_no);
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].empty()) {
        throw ParseError("empty field " + std::to_string(i + 1), line_no);
      }
    }
    RawFact fact;
    fact.relation = std::move(fields.front());
    fact.entities.assign(std::make_move_iterator(fields.begin() + 1),
                         std::make_move_iterator(fields.end()));
    facts.push_back(std::move(fact));
  }
  return facts;
}

inline std::vector<RawFact> parse_facts(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_facts(in);
}

/// Canonical TSV: one fact per line, newline-terminated, no comments.
inline void write_facts(std::ostream& out, std::span<const RawFact> facts) {
  for (const auto& f : facts) {
    out << f.relation;
    for (const auto& e : f.entities) out << '\t' << e;
    out << '\n';
  }
}

/// Dense id <-> name table for one symbol kind.
class SymbolTable {
 public:
  std::uint32_t add(const std::string& name) {
    auto [it, inserted] =
        index_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::optional<std::uint32_t> lookup(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct Vocabulary {
  SymbolTable entities;
  SymbolTable relations;

  std::size_t entity_count() const noexcept { return entities.size(); }
  std::size_t relation_count() const noexcept { return relations.size(); }
};

struct Fact {
  RelationId relation = 0;
  std::vector<EntityId> entities;

  std::size_t arity() const noexcept { return entities.size(); }
  bool operator==(const Fact&) const = default;
  auto operator<=>(const Fact&) const = default;
};

enum class Split { kTrain, kValid, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw UsageError("unknown split '" + std::string(name) +
                   "' (valid splits: train, valid, test)");
}

struct Dataset {
  Vocabulary vocabulary;
  std::vector<Fact> train;
  std::vector<Fact> valid;
  std::vector<Fact> test;
  std::size_t max_arity = 0;

  const std::vector<Fact>& split(Split s) const {
    switch (s) {
      case Split::kTrain: return train;
      case Split::kValid: return valid;
      case Split::kTest: return test;
    }
    return test;
  }

  std::set<std::size_t> arities() const {
    std::set<std::size_t> out;
    for (const auto* part : {&train, &valid, &test})
      for (const auto& f : *part) out.insert(f.arity());
    return out;
  }

  RawFact to_raw(const Fact& f) const {
    RawFact raw;
    raw.relation = vocabulary.relations.name(f.relation);
    raw.entities.reserve(f.arity());
    for (auto e : f.entities) raw.entities.push_back(vocabulary.entities.name(e));
    return raw;
  }

  std::vector<RawFact> to_raw(std::span<const Fact> facts) const {
    std::vector<RawFact> out;
    out.reserve(facts.size());
    for (const auto& f : facts) out.push_back(to_raw(f));
    return out;
  }
};

struct DatasetOptions {
  // Fraction of train carved out as valid when no valid split is given.
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
  // Symbols of valid/test must occur in the train file (or in `base`).
  bool strict = true;
  // Vocabulary to start from; its ids are kept and its symbols count as known.
  const Vocabulary* base = nullptr;
};

/// Builds vocabularies (ids by first appearance: train, valid, test) and
/// converts every split. Throws DataError on unseen symbols in strict mode
/// and when valid/test contain an arity absent from train.
inline Dataset build_dataset(std::span<const RawFact> raw_train,
                             std::optional<std::span<const RawFact>> raw_valid,
                             std::span<const RawFact> raw_test,
                             const DatasetOptions& options = {}) {
  if (raw_train.empty()) throw DataError("train split is empty");
  if (!(options.holdout_fraction >= 0.0 && options.holdout_fraction < 1.0)) {
    throw UsageError("holdout fraction must lie in [0, 1)");
  }

  Dataset ds;
  auto& vocab = ds.vocabulary;
  if (options.base) vocab = *options.base;
  for (const auto& f : raw_train) {
    vocab.relations.add(f.relation);
    for (const auto& e : f.entities) vocab.entities.add(e);
  }

  if (options.strict) {
    std::set<std::string> unseen;
    auto check = [&](std::span<const RawFact> part) {
      for (const auto& f : part) {
        if (!vocab.relations.lookup(f.relation)) unseen.insert("relation " + f.relation);
        for (const auto& e : f.entities)
          if (!vocab.entities.lookup(e)) unseen.insert("entity " + e);
      }
    };
    if (raw_valid) check(*raw_valid);
    check(raw_test);
    if (!unseen.empty()) {
      std::string msg = "symbols absent from train (strict vocabulary):";
      std::size_t shown = 0;
      for (const auto& s : unseen) {
        if (shown++ == 20) {
          msg += " ... (" + std::to_string(unseen.size()) + " total)";
          break;
        }
        msg += " " + s;
      }
      throw DataError(msg);
    }
  }

  auto convert = [&vocab](const RawFact& raw) {
    Fact f;
    f.relation = vocab.relations.add(raw.relation);
    f.entities.reserve(raw.entities.size());
    for (const auto& e : raw.entities) f.entities.push_back(vocab.entities.add(e));
    return f;
  };

  std::vector<Fact> train;
  train.reserve(raw_train.size());
  for (const auto& f : raw_train) train.push_back(convert(f));

  if (raw_valid) {
    ds.train = std::move(train);
    for (const auto& f : *raw_valid) ds.valid.push_back(convert(f));
  } else {
    const auto holdout = static_cast<std::size_t>(
        std::floor(options.holdout_fraction * static_cast<double>(train.size()) + 1e-9));
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = make_rng(options.seed, Stream::kHoldout);
    shuffle(order.begin(), order.end(), rng);
    std::vector<bool> held(train.size(), false);
    for (std::size_t i = 0; i < holdout; ++i) held[order[i]] = true;
    for (std::size_t i = 0; i < train.size(); ++i) {
      (held[i] ? ds.valid : ds.train).push_back(std::move(train[i]));
    }
  }
  for (const auto& f : raw_test) ds.test.push_back(convert(f));

  std::set<std::size_t> train_arities;
  for (const auto& f : ds.train) train_arities.insert(f.arity());
  for (const auto* part : {&ds.valid, &ds.test}) {
    for (const auto& f : *part) {
      if (!train_arities.count(f.arity())) {
        throw DataError("arity " + std::to_string(f.arity()) +
                        " occurs in valid/test but not in train");
      }
    }
  }
  for (const auto* part : {&ds.train, &ds.valid, &ds.test})
    for (const auto& f : *part) ds.max_arity = std::max(ds.max_arity, f.arity());
  return ds;
}

/// Map from (relation, tuple with one hole, hole position) to every entity
/// known to fill that hole in train, valid or test.
class FilterIndex {
 public:
  FilterIndex() = default;

  explicit FilterIndex(const Dataset& ds) {
    for (const auto* part : {&ds.train, &ds.valid, &ds.test})
      for (const auto& f : *part) add(f);
    for (auto& [key, fillers] : map_) {
      std::sort(fillers.begin(), fillers.end());
      fillers.erase(std::unique(fillers.begin(), fillers.end()), fillers.end());
    }
  }

  /// Sorted known-true fillers at `position` (0-based) of `fact`.
  std::span<const EntityId> known(const Fact& fact, std::size_t position) const {
    const auto it = map_.find(make_key(fact, position));
    if (it == map_.end()) return {};
    return it->second;
  }

  bool contains(const Fact& fact, std::size_t position, EntityId e) const {
    const auto fillers = known(fact, position);
    return std::binary_search(fillers.begin(), fillers.end(), e);
  }

  std::size_t size() const noexcept { return map_.size(); }

 private:
  using Key = std::vector<std::int64_t>;

  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      std::uint64_t h = 1469598103934665603ull;
      for (auto v : k) {
        h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        h *= 1099511628211ull;
      }
      return static_cast<std::size_t>(h);
    }
  };

  static Key make_key(const Fact& fact, std::size_t position) {
    Key key;
    key.reserve(fact.arity() + 2);
    key.push_back(fact.relation);
    key.push_back(static_cast<std::int64_t>(position));
    for (std::size_t i = 0; i < fact.arity(); ++i)
      key.push_back(i == position ? -1 : static_cast<std::int64_t>(fact.entities[i]));
    return key;
  }

  void add(const Fact& f) {
    for (std::size_t p = 0; p < f.arity(); ++p) map_[make_key(f, p)].push_back(f.entities[p]);
  }

  std::unordered_map<Key, std::vector<EntityId>, KeyHash> map_;
};

inline FilterIndex build_filter_index(const Dataset& ds) { return FilterIndex(ds); }

/// Partition by arity; order within each group follows the input.
inline std::map<std::size_t, std::vector<Fact>> group_by_arity(std::span<const Fact> facts) {
  std::map<std::size_t, std::vector<Fact>> groups;
  for (const auto& f : facts) groups[f.arity()].push_back(f);
  return groups;
}

/// Keeps only facts of the given arity.
inline std::vector<RawFact> filter_arity(std::span<const RawFact> facts, std::size_t arity) {
  std::vector<RawFact> out;
  for (const auto& f : facts)
    if (f.entities.size() == arity) out.push_back(f);
  return out;
}

// Dataset directories hold train.tsv, test.tsv and optionally valid.tsv,
// entities.txt and relations.txt (one name per line, in id order).

inline std::vector<RawFact> read_fact_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open fact file: " + path.string());
  try {
    return parse_facts(in);
  } catch (const ParseError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_fact_file(const std::filesystem::path& path, std::span<const RawFact> facts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  write_facts(out, facts);
}

namespace detail {

inline void read_symbols(const std::filesystem::path& path, SymbolTable& table) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) table.add(line);
  }
}

inline void write_symbols(const std::filesystem::path& path, const SymbolTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  for (const auto& name : table.names()) out << name << '\n';
}

}  // namespace detail

inline Dataset load_dataset_dir(const std::filesystem::path& dir,
                                const DatasetOptions& options = {}) {
  const auto train = read_fact_file(dir / "train.tsv");
  const auto test = read_fact_file(dir / "test.tsv");
  Vocabulary saved;
  DatasetOptions opt = options;
  if (!opt.base && std::filesystem::exists(dir / "entities.txt") &&
      std::filesystem::exists(dir / "relations.txt")) {
    detail::read_symbols(dir / "entities.txt", saved.entities);
    detail::read_symbols(dir / "relations.txt", saved.relations);
    opt.base = &saved;
  }
  if (std::filesystem::exists(dir / "valid.tsv")) {
    const auto valid = read_fact_file(dir / "valid.tsv");
    return build_dataset(train, std::span<const RawFact>(valid), test, opt);
  }
  return build_dataset(train, std::nullopt, test, opt);
}

inline void save_dataset_dir(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_fact_file(dir / "train.tsv", ds.to_raw(ds.train));
  write_fact_file(dir / "valid.tsv", ds.to_raw(ds.valid));
  write_fact_file(dir / "test.tsv", ds.to_raw(ds.test));
  detail::write_symbols(dir / "entities.txt", ds.vocabulary.entities);
  detail::write_symbols(dir / "relations.txt", ds.vocabulary.relations);
}

}  // namespace sparsecore
