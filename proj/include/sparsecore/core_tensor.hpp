#pragma once

// Block-sparse core tensors. For a fact of arity n the first m = min(n, M)
// embedding segments take part, and the core is cut into K = m^(n+1) blocks,
// one per segment combination (j_r, j_1, ..., j_n). Every block is a
// super-diagonal tensor scaled by a code in {-1, 0, +1}, so a block reduces
// to code * sum_t r^(j_r)[t] * e_1^(j_1)[t] * ... * e_n^(j_n)[t].
//
// Block order is row-major over (j_r, j_1, ..., j_n) with j_r slowest and all
// segment indices 0-based in code.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sparsecore/embeddings.hpp"
#include "sparsecore/error.hpp"
#include "sparsecore/kb_data.hpp"

namespace sparsecore {

/// Choice of -I, I_0 or +I for one block.
enum class BlockCode : std::int8_t { kNegative = -1, kZero = 0, kPositive = 1 };

inline std::size_t segments_used(std::size_t arity, std::size_t segment_count) {
  return std::min(arity, segment_count);
}

/// K = min(n, M)^(n+1).
inline std::size_t block_count(std::size_t arity, std::size_t segment_count) {
  const std::size_t m = segments_used(arity, segment_count);
  std::size_t k = 1;
  for (std::size_t i = 0; i <= arity; ++i) k *= m;
  return k;
}

/// Block index -> (j_r, j_1, ..., j_n).
inline std::vector<std::size_t> block_multi_index(std::size_t block, std::size_t arity,
                                                  std::size_t m) {
  std::vector<std::size_t> idx(arity + 1);
  for (std::size_t q = arity + 1; q-- > 0;) {
    idx[q] = block % m;
    block /= m;
  }
  return idx;
}

inline std::size_t block_index(std::span<const std::size_t> multi_index, std::size_t m) {
  std::size_t k = 0;
  for (auto j : multi_index) k = k * m + j;
  return k;
}

/// Codes of one arity's core. Codes are kept as plain integers so that a
/// malformed assignment read from disk can be represented and reported by
/// validate(); scoring compiles through SparseCore, which rejects it.
struct CoreAssignment {
  std::size_t arity = 2;
  std::size_t segment_count = 1;
  std::vector<int> codes;

  CoreAssignment() = default;
  CoreAssignment(std::size_t n, std::size_t M)
      : arity(n), segment_count(M), codes(block_count(n, M), 0) {}
  CoreAssignment(std::size_t n, std::size_t M, std::vector<int> c)
      : arity(n), segment_count(M), codes(std::move(c)) {}

  std::size_t segments() const { return segments_used(arity, segment_count); }
  std::size_t blocks() const { return block_count(arity, segment_count); }

  int code_at(std::span<const std::size_t> multi_index) const {
    return codes.at(block_index(multi_index, segments()));
  }
  void set(std::span<const std::size_t> multi_index, int code) {
    codes.at(block_index(multi_index, segments())) = code;
  }

  std::size_t nonzero_count() const {
    std::size_t n = 0;
    for (int c : codes) n += (c != 0);
    return n;
  }

  bool operator==(const CoreAssignment&) const = default;
};

struct Violation {
  enum class Kind { kArity, kSegments, kLength, kDomain };
  Kind kind;
  std::size_t index = 0;
  std::string message;
};

/// Structural check of an assignment; never throws.
inline std::vector<Violation> validate(const CoreAssignment& a) {
  std::vector<Violation> out;
  if (a.arity < 2) {
    out.push_back({Violation::Kind::kArity, 0,
                   "arity must be >= 2, got " + std::to_string(a.arity)});
  }
  if (a.segment_count < 1) {
    out.push_back({Violation::Kind::kSegments, 0, "segment count must be >= 1"});
    return out;
  }
  const std::size_t expected = a.arity < 2 ? 0 : a.blocks();
  if (a.arity >= 2 && a.codes.size() != expected) {
    out.push_back({Violation::Kind::kLength, expected,
                   "arity " + std::to_string(a.arity) + ": expected " + std::to_string(expected) +
                       " codes, got " + std::to_string(a.codes.size())});
  }
  for (std::size_t i = 0; i < a.codes.size(); ++i) {
    if (a.codes[i] < -1 || a.codes[i] > 1) {
      out.push_back({Violation::Kind::kDomain, i,
                     "arity " + std::to_string(a.arity) + ": code " +
                         std::to_string(a.codes[i]) + " at index " + std::to_string(i) +
                         " is outside {-1, 0, 1}"});
    }
  }
  return out;
}

inline std::string describe(std::span<const Violation> violations) {
  std::string s;
  for (const auto& v : violations) {
    if (!s.empty()) s += "; ";
    s += v.message;
  }
  return s;
}

/// One core per arity 2..max_arity, all sharing the segment count.
class ArchitectureSet {
 public:
  ArchitectureSet() = default;
  ArchitectureSet(std::size_t max_arity, std::size_t segment_count)
      : max_arity_(max_arity), segment_count_(segment_count) {}

  std::size_t max_arity() const noexcept { return max_arity_; }
  std::size_t segment_count() const noexcept { return segment_count_; }

  void set(CoreAssignment a) {
    if (a.segment_count != segment_count_) {
      throw DataError("assignment for arity " + std::to_string(a.arity) + " uses " +
                      std::to_string(a.segment_count) + " segments, architecture uses " +
                      std::to_string(segment_count_));
    }
    if (a.arity > max_arity_) max_arity_ = a.arity;
    const auto n = a.arity;
    cores_.insert_or_assign(n, std::move(a));
  }

  bool has(std::size_t arity) const { return cores_.count(arity) != 0; }

  const CoreAssignment& at(std::size_t arity) const {
    const auto it = cores_.find(arity);
    if (it == cores_.end()) {
      throw DataError("architecture has no core for arity " + std::to_string(arity));
    }
    return it->second;
  }
  CoreAssignment& at(std::size_t arity) {
    return const_cast<CoreAssignment&>(std::as_const(*this).at(arity));
  }

  const std::map<std::size_t, CoreAssignment>& cores() const noexcept { return cores_; }

  /// Violations of every core plus missing arities in 2..max_arity.
  std::vector<Violation> validate() const {
    std::vector<Violation> out;
    for (std::size_t n = 2; n <= max_arity_; ++n) {
      if (!has(n)) {
        out.push_back({Violation::Kind::kArity, n,
                       "missing core for arity " + std::to_string(n)});
      }
    }
    for (const auto& [n, a] : cores_) {
      auto v = sparsecore::validate(a);
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }

  /// Throws DataError naming the first arity in `arities` without a core.
  void require(const std::set<std::size_t>& arities) const {
    for (auto n : arities) (void)at(n);
  }

  bool operator==(const ArchitectureSet&) const = default;

 private:
  std::size_t max_arity_ = 0;
  std::size_t segment_count_ = 1;
  std::map<std::size_t, CoreAssignment> cores_;
};

/// Nonzero blocks of a validated assignment, ready for scoring.
class SparseCore {
 public:
  struct Block {
    double code;
    std::size_t first;  // offset into the segment-index table
  };

  SparseCore() = default;

  explicit SparseCore(const CoreAssignment& a) : arity_(a.arity), m_(a.segments()) {
    if (auto v = validate(a); !v.empty()) throw DataError("invalid core: " + describe(v));
    for (std::size_t k = 0; k < a.codes.size(); ++k) {
      if (a.codes[k] == 0) continue;
      blocks_.push_back({static_cast<double>(a.codes[k]), segments_.size()});
      const auto idx = block_multi_index(k, arity_, m_);
      segments_.insert(segments_.end(), idx.begin(), idx.end());
    }
  }

  std::size_t arity() const noexcept { return arity_; }
  std::size_t segments() const noexcept { return m_; }
  std::span<const Block> blocks() const noexcept { return blocks_; }

  /// Segment indices (j_r, j_1, ..., j_n) of a block.
  std::span<const std::size_t> segment_indices(const Block& b) const {
    return {segments_.data() + b.first, arity_ + 1};
  }

 private:
  std::size_t arity_ = 0;
  std::size_t m_ = 0;
  std::vector<Block> blocks_;
  std::vector<std::size_t> segments_;
};

/// Compiled cores for every arity of an ArchitectureSet.
class CompiledArchitecture {
 public:
  CompiledArchitecture() = default;
  explicit CompiledArchitecture(const ArchitectureSet& set) {
    for (const auto& [n, a] : set.cores()) cores_.emplace(n, SparseCore(a));
  }

  const SparseCore& at(std::size_t arity) const {
    const auto it = cores_.find(arity);
    if (it == cores_.end()) {
      throw DataError("architecture has no core for arity " + std::to_string(arity));
    }
    return it->second;
  }

 private:
  std::map<std::size_t, SparseCore> cores_;
};

namespace detail {

inline void check_fact(const SparseCore& core, const SegmentedEmbeddings& emb, const Fact& fact) {
  if (fact.arity() != core.arity()) {
    throw DataError("fact arity " + std::to_string(fact.arity()) +
                    " does not match core arity " + std::to_string(core.arity()));
  }
  SegmentedEmbeddings::check_segmentation(emb.dimension(), emb.segment_count);
}

}  // namespace detail

/// Sum over nonzero blocks of code * <r^(j_r), e_1^(j_1), ..., e_n^(j_n)>.
inline double score_fact(const SparseCore& core, const SegmentedEmbeddings& emb,
                         const Fact& fact) {
  detail::check_fact(core, emb, fact);
  const std::size_t len = emb.segment_length();
  const std::size_t n = fact.arity();
  const double* rel = emb.relations.row(fact.relation).data();
  std::vector<const double*> ent(n);
  for (std::size_t i = 0; i < n; ++i) ent[i] = emb.entities.row(fact.entities[i]).data();

  double total = 0.0;
  for (const auto& b : core.blocks()) {
    const auto j = core.segment_indices(b);
    const double* r = rel + j[0] * len;
    double acc = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      double prod = r[t];
      for (std::size_t i = 0; i < n; ++i) prod *= ent[i][j[i + 1] * len + t];
      acc += prod;
    }
    total += b.code * acc;
  }
  return total;
}

inline double score_fact(const CoreAssignment& a, const SegmentedEmbeddings& emb,
                         const Fact& fact) {
  if (a.segment_count != emb.segment_count) {
    throw DataError("assignment segment count differs from embedding segment count");
  }
  return score_fact(SparseCore(a), emb, fact);
}

enum class Preset { kCp, kComplex, kSimple };

inline Preset parse_preset(std::string_view name) {
  if (name == "cp" || name == "distmult") return Preset::kCp;
  if (name == "complex") return Preset::kComplex;
  if (name == "simple") return Preset::kSimple;
  throw UsageError("unknown preset '" + std::string(name) +
                   "' (expected cp, distmult, complex or simple)");
}

/// Fixed sparsity patterns of classical models. cp (= distmult) puts +1 on
/// the super-diagonal blocks j_r = j_1 = ... = j_n. complex treats segment 0
/// as the real and segment 1 as the imaginary part; simple treats them as
/// head/tail roles without the 1/2 factor.
inline CoreAssignment preset(Preset p, std::size_t arity, std::size_t segment_count) {
  if (arity < 2 || segment_count < 1) {
    throw UsageError("preset needs arity >= 2 and at least one segment");
  }
  CoreAssignment a(arity, segment_count);
  const std::size_t m = a.segments();
  switch (p) {
    case Preset::kCp:
      for (std::size_t j = 0; j < m; ++j) {
        std::vector<std::size_t> idx(arity + 1, j);
        a.set(idx, 1);
      }
      return a;
    case Preset::kComplex:
    case Preset::kSimple:
      if (arity != 2 || segment_count != 2) {
        throw UsageError(std::string(p == Preset::kComplex ? "complex" : "simple") +
                         " preset requires arity 2 and 2 segments");
      }
      if (p == Preset::kComplex) {
        a.set(std::vector<std::size_t>{0, 0, 0}, 1);
        a.set(std::vector<std::size_t>{0, 1, 1}, 1);
        a.set(std::vector<std::size_t>{1, 0, 1}, 1);
        a.set(std::vector<std::size_t>{1, 1, 0}, -1);
      } else {
        a.set(std::vector<std::size_t>{0, 0, 1}, 1);
        a.set(std::vector<std::size_t>{1, 1, 0}, 1);
      }
      return a;
  }
  return a;
}

inline CoreAssignment preset(std::string_view name, std::size_t arity, std::size_t segment_count) {
  return preset(parse_preset(name), arity, segment_count);
}

/// The same preset for every arity 2..max_arity.
inline ArchitectureSet preset_architecture(Preset p, std::size_t max_arity,
                                           std::size_t segment_count) {
  ArchitectureSet set(max_arity, segment_count);
  for (std::size_t n = 2; n <= max_arity; ++n) set.set(preset(p, n, segment_count));
  return set;
}

/// All-zero cores for arities 2..max_arity.
inline ArchitectureSet zero_architecture(std::size_t max_arity, std::size_t segment_count) {
  ArchitectureSet set(max_arity, segment_count);
  for (std::size_t n = 2; n <= max_arity; ++n) set.set(CoreAssignment(n, segment_count));
  return set;
}

struct ExpressiveModel {
  SegmentedEmbeddings embeddings;
  ArchitectureSet architecture;
};

/// Exact-representation construction with one embedding coordinate per fact:
/// coordinate k of fact k's relation and entities is 1, every other
/// coordinate is 0, one segment, CP cores. Every fact then scores >= 1 and a
/// tuple whose symbols never appear together in one fact scores 0.
inline ExpressiveModel lemma1_construct(std::span<const Fact> facts, std::size_t n_entities,
                                       std::size_t n_relations) {
  if (facts.empty()) throw DataError("cannot build the exact-representation model from no facts");
  std::size_t max_arity = 2;
  for (const auto& f : facts) {
    if (f.arity() < 2) throw DataError("fact arity must be >= 2");
    if (f.relation >= n_relations) throw DataError("relation id out of range");
    for (auto e : f.entities)
      if (e >= n_entities) throw DataError("entity id out of range");
    max_arity = std::max(max_arity, f.arity());
  }
  ExpressiveModel model{SegmentedEmbeddings(n_entities, n_relations, facts.size(), 1),
                        preset_architecture(Preset::kCp, max_arity, 1)};
  for (std::size_t k = 0; k < facts.size(); ++k) {
    model.embeddings.relations(facts[k].relation, k) = 1.0;
    for (auto e : facts[k].entities) model.embeddings.entities(e, k) = 1.0;
  }
  return model;
}

}  // namespace sparsecore
