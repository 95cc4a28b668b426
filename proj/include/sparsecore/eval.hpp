#pragma once

// Filtered link-prediction ranking and MRR / Hits@T aggregation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sparsecore/core_tensor.hpp"
#include "sparsecore/error.hpp"
#include "sparsecore/kb_data.hpp"
#include "sparsecore/model.hpp"

namespace sparsecore {

// Optimistic: candidates tied with the truth do not push it down.
// Pessimistic: every tied candidate ranks ahead of the truth.
enum class TiePolicy { kOptimistic, kPessimistic };

/// 1 + number of unfiltered candidates that outscore the truth. `filter`
/// must be sorted; entries other than the truth are removed from ranking.
inline std::size_t filtered_rank(std::span<const double> scores, EntityId truth,
                                 std::span<const EntityId> filter,
                                 TiePolicy policy = TiePolicy::kOptimistic) {
  if (truth >= scores.size()) throw UsageError("true entity is not among the candidates");
  const double target = scores[truth];
  if (std::isnan(target)) throw NumericError("score of the true entity is NaN");
  std::size_t rank = 1;
  auto skip = filter.begin();
  for (std::size_t e = 0; e < scores.size(); ++e) {
    while (skip != filter.end() && *skip < e) ++skip;
    if (e == truth || (skip != filter.end() && *skip == e)) continue;
    const double s = scores[e];
    if (std::isnan(s)) throw NumericError("candidate score is NaN");
    if (s > target || (policy == TiePolicy::kPessimistic && s == target)) ++rank;
  }
  return rank;
}

inline double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw DataError("MRR of an empty rank list");
  double sum = 0.0;
  for (auto r : ranks) sum += 1.0 / static_cast<double>(r);
  return sum / static_cast<double>(ranks.size());
}

inline double hits_at(std::span<const std::size_t> ranks, std::size_t t) {
  if (ranks.empty()) throw DataError("Hits@T of an empty rank list");
  if (t == 0) throw UsageError("Hits@T needs T >= 1");
  std::size_t hit = 0;
  for (auto r : ranks) hit += (r <= t);
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

struct RankingMetrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t count = 0;
};

inline RankingMetrics summarize(std::span<const std::size_t> ranks) {
  return {mrr(ranks), hits_at(ranks, 1), hits_at(ranks, 3), hits_at(ranks, 10), ranks.size()};
}

struct EvalOptions {
  TiePolicy ties = TiePolicy::kOptimistic;
  std::size_t threads = 1;
};

/// Filtered ranks of the truth at each entity position of a fact.
inline void fact_ranks(const SparseCore& core, const SegmentedEmbeddings& emb,
                       const FilterIndex& filter, const Fact& fact, TiePolicy ties,
                       std::span<std::size_t> out) {
  std::vector<double> ctx;
  std::vector<double> scores;
  detail::check_fact(core, emb, fact);
  for (std::size_t p = 0; p < fact.arity(); ++p) {
    detail::hole_context(core, emb, fact, p, ctx);
    detail::candidate_scores(emb, ctx, scores);
    out[p] = filtered_rank(scores, fact.entities[p], filter.known(fact, p), ties);
  }
}

/// One rank per (fact, entity position), in fact order then position order.
inline std::vector<std::size_t> query_ranks(const CompiledArchitecture& arch,
                                            const SegmentedEmbeddings& emb,
                                            std::span<const Fact> facts, const FilterIndex& filter,
                                            const EvalOptions& options = {}) {
  std::vector<std::size_t> offsets(facts.size() + 1, 0);
  for (std::size_t i = 0; i < facts.size(); ++i) offsets[i + 1] = offsets[i] + facts[i].arity();
  for (const auto& f : facts) (void)arch.at(f.arity());
  std::vector<std::size_t> ranks(offsets.back());

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      fact_ranks(arch.at(facts[i].arity()), emb, filter, facts[i], options.ties,
                 std::span(ranks).subspan(offsets[i], facts[i].arity()));
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, facts.size()));
  if (workers == 1) {
    work(0, facts.size());
    return ranks;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (facts.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(facts.size(), w * chunk);
    const std::size_t end = std::min(facts.size(), begin + chunk);
    pool.emplace_back([&, w, begin, end] {
      try {
        work(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return ranks;
}

inline RankingMetrics evaluate(const CompiledArchitecture& arch, const SegmentedEmbeddings& emb,
                               std::span<const Fact> facts, const FilterIndex& filter,
                               const EvalOptions& options = {}) {
  if (facts.empty()) throw DataError("cannot evaluate an empty split");
  const auto ranks = query_ranks(arch, emb, facts, filter, options);
  return summarize(ranks);
}

inline RankingMetrics evaluate(const ArchitectureSet& arch, const SegmentedEmbeddings& emb,
                               const Dataset& ds, const FilterIndex& filter, Split split,
                               const EvalOptions& options = {}) {
  const auto& facts = ds.split(split);
  if (facts.empty()) {
    throw DataError(std::string("cannot evaluate the empty ") + split_name(split) + " split");
  }
  return evaluate(CompiledArchitecture(arch), emb, facts, filter, options);
}

}  // namespace sparsecore
