#pragma once

// Synthetic datasets with a hidden ground-truth architecture, used to check
// that search recovers the architecture that generated the data.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "sparsecore/core_tensor.hpp"
#include "sparsecore/embeddings.hpp"
#include "sparsecore/error.hpp"
#include "sparsecore/kb_data.hpp"
#include "sparsecore/random.hpp"

namespace sparsecore {

struct PlantedSpec {
  std::size_t entity_count = 100;
  std::size_t relation_count = 4;
  std::set<std::size_t> arities = {2};
  std::size_t dimension = 16;
  std::size_t segment_count = 2;
  ArchitectureSet truth;  // one core per arity in `arities`
  std::size_t facts_per_arity = 1000;
  double margin = 0.1;  // tau: a sampled tuple is a fact iff score >= margin
  std::uint64_t seed = 0;
  std::uint64_t max_draws = 10'000'000;  // per arity

  void check() const {
    SegmentedEmbeddings::check_segmentation(dimension, segment_count);
    if (entity_count == 0 || relation_count == 0 || arities.empty() || facts_per_arity == 0) {
      throw UsageError("planted spec needs entities, relations, arities and facts");
    }
    if (truth.segment_count() != segment_count) {
      throw UsageError("ground-truth architecture uses a different segment count");
    }
    for (auto n : arities) {
      if (n < 2) throw UsageError("arity must be >= 2");
      if (auto v = validate(truth.at(n)); !v.empty()) {
        throw DataError("invalid ground truth: " + describe(v));
      }
    }
  }
};

struct PlantedDataset {
  Dataset dataset;
  ArchitectureSet truth;
  SegmentedEmbeddings truth_embeddings;
};

/// Draws Gaussian embeddings (sigma = 1/sqrt(d)), then for each arity samples
/// distinct uniform tuples and keeps those scoring >= margin under the ground
/// truth until `facts_per_arity` are found. Facts of each arity are split
/// 80/10/10 into train/valid/test in draw order. Entity and relation names
/// are e<id> and r<id>, so ids coincide with the generator's.
inline PlantedDataset generate_planted(const PlantedSpec& spec) {
  spec.check();
  PlantedDataset out;
  out.truth = spec.truth;
  auto rng = make_rng(spec.seed, Stream::kPlanted);

  out.truth_embeddings = SegmentedEmbeddings(spec.entity_count, spec.relation_count,
                                             spec.dimension, spec.segment_count);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(spec.dimension));
  for (auto* m : {&out.truth_embeddings.entities, &out.truth_embeddings.relations})
    for (double& v : m->data()) v = sigma * standard_normal(rng);

  auto& ds = out.dataset;
  for (std::size_t e = 0; e < spec.entity_count; ++e) ds.vocabulary.entities.add("e" + std::to_string(e));
  for (std::size_t r = 0; r < spec.relation_count; ++r) ds.vocabulary.relations.add("r" + std::to_string(r));

  for (auto n : spec.arities) {
    const SparseCore core(spec.truth.at(n));
    std::set<Fact> seen;
    std::vector<Fact> positives;
    Fact f;
    f.entities.resize(n);
    std::uint64_t draws = 0;
    while (positives.size() < spec.facts_per_arity) {
      if (draws++ >= spec.max_draws) {
        throw NumericError("planted generation found only " + std::to_string(positives.size()) +
                           " of " + std::to_string(spec.facts_per_arity) + " arity-" +
                           std::to_string(n) + " facts in " + std::to_string(spec.max_draws) +
                           " draws; try a smaller margin");
      }
      f.relation = static_cast<RelationId>(uniform_index(rng, spec.relation_count));
      for (auto& e : f.entities) e = static_cast<EntityId>(uniform_index(rng, spec.entity_count));
      if (score_fact(core, out.truth_embeddings, f) < spec.margin) continue;
      if (seen.insert(f).second) positives.push_back(f);
    }
    const std::size_t n_train = positives.size() * 8 / 10;
    const std::size_t n_valid = positives.size() / 10;
    for (std::size_t i = 0; i < positives.size(); ++i) {
      auto& dst = i < n_train ? ds.train : (i < n_train + n_valid ? ds.valid : ds.test);
      dst.push_back(positives[i]);
    }
    ds.max_arity = std::max(ds.max_arity, n);
  }
  return out;
}

}  // namespace sparsecore
