#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sparsecore/error.hpp"
#include "sparsecore/random.hpp"

namespace sparsecore {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Entity and relation embeddings whose rows are split into `segment_count`
/// equal contiguous segments.
struct SegmentedEmbeddings {
  Matrix entities;   // n_e x d
  Matrix relations;  // n_r x d
  std::size_t segment_count = 1;

  SegmentedEmbeddings() = default;
  SegmentedEmbeddings(std::size_t n_entities, std::size_t n_relations, std::size_t dimension,
                      std::size_t segments)
      : entities(n_entities, dimension), relations(n_relations, dimension), segment_count(segments) {
    check_segmentation(dimension, segments);
  }

  std::size_t dimension() const noexcept { return entities.cols(); }
  std::size_t segment_length() const noexcept { return dimension() / segment_count; }
  std::size_t entity_count() const noexcept { return entities.rows(); }
  std::size_t relation_count() const noexcept { return relations.rows(); }

  static void check_segmentation(std::size_t dimension, std::size_t segments) {
    if (segments == 0 || dimension == 0 || dimension % segments != 0) {
      throw UsageError("embedding dimension " + std::to_string(dimension) +
                       " is not divisible by segment count " + std::to_string(segments));
    }
  }

  bool all_finite() const {
    for (const auto* m : {&entities, &relations})
      for (double v : m->data())
        if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const SegmentedEmbeddings&) const = default;
};

/// Entries i.i.d. uniform on [-sqrt(6/d), sqrt(6/d)].
inline SegmentedEmbeddings init_embeddings(std::size_t n_entities, std::size_t n_relations,
                                           std::size_t dimension, std::size_t segments,
                                           std::uint64_t seed) {
  SegmentedEmbeddings emb(n_entities, n_relations, dimension, segments);
  const double bound = std::sqrt(6.0 / static_cast<double>(dimension));
  auto rng = make_rng(seed, Stream::kInit);
  for (auto* m : {&emb.entities, &emb.relations})
    for (double& v : m->data()) v = bound * (2.0 * uniform01(rng) - 1.0);
  return emb;
}

}  // namespace sparsecore
