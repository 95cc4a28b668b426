#pragma once

// Candidate scoring, the n-ary multi-class log loss, its analytic gradient
// and the Adam optimizer over segmented embeddings.
//
// Scoring every candidate for a hole at position p goes through a context
// vector c of length m*L (L = d/M): for each nonzero block, segment j_p of c
// accumulates code * r^(j_r) (.) prod_{i != p} e_i^(j_i). A candidate's score
// is then the inner product of its first m segments with c. Because the
// score is multilinear, the same context drives the backward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sparsecore/core_tensor.hpp"
#include "sparsecore/embeddings.hpp"
#include "sparsecore/error.hpp"
#include "sparsecore/kb_data.hpp"

namespace sparsecore {

/// Gradient congruent to a SegmentedEmbeddings.
struct EmbeddingGradient {
  Matrix entities;
  Matrix relations;

  EmbeddingGradient() = default;
  explicit EmbeddingGradient(const SegmentedEmbeddings& emb)
      : entities(emb.entities.rows(), emb.entities.cols()),
        relations(emb.relations.rows(), emb.relations.cols()) {}

  void zero() {
    entities.fill(0.0);
    relations.fill(0.0);
  }

  void scale(double s) {
    for (auto* m : {&entities, &relations})
      for (double& v : m->data()) v *= s;
  }

  void add(const EmbeddingGradient& o) {
    auto a = entities.data();
    auto b = o.entities.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    auto c = relations.data();
    auto d = o.relations.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += d[i];
  }
};

namespace detail {

inline void check_position(const Fact& fact, std::size_t position) {
  if (position >= fact.arity()) {
    throw UsageError("hole position " + std::to_string(position) + " out of range for arity " +
                     std::to_string(fact.arity()));
  }
}

// Context vector for a hole at `position`; `ctx` is resized to m * L.
inline void hole_context(const SparseCore& core, const SegmentedEmbeddings& emb, const Fact& fact,
                         std::size_t position, std::vector<double>& ctx) {
  const std::size_t len = emb.segment_length();
  const std::size_t n = fact.arity();
  ctx.assign(core.segments() * len, 0.0);
  const double* rel = emb.relations.row(fact.relation).data();
  for (const auto& b : core.blocks()) {
    const auto j = core.segment_indices(b);
    const double* r = rel + j[0] * len;
    double* out = ctx.data() + j[position + 1] * len;
    for (std::size_t t = 0; t < len; ++t) {
      double prod = b.code * r[t];
      for (std::size_t i = 0; i < n; ++i) {
        if (i != position) prod *= emb.entities(fact.entities[i], j[i + 1] * len + t);
      }
      out[t] += prod;
    }
  }
}

inline void candidate_scores(const SegmentedEmbeddings& emb, std::span<const double> ctx,
                             std::vector<double>& scores) {
  const std::size_t n_e = emb.entity_count();
  scores.resize(n_e);
  for (std::size_t e = 0; e < n_e; ++e) {
    const double* row = emb.entities.row(e).data();
    double s = 0.0;
    for (std::size_t x = 0; x < ctx.size(); ++x) s += row[x] * ctx[x];
    scores[e] = s;
  }
}

// Backpropagates an upstream vector `upstream` (dL/dctx, length m * L) into
// the relation row and the entity rows of every position except `position`.
inline void backprop_context(const SparseCore& core, const SegmentedEmbeddings& emb,
                             const Fact& fact, std::size_t position,
                             std::span<const double> upstream, EmbeddingGradient& grad) {
  const std::size_t len = emb.segment_length();
  const std::size_t n = fact.arity();
  // participants: relation first, then the entities other than the hole
  std::vector<const double*> vals(n);
  std::vector<double*> outs(n);
  for (const auto& b : core.blocks()) {
    const auto j = core.segment_indices(b);
    vals[0] = emb.relations.row(fact.relation).data() + j[0] * len;
    outs[0] = grad.relations.row(fact.relation).data() + j[0] * len;
    std::size_t q = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == position) continue;
      vals[q] = emb.entities.row(fact.entities[i]).data() + j[i + 1] * len;
      outs[q] = grad.entities.row(fact.entities[i]).data() + j[i + 1] * len;
      ++q;
    }
    const double* w = upstream.data() + j[position + 1] * len;
    for (std::size_t t = 0; t < len; ++t) {
      const double wt = b.code * w[t];
      if (wt == 0.0) continue;
      for (std::size_t a = 0; a < n; ++a) {
        double prod = wt;
        for (std::size_t c = 0; c < n; ++c)
          if (c != a) prod *= vals[c][t];
        outs[a][t] += prod;
      }
    }
  }
}

inline double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

// Loss of one fact; adds `weight` * dloss/dembeddings into `grad` when given.
inline double fact_loss(const SparseCore& core, const SegmentedEmbeddings& emb, const Fact& fact,
                        EmbeddingGradient* grad, double weight) {
  check_fact(core, emb, fact);
  std::vector<double> ctx;
  std::vector<double> scores;
  std::vector<double> upstream;
  const std::size_t width = core.segments() * emb.segment_length();
  double loss = 0.0;
  for (std::size_t p = 0; p < fact.arity(); ++p) {
    hole_context(core, emb, fact, p, ctx);
    candidate_scores(emb, ctx, scores);
    const EntityId truth = fact.entities[p];
    const double lse = log_sum_exp(scores);
    loss += lse - scores[truth];
    if (grad == nullptr) continue;

    // softmax over candidates, reusing `scores`
    for (double& s : scores) s = std::exp(s - lse);
    upstream.assign(width, 0.0);
    for (std::size_t e = 0; e < scores.size(); ++e) {
      const double pe = scores[e];
      if (pe == 0.0) continue;
      const double* row = emb.entities.row(e).data();
      double* g = grad->entities.row(e).data();
      for (std::size_t x = 0; x < width; ++x) {
        g[x] += weight * pe * ctx[x];
        upstream[x] += pe * row[x];
      }
    }
    {
      const double* row = emb.entities.row(truth).data();
      double* g = grad->entities.row(truth).data();
      for (std::size_t x = 0; x < width; ++x) {
        g[x] -= weight * ctx[x];
        upstream[x] = weight * (upstream[x] - row[x]);
      }
    }
    backprop_context(core, emb, fact, p, upstream, *grad);
  }
  return loss;
}

}  // namespace detail

/// Scores of the fact with `position` (0-based) replaced by every entity.
inline std::vector<double> score_all_candidates(const SparseCore& core,
                                                const SegmentedEmbeddings& emb, const Fact& fact,
                                                std::size_t position) {
  detail::check_fact(core, emb, fact);
  detail::check_position(fact, position);
  std::vector<double> ctx;
  std::vector<double> scores;
  detail::hole_context(core, emb, fact, position, ctx);
  detail::candidate_scores(emb, ctx, scores);
  return scores;
}

inline std::vector<double> score_all_candidates(const CoreAssignment& a,
                                                const SegmentedEmbeddings& emb, const Fact& fact,
                                                std::size_t position) {
  return score_all_candidates(SparseCore(a), emb, fact, position);
}

/// Sum over entity positions p of logsumexp(candidate scores at p) - score(fact).
inline double multiclass_log_loss(const SparseCore& core, const SegmentedEmbeddings& emb,
                                  const Fact& fact) {
  return detail::fact_loss(core, emb, fact, nullptr, 0.0);
}

inline double multiclass_log_loss(const CoreAssignment& a, const SegmentedEmbeddings& emb,
                                  const Fact& fact) {
  return multiclass_log_loss(SparseCore(a), emb, fact);
}

/// Adds the gradient of the summed loss over `batch` to `grad`, scaled by
/// `weight`; returns the summed loss.
inline double accumulate_gradient(const CompiledArchitecture& arch, const SegmentedEmbeddings& emb,
                                  std::span<const Fact> batch, EmbeddingGradient& grad,
                                  double weight = 1.0) {
  double loss = 0.0;
  for (const auto& f : batch) loss += detail::fact_loss(arch.at(f.arity()), emb, f, &grad, weight);
  return loss;
}

/// Mean over the given architecture samples of the gradient of the summed
/// batch loss. Returns the mean summed loss.
inline double grad_embeddings_mc(std::span<const CompiledArchitecture> samples,
                                 const SegmentedEmbeddings& emb, std::span<const Fact> batch,
                                 EmbeddingGradient& grad) {
  if (samples.empty()) throw UsageError("at least one architecture sample is required");
  grad = EmbeddingGradient(emb);
  const double weight = 1.0 / static_cast<double>(samples.size());
  double loss = 0.0;
  for (const auto& arch : samples) loss += accumulate_gradient(arch, emb, batch, grad, weight);
  return loss * weight;
}

/// A fixed architecture used `samples` times, which is how a derived
/// architecture is trained.
inline double grad_embeddings_mc(const CompiledArchitecture& arch, std::size_t samples,
                                 const SegmentedEmbeddings& emb, std::span<const Fact> batch,
                                 EmbeddingGradient& grad) {
  if (samples == 0) throw UsageError("at least one architecture sample is required");
  grad = EmbeddingGradient(emb);
  const double weight = 1.0 / static_cast<double>(samples);
  double loss = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    loss += accumulate_gradient(arch, emb, batch, grad, weight);
  }
  return loss * weight;
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  EmbeddingGradient first;
  EmbeddingGradient second;

  AdamState() = default;
  explicit AdamState(const SegmentedEmbeddings& emb) : first(emb), second(emb) {}
};

/// Adam with bias correction.
inline void adam_step(SegmentedEmbeddings& emb, const EmbeddingGradient& grad, AdamState& state,
                      double learning_rate) {
  if (!grad.entities.same_shape(emb.entities) || !grad.relations.same_shape(emb.relations)) {
    throw UsageError("gradient shape does not match embeddings");
  }
  if (!state.first.entities.same_shape(emb.entities)) state = AdamState(emb);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](Matrix& param, const Matrix& g, Matrix& m, Matrix& v) {
    auto p = param.data();
    auto gd = g.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * gd[i];
      vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / c1;
      const double vhat = vd[i] / c2;
      p[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  };
  update(emb.entities, grad.entities, state.first.entities, state.second.entities);
  update(emb.relations, grad.relations, state.first.relations, state.second.relations);
}

struct TrainConfig {
  std::size_t dimension = 64;
  std::size_t segment_count = 2;
  double learning_rate = 0.01;
  // Multiplicative learning-rate factor applied once per epoch.
  double decay_rate = 1.0;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  // Architecture samples per gradient estimate.
  std::size_t mc_samples = 2;
  // Validation every `eval_every` epochs; stop after `patience` evaluations
  // without improvement. 0 disables early stopping.
  std::size_t eval_every = 1;
  std::size_t patience = 10;

  void check() const {
    SegmentedEmbeddings::check_segmentation(dimension, segment_count);
    if (!(learning_rate >= 0.0) || !(decay_rate > 0.0) || batch_size == 0 || mc_samples == 0 ||
        eval_every == 0) {
      throw UsageError("training configuration has non-positive values");
    }
  }
};

struct LossReport {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t facts = 0;
};

}  // namespace sparsecore
