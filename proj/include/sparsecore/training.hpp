#pragma once

// Mini-batch training of embeddings under a fixed architecture.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sparsecore/core_tensor.hpp"
#include "sparsecore/eval.hpp"
#include "sparsecore/kb_data.hpp"
#include "sparsecore/model.hpp"
#include "sparsecore/random.hpp"

namespace sparsecore {

/// Shuffled mini-batches over a fact list, one permutation per epoch.
class BatchSchedule {
 public:
  BatchSchedule(std::span<const Fact> facts, std::size_t batch_size, std::uint64_t seed)
      : facts_(facts), batch_size_(batch_size), rng_(make_rng(seed, Stream::kShuffle)) {
    order_.resize(facts.size());
  }

  /// Reshuffles for a new epoch and returns the number of batches in it.
  std::size_t start_epoch() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    shuffle(order_.begin(), order_.end(), rng_);
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

  std::vector<Fact> batch(std::size_t b) const {
    std::vector<Fact> out;
    const std::size_t begin = b * batch_size_;
    const std::size_t end = std::min(order_.size(), begin + batch_size_);
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(facts_[order_[i]]);
    return out;
  }

 private:
  std::span<const Fact> facts_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
};

inline double epoch_learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.learning_rate * std::pow(cfg.decay_rate, static_cast<double>(epoch));
}

// Called after every optimizer step with (epoch, step within run, embeddings).
using StepObserver = std::function<void(std::size_t, std::size_t, const SegmentedEmbeddings&)>;

struct TrainResult {
  SegmentedEmbeddings embeddings;
  std::vector<LossReport> history;
  std::vector<double> valid_mrr;  // one entry per validation pass
  std::optional<double> final_valid_mrr;
  bool stopped_early = false;
};

struct TrainOptions {
  // Starting point instead of init_embeddings(seed).
  std::optional<SegmentedEmbeddings> initial;
  EvalOptions eval;
  StepObserver observer;
};

/// Trains embeddings from scratch (or from `options.initial`) under a fixed
/// architecture. Each step averages `mc_samples` copies of the gradient of the
/// summed batch loss. Stops at max_epochs or when validation MRR has not
/// improved for `patience` consecutive validation passes.
inline TrainResult train_fixed(const ArchitectureSet& architecture, const Dataset& ds,
                               const TrainConfig& cfg, const TrainOptions& options = {}) {
  cfg.check();
  architecture.require(ds.arities());
  if (architecture.segment_count() != cfg.segment_count) {
    throw DataError("architecture segment count differs from the training configuration");
  }
  const CompiledArchitecture compiled(architecture);

  TrainResult result;
  result.embeddings = options.initial
                          ? *options.initial
                          : init_embeddings(ds.vocabulary.entity_count(),
                                            ds.vocabulary.relation_count(), cfg.dimension,
                                            cfg.segment_count, cfg.seed);
  auto& emb = result.embeddings;
  if (emb.entity_count() != ds.vocabulary.entity_count() ||
      emb.relation_count() != ds.vocabulary.relation_count()) {
    throw DataError("initial embeddings do not match the dataset vocabulary");
  }

  const bool validate = !ds.valid.empty();
  std::optional<FilterIndex> filter;
  if (validate) filter.emplace(ds);

  AdamState adam(emb);
  EmbeddingGradient grad(emb);
  BatchSchedule schedule(ds.train, cfg.batch_size, cfg.seed);
  double best = -1.0;
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = epoch_learning_rate(cfg, epoch);
    const std::size_t batches = schedule.start_epoch();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = schedule.batch(b);
      loss_sum += grad_embeddings_mc(compiled, cfg.mc_samples, emb, batch, grad);
      adam_step(emb, grad, adam, lr);
      if (options.observer) options.observer(epoch, step, emb);
      ++step;
    }
    if (!std::isfinite(loss_sum)) throw NumericError("training loss became non-finite");
    result.history.push_back(
        {epoch, loss_sum / static_cast<double>(ds.train.size()), ds.train.size()});

    if (validate && (epoch + 1) % cfg.eval_every == 0) {
      const double m = evaluate(compiled, emb, ds.valid, *filter, options.eval).mrr;
      result.valid_mrr.push_back(m);
      if (m > best) {
        best = m;
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  if (validate) result.final_valid_mrr = evaluate(compiled, emb, ds.valid, *filter, options.eval).mrr;
  return result;
}

}  // namespace sparsecore
