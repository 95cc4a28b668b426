#pragma once

// Stochastic architecture search over block codes.
//
// Each block k of the arity-n core carries a categorical distribution
// theta^n[:, k] over the ops (-1, 0, +1). Training alternates between an
// embedding step on the Monte-Carlo averaged loss gradient of lambda sampled
// architectures and a natural-gradient step on theta driven by the
// validation utility of the same samples. The theta step follows the
// adaptive stochastic natural gradient scheme: the step is normalized in the
// Fisher metric to a trust-region size delta / Delta, and Delta adapts to the
// accumulated signal of successive normalized steps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "sparsecore/core_tensor.hpp"
#include "sparsecore/eval.hpp"
#include "sparsecore/kb_data.hpp"
#include "sparsecore/model.hpp"
#include "sparsecore/random.hpp"
#include "sparsecore/training.hpp"

namespace sparsecore {

inline constexpr std::size_t kOpCount = 3;
// Row r of theta holds the probability of code kOpCodes[r].
inline constexpr std::array<int, kOpCount> kOpCodes = {-1, 0, 1};

inline std::size_t op_row(int code) { return static_cast<std::size_t>(code + 1); }

/// Per-arity 3 x K matrices of op probabilities, stored row-major.
class ArchitectureDistribution {
 public:
  ArchitectureDistribution() = default;

  /// Uniform 1/3 in every column for arities 2..max_arity.
  ArchitectureDistribution(std::size_t max_arity, std::size_t segment_count)
      : max_arity_(max_arity), segment_count_(segment_count) {
    if (max_arity < 2 || segment_count < 1) {
      throw UsageError("architecture distribution needs max arity >= 2 and >= 1 segment");
    }
    for (std::size_t n = 2; n <= max_arity; ++n) {
      theta_[n].assign(kOpCount * block_count(n, segment_count), 1.0 / 3.0);
    }
  }

  std::size_t max_arity() const noexcept { return max_arity_; }
  std::size_t segment_count() const noexcept { return segment_count_; }
  std::size_t blocks(std::size_t arity) const { return at(arity).size() / kOpCount; }

  double operator()(std::size_t arity, std::size_t row, std::size_t block) const {
    return at(arity)[row * blocks(arity) + block];
  }
  double& operator()(std::size_t arity, std::size_t row, std::size_t block) {
    auto& v = theta_.at(arity);
    return v[row * (v.size() / kOpCount) + block];
  }

  const std::vector<double>& at(std::size_t arity) const {
    const auto it = theta_.find(arity);
    if (it == theta_.end()) throw DataError("no distribution for arity " + std::to_string(arity));
    return it->second;
  }
  std::vector<double>& at(std::size_t arity) { return theta_.at(arity); }

  const std::map<std::size_t, std::vector<double>>& matrices() const noexcept { return theta_; }
  std::map<std::size_t, std::vector<double>>& mutable_matrices() noexcept { return theta_; }

  /// Sets the matrix of one arity (row-major 3 x K).
  void set(std::size_t arity, std::vector<double> probs) {
    if (probs.size() != kOpCount * block_count(arity, segment_count_)) {
      throw DataError("theta for arity " + std::to_string(arity) + " has the wrong size");
    }
    theta_[arity] = std::move(probs);
    max_arity_ = std::max(max_arity_, arity);
  }

  /// Total free parameters: (3 - 1) per block.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [a, v] : theta_) n += (kOpCount - 1) * (v.size() / kOpCount);
    return n;
  }

  /// Largest deviation of a column sum from 1; +inf if any entry is negative
  /// or non-finite.
  double simplex_error() const {
    double worst = 0.0;
    for (const auto& [n, v] : theta_) {
      const std::size_t k = v.size() / kOpCount;
      for (std::size_t b = 0; b < k; ++b) {
        double sum = 0.0;
        for (std::size_t r = 0; r < kOpCount; ++r) {
          const double p = v[r * k + b];
          if (!(p >= 0.0) || !std::isfinite(p)) return std::numeric_limits<double>::infinity();
          sum += p;
        }
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
    return worst;
  }

  /// Mean entropy (nats) over all columns.
  double mean_entropy() const {
    double total = 0.0;
    std::size_t columns = 0;
    for (const auto& [n, v] : theta_) {
      const std::size_t k = v.size() / kOpCount;
      for (std::size_t b = 0; b < k; ++b, ++columns) {
        for (std::size_t r = 0; r < kOpCount; ++r) {
          const double p = v[r * k + b];
          if (p > 0.0) total -= p * std::log(p);
        }
      }
    }
    return columns ? total / static_cast<double>(columns) : 0.0;
  }

  /// Distribution that puts all mass on the given architecture.
  static ArchitectureDistribution one_hot(const ArchitectureSet& arch) {
    ArchitectureDistribution d;
    d.max_arity_ = arch.max_arity();
    d.segment_count_ = arch.segment_count();
    for (const auto& [n, a] : arch.cores()) {
      std::vector<double> v(kOpCount * a.codes.size(), 0.0);
      for (std::size_t b = 0; b < a.codes.size(); ++b) v[op_row(a.codes[b]) * a.codes.size() + b] = 1.0;
      d.theta_[n] = std::move(v);
    }
    return d;
  }

 private:
  std::size_t max_arity_ = 0;
  std::size_t segment_count_ = 1;
  std::map<std::size_t, std::vector<double>> theta_;
};

inline ArchitectureDistribution init_theta(std::size_t max_arity, std::size_t segment_count) {
  return ArchitectureDistribution(max_arity, segment_count);
}

/// Sampled op row per block, per arity; the one-hot matrix T(Z) has a 1 at
/// (ops[k], k) in every column k.
struct SufficientStatistic {
  std::map<std::size_t, std::vector<std::uint8_t>> ops;

  double value(std::size_t arity, std::size_t row, std::size_t block) const {
    return ops.at(arity)[block] == row ? 1.0 : 0.0;
  }
};

struct ArchitectureSample {
  ArchitectureSet architecture;
  SufficientStatistic statistic;
};

/// Draws `count` independent architectures; every block's op comes from its
/// own column of theta.
inline std::vector<ArchitectureSample> sample_architectures(const ArchitectureDistribution& theta,
                                                            std::size_t count, Rng& rng) {
  std::vector<ArchitectureSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ArchitectureSample s{ArchitectureSet(theta.max_arity(), theta.segment_count()), {}};
    for (const auto& [n, v] : theta.matrices()) {
      const std::size_t k = v.size() / kOpCount;
      CoreAssignment a(n, theta.segment_count());
      auto& ops = s.statistic.ops[n];
      ops.resize(k);
      for (std::size_t b = 0; b < k; ++b) {
        const double u = uniform01(rng);
        double cum = 0.0;
        std::size_t row = kOpCount - 1;
        for (std::size_t r = 0; r + 1 < kOpCount; ++r) {
          cum += v[r * k + b];
          if (u < cum) {
            row = r;
            break;
          }
        }
        // a column like (0.5, 0.5, 0) must never yield the last op
        while (row > 0 && v[row * k + b] <= 0.0) --row;
        ops[b] = static_cast<std::uint8_t>(row);
        a.codes[b] = kOpCodes[row];
      }
      s.architecture.set(std::move(a));
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Per-fact utility: mean over entity positions of 1 / filtered rank.
inline std::vector<double> validation_utility(const CompiledArchitecture& arch,
                                              const SegmentedEmbeddings& emb,
                                              std::span<const Fact> batch,
                                              const FilterIndex& filter,
                                              TiePolicy ties = TiePolicy::kOptimistic) {
  if (batch.empty()) throw DataError("validation batch is empty");
  std::vector<double> out;
  out.reserve(batch.size());
  std::vector<std::size_t> ranks;
  for (const auto& f : batch) {
    ranks.resize(f.arity());
    fact_ranks(arch.at(f.arity()), emb, filter, f, ties, ranks);
    double u = 0.0;
    for (auto r : ranks) u += 1.0 / static_cast<double>(r);
    out.push_back(u / static_cast<double>(f.arity()));
  }
  return out;
}

inline double mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Ranking-based utility weights for maximization over lambda samples: the
/// best ceil(lambda / 4) samples share +1, the worst as many share -1, and
/// tied samples get the mean of their weights. With two samples this is
/// +1 / -1 for a strict winner and 0 / 0 for a tie.
inline std::vector<double> ranked_utilities(std::span<const double> utilities) {
  const std::size_t lam = utilities.size();
  std::vector<double> w(lam, 0.0);
  if (lam < 2) return w;
  const std::size_t mu = static_cast<std::size_t>(std::ceil(static_cast<double>(lam) * 0.25));
  std::vector<std::size_t> idx(lam);
  std::iota(idx.begin(), idx.end(), 0);
  // best first
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return utilities[a] > utilities[b]; });
  std::vector<double> base(lam, 0.0);
  for (std::size_t i = 0; i < mu; ++i) base[i] += 1.0 / static_cast<double>(mu);
  for (std::size_t i = lam - mu; i < lam; ++i) base[i] -= 1.0 / static_cast<double>(mu);
  std::size_t start = 0;
  while (start < lam) {
    std::size_t end = start + 1;
    while (end < lam && utilities[idx[end]] == utilities[idx[start]]) ++end;
    double avg = 0.0;
    for (std::size_t i = start; i < end; ++i) avg += base[i];
    avg /= static_cast<double>(end - start);
    for (std::size_t i = start; i < end; ++i) w[idx[i]] = avg;
    start = end;
  }
  return w;
}

enum class UtilityMode { kRanked, kRaw };

/// Direction congruent to theta: per arity a row-major 3 x K matrix.
using ThetaDirection = std::map<std::size_t, std::vector<double>>;

inline ThetaDirection zero_direction(const ArchitectureDistribution& theta) {
  ThetaDirection d;
  for (const auto& [n, v] : theta.matrices()) d[n].assign(v.size(), 0.0);
  return d;
}

/// (1/lambda) sum_i u_i (T_i - theta), with u the transformed utilities.
/// `weight` scales the contribution, which is added into `direction`.
/// When `arity` is set only that arity's matrix receives the contribution.
inline void accumulate_theta_gradient(std::span<const SufficientStatistic> stats,
                                      std::span<const double> utilities,
                                      const ArchitectureDistribution& theta, UtilityMode mode,
                                      std::optional<std::size_t> arity, double weight,
                                      ThetaDirection& direction) {
  if (stats.empty() || stats.size() != utilities.size()) {
    throw UsageError("theta gradient needs one utility per sample and at least one sample");
  }
  const auto u = mode == UtilityMode::kRanked
                     ? ranked_utilities(utilities)
                     : std::vector<double>(utilities.begin(), utilities.end());
  const double lam = static_cast<double>(stats.size());
  for (const auto& [n, v] : theta.matrices()) {
    if (arity && *arity != n) continue;
    auto& d = direction[n];
    d.resize(v.size(), 0.0);
    const std::size_t k = v.size() / kOpCount;
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const double ui = weight * u[i] / lam;
      if (ui == 0.0) continue;
      const auto& ops = stats[i].ops.at(n);
      for (std::size_t b = 0; b < k; ++b) {
        for (std::size_t r = 0; r < kOpCount; ++r) {
          const double t = ops[b] == r ? 1.0 : 0.0;
          d[r * k + b] += ui * (t - v[r * k + b]);
        }
      }
    }
  }
}

inline ThetaDirection theta_gradient(std::span<const SufficientStatistic> stats,
                                     std::span<const double> utilities,
                                     const ArchitectureDistribution& theta,
                                     UtilityMode mode = UtilityMode::kRanked) {
  auto d = zero_direction(theta);
  accumulate_theta_gradient(stats, utilities, theta, mode, std::nullopt, 1.0, d);
  return d;
}

struct AsngConfig {
  // Initial trust-region radius in the Fisher metric.
  double delta_init = 1.0;
  // Adaptation threshold.
  double alpha = 1.5;
  double delta_max = std::numeric_limits<double>::infinity();
  // Lower clip for probabilities before renormalization.
  double theta_min = 1e-12;
};

struct AsngState {
  AsngConfig config;
  double big_delta = 1.0;  // Delta; the effective step radius is delta_init / Delta
  double gamma = 0.0;
  std::vector<double> accumulated;  // s, length = parameter count
  std::size_t updates = 0;

  double step_radius() const { return config.delta_init / big_delta; }
};

namespace detail {

inline void clip_and_renormalize(std::vector<double>& v, double floor) {
  const std::size_t k = v.size() / kOpCount;
  for (std::size_t b = 0; b < k; ++b) {
    double sum = 0.0;
    for (std::size_t r = 0; r < kOpCount; ++r) {
      double& p = v[r * k + b];
      if (!std::isfinite(p)) p = 1.0;
      p = std::clamp(p, floor, 1.0);
      sum += p;
    }
    for (std::size_t r = 0; r < kOpCount; ++r) v[r * k + b] /= sum;
  }
}

}  // namespace detail

/// One adaptive natural-gradient ascent step along `direction`, followed by
/// clipping every column to [theta_min, 1] and renormalizing.
inline void asng_update(ArchitectureDistribution& theta, const ThetaDirection& direction,
                        AsngState& state) {
  const std::size_t params = theta.parameter_count();
  if (state.accumulated.size() != params) state.accumulated.assign(params, 0.0);
  const double delta = state.step_radius();
  const double beta = delta / std::sqrt(static_cast<double>(params));

  // Fisher-whitened direction over the first two ops of every column.
  std::vector<double> whitened;
  whitened.reserve(params);
  bool all_zero = true;
  for (const auto& [n, v] : theta.matrices()) {
    const auto it = direction.find(n);
    if (it == direction.end()) {
      whitened.insert(whitened.end(), (kOpCount - 1) * (v.size() / kOpCount), 0.0);
      continue;
    }
    const auto& g = it->second;
    if (g.size() != v.size()) throw UsageError("theta direction has the wrong shape");
    const std::size_t k = v.size() / kOpCount;
    for (std::size_t b = 0; b < k; ++b) {
      const double last = v[(kOpCount - 1) * k + b];
      double head_sum = 0.0;
      for (std::size_t r = 0; r + 1 < kOpCount; ++r) head_sum += g[r * k + b];
      for (std::size_t r = 0; r + 1 < kOpCount; ++r) {
        const double p = v[r * k + b];
        const double gr = g[r * k + b];
        if (std::abs(gr) >= 1e-18) all_zero = false;
        // ops with zero probability are never sampled, so their entries are 0
        const double own = p > 0.0 ? gr / std::sqrt(p) : 0.0;
        const double shared = last > 0.0 ? std::sqrt(p) * head_sum / (last + std::sqrt(last)) : 0.0;
        whitened.push_back(own + shared);
      }
      if (std::abs(g[(kOpCount - 1) * k + b]) >= 1e-18) all_zero = false;
    }
  }

  double norm = 0.0;
  if (!all_zero) {
    for (double x : whitened) norm += x * x;
    norm = std::sqrt(norm) + 1e-8;
    const double eps = delta / norm;
    for (auto& [n, v] : theta.mutable_matrices()) {
      const auto it = direction.find(n);
      if (it == direction.end()) continue;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += eps * it->second[i];
    }
  }

  // Accumulate the normalized step; it decays when the direction is zero.
  double s_sq = 0.0;
  for (std::size_t i = 0; i < params; ++i) {
    const double step = all_zero ? 0.0 : whitened[i] / norm;
    auto& s = state.accumulated[i];
    s = (1.0 - beta) * s + std::sqrt(beta * (2.0 - beta)) * step;
    s_sq += s * s;
  }
  state.gamma = (1.0 - beta) * (1.0 - beta) * state.gamma + beta * (2.0 - beta);
  state.big_delta *= std::exp(beta * (state.gamma - s_sq / state.config.alpha));
  state.big_delta = std::min(state.big_delta, state.config.delta_max);
  ++state.updates;

  if (!all_zero) {
    for (auto& [n, v] : theta.mutable_matrices()) {
      detail::clip_and_renormalize(v, state.config.theta_min);
    }
  }
}

/// Most probable op per block; ties prefer 0, then +1, then -1.
inline ArchitectureSet derive_final(const ArchitectureDistribution& theta) {
  ArchitectureSet out(theta.max_arity(), theta.segment_count());
  constexpr std::array<int, kOpCount> preference = {0, 1, -1};
  for (const auto& [n, v] : theta.matrices()) {
    const std::size_t k = v.size() / kOpCount;
    CoreAssignment a(n, theta.segment_count());
    for (std::size_t b = 0; b < k; ++b) {
      int best = preference[0];
      double best_p = v[op_row(best) * k + b];
      for (std::size_t i = 1; i < kOpCount; ++i) {
        const double p = v[op_row(preference[i]) * k + b];
        if (p > best_p) {
          best = preference[i];
          best_p = p;
        }
      }
      a.codes[b] = best;
    }
    out.set(std::move(a));
  }
  return out;
}

struct SearchConfig {
  std::size_t mc_samples = 2;  // lambda
  std::size_t search_epochs = 10;
  std::size_t valid_batch_size = 128;
  // Embedding dimension during search; 0 means use the training dimension.
  std::size_t dimension = 0;
  AsngConfig asng;
  UtilityMode utility = UtilityMode::kRanked;
  TiePolicy utility_ties = TiePolicy::kPessimistic;
  std::uint64_t seed = 0;
};

struct SearchRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  // Codes of every sample, arities ascending, blocks in row-major order.
  std::vector<std::vector<int>> sampled_codes;
  // Mean validation utility of each sample.
  std::vector<double> utilities;
  double theta_entropy = 0.0;
  double valid_mrr = 0.0;
  double step_radius = 0.0;
};

struct SearchTrace {
  std::vector<SearchRecord> records;
};

struct SearchResult {
  ArchitectureSet architecture;
  ArchitectureDistribution theta;
  SearchTrace trace;
  SegmentedEmbeddings embeddings;
};

struct SearchOptions {
  std::optional<ArchitectureDistribution> initial_theta;
  StepObserver observer;
};

/// Alternating search: an embedding step on lambda sampled architectures,
/// then a theta step from the validation utilities of those same samples on
/// the updated embeddings. Returns the argmax architecture of the final theta.
inline SearchResult search_loop(const Dataset& ds, const SearchConfig& search,
                                const TrainConfig& train, const SearchOptions& options = {}) {
  TrainConfig cfg = train;
  if (search.dimension != 0) cfg.dimension = search.dimension;
  cfg.mc_samples = search.mc_samples;
  cfg.check();
  if (ds.valid.empty()) throw DataError("search needs a non-empty valid split");
  if (search.valid_batch_size == 0) throw UsageError("validation batch size must be positive");

  SearchResult result;
  result.theta = options.initial_theta ? *options.initial_theta
                                       : init_theta(std::max<std::size_t>(ds.max_arity, 2),
                                                    cfg.segment_count);
  if (result.theta.segment_count() != cfg.segment_count) {
    throw DataError("theta segment count differs from the configuration");
  }
  for (auto n : ds.arities()) (void)result.theta.at(n);
  result.embeddings = init_embeddings(ds.vocabulary.entity_count(), ds.vocabulary.relation_count(),
                                      cfg.dimension, cfg.segment_count, cfg.seed);
  auto& emb = result.embeddings;
  auto& theta = result.theta;

  const FilterIndex filter(ds);
  AdamState adam(emb);
  EmbeddingGradient grad(emb);
  AsngState asng{search.asng, 1.0, 0.0, {}, 0};
  BatchSchedule schedule(ds.train, cfg.batch_size, cfg.seed);
  auto arch_rng = make_rng(search.seed, Stream::kArchitecture);
  auto valid_rng = make_rng(search.seed, Stream::kValidation);
  std::vector<std::size_t> valid_order(ds.valid.size());
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < search.search_epochs; ++epoch) {
    const double lr = epoch_learning_rate(cfg, epoch);
    const std::size_t batches = schedule.start_epoch();
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = schedule.batch(b);
      const auto samples = sample_architectures(theta, search.mc_samples, arch_rng);
      std::vector<CompiledArchitecture> compiled;
      compiled.reserve(samples.size());
      for (const auto& s : samples) compiled.emplace_back(s.architecture);

      const double loss = grad_embeddings_mc(compiled, emb, batch, grad);
      if (!std::isfinite(loss)) throw NumericError("search loss became non-finite");
      adam_step(emb, grad, adam, lr);
      if (options.observer) options.observer(epoch, step, emb);

      // validation mini-batch without replacement
      std::iota(valid_order.begin(), valid_order.end(), 0);
      const std::size_t vb = std::min(search.valid_batch_size, ds.valid.size());
      for (std::size_t i = 0; i < vb; ++i) {
        const auto j = i + uniform_index(valid_rng, valid_order.size() - i);
        std::swap(valid_order[i], valid_order[j]);
      }
      std::vector<Fact> vbatch;
      vbatch.reserve(vb);
      for (std::size_t i = 0; i < vb; ++i) vbatch.push_back(ds.valid[valid_order[i]]);

      std::vector<std::vector<double>> per_sample;  // [sample][fact]
      per_sample.reserve(compiled.size());
      for (const auto& c : compiled) {
        per_sample.push_back(validation_utility(c, emb, vbatch, filter, search.utility_ties));
      }

      std::vector<SufficientStatistic> stats;
      stats.reserve(samples.size());
      for (const auto& s : samples) stats.push_back(s.statistic);
      auto direction = zero_direction(theta);
      std::vector<double> fact_utils(samples.size());
      const double weight = 1.0 / static_cast<double>(vb);
      for (std::size_t f = 0; f < vb; ++f) {
        for (std::size_t i = 0; i < samples.size(); ++i) fact_utils[i] = per_sample[i][f];
        accumulate_theta_gradient(stats, fact_utils, theta, search.utility, vbatch[f].arity(),
                                  weight, direction);
      }
      asng_update(theta, direction, asng);

      SearchRecord rec;
      rec.iteration = step;
      rec.epoch = epoch;
      rec.train_loss = loss / static_cast<double>(batch.size());
      double total = 0.0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        std::vector<int> codes;
        for (const auto& [n, a] : samples[i].architecture.cores())
          codes.insert(codes.end(), a.codes.begin(), a.codes.end());
        rec.sampled_codes.push_back(std::move(codes));
        const double m = mean(per_sample[i]);
        rec.utilities.push_back(m);
        total += m;
      }
      rec.valid_mrr = total / static_cast<double>(samples.size());
      rec.theta_entropy = theta.mean_entropy();
      rec.step_radius = asng.step_radius();
      result.trace.records.push_back(std::move(rec));
      ++step;
    }
  }
  result.architecture = derive_final(theta);
  return result;
}

}  // namespace sparsecore
