// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any of
// criteria 1-8 fails. Criterion 9 needs an external dataset and only runs
// when SPARSECORE_JF17K4_DIR points at it.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../test_util.hpp"
#include "sparsecore/sparsecore.hpp"

namespace {

using namespace sparsecore;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs one criterion; a thrown exception counts as failure. The runtime
// limit is part of the criterion.
bool run(const char* id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double took = seconds_since(t0);
  const bool in_time = took < limit_s;
  const bool pass = o.pass && in_time;
  std::printf("[%s] %s %s: %s (%.2f s, limit %.0f s%s)\n", pass ? "PASS" : "FAIL", id, name,
              o.detail.c_str(), took, limit_s, in_time ? "" : ", exceeded");
  std::fflush(stdout);
  return pass;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

CoreAssignment random_core(std::size_t n, std::size_t M, std::mt19937_64& rng) {
  CoreAssignment a(n, M);
  for (int& c : a.codes) c = static_cast<int>(rng() % 3) - 1;
  return a;
}

// 1. The CP preset equals the plain n-way inner product. When n < M only the
// first n segments take part, so coordinates past them are zeroed first.
Outcome cp_equivalence() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t n : {2, 3, 4}) {
    for (std::size_t M : {1, 2, 4}) {
      for (std::size_t d : {4, 8, 16}) {
        const auto core = preset(Preset::kCp, n, M);
        const std::size_t used = d / M * std::min(n, M);
        for (int draw = 0; draw < 100; ++draw) {
          auto emb = sparsecore::testing::gaussian_embeddings(n + 2, 2, d, M, rng());
          for (auto* m : {&emb.entities, &emb.relations})
            for (std::size_t row = 0; row < m->rows(); ++row)
              for (std::size_t t = used; t < d; ++t) (*m)(row, t) = 0.0;
          const auto f = sparsecore::testing::random_fact(n, n + 2, 2, rng);
          const double direct = sparsecore::testing::full_inner_product(emb, f);
          const double got = score_fact(core, emb, f);
          worst = std::max(worst, std::abs(got - direct) / std::max(1e-300, std::abs(direct)));
          ++cases;
        }
      }
    }
  }
  return {worst <= 1e-10, fmt("%.0f draws, max relative error %.3g", double(cases), worst)};
}

// 2. Exact-representation construction on symbol-disjoint datasets.
Outcome exact_model_oracle() {
  std::mt19937_64 rng(202);
  std::size_t bad_true = 0, bad_false = 0, false_checked = 0;
  double worst_mrr = 1.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t count = 1 + rng() % 8;
    Dataset ds;
    EntityId next = 0;
    for (std::size_t k = 0; k < count; ++k) {
      Fact f;
      f.relation = static_cast<RelationId>(k);
      const std::size_t n = 2 + rng() % 3;
      for (std::size_t i = 0; i < n; ++i) f.entities.push_back(next++);
      ds.train.push_back(f);
      ds.max_arity = std::max(ds.max_arity, n);
    }
    for (EntityId e = 0; e < next; ++e) ds.vocabulary.entities.add("e" + std::to_string(e));
    for (std::size_t r = 0; r < count; ++r) ds.vocabulary.relations.add("r" + std::to_string(r));
    ds.test = ds.train;

    const auto model = lemma1_construct(ds.train, next, count);
    // owner fact of each symbol
    std::vector<std::size_t> owner(next);
    for (std::size_t k = 0; k < count; ++k)
      for (auto e : ds.train[k].entities) owner[e] = k;
    for (const auto& f : ds.train) {
      if (score_fact(model.architecture.at(f.arity()), model.embeddings, f) < 1.0) ++bad_true;
      // every tuple of this arity whose symbols span more than one fact
      for (int s = 0; s < 200; ++s) {
        Fact g = f;
        g.relation = static_cast<RelationId>(rng() % count);
        for (auto& e : g.entities) e = static_cast<EntityId>(rng() % next);
        bool mixed = false;
        for (auto e : g.entities) mixed = mixed || owner[e] != g.relation;
        if (!mixed) continue;
        ++false_checked;
        if (score_fact(model.architecture.at(g.arity()), model.embeddings, g) != 0.0) ++bad_false;
      }
    }
    const FilterIndex filter(ds);
    const auto m = evaluate(model.architecture, model.embeddings, ds, filter, Split::kTest);
    worst_mrr = std::min(worst_mrr, m.mrr);
  }
  std::ostringstream os;
  os << "20 datasets, true facts below 1: " << bad_true << ", " << false_checked
     << " disjoint false tuples nonzero: " << bad_false << ", min MRR " << worst_mrr;
  return {bad_true == 0 && bad_false == 0 && worst_mrr == 1.0, os.str()};
}

// 3. Analytic gradients against central differences.
Outcome gradient_fidelity() {
  std::mt19937_64 rng(303);
  const double h = 1e-4;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t M = 1 + rng() % 2;
    const std::size_t d = M * (1 + rng() % (8 / M));
    const std::size_t n_e = 2 + rng() % 5;
    const std::size_t n_r = 1 + rng() % 3;
    ArchitectureSet set(3, M);
    for (std::size_t n = 2; n <= 3; ++n) set.set(random_core(n, M, rng));
    const CompiledArchitecture arch(set);
    auto emb = sparsecore::testing::gaussian_embeddings(n_e, n_r, d, M, rng(), 0.7);
    std::vector<Fact> batch;
    for (int i = 0; i < 3; ++i)
      batch.push_back(sparsecore::testing::random_fact(2 + rng() % 2, n_e, n_r, rng));

    EmbeddingGradient grad;
    grad_embeddings_mc(arch, 1, emb, batch, grad);
    auto loss = [&] {
      double s = 0.0;
      for (const auto& f : batch) s += multiclass_log_loss(arch.at(f.arity()), emb, f);
      return s;
    };
    auto check = [&](Matrix& param, const Matrix& analytic) {
      for (std::size_t i = 0; i < param.data().size(); ++i) {
        const double keep = param.data()[i];
        param.data()[i] = keep + h;
        const double up = loss();
        param.data()[i] = keep - h;
        const double down = loss();
        param.data()[i] = keep;
        const double numeric = (up - down) / (2 * h);
        const double a = analytic.data()[i];
        worst = std::max(worst, std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)}));
      }
    };
    check(emb.entities, grad.entities);
    check(emb.relations, grad.relations);
  }
  return {worst <= 1e-4, fmt("50 instances, max relative error %.3g", worst)};
}

// 4. Fast filtered ranks against a per-candidate loop.
Outcome ranking_oracle() {
  std::mt19937_64 rng(404);
  std::size_t queries = 0, mismatches = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n_e = 5 + rng() % 46;
    const std::size_t n_r = 1 + rng() % 4;
    const auto ds = sparsecore::testing::random_dataset(n_e, n_r, {2, 3, 4}, 60, rng());
    const std::size_t M = 1 + rng() % 3;
    ArchitectureSet set(4, M);
    for (std::size_t n = 2; n <= 4; ++n) set.set(random_core(n, M, rng));
    auto emb = sparsecore::testing::gaussian_embeddings(n_e, n_r, 2 * M, M, rng());
    // half of the trials use coarse values so exact ties occur
    if (trial % 2 == 1)
      for (auto* m : {&emb.entities, &emb.relations})
        for (double& v : m->data()) v = std::round(v * 2.0) / 2.0;
    const FilterIndex filter(ds);
    const CompiledArchitecture compiled(set);
    for (auto ties : {TiePolicy::kOptimistic, TiePolicy::kPessimistic}) {
      for (auto split : {Split::kValid, Split::kTest}) {
        const auto& facts = ds.split(split);
        const auto fast = query_ranks(compiled, emb, facts, filter, {ties, 1});
        std::size_t q = 0;
        for (const auto& f : facts) {
          for (std::size_t p = 0; p < f.arity(); ++p, ++q) {
            const auto slow = sparsecore::testing::brute_force_rank(set.at(f.arity()), emb, ds, f, p, ties);
            if (fast.at(q) != slow) ++mismatches;
            ++queries;
          }
        }
      }
    }
  }
  std::ostringstream os;
  os << "20 datasets, " << queries << " queries, mismatches " << mismatches;
  return {mismatches == 0, os.str()};
}

// 5. Randomized natural-gradient steps stay on the simplex.
Outcome simplex_invariant() {
  auto theta = init_theta(4, 2);
  AsngState state;
  std::mt19937_64 rng(505);
  std::normal_distribution<double> normal;
  double worst_sum = 0.0, min_entry = 1.0;
  for (int i = 0; i < 100'000; ++i) {
    auto d = zero_direction(theta);
    const double scale = i % 11 == 0 ? 1e3 : (i % 13 == 0 ? 1e-6 : 1.0);
    for (auto& [n, v] : d)
      for (double& x : v) x = normal(rng) * scale;
    if (i % 17 == 0) d = zero_direction(theta);
    asng_update(theta, d, state);
    worst_sum = std::max(worst_sum, theta.simplex_error());
    for (const auto& [n, v] : theta.matrices())
      for (double p : v) min_entry = std::min(min_entry, p);
  }
  return {worst_sum <= 1e-9 && min_entry >= 0.0,
          fmt("1e5 updates, max column-sum error %.3g, min entry %.3g", worst_sum, min_entry)};
}

// 6. Ranked-utility estimator on one block with the exact expectation
// enumerated over both draws.
Outcome estimator_sanity() {
  const std::array<double, 3> p = {0.25, 0.45, 0.3};
  const std::array<double, 3> util = {0.2, 0.6, 0.9};
  ArchitectureDistribution theta(2, 1);
  theta.set(2, {p[0], p[1], p[2]});
  auto block = [](std::uint8_t row) {
    SufficientStatistic s;
    s.ops[2] = {row};
    return s;
  };
  std::array<double, 3> exact{};
  for (std::uint8_t a = 0; a < 3; ++a)
    for (std::uint8_t b = 0; b < 3; ++b) {
      const auto d = theta_gradient(std::vector<SufficientStatistic>{block(a), block(b)},
                                    std::vector<double>{util[a], util[b]}, theta);
      for (int r = 0; r < 3; ++r) exact[r] += p[a] * p[b] * d.at(2)[r];
    }
  auto rng = make_rng(606, Stream::kArchitecture);
  const int draws = 100'000;
  std::array<double, 3> sum{}, sum_sq{};
  for (int i = 0; i < draws; ++i) {
    const auto s = sample_architectures(theta, 2, rng);
    const std::vector<SufficientStatistic> stats = {s[0].statistic, s[1].statistic};
    const std::vector<double> u = {util[stats[0].ops.at(2)[0]], util[stats[1].ops.at(2)[0]]};
    const auto d = theta_gradient(stats, u, theta);
    for (int r = 0; r < 3; ++r) {
      sum[r] += d.at(2)[r];
      sum_sq[r] += d.at(2)[r] * d.at(2)[r];
    }
  }
  double worst_z = 0.0;
  for (int r = 0; r < 3; ++r) {
    const double m = sum[r] / draws;
    const double se = std::sqrt((sum_sq[r] / draws - m * m) / draws);
    worst_z = std::max(worst_z, std::abs(m - exact[r]) / se);
  }
  return {worst_z <= 3.0, fmt("1e5 draws, worst deviation %.2f standard errors", worst_z)};
}

// 7. Planted-architecture recovery.
struct RecoveryRun {
  std::size_t matched = 0;
  double derived_mrr = 0.0;
  double truth_mrr = 0.0;
  double search_s = 0.0;
};

constexpr std::size_t kPlantedEntities = 40;
constexpr std::size_t kPlantedRelations = 4;
constexpr double kPlantedMargin = 0.03;
constexpr double kSearchBudgetSeconds = 300.0;

RecoveryRun recovery_run(std::uint64_t seed) {
  PlantedSpec spec;
  spec.entity_count = kPlantedEntities;
  spec.relation_count = kPlantedRelations;
  spec.dimension = 16;
  spec.segment_count = 2;
  spec.truth = preset_architecture(Preset::kComplex, 2, 2);
  spec.facts_per_arity = 2000;
  spec.margin = kPlantedMargin;
  spec.seed = seed;
  const auto planted = generate_planted(spec);

  TrainConfig train;
  train.dimension = 16;
  train.segment_count = 2;
  train.learning_rate = 0.01;
  train.batch_size = 128;
  train.seed = seed;
  train.mc_samples = 1;
  train.max_epochs = 200;
  train.patience = 0;

  SearchConfig search;
  search.mc_samples = 4;
  search.search_epochs = 150;
  search.valid_batch_size = 200;
  search.seed = seed;
  // probability floor of the reference ASNG implementation: 1 / (blocks * (ops - 1))
  search.asng.theta_min = 1.0 / (8.0 * 2.0);

  RecoveryRun out;
  const auto t0 = Clock::now();
  const auto found = search_loop(planted.dataset, search, train);
  out.search_s = seconds_since(t0);

  const auto& got = found.architecture.at(2).codes;
  const auto& want = planted.truth.at(2).codes;
  for (std::size_t k = 0; k < want.size(); ++k) out.matched += got[k] == want[k];
  out.derived_mrr = train_fixed(found.architecture, planted.dataset, train).final_valid_mrr.value();
  out.truth_mrr = train_fixed(planted.truth, planted.dataset, train).final_valid_mrr.value();

  std::printf("       seed %llu: blocks matched %zu/8, codes", static_cast<unsigned long long>(seed),
              out.matched);
  for (int c : got) std::printf(" %+d", c);
  std::printf(", retrained MRR %.4f vs truth %.4f (ratio %.3f), search %.1f s\n", out.derived_mrr,
              out.truth_mrr, out.derived_mrr / out.truth_mrr, out.search_s);
  std::fflush(stdout);
  return out;
}

double median3(std::array<double, 3> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Outcome planted_recovery() {
  std::array<double, 3> matched{}, ratio{};
  double slowest = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = recovery_run(seed);
    matched[seed - 1] = static_cast<double>(r.matched);
    ratio[seed - 1] = r.derived_mrr / r.truth_mrr;
    slowest = std::max(slowest, r.search_s);
  }
  const double med_matched = median3(matched);
  const double med_ratio = median3(ratio);
  const bool within_budget = slowest <= kSearchBudgetSeconds;
  return {within_budget && (med_matched >= 7.0 || med_ratio >= 0.95),
          fmt("median blocks matched %.0f/8, median MRR ratio %.3f, slowest search %.1f s", med_matched,
              med_ratio, slowest)};
}

// 8. A one-hot distribution makes search identical to fixed training.
Outcome one_hot_consistency() {
  PlantedSpec spec;
  spec.entity_count = 40;
  spec.relation_count = 2;
  spec.dimension = 8;
  spec.truth = preset_architecture(Preset::kComplex, 2, 2);
  spec.facts_per_arity = 300;
  spec.margin = 0.1;
  spec.seed = 808;
  const auto ds = generate_planted(spec).dataset;

  std::size_t steps = 0, differing = 0;
  for (auto preset_kind : {Preset::kComplex, Preset::kCp, Preset::kSimple}) {
    const auto arch = preset_architecture(preset_kind, 2, 2);
    TrainConfig train;
    train.dimension = 8;
    train.segment_count = 2;
    train.batch_size = 32;
    train.max_epochs = 5;
    train.patience = 0;
    train.mc_samples = 2;
    train.seed = 808;
    SearchConfig search;
    search.search_epochs = train.max_epochs;
    search.mc_samples = train.mc_samples;
    search.valid_batch_size = 16;
    search.seed = 808;

    std::vector<SegmentedEmbeddings> fixed, mixed;
    TrainOptions topt;
    topt.observer = [&](std::size_t, std::size_t, const SegmentedEmbeddings& e) { fixed.push_back(e); };
    SearchOptions sopt;
    sopt.initial_theta = ArchitectureDistribution::one_hot(arch);
    sopt.observer = [&](std::size_t, std::size_t, const SegmentedEmbeddings& e) { mixed.push_back(e); };
    const auto a = train_fixed(arch, ds, train, topt);
    const auto b = search_loop(ds, search, train, sopt);
    if (fixed.size() != mixed.size() || fixed.empty()) return {false, "step counts differ"};
    for (std::size_t i = 0; i < fixed.size(); ++i) differing += !(fixed[i] == mixed[i]);
    differing += !(a.embeddings == b.embeddings);
    steps += fixed.size();
  }
  std::ostringstream os;
  os << "3 architectures, " << steps << " steps compared, differing " << differing;
  return {differing == 0, os.str()};
}

// 9. Optional benchmark on the 4-ary JF17K split.
void optional_benchmark() {
  const char* dir = std::getenv("SPARSECORE_JF17K4_DIR");
  if (!dir || !*dir) {
    std::printf("[SKIP] C9 jf17k-4 benchmark: set SPARSECORE_JF17K4_DIR to a dataset directory to run it\n");
    return;
  }
  const auto t0 = Clock::now();
  try {
    const auto ds = load_dataset_dir(dir);
    TrainConfig train;
    train.dimension = 128;
    train.segment_count = 4;
    train.max_epochs = 200;
    train.seed = 1;
    SearchConfig search;
    search.dimension = 64;
    search.search_epochs = 20;
    search.seed = 1;
    const auto found = search_loop(ds, search, train);
    train.mc_samples = 1;
    const auto trained = train_fixed(found.architecture, ds, train);
    const auto m = evaluate(found.architecture, trained.embeddings, ds, FilterIndex(ds), Split::kTest);
    const double took = seconds_since(t0);
    const bool pass = m.mrr >= 0.70 && took < 7200.0;
    std::printf("[%s] C9 jf17k-4 benchmark (optional): test MRR %.4f, %zu entities, %zu train facts (%.0f s, limit 7200 s)\n",
                pass ? "PASS" : "FAIL", m.mrr, ds.vocabulary.entity_count(), ds.train.size(), took);
  } catch (const std::exception& e) {
    std::printf("[FAIL] C9 jf17k-4 benchmark (optional): exception: %s\n", e.what());
  }
}

}  // namespace

int main() {
  bool ok = true;
  ok &= run("C1", "cp equivalence", 10, cp_equivalence);
  ok &= run("C2", "exact-representation oracle", 5, exact_model_oracle);
  ok &= run("C3", "gradient fidelity", 30, gradient_fidelity);
  ok &= run("C4", "ranking oracle", 30, ranking_oracle);
  ok &= run("C5", "simplex invariant", 10, simplex_invariant);
  ok &= run("C6", "estimator sanity", 10, estimator_sanity);
  ok &= run("C7", "planted recovery", 3 * (kSearchBudgetSeconds + 120), planted_recovery);
  ok &= run("C8", "one-hot search equals fixed training", 60, one_hot_consistency);
  optional_benchmark();
  std::printf("%s\n", ok ? "criteria 1-8: all passed" : "criteria 1-8: FAILED");
  return ok ? 0 : 1;
}
