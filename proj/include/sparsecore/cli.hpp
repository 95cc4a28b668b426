#pragma once

// Command-line front end: ingest, synth, search, train, eval, diff-arch,
// inspect-arch. Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparsecore/core_tensor.hpp"
#include "sparsecore/error.hpp"
#include "sparsecore/eval.hpp"
#include "sparsecore/io.hpp"
#include "sparsecore/kb_data.hpp"
#include "sparsecore/planted.hpp"
#include "sparsecore/search.hpp"
#include "sparsecore/training.hpp"

namespace sparsecore::cli {

namespace fs = std::filesystem;

inline json split_stats(const std::vector<Fact>& facts) {
  json by_arity = json::object();
  for (const auto& [n, group] : group_by_arity(facts)) by_arity[std::to_string(n)] = group.size();
  return json{{"facts", facts.size()}, {"by_arity", by_arity}};
}

inline json dataset_stats(const Dataset& ds) {
  return json{{"entities", ds.vocabulary.entity_count()},
              {"relations", ds.vocabulary.relation_count()},
              {"max_arity", ds.max_arity},
              {"train", split_stats(ds.train)},
              {"valid", split_stats(ds.valid)},
              {"test", split_stats(ds.test)}};
}

// Dataset directories written by ingest/synth always contain valid.tsv, so a
// reload never re-carves a holdout and ids stay stable.
inline Dataset load_data(const fs::path& dir, const DatasetOptions& options) {
  if (!fs::is_directory(dir)) throw UsageError("dataset directory not found: " + dir.string());
  return load_dataset_dir(dir, options);
}

struct TrainFlags {
  TrainConfig config;

  void add(CLI::App& cmd) {
    cmd.add_option("--dim", config.dimension, "embedding dimension")->capture_default_str();
    cmd.add_option("--segments", config.segment_count, "segments per embedding")->capture_default_str();
    cmd.add_option("--lr", config.learning_rate, "Adam learning rate")->capture_default_str();
    cmd.add_option("--decay", config.decay_rate, "per-epoch learning-rate factor")->capture_default_str();
    cmd.add_option("--batch-size", config.batch_size)->capture_default_str();
    cmd.add_option("--epochs", config.max_epochs, "maximum training epochs")->capture_default_str();
    cmd.add_option("--eval-every", config.eval_every, "epochs between validation passes")
        ->capture_default_str();
    cmd.add_option("--patience", config.patience, "validation passes without gain; 0 disables")
        ->capture_default_str();
  }
};

struct Command {
  virtual ~Command() = default;
  virtual void run(std::ostream& out) = 0;
};

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

class IngestCommand : public Command {
 public:
  IngestCommand(CLI::App& app, Common& common) : common_(common) {
    auto* cmd = app.add_subcommand("ingest", "parse TSV fact files into a dataset directory");
    cmd->add_option("--data", data_dir_, "directory with train.tsv, test.tsv, optional valid.tsv");
    cmd->add_option("--train", train_, "train TSV file");
    cmd->add_option("--valid", valid_, "valid TSV file");
    cmd->add_option("--test", test_, "test TSV file");
    cmd->add_option("--out", out_, "output dataset directory")->required();
    cmd->add_option("--holdout", options_.holdout_fraction,
                    "fraction of train held out when no valid file exists")
        ->capture_default_str();
    cmd->add_option("--arity", arity_, "keep only facts of this arity");
    cmd->add_flag("!--no-strict", options_.strict, "allow valid/test symbols unseen in train");
    cmd->callback([this] { selected_ = true; });
  }

  bool selected() const { return selected_; }

  void run(std::ostream& out) override {
    if (data_dir_) {
      if (!train_) train_ = *data_dir_ / "train.tsv";
      if (!test_) test_ = *data_dir_ / "test.tsv";
      if (!valid_ && fs::exists(*data_dir_ / "valid.tsv")) valid_ = *data_dir_ / "valid.tsv";
    }
    if (!train_ || !test_) throw UsageError("ingest needs --data or both --train and --test");
    options_.seed = common_.seed;
    auto train = read_fact_file(*train_);
    auto test = read_fact_file(*test_);
    std::optional<std::vector<RawFact>> valid;
    if (valid_) valid = read_fact_file(*valid_);
    if (arity_) {
      train = filter_arity(train, *arity_);
      test = filter_arity(test, *arity_);
      if (valid) valid = filter_arity(*valid, *arity_);
    }
    const auto ds = valid ? build_dataset(train, std::span<const RawFact>(*valid), test, options_)
                          : build_dataset(train, std::nullopt, test, options_);
    save_dataset_dir(ds, out_);
    const auto stats = dataset_stats(ds);
    write_json(out_ / "stats.json", stats);
    write_json(out_ / "config.json",
               json{{"command", "ingest"},
                    {"train", train_->string()},
                    {"valid", valid_ ? json(valid_->string()) : json(nullptr)},
                    {"test", test_->string()},
                    {"holdout", options_.holdout_fraction},
                    {"arity", arity_ ? json(*arity_) : json(nullptr)},
                    {"strict", options_.strict},
                    {"seed", options_.seed}});
    out << stats.dump(2) << '\n';
  }

 private:
  Common& common_;
  std::optional<fs::path> data_dir_, train_, valid_, test_;
  fs::path out_;
  std::optional<std::size_t> arity_;
  DatasetOptions options_;
  bool selected_ = false;
};

class SynthCommand : public Command {
 public:
  SynthCommand(CLI::App& app, Common& common) : common_(common) {
    auto* cmd = app.add_subcommand("synth", "generate a planted dataset with a hidden architecture");
    cmd->add_option("--out", out_, "output dataset directory")->required();
    cmd->add_option("--entities", spec_.entity_count)->capture_default_str();
    cmd->add_option("--relations", spec_.relation_count)->capture_default_str();
    cmd->add_option("--arity", arities_, "arities to generate")->capture_default_str();
    cmd->add_option("--dim", spec_.dimension)->capture_default_str();
    cmd->add_option("--segments", spec_.segment_count)->capture_default_str();
    cmd->add_option("--facts", spec_.facts_per_arity, "facts per arity")->capture_default_str();
    cmd->add_option("--margin", spec_.margin, "score threshold tau")->capture_default_str();
    cmd->add_option("--truth", truth_,
                    "ground truth: a preset name, 'random', or an architecture file")
        ->capture_default_str();
    cmd->callback([this] { selected_ = true; });
  }

  bool selected() const { return selected_; }

  void run(std::ostream& out) override {
    spec_.seed = common_.seed;
    spec_.arities = std::set<std::size_t>(arities_.begin(), arities_.end());
    const std::size_t max_arity = *spec_.arities.rbegin();
    if (fs::exists(truth_)) {
      spec_.truth = load_architecture(truth_);
    } else if (truth_ == "random") {
      spec_.truth = ArchitectureSet(max_arity, spec_.segment_count);
      auto rng = make_rng(common_.seed, Stream::kTruth);
      for (std::size_t n = 2; n <= max_arity; ++n) {
        CoreAssignment a(n, spec_.segment_count);
        for (int& c : a.codes) c = static_cast<int>(uniform_index(rng, 3)) - 1;
        spec_.truth.set(std::move(a));
      }
    } else {
      spec_.truth = preset_architecture(parse_preset(truth_), max_arity, spec_.segment_count);
    }
    const auto planted = generate_planted(spec_);
    save_dataset_dir(planted.dataset, out_);
    save_architecture(out_ / "hidden_truth.json", planted.truth);
    const auto stats = dataset_stats(planted.dataset);
    write_json(out_ / "stats.json", stats);
    write_json(out_ / "config.json", json{{"command", "synth"},
                                          {"entities", spec_.entity_count},
                                          {"relations", spec_.relation_count},
                                          {"arities", arities_},
                                          {"dimension", spec_.dimension},
                                          {"segment_count", spec_.segment_count},
                                          {"facts_per_arity", spec_.facts_per_arity},
                                          {"margin", spec_.margin},
                                          {"truth", truth_},
                                          {"seed", spec_.seed}});
    out << stats.dump(2) << '\n';
  }

 private:
  Common& common_;
  fs::path out_;
  PlantedSpec spec_;
  std::vector<std::size_t> arities_{2};
  std::string truth_ = "complex";
  bool selected_ = false;
};

class SearchCommand : public Command {
 public:
  SearchCommand(CLI::App& app, Common& common) : common_(common) {
    auto* cmd = app.add_subcommand("search", "search block codes on a dataset");
    cmd->add_option("--data", data_, "dataset directory")->required();
    cmd->add_option("--out", out_, "output directory")->required();
    train_.add(*cmd);
    cmd->add_option("--lambda", search_.mc_samples, "architecture samples per step")
        ->capture_default_str();
    cmd->add_option("--search-epochs", search_.search_epochs)->capture_default_str();
    cmd->add_option("--search-dim", search_.dimension, "embedding dimension during search (0: --dim)")
        ->capture_default_str();
    cmd->add_option("--valid-batch", search_.valid_batch_size)->capture_default_str();
    cmd->add_option("--theta-lr", search_.asng.delta_init, "initial natural-gradient step radius")
        ->capture_default_str();
    cmd->add_option("--theta-min", search_.asng.theta_min, "probability floor")->capture_default_str();
    cmd->add_flag("--raw-utility", raw_utility_, "use raw per-fact MRR instead of ranked utilities");
    cmd->add_flag("--optimistic-utility", optimistic_utility_,
                  "score ties optimistically in the search utility");
    cmd->callback([this] { selected_ = true; });
  }

  bool selected() const { return selected_; }

  void run(std::ostream& out) override {
    train_.config.seed = common_.seed;
    search_.seed = common_.seed;
    search_.utility = raw_utility_ ? UtilityMode::kRaw : UtilityMode::kRanked;
    search_.utility_ties = optimistic_utility_ ? TiePolicy::kOptimistic : TiePolicy::kPessimistic;
    const auto ds = load_data(data_, {});
    const auto result = search_loop(ds, search_, train_.config);
    fs::create_directories(out_);
    save_architecture(out_ / "architecture.json", result.architecture);
    write_json(out_ / "theta.json", theta_to_json(result.theta));
    save_trace(out_ / "trace.jsonl", result.trace);
    write_json(out_ / "config.json",
               json{{"command", "search"},
                    {"data", data_.string()},
                    {"train", train_config_to_json(train_.config)},
                    {"search", search_config_to_json(search_)}});
    json summary = architecture_to_json(result.architecture);
    summary["iterations"] = result.trace.records.size();
    out << summary.dump(2) << '\n';
  }

 private:
  Common& common_;
  fs::path data_, out_;
  TrainFlags train_;
  SearchConfig search_;
  bool raw_utility_ = false;
  bool optimistic_utility_ = false;
  bool selected_ = false;
};

class TrainCommand : public Command {
 public:
  TrainCommand(CLI::App& app, Common& common) : common_(common) {
    auto* cmd = app.add_subcommand("train", "train embeddings under a fixed architecture");
    cmd->add_option("--data", data_, "dataset directory")->required();
    cmd->add_option("--out", out_, "checkpoint directory")->required();
    auto* arch = cmd->add_option("--arch", arch_, "architecture file");
    auto* pre = cmd->add_option("--preset", preset_, "cp, distmult, complex or simple");
    arch->excludes(pre);
    train_.add(*cmd);
    cmd->add_option("--lambda", train_.config.mc_samples, "gradient copies averaged per step")
        ->capture_default_str();
    cmd->callback([this] { selected_ = true; });
  }

  bool selected() const { return selected_; }

  void run(std::ostream& out) override {
    auto& cfg = train_.config;
    cfg.seed = common_.seed;
    const auto ds = load_data(data_, {});
    ArchitectureSet arch;
    if (arch_) {
      arch = load_architecture(*arch_);
    } else if (preset_) {
      arch = preset_architecture(parse_preset(*preset_), std::max<std::size_t>(ds.max_arity, 2),
                                 cfg.segment_count);
    } else {
      throw UsageError("train needs --arch or --preset");
    }
    arch.require(ds.arities());

    TrainOptions options;
    options.eval.threads = common_.threads;
    auto result = train_fixed(arch, ds, cfg, options);
    round_to_f32(result.embeddings);

    json meta{{"config", train_config_to_json(cfg)},
              {"data", data_.string()},
              {"epochs_run", result.history.size()},
              {"stopped_early", result.stopped_early}};
    if (!ds.valid.empty()) {
      const FilterIndex filter(ds);
      meta["final_valid_mrr"] =
          evaluate(arch, result.embeddings, ds, filter, Split::kValid, options.eval).mrr;
    }
    save_checkpoint(out_, result.embeddings, arch, meta);
    json history = json::array();
    for (const auto& r : result.history)
      history.push_back({{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"facts", r.facts}});
    write_json(out_ / "loss_history.json",
               json{{"loss", history}, {"valid_mrr", result.valid_mrr}});
    write_json(out_ / "config.json", json{{"command", "train"},
                                          {"data", data_.string()},
                                          {"architecture", arch_ ? arch_->string() : *preset_},
                                          {"train", train_config_to_json(cfg)}});
    out << meta.dump(2) << '\n';
  }

 private:
  Common& common_;
  fs::path data_, out_;
  std::optional<fs::path> arch_;
  std::optional<std::string> preset_;
  TrainFlags train_;
  bool selected_ = false;
};

class EvalCommand : public Command {
 public:
  EvalCommand(CLI::App& app, Common& common) : common_(common) {
    auto* cmd = app.add_subcommand("eval", "filtered ranking metrics of a checkpoint");
    cmd->add_option("--checkpoint", checkpoint_, "checkpoint directory")->required();
    cmd->add_option("--data", data_, "dataset directory")->required();
    cmd->add_option("--split", split_, "train, valid or test")->capture_default_str();
    cmd->add_option("--out", out_file_, "write the metrics document here as well");
    cmd->add_flag("--pessimistic", pessimistic_, "count score ties against the truth");
    cmd->callback([this] { selected_ = true; });
  }

  bool selected() const { return selected_; }

  void run(std::ostream& out) override {
    const Split split = parse_split(split_);
    const auto ck = load_checkpoint(checkpoint_);
    const auto ds = load_data(data_, {});
    if (ck.embeddings.entity_count() != ds.vocabulary.entity_count() ||
        ck.embeddings.relation_count() != ds.vocabulary.relation_count()) {
      throw DataError("checkpoint vocabulary size does not match the dataset");
    }
    const auto start = std::chrono::steady_clock::now();
    const FilterIndex filter(ds);
    EvalOptions options{pessimistic_ ? TiePolicy::kPessimistic : TiePolicy::kOptimistic,
                        common_.threads};
    const auto metrics = evaluate(ck.architecture, ck.embeddings, ds, filter, split, options);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto doc = metrics_to_json(metrics, split, secs);
    if (out_file_) write_json(*out_file_, doc);
    out << doc.dump(2) << '\n';
  }

 private:
  Common& common_;
  fs::path checkpoint_, data_;
  std::string split_ = "test";
  std::optional<fs::path> out_file_;
  bool pessimistic_ = false;
  bool selected_ = false;
};

/// Block-by-block agreement of two architectures over their common arities.
inline json diff_architectures(const ArchitectureSet& a, const ArchitectureSet& b) {
  if (a.segment_count() != b.segment_count()) {
    throw DataError("architectures use different segment counts");
  }
  json per = json::object();
  std::size_t matched = 0, total = 0;
  for (const auto& [n, core] : a.cores()) {
    if (!b.has(n)) continue;
    const auto& other = b.at(n);
    std::size_t m = 0;
    for (std::size_t k = 0; k < core.codes.size(); ++k) m += core.codes[k] == other.codes.at(k);
    per[std::to_string(n)] = json{{"matched", m}, {"blocks", core.codes.size()}};
    matched += m;
    total += core.codes.size();
  }
  return json{{"arities", per}, {"matched", matched}, {"blocks", total}};
}

class DiffArchCommand : public Command {
 public:
  explicit DiffArchCommand(CLI::App& app) {
    auto* cmd = app.add_subcommand("diff-arch", "count matching block codes of two architectures");
    cmd->add_option("first", first_)->required();
    cmd->add_option("second", second_)->required();
    cmd->callback([this] { selected_ = true; });
  }

  bool selected() const { return selected_; }

  void run(std::ostream& out) override {
    out << diff_architectures(load_architecture(first_), load_architecture(second_)).dump(2)
        << '\n';
  }

 private:
  fs::path first_, second_;
  bool selected_ = false;
};

class InspectArchCommand : public Command {
 public:
  explicit InspectArchCommand(CLI::App& app) {
    auto* cmd = app.add_subcommand("inspect-arch", "validate and summarize an architecture or theta file");
    cmd->add_option("file", file_)->required();
    cmd->callback([this] { selected_ = true; });
  }

  bool selected() const { return selected_; }

  void run(std::ostream& out) override {
    const auto doc = read_json(file_);
    json report = json::object();
    ArchitectureSet arch;
    if (is_theta(doc)) {
      const auto theta = theta_from_json(doc);
      report["kind"] = "theta";
      report["mean_entropy"] = theta.mean_entropy();
      arch = derive_final(theta);
      report["derived"] = architecture_to_json(arch);
    } else {
      report["kind"] = "architecture";
      arch = architecture_from_json(doc);
    }
    const auto violations = arch.validate();
    report["valid"] = violations.empty();
    json vs = json::array();
    for (const auto& v : violations) vs.push_back(v.message);
    report["violations"] = vs;
    json per = json::object();
    for (const auto& [n, a] : arch.cores()) {
      std::size_t pos = 0, neg = 0;
      for (int c : a.codes) {
        pos += c == 1;
        neg += c == -1;
      }
      per[std::to_string(n)] = json{{"blocks", a.codes.size()}, {"positive", pos}, {"negative", neg}};
    }
    report["arities"] = per;
    out << report.dump(2) << '\n';
    if (!violations.empty()) throw DataError("architecture is invalid: " + describe(violations));
  }

 private:
  static bool is_theta(const json& doc) {
    for (const auto& [key, value] : doc.items()) {
      if (value.is_array() && !value.empty() && value.front().is_array()) return true;
    }
    return false;
  }

  fs::path file_;
  bool selected_ = false;
};

/// Runs the CLI; returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Block-sparse tensor decomposition for n-ary facts"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file; [subcommand] sections set that command's flags");
  Common common;
  app.add_option("--seed", common.seed, "random seed")->capture_default_str();
  app.add_option("--threads", common.threads, "worker threads for evaluation")->capture_default_str();

  IngestCommand ingest(app, common);
  SynthCommand synth(app, common);
  SearchCommand search(app, common);
  TrainCommand train(app, common);
  EvalCommand eval(app, common);
  DiffArchCommand diff(app);
  InspectArchCommand inspect(app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (common.threads == 0) throw UsageError("--threads must be positive");
    Command* cmd = nullptr;
    if (ingest.selected()) cmd = &ingest;
    if (synth.selected()) cmd = &synth;
    if (search.selected()) cmd = &search;
    if (train.selected()) cmd = &train;
    if (eval.selected()) cmd = &eval;
    if (diff.selected()) cmd = &diff;
    if (inspect.selected()) cmd = &inspect;
    if (cmd == nullptr) throw UsageError("no subcommand given");
    cmd->run(out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace sparsecore::cli
