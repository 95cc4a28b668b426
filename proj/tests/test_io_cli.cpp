#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "sparsecore/cli.hpp"
#include "sparsecore/io.hpp"
#include "test_util.hpp"

namespace sparsecore {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

TEST(ArchitectureIo, RoundTrip) {
  const auto dir = testing::temp_dir("arch_io");
  ArchitectureSet arch(3, 2);
  arch.set(preset(Preset::kComplex, 2, 2));
  CoreAssignment three(3, 2);
  three.codes[3] = -1;
  three.codes[10] = 1;
  arch.set(three);
  save_architecture(dir / "a.json", arch);
  EXPECT_EQ(load_architecture(dir / "a.json"), arch);
  const auto text = slurp(dir / "a.json");
  EXPECT_EQ(text.back(), '\n');
}

TEST(ArchitectureIo, InvalidFilesAreDataErrors) {
  const auto dir = testing::temp_dir("arch_bad");
  write_text(dir / "len.json", R"({"max_arity": 2, "segment_count": 2, "2": [0, 1]})");
  EXPECT_THROW(load_architecture(dir / "len.json"), DataError);
  write_text(dir / "dom.json", R"({"max_arity": 2, "segment_count": 1, "2": [2]})");
  EXPECT_THROW(load_architecture(dir / "dom.json"), DataError);
  write_text(dir / "missing.json", R"({"max_arity": 3, "segment_count": 1, "2": [1]})");
  EXPECT_THROW(load_architecture(dir / "missing.json"), DataError);
  write_text(dir / "junk.json", "{not json");
  EXPECT_THROW(load_architecture(dir / "junk.json"), DataError);
  EXPECT_THROW(load_architecture(dir / "absent.json"), UsageError);
}

TEST(ThetaIo, RoundTrip) {
  auto theta = init_theta(3, 2);
  theta(2, 0, 1) = 0.5;
  theta(2, 1, 1) = 0.25;
  theta(2, 2, 1) = 0.25;
  const auto back = theta_from_json(theta_to_json(theta));
  EXPECT_EQ(back.matrices(), theta.matrices());
  EXPECT_EQ(back.segment_count(), 2u);
  auto doc = theta_to_json(theta);
  doc["2"][0][0] = 0.9;
  EXPECT_THROW(theta_from_json(doc), DataError);
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  const auto dir = testing::temp_dir("checkpoint");
  auto emb = testing::gaussian_embeddings(7, 3, 6, 3, 4);
  const auto arch = preset_architecture(Preset::kCp, 3, 3);
  save_checkpoint(dir, emb, arch, json{{"note", "x"}});
  const auto ck = load_checkpoint(dir);
  round_to_f32(emb);
  EXPECT_EQ(ck.embeddings, emb);
  EXPECT_EQ(ck.architecture, arch);
  EXPECT_EQ(ck.meta["note"], "x");
  EXPECT_EQ(fs::file_size(dir / "entities.bin"), 7u * 6u * 4u);
}

TEST(Checkpoint, TruncatedBinaryIsADataError) {
  const auto dir = testing::temp_dir("checkpoint_bad");
  save_checkpoint(dir, testing::gaussian_embeddings(3, 1, 2, 1, 1), preset_architecture(Preset::kCp, 2, 1));
  fs::resize_file(dir / "relations.bin", 4);
  EXPECT_THROW(load_checkpoint(dir), DataError);
}

TEST(Checkpoint, LittleEndianFloatLayout) {
  const auto dir = testing::temp_dir("checkpoint_layout");
  SegmentedEmbeddings emb(1, 1, 1, 1);
  emb.entities(0, 0) = 1.0;  // 0x3f800000
  save_checkpoint(dir, emb, preset_architecture(Preset::kCp, 2, 1));
  const auto bytes = slurp(dir / "entities.bin");
  ASSERT_EQ(bytes.size(), 4u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x3f);
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testing::temp_dir(std::string("cli_") +
                             ::testing::UnitTest::GetInstance()->current_test_info()->name());
  }
  fs::path dir_;

  fs::path synth(const std::string& name) {
    const std::vector<std::string> args = {"synth", "--out", (dir_ / name).string(), "--entities", "30",
                                     "--relations", "2", "--dim", "8", "--facts", "150",
                                     "--margin", "0.1", "--seed", "3"};
    const auto r = run_cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return dir_ / name;
  }
};

TEST_F(CliTest, IngestArityFilter) {
  write_text(dir_ / "train.tsv", "r\ta\tb\nq\ta\tb\tc\nr\tb\tc\nq\tc\tb\ta\nr\tc\ta\n");
  write_text(dir_ / "test.tsv", "q\tb\ta\tc\n");
  const auto r = run_cli({"ingest", "--data", dir_.string(), "--out", (dir_ / "out").string(),
                          "--arity", "3", "--holdout", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ds = load_dataset_dir(dir_ / "out");
  EXPECT_EQ(ds.arities(), (std::set<std::size_t>{3}));
  EXPECT_EQ(ds.train.size(), 2u);
  const auto stats = read_json(dir_ / "out" / "stats.json");
  EXPECT_EQ(stats["train"]["by_arity"]["3"], 2);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "config.json"));
}

TEST_F(CliTest, IngestMissingFileNamesThePath) {
  const auto r = run_cli({"ingest", "--train", (dir_ / "nope.tsv").string(), "--test",
                          (dir_ / "nope.tsv").string(), "--out", (dir_ / "out").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("nope.tsv"), std::string::npos);
}

TEST_F(CliTest, IngestParseErrorHasFileAndLine) {
  write_text(dir_ / "train.tsv", "r\ta\tb\nbroken\n");
  write_text(dir_ / "test.tsv", "r\ta\tb\n");
  const auto r = run_cli({"ingest", "--data", dir_.string(), "--out", (dir_ / "out").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("train.tsv"), std::string::npos);
  EXPECT_NE(r.err.find("line 2"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
  EXPECT_EQ(run_cli({"ingest", "--bogus"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
}

TEST_F(CliTest, SynthIsDeterministicAndTruthValidates) {
  const auto a = synth("a");
  const auto b = synth("b");
  for (const char* f : {"train.tsv", "valid.tsv", "test.tsv", "hidden_truth.json", "stats.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto truth = load_architecture(a / "hidden_truth.json");
  EXPECT_EQ(truth, preset_architecture(Preset::kComplex, 2, 2));
  EXPECT_EQ(run_cli({"inspect-arch", (a / "hidden_truth.json").string()}).code, 0);
}

TEST_F(CliTest, SynthRandomTruthValidates) {
  const auto a = dir_ / "a";
  const auto r = run_cli({"synth", "--out", a.string(), "--entities", "30", "--dim", "8", "--facts",
                          "100", "--truth", "random", "--margin", "0.02", "--seed", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(load_architecture(a / "hidden_truth.json").validate().empty());
}

TEST_F(CliTest, SynthUnreachableMarginExitsNumeric) {
  const auto r = run_cli({"synth", "--out", (dir_ / "x").string(), "--entities", "20", "--dim", "8",
                          "--facts", "10", "--margin", "50"});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("smaller margin"), std::string::npos);
}

TEST_F(CliTest, SearchWithZeroEpochsWritesAllZeroArchitecture) {
  const auto data = synth("data");
  const auto out = dir_ / "search";
  const auto r = run_cli({"search", "--data", data.string(), "--out", out.string(), "--dim", "8",
                          "--search-epochs", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_architecture(out / "architecture.json"), zero_architecture(2, 2));
  EXPECT_EQ(theta_from_json(read_json(out / "theta.json")).matrices(), init_theta(2, 2).matrices());
  EXPECT_TRUE(fs::exists(out / "trace.jsonl"));
  EXPECT_EQ(read_json(out / "config.json")["search"]["search_epochs"], 0);
}

TEST_F(CliTest, SearchThenDiffAgainstTruth) {
  const auto data = synth("data");
  const auto out = dir_ / "search";
  const auto r = run_cli({"search", "--data", data.string(), "--out", out.string(), "--dim", "8",
                          "--search-epochs", "1", "--valid-batch", "8", "--batch-size", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t lines = 0;
  std::ifstream trace(out / "trace.jsonl");
  for (std::string line; std::getline(trace, line);) {
    EXPECT_TRUE(json::accept(line));
    ++lines;
  }
  EXPECT_EQ(lines, 4u);  // 120 train facts / 32
  const auto diff = run_cli({"diff-arch", (out / "architecture.json").string(),
                             (data / "hidden_truth.json").string()});
  ASSERT_EQ(diff.code, 0) << diff.err;
  const auto doc = json::parse(diff.out);
  EXPECT_EQ(doc["blocks"], 8);
  EXPECT_LE(doc["matched"].get<int>(), 8);
  EXPECT_EQ(run_cli({"inspect-arch", (out / "theta.json").string()}).code, 0);
}

TEST_F(CliTest, TrainPresetCheckpointReproducesRecordedMrr) {
  const auto data = synth("data");
  const auto ck = dir_ / "ck";
  const auto r = run_cli({"train", "--data", data.string(), "--out", ck.string(), "--preset", "cp",
                          "--dim", "8", "--epochs", "3", "--batch-size", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto meta = read_json(ck / "meta.json");
  const double recorded = meta["final_valid_mrr"].get<double>();
  const auto e = run_cli({"eval", "--checkpoint", ck.string(), "--data", data.string(), "--split",
                          "valid", "--out", (dir_ / "m.json").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto metrics = json::parse(e.out);
  EXPECT_NEAR(metrics["mrr"].get<double>(), recorded, 1e-9);
  for (const char* key : {"mrr", "hits1", "hits3", "hits10", "split", "queries"}) {
    EXPECT_TRUE(metrics.contains(key)) << key;
  }
  EXPECT_EQ(read_json(dir_ / "m.json"), metrics);
  EXPECT_EQ(read_json(ck / "loss_history.json")["loss"].size(), 3u);
}

TEST_F(CliTest, TrainArchitectureMissingArity) {
  write_text(dir_ / "train.tsv", "r\ta\tb\nr\ta\tb\tc\n");
  write_text(dir_ / "test.tsv", "r\ta\tb\n");
  ASSERT_EQ(run_cli({"ingest", "--data", dir_.string(), "--out", (dir_ / "d").string(), "--holdout", "0"}).code, 0);
  save_architecture(dir_ / "a.json", preset_architecture(Preset::kCp, 2, 2));
  const auto r = run_cli({"train", "--data", (dir_ / "d").string(), "--out", (dir_ / "ck").string(),
                          "--arch", (dir_ / "a.json").string(), "--dim", "4"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("arity 3"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "ck"));
}

TEST_F(CliTest, TrainArchAndPresetAreExclusive) {
  const auto data = synth("data");
  EXPECT_EQ(run_cli({"train", "--data", data.string(), "--out", (dir_ / "ck").string(), "--preset",
                     "cp", "--arch", "x.json"}).code,
            2);
}

TEST_F(CliTest, EvalUnknownSplitListsValidOnes) {
  const auto data = synth("data");
  const auto ck = dir_ / "ck";
  save_checkpoint(ck, testing::gaussian_embeddings(30, 2, 8, 2, 1), preset_architecture(Preset::kCp, 2, 2));
  const auto r = run_cli({"eval", "--checkpoint", ck.string(), "--data", data.string(), "--split", "dev"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train, valid, test"), std::string::npos);
}

TEST_F(CliTest, EvalOfExactModelCheckpointIsPerfect) {
  write_text(dir_ / "train.tsv", "r0\ta\tb\nr1\tc\td\te\n");
  write_text(dir_ / "test.tsv", "r0\ta\tb\nr1\tc\td\te\n");
  const auto data = dir_ / "d";
  ASSERT_EQ(run_cli({"ingest", "--data", dir_.string(), "--out", data.string(), "--holdout", "0"}).code, 0);
  const auto ds = load_dataset_dir(data);
  const auto model = lemma1_construct(ds.train, ds.vocabulary.entity_count(), ds.vocabulary.relation_count());
  save_checkpoint(dir_ / "ck", model.embeddings, model.architecture);
  const auto r = run_cli({"eval", "--checkpoint", (dir_ / "ck").string(), "--data", data.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = json::parse(r.out);
  EXPECT_EQ(m["mrr"], 1.0);
  EXPECT_EQ(m["hits1"], 1.0);
  EXPECT_EQ(m["queries"], 5);
}

TEST_F(CliTest, InspectReportsViolations) {
  write_text(dir_ / "bad.json", R"({"max_arity": 2, "segment_count": 1, "2": [7]})");
  const auto r = run_cli({"inspect-arch", (dir_ / "bad.json").string()});
  EXPECT_EQ(r.code, 3);
  const auto doc = json::parse(r.out);
  EXPECT_EQ(doc["valid"], false);
  EXPECT_EQ(doc["violations"].size(), 1u);
}

TEST_F(CliTest, ConfigFileSetsFlagsAndCommandLineOverrides) {
  const auto data = synth("data");
  write_text(dir_ / "run.toml", "seed = 11\n[search]\nsearch-epochs = 0\ndim = 8\nlambda = 3\n");
  const auto out = dir_ / "s";
  auto r = run_cli({"--config", (dir_ / "run.toml").string(), "search", "--data", data.string(),
                    "--out", out.string(), "--lambda", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cfg = read_json(out / "config.json");
  EXPECT_EQ(cfg["search"]["lambda"], 4);
  EXPECT_EQ(cfg["search"]["search_epochs"], 0);
  EXPECT_EQ(cfg["search"]["seed"], 11);
  EXPECT_EQ(cfg["train"]["dimension"], 8);
}

}  // namespace
}  // namespace sparsecore
