#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>

#include "itm/binary_io.hpp"
#include "itm/metrics.hpp"
#include "itm/trainer.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace itm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const fs::path& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(ITM_CLI_PATH) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

std::string toy_path() { return (testing::data_dir() / "toy_corpus.json").string(); }

// Writes perfect i2t and t2i runs for the toy corpus into `dir`.
void write_perfect_runs(const fs::path& dir) {
  const Corpus c = load_corpus(toy_path(), Split::kTest);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(c.num_images(), c.num_captions());
  for (std::size_t j = 0; j < c.num_captions(); ++j) s(c.image_of(j), j) = 1.0;
  save_run(rank_by_scores(s, Direction::kI2T), dir / "i2t.itrr");
  save_run(rank_by_scores(s.transpose(), Direction::kT2I), dir / "t2i.itrr");
}

TEST(Cli, HelpListsEveryFlag) {
  const auto dir = testing::scratch_dir("cli_help");
  const Result r = run(dir, "--help");
  EXPECT_EQ(r.code, 0);
  for (const char* flag :
       {"build-df", "simmat", "eval", "train", "correlate", "rank", "synth", "--captions",
        "--split", "--out", "--df", "--run", "--sim", "--m", "--k", "--non-gt", "--report",
        "--config", "--out-model", "--judgments", "--scores", "--threads", "--manifest",
        "--leave-one-out", "--verify-df"}) {
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
}

TEST(Cli, MissingFileIsIoErrorWithJson) {
  const auto dir = testing::scratch_dir("cli_missing");
  const Result r = run(dir, "build-df --captions /nonexistent/x.json --out " +
                                (dir / "x.itdf").string());
  EXPECT_EQ(r.code, 2);
  const json j = json::parse(r.err);
  EXPECT_EQ(j["error"]["kind"], "io");
  EXPECT_FALSE(j["error"]["message"].get<std::string>().empty());
}

TEST(Cli, UsageAndValidationErrorsExitThree) {
  const auto dir = testing::scratch_dir("cli_usage");
  EXPECT_EQ(run(dir, "frobnicate").code, 3);
  EXPECT_EQ(run(dir, "build-df --out x").code, 3);
  write_text_file(dir / "bad.json", "{\"images\": [{\"id\": \"a\", \"sentences\": []}]}");
  const Result r = run(dir, "build-df --captions " + (dir / "bad.json").string() + " --out " +
                                (dir / "x.itdf").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(json::parse(r.err)["error"]["kind"], "integrity");
}

TEST(Cli, BuildDfIsIdempotentAndLoadable) {
  const auto dir = testing::scratch_dir("cli_df");
  const std::string args = "build-df --captions " + toy_path() + " --split test --out ";
  ASSERT_EQ(run(dir, args + (dir / "a.itdf").string()).code, 0);
  ASSERT_EQ(run(dir, args + (dir / "b.itdf").string()).code, 0);
  EXPECT_EQ(read_text_file(dir / "a.itdf"), read_text_file(dir / "b.itdf"));
  const DfTable df = load_df(dir / "a.itdf");
  EXPECT_EQ(df.corpus_size, 12u);
  EXPECT_EQ(df.serialize(), build_df(load_corpus(toy_path(), Split::kTest)).serialize());

  const json m = json::parse(read_text_file(dir / "a.itdf.manifest.json"));
  EXPECT_EQ(m["command"], "build-df");
  EXPECT_TRUE(m.contains("inputs"));
  EXPECT_TRUE(m.contains("tool_version"));
  EXPECT_TRUE(m.contains("wall_clock_seconds"));
  const json m2 = json::parse(read_text_file(dir / "b.itdf.manifest.json"));
  EXPECT_EQ(m["inputs"], m2["inputs"]);
}

TEST(Cli, EvalReportsPerfectRun) {
  const auto dir = testing::scratch_dir("cli_eval");
  const std::string d = dir.string();
  ASSERT_EQ(run(dir, "build-df --captions " + toy_path() + " --out " + d + "/t.itdf").code, 0);
  ASSERT_EQ(run(dir, "--threads 2 simmat --captions " + toy_path() + " --df " + d +
                         "/t.itdf --out " + d + "/t.itsm")
                .code,
            0);
  write_perfect_runs(dir);
  const std::string eval = "eval --run " + d + "/i2t.itrr --run " + d + "/t2i.itrr --captions " +
                           toy_path() + " --sim " + d + "/t.itsm";
  const Result table = run(dir, eval + " --m k");
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_NE(table.out.find("Rsum"), std::string::npos);
  EXPECT_NE(table.out.find("600.0"), std::string::npos) << table.out;
  EXPECT_NE(table.out.find("Nsum"), std::string::npos);
  EXPECT_EQ(table.out.find("Nsum(N)"), std::string::npos);

  const Result non_gt = run(dir, eval + " --m k --non-gt");
  ASSERT_EQ(non_gt.code, 0);
  EXPECT_NE(non_gt.out.find("Nsum(N)"), std::string::npos) << non_gt.out;
  EXPECT_NE(non_gt.out.find("gt_removed=true"), std::string::npos);

  const Result js = run(dir, eval + " --report json --m 5 --verify-df " + d + "/t.itdf");
  ASSERT_EQ(js.code, 0) << js.err;
  const json j = json::parse(js.out);
  EXPECT_DOUBLE_EQ(j["rsum"].get<double>(), 600.0);
  EXPECT_EQ(j["config"]["m"], 5);

  // A df table from another corpus does not match the sim provenance.
  write_text_file(dir / "other.json",
                  "{\"images\": [{\"id\": \"z\", \"sentences\": [{\"raw\": \"x\"}]}]}");
  ASSERT_EQ(run(dir, "build-df --captions " + d + "/other.json --out " + d + "/o.itdf").code, 0);
  const Result mismatch = run(dir, eval + " --m k --verify-df " + d + "/o.itdf");
  EXPECT_EQ(mismatch.code, 3);
  EXPECT_EQ(json::parse(mismatch.err)["error"]["kind"], "provenance");
}

TEST(Cli, SimmatStreamingAndThreadsGiveSameBytes) {
  const auto dir = testing::scratch_dir("cli_simmat");
  const std::string d = dir.string();
  ASSERT_EQ(run(dir, "build-df --captions " + toy_path() + " --out " + d + "/t.itdf").code, 0);
  const std::string base = "simmat --captions " + toy_path() + " --df " + d + "/t.itdf ";
  ASSERT_EQ(run(dir, base + "--threads 1 --out " + d + "/a.itsm").code, 0);
  ASSERT_EQ(run(dir, base + "--threads 4 --stream --out " + d + "/b.itsm").code, 0);
  EXPECT_EQ(read_text_file(dir / "a.itsm"), read_text_file(dir / "b.itsm"));
}

TEST(Cli, TrainBundledConfigWithinAMinute) {
  const auto dir = testing::scratch_dir("cli_train");
  const auto start = std::chrono::steady_clock::now();
  const Result r = run(dir, "train --config " + (testing::data_dir() / "synth.toml").string() +
                                " --out-model " + (dir / "m.itmw").string() + " --report " +
                                (dir / "report.json").string());
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(secs, 60.0);
  const Model m = load_model(dir / "m.itmw");
  EXPECT_EQ(m.dim(), 32);
  const json report = json::parse(read_text_file(dir / "report.json"));
  EXPECT_EQ(report["epochs"].size(), 21u);
  EXPECT_GT(report["epochs"].back()["val"]["rsum"].get<double>(),
            report["epochs"][0]["val"]["rsum"].get<double>());
  EXPECT_TRUE(fs::exists(dir / "m.itmw.manifest.json"));
}

TEST(Cli, SynthRankEvalPipeline) {
  const auto dir = testing::scratch_dir("cli_pipeline");
  const std::string d = dir.string();
  ASSERT_EQ(run(dir, "synth --seed 3 --topics 2 --pairs-per-topic 6 --dim 8 --val-per-topic 2 "
                     "--out-dir " + d + "/data").code, 0);
  write_text_file(dir / "run.toml",
                  "[train]\nepochs = 2\nbatch_size = 8\njoint_dim = 4\n[data]\nsource = files\n"
                  "captions = data/captions.json\n"
                  "image_features_train = data/images_train.itmf\n"
                  "caption_features_train = data/captions_train.itmf\n"
                  "image_features_val = data/images_val.itmf\n"
                  "caption_features_val = data/captions_val.itmf\n");
  ASSERT_EQ(run(dir, "train --config " + d + "/run.toml --out-model " + d + "/m.itmw --report " +
                         d + "/r.json").code, 0);
  const Result rank = run(dir, "rank --model " + d + "/m.itmw --captions " + d +
                                   "/data/captions.json --split val --image-features " + d +
                                   "/data/images_val.itmf --caption-features " + d +
                                   "/data/captions_val.itmf --out-i2t " + d +
                                   "/i2t.itrr --out-t2i " + d + "/t2i.itrr");
  ASSERT_EQ(rank.code, 0) << rank.err;
  ASSERT_EQ(run(dir, "build-df --captions " + d + "/data/captions.json --split val --out " + d +
                         "/v.itdf").code, 0);
  ASSERT_EQ(run(dir, "simmat --captions " + d + "/data/captions.json --split val --df " + d +
                         "/v.itdf --out " + d + "/v.itsm").code, 0);
  const Result ev = run(dir, "eval --run " + d + "/i2t.itrr --run " + d + "/t2i.itrr --captions " +
                                 d + "/data/captions.json --split val --sim " + d +
                                 "/v.itsm --m k --report json");
  ASSERT_EQ(ev.code, 0) << ev.err;
  const double rsum = json::parse(ev.out)["rsum"];
  EXPECT_GE(rsum, 0.0);
  EXPECT_LE(rsum, 600.0);
}

TEST(Cli, CorrelateJoinsJudgments) {
  const auto dir = testing::scratch_dir("cli_correlate");
  write_text_file(dir / "h.tsv", "image_id\tcaption_id\tscore\na\t1\t1\na\t2\t2\nb\t3\t3\n");
  write_text_file(dir / "s.tsv", "a\t1\t2\na\t2\t4\nb\t3\t6\n");
  const Result r = run(dir, "correlate --judgments " + (dir / "h.tsv").string() + " --scores " +
                                (dir / "s.tsv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["pearson_r"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(j["matched"], 3);
  write_text_file(dir / "flat.tsv", "a\t1\t2\na\t2\t2\nb\t3\t2\n");
  EXPECT_EQ(run(dir, "correlate --judgments " + (dir / "h.tsv").string() + " --scores " +
                         (dir / "flat.tsv").string()).code, 3);
}

}  // namespace
}  // namespace itm
