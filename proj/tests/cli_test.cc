#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "anomhead/anomhead.hpp"

namespace anomhead {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(ANOMHEAD_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

double report_value(const fs::path& report, const std::string& key) {
  const std::string text = read_file_text(report);
  const auto at = text.find(key + "=");
  if (at == std::string::npos) return -1;
  return std::stod(text.substr(at + key.size() + 1));
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "anomhead_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_file_text(dir_ / "small.ini",
                    "[train]\nepochs = 6\nbatch_size = 8\nlearning_rate = 1e-3\n"
                    "[model]\nd_v = 32\nd_t = 24\nd_e = 16\n"
                    "[synth]\nn_train = 16\nn_test = 8\n");
  }
  static fs::path dir_;
  fs::path data() const { return dir_ / "data"; }
  std::string common() const {
    return "--manifest " + q(data() / "manifest.tsv") + " --textbank " + q(data() / "textbank.adtx") + " --config " +
           q(dir_ / "small.ini");
  }
  void ensure_data() const {
    if (!fs::exists(data() / "manifest.tsv")) {
      ASSERT_EQ(run("synth --spec " + q(dir_ / "small.ini") + " --out " + q(data())).code, 0);
    }
  }
};
fs::path Cli::dir_;

TEST_F(Cli, SynthThenValidate) {
  ensure_data();
  EXPECT_EQ(read_manifest(data() / "manifest.tsv").entries.size(), 24u);
  const CliRun v = run("validate --features " + q(data()));
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_NE(v.out.find("25 file(s) checked, 0 with violations"), std::string::npos) << v.out;
}

TEST_F(Cli, ValidateReportsViolationsAndCorruption) {
  ensure_data();
  // Swap the first and last layer ids in place; they follow the 33-byte header.
  auto bytes = read_file_bytes(data() / "test" / "0000.adft");
  ASSERT_EQ(bytes[33], 6);
  bytes[33] = 24;
  bytes[45] = 6;
  write_file_bytes(dir_ / "bad" / "order.adft", bytes);
  write_file_bytes(dir_ / "bad" / "junk.adft", std::vector<std::uint8_t>{'n', 'o', 'p', 'e'});
  const CliRun v = run("validate --features " + q(dir_ / "bad"));
  EXPECT_EQ(v.code, 1) << v.out;
  EXPECT_NE(v.out.find("layer_indices"), std::string::npos) << v.out;
  EXPECT_NE(v.out.find("junk.adft: FORMAT"), std::string::npos) << v.out;
  EXPECT_EQ(run("validate --features " + q(dir_ / "missing")).code, 3);
}

TEST_F(Cli, TrainTwiceIsByteIdenticalAndEvalBeatsBaseline) {
  ensure_data();
  const CliRun a = run("train " + common() + " --seed 3 --out " + q(dir_ / "a.adck") + " --log " + q(dir_ / "a.log"));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(run("train " + common() + " --seed 3 --out " + q(dir_ / "b.adck")).code, 0);
  EXPECT_EQ(read_file_bytes(dir_ / "a.adck"), read_file_bytes(dir_ / "b.adck"));
  ASSERT_EQ(run("train " + common() + " --seed 4 --out " + q(dir_ / "c.adck")).code, 0);
  EXPECT_NE(read_file_bytes(dir_ / "a.adck"), read_file_bytes(dir_ / "c.adck"));

  const std::string log = read_file_text(dir_ / "a.log");
  EXPECT_EQ(log.rfind("# epoch\tstep\ttotal\tcm\taacm\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1 + 6 * 2);

  const CliRun base = run("eval " + common() + " --baseline --report " + q(dir_ / "base.txt"));
  ASSERT_EQ(base.code, 0) << base.out;
  const CliRun trained = run("eval " + common() + " --ckpt " + q(dir_ / "a.adck") + " --report " + q(dir_ / "trained.txt"));
  ASSERT_EQ(trained.code, 0) << trained.out;
  EXPECT_NE(trained.out.find("pixel AUROC"), std::string::npos);
  EXPECT_GT(report_value(dir_ / "trained.txt", "pixel_auroc"), report_value(dir_ / "base.txt", "pixel_auroc"));
  EXPECT_EQ(report_value(dir_ / "trained.txt", "n_images"), 8);
}

TEST_F(Cli, InferWritesMaps) {
  ensure_data();
  ASSERT_EQ(run("train " + common() + " --set train.epochs=1 --out " + q(dir_ / "one.adck")).code, 0);
  const std::string base = "infer --config " + q(dir_ / "small.ini") + " --set train.epochs=1 --textbank " +
                           q(data() / "textbank.adtx") + " --ckpt " + q(dir_ / "one.adck") + " --bundle " +
                           q(data() / "test" / "0001.adft");
  const CliRun r = run(base + " --out-pfm " + q(dir_ / "map.pfm") + " --out-pgm " + q(dir_ / "map.pgm"));
  ASSERT_EQ(r.code, 0) << r.out;
  const ScoreGrid pfm = read_pfm(dir_ / "map.pfm");
  EXPECT_EQ(pfm.height, 32u);
  EXPECT_EQ(pfm.width, 32u);
  const auto pgm = read_file_bytes(dir_ / "map.pgm");
  EXPECT_EQ(std::string(pgm.begin(), pgm.begin() + 2), "P5");
  EXPECT_EQ(pgm.size(), std::string("P5\n32 32\n255\n").size() + 32 * 32);

  // Same inputs, same output bytes.
  ASSERT_EQ(run(base + " --out-pfm " + q(dir_ / "map2.pfm")).code, 0);
  EXPECT_EQ(read_file_bytes(dir_ / "map.pfm"), read_file_bytes(dir_ / "map2.pfm"));
}

TEST_F(Cli, FailuresArePrefixedByCategory) {
  ensure_data();
  write_file_text(dir_ / "typo.ini", "[train]\nepochs = 2\nlearnin_rate = 1\n");
  CliRun r = run("train --manifest " + q(data() / "manifest.tsv") + " --textbank " + q(data() / "textbank.adtx") +
              " --config " + q(dir_ / "typo.ini") + " --out " + q(dir_ / "x.adck"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("CONFIG: "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("typo.ini:3"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("train.learnin_rate"), std::string::npos) << r.out;

  r = run("train " + common() + " --set model.d_e=8 --out " + q(dir_ / "e8.adck"));
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("eval " + common() + " --ckpt " + q(dir_ / "e8.adck"));
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(r.out.rfind("COMPAT: ", 0), 0u) << r.out;

  r = run("eval " + common() + " --ckpt " + q(dir_ / "nothing.adck"));
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.out.rfind("FORMAT: ", 0), 0u) << r.out;

  r = run("train " + common() + " --set model.d_v=16 --out " + q(dir_ / "x.adck"));
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.out.find("train/0000.adft"), std::string::npos) << r.out;

  write_file_text(dir_ / "empty.tsv", "test\tsynthetic\tdata/test/0000.adft\n");
  r = run("train --manifest " + q(dir_ / "empty.tsv") + " --textbank " + q(data() / "textbank.adtx") + " --config " +
          q(dir_ / "small.ini") + " --out " + q(dir_ / "x.adck"));
  EXPECT_EQ(r.code, 5);
  EXPECT_EQ(r.out.rfind("VALIDATION: ", 0), 0u) << r.out;

  r = run("train --bogus");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.out.rfind("CONFIG: ", 0), 0u) << r.out;
}

}  // namespace
}  // namespace anomhead
