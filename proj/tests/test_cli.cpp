#include "doctest.h"
#include "support.hpp"

#include "cnet/cli.hpp"

#include <fstream>
#include <sstream>

using namespace cnet;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "cnet");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string at(const std::filesystem::path& dir, const char* name) { return (dir / name).string(); }

// A training run small enough for a unit test.
std::vector<std::string> tiny_train(const std::filesystem::path& dir) {
  return {"train", "--J0", "2", "--M", "4", "--K", "2", "--epochs", "1", "--batch_size", "4",
          "--train_count", "8", "--test_count", "4", "--points", "64", "--synthetic", "sphere,cube",
          "--checkpoint", at(dir, "m.cpnt"), "--log", at(dir, "log.csv"),
          "--predictions", at(dir, "pred.csv"), "--deterministic", "true", "--seed", "3"};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("configuration errors exit with 2") {
  const auto dir = testing::scratch_dir("cli_errors");
  const Outcome missing = run({"train", "--epochs", "1"});
  CHECK(missing.code == kExitConfig);
  CHECK(missing.err.find("J0") != std::string::npos);
  CHECK(run({"train", "--J0", "2", "--bogus", "1"}).code == kExitConfig);
  CHECK(run({"train", "--J0", "0"}).code == kExitConfig);
  CHECK(run({"train", "--J0", "2", "--layer", "mlp"}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);
  CHECK(run({}).code == kExitConfig);
  CHECK(run({"train", "--J0", "2", "--config", at(dir, "absent.cfg")}).code == kExitConfig);
  CHECK(run({"detect", "--detector", "oracle"}).code == kExitConfig);
  CHECK(run({"detect", "--angles", "45,90"}).code == kExitConfig);
  CHECK(run({"train", "--help"}).code == kExitOk);
}

TEST_CASE("train: smoke run writes checkpoint, log and predictions") {
  const auto dir = testing::scratch_dir("cli_train");
  const Outcome r = run(tiny_train(dir));
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(r.out.find("test OA") != std::string::npos);
  CHECK(std::filesystem::file_size(dir / "m.cpnt") > 0);
  CHECK(slurp(dir / "log.csv").rfind("epoch,", 0) == 0);
  CHECK(slurp(dir / "pred.csv").rfind("instance_id,pred,label\n", 0) == 0);

  const Outcome ev = run({"eval", "--predictions", at(dir, "pred.csv")});
  CHECK(ev.code == kExitOk);
  CHECK(ev.out.find("OA") != std::string::npos);
  CHECK(ev.out.find("AA") != std::string::npos);
}

TEST_CASE("config files, overrides and the dumped configuration") {
  const auto dir = testing::scratch_dir("cli_config");
  std::ofstream(dir / "run.cfg") << "# tiny run\nJ0 = 2\nM=4\nK=2\nepochs=3\nbatch_size=4\n"
                                 << "train_count=8\ntest_count=4\npoints=64\nsynthetic=\"sphere,cube\"\n"
                                 << "deterministic=true\nseed=3\n";
  const Outcome r = run({"train", "--config", at(dir, "run.cfg"), "--epochs", "1", "--checkpoint",
                         at(dir, "a.cpnt"), "--log", at(dir, "a.csv"), "--dump_config",
                         at(dir, "dump.cfg")});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const std::string dumped = slurp(dir / "dump.cfg");
  CHECK(dumped.find("epochs=1\n") != std::string::npos);
  CHECK(dumped.find("J0=2\n") != std::string::npos);

  // Replaying the dump reproduces the run byte for byte.
  const Outcome again = run({"train", "--config", at(dir, "dump.cfg"), "--checkpoint",
                             at(dir, "b.cpnt"), "--log", at(dir, "b.csv")});
  REQUIRE_MESSAGE(again.code == kExitOk, again.err);
  CHECK(slurp(dir / "a.cpnt") == slurp(dir / "b.cpnt"));
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));

  std::ofstream(dir / "bad.cfg") << "J0=2\nnot_an_option=4\n";
  CHECK(run({"train", "--config", at(dir, "bad.cfg")}).code == kExitConfig);
}

TEST_CASE("train accepts the ModelNet40 configuration") {
  const auto dir = testing::scratch_dir("cli_mn40");
  const Outcome r = run({"train", "--J0", "64", "--M", "64", "--K", "16", "--epochs", "0",
                         "--train_count", "4", "--test_count", "0", "--points", "1024",
                         "--synthetic", "sphere,cube", "--checkpoint", at(dir, "m.cpnt"), "--log",
                         at(dir, "log.csv")});
  CHECK_MESSAGE(r.code == kExitOk, r.err);
}

TEST_CASE("paramcount prints a CSV sweep") {
  const Outcome r = run({"paramcount", "--M_list", "8,256", "--kinds", "conv_composite,baseline"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "kind,M,parameters,growth_vs_first");
  int rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
  }
  CHECK(rows == 4);
}

TEST_CASE("detect: baselines, AUC output and undefined AUC") {
  const auto dir = testing::scratch_dir("cli_detect");
  const Outcome good = run({"detect", "--detector", "good_ifor", "--train_count", "30",
                            "--test_normal", "10", "--test_anomalous", "10", "--points", "256",
                            "--scores", at(dir, "s.csv"), "--results_out", at(dir, "r.csv"),
                            "--method_name", "GOOD+IFOR"});
  REQUIRE_MESSAGE(good.code == kExitOk, good.err);
  CHECK(good.out.find("AUC") != std::string::npos);
  CHECK(slurp(dir / "s.csv").rfind("instance_id,score,label\n", 0) == 0);

  const Outcome scores = run({"eval", "--scores", at(dir, "s.csv")});
  CHECK(scores.code == kExitOk);
  CHECK(scores.out.find("AUC") != std::string::npos);

  const Outcome single = run({"detect", "--detector", "good_ifor", "--train_count", "30",
                              "--test_normal", "10", "--test_anomalous", "0", "--points", "256",
                              "--scores", at(dir, "t.csv")});
  CHECK(single.code == kExitAucUndefined);
}

TEST_CASE("eval: results table with ranks and Wilcoxon p") {
  const auto dir = testing::scratch_dir("cli_eval");
  {
    std::ofstream f(dir / "results.csv");
    f << "class,method,value\n";
    const char* classes[] = {"a", "b", "c", "d", "e"};
    for (int c = 0; c < 5; ++c) {
      f << classes[c] << ",Ours," << 0.9 - 0.01 * c << '\n';
      f << classes[c] << ",IFOR," << 0.6 - 0.02 * c << '\n';
    }
  }
  const Outcome r = run({"eval", "--results", at(dir, "results.csv"), "--out", at(dir, "t.csv")});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(r.out.find("Avg. Rank") != std::string::npos);
  CHECK(r.out.find("Wilcoxon-p") != std::string::npos);
  CHECK(slurp(dir / "t.csv").rfind("class,Ours,IFOR", 0) == 0);
  CHECK(run({"eval"}).code == kExitConfig);
}

}  // TEST_SUITE
