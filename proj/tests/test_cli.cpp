#include <gtest/gtest.h>

#include <sys/wait.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "doccog/io.hpp"
#include "doccog/reward.hpp"
#include "doccog/supervision.hpp"
#include "fixtures.hpp"

using namespace doccog;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(DOCCOG_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    static std::atomic<int> counter{0};
    dir_ = fs::temp_directory_path() / ("doccog_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string file(const std::string& name, const std::string& contents) {
    const fs::path p = dir_ / name;
    write_file(p, contents);
    return p.string();
  }

  std::string docs() const { return (fixtures::toy_dir() / "docs").string(); }

  // Writes a corpus as aligned rollout and gold files.
  std::pair<std::string, std::string> corpus_files(const std::vector<corpus::Item>& items) {
    std::string r, g;
    for (const auto& it : items) {
      r += rollout_to_json(it.record).dump() + "\n";
      g += it.gold_json.dump() + "\n";
    }
    return {file("rollouts.jsonl", r), file("gold.jsonl", g)};
  }

  fs::path dir_;
};

std::string revenue_trace() {
  return serialize_trace(fixtures::trace({{Operator::Select, "table", {{"key", "Revenue"}}},
                                          {Operator::Read, "table", {}},
                                          {Operator::Aggregate, "table", {{"fn", "sum"}}}},
                                         "315"));
}

}  // namespace

TEST_F(Cli, ValidateReportsSchema) {
  const std::string doc = (fixtures::toy_dir() / "docs" / "annual_report.json").string();
  const CliRun ok = run("validate --trace " + file("t.json", revenue_trace()) + " --doc " + doc);
  EXPECT_EQ(ok.status, 0);
  const json j = json::parse(ok.out);
  EXPECT_TRUE(j["schema_ok"].get<bool>());
  EXPECT_EQ(j["diversity"].get<double>(), 1.0);

  const CliRun figure = run("validate --trace " + file("f.json", serialize_trace(fixtures::trace({{Operator::Select, "figure", {}}}))) +
                         " --doc " + doc);
  EXPECT_EQ(figure.status, 1);
  EXPECT_EQ(json::parse(figure.out)["violations"][0]["code"], "E_REGION_UNRESOLVED");

  const CliRun garbage = run("validate --trace " + file("g.json", "not json"));
  EXPECT_EQ(garbage.status, 1);
  EXPECT_FALSE(json::parse(garbage.out)["parsed"].get<bool>());
}

TEST_F(Cli, ExecPrintsAnswer) {
  const std::string doc = (fixtures::toy_dir() / "docs" / "annual_report.json").string();
  const CliRun r = run("exec --doc " + doc + " --trace " + file("t.json", revenue_trace()));
  ASSERT_EQ(r.status, 0);
  const json j = json::parse(r.out);
  EXPECT_EQ(j["answer"], "315");
  EXPECT_TRUE(j["status"]["ok"].get<bool>());
  EXPECT_EQ(j["log"].size(), 3u);
}

TEST_F(Cli, ScoreKeepsInputOrderAndMatchesLibrary) {
  const auto items = corpus::make_filter_corpus(3, 41);
  const auto [rollouts, gold] = corpus_files(items);
  const CliRun r = run("score --docs " + docs() + " --rollouts " + rollouts + " --gold " + gold);
  ASSERT_EQ(r.status, 0);
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const json j = json::parse(out[i]);
    EXPECT_EQ(j["doc_id"], items[i].record.doc_id);
    const RewardBreakdown b = composite_reward(items[i].record, fixtures::toy_docs().at(items[i].record.doc_id), items[i].gold, {}, false);
    EXPECT_EQ(j["breakdown"]["total"].get<double>(), b.total);
    EXPECT_EQ(j["retain"].get<bool>(), items[i].expect_retain);
  }
}

TEST_F(Cli, FilterMatchesCorpusOracle) {
  const auto items = corpus::make_filter_corpus(200, 7);
  const auto [rollouts, gold] = corpus_files(items);
  const CliRun r = run("filter --docs " + docs() + " --rollouts " + rollouts + " --gold " + gold);
  ASSERT_EQ(r.status, 0);
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const json j = json::parse(out[i]);
    EXPECT_EQ(j["line"].get<std::size_t>(), i + 1);
    EXPECT_EQ(j["retain"].get<bool>(), items[i].expect_retain) << items[i].kind;
    if (!items[i].expect_retain) EXPECT_EQ(j["reason"], items[i].expect_reason) << items[i].kind;
  }
}

TEST_F(Cli, OutputIndependentOfJobsAndRepeatable) {
  // 600 lines span several chunks at one job.
  const auto [rollouts, gold] = corpus_files(corpus::make_filter_corpus(600, 3));
  const std::string args = "score --docs " + docs() + " --rollouts " + rollouts + " --gold " + gold;
  const CliRun one = run(args + " --jobs 1");
  const CliRun four = run(args + " --jobs 4");
  ASSERT_EQ(one.status, 0);
  EXPECT_EQ(lines(one.out).size(), 600u);
  EXPECT_EQ(one.out, four.out);
  EXPECT_EQ(one.out, run(args + " --jobs 1").out);
}

TEST_F(Cli, BadRolloutLineIsReportedInPlace) {
  const auto items = corpus::make_filter_corpus(2, 5);
  std::string r = rollout_to_json(items[0].record).dump() + "\n{broken\n";
  json unknown = rollout_to_json(items[1].record);
  unknown["doc_id"] = "nowhere";
  r += unknown.dump() + "\n";
  const std::string g = items[0].gold_json.dump() + "\n" + items[1].gold_json.dump() + "\n" + R"({"answers":["x"]})" + "\n";
  const CliRun out = run("filter --docs " + docs() + " --rollouts " + file("r.jsonl", r) + " --gold " + file("g.jsonl", g));
  EXPECT_EQ(out.status, 0);
  const auto ls = lines(out.out);
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(json::parse(ls[1])["error"]["code"], "E_RECORD");
  EXPECT_EQ(json::parse(ls[1])["line"], 2);
  EXPECT_EQ(json::parse(ls[2])["error"]["code"], "E_UNKNOWN_DOC");
}

TEST_F(Cli, GoldProblemsFailTheRun) {
  const auto items = corpus::make_filter_corpus(2, 5);
  const std::string r = rollout_to_json(items[0].record).dump() + "\n" + rollout_to_json(items[1].record).dump() + "\n";
  const std::string good = items[0].gold_json.dump() + "\n" + items[1].gold_json.dump() + "\n";
  auto status = [&](const std::string& gold) {
    return run("filter --docs " + docs() + " --rollouts " + file("r.jsonl", r) + " --gold " + file("g.jsonl", gold)).status;
  };
  EXPECT_EQ(status(good), 0);
  EXPECT_EQ(status(items[0].gold_json.dump() + "\n{oops\n"), 1);
  EXPECT_EQ(status(items[0].gold_json.dump() + "\n"), 1);
  EXPECT_EQ(status(good + items[0].gold_json.dump() + "\n"), 1);
  EXPECT_EQ(status(items[0].gold_json.dump() + "\n" + R"({"answers": 5})" + "\n"), 1);
  json wrong_doc = items[1].gold_json;
  wrong_doc["doc_id"] = "somewhere_else";
  EXPECT_EQ(status(items[0].gold_json.dump() + "\n" + wrong_doc.dump() + "\n"), 1);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
  EXPECT_EQ(run("supervise --doc " + docs() + "/invoice.json --grid 4by4").status, 2);
  EXPECT_EQ(run("supervise --doc " + docs() + "/invoice.json --grid 0x4").status, 2);
  EXPECT_EQ(run("score --docs " + docs()).status, 2);
  EXPECT_EQ(run("grpo-demo --fixture " + fixtures::toy_dir().string() + " --group 1").status, 2);
  EXPECT_EQ(run("score --docs " + docs() + " --rollouts /etc/hostname --gold /etc/hostname --jobs 0").status, 2);
  EXPECT_EQ(run("--help").status, 0);
}

TEST_F(Cli, SuperviseMatchesLibrary) {
  const CliRun r = run("supervise --doc " + docs() + "/invoice.json --grid 3x5");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(grid_from_json(json::parse(r.out)), build_supervision_map(fixtures::invoice(), 3, 5));
}

TEST_F(Cli, GradCheckPasses) {
  const CliRun r = run("grad-check --seed 3");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("max_rel_error="), std::string::npos);
}

TEST_F(Cli, DemosReproduceGoldenLogs) {
  const fs::path tower_log = dir_ / "tower.csv", grpo_log = dir_ / "grpo.csv";
  const CliRun tower = run("tower-train --pages " + (fixtures::data_dir() / "pages").string() + " --log " + tower_log.string());
  ASSERT_EQ(tower.status, 0);
  EXPECT_EQ(read_file(tower_log), read_file(fixtures::golden_dir() / "tower_curve.csv"));
  const CliRun grpo = run("grpo-demo --fixture " + fixtures::toy_dir().string() + " --log " + grpo_log.string());
  ASSERT_EQ(grpo.status, 0);
  EXPECT_EQ(read_file(grpo_log), read_file(fixtures::golden_dir() / "grpo_log.csv"));
}
