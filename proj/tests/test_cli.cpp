#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace commrand;
using namespace commrand::testing;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    root_ = fresh_dir("cli");
    write_text(root_ / "sbm.json",
               R"j({"num_communities": 4, "community_size": 60, "p_in": 0.15, "p_out": 0.005})j");
    ASSERT_EQ(run_cli("gen-sbm --config " + (root_ / "sbm.json").string() + " --seed 3 --out " +
                      (root_ / "data").string()),
              0);
    ASSERT_EQ(run_cli("detect " + (root_ / "data").string() + " --seed 1"), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
  fs::path data() const { return root_ / "data"; }
  std::string comm() const { return (data() / "communities.txt").string(); }
};

fs::path Cli::root_;

} // namespace

TEST_F(Cli, GenSbmIsByteReproducible) {
  ASSERT_EQ(run_cli("gen-sbm --config " + (root_ / "sbm.json").string() + " --seed 3 --out " +
                    (root_ / "again").string()),
            0);
  for (auto f : {"edges.txt", "features.bin", "labels.txt", "train.txt", "val.txt", "test.txt", "blocks.txt",
                 "meta.json"})
    EXPECT_EQ(slurp(data() / f), slurp(root_ / "again" / f)) << f;
  auto d = load_bundle(data());
  EXPECT_EQ(d.num_nodes(), 240u);
}

TEST_F(Cli, ValidationFailuresExitTwo) {
  write_text(root_ / "bad.json", R"j({"num_communities": 2, "community_size": 5, "p_in": 1.5})j");
  EXPECT_EQ(run_cli("gen-sbm --config " + (root_ / "bad.json").string() + " --out " + (root_ / "x").string()), 2);
  write_text(root_ / "broken.json", "{not json");
  EXPECT_EQ(run_cli("gen-sbm --config " + (root_ / "broken.json").string() + " --out " + (root_ / "x").string()), 2);
  EXPECT_EQ(run_cli("train " + data().string() + " --assignment " + comm() + " --intra-prob 0.2 --out " +
                    (root_ / "x").string()),
            2);
  EXPECT_EQ(run_cli("train " + data().string() + " --assignment " + comm() + " --policy WHAT --out " +
                    (root_ / "x").string()),
            2);
  EXPECT_EQ(run_cli("train " + data().string() + " --assignment " + comm() + " --timing sometimes --out " +
                    (root_ / "x").string()),
            2);
  EXPECT_EQ(run_cli("detect"), 2);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_NE(run_cli("detect " + (root_ / "missing").string()), 0);
}

TEST_F(Cli, DetectDefaultsAndReport) {
  auto log = (root_ / "detect.log").string();
  ASSERT_EQ(run_cli("detect " + data().string() + " --out " + (root_ / "c2.txt").string(), log), 0);
  auto text = slurp(log);
  EXPECT_NE(text.find("communities=4"), std::string::npos) << text;
  EXPECT_NE(text.find("resolution=1"), std::string::npos);
  auto a = load_assignment(root_ / "c2.txt", 240);
  EXPECT_TRUE(a.is_full());
}

TEST_F(Cli, DetectTwoCliques) {
  auto dir = root_ / "cliques";
  auto d = dataset_from_graph(two_cliques_with_bridge(), 2, 2, 1);
  save_bundle(dir, d);
  ASSERT_EQ(run_cli("detect " + dir.string()), 0);
  auto a = load_assignment(dir / "communities.txt", 8);
  EXPECT_EQ(a.membership, (std::vector<community_id>{0, 0, 0, 0, 1, 1, 1, 1}));
}

TEST_F(Cli, ReorderMakesCommunitiesIntervals) {
  auto out = root_ / "reordered";
  ASSERT_EQ(run_cli("reorder " + data().string() + " --assignment " + comm() + " --out " + out.string()), 0);
  auto before = load_bundle(data());
  auto after = load_bundle(out);
  auto a = load_assignment(out / "communities.txt", 240);
  for (node_id v = 1; v < 240; ++v) EXPECT_LE(a[v - 1], a[v]);
  std::vector<std::size_t> da, db;
  for (node_id v = 0; v < 240; ++v) {
    db.push_back(before.graph.degree(v));
    da.push_back(after.graph.degree(v));
  }
  std::sort(da.begin(), da.end());
  std::sort(db.begin(), db.end());
  EXPECT_EQ(da, db);
  EXPECT_EQ(after.graph.num_edges(), before.graph.num_edges());
  // Reordering an ordered bundle is the identity.
  ASSERT_EQ(run_cli("reorder " + out.string() + " --assignment " + (out / "communities.txt").string() + " --out " +
                    (root_ / "twice").string()),
            0);
  EXPECT_EQ(slurp(out / "edges.txt"), slurp(root_ / "twice" / "edges.txt"));
  EXPECT_EQ(slurp(out / "features.bin"), slurp(root_ / "twice" / "features.bin"));
}

TEST_F(Cli, TrainOneEpoch) {
  auto out = root_ / "train1";
  ASSERT_EQ(run_cli("train " + data().string() + " --assignment " + comm() + " --max-epochs 1 --capacity 60 --out " +
                    out.string()),
            0);
  std::istringstream csv(slurp(out / "report.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].rfind("# config_hash=", 0), 0u);
  EXPECT_EQ(lines[1], kEpochCsvHeader);
  auto report = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(report["epochs"].size(), 1u);
  EXPECT_FALSE(report["epochs"][0]["cache_miss_rate"].is_null());
  EXPECT_EQ(lines[0], "# config_hash=" + report["config_hash"].get<std::string>());
  auto p = load_checkpoint(out / "model.ckpt");
  EXPECT_EQ(p.config.in_dim, 16u);
}

TEST_F(Cli, TrainRepeatsIdentically) {
  auto cfg = root_ / "run.json";
  write_text(cfg, R"j({"policy": "MIX(0.25)", "intra_prob": 0.9, "model": {"hidden_dim": 16}})j");
  auto cmd = [&](const std::string& dir) {
    return "train " + data().string() + " --assignment " + comm() + " --config " + cfg.string() +
           " --seed 5 --max-epochs 4 --timing off --out " + (root_ / dir).string();
  };
  ASSERT_EQ(run_cli(cmd("r1")), 0);
  ASSERT_EQ(run_cli(cmd("r2") + " --workers 3"), 0);
  EXPECT_EQ(slurp(root_ / "r1" / "report.csv"), slurp(root_ / "r2" / "report.csv"));
  EXPECT_EQ(slurp(root_ / "r1" / "model.ckpt"), slurp(root_ / "r2" / "model.ckpt"));
}

TEST_F(Cli, SweepAndCachesim) {
  auto exp = root_ / "exp.json";
  write_text(exp, R"j({"sbm": {"num_communities": 4, "community_size": 40, "p_in": 0.2, "p_out": 0.01},
                      "sbm_seed": 2, "policies": ["RAND_ROOTS", "NORAND_ROOTS"], "intra_probs": [0.5, 1.0],
                      "seeds": [1, 2], "run": {"model": {"hidden_dim": 8}, "train": {"max_epochs": 2}}})j");
  auto out = root_ / "sweep" / "rows.csv";
  ASSERT_EQ(run_cli("sweep --config " + exp.string() + " --timing off --out " + out.string()), 0);
  std::istringstream csv(slurp(out));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 2u + 8u);
  EXPECT_EQ(lines[1], kSweepCsvHeader);
  EXPECT_TRUE(fs::exists(out.string() + ".config.json"));

  auto cs = root_ / "cache.csv";
  ASSERT_EQ(run_cli("cachesim " + data().string() + " --assignment " + comm() +
                    " --policy RAND_ROOTS --capacity 100%,50%,25 --out " + cs.string()),
            0);
  std::istringstream c(slurp(cs));
  lines.clear();
  for (std::string l; std::getline(c, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 2u + 3u);
  EXPECT_NE(lines[2].find(",240,"), std::string::npos);
  EXPECT_NE(lines[4].find(",25,"), std::string::npos);
  EXPECT_EQ(run_cli("cachesim " + data().string() + " --assignment " + comm() + " --capacity 0 --out " + cs.string()),
            2);
}
