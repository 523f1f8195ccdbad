#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace commrand;
using namespace commrand::testing;
using nlohmann::json;

namespace {

struct Small {
  Dataset data;
  CommunityAssignment comm;
};

Small small_sbm() {
  auto d = gen_sbm(SbmConfig::uniform(4, 30, 0.25, 0.01), 2);
  auto a = louvain(d.graph, 1.0, 0);
  return {std::move(d), std::move(a)};
}

RunConfig quick_run() {
  RunConfig r;
  r.model.hidden_dim = 8;
  r.sampler.fanouts = {4, 4};
  r.train.max_epochs = 3;
  return r;
}

} // namespace

TEST(Hash, StableAndKeyOrderInsensitive) {
  json a = {{"x", 1}, {"y", {1, 2}}};
  json b = json::parse(R"j({"y":[1,2],"x":1})j");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(json{{"x", 2}, {"y", {1, 2}}}));
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Hash, Fingerprints) {
  auto s = small_sbm();
  auto d2 = s.data;
  EXPECT_EQ(dataset_fingerprint(s.data), dataset_fingerprint(d2));
  d2.features(0, 0) += 1.0f;
  EXPECT_NE(dataset_fingerprint(s.data), dataset_fingerprint(d2));
  auto a2 = s.comm;
  std::swap(a2.membership[0], a2.membership[119]);
  ASSERT_NE(a2.membership, s.comm.membership);
  EXPECT_NE(assignment_fingerprint(s.comm), assignment_fingerprint(a2));
}

TEST(DeskDefaults, BatchSize) {
  EXPECT_EQ(desk_batch_size(240), 30u);
  EXPECT_EQ(desk_batch_size(100000), 1024u);
  EXPECT_EQ(desk_batch_size(3), 1u);
}

TEST(SbmJson, BothForms) {
  auto a = sbm_config_from_json(json::parse(R"j({"community_sizes":[3,4],"p_in":0.5,"p_out":0.1})j"));
  EXPECT_EQ(a.community_sizes, (std::vector<std::size_t>{3, 4}));
  auto b = sbm_config_from_json(json::parse(R"j({"num_communities":4,"community_size":100})j"));
  EXPECT_EQ(b.num_nodes(), 400u);
  EXPECT_EQ(sbm_config_from_json(to_json(b)).community_sizes, b.community_sizes);
  EXPECT_THROW(sbm_config_from_json(json::parse(R"j({"num_communities":2,"community_size":5,"p_in":2})j")),
               validation_error);
}

TEST(RunConfigJson, OverridesAndRoundTrip) {
  auto r = run_config_from_json(json::parse(R"j({
    "policy": "COMM_RAND_MIX(0.25)", "intra_prob": 0.9, "seed": 7,
    "sampler": {"fanouts": [5, 3], "batch_size": 12},
    "model": {"arch": "gcn", "hidden_dim": 16},
    "train": {"lr": 0.01, "max_epochs": 4, "timing": false}})j"));
  EXPECT_EQ(r.policy, PartitionPolicy::comm_rand_mix(0.25));
  EXPECT_EQ(r.sampler.intra_prob, 0.9);
  EXPECT_EQ(r.sampler.seed, 7u);
  EXPECT_EQ(r.train.seed, 7u);
  EXPECT_EQ(r.sampler.fanouts, (std::vector<std::size_t>{5, 3}));
  EXPECT_EQ(r.model.arch, Arch::gcn);
  EXPECT_FALSE(r.train.record_wall_time);
  auto back = run_config_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));

  // mix_fraction only applies to the mixing policy.
  auto plain = run_config_from_json(json::parse(R"j({"policy":"RAND_ROOTS","mix_fraction":0.5})j"));
  EXPECT_EQ(plain.policy, PartitionPolicy::rand_roots());
  auto mixed = run_config_from_json(json::parse(R"j({"policy":"MIX(0)","mix_fraction":0.5})j"));
  EXPECT_EQ(mixed.policy.mix_fraction, 0.5);

  EXPECT_THROW(run_config_from_json(json::parse(R"j({"intra_prob":0.2,"sampler":{"batch_size":4}})j")),
               validation_error);
  EXPECT_THROW(run_config_from_json(json::parse(R"j({"policy":"NOPE"})j")), validation_error);
}

TEST(RunConfig, ResolvedFillsDatasetDefaults) {
  auto s = small_sbm();
  auto r = RunConfig{}.resolved(s.data);
  EXPECT_EQ(r.sampler.batch_size, desk_batch_size(s.data.train.size()));
  EXPECT_EQ(r.model.in_dim, 16u);
  EXPECT_EQ(r.model.num_classes, 4u);
  EXPECT_EQ(r.model.num_layers, 2u);
}

TEST(Grid, FromJsonAndValidation) {
  auto g = grid_from_json(json::parse(R"j({"policies":["RAND_ROOTS","MIX(0.5)"],"intra_probs":[0.5,1.0],"seeds":[1,2,3]})j"));
  EXPECT_EQ(g.size(), 12u);
  EXPECT_THROW(grid_from_json(json::parse(R"j({"policies":[],"intra_probs":[0.5],"seeds":[1]})j")), validation_error);
  EXPECT_THROW(grid_from_json(json::parse(R"j({"policies":["RAND_ROOTS"],"intra_probs":[0.3],"seeds":[1]})j")),
               validation_error);
}

TEST(Sweep, BaselineSelfNormalizes) {
  auto s = small_sbm();
  Grid g{{PartitionPolicy::rand_roots()}, {0.5}, {1, 2}};
  SweepOptions opt;
  auto rows = run_sweep(s.data, s.comm, quick_run(), g, opt);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.status, "ok");
    ASSERT_TRUE(r.norm_epochs && r.norm_per_epoch_time && r.norm_total_time);
    EXPECT_EQ(*r.norm_epochs, 1.0);
    EXPECT_EQ(*r.norm_per_epoch_time, 1.0);
    EXPECT_EQ(*r.norm_total_time, 1.0);
  }
}

TEST(Sweep, RowCountOrderAndErrors) {
  auto s = small_sbm();
  Grid g{{PartitionPolicy::rand_roots(), PartitionPolicy::norand_roots(), PartitionPolicy::comm_rand_mix(0.5)},
         {0.5, 1.0},
         {3, 4}};
  SweepOptions opt;
  opt.workers = 3;
  auto rows = run_sweep(s.data, s.comm, quick_run(), g, opt);
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0].policy, "RAND_ROOTS");
  EXPECT_EQ(rows[11].policy, "COMM_RAND_MIX(0.5)");
  EXPECT_EQ(rows[11].seed, 4u);
  EXPECT_EQ(rows[2].intra_prob, 1.0);

  auto broken = quick_run();
  broken.model.hidden_dim = 0;
  auto bad = run_sweep(s.data, s.comm, broken, Grid{{PartitionPolicy::rand_roots()}, {0.5}, {1}}, opt);
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0].status.rfind("error:", 0), 0u);
  EXPECT_FALSE(bad[0].norm_epochs);
}

TEST(Sweep, WorkerCountDoesNotChangeResults) {
  auto s = small_sbm();
  auto base = quick_run();
  base.train.record_wall_time = false;
  Grid g{{PartitionPolicy::rand_roots(), PartitionPolicy::comm_rand_mix(0.0)}, {0.5, 0.9}, {1}};
  SweepOptions one, many;
  many.workers = 4;
  std::ostringstream a, b;
  write_sweep_csv(a, run_sweep(s.data, s.comm, base, g, one), "x");
  write_sweep_csv(b, run_sweep(s.data, s.comm, base, g, many), "x");
  EXPECT_EQ(a.str(), b.str());
}

TEST(Sweep, ResumeSkipsFinishedCells) {
  auto s = small_sbm();
  auto dir = fresh_dir("resume");
  SweepOptions opt;
  opt.out = dir / "sweep.csv";
  Grid half{{PartitionPolicy::rand_roots()}, {0.5}, {1, 2}};
  Grid full{{PartitionPolicy::rand_roots()}, {0.5, 1.0}, {1, 2}};
  auto first = run_sweep(s.data, s.comm, quick_run(), half, opt);
  auto second = run_sweep(s.data, s.comm, quick_run(), full, opt);
  ASSERT_EQ(second.size(), 4u);
  // Reused rows carry the original wall-clock values verbatim.
  EXPECT_EQ(second[0].per_epoch_time, first[0].per_epoch_time);
  EXPECT_EQ(second[1].per_epoch_time, first[1].per_epoch_time);
  auto third = run_sweep(s.data, s.comm, quick_run(), full, opt);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(to_json(third[i]), to_json(second[i]));
  // The journal holds one line per distinct cell.
  std::ifstream in(dir / "sweep.csv.journal");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) lines += !l.empty();
  EXPECT_EQ(lines, 4u);
  // A torn trailing line is ignored.
  {
    std::ofstream out(dir / "sweep.csv.journal", std::ios::app);
    out << "{\"cell_hash\":";
  }
  EXPECT_EQ(run_sweep(s.data, s.comm, quick_run(), full, opt).size(), 4u);
  std::filesystem::remove_all(dir);
}

TEST(Sweep, CsvHeaderAndRowJson) {
  SweepRow r;
  r.cell_hash = "h";
  r.policy = "RAND_ROOTS";
  r.status = "error: a,b";
  r.cache_miss_rate = 0.5;
  std::ostringstream out;
  write_sweep_csv(out, {r}, "abc");
  std::istringstream in(out.str());
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1, "# config_hash=abc");
  EXPECT_EQ(l2, kSweepCsvHeader);
  EXPECT_EQ(std::count(l3.begin(), l3.end(), ','), std::count(l2.begin(), l2.end(), ','));
  EXPECT_NE(l3.find("error: a;b"), std::string::npos);
  auto back = sweep_row_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
}

TEST(Sweep, SummarizeUsesBestEpoch) {
  TrainResult<float> res;
  for (int e = 0; e < 4; ++e) {
    EpochReport rep;
    rep.epoch = e;
    rep.epoch_wall_time = 1.0 + e;
    rep.mean_input_nodes = 10.0 * e;
    res.reports.push_back(rep);
  }
  res.best_epoch = 1;
  res.best_val_acc = 0.75;
  auto row = summarize_run(res);
  EXPECT_EQ(row.epochs_to_converge, 2.0);
  EXPECT_EQ(row.epochs_run, 4.0);
  EXPECT_EQ(row.total_time, 10.0);
  EXPECT_EQ(row.per_epoch_time, 2.5);
  EXPECT_EQ(row.mean_input_nodes, 15.0);
  EXPECT_EQ(row.final_val_acc, 0.75);
  EXPECT_FALSE(row.cache_miss_rate);
}

TEST(CacheSim, CompulsoryAtFullCapacity) {
  auto s = small_sbm();
  auto base = quick_run();
  Grid g{{PartitionPolicy::rand_roots(), PartitionPolicy::norand_roots()}, {0.5, 1.0}, {1}};
  std::vector<std::size_t> caps = {s.data.num_nodes(), s.data.num_nodes() * 2};
  auto rows = run_cachesim(s.data, s.comm, base, g, caps, 2);
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    auto cfg = base;
    cfg.set_seed(r.seed);
    cfg.sampler.intra_prob = r.intra_prob;
    auto stream = epoch_access_stream(s.data, s.comm, PartitionPolicy::parse(r.policy), cfg.resolved(s.data).sampler, 2);
    std::set<node_id> distinct(stream.begin(), stream.end());
    EXPECT_EQ(r.stats.accesses, stream.size());
    EXPECT_EQ(r.stats.misses, distinct.size());
  }
  EXPECT_THROW(run_cachesim(s.data, s.comm, base, g, std::vector<std::size_t>{}, 2), validation_error);
  EXPECT_THROW(run_cachesim(s.data, s.comm, base, g, caps, 0), validation_error);
}

TEST(CacheSim, CsvShape) {
  CacheSimRow r{"RAND_ROOTS", 0.0, 0.5, 1, 10, {100, 25}};
  std::ostringstream out;
  write_cachesim_csv(out, {r}, "h");
  EXPECT_EQ(out.str(), std::string("# config_hash=h\n") + kCacheCsvHeader + "\nRAND_ROOTS,0,0.5,1,10,100,25,0.25\n");
}
