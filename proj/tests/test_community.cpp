#include <filesystem>
#include <fstream>
#include <map>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace commrand;
using namespace commrand::testing;

TEST(Assignment, CompactFirstAppearance) {
  std::vector<community_id> raw = {7, 3, 7, kUnassigned, 0};
  auto a = CommunityAssignment::compact(raw);
  EXPECT_EQ(a.membership, (std::vector<community_id>{0, 1, 0, kUnassigned, 2}));
  EXPECT_EQ(a.sizes, (std::vector<std::size_t>{2, 1, 1}));
  EXPECT_FALSE(a.is_full());
  EXPECT_NO_THROW(a.validate());
  std::vector<community_id> neg = {0, -5};
  EXPECT_THROW(CommunityAssignment::compact(neg), validation_error);
}

TEST(Assignment, ValidateCatchesInconsistency) {
  CommunityAssignment a;
  a.membership = {0, 1, 1};
  a.sizes = {1, 1};
  EXPECT_THROW(a.validate(), validation_error);
  a.sizes = {1, 2, 0};
  EXPECT_THROW(a.validate(), validation_error);
}

TEST(Modularity, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = random_graph(25, 0.2, seed, seed % 2 == 0);
    auto a = random_assignment(25, 4, seed + 100);
    for (double gamma : {0.5, 1.0, 2.0})
      EXPECT_NEAR(modularity(g, a, gamma), dense_modularity(g, a.membership, gamma), 1e-12);
  }
}

TEST(Modularity, TwoTrianglesHandComputed) {
  auto g = two_triangles();
  std::vector<community_id> c = {0, 0, 0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(modularity(g, CommunityAssignment::compact(c)), 0.5);
  std::vector<community_id> one(6, 0);
  EXPECT_DOUBLE_EQ(modularity(g, CommunityAssignment::compact(one)), 0.0);
}

TEST(Modularity, Errors) {
  auto empty = Graph::from_edges(3, {}, true);
  std::vector<community_id> c = {0, 0, 1};
  EXPECT_THROW(modularity(empty, CommunityAssignment::compact(c)), validation_error);
  std::vector<community_id> partial = {0, kUnassigned, 1};
  EXPECT_THROW(modularity(path_graph(3), CommunityAssignment::compact(partial)), validation_error);
}

TEST(Louvain, TwoCliquesMatchesExhaustiveOptimum) {
  auto g = two_cliques_with_bridge();
  auto best = exhaustive(g);
  ASSERT_EQ(best.argmax.size(), 1u);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto r = louvain_levels(g, {1.0, seed});
    EXPECT_EQ(r.assignment.membership, best.argmax[0]) << "seed " << seed;
    EXPECT_NEAR(r.level_modularity.back(), best.q, 1e-12);
  }
}

TEST(Louvain, TwoTrianglesExact) {
  auto g = two_triangles();
  auto best = exhaustive(g);
  EXPECT_NEAR(best.q, 0.5, 1e-12);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto r = louvain_levels(g, {1.0, seed});
    EXPECT_EQ(r.assignment.membership, (std::vector<community_id>{0, 0, 0, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(r.level_modularity.back(), 0.5);
  }
}

TEST(Louvain, ExhaustiveOnSmallRandomGraphs) {
  // Louvain is a heuristic; on 8-node graphs it should get within a small gap.
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto g = random_graph(8, 0.4, seed + 50);
    if (g.num_edges() == 0) continue;
    auto best = exhaustive(g);
    auto r = louvain_levels(g, {1.0, seed});
    EXPECT_LE(r.level_modularity.back(), best.q + 1e-12);
    EXPECT_GE(r.level_modularity.back(), best.q - 0.05) << "seed " << seed;
  }
}

TEST(Louvain, LevelMonotoneAndConsistent) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto d = gen_sbm(SbmConfig::uniform(8, 40, 0.2, 0.01), seed);
    auto r = louvain_levels(d.graph, {1.0, seed});
    ASSERT_GE(r.level_modularity.size(), 2u);
    for (std::size_t i = 1; i < r.level_modularity.size(); ++i)
      EXPECT_GE(r.level_modularity[i], r.level_modularity[i - 1] - 1e-12);
    EXPECT_NEAR(r.level_modularity.back(), modularity(d.graph, r.assignment), 1e-12);
    EXPECT_NO_THROW(r.assignment.validate());
  }
}

TEST(Louvain, RecoversPlantedPartition) {
  auto s = generate_sbm(SbmConfig::uniform(4, 50, 0.3, 0.005), 4);
  auto a = louvain(s.dataset.graph, 1.0, 1);
  ASSERT_EQ(a.num_communities(), 4u);
  // Same partition up to renaming.
  std::map<std::pair<community_id, community_id>, int> pairs;
  for (node_id v = 0; v < 200; ++v) pairs[{a[v], s.blocks[v]}]++;
  EXPECT_EQ(pairs.size(), 4u);
}

TEST(Louvain, DeterministicPerSeed) {
  auto d = gen_sbm(SbmConfig::uniform(6, 30, 0.2, 0.02), 3);
  EXPECT_EQ(louvain(d.graph, 1.0, 9), louvain(d.graph, 1.0, 9));
}

TEST(Louvain, ResolutionControlsGranularity) {
  auto d = gen_sbm(SbmConfig::uniform(8, 30, 0.3, 0.01), 6);
  EXPECT_LE(louvain(d.graph, 0.1, 0).num_communities(), louvain(d.graph, 1.0, 0).num_communities());
  EXPECT_LE(louvain(d.graph, 1.0, 0).num_communities(), louvain(d.graph, 5.0, 0).num_communities());
}

TEST(Louvain, EdgeCases) {
  auto isolated = Graph::from_edges(4, {}, true);
  auto r = louvain_levels(isolated);
  EXPECT_EQ(r.assignment.num_communities(), 4u);
  EXPECT_THROW(louvain(Graph{}), validation_error);
  EXPECT_THROW(louvain(Graph::from_edges(2, {{0, 1}}, false)), validation_error);
  auto loops = Graph::from_edges(3, {{0, 0}, {1, 1}, {0, 1}}, true);
  EXPECT_NO_THROW(louvain(loops));
}

TEST(Reorder, PermutationMakesCommunitiesContiguous) {
  std::vector<community_id> c = {1, 0, 1, 0};
  CommunityAssignment a;
  a.membership = c;
  a.sizes = {2, 2};
  EXPECT_EQ(community_order_permutation(a), (std::vector<node_id>{2, 0, 3, 1}));

  auto d = gen_sbm(SbmConfig::uniform(5, 20, 0.3, 0.01), 2);
  auto lv = louvain(d.graph, 1.0, 0);
  auto perm = community_order_permutation(lv);
  auto moved = permute_assignment(lv, perm);
  for (node_id v = 1; v < moved.num_nodes(); ++v) EXPECT_LE(moved[v - 1], moved[v]);
  // Already ordered: identity.
  auto again = community_order_permutation(moved);
  for (node_id v = 0; v < again.size(); ++v) EXPECT_EQ(again[v], v);
}

TEST(Restrict, KeepsOrderDropsEmpty) {
  std::vector<community_id> c = {0, 1, 2, 1, 0, 2};
  auto a = CommunityAssignment::compact(c);
  std::vector<node_id> train = {0, 2, 5};
  auto r = restrict_to_train(a, train);
  EXPECT_EQ(r.membership,
            (std::vector<community_id>{0, kUnassigned, 1, kUnassigned, kUnassigned, 1}));
  EXPECT_EQ(r.sizes, (std::vector<std::size_t>{1, 2}));
  EXPECT_THROW(restrict_to_train(a, std::vector<node_id>{}), validation_error);
  EXPECT_THROW(restrict_to_train(a, std::vector<node_id>{9}), validation_error);
}

TEST(AssignmentIo, RoundTripAndErrors) {
  auto dir = std::filesystem::temp_directory_path() / "commrand_comm_io";
  std::filesystem::create_directories(dir);
  std::vector<community_id> c = {0, 1, 1, 2, 0};
  auto a = CommunityAssignment::compact(c);
  save_assignment(dir / "a.txt", a);
  EXPECT_EQ(load_assignment(dir / "a.txt", 5), a);
  {
    std::ofstream out(dir / "dup.txt");
    out << "0 0\n0 1\n";
  }
  EXPECT_THROW(load_assignment(dir / "dup.txt", 2), parse_error);
  {
    std::ofstream out(dir / "gap.txt");
    out << "0 0\n1 2\n";
  }
  EXPECT_THROW(load_assignment(dir / "gap.txt", 2), validation_error);
  {
    std::ofstream out(dir / "far.txt");
    out << "7 0\n";
  }
  EXPECT_THROW(load_assignment(dir / "far.txt", 3), parse_error);
  std::filesystem::remove_all(dir);
}
