#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "commrand/community.hpp"
#include "commrand/dataset.hpp"
#include "commrand/graph.hpp"
#include "commrand/random.hpp"
#include "commrand/types.hpp"

namespace commrand {

enum class PartitionKind { rand_roots, norand_roots, comm_rand_mix };

/// How training nodes are assigned to batches each epoch.
struct PartitionPolicy {
  PartitionKind kind = PartitionKind::rand_roots;
  // Fraction of training communities merged into one super-block (COMM_RAND_MIX only).
  double mix_fraction = 0.0;

  static PartitionPolicy rand_roots() { return {PartitionKind::rand_roots, 0.0}; }
  static PartitionPolicy norand_roots() { return {PartitionKind::norand_roots, 0.0}; }
  static PartitionPolicy comm_rand_mix(double k) { return {PartitionKind::comm_rand_mix, k}; }

  std::size_t super_block_size(std::size_t num_communities) const {
    const auto s = static_cast<std::size_t>(std::llround(mix_fraction * static_cast<double>(num_communities)));
    return std::max<std::size_t>(1, s);
  }

  void validate() const {
    if (kind == PartitionKind::comm_rand_mix && !(mix_fraction >= 0.0 && mix_fraction <= 1.0))
      throw validation_error("mix fraction must be in [0,1]");
  }

  /// RAND_ROOTS, NORAND_ROOTS, or COMM_RAND_MIX(<k>).
  std::string name() const {
    switch (kind) {
    case PartitionKind::rand_roots: return "RAND_ROOTS";
    case PartitionKind::norand_roots: return "NORAND_ROOTS";
    case PartitionKind::comm_rand_mix: {
      auto s = nlohmann::json(mix_fraction).dump();
      return "COMM_RAND_MIX(" + s + ")";
    }
    }
    return {};
  }

  /// Accepts the names produced by name(), plus "MIX(k)" and case variants with '-'.
  static PartitionPolicy parse(std::string s) {
    for (auto& ch : s) ch = ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (s == "RAND_ROOTS") return rand_roots();
    if (s == "NORAND_ROOTS") return norand_roots();
    for (std::string prefix : {"COMM_RAND_MIX(", "MIX("}) {
      if (s.rfind(prefix, 0) == 0 && s.back() == ')') {
        const auto inner = s.substr(prefix.size(), s.size() - prefix.size() - 1);
        std::size_t used = 0;
        double k = 0.0;
        try {
          k = std::stod(inner, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != inner.size() || inner.empty()) throw validation_error("bad mix fraction in '" + s + "'");
        auto p = comm_rand_mix(k);
        p.validate();
        return p;
      }
    }
    if (s == "COMM_RAND_MIX") return comm_rand_mix(0.0);
    throw validation_error("unknown partition policy '" + s + "'");
  }

  friend bool operator==(const PartitionPolicy&, const PartitionPolicy&) = default;
};

struct SamplerConfig {
  std::vector<std::size_t> fanouts{10, 10}; // one per layer, index 0 = input side
  double intra_prob = 0.5;
  std::size_t batch_size = 1024;
  std::uint64_t seed = 0;

  std::size_t num_layers() const noexcept { return fanouts.size(); }

  void validate() const {
    if (fanouts.empty()) throw validation_error("sampler: need at least one layer");
    for (auto f : fanouts)
      if (f == 0) throw validation_error("sampler: fanouts must be positive");
    if (!(intra_prob >= 0.5 && intra_prob <= 1.0))
      throw validation_error("sampler: intra_prob must be in [0.5, 1.0]");
    if (batch_size == 0) throw validation_error("sampler: batch_size must be positive");
  }
};

struct BatchPlan {
  std::size_t epoch = 0;
  std::vector<std::vector<node_id>> batches;

  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

/**
 * One layer of message passing from src nodes to dst nodes.
 *
 * dst nodes are the prefix of src nodes (local dst i == local src i).
 * Incoming edges are grouped by dst: the srcs of dst i are
 * src_index[offsets[i] .. offsets[i+1]), which always contains i itself.
 * dst_degree / src_degree are the degrees used for normalization.
 */
struct Block {
  std::vector<node_id> dst_nodes;
  std::vector<node_id> src_nodes;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> src_index;
  std::vector<std::uint32_t> dst_degree;
  std::vector<std::uint32_t> src_degree;

  std::size_t num_dst() const noexcept { return dst_nodes.size(); }
  std::size_t num_src() const noexcept { return src_nodes.size(); }
  std::size_t num_edges() const noexcept { return src_index.size(); }

  std::span<const std::uint32_t> in_edges(std::size_t dst) const {
    return {src_index.data() + offsets[dst], offsets[dst + 1] - offsets[dst]};
  }

  friend bool operator==(const Block&, const Block&) = default;
};

struct BatchSubgraph {
  std::vector<node_id> roots;
  std::vector<Block> blocks; // blocks[0] consumes input features, blocks.back() produces roots
  std::vector<node_id> input_nodes;

  friend bool operator==(const BatchSubgraph&, const BatchSubgraph&) = default;
};

namespace detail {

inline void slice_into(BatchPlan& plan, std::span<const node_id> order, std::size_t batch_size) {
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + batch_size);
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
  }
}

} // namespace detail

/**
 * Splits the training set into batches of batch_size (last may be short).
 *
 * RAND_ROOTS shuffles the whole set. NORAND_ROOTS uses ascending ids every
 * epoch. COMM_RAND_MIX shuffles the community list, groups consecutive
 * communities into super-blocks, shuffles nodes inside each super-block,
 * then shuffles the super-block order before slicing.
 */
inline BatchPlan partition_roots(std::span<const node_id> train, const CommunityAssignment& train_comm,
                                 const PartitionPolicy& policy, std::size_t batch_size,
                                 std::uint64_t epoch_seed) {
  if (train.empty()) throw validation_error("partition_roots: empty training set");
  if (batch_size == 0) throw validation_error("partition_roots: batch size must be positive");
  policy.validate();

  std::vector<node_id> order(train.begin(), train.end());
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end())
    throw validation_error("partition_roots: duplicate training node");
  Rng rng(epoch_seed);
  BatchPlan plan;

  switch (policy.kind) {
  case PartitionKind::norand_roots:
    break;
  case PartitionKind::rand_roots:
    rng.shuffle(order.begin(), order.end());
    break;
  case PartitionKind::comm_rand_mix: {
    std::vector<std::vector<node_id>> members(train_comm.num_communities());
    for (auto v : order) {
      if (v >= train_comm.num_nodes() || train_comm[v] == kUnassigned)
        throw validation_error("partition_roots: training node without community");
      members[train_comm[v]].push_back(v);
    }
    std::erase_if(members, [](const auto& m) { return m.empty(); });
    rng.shuffle(members.begin(), members.end());
    const auto s = policy.super_block_size(members.size());
    std::vector<std::vector<node_id>> super_blocks;
    for (std::size_t i = 0; i < members.size(); i += s) {
      auto& sb = super_blocks.emplace_back();
      for (std::size_t j = i; j < std::min(members.size(), i + s); ++j)
        sb.insert(sb.end(), members[j].begin(), members[j].end());
      rng.shuffle(sb.begin(), sb.end());
    }
    rng.shuffle(super_blocks.begin(), super_blocks.end());
    order.clear();
    for (auto& sb : super_blocks) order.insert(order.end(), sb.begin(), sb.end());
    break;
  }
  }
  detail::slice_into(plan, order, batch_size);
  return plan;
}

/// Edge produced by sample_layer: message flows src -> dst.
struct SampledEdge {
  node_id src;
  node_id dst;
  friend bool operator==(const SampledEdge&, const SampledEdge&) = default;
};

/**
 * Biased neighbor sampling for one layer.
 *
 * For each frontier node v, neighbors in v's community get weight p and the
 * rest 1-p; zero-weight neighbors are never chosen. Up to `fanout` distinct
 * neighbors are drawn without replacement by keeping the largest
 * Efraimidis-Spirakis keys u^(1/w). The edge v->v is always emitted first.
 */
inline std::vector<SampledEdge> sample_layer(const Graph& g, const CommunityAssignment& a,
                                             std::span<const node_id> frontier, std::size_t fanout,
                                             double p, Rng& rng) {
  std::vector<SampledEdge> out;
  std::vector<std::pair<double, node_id>> keyed;
  for (auto v : frontier) {
    out.push_back({v, v});
    const auto cv = a[v];
    keyed.clear();
    for (auto u : g.neighbors(v)) {
      if (u == v) continue;
      const bool same = cv != kUnassigned && a[u] == cv;
      const double w = same ? p : 1.0 - p;
      if (w <= 0.0) continue;
      // log(u^(1/w)) keeps the ordering and avoids underflow.
      keyed.emplace_back(std::log(rng.uniform_open0()) / w, u);
    }
    const auto take = std::min(fanout, keyed.size());
    auto by_key = [](const auto& x, const auto& y) {
      return x.first > y.first || (x.first == y.first && x.second < y.second);
    };
    if (take < keyed.size())
      std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end(), by_key);
    std::vector<node_id> chosen;
    chosen.reserve(take);
    for (std::size_t i = 0; i < take; ++i) chosen.push_back(keyed[i].second);
    std::sort(chosen.begin(), chosen.end());
    for (auto u : chosen) out.push_back({u, v});
  }
  return out;
}

namespace detail {

// Builds a block from dst nodes and their (src,dst) edges, with self edges present.
// Degrees are counted inside the block.
inline Block make_block(std::vector<node_id> dst_nodes, const std::vector<SampledEdge>& edges) {
  Block b;
  std::unordered_map<node_id, std::uint32_t> local;
  local.reserve(dst_nodes.size() * 4);
  b.src_nodes = dst_nodes;
  for (std::uint32_t i = 0; i < dst_nodes.size(); ++i) local.emplace(dst_nodes[i], i);
  std::vector<std::vector<std::uint32_t>> incoming(dst_nodes.size());
  for (const auto& e : edges) {
    auto [it, fresh] = local.try_emplace(e.src, static_cast<std::uint32_t>(b.src_nodes.size()));
    if (fresh) b.src_nodes.push_back(e.src);
    incoming[local.at(e.dst)].push_back(it->second);
  }
  b.dst_nodes = std::move(dst_nodes);
  b.dst_degree.resize(b.num_dst());
  b.src_degree.assign(b.num_src(), 0);
  for (std::size_t i = 0; i < incoming.size(); ++i) {
    std::sort(incoming[i].begin(), incoming[i].end());
    b.src_index.insert(b.src_index.end(), incoming[i].begin(), incoming[i].end());
    b.offsets.push_back(b.src_index.size());
    b.dst_degree[i] = static_cast<std::uint32_t>(incoming[i].size());
    for (auto s : incoming[i]) ++b.src_degree[s];
  }
  return b;
}

inline void check_roots(std::span<const node_id> roots, std::size_t n) {
  if (roots.empty()) throw validation_error("subgraph: roots must be non-empty");
  std::vector<node_id> sorted(roots.begin(), roots.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw validation_error("subgraph: duplicate root");
  if (sorted.back() >= n) throw validation_error("subgraph: root out of range");
}

} // namespace detail

/// Samples an L-layer subgraph outward from the roots (last layer first).
inline BatchSubgraph build_subgraph(const Graph& g, const CommunityAssignment& a,
                                    std::span<const node_id> roots, const SamplerConfig& cfg, Rng& rng) {
  detail::check_roots(roots, g.num_nodes());
  BatchSubgraph sub;
  sub.roots.assign(roots.begin(), roots.end());
  sub.blocks.resize(cfg.num_layers());
  std::vector<node_id> frontier = sub.roots;
  for (std::size_t l = cfg.num_layers(); l-- > 0;) {
    auto edges = sample_layer(g, a, frontier, cfg.fanouts[l], cfg.intra_prob, rng);
    sub.blocks[l] = detail::make_block(std::move(frontier), edges);
    frontier = sub.blocks[l].src_nodes;
  }
  sub.input_nodes = std::move(frontier);
  return sub;
}

/**
 * Full L-hop neighborhood without sampling, for deterministic inference.
 * Normalization degrees are whole-graph degrees plus the self edge, so a
 * node's output does not depend on which other roots share the batch.
 */
inline BatchSubgraph full_subgraph(const Graph& g, std::span<const node_id> roots, std::size_t num_layers) {
  detail::check_roots(roots, g.num_nodes());
  BatchSubgraph sub;
  sub.roots.assign(roots.begin(), roots.end());
  sub.blocks.resize(num_layers);
  std::vector<node_id> frontier = sub.roots;
  auto full_degree = [&](node_id v) {
    auto row = g.neighbors(v);
    const bool loop = std::binary_search(row.begin(), row.end(), v);
    return static_cast<std::uint32_t>(row.size() + (loop ? 0 : 1));
  };
  for (std::size_t l = num_layers; l-- > 0;) {
    std::vector<SampledEdge> edges;
    for (auto v : frontier) {
      edges.push_back({v, v});
      for (auto u : g.neighbors(v))
        if (u != v) edges.push_back({u, v});
    }
    auto& b = sub.blocks[l] = detail::make_block(std::move(frontier), edges);
    for (std::size_t i = 0; i < b.num_dst(); ++i) b.dst_degree[i] = full_degree(b.dst_nodes[i]);
    for (std::size_t i = 0; i < b.num_src(); ++i) b.src_degree[i] = full_degree(b.src_nodes[i]);
    frontier = b.src_nodes;
  }
  sub.input_nodes = std::move(frontier);
  return sub;
}

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return derive_seed({seed, 0x45504f4348ULL, epoch});
}

inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch) {
  return derive_seed({seed, 0x4241544348ULL, epoch, batch});
}

/**
 * Produces the batches of one epoch.
 *
 * The plan comes from the epoch seed; each batch samples with its own
 * derived stream, so batches can be built in any order or concurrently and
 * still come out identical.
 */
class EpochSampler {
public:
  EpochSampler(const Dataset& d, const CommunityAssignment& a, PartitionPolicy policy, SamplerConfig cfg)
      : data_(&d), comm_(&a), train_comm_(restrict_to_train(a, d.train)), policy_(policy),
        cfg_(std::move(cfg)) {
    cfg_.validate();
    policy_.validate();
    if (a.num_nodes() != d.num_nodes()) throw validation_error("assignment size must equal num_nodes");
  }

  BatchPlan plan(std::size_t epoch) const {
    auto p = partition_roots(data_->train, train_comm_, policy_, cfg_.batch_size, epoch_seed(cfg_.seed, epoch));
    p.epoch = epoch;
    return p;
  }

  BatchSubgraph build(const BatchPlan& p, std::size_t batch) const {
    Rng rng(batch_seed(cfg_.seed, p.epoch, batch));
    return build_subgraph(data_->graph, *comm_, p.batches.at(batch), cfg_, rng);
  }

  /// All batches of an epoch, in batch order. workers > 1 samples concurrently.
  std::vector<BatchSubgraph> epoch(std::size_t epoch, std::size_t workers = 1) const {
    const auto p = plan(epoch);
    std::vector<BatchSubgraph> out(p.batches.size());
    workers = std::max<std::size_t>(1, std::min(workers, out.size()));
    if (workers == 1) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = build(p, i);
      return out;
    }
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < out.size(); i += workers) out[i] = build(p, i);
      }));
    }
    for (auto& j : jobs) j.get();
    return out;
  }

  const SamplerConfig& config() const noexcept { return cfg_; }
  const PartitionPolicy& policy() const noexcept { return policy_; }
  const CommunityAssignment& train_communities() const noexcept { return train_comm_; }

private:
  const Dataset* data_;
  const CommunityAssignment* comm_;
  CommunityAssignment train_comm_;
  PartitionPolicy policy_;
  SamplerConfig cfg_;
};

inline std::vector<BatchSubgraph> epoch_batches(const Dataset& d, const CommunityAssignment& a,
                                                const PartitionPolicy& policy, const SamplerConfig& cfg,
                                                std::size_t epoch, std::size_t workers = 1) {
  return EpochSampler(d, a, policy, cfg).epoch(epoch, workers);
}

// Debug dumps: global ids only.

inline nlohmann::json to_json(const BatchPlan& p) {
  return {{"epoch", p.epoch}, {"batches", p.batches}};
}

inline nlohmann::json to_json(const BatchSubgraph& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.blocks) {
    nlohmann::json edges = nlohmann::json::array();
    for (std::size_t d = 0; d < b.num_dst(); ++d)
      for (auto src : b.in_edges(d)) edges.push_back({b.src_nodes[src], b.dst_nodes[d]});
    blocks.push_back({{"dst", b.dst_nodes}, {"src", b.src_nodes}, {"edges", edges}});
  }
  return {{"roots", s.roots}, {"input_nodes", s.input_nodes}, {"blocks", blocks}};
}

} // namespace commrand
