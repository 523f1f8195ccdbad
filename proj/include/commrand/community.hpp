#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "commrand/dataset.hpp"
#include "commrand/graph.hpp"
#include "commrand/random.hpp"
#include "commrand/types.hpp"

namespace commrand {

/**
 * Node-to-community map with contiguous ids starting at 0.
 *
 * A full assignment covers every node. An assignment produced by
 * restrict_to_train leaves non-training nodes at kUnassigned; sizes then
 * count only assigned nodes.
 */
struct CommunityAssignment {
  std::vector<community_id> membership;
  std::vector<std::size_t> sizes;

  std::size_t num_nodes() const noexcept { return membership.size(); }
  std::size_t num_communities() const noexcept { return sizes.size(); }

  community_id operator[](node_id v) const { return membership[v]; }

  bool is_full() const {
    return std::none_of(membership.begin(), membership.end(),
                        [](community_id c) { return c == kUnassigned; });
  }

  /// Renumbers ids densely in order of first appearance by node id.
  static CommunityAssignment compact(std::span<const community_id> raw) {
    CommunityAssignment a;
    a.membership.assign(raw.size(), kUnassigned);
    std::vector<community_id> remap;
    auto lookup = [&](community_id c) -> community_id& {
      if (static_cast<std::size_t>(c) >= remap.size()) remap.resize(c + 1, kUnassigned);
      return remap[c];
    };
    for (std::size_t v = 0; v < raw.size(); ++v) {
      if (raw[v] == kUnassigned) continue;
      if (raw[v] < 0) throw validation_error("community ids must be non-negative");
      auto& slot = lookup(raw[v]);
      if (slot == kUnassigned) {
        slot = static_cast<community_id>(a.sizes.size());
        a.sizes.push_back(0);
      }
      a.membership[v] = slot;
      ++a.sizes[slot];
    }
    return a;
  }

  void validate() const {
    std::vector<std::size_t> count(sizes.size(), 0);
    for (auto c : membership) {
      if (c == kUnassigned) continue;
      if (c < 0 || static_cast<std::size_t>(c) >= sizes.size())
        throw validation_error("community id out of range");
      ++count[c];
    }
    if (count != sizes) throw validation_error("community sizes do not match membership");
    for (auto s : sizes)
      if (s == 0) throw validation_error("empty community");
  }

  friend bool operator==(const CommunityAssignment&, const CommunityAssignment&) = default;
};

/**
 * Newman modularity with resolution gamma:
 *   Q = sum_c [ e_c / m - gamma * (d_c / 2m)^2 ]
 * where 2m is the number of CSR entries (a self-loop contributes one entry
 * to its node's degree and half an edge to e_c).
 */
inline double modularity(const Graph& g, const CommunityAssignment& a, double resolution = 1.0) {
  if (a.num_nodes() != g.num_nodes() || !a.is_full())
    throw validation_error("modularity: assignment must cover every node");
  if (g.num_edges() == 0) throw validation_error("modularity: undefined for a graph without edges");
  const double two_m = static_cast<double>(g.num_edges());
  std::vector<double> intra(a.num_communities(), 0.0), total(a.num_communities(), 0.0);
  for (node_id u = 0; u < g.num_nodes(); ++u) {
    const auto cu = a[u];
    total[cu] += static_cast<double>(g.degree(u));
    for (node_id v : g.neighbors(u))
      if (a[v] == cu) intra[cu] += 1.0;
  }
  double q = 0.0;
  for (std::size_t c = 0; c < a.num_communities(); ++c) {
    const double frac = total[c] / two_m;
    q += intra[c] / two_m - resolution * frac * frac;
  }
  return q;
}

struct LouvainOptions {
  double resolution = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_levels = 10;
  std::size_t max_passes = 100;
};

struct LouvainResult {
  CommunityAssignment assignment;
  // Modularity of the singleton partition followed by one entry per level.
  std::vector<double> level_modularity;
};

namespace detail {

// Weighted graph for one aggregation level. Loop weight counts directed
// entries, so an internal undirected edge contributes 2.
struct LevelGraph {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> targets;
  std::vector<double> weights;
  std::vector<double> loop;
  std::vector<double> strength;

  std::size_t size() const noexcept { return strength.size(); }
};

inline LevelGraph level_from_graph(const Graph& g) {
  LevelGraph lg;
  const auto n = g.num_nodes();
  lg.loop.assign(n, 0.0);
  lg.strength.assign(n, 0.0);
  for (node_id u = 0; u < n; ++u) {
    for (node_id v : g.neighbors(u)) {
      if (v == u) {
        lg.loop[u] += 1.0;
      } else {
        lg.targets.push_back(v);
        lg.weights.push_back(1.0);
      }
    }
    lg.strength[u] = static_cast<double>(g.degree(u));
    lg.offsets.push_back(lg.targets.size());
  }
  return lg;
}

inline LevelGraph aggregate(const LevelGraph& lg, std::span<const std::uint32_t> comm,
                            std::size_t num_comm) {
  std::vector<std::vector<std::uint32_t>> members(num_comm);
  for (std::uint32_t u = 0; u < lg.size(); ++u) members[comm[u]].push_back(u);

  LevelGraph out;
  out.loop.assign(num_comm, 0.0);
  out.strength.assign(num_comm, 0.0);
  std::vector<double> acc(num_comm, 0.0);
  std::vector<std::uint32_t> touched;
  for (std::uint32_t c = 0; c < num_comm; ++c) {
    for (auto u : members[c]) {
      out.loop[c] += lg.loop[u];
      out.strength[c] += lg.strength[u];
      for (auto e = lg.offsets[u]; e < lg.offsets[u + 1]; ++e) {
        const auto d = comm[lg.targets[e]];
        if (d == c) {
          out.loop[c] += lg.weights[e];
        } else {
          if (acc[d] == 0.0) touched.push_back(d);
          acc[d] += lg.weights[e];
        }
      }
    }
    std::sort(touched.begin(), touched.end());
    for (auto d : touched) {
      out.targets.push_back(d);
      out.weights.push_back(acc[d]);
      acc[d] = 0.0;
    }
    touched.clear();
    out.offsets.push_back(out.targets.size());
  }
  return out;
}

// One round of local moving. Returns the number of moves made.
inline std::size_t local_moving(const LevelGraph& lg, std::vector<std::uint32_t>& comm,
                                double resolution, double two_m, Rng& rng,
                                std::size_t max_passes) {
  const auto n = lg.size();
  std::vector<double> tot(n, 0.0);
  for (std::uint32_t u = 0; u < n; ++u) tot[comm[u]] += lg.strength[u];

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::vector<double> link(n, 0.0);
  std::vector<std::uint32_t> touched;
  constexpr double eps = 1e-12;

  std::size_t total_moves = 0;
  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    rng.shuffle(order.begin(), order.end());
    std::size_t moves = 0;
    for (auto u : order) {
      const auto cu = comm[u];
      const double k = lg.strength[u];
      for (auto e = lg.offsets[u]; e < lg.offsets[u + 1]; ++e) {
        const auto c = comm[lg.targets[e]];
        if (link[c] == 0.0) touched.push_back(c);
        link[c] += lg.weights[e];
      }
      tot[cu] -= k;
      auto gain = [&](std::uint32_t c) { return link[c] - resolution * tot[c] * k / two_m; };
      const double stay = gain(cu);
      std::uint32_t best = cu;
      double best_gain = stay;
      bool have_other = false;
      std::uint32_t other = 0;
      double other_gain = 0.0;
      for (auto c : touched) {
        if (c == cu) continue;
        const double gc = gain(c);
        if (!have_other || gc > other_gain + eps || (std::abs(gc - other_gain) <= eps && c < other)) {
          have_other = true;
          other = c;
          other_gain = gc;
        }
      }
      if (have_other && other_gain > stay + eps) {
        best = other;
        best_gain = other_gain;
      }
      (void)best_gain;
      tot[best] += k;
      if (best != cu) {
        comm[u] = best;
        ++moves;
      }
      for (auto c : touched) link[c] = 0.0;
      touched.clear();
    }
    total_moves += moves;
    if (moves == 0) break;
  }
  return total_moves;
}

// Dense renumbering by first appearance; returns the number of communities.
inline std::size_t renumber(std::vector<std::uint32_t>& comm) {
  std::vector<std::uint32_t> remap(comm.size(), UINT32_MAX);
  std::uint32_t next = 0;
  for (auto& c : comm) {
    if (remap[c] == UINT32_MAX) remap[c] = next++;
    c = remap[c];
  }
  return next;
}

} // namespace detail

/**
 * Multi-level Louvain modularity maximization.
 *
 * Each level runs seeded local-moving passes (node order reshuffled every
 * pass, ties toward the lowest community id, a move only on strict gain)
 * and then collapses communities into weighted super-nodes. Stops when a
 * level makes no move or after max_levels levels.
 */
inline LouvainResult louvain_levels(const Graph& g, const LouvainOptions& opt = {}) {
  if (g.num_nodes() == 0) throw validation_error("louvain: graph has no nodes");
  if (!g.is_symmetric()) throw validation_error("louvain: graph must be symmetric");

  const auto n = g.num_nodes();
  std::vector<community_id> flat(n);
  std::iota(flat.begin(), flat.end(), 0);

  LouvainResult result;
  const double two_m = static_cast<double>(g.num_edges());
  auto current_q = [&] {
    return two_m > 0.0 ? modularity(g, CommunityAssignment::compact(flat), opt.resolution) : 0.0;
  };
  result.level_modularity.push_back(current_q());

  if (two_m > 0.0) {
    Rng rng(opt.seed);
    auto lg = detail::level_from_graph(g);
    for (std::size_t level = 0; level < opt.max_levels; ++level) {
      std::vector<std::uint32_t> comm(lg.size());
      std::iota(comm.begin(), comm.end(), 0u);
      const auto moves = detail::local_moving(lg, comm, opt.resolution, two_m, rng, opt.max_passes);
      if (moves == 0) break;
      const auto k = detail::renumber(comm);
      for (auto& c : flat) c = static_cast<community_id>(comm[c]);
      result.level_modularity.push_back(current_q());
      if (k == lg.size()) break;
      lg = detail::aggregate(lg, comm, k);
    }
  }
  result.assignment = CommunityAssignment::compact(flat);
  return result;
}

inline CommunityAssignment louvain(const Graph& g, double resolution = 1.0, std::uint64_t seed = 0,
                                   std::size_t max_levels = 10) {
  return louvain_levels(g, {resolution, seed, max_levels}).assignment;
}

/// Maps old id -> new id so nodes are sorted by (community, old id).
inline std::vector<node_id> community_order_permutation(const CommunityAssignment& a) {
  if (!a.is_full()) throw validation_error("community order needs a full assignment");
  std::vector<node_id> order(a.num_nodes());
  std::iota(order.begin(), order.end(), node_id{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](node_id x, node_id y) { return a[x] < a[y]; });
  std::vector<node_id> perm(a.num_nodes());
  for (std::size_t i = 0; i < order.size(); ++i) perm[order[i]] = static_cast<node_id>(i);
  return perm;
}

/// Follows a node relabeling; community ids are unchanged.
inline CommunityAssignment permute_assignment(const CommunityAssignment& a,
                                              std::span<const node_id> perm) {
  check_permutation(perm, a.num_nodes());
  CommunityAssignment out;
  out.membership.assign(a.num_nodes(), kUnassigned);
  for (std::size_t u = 0; u < a.num_nodes(); ++u) out.membership[perm[u]] = a.membership[u];
  out.sizes = a.sizes;
  return out;
}

/// Keeps only training nodes, drops emptied communities, re-compacts ids
/// preserving the relative order of the surviving ones.
inline CommunityAssignment restrict_to_train(const CommunityAssignment& a,
                                             std::span<const node_id> train) {
  if (train.empty()) throw validation_error("restrict_to_train: empty training set");
  std::vector<community_id> raw(a.num_nodes(), kUnassigned);
  std::vector<bool> used(a.num_communities(), false);
  for (auto v : train) {
    if (v >= a.num_nodes()) throw validation_error("restrict_to_train: node out of range");
    if (a[v] == kUnassigned) throw validation_error("restrict_to_train: node has no community");
    raw[v] = a[v];
    used[a[v]] = true;
  }
  std::vector<community_id> remap(a.num_communities(), kUnassigned);
  community_id next = 0;
  for (std::size_t c = 0; c < used.size(); ++c)
    if (used[c]) remap[c] = next++;
  CommunityAssignment out;
  out.membership.assign(a.num_nodes(), kUnassigned);
  out.sizes.assign(static_cast<std::size_t>(next), 0);
  for (std::size_t v = 0; v < raw.size(); ++v) {
    if (raw[v] == kUnassigned) continue;
    out.membership[v] = remap[raw[v]];
    ++out.sizes[out.membership[v]];
  }
  return out;
}

/// "node_id community_id" per assigned node, ascending by node id.
inline void save_assignment(const std::filesystem::path& path, const CommunityAssignment& a) {
  auto out = detail::open_out(path);
  for (std::size_t v = 0; v < a.num_nodes(); ++v)
    if (a.membership[v] != kUnassigned) out << v << ' ' << a.membership[v] << '\n';
}

/// Reads an assignment file. Nodes missing from the file stay unassigned;
/// ids must already be contiguous from 0.
inline CommunityAssignment load_assignment(const std::filesystem::path& path,
                                           std::size_t num_nodes = 0) {
  auto in = detail::open_in(path);
  std::vector<community_id> membership(num_nodes, kUnassigned);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto toks = detail::tokens(body);
    if (toks.size() != 2) throw parse_error("expected 'node community'", line_no);
    auto v = detail::parse_int<node_id>(toks[0], line_no);
    auto c = detail::parse_int<std::uint32_t>(toks[1], line_no);
    if (v >= membership.size()) {
      if (num_nodes) throw parse_error("node id beyond graph size", line_no);
      membership.resize(v + 1, kUnassigned);
    }
    if (membership[v] != kUnassigned) throw parse_error("node listed twice", line_no);
    membership[v] = static_cast<community_id>(c);
  }
  CommunityAssignment a;
  a.membership = std::move(membership);
  for (auto c : a.membership) {
    if (c == kUnassigned) continue;
    if (static_cast<std::size_t>(c) >= a.sizes.size()) a.sizes.resize(c + 1, 0);
    ++a.sizes[c];
  }
  a.validate();
  return a;
}

} // namespace commrand
