#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "commrand/dataset.hpp"
#include "commrand/random.hpp"
#include "commrand/types.hpp"

namespace commrand {

/// Planted-partition generator parameters.
struct SbmConfig {
  std::vector<std::size_t> community_sizes;
  double p_in = 0.1;
  double p_out = 0.005;
  std::size_t feature_dim = 16;
  // Euclidean distance between any two community feature means (unit-variance noise).
  double feature_signal = 2.0;
  // Probability that a node's label is replaced by a different, uniformly chosen class.
  double label_noise = 0.0;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  // Randomly relabel node ids after generation so communities are not contiguous.
  bool shuffle_ids = true;

  static SbmConfig uniform(std::size_t communities, std::size_t size, double p_in, double p_out) {
    SbmConfig c;
    c.community_sizes.assign(communities, size);
    c.p_in = p_in;
    c.p_out = p_out;
    return c;
  }

  std::size_t num_nodes() const {
    return std::accumulate(community_sizes.begin(), community_sizes.end(), std::size_t{0});
  }

  void validate() const {
    if (community_sizes.empty()) throw validation_error("sbm: need at least one community");
    for (auto s : community_sizes)
      if (s == 0) throw validation_error("sbm: community sizes must be positive");
    if (!(p_in >= 0.0 && p_in <= 1.0)) throw validation_error("sbm: p_in must be in [0,1]");
    if (!(p_out >= 0.0 && p_out <= 1.0)) throw validation_error("sbm: p_out must be in [0,1]");
    if (p_out > p_in) throw validation_error("sbm: p_out must not exceed p_in");
    if (feature_dim == 0) throw validation_error("sbm: feature_dim must be positive");
    if (!(feature_signal >= 0.0)) throw validation_error("sbm: feature_signal must be non-negative");
    if (!(label_noise >= 0.0 && label_noise < 1.0))
      throw validation_error("sbm: label_noise must be in [0,1)");
    if (!(train_fraction > 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0))
      throw validation_error("sbm: split fractions must be positive and sum to at most 1");
  }
};

struct SbmDataset {
  Dataset dataset;
  std::vector<community_id> blocks; // planted community of each node
};

/**
 * Samples an undirected planted-partition graph.
 *
 * Each unordered pair is joined independently with probability p_in (same
 * block) or p_out. Community c's feature mean is feature_signal/sqrt(2) times
 * the basis vector e_c when feature_dim >= #communities, otherwise a random
 * unit direction of the same length. Train/val/test splits are drawn per
 * community so every split sees every community in proportion.
 */
inline SbmDataset generate_sbm(const SbmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto n = cfg.num_nodes();
  const auto num_blocks = cfg.community_sizes.size();

  std::vector<community_id> block(n);
  std::vector<std::vector<node_id>> members(num_blocks);
  {
    node_id v = 0;
    for (std::size_t c = 0; c < num_blocks; ++c) {
      for (std::size_t i = 0; i < cfg.community_sizes[c]; ++i, ++v) {
        block[v] = static_cast<community_id>(c);
        members[c].push_back(v);
      }
    }
  }

  std::vector<std::pair<node_id, node_id>> edges;
  {
    Rng rng(derive_seed({seed, 1}));
    for (node_id u = 0; u < n; ++u) {
      for (node_id v = u + 1; v < n; ++v) {
        const double p = block[u] == block[v] ? cfg.p_in : cfg.p_out;
        if (rng.bernoulli(p)) edges.emplace_back(u, v);
      }
    }
  }

  Matrix<float> features(n, cfg.feature_dim);
  {
    Rng rng(derive_seed({seed, 2}));
    const double scale = cfg.feature_signal / std::sqrt(2.0);
    Matrix<double> means(num_blocks, cfg.feature_dim);
    for (std::size_t c = 0; c < num_blocks; ++c) {
      if (cfg.feature_dim >= num_blocks) {
        means(c, c) = scale;
      } else {
        double norm = 0.0;
        for (auto& x : means.row(c)) {
          x = rng.normal();
          norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : means.row(c)) x *= scale / norm;
      }
    }
    for (node_id v = 0; v < n; ++v) {
      for (std::size_t j = 0; j < cfg.feature_dim; ++j)
        features(v, j) = static_cast<float>(means(block[v], j) + rng.normal());
    }
  }

  std::vector<label_id> labels(n);
  {
    Rng rng(derive_seed({seed, 3}));
    for (node_id v = 0; v < n; ++v) {
      labels[v] = block[v];
      if (cfg.label_noise > 0.0 && num_blocks > 1 && rng.bernoulli(cfg.label_noise)) {
        auto other = static_cast<label_id>(rng.below(num_blocks - 1));
        labels[v] = other >= block[v] ? other + 1 : other;
      }
    }
  }

  Dataset d;
  {
    Rng rng(derive_seed({seed, 4}));
    for (auto& m : members) {
      rng.shuffle(m.begin(), m.end());
      const auto n_train = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(m.size()))));
      const auto n_val = std::min(
          m.size() - std::min(m.size(), n_train),
          static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(m.size()))));
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (i < n_train)
          d.train.push_back(m[i]);
        else if (i < n_train + n_val)
          d.val.push_back(m[i]);
        else
          d.test.push_back(m[i]);
      }
    }
    std::sort(d.train.begin(), d.train.end());
    std::sort(d.val.begin(), d.val.end());
    std::sort(d.test.begin(), d.test.end());
  }
  d.graph = Graph::from_edges(n, std::move(edges), true);
  d.features = std::move(features);
  d.labels = std::move(labels);

  if (cfg.shuffle_ids) {
    std::vector<node_id> perm(n);
    std::iota(perm.begin(), perm.end(), node_id{0});
    Rng rng(derive_seed({seed, 5}));
    rng.shuffle(perm.begin(), perm.end());
    d = apply_permutation(d, perm);
    std::vector<community_id> permuted(n);
    for (node_id v = 0; v < n; ++v) permuted[perm[v]] = block[v];
    block = std::move(permuted);
  }
  return {std::move(d), std::move(block)};
}

inline Dataset gen_sbm(const SbmConfig& cfg, std::uint64_t seed) {
  return generate_sbm(cfg, seed).dataset;
}

} // namespace commrand
