#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <list>
#include <ostream>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "commrand/minibatch.hpp"
#include "commrand/types.hpp"

namespace commrand {

struct Footprint {
  std::size_t unique_nodes = 0;
  std::size_t bytes = 0;
};

/// Size of the feature rows a batch has to gather.
inline Footprint feature_footprint(const BatchSubgraph& sub, std::size_t feature_dim,
                                   std::size_t bytes_per_elem = sizeof(float)) {
  return {sub.input_nodes.size(), sub.input_nodes.size() * feature_dim * bytes_per_elem};
}

/// Number of distinct labels among the roots.
inline std::size_t labels_per_batch(std::span<const node_id> roots, std::span<const label_id> labels) {
  std::vector<label_id> seen;
  seen.reserve(roots.size());
  for (auto r : roots) {
    if (labels[r] < 0) throw validation_error("labels_per_batch: unlabeled root");
    seen.push_back(labels[r]);
  }
  std::sort(seen.begin(), seen.end());
  return static_cast<std::size_t>(std::unique(seen.begin(), seen.end()) - seen.begin());
}

/// Sample Pearson correlation.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw validation_error("pearson: length mismatch");
  if (xs.size() < 2) throw validation_error("pearson: need at least two points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw validation_error("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct CacheConfig {
  std::size_t capacity = 1; // node-feature slots
};

struct CacheStats {
  std::size_t accesses = 0;
  std::size_t misses = 0;

  double miss_rate() const noexcept {
    return accesses ? static_cast<double>(misses) / static_cast<double>(accesses) : 0.0;
  }

  friend bool operator==(const CacheStats&, const CacheStats&) = default;
};

/// Fully associative LRU over node ids; a miss inserts and evicts the oldest.
class LruCache {
public:
  explicit LruCache(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw validation_error("cache capacity must be >= 1");
    index_.reserve(capacity_ * 2);
  }

  /// Returns true on hit.
  bool access(node_id key) {
    ++stats_.accesses;
    if (auto it = index_.find(key); it != index_.end()) {
      order_.splice(order_.begin(), order_, it->second);
      return true;
    }
    ++stats_.misses;
    if (order_.size() == capacity_) {
      index_.erase(order_.back());
      order_.pop_back();
    }
    order_.push_front(key);
    index_.emplace(key, order_.begin());
    return false;
  }

  void access_all(std::span<const node_id> keys) {
    for (auto k : keys) access(k);
  }

  const CacheStats& stats() const noexcept { return stats_; }
  void reset_stats() noexcept { stats_ = {}; }
  std::size_t size() const noexcept { return order_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

private:
  std::size_t capacity_;
  std::list<node_id> order_; // most recent first
  std::unordered_map<node_id, std::list<node_id>::iterator> index_;
  CacheStats stats_;
};

inline CacheStats lru_simulate(std::span<const node_id> stream, const CacheConfig& cfg) {
  LruCache cache(cfg.capacity);
  cache.access_all(stream);
  return cache.stats();
}

/// Sorted unique input nodes of one batch: the feature-gather order.
inline std::vector<node_id> batch_accesses(const BatchSubgraph& sub) {
  std::vector<node_id> ids = sub.input_nodes;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline std::vector<node_id> batch_access_stream(std::span<const BatchSubgraph> batches) {
  std::vector<node_id> out;
  for (const auto& b : batches) {
    auto ids = batch_accesses(b);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

} // namespace commrand
