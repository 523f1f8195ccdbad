#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "commrand/community.hpp"
#include "commrand/dataset.hpp"
#include "commrand/gnn.hpp"
#include "commrand/metrics.hpp"
#include "commrand/minibatch.hpp"

namespace commrand {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 5e-4;
  std::size_t max_epochs = 100;
  std::size_t early_stop_patience = 6;
  std::size_t lr_plateau_patience = 3;
  double lr_plateau_factor = 0.1;
  double improvement_threshold = 1e-6; // absolute
  std::uint64_t seed = 0;              // weight initialization
  std::size_t eval_batch_size = 0;     // 0 = whole node set at once
  std::size_t workers = 1;             // concurrent batch sampling
  std::size_t cache_capacity = 0;      // LRU slots; 0 disables the simulator
  bool record_wall_time = true;

  void validate() const {
    if (!(lr > 0.0)) throw validation_error("train: lr must be positive");
    if (!(weight_decay >= 0.0)) throw validation_error("train: weight_decay must be non-negative");
    if (early_stop_patience == 0 || lr_plateau_patience == 0)
      throw validation_error("train: patience values must be positive");
    if (!(lr_plateau_factor > 0.0 && lr_plateau_factor < 1.0))
      throw validation_error("train: lr_plateau_factor must be in (0,1)");
  }
};

/// One row of the per-epoch report.
struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double mean_input_nodes = 0.0;
  double mean_feature_bytes = 0.0;
  double mean_labels_per_batch = 0.0;
  double epoch_wall_time = 0.0; // seconds, sampling + optimization
  std::optional<double> cache_miss_rate;
  double lr = 0.0;

  friend bool operator==(const EpochReport&, const EpochReport&) = default;
};

/// Multiplies the rate by `factor` once validation loss has failed to improve
/// on more than `patience` consecutive epochs (no cooldown, no floor).
class PlateauScheduler {
public:
  PlateauScheduler(double lr, std::size_t patience, double factor, double threshold)
      : lr_(lr), patience_(patience), factor_(factor), threshold_(threshold) {}

  double step(double metric) {
    if (metric < best_ - threshold_) {
      best_ = metric;
      bad_ = 0;
    } else if (++bad_ > patience_) {
      lr_ *= factor_;
      bad_ = 0;
    }
    return lr_;
  }

  double lr() const noexcept { return lr_; }

private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

/// Signals a stop after `patience` consecutive epochs without improvement.
class EarlyStopping {
public:
  EarlyStopping(std::size_t patience, double threshold) : patience_(patience), threshold_(threshold) {}

  /// Returns true if this metric is a new best.
  bool update(double metric) {
    if (metric < best_ - threshold_) {
      best_ = metric;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const noexcept { return bad_ >= patience_; }
  double best() const noexcept { return best_; }

private:
  std::size_t patience_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Full-neighborhood inference over `nodes`, optionally in chunks.
template <typename T>
EvalResult evaluate(const Parameters<T>& params, const Dataset& d, std::span<const node_id> nodes,
                    std::size_t chunk = 0) {
  if (nodes.empty()) throw validation_error("evaluate: empty node set");
  if (chunk == 0) chunk = nodes.size();
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < nodes.size(); i += chunk) {
    auto part = nodes.subspan(i, std::min(chunk, nodes.size() - i));
    auto sub = full_subgraph(d.graph, part, params.config.num_layers);
    auto cache = forward(params, sub, gather_rows<T>(d.features, sub.input_nodes));
    std::vector<label_id> labels;
    for (auto v : part) labels.push_back(d.labels[v]);
    auto [l, grad] = softmax_cross_entropy(cache.logits, labels);
    loss += l * static_cast<double>(part.size());
    for (std::size_t r = 0; r < part.size(); ++r) {
      auto row = cache.logits.row(r);
      const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
      if (pred == labels[r]) ++correct;
    }
  }
  return {loss / static_cast<double>(nodes.size()),
          static_cast<double>(correct) / static_cast<double>(nodes.size())};
}

template <typename T>
struct TrainResult {
  Parameters<T> params;             // weights of the best-validation-loss epoch
  std::vector<EpochReport> reports;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double best_val_acc = 0.0;
};

/**
 * Mini-batch training loop.
 *
 * Each epoch samples its batches (possibly concurrently), applies one Adam
 * step per batch in batch order, then evaluates the validation set with
 * full neighborhoods. Validation loss drives both the plateau scheduler and
 * early stopping; the returned parameters are from the best epoch.
 */
template <typename T = float>
TrainResult<T> train(const Dataset& d, const CommunityAssignment& a, const PartitionPolicy& policy,
                     const SamplerConfig& sampler_cfg, ModelConfig model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  d.validate();
  if (model_cfg.in_dim == 0) model_cfg.in_dim = d.feature_dim();
  if (model_cfg.num_classes == 0) model_cfg.num_classes = d.num_classes();
  model_cfg.num_layers = sampler_cfg.num_layers();
  model_cfg.validate();
  if (d.val.empty()) throw validation_error("train: validation set is empty");

  TrainResult<T> result;
  auto params = Parameters<T>::xavier(model_cfg, cfg.seed);
  result.params = params;
  if (cfg.max_epochs == 0) return result;

  EpochSampler sampler(d, a, policy, sampler_cfg);
  Adam<T> adam(params);
  PlateauScheduler scheduler(cfg.lr, cfg.lr_plateau_patience, cfg.lr_plateau_factor, cfg.improvement_threshold);
  EarlyStopping stopper(cfg.early_stop_patience, cfg.improvement_threshold);
  std::optional<LruCache> cache;
  if (cfg.cache_capacity) cache.emplace(cfg.cache_capacity);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochReport row;
    row.epoch = epoch;
    row.lr = scheduler.lr();
    if (cache) cache->reset_stats();

    const auto t0 = std::chrono::steady_clock::now();
    auto batches = sampler.epoch(epoch, cfg.workers);
    double loss_sum = 0.0, nodes_sum = 0.0, labels_sum = 0.0;
    for (const auto& sub : batches) {
      auto x = gather_rows<T>(d.features, sub.input_nodes);
      auto fc = forward(params, sub, std::move(x));
      std::vector<label_id> labels;
      labels.reserve(sub.roots.size());
      for (auto r : sub.roots) labels.push_back(d.labels[r]);
      auto [loss, grads] = loss_and_backward(params, sub, fc, labels, cfg.weight_decay);
      adam.step(params, grads, scheduler.lr());

      loss_sum += loss;
      nodes_sum += static_cast<double>(feature_footprint(sub, d.feature_dim()).unique_nodes);
      labels_sum += static_cast<double>(labels_per_batch(sub.roots, d.labels));
      if (cache) cache->access_all(batch_accesses(sub));
    }
    const auto t1 = std::chrono::steady_clock::now();

    const auto nb = static_cast<double>(batches.size());
    row.train_loss = loss_sum / nb;
    row.mean_input_nodes = nodes_sum / nb;
    row.mean_feature_bytes = row.mean_input_nodes * static_cast<double>(d.feature_dim() * sizeof(float));
    row.mean_labels_per_batch = labels_sum / nb;
    if (cfg.record_wall_time) row.epoch_wall_time = std::chrono::duration<double>(t1 - t0).count();
    if (cache) row.cache_miss_rate = cache->stats().miss_rate();

    auto val = evaluate(params, d, d.val, cfg.eval_batch_size);
    row.val_loss = val.loss;
    row.val_acc = val.accuracy;
    result.reports.push_back(row);

    if (stopper.update(val.loss)) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_loss = val.loss;
      result.best_val_acc = val.accuracy;
    }
    scheduler.step(val.loss);
    if (stopper.should_stop()) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

} // namespace detail

inline constexpr const char* kEpochCsvHeader =
    "epoch,train_loss,val_loss,val_acc,mean_input_nodes,mean_feature_bytes,"
    "mean_labels_per_batch,epoch_wall_time,cache_miss_rate,lr";

inline void write_epoch_csv_row(std::ostream& out, const EpochReport& r) {
  using detail::format_double;
  out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
      << format_double(r.val_acc) << ',' << format_double(r.mean_input_nodes) << ','
      << format_double(r.mean_feature_bytes) << ',' << format_double(r.mean_labels_per_batch) << ','
      << format_double(r.epoch_wall_time) << ','
      << (r.cache_miss_rate ? format_double(*r.cache_miss_rate) : std::string()) << ','
      << format_double(r.lr) << '\n';
}

inline void write_epoch_csv(std::ostream& out, std::span<const EpochReport> rows) {
  out << kEpochCsvHeader << '\n';
  for (const auto& r : rows) write_epoch_csv_row(out, r);
}

inline nlohmann::json to_json(const EpochReport& r) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"val_loss", r.val_loss},
                      {"val_acc", r.val_acc},
                      {"mean_input_nodes", r.mean_input_nodes},
                      {"mean_feature_bytes", r.mean_feature_bytes},
                      {"mean_labels_per_batch", r.mean_labels_per_batch},
                      {"epoch_wall_time", r.epoch_wall_time},
                      {"lr", r.lr}};
  j["cache_miss_rate"] = r.cache_miss_rate ? nlohmann::json(*r.cache_miss_rate) : nlohmann::json(nullptr);
  return j;
}

// Checkpoint: u64 header length, JSON header, then every tensor as
// little-endian float32 in header order.
inline void save_checkpoint(const std::filesystem::path& path, const Parameters<float>& p) {
  nlohmann::json header = {{"format", "commrand-checkpoint"},
                           {"version", 1},
                           {"arch", to_string(p.config.arch)},
                           {"num_layers", p.config.num_layers},
                           {"in_dim", p.config.in_dim},
                           {"hidden_dim", p.config.hidden_dim},
                           {"num_classes", p.config.num_classes}};
  auto shapes = nlohmann::json::array();
  for (const auto& t : p.tensors) shapes.push_back({t.rows(), t.cols()});
  header["tensors"] = shapes;
  const auto text = header.dump();
  auto out = detail::open_out(path, true);
  detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : p.tensors)
    for (float x : t.flat()) detail::put_f32(out, x);
  if (!out) throw io_error("failed writing " + path.string());
}

inline Parameters<float> load_checkpoint(const std::filesystem::path& path) {
  auto in = detail::open_in(path, true);
  const auto len = detail::get_le<std::uint64_t>(in);
  if (len > (1u << 24)) throw parse_error("checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw parse_error("truncated checkpoint header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("checkpoint header: ") + e.what());
  }
  if (h.value("format", "") != "commrand-checkpoint") throw parse_error("not a commrand checkpoint");
  ModelConfig cfg;
  cfg.arch = parse_arch(h.at("arch").get<std::string>());
  cfg.num_layers = h.at("num_layers").get<std::size_t>();
  cfg.in_dim = h.at("in_dim").get<std::size_t>();
  cfg.hidden_dim = h.at("hidden_dim").get<std::size_t>();
  cfg.num_classes = h.at("num_classes").get<std::size_t>();
  auto p = Parameters<float>::zeros(cfg);
  const auto& shapes = h.at("tensors");
  if (shapes.size() != p.tensors.size()) throw parse_error("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].at(0).get<std::size_t>() != p.tensors[i].rows() ||
        shapes[i].at(1).get<std::size_t>() != p.tensors[i].cols())
      throw parse_error("checkpoint tensor shape mismatch");
    for (auto& x : p.tensors[i].flat()) x = detail::get_f32(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw parse_error("trailing bytes in checkpoint");
  return p;
}

} // namespace commrand
