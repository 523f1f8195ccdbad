#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "commrand/community.hpp"
#include "commrand/dataset.hpp"
#include "commrand/metrics.hpp"
#include "commrand/minibatch.hpp"
#include "commrand/sbm.hpp"
#include "commrand/train.hpp"

namespace commrand {

using nlohmann::json;

/// 64-bit FNV-1a of a JSON document's compact dump.
inline std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << x;
  return os.str();
}

namespace detail {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;

  void bytes(const void* data, std::size_t n) {
    auto p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }

  template <typename T>
  void values(std::span<const T> xs) {
    const std::uint64_t n = xs.size();
    bytes(&n, sizeof n);
    for (const auto& x : xs) {
      const auto w = static_cast<std::uint64_t>(x);
      bytes(&w, sizeof w);
    }
  }
};

} // namespace detail

/// Content hash of a dataset (adjacency, features, labels, splits).
inline std::uint64_t dataset_fingerprint(const Dataset& d) {
  detail::Fnv1a f;
  f.values(d.graph.row_offsets());
  f.values(d.graph.col_indices());
  std::vector<std::uint32_t> bits;
  bits.reserve(d.features.size() + 1);
  bits.push_back(static_cast<std::uint32_t>(d.features.cols()));
  for (float x : d.features.flat()) bits.push_back(std::bit_cast<std::uint32_t>(x));
  f.values(std::span<const std::uint32_t>(bits));
  f.values(std::span<const label_id>(d.labels));
  f.values(std::span<const node_id>(d.train));
  f.values(std::span<const node_id>(d.val));
  f.values(std::span<const node_id>(d.test));
  return f.h;
}

inline std::uint64_t assignment_fingerprint(const CommunityAssignment& a) {
  detail::Fnv1a f;
  f.values(std::span<const community_id>(a.membership));
  return f.h;
}

inline std::size_t desk_batch_size(std::size_t train_size) {
  return std::max<std::size_t>(1, std::min<std::size_t>(1024, train_size / 8));
}

// ---------------------------------------------------------------------------
// JSON configs

inline SbmConfig sbm_config_from_json(const json& j) {
  SbmConfig c;
  if (j.contains("community_sizes")) {
    c.community_sizes = j.at("community_sizes").get<std::vector<std::size_t>>();
  } else {
    c.community_sizes.assign(j.at("num_communities").get<std::size_t>(), j.at("community_size").get<std::size_t>());
  }
  c.p_in = j.value("p_in", c.p_in);
  c.p_out = j.value("p_out", c.p_out);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.feature_signal = j.value("feature_signal", c.feature_signal);
  c.label_noise = j.value("label_noise", c.label_noise);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.shuffle_ids = j.value("shuffle_ids", c.shuffle_ids);
  c.validate();
  return c;
}

inline json to_json(const SbmConfig& c) {
  return {{"community_sizes", c.community_sizes}, {"p_in", c.p_in},
          {"p_out", c.p_out},                     {"feature_dim", c.feature_dim},
          {"feature_signal", c.feature_signal},   {"label_noise", c.label_noise},
          {"train_fraction", c.train_fraction},   {"val_fraction", c.val_fraction},
          {"shuffle_ids", c.shuffle_ids}};
}

/// Everything needed for one training run apart from the data.
struct RunConfig {
  PartitionPolicy policy = PartitionPolicy::rand_roots();
  SamplerConfig sampler;       // batch_size 0 = desk default from the training-set size
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;

  RunConfig() {
    sampler.batch_size = 0;
    train.max_epochs = 100;
  }

  void set_seed(std::uint64_t s) {
    seed = s;
    sampler.seed = s;
    train.seed = s;
  }

  /// Fills dataset-dependent defaults.
  RunConfig resolved(const Dataset& d) const {
    RunConfig r = *this;
    if (r.sampler.batch_size == 0) r.sampler.batch_size = desk_batch_size(d.train.size());
    r.model.in_dim = d.feature_dim();
    r.model.num_classes = d.num_classes();
    r.model.num_layers = r.sampler.num_layers();
    return r;
  }

  void validate() const {
    policy.validate();
    if (sampler.batch_size != 0) sampler.validate();
    train.validate();
  }
};

inline json to_json(const RunConfig& r) {
  return {{"policy", r.policy.name()},
          {"intra_prob", r.sampler.intra_prob},
          {"seed", r.seed},
          {"sampler", {{"fanouts", r.sampler.fanouts}, {"batch_size", r.sampler.batch_size}}},
          {"model", {{"arch", to_string(r.model.arch)}, {"hidden_dim", r.model.hidden_dim}}},
          {"train",
           {{"lr", r.train.lr},
            {"weight_decay", r.train.weight_decay},
            {"max_epochs", r.train.max_epochs},
            {"early_stop_patience", r.train.early_stop_patience},
            {"lr_plateau_patience", r.train.lr_plateau_patience},
            {"lr_plateau_factor", r.train.lr_plateau_factor},
            {"improvement_threshold", r.train.improvement_threshold},
            {"eval_batch_size", r.train.eval_batch_size},
            {"cache_capacity", r.train.cache_capacity},
            {"timing", r.train.record_wall_time}}}};
}

/// Reads a run config; absent keys keep the values in `base`.
inline RunConfig run_config_from_json(const json& j, RunConfig base = {}) {
  RunConfig r = std::move(base);
  if (j.contains("policy")) r.policy = PartitionPolicy::parse(j.at("policy").get<std::string>());
  if (j.contains("mix_fraction") && r.policy.kind == PartitionKind::comm_rand_mix)
    r.policy.mix_fraction = j.at("mix_fraction").get<double>();
  r.sampler.intra_prob = j.value("intra_prob", r.sampler.intra_prob);
  if (j.contains("seed")) r.set_seed(j.at("seed").get<std::uint64_t>());
  if (auto it = j.find("sampler"); it != j.end()) {
    r.sampler.fanouts = it->value("fanouts", r.sampler.fanouts);
    r.sampler.batch_size = it->value("batch_size", r.sampler.batch_size);
  }
  if (auto it = j.find("model"); it != j.end()) {
    if (it->contains("arch")) r.model.arch = parse_arch(it->at("arch").get<std::string>());
    r.model.hidden_dim = it->value("hidden_dim", r.model.hidden_dim);
  }
  if (auto it = j.find("train"); it != j.end()) {
    auto& t = r.train;
    t.lr = it->value("lr", t.lr);
    t.weight_decay = it->value("weight_decay", t.weight_decay);
    t.max_epochs = it->value("max_epochs", t.max_epochs);
    t.early_stop_patience = it->value("early_stop_patience", t.early_stop_patience);
    t.lr_plateau_patience = it->value("lr_plateau_patience", t.lr_plateau_patience);
    t.lr_plateau_factor = it->value("lr_plateau_factor", t.lr_plateau_factor);
    t.improvement_threshold = it->value("improvement_threshold", t.improvement_threshold);
    t.eval_batch_size = it->value("eval_batch_size", t.eval_batch_size);
    t.cache_capacity = it->value("cache_capacity", t.cache_capacity);
    t.record_wall_time = it->value("timing", t.record_wall_time);
  }
  r.validate();
  return r;
}

struct RunOutput {
  TrainResult<float> result;
  RunConfig config; // resolved
};

inline RunOutput run_training(const Dataset& d, const CommunityAssignment& a, const RunConfig& cfg) {
  auto r = cfg.resolved(d);
  r.sampler.validate();
  auto res = train<float>(d, a, r.policy, r.sampler, r.model, r.train);
  return {std::move(res), std::move(r)};
}

// ---------------------------------------------------------------------------
// Sweep

struct Grid {
  std::vector<PartitionPolicy> policies;
  std::vector<double> intra_probs;
  std::vector<std::uint64_t> seeds;

  void validate() const {
    if (policies.empty() || intra_probs.empty() || seeds.empty())
      throw validation_error("grid: policies, intra_probs and seeds must be non-empty");
    for (auto p : intra_probs)
      if (!(p >= 0.5 && p <= 1.0)) throw validation_error("grid: intra_prob must be in [0.5, 1.0]");
    for (const auto& p : policies) p.validate();
  }

  std::size_t size() const { return policies.size() * intra_probs.size() * seeds.size(); }
};

inline Grid grid_from_json(const json& j) {
  Grid g;
  for (const auto& p : j.at("policies")) g.policies.push_back(PartitionPolicy::parse(p.get<std::string>()));
  g.intra_probs = j.at("intra_probs").get<std::vector<double>>();
  g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  g.validate();
  return g;
}

struct SweepRow {
  std::string cell_hash;
  std::string policy;
  double mix_fraction = 0.0;
  double intra_prob = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double final_val_acc = 0.0;
  double epochs_to_converge = 0.0;
  double epochs_run = 0.0;
  double per_epoch_time = 0.0;
  double total_time = 0.0;
  double mean_input_nodes = 0.0;
  double mean_feature_bytes = 0.0;
  double mean_labels_per_batch = 0.0;
  std::optional<double> cache_miss_rate;
  std::optional<double> norm_per_epoch_time;
  std::optional<double> norm_epochs;
  std::optional<double> norm_total_time;
};

inline json to_json(const SweepRow& r) {
  auto opt = [](const std::optional<double>& x) { return x ? json(*x) : json(nullptr); };
  return {{"cell_hash", r.cell_hash},
          {"policy", r.policy},
          {"mix_fraction", r.mix_fraction},
          {"intra_prob", r.intra_prob},
          {"seed", r.seed},
          {"status", r.status},
          {"final_val_acc", r.final_val_acc},
          {"epochs_to_converge", r.epochs_to_converge},
          {"epochs_run", r.epochs_run},
          {"per_epoch_time", r.per_epoch_time},
          {"total_time", r.total_time},
          {"mean_input_nodes", r.mean_input_nodes},
          {"mean_feature_bytes", r.mean_feature_bytes},
          {"mean_labels_per_batch", r.mean_labels_per_batch},
          {"cache_miss_rate", opt(r.cache_miss_rate)}};
}

inline SweepRow sweep_row_from_json(const json& j) {
  SweepRow r;
  r.cell_hash = j.at("cell_hash").get<std::string>();
  r.policy = j.at("policy").get<std::string>();
  r.mix_fraction = j.at("mix_fraction").get<double>();
  r.intra_prob = j.at("intra_prob").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>();
  r.final_val_acc = j.at("final_val_acc").get<double>();
  r.epochs_to_converge = j.at("epochs_to_converge").get<double>();
  r.epochs_run = j.at("epochs_run").get<double>();
  r.per_epoch_time = j.at("per_epoch_time").get<double>();
  r.total_time = j.at("total_time").get<double>();
  r.mean_input_nodes = j.at("mean_input_nodes").get<double>();
  r.mean_feature_bytes = j.at("mean_feature_bytes").get<double>();
  r.mean_labels_per_batch = j.at("mean_labels_per_batch").get<double>();
  if (!j.at("cache_miss_rate").is_null()) r.cache_miss_rate = j.at("cache_miss_rate").get<double>();
  return r;
}

inline constexpr const char* kSweepCsvHeader =
    "cell_hash,policy,mix_fraction,intra_prob,seed,status,final_val_acc,epochs_to_converge,epochs_run,"
    "per_epoch_time,total_time,mean_input_nodes,mean_feature_bytes,mean_labels_per_batch,cache_miss_rate,"
    "norm_per_epoch_time,norm_epochs,norm_total_time";

inline void write_sweep_csv_row(std::ostream& out, const SweepRow& r) {
  using detail::format_double;
  auto opt = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string(); };
  auto status = r.status;
  std::replace(status.begin(), status.end(), ',', ';');
  std::replace(status.begin(), status.end(), '\n', ' ');
  out << r.cell_hash << ',' << r.policy << ',' << format_double(r.mix_fraction) << ','
      << format_double(r.intra_prob) << ',' << r.seed << ',' << status << ','
      << format_double(r.final_val_acc) << ',' << format_double(r.epochs_to_converge) << ','
      << format_double(r.epochs_run) << ',' << format_double(r.per_epoch_time) << ','
      << format_double(r.total_time) << ',' << format_double(r.mean_input_nodes) << ','
      << format_double(r.mean_feature_bytes) << ',' << format_double(r.mean_labels_per_batch) << ','
      << opt(r.cache_miss_rate) << ',' << opt(r.norm_per_epoch_time) << ',' << opt(r.norm_epochs) << ','
      << opt(r.norm_total_time) << '\n';
}

/// Divides time and epoch columns by the (RAND_ROOTS, p=0.5) row of the same seed.
inline void normalize_to_baseline(std::vector<SweepRow>& rows) {
  const auto baseline_name = PartitionPolicy::rand_roots().name();
  std::map<std::uint64_t, const SweepRow*> base;
  for (const auto& r : rows)
    if (r.policy == baseline_name && r.intra_prob == 0.5 && r.status == "ok") base[r.seed] = &r;
  auto ratio = [](double num, double den) -> std::optional<double> {
    if (den == 0.0) return std::nullopt;
    return num / den;
  };
  std::vector<SweepRow> out = rows;
  for (auto& r : out) {
    auto it = base.find(r.seed);
    if (it == base.end() || r.status != "ok") continue;
    r.norm_per_epoch_time = ratio(r.per_epoch_time, it->second->per_epoch_time);
    r.norm_epochs = ratio(r.epochs_to_converge, it->second->epochs_to_converge);
    r.norm_total_time = ratio(r.total_time, it->second->total_time);
  }
  rows = std::move(out);
}

inline SweepRow summarize_run(const TrainResult<float>& res) {
  SweepRow row;
  const auto& reps = res.reports;
  row.final_val_acc = res.best_val_acc;
  row.epochs_to_converge = reps.empty() ? 0.0 : static_cast<double>(res.best_epoch + 1);
  row.epochs_run = static_cast<double>(reps.size());
  bool has_cache = !reps.empty();
  double miss = 0.0;
  for (const auto& e : reps) {
    row.total_time += e.epoch_wall_time;
    row.mean_input_nodes += e.mean_input_nodes;
    row.mean_feature_bytes += e.mean_feature_bytes;
    row.mean_labels_per_batch += e.mean_labels_per_batch;
    if (e.cache_miss_rate)
      miss += *e.cache_miss_rate;
    else
      has_cache = false;
  }
  if (!reps.empty()) {
    const auto n = static_cast<double>(reps.size());
    row.per_epoch_time = row.total_time / n;
    row.mean_input_nodes /= n;
    row.mean_feature_bytes /= n;
    row.mean_labels_per_batch /= n;
    if (has_cache) row.cache_miss_rate = miss / n;
  }
  return row;
}

struct SweepOptions {
  std::filesystem::path out;         // final CSV; "<out>.journal" holds finished cells
  std::size_t workers = 1;
  std::size_t fixed_epochs = 0;      // >0: run exactly this many epochs, no early stop
  json provenance = json::object();  // dataset identity etc., folded into every cell hash
};

namespace detail {

inline std::vector<std::string> split_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

} // namespace detail

/**
 * Runs every (policy, p, seed) cell and writes the long-format CSV.
 *
 * Finished cells are appended to a journal keyed by a hash of the cell's
 * full config, so a rerun after interruption only executes missing cells.
 * The CSV is rewritten from the journal in grid order at the end.
 */
inline std::vector<SweepRow> run_sweep(const Dataset& d, const CommunityAssignment& a, const RunConfig& base,
                                       const Grid& grid, const SweepOptions& opt) {
  grid.validate();
  struct Cell {
    RunConfig cfg;
    std::string hash;
  };
  std::vector<Cell> cells;
  for (const auto& pol : grid.policies) {
    for (double p : grid.intra_probs) {
      for (auto seed : grid.seeds) {
        RunConfig c = base;
        c.policy = pol;
        c.sampler.intra_prob = p;
        c.set_seed(seed);
        if (opt.fixed_epochs) {
          c.train.max_epochs = opt.fixed_epochs;
          c.train.early_stop_patience = opt.fixed_epochs + 1;
        }
        c = c.resolved(d);
        json key = {{"run", to_json(c)}, {"provenance", opt.provenance}};
        cells.push_back({c, hex64(config_hash(key))});
      }
    }
  }

  std::map<std::string, SweepRow> done;
  const auto journal_path = opt.out.string() + ".journal";
  if (!opt.out.empty() && std::filesystem::exists(journal_path)) {
    std::ifstream in(journal_path);
    for (const auto& line : detail::split_lines(in)) {
      try {
        auto row = sweep_row_from_json(json::parse(line));
        done[row.cell_hash] = row;
      } catch (const std::exception&) {
        // a torn final line from an interrupted write; the cell reruns
      }
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (!done.count(cells[i].hash)) todo.push_back(i);

  std::mutex mu;
  std::ofstream journal;
  if (!opt.out.empty()) {
    if (opt.out.has_parent_path()) std::filesystem::create_directories(opt.out.parent_path());
    journal.open(journal_path, std::ios::app);
    if (!journal) throw io_error("cannot write " + journal_path);
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < todo.size();) {
      const auto& cell = cells[todo[k]];
      SweepRow row;
      try {
        auto res = train<float>(d, a, cell.cfg.policy, cell.cfg.sampler, cell.cfg.model, cell.cfg.train);
        row = summarize_run(res);
      } catch (const std::exception& e) {
        row = SweepRow{};
        row.status = std::string("error: ") + e.what();
      }
      row.cell_hash = cell.hash;
      row.policy = cell.cfg.policy.name();
      row.mix_fraction = cell.cfg.policy.mix_fraction;
      row.intra_prob = cell.cfg.sampler.intra_prob;
      row.seed = cell.cfg.seed;
      std::lock_guard lock(mu);
      done[cell.hash] = row;
      if (journal.is_open()) journal << to_json(row).dump() << '\n' << std::flush;
    }
  };
  const auto nworkers = std::max<std::size_t>(1, std::min(opt.workers, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < nworkers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<SweepRow> rows;
  for (const auto& c : cells) rows.push_back(done.at(c.hash));
  normalize_to_baseline(rows);
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, const std::string& config_hash_hex) {
  out << "# config_hash=" << config_hash_hex << '\n' << kSweepCsvHeader << '\n';
  for (const auto& r : rows) write_sweep_csv_row(out, r);
}

// ---------------------------------------------------------------------------
// Cache simulation

struct CacheSimRow {
  std::string policy;
  double mix_fraction = 0.0;
  double intra_prob = 0.0;
  std::uint64_t seed = 0;
  std::size_t capacity = 0;
  CacheStats stats;
};

/// Concatenated feature-access stream of `epochs` consecutive epochs.
inline std::vector<node_id> epoch_access_stream(const Dataset& d, const CommunityAssignment& a,
                                                const PartitionPolicy& policy, const SamplerConfig& cfg,
                                                std::size_t epochs, std::size_t workers = 1) {
  EpochSampler sampler(d, a, policy, cfg);
  std::vector<node_id> stream;
  for (std::size_t e = 0; e < epochs; ++e) {
    auto batches = sampler.epoch(e, workers);
    auto part = batch_access_stream(batches);
    stream.insert(stream.end(), part.begin(), part.end());
  }
  return stream;
}

/// Replays each (policy, p, seed) access stream through LRU caches of every capacity.
inline std::vector<CacheSimRow> run_cachesim(const Dataset& d, const CommunityAssignment& a, const RunConfig& base,
                                             const Grid& grid, std::span<const std::size_t> capacities,
                                             std::size_t epochs, std::size_t workers = 1) {
  grid.validate();
  if (capacities.empty()) throw validation_error("cachesim: capacity grid is empty");
  if (epochs == 0) throw validation_error("cachesim: epochs must be positive");
  std::vector<CacheSimRow> rows;
  for (const auto& pol : grid.policies) {
    for (double p : grid.intra_probs) {
      for (auto seed : grid.seeds) {
        RunConfig c = base;
        c.policy = pol;
        c.sampler.intra_prob = p;
        c.set_seed(seed);
        c = c.resolved(d);
        const auto stream = epoch_access_stream(d, a, pol, c.sampler, epochs, workers);
        for (auto cap : capacities) {
          CacheSimRow row{pol.name(), pol.mix_fraction, p, seed, cap, lru_simulate(stream, {cap})};
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

inline constexpr const char* kCacheCsvHeader = "policy,mix_fraction,intra_prob,seed,capacity,accesses,misses,miss_rate";

inline void write_cachesim_csv(std::ostream& out, const std::vector<CacheSimRow>& rows,
                               const std::string& config_hash_hex) {
  using detail::format_double;
  out << "# config_hash=" << config_hash_hex << '\n' << kCacheCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.policy << ',' << format_double(r.mix_fraction) << ',' << format_double(r.intra_prob) << ',' << r.seed
        << ',' << r.capacity << ',' << r.stats.accesses << ',' << r.stats.misses << ','
        << format_double(r.stats.miss_rate()) << '\n';
}

} // namespace commrand
