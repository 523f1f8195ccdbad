// Command-line front end: dataset generation, community detection,
// reordering, training, knob sweeps and cache simulation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commrand/commrand.hpp"

namespace fs = std::filesystem;
using namespace commrand;

namespace {

constexpr int kExitValidation = 2;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path.string());
  return out;
}

// "25%" -> fraction of num_nodes, "800" -> absolute slots.
std::size_t parse_capacity(const std::string& tok, std::size_t num_nodes) {
  try {
    if (!tok.empty() && tok.back() == '%') {
      const double pct = std::stod(tok.substr(0, tok.size() - 1));
      if (!(pct > 0.0)) throw validation_error("capacity must be positive");
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(pct / 100.0 * static_cast<double>(num_nodes))));
    }
    std::size_t used = 0;
    const auto v = std::stoull(tok, &used);
    if (used != tok.size() || v == 0) throw validation_error("capacity must be a positive integer or percentage");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw validation_error("bad capacity '" + tok + "'");
  }
}

CommunityAssignment load_assignment_for(const Dataset& d, const std::string& path) {
  auto a = load_assignment(path, d.num_nodes());
  if (!a.is_full()) throw validation_error("assignment must cover every node");
  return a;
}

// Flags shared by train / sweep / cachesim that override config values.
struct RunOverrides {
  std::optional<std::string> policy;
  std::optional<double> mix_fraction;
  std::optional<double> intra_prob;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> workers;
  std::optional<std::string> timing;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--policy", policy, "RAND_ROOTS | NORAND_ROOTS | COMM_RAND_MIX(k)");
    cmd->add_option("--mix-fraction", mix_fraction, "Community mixing fraction k in [0,1]");
    cmd->add_option("--intra-prob", intra_prob, "Intra-community sampling probability p in [0.5,1]");
    cmd->add_option("--seed", seed, "Run seed");
    cmd->add_option("--max-epochs", max_epochs, "Epoch cap");
    cmd->add_option("--workers", workers, "Concurrent workers");
    cmd->add_option("--timing", timing, "wall | off (off writes 0 for wall-clock columns)")
        ->check(CLI::IsMember({"wall", "off"}));
  }

  void apply(RunConfig& r) const {
    if (policy) r.policy = PartitionPolicy::parse(*policy);
    if (mix_fraction) {
      if (r.policy.kind != PartitionKind::comm_rand_mix) r.policy = PartitionPolicy::comm_rand_mix(*mix_fraction);
      r.policy.mix_fraction = *mix_fraction;
    }
    if (intra_prob) r.sampler.intra_prob = *intra_prob;
    if (seed) r.set_seed(*seed);
    if (max_epochs) r.train.max_epochs = *max_epochs;
    if (workers) r.train.workers = *workers;
    if (timing) r.train.record_wall_time = *timing == "wall";
    r.validate();
  }
};

// ---------------------------------------------------------------------------

int cmd_gen_sbm(const std::string& config, std::uint64_t seed, const std::string& out) {
  auto cfg = sbm_config_from_json(read_json_file(config));
  auto sbm = generate_sbm(cfg, seed);
  save_bundle(out, sbm.dataset);
  save_assignment(fs::path(out) / "blocks.txt", CommunityAssignment::compact(sbm.blocks));
  write_json_file(fs::path(out) / "meta.json", {{"generator", "sbm"}, {"seed", seed}, {"sbm", to_json(cfg)}});
  std::cout << "nodes=" << sbm.dataset.num_nodes() << " edges=" << sbm.dataset.graph.num_edges()
            << " train=" << sbm.dataset.train.size() << " val=" << sbm.dataset.val.size()
            << " test=" << sbm.dataset.test.size() << '\n';
  return 0;
}

int cmd_detect(const std::string& bundle, double resolution, std::uint64_t seed, std::size_t max_levels,
               std::string out) {
  auto d = load_bundle(bundle);
  auto res = louvain_levels(d.graph, {resolution, seed, max_levels});
  if (out.empty()) out = (fs::path(bundle) / "communities.txt").string();
  save_assignment(out, res.assignment);
  const double q = d.graph.num_edges() ? modularity(d.graph, res.assignment, resolution) : 0.0;
  std::cout << "communities=" << res.assignment.num_communities() << " modularity=" << detail::format_double(q)
            << " levels=" << res.level_modularity.size() - 1 << " resolution=" << detail::format_double(resolution)
            << '\n';
  return 0;
}

int cmd_reorder(const std::string& bundle, const std::string& assignment, const std::string& out) {
  auto d = load_bundle(bundle);
  auto a = load_assignment_for(d, assignment);
  auto perm = community_order_permutation(a);
  auto reordered = apply_permutation(d, perm);
  auto ra = permute_assignment(a, perm);
  save_bundle(out, reordered);
  save_assignment(fs::path(out) / "communities.txt", ra);
  {
    auto f = open_output(fs::path(out) / "permutation.txt");
    for (auto p : perm) f << p << '\n';
  }
  std::cout << "reordered nodes=" << d.num_nodes() << " communities=" << ra.num_communities() << '\n';
  return 0;
}

int cmd_train(const std::string& bundle, const std::string& assignment, const std::string& config,
              const RunOverrides& ov, std::optional<std::size_t> capacity, const std::string& out) {
  auto d = load_bundle(bundle);
  auto a = load_assignment_for(d, assignment);
  RunConfig cfg = config.empty() ? RunConfig{} : run_config_from_json(read_json_file(config));
  ov.apply(cfg);
  if (capacity) cfg.train.cache_capacity = *capacity;
  auto run = run_training(d, a, cfg);

  json full = {{"run", to_json(run.config)},
               {"dataset", hex64(dataset_fingerprint(d))},
               {"assignment", hex64(assignment_fingerprint(a))}};
  const auto hash = hex64(config_hash(full));
  fs::create_directories(out);
  {
    auto f = open_output(fs::path(out) / "report.csv");
    f << "# config_hash=" << hash << '\n';
    write_epoch_csv(f, run.result.reports);
  }
  json rows = json::array();
  for (const auto& r : run.result.reports) rows.push_back(to_json(r));
  write_json_file(fs::path(out) / "report.json",
                  {{"config_hash", hash},
                   {"config", full},
                   {"best_epoch", run.result.best_epoch},
                   {"best_val_loss", run.result.best_val_loss},
                   {"best_val_acc", run.result.best_val_acc},
                   {"epochs", rows}});
  save_checkpoint(fs::path(out) / "model.ckpt", run.result.params);
  std::cout << "epochs=" << run.result.reports.size() << " best_epoch=" << run.result.best_epoch
            << " best_val_acc=" << detail::format_double(run.result.best_val_acc) << '\n';
  return 0;
}

struct PreparedData {
  Dataset dataset;
  CommunityAssignment assignment;
  json provenance;
};

// An experiment config names either {"bundle", "assignment"} or
// {"sbm", "sbm_seed"}; without an assignment, Louvain runs and (unless
// "reorder": false) the dataset is relabeled into community order.
PreparedData prepare_experiment_data(const json& exp) {
  PreparedData p;
  if (exp.contains("bundle")) {
    p.dataset = load_bundle(exp.at("bundle").get<std::string>());
  } else if (exp.contains("sbm")) {
    p.dataset = gen_sbm(sbm_config_from_json(exp.at("sbm")), exp.value("sbm_seed", std::uint64_t{0}));
  } else {
    throw validation_error("experiment config needs \"bundle\" or \"sbm\"");
  }
  if (exp.contains("assignment")) {
    p.assignment = load_assignment_for(p.dataset, exp.at("assignment").get<std::string>());
  } else {
    const auto det = exp.value("detect", json::object());
    p.assignment = louvain(p.dataset.graph, det.value("resolution", 1.0), det.value("seed", std::uint64_t{0}),
                           det.value("max_levels", std::size_t{10}));
    if (exp.value("reorder", true)) {
      auto perm = community_order_permutation(p.assignment);
      p.dataset = apply_permutation(p.dataset, perm);
      p.assignment = permute_assignment(p.assignment, perm);
    }
  }
  p.provenance = {{"dataset", hex64(dataset_fingerprint(p.dataset))},
                  {"assignment", hex64(assignment_fingerprint(p.assignment))}};
  return p;
}

int cmd_sweep(const std::string& config, const RunOverrides& ov, std::size_t fixed_epochs, std::string out) {
  auto exp = read_json_file(config);
  auto data = prepare_experiment_data(exp);
  RunConfig base = run_config_from_json(exp.value("run", json::object()));
  ov.apply(base);
  auto grid = grid_from_json(exp);
  if (out.empty()) out = exp.value("out", std::string("sweep.csv"));
  fixed_epochs = fixed_epochs ? fixed_epochs : exp.value("fixed_epochs", std::size_t{0});

  SweepOptions opt;
  opt.out = out;
  opt.workers = base.train.workers;
  opt.fixed_epochs = fixed_epochs;
  opt.provenance = data.provenance;
  base.train.workers = 1;
  auto rows = run_sweep(data.dataset, data.assignment, base, grid, opt);

  json resolved = {{"experiment", exp}, {"run", to_json(base)}, {"fixed_epochs", fixed_epochs},
                   {"provenance", data.provenance}};
  const auto hash = hex64(config_hash(resolved));
  {
    auto f = open_output(out);
    write_sweep_csv(f, rows, hash);
  }
  write_json_file(out + ".config.json", {{"config_hash", hash}, {"config", resolved}});
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  std::cout << "rows=" << rows.size() << " failed=" << failed << '\n';
  return 0;
}

int cmd_cachesim(const std::string& bundle, const std::string& assignment, const std::string& config,
                 const RunOverrides& ov, const std::vector<std::string>& capacity_tokens, std::size_t epochs,
                 const std::string& out) {
  auto d = load_bundle(bundle);
  auto a = load_assignment_for(d, assignment);
  json j = config.empty() ? json::object() : read_json_file(config);
  RunConfig base = run_config_from_json(j.value("run", j));
  ov.apply(base);
  Grid grid;
  grid.policies = {base.policy};
  grid.intra_probs = {base.sampler.intra_prob};
  grid.seeds = {base.seed};
  if (j.contains("policies") && !ov.policy) {
    grid.policies.clear();
    for (const auto& p : j.at("policies")) grid.policies.push_back(PartitionPolicy::parse(p.get<std::string>()));
  }
  if (j.contains("intra_probs") && !ov.intra_prob) grid.intra_probs = j.at("intra_probs").get<std::vector<double>>();
  if (j.contains("seeds") && !ov.seed) grid.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  epochs = epochs ? epochs : j.value("epochs", std::size_t{2});

  auto tokens = capacity_tokens;
  if (tokens.empty())
    for (const auto& c : j.value("capacities", json::array({"50%", "25%", "12.5%"}))) tokens.push_back(c.get<std::string>());
  std::vector<std::size_t> caps;
  for (const auto& t : tokens) caps.push_back(parse_capacity(t, d.num_nodes()));

  auto rows = run_cachesim(d, a, base, grid, caps, epochs, base.train.workers);
  json resolved = {{"run", to_json(base)},
                   {"policies", [&] {
                      json p = json::array();
                      for (const auto& x : grid.policies) p.push_back(x.name());
                      return p;
                    }()},
                   {"intra_probs", grid.intra_probs},
                   {"seeds", grid.seeds},
                   {"capacities", caps},
                   {"epochs", epochs},
                   {"dataset", hex64(dataset_fingerprint(d))},
                   {"assignment", hex64(assignment_fingerprint(a))}};
  const auto hash = hex64(config_hash(resolved));
  {
    auto f = open_output(out);
    write_cachesim_csv(f, rows, hash);
  }
  write_json_file(out + ".config.json", {{"config_hash", hash}, {"config", resolved}});
  std::cout << "rows=" << rows.size() << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Community-aware randomized mini-batching laboratory"};
  app.require_subcommand(1);

  std::string config, out, bundle, assignment;
  std::uint64_t seed = 0;
  double resolution = 1.0;
  std::size_t max_levels = 10, fixed_epochs = 0, epochs = 0;
  std::optional<std::size_t> capacity;
  std::vector<std::string> capacities;
  RunOverrides ov;

  auto* gen = app.add_subcommand("gen-sbm", "Generate a planted-partition dataset bundle");
  gen->add_option("--config", config, "SBM config JSON")->required();
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out", out, "Output bundle directory")->required();

  auto* det = app.add_subcommand("detect", "Louvain community detection");
  det->add_option("bundle", bundle, "Dataset bundle directory")->required();
  det->add_option("--resolution", resolution, "Modularity resolution")->capture_default_str();
  det->add_option("--seed", seed, "Visit-order seed");
  det->add_option("--max-levels", max_levels, "Aggregation level cap")->capture_default_str();
  det->add_option("--out", out, "Assignment file (default <bundle>/communities.txt)");

  auto* reo = app.add_subcommand("reorder", "Relabel nodes into community order");
  reo->add_option("bundle", bundle, "Dataset bundle directory")->required();
  reo->add_option("--assignment", assignment, "Assignment file")->required();
  reo->add_option("--out", out, "Output bundle directory")->required();

  auto* trn = app.add_subcommand("train", "Train one configuration");
  trn->add_option("bundle", bundle, "Dataset bundle directory")->required();
  trn->add_option("--assignment", assignment, "Assignment file")->required();
  trn->add_option("--config", config, "Run config JSON");
  trn->add_option("--capacity", capacity, "LRU feature-cache slots to simulate during training");
  trn->add_option("--out", out, "Output directory")->required();
  ov.add_to(trn);

  auto* swp = app.add_subcommand("sweep", "Run a policy x p x seed grid");
  swp->add_option("--config", config, "Experiment config JSON")->required();
  swp->add_option("--fixed-epochs", fixed_epochs, "Train exactly N epochs (no early stopping)");
  swp->add_option("--out", out, "Output CSV");
  RunOverrides sweep_ov;
  swp->add_option("--workers", sweep_ov.workers, "Cells run concurrently");
  swp->add_option("--max-epochs", sweep_ov.max_epochs, "Epoch cap");
  swp->add_option("--timing", sweep_ov.timing, "wall | off")->check(CLI::IsMember({"wall", "off"}));

  auto* cs = app.add_subcommand("cachesim", "LRU miss rate of feature accesses vs capacity");
  cs->add_option("bundle", bundle, "Dataset bundle directory")->required();
  cs->add_option("--assignment", assignment, "Assignment file")->required();
  cs->add_option("--config", config, "Run config JSON (may carry policies/intra_probs/seeds grids)");
  cs->add_option("--capacity", capacities, "Capacities: slots or percent of nodes, e.g. 50%,25%")->delimiter(',');
  cs->add_option("--epochs", epochs, "Epochs of accesses to replay (default 2)");
  cs->add_option("--out", out, "Output CSV")->required();
  RunOverrides cache_ov;
  cache_ov.add_to(cs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen) return cmd_gen_sbm(config, seed, out);
    if (*det) return cmd_detect(bundle, resolution, seed, max_levels, out);
    if (*reo) return cmd_reorder(bundle, assignment, out);
    if (*trn) return cmd_train(bundle, assignment, config, ov, capacity, out);
    if (*swp) return cmd_sweep(config, sweep_ov, fixed_epochs, out);
    if (*cs) return cmd_cachesim(bundle, assignment, config, cache_ov, capacities, epochs, out);
  } catch (const validation_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
