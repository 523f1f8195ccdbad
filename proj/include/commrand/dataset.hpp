#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "commrand/graph.hpp"
#include "commrand/tensor.hpp"
#include "commrand/types.hpp"

namespace commrand {

/// A graph plus per-node features, labels and disjoint train/val/test splits.
struct Dataset {
  Graph graph;
  Matrix<float> features;      // num_nodes x F
  std::vector<label_id> labels; // kUnlabeled for unlabeled nodes
  std::vector<node_id> train;   // sorted ascending
  std::vector<node_id> val;
  std::vector<node_id> test;

  std::size_t num_nodes() const noexcept { return graph.num_nodes(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }

  std::size_t num_classes() const {
    label_id hi = -1;
    for (auto l : labels) hi = std::max(hi, l);
    return static_cast<std::size_t>(hi + 1);
  }

  void validate() const {
    const auto n = num_nodes();
    if (features.rows() != n) throw validation_error("feature rows must equal num_nodes");
    if (labels.size() != n) throw validation_error("label count must equal num_nodes");
    std::vector<std::uint8_t> seen(n, 0);
    auto mark = [&](const std::vector<node_id>& mask, std::uint8_t bit, bool need_label) {
      for (auto v : mask) {
        if (v >= n) throw validation_error("mask node out of range");
        if (seen[v]) throw validation_error("train/val/test masks must be disjoint");
        seen[v] = bit;
        if (need_label && labels[v] < 0) throw validation_error("train/val node without label");
      }
    };
    mark(train, 1, true);
    mark(val, 2, true);
    mark(test, 3, false);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws unless `perm` is a bijection on [0, n).
inline void check_permutation(std::span<const node_id> perm, std::size_t n) {
  if (perm.size() != n) throw validation_error("permutation size must equal num_nodes");
  std::vector<bool> hit(n, false);
  for (auto p : perm) {
    if (p >= n || hit[p]) throw validation_error("permutation is not a bijection");
    hit[p] = true;
  }
}

inline std::vector<node_id> invert_permutation(std::span<const node_id> perm) {
  check_permutation(perm, perm.size());
  std::vector<node_id> inv(perm.size());
  for (std::size_t u = 0; u < perm.size(); ++u) inv[perm[u]] = static_cast<node_id>(u);
  return inv;
}

/// Renames node u to perm[u] throughout a graph.
inline Graph permute_graph(const Graph& g, std::span<const node_id> perm) {
  check_permutation(perm, g.num_nodes());
  std::vector<std::pair<node_id, node_id>> edges;
  edges.reserve(g.num_edges());
  for (node_id u = 0; u < g.num_nodes(); ++u) {
    for (node_id v : g.neighbors(u)) edges.emplace_back(perm[u], perm[v]);
  }
  return Graph::from_edges(g.num_nodes(), std::move(edges), false);
}

/// Renames node u to perm[u] in the adjacency, features, labels and masks.
inline Dataset apply_permutation(const Dataset& d, std::span<const node_id> perm) {
  check_permutation(perm, d.num_nodes());
  Dataset out;
  out.graph = permute_graph(d.graph, perm);
  out.features = Matrix<float>(d.features.rows(), d.features.cols());
  out.labels.assign(d.labels.size(), kUnlabeled);
  for (std::size_t u = 0; u < d.num_nodes(); ++u) {
    std::copy_n(d.features.row(u).begin(), d.features.cols(), out.features.row(perm[u]).begin());
    out.labels[perm[u]] = d.labels[u];
  }
  auto remap = [&](const std::vector<node_id>& mask) {
    std::vector<node_id> m;
    m.reserve(mask.size());
    for (auto v : mask) m.push_back(perm[v]);
    std::sort(m.begin(), m.end());
    return m;
  };
  out.train = remap(d.train);
  out.val = remap(d.val);
  out.test = remap(d.test);
  return out;
}

// ---------------------------------------------------------------------------
// Bundle directory:
//   edges.txt     "u v" per undirected edge (u <= v)
//   features.bin  u32 rows, u32 cols, then rows*cols float32, all little-endian
//   labels.txt    one integer per line, -1 for unlabeled
//   train.txt / val.txt / test.txt   one node id per line

namespace detail {

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw parse_error("truncated binary data");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return value;
}

inline void put_f32(std::ostream& out, float x) { put_le(out, std::bit_cast<std::uint32_t>(x)); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
  if (!out) throw io_error("cannot write " + p.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw io_error("cannot open " + p.string());
  return in;
}

inline std::vector<long long> read_int_lines(const std::filesystem::path& p, bool allow_negative) {
  auto in = open_in(p);
  std::vector<long long> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
    if (ec != std::errc{} || ptr != body.data() + body.size())
      throw parse_error(p.filename().string() + ": invalid integer", line_no);
    if (v < 0 && !allow_negative) throw parse_error(p.filename().string() + ": negative id", line_no);
    out.push_back(v);
  }
  return out;
}

} // namespace detail

inline void write_features(const std::filesystem::path& p, const Matrix<float>& x) {
  auto out = detail::open_out(p, true);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(x.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(x.cols()));
  for (float v : x.flat()) detail::put_f32(out, v);
}

inline Matrix<float> read_features(const std::filesystem::path& p) {
  auto in = detail::open_in(p, true);
  const auto rows = detail::get_le<std::uint32_t>(in);
  const auto cols = detail::get_le<std::uint32_t>(in);
  Matrix<float> x(rows, cols);
  for (auto& v : x.flat()) v = detail::get_f32(in);
  if (in.peek() != std::char_traits<char>::eof()) throw parse_error("trailing bytes in features file");
  return x;
}

inline void save_bundle(const std::filesystem::path& dir, const Dataset& d) {
  d.validate();
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_out(dir / "edges.txt");
    write_edge_list(out, d.graph, true);
  }
  write_features(dir / "features.bin", d.features);
  {
    auto out = detail::open_out(dir / "labels.txt");
    for (auto l : d.labels) out << l << '\n';
  }
  auto write_mask = [&](const char* name, const std::vector<node_id>& mask) {
    auto out = detail::open_out(dir / name);
    for (auto v : mask) out << v << '\n';
  };
  write_mask("train.txt", d.train);
  write_mask("val.txt", d.val);
  write_mask("test.txt", d.test);
}

/// Loads a bundle; the edge list is always symmetrized.
inline Dataset load_bundle(const std::filesystem::path& dir) {
  Dataset d;
  d.features = read_features(dir / "features.bin");
  const auto n = d.features.rows();
  d.graph = load_edge_list((dir / "edges.txt").string(), true, n);
  if (d.graph.num_nodes() != n) throw validation_error("edge list references nodes beyond feature rows");
  for (auto l : detail::read_int_lines(dir / "labels.txt", true)) {
    if (l < kUnlabeled) throw parse_error("labels.txt: label below -1");
    d.labels.push_back(static_cast<label_id>(l));
  }
  auto read_mask = [&](const char* name) {
    std::vector<node_id> m;
    for (auto v : detail::read_int_lines(dir / name, false)) m.push_back(static_cast<node_id>(v));
    std::sort(m.begin(), m.end());
    return m;
  };
  d.train = read_mask("train.txt");
  d.val = read_mask("val.txt");
  d.test = read_mask("test.txt");
  d.validate();
  return d;
}

} // namespace commrand
