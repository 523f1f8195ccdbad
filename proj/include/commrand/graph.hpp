#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "commrand/types.hpp"

namespace commrand {

/**
 * Immutable adjacency in compressed sparse row form.
 *
 * Rows are sorted and duplicate-free, so membership tests are a binary
 * search. Undirected graphs are stored with both directions present; a
 * self-loop occupies a single entry in its row.
 */
class Graph {
public:
  Graph() : row_offsets_{0} {}

  /// Adopts pre-built CSR arrays after checking the canonical-form invariants.
  Graph(std::vector<edge_index> row_offsets, std::vector<node_id> col_indices)
      : row_offsets_(std::move(row_offsets)), col_indices_(std::move(col_indices)) {
    validate();
  }

  /// Builds canonical CSR from an arbitrary edge list. Duplicates collapse.
  static Graph from_edges(std::size_t num_nodes, std::vector<std::pair<node_id, node_id>> edges,
                          bool symmetrize) {
    for (auto [u, v] : edges) {
      if (u >= num_nodes || v >= num_nodes)
        throw validation_error("edge endpoint out of range");
    }
    if (symmetrize) {
      const auto n = edges.size();
      edges.reserve(2 * n);
      for (std::size_t i = 0; i < n; ++i) {
        auto [u, v] = edges[i];
        if (u != v) edges.emplace_back(v, u);
      }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    std::vector<edge_index> offsets(num_nodes + 1, 0);
    std::vector<node_id> cols;
    cols.reserve(edges.size());
    for (auto [u, v] : edges) {
      ++offsets[u + 1];
      cols.push_back(v);
    }
    for (std::size_t i = 0; i < num_nodes; ++i) offsets[i + 1] += offsets[i];
    return Graph(std::move(offsets), std::move(cols));
  }

  std::size_t num_nodes() const noexcept { return row_offsets_.size() - 1; }
  std::size_t num_edges() const noexcept { return col_indices_.size(); }

  double average_degree() const noexcept {
    return num_nodes() ? static_cast<double>(num_edges()) / static_cast<double>(num_nodes()) : 0.0;
  }

  std::size_t degree(node_id v) const {
    check(v);
    return static_cast<std::size_t>(row_offsets_[v + 1] - row_offsets_[v]);
  }

  std::span<const node_id> neighbors(node_id v) const {
    check(v);
    return {col_indices_.data() + row_offsets_[v],
            static_cast<std::size_t>(row_offsets_[v + 1] - row_offsets_[v])};
  }

  bool has_edge(node_id u, node_id v) const {
    auto row = neighbors(u);
    return std::binary_search(row.begin(), row.end(), v);
  }

  /// True when every edge u->v has its reverse v->u.
  bool is_symmetric() const {
    for (node_id u = 0; u < num_nodes(); ++u) {
      for (node_id v : neighbors(u)) {
        if (!has_edge(v, u)) return false;
      }
    }
    return true;
  }

  std::span<const edge_index> row_offsets() const noexcept { return row_offsets_; }
  std::span<const node_id> col_indices() const noexcept { return col_indices_; }

  friend bool operator==(const Graph&, const Graph&) = default;

private:
  void check(node_id v) const {
    if (v >= num_nodes()) throw std::out_of_range("node id " + std::to_string(v) + " out of range");
  }

  void validate() const {
    if (row_offsets_.empty() || row_offsets_.front() != 0)
      throw validation_error("row_offsets must start at 0");
    if (row_offsets_.back() != col_indices_.size())
      throw validation_error("row_offsets must end at num_edges");
    const auto n = num_nodes();
    for (std::size_t v = 0; v < n; ++v) {
      if (row_offsets_[v + 1] < row_offsets_[v])
        throw validation_error("row_offsets must be non-decreasing");
      for (auto e = row_offsets_[v]; e < row_offsets_[v + 1]; ++e) {
        if (col_indices_[e] >= n) throw validation_error("column index out of range");
        if (e > row_offsets_[v] && col_indices_[e] <= col_indices_[e - 1])
          throw validation_error("row entries must be strictly increasing");
      }
    }
  }

  std::vector<edge_index> row_offsets_;
  std::vector<node_id> col_indices_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

// Splits on blanks; returns false if the line has no tokens.
inline std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const auto start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename Int>
Int parse_int(std::string_view tok, std::size_t line_no) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw parse_error("invalid integer '" + std::string(tok) + "'", line_no);
  if (value < 0) throw parse_error("negative id '" + std::string(tok) + "'", line_no);
  if (static_cast<unsigned long long>(value) > std::numeric_limits<Int>::max())
    throw parse_error("id too large '" + std::string(tok) + "'", line_no);
  return static_cast<Int>(value);
}

} // namespace detail

/// Parses "u v" lines; '#' starts a comment line. Node count is max id + 1.
inline Graph parse_edge_list(std::istream& in, bool symmetrize, std::size_t min_nodes = 0) {
  std::vector<std::pair<node_id, node_id>> edges;
  std::size_t n = min_nodes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto toks = detail::tokens(body);
    if (toks.size() != 2) throw parse_error("expected two node ids", line_no);
    auto u = detail::parse_int<node_id>(toks[0], line_no);
    auto v = detail::parse_int<node_id>(toks[1], line_no);
    n = std::max<std::size_t>(n, std::max(u, v) + std::size_t{1});
    edges.emplace_back(u, v);
  }
  return Graph::from_edges(n, std::move(edges), symmetrize);
}

inline Graph load_edge_list(const std::string& path, bool symmetrize, std::size_t min_nodes = 0) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  return parse_edge_list(in, symmetrize, min_nodes);
}

/// Writes one "u v" line per edge. With `undirected`, only u <= v is written.
inline void write_edge_list(std::ostream& out, const Graph& g, bool undirected) {
  for (node_id u = 0; u < g.num_nodes(); ++u) {
    for (node_id v : g.neighbors(u)) {
      if (undirected && v < u) continue;
      out << u << ' ' << v << '\n';
    }
  }
}

} // namespace commrand
