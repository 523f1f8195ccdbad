#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "commrand/minibatch.hpp"
#include "commrand/random.hpp"
#include "commrand/tensor.hpp"
#include "commrand/types.hpp"

namespace commrand {

enum class Arch { gcn, sage_mean };

inline std::string to_string(Arch a) { return a == Arch::gcn ? "gcn" : "sage_mean"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "gcn" || s == "GCN") return Arch::gcn;
  if (s == "sage" || s == "sage_mean" || s == "SAGE_MEAN" || s == "graphsage") return Arch::sage_mean;
  throw validation_error("unknown architecture '" + s + "'");
}

struct ModelConfig {
  Arch arch = Arch::sage_mean;
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t in_dim = 0;
  std::size_t num_classes = 0;

  void validate() const {
    if (num_layers == 0) throw validation_error("model: num_layers must be >= 1");
    if (in_dim == 0 || num_classes == 0 || hidden_dim == 0)
      throw validation_error("model: dimensions must be positive");
  }

  std::size_t layer_in(std::size_t l) const { return l == 0 ? in_dim : hidden_dim; }
  std::size_t layer_out(std::size_t l) const { return l + 1 == num_layers ? num_classes : hidden_dim; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/**
 * Learnable tensors, flattened in layer order.
 *
 * GCN layer:  [W, b]             Z = A' H W + b
 * SAGE layer: [W_self, W_neigh, b]  Z = H_dst W_self + mean(H) W_neigh + b
 * Biases are stored as 1 x out matrices.
 */
template <typename T>
struct Parameters {
  ModelConfig config;
  std::vector<Matrix<T>> tensors;

  std::size_t per_layer() const noexcept { return config.arch == Arch::gcn ? 2 : 3; }

  Matrix<T>& weight(std::size_t l) { return tensors[l * per_layer()]; }
  const Matrix<T>& weight(std::size_t l) const { return tensors[l * per_layer()]; }
  Matrix<T>& weight_neigh(std::size_t l) { return tensors[l * per_layer() + 1]; }
  const Matrix<T>& weight_neigh(std::size_t l) const { return tensors[l * per_layer() + 1]; }
  Matrix<T>& bias(std::size_t l) { return tensors[l * per_layer() + per_layer() - 1]; }
  const Matrix<T>& bias(std::size_t l) const { return tensors[l * per_layer() + per_layer() - 1]; }

  static Parameters zeros(const ModelConfig& cfg) {
    cfg.validate();
    Parameters p;
    p.config = cfg;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const auto in = cfg.layer_in(l), out = cfg.layer_out(l);
      p.tensors.emplace_back(in, out);
      if (cfg.arch == Arch::sage_mean) p.tensors.emplace_back(in, out);
      p.tensors.emplace_back(1, out);
    }
    return p;
  }

  /// Xavier-uniform weights from a per-layer derived stream; zero biases.
  static Parameters xavier(const ModelConfig& cfg, std::uint64_t seed) {
    auto p = zeros(cfg);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      Rng rng(derive_seed({seed, 0x494e4954ULL, l}));
      const auto in = cfg.layer_in(l), out = cfg.layer_out(l);
      const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
      for (std::size_t t = 0; t + 1 < p.per_layer(); ++t)
        for (auto& w : p.tensors[l * p.per_layer() + t].flat()) w = static_cast<T>(rng.uniform(-bound, bound));
    }
    return p;
  }

  Parameters zeros_like() const {
    Parameters z;
    z.config = config;
    for (const auto& t : tensors) z.tensors.emplace_back(t.rows(), t.cols());
    return z;
  }

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out;
    out.config = config;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      for (auto x : t.flat())
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

/// Per-edge message weights aligned with Block::src_index.
template <typename T>
std::vector<T> normalize_adjacency(const Block& b, Arch arch) {
  std::vector<T> w(b.num_edges());
  for (std::size_t d = 0; d < b.num_dst(); ++d) {
    for (auto e = b.offsets[d]; e < b.offsets[d + 1]; ++e) {
      const auto s = b.src_index[e];
      if (arch == Arch::gcn)
        w[e] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(b.dst_degree[d]) * b.src_degree[s]));
      else
        w[e] = static_cast<T>(1.0 / static_cast<double>(b.dst_degree[d]));
    }
  }
  return w;
}

namespace detail {

// out[d] = sum_e w_e * h[src_e]
template <typename T>
Matrix<T> aggregate(const Block& b, std::span<const T> w, const Matrix<T>& h) {
  Matrix<T> out(b.num_dst(), h.cols());
  for (std::size_t d = 0; d < b.num_dst(); ++d) {
    auto o = out.row(d);
    for (auto e = b.offsets[d]; e < b.offsets[d + 1]; ++e) {
      auto hs = h.row(b.src_index[e]);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += w[e] * hs[j];
    }
  }
  return out;
}

// dh[src_e] += w_e * g[d]
template <typename T>
void aggregate_transpose(const Block& b, std::span<const T> w, const Matrix<T>& g, Matrix<T>& dh) {
  for (std::size_t d = 0; d < b.num_dst(); ++d) {
    auto gd = g.row(d);
    for (auto e = b.offsets[d]; e < b.offsets[d + 1]; ++e) {
      auto o = dh.row(b.src_index[e]);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += w[e] * gd[j];
    }
  }
}

template <typename T>
Matrix<T> prefix_rows(const Matrix<T>& m, std::size_t rows) {
  Matrix<T> out(rows, m.cols());
  std::copy_n(m.flat().begin(), rows * m.cols(), out.flat().begin());
  return out;
}

template <typename T>
void add_bias(Matrix<T>& z, const Matrix<T>& b) {
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b(0, j);
  }
}

} // namespace detail

template <typename T>
struct ForwardCache {
  std::vector<std::vector<T>> norm;  // per layer edge weights
  std::vector<Matrix<T>> inputs;     // H^l, rows = block l src
  std::vector<Matrix<T>> aggregated; // A'H (GCN) or mean(H) (SAGE), rows = block l dst
  std::vector<Matrix<T>> pre;        // Z^l
  Matrix<T> logits;
};

/// Runs every block in order; ReLU between layers, identity after the last.
template <typename T>
ForwardCache<T> forward(const Parameters<T>& params, const BatchSubgraph& sub, Matrix<T> x_in) {
  const auto& cfg = params.config;
  if (sub.blocks.size() != cfg.num_layers) throw validation_error("forward: block count != num_layers");
  if (x_in.rows() != sub.input_nodes.size()) throw validation_error("forward: feature rows != input nodes");
  if (x_in.cols() != cfg.in_dim) throw validation_error("forward: feature dim mismatch");

  ForwardCache<T> c;
  Matrix<T> h = std::move(x_in);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto& b = sub.blocks[l];
    if (h.rows() != b.num_src()) throw validation_error("forward: block chain mismatch");
    c.norm.push_back(normalize_adjacency<T>(b, cfg.arch));
    auto agg = detail::aggregate<T>(b, c.norm.back(), h);
    Matrix<T> z;
    if (cfg.arch == Arch::gcn) {
      linalg::matmul(agg, params.weight(l), z);
    } else {
      linalg::matmul(detail::prefix_rows(h, b.num_dst()), params.weight(l), z);
      linalg::matmul(agg, params.weight_neigh(l), z, true);
    }
    detail::add_bias(z, params.bias(l));
    c.inputs.push_back(std::move(h));
    c.aggregated.push_back(std::move(agg));
    h = z;
    if (l + 1 < cfg.num_layers)
      for (auto& x : h.flat()) x = std::max(x, T{0});
    c.pre.push_back(std::move(z));
  }
  c.logits = std::move(h);
  return c;
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
template <typename T>
std::pair<double, Matrix<T>> softmax_cross_entropy(const Matrix<T>& logits, std::span<const label_id> labels) {
  if (labels.size() != logits.rows()) throw validation_error("loss: label count != logit rows");
  if (logits.rows() == 0) throw validation_error("loss: empty batch");
  Matrix<T> grad(logits.rows(), logits.cols());
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) throw validation_error("loss: label out of range");
    auto z = logits.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (auto v : z) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (auto v : z) sum += std::exp(static_cast<double>(v) - mx);
    const double lse = mx + std::log(sum);
    loss += lse - static_cast<double>(z[y]);
    auto g = grad.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double prob = std::exp(static_cast<double>(z[j]) - lse);
      g[j] = static_cast<T>((prob - (static_cast<label_id>(j) == y ? 1.0 : 0.0)) * inv_n);
    }
  }
  return {loss * inv_n, std::move(grad)};
}

/**
 * Cross-entropy over the roots and reverse-mode gradients for every tensor.
 * The reported loss excludes the penalty; gradients include weight_decay * param.
 */
template <typename T>
std::pair<double, Parameters<T>> loss_and_backward(const Parameters<T>& params, const BatchSubgraph& sub,
                                                   const ForwardCache<T>& cache,
                                                   std::span<const label_id> root_labels, double weight_decay = 0.0) {
  const auto& cfg = params.config;
  auto [loss, dz] = softmax_cross_entropy(cache.logits, root_labels);
  auto grads = params.zeros_like();

  for (std::size_t l = cfg.num_layers; l-- > 0;) {
    const auto& b = sub.blocks[l];
    if (l + 1 < cfg.num_layers) {
      // dz currently holds dL/dH^{l+1}; apply the ReLU mask.
      auto zf = cache.pre[l].flat();
      auto gf = dz.flat();
      for (std::size_t i = 0; i < gf.size(); ++i)
        if (!(zf[i] > T{0})) gf[i] = T{0};
    }
    auto& gb = grads.bias(l);
    for (std::size_t i = 0; i < dz.rows(); ++i)
      for (std::size_t j = 0; j < dz.cols(); ++j) gb(0, j) += dz(i, j);

    Matrix<T> dh;
    if (cfg.arch == Arch::gcn) {
      linalg::matmul_tn(cache.aggregated[l], dz, grads.weight(l), true);
      if (l > 0) {
        Matrix<T> dagg;
        linalg::matmul_nt(dz, params.weight(l), dagg);
        dh = Matrix<T>(b.num_src(), cfg.layer_in(l));
        detail::aggregate_transpose<T>(b, cache.norm[l], dagg, dh);
      }
    } else {
      linalg::matmul_tn(detail::prefix_rows(cache.inputs[l], b.num_dst()), dz, grads.weight(l), true);
      linalg::matmul_tn(cache.aggregated[l], dz, grads.weight_neigh(l), true);
      if (l > 0) {
        Matrix<T> dself, dagg;
        linalg::matmul_nt(dz, params.weight(l), dself);
        linalg::matmul_nt(dz, params.weight_neigh(l), dagg);
        dh = Matrix<T>(b.num_src(), cfg.layer_in(l));
        std::copy(dself.flat().begin(), dself.flat().end(), dh.flat().begin());
        detail::aggregate_transpose<T>(b, cache.norm[l], dagg, dh);
      }
    }
    if (l > 0) dz = std::move(dh);
  }

  if (weight_decay != 0.0) {
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
      auto p = params.tensors[t].flat();
      auto g = grads.tensors[t].flat();
      for (std::size_t i = 0; i < p.size(); ++i) g[i] += static_cast<T>(weight_decay) * p[i];
    }
  }
  return {loss, std::move(grads)};
}

/// Adam with bias correction; moments live here, not in Parameters.
template <typename T>
class Adam {
public:
  explicit Adam(const Parameters<T>& shape, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(shape.zeros_like()), v_(shape.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Parameters<T>& params, const Parameters<T>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      auto p = params.tensors[k].flat();
      auto g = grads.tensors[k].flat();
      auto m = m_.tensors[k].flat();
      auto v = v_.tensors[k].flat();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
        const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + eps_));
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

private:
  Parameters<T> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Feature rows for the given nodes, converted to T.
template <typename T>
Matrix<T> gather_rows(const Matrix<float>& features, std::span<const node_id> nodes) {
  Matrix<T> out(nodes.size(), features.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto src = features.row(nodes[i]);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
  return out;
}

} // namespace commrand
