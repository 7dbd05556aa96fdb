#pragma once

// Parameterized layers on top of the elementary operators. Layers are
// identified by a name prefix inside a ParameterStore:
//   linear    <prefix>.w (in x out), <prefix>.b (1 x out)
//   mlp       <prefix>.l0, <prefix>.l1, ... with relu between layers
//   attention <prefix>.q/.k/.v projections without bias, <prefix>.o with bias

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "occ4d/diff/ops.hpp"

namespace occ4d::diff {

using Rng = std::mt19937_64;

inline void init_linear(ParameterStore& store, const std::string& prefix, std::size_t in,
                        std::size_t out, Rng& rng, double gain = 1.0, bool bias = true) {
  std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(in)));
  Tensor w = Tensor::matrix(in, out);
  for (auto& v : w.values()) v = normal(rng);
  store.add(prefix + ".w", std::move(w));
  if (bias) store.add(prefix + ".b", Tensor::matrix(1, out));
}

/// x W (+ b when the store holds <prefix>.b).
inline Var apply_linear(Graph& g, ParameterStore& store, const std::string& prefix, Var x) {
  Var w = g.parameter(store, prefix + ".w");
  if (!store.contains(prefix + ".b")) return matmul(x, w);
  return linear(x, w, g.parameter(store, prefix + ".b"));
}

/// dims = {in, hidden..., out}.
inline void init_mlp(ParameterStore& store, const std::string& prefix,
                     const std::vector<std::size_t>& dims, Rng& rng) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    init_linear(store, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

inline std::size_t mlp_depth(const ParameterStore& store, const std::string& prefix) {
  std::size_t n = 0;
  while (store.contains(prefix + ".l" + std::to_string(n) + ".w")) ++n;
  return n;
}

inline Var apply_mlp(Graph& g, ParameterStore& store, const std::string& prefix, Var x) {
  const std::size_t depth = mlp_depth(store, prefix);
  if (depth == 0) {
    fail(ErrorKind::validation, "apply_mlp: no layers under '" + prefix + "'");
  }
  for (std::size_t i = 0; i < depth; ++i) {
    x = apply_linear(g, store, prefix + ".l" + std::to_string(i), x);
    if (i + 1 < depth) x = relu(x);
  }
  return x;
}

/// Zeroes the last layer of an MLP so its output starts at exactly zero.
inline void zero_last_layer(ParameterStore& store, const std::string& prefix) {
  const std::size_t depth = mlp_depth(store, prefix);
  const std::string last = prefix + ".l" + std::to_string(depth - 1);
  std::fill(store.value(last + ".w").values().begin(), store.value(last + ".w").values().end(), 0.0);
  std::fill(store.value(last + ".b").values().begin(), store.value(last + ".b").values().end(), 0.0);
}

inline void init_attention(ParameterStore& store, const std::string& prefix, std::size_t dim,
                           Rng& rng) {
  for (const char* p : {".q", ".k", ".v"}) {
    init_linear(store, prefix + p, dim, dim, rng, 1.0, false);
  }
  init_linear(store, prefix + ".o", dim, dim, rng);
}

/// Multi-head scaled dot-product attention: queries (n x D) attend over
/// keys/values (m x D); heads are concatenated and projected by <prefix>.o.
inline Var mh_attention(Graph& g, ParameterStore& store, const std::string& prefix, Var queries,
                        Var keys, Var values, std::size_t heads) {
  detail::require_matrix(queries, "mh_attention");
  detail::require_matrix(keys, "mh_attention");
  detail::require_matrix(values, "mh_attention");
  const std::size_t dim = queries.cols();
  if (heads == 0 || dim % heads != 0) {
    fail(ErrorKind::shape, "mh_attention: feature dim " + std::to_string(dim) +
                               " not divisible by " + std::to_string(heads) + " heads");
  }
  if (keys.cols() != dim || values.cols() != dim || keys.rows() != values.rows()) {
    fail(ErrorKind::shape, "mh_attention: incompatible shapes q" + shape_str(queries.shape()) +
                               " k" + shape_str(keys.shape()) + " v" + shape_str(values.shape()));
  }
  const Var q = apply_linear(g, store, prefix + ".q", queries);
  const Var k = apply_linear(g, store, prefix + ".k", keys);
  const Var v = apply_linear(g, store, prefix + ".v", values);
  const std::size_t head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * head_dim, e = b + head_dim;
    Var qh = heads == 1 ? q : columns(q, b, e);
    Var kh = heads == 1 ? k : columns(k, b, e);
    Var vh = heads == 1 ? v : columns(v, b, e);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    outs.push_back(matmul(softmax(scores, 1), vh));
  }
  Var joined = heads == 1 ? outs.front() : concat_cols(outs);
  return apply_linear(g, store, prefix + ".o", joined);
}

}  // namespace occ4d::diff
