#include "mos/composer.hpp"

#include <algorithm>
#include <future>
#include <string>

#include "mos/errors.hpp"

namespace mos {

namespace {

void check_shard(const ShardPool& pool, std::uint32_t idx, std::size_t layer) {
  if (idx >= pool.num_shards()) {
    throw RoutingError("layer " + std::to_string(layer) + ": index " + std::to_string(idx) +
                       " outside pool of " + std::to_string(pool.num_shards()) + " shards");
  }
}

void check_index_shape(const IndexMatrix& m, const MosConfig& cfg, std::size_t layer) {
  if (m.shards_per_vector != cfg.shards_per_vector || m.rank != cfg.rank ||
      m.entries.size() != cfg.shards_per_vector * cfg.rank) {
    throw RoutingError("layer " + std::to_string(layer) + ": index matrix shape disagrees with config");
  }
}

}  // namespace

ComposedAdapter compose(const LayerTypeState& lt, std::size_t layer, const MosConfig& cfg,
                        std::uint64_t pool_version) {
  if (layer >= lt.index_a.size() || layer >= lt.index_b.size()) {
    throw RoutingError("layer " + std::to_string(layer) + " out of range for '" + lt.spec.name + "'");
  }
  const IndexMatrix& ia = lt.index_a[layer];
  const IndexMatrix& ib = lt.index_b[layer];
  check_index_shape(ia, cfg, layer);
  check_index_shape(ib, cfg, layer);

  const std::size_t r = cfg.rank, l = cfg.shards_per_vector;
  const std::size_t len_a = lt.pool_a.shard_len(), len_b = lt.pool_b.shard_len();
  if (len_a * l != lt.spec.in_dim || len_b * l != lt.spec.out_dim) {
    throw RoutingError("pool shard length disagrees with layer dims for '" + lt.spec.name + "'");
  }

  ComposedAdapter out;
  out.layer_type = lt.spec.name;
  out.layer = layer;
  out.a = Matrix(r, lt.spec.in_dim);
  out.b = Matrix(lt.spec.out_dim, r);
  out.alpha_over_r = cfg.scaling();
  out.dropout = cfg.dropout;
  out.variant = cfg.variant;
  out.pool_version = pool_version;

  for (std::size_t i = 0; i < r; ++i) {
    auto a_row = out.a.row(i);
    for (std::size_t s = 0; s < l; ++s) {
      const std::uint32_t idx = ia(s, i);
      check_shard(lt.pool_a, idx, layer);
      const auto shard = lt.pool_a.data.row(idx);
      std::copy(shard.begin(), shard.end(), a_row.begin() + static_cast<std::ptrdiff_t>(s * len_a));
    }
    for (std::size_t s = 0; s < l; ++s) {
      const std::uint32_t idx = ib(s, i);
      check_shard(lt.pool_b, idx, layer);
      const auto shard = lt.pool_b.data.row(idx);
      for (std::size_t j = 0; j < len_b; ++j) out.b(s * len_b + j, i) = shard[j];
    }
  }
  return out;
}

ComposedAdapter apply_random_scaling(const ComposedAdapter& adapter, const ScalingVector& scalars) {
  if (scalars.scalars.size() != adapter.rank()) {
    throw ShapeError("random scaling: " + std::to_string(scalars.scalars.size()) +
                     " scalars for rank " + std::to_string(adapter.rank()));
  }
  ComposedAdapter out = adapter;
  for (std::size_t i = 0; i < out.rank(); ++i)
    for (double& v : out.a.row(i)) v *= scalars.scalars[i];
  if (out.row_scales.empty()) {
    out.row_scales = scalars.scalars;
  } else {
    for (std::size_t i = 0; i < out.rank(); ++i) out.row_scales[i] *= scalars.scalars[i];
  }
  return out;
}

ComposedAdapter compose_layer(const AdapterState& state, std::size_t type_index,
                              std::size_t layer) {
  if (type_index >= state.layer_types.size()) throw RoutingError("layer type index out of range");
  const LayerTypeState& lt = state.layer_types[type_index];
  ComposedAdapter out = compose(lt, layer, state.config, state.version);
  if (state.config.variant == Variant::random_scaling) {
    if (layer >= lt.scaling.size()) throw RoutingError("missing scaling vector for layer");
    out = apply_random_scaling(out, lt.scaling[layer]);
  }
  return out;
}

std::vector<ComposedAdapter> precompose_all(const AdapterState& state, std::size_t type_index,
                                            unsigned threads) {
  if (type_index >= state.layer_types.size()) throw RoutingError("layer type index out of range");
  const std::size_t L = state.layer_types[type_index].spec.num_blocks;
  std::vector<ComposedAdapter> out(L);
  if (threads <= 1) {
    for (std::size_t k = 0; k < L; ++k) out[k] = compose_layer(state, type_index, k);
    return out;
  }
  // Static striping: worker w composes blocks w, w+T, w+2T, ...
  std::vector<std::future<void>> workers;
  const std::size_t t = std::min<std::size_t>(threads, L);
  for (std::size_t w = 0; w < t; ++w) {
    workers.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t k = w; k < L; k += t) out[k] = compose_layer(state, type_index, k);
    }));
  }
  for (auto& f : workers) f.get();
  return out;
}

bool is_stale(const ComposedAdapter& adapter, const AdapterState& state) noexcept {
  return adapter.pool_version != state.version;
}

Matrix delta_w(const ComposedAdapter& adapter) {
  return adapter.alpha_over_r * matmul(adapter.b, adapter.a);
}

Matrix merge(const ComposedAdapter& adapter, const Matrix& w0) {
  if (w0.rows() != adapter.b.rows() || w0.cols() != adapter.a.cols()) {
    throw ShapeError("merge: W0 is " + std::to_string(w0.rows()) + "x" + std::to_string(w0.cols()) +
                     ", adapter is " + std::to_string(adapter.b.rows()) + "x" +
                     std::to_string(adapter.a.cols()));
  }
  return w0 + delta_w(adapter);
}

ForwardTrace forward_batch(const ComposedAdapter& adapter, const Matrix& w0, const Matrix& x,
                           bool training, Rng* rng) {
  if (w0.rows() != adapter.b.rows() || w0.cols() != adapter.a.cols() || x.rows() != w0.cols()) {
    throw ShapeError("forward: W0 " + std::to_string(w0.rows()) + "x" + std::to_string(w0.cols()) +
                     ", input has " + std::to_string(x.rows()) + " features, adapter expects " +
                     std::to_string(adapter.a.cols()));
  }
  ForwardTrace trace;
  trace.input_used = x;
  if (training && adapter.dropout > 0.0) {
    if (rng == nullptr) throw DomainError("forward: dropout in training mode needs an rng");
    const double keep_scale = 1.0 / (1.0 - adapter.dropout);
    trace.dropout_scale = Matrix(x.rows(), x.cols());
    auto scale = trace.dropout_scale.data();
    auto used = trace.input_used.data();
    for (std::size_t i = 0; i < used.size(); ++i) {
      scale[i] = rng->uniform01() < adapter.dropout ? 0.0 : keep_scale;
      used[i] *= scale[i];
    }
  }
  trace.projected = matmul(adapter.a, trace.input_used);
  trace.output = matmul(w0, x);
  axpy(adapter.alpha_over_r, matmul(adapter.b, trace.projected), trace.output);
  return trace;
}

Vector forward(const ComposedAdapter& adapter, const Matrix& w0, std::span<const double> x,
               bool training, Rng* rng) {
  const Matrix column(x.size(), 1, Vector(x.begin(), x.end()));
  ForwardTrace trace = forward_batch(adapter, w0, column, training, rng);
  const auto y = trace.output.data();
  return Vector(y.begin(), y.end());
}

}  // namespace mos
