#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mos/composer.hpp"
#include "mos/matrix.hpp"
#include "mos/pool.hpp"

namespace mos {

// Gradients of one block with respect to its composed matrices and input.
struct LayerGradients {
  Matrix da;  // r x h
  Matrix db;  // o x r
  Matrix dx;  // h x n, includes the W0^T path
};

// dB = (a/r) dY (A X~)^T,  dA = (a/r) (B^T dY) X~^T,
// dX = W0^T dY + (a/r) mask * (A^T B^T dY).
// X~ and the dropout mask are replayed from `trace`.
LayerGradients backward_layer(const ComposedAdapter& adapter, const Matrix& w0,
                              const ForwardTrace& trace, const Matrix& dy);

// Single-sample convenience form (no dropout).
LayerGradients backward_layer(const ComposedAdapter& adapter, const Matrix& w0,
                              std::span<const double> x, std::span<const double> dy);

struct PoolGradient {
  Side side = Side::a;
  Matrix data;  // congruent to ShardPool::data
};

struct LayerTypeGradient {
  PoolGradient a;
  PoolGradient b;
};

// One zero gradient per layer type, shaped like the state's pools.
std::vector<LayerTypeGradient> zero_gradients(const AdapterState& state);

// Scatter-add (the adjoint of compose's gather): every shard slice of dA/dB
// is added to the pool row its index names. `row_scales` undoes folded
// random scaling (pass the adapter's row_scales). Accumulation order is
// fixed: rank ascending, then shard position ascending.
void scatter_to_pools(const LayerGradients& grads, const IndexMatrix& index_a,
                      const IndexMatrix& index_b, std::span<const double> row_scales,
                      LayerTypeGradient& into);

// Central differences (loss(p + eps) - loss(p - eps)) / (2 eps) for every
// pool entry of every layer type. `state` is perturbed in place and restored.
std::vector<LayerTypeGradient> finite_diff_oracle(
    const std::function<double(const AdapterState&)>& loss, AdapterState& state, double eps);

// max |a - n| / max(|a|, |n|) over all entries; pairs with both magnitudes
// below `floor` count as agreeing.
double max_relative_error(const std::vector<LayerTypeGradient>& analytic,
                          const std::vector<LayerTypeGradient>& numeric, double floor = 1e-9);

}  // namespace mos
