#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mos/config.hpp"
#include "mos/matrix.hpp"
#include "mos/pool.hpp"
#include "mos/rng.hpp"

namespace mos {

// Materialized low-rank pair for one block of one layer type.
// Row i of `a` is the concatenation of the l pool shards named by column i
// of the side-A index matrix; column i of `b` likewise for side B.
struct ComposedAdapter {
  std::string layer_type;
  std::size_t layer = 0;
  Matrix a;  // r x h
  Matrix b;  // o x r
  double alpha_over_r = 1.0;
  double dropout = 0.0;
  Variant variant = Variant::mos;
  // Per-rank factors already folded into `a`; empty when unscaled.
  Vector row_scales;
  std::uint64_t pool_version = 0;

  std::size_t rank() const noexcept { return a.rows(); }
  bool operator==(const ComposedAdapter&) const = default;
};

// Pure gather over the pools; never applies random scaling.
ComposedAdapter compose(const LayerTypeState& lt, std::size_t layer, const MosConfig& cfg,
                        std::uint64_t pool_version = 0);

// Multiplies row i of A by s_i, i.e. scales the i-th outer-product term.
ComposedAdapter apply_random_scaling(const ComposedAdapter& adapter, const ScalingVector& scalars);

// compose() followed by the variant's frozen scaling, if any. This is what
// training and serving use.
ComposedAdapter compose_layer(const AdapterState& state, std::size_t type_index,
                              std::size_t layer);

// All blocks of one layer type, composed concurrently when `threads` > 1.
// Bit-identical to calling compose_layer block by block.
std::vector<ComposedAdapter> precompose_all(const AdapterState& state, std::size_t type_index,
                                            unsigned threads = 1);

bool is_stale(const ComposedAdapter& adapter, const AdapterState& state) noexcept;

// (alpha / r) B A, shape o x h.
Matrix delta_w(const ComposedAdapter& adapter);

Matrix merge(const ComposedAdapter& adapter, const Matrix& w0);

// Saved activations of one forward call, replayed by the backward pass.
// Columns are samples.
struct ForwardTrace {
  Matrix output;      // o x n
  Matrix input_used;  // h x n, after dropout
  Matrix dropout_scale;  // h x n, 0 or 1/(1-p); empty when no dropout was applied
  Matrix projected;   // r x n, A * input_used
};

// Y = W0 X + (alpha/r) B A dropout(X). Dropout only when `training` and the
// adapter's rate is positive; the mask is drawn from `rng`.
ForwardTrace forward_batch(const ComposedAdapter& adapter, const Matrix& w0, const Matrix& x,
                           bool training, Rng* rng = nullptr);

Vector forward(const ComposedAdapter& adapter, const Matrix& w0, std::span<const double> x,
               bool training = false, Rng* rng = nullptr);

}  // namespace mos
