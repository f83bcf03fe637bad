#include "mos/gradient.hpp"

#include <algorithm>
#include <cmath>

#include "mos/errors.hpp"

namespace mos {

LayerGradients backward_layer(const ComposedAdapter& adapter, const Matrix& w0,
                              const ForwardTrace& trace, const Matrix& dy) {
  const std::size_t n = trace.input_used.cols();
  if (dy.rows() != adapter.b.rows() || dy.cols() != n || w0.rows() != dy.rows() ||
      w0.cols() != adapter.a.cols()) {
    throw ShapeError("backward_layer: upstream gradient shape disagrees with the forward trace");
  }
  const double s = adapter.alpha_over_r;
  LayerGradients g;
  g.db = s * matmul_nt(dy, trace.projected);
  const Matrix bt_dy = matmul_tn(adapter.b, dy);  // r x n
  g.da = s * matmul_nt(bt_dy, trace.input_used);

  Matrix through_adapter = matmul_tn(adapter.a, bt_dy);  // h x n
  if (!trace.dropout_scale.empty()) {
    auto v = through_adapter.data();
    auto m = trace.dropout_scale.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= m[i];
  }
  g.dx = matmul_tn(w0, dy);
  axpy(s, through_adapter, g.dx);
  return g;
}

LayerGradients backward_layer(const ComposedAdapter& adapter, const Matrix& w0,
                              std::span<const double> x, std::span<const double> dy) {
  const Matrix xm(x.size(), 1, Vector(x.begin(), x.end()));
  const Matrix dym(dy.size(), 1, Vector(dy.begin(), dy.end()));
  const ForwardTrace trace = forward_batch(adapter, w0, xm, false);
  return backward_layer(adapter, w0, trace, dym);
}

std::vector<LayerTypeGradient> zero_gradients(const AdapterState& state) {
  std::vector<LayerTypeGradient> out;
  out.reserve(state.layer_types.size());
  for (const auto& lt : state.layer_types) {
    out.push_back({{Side::a, Matrix(lt.pool_a.data.rows(), lt.pool_a.data.cols())},
                   {Side::b, Matrix(lt.pool_b.data.rows(), lt.pool_b.data.cols())}});
  }
  return out;
}

void scatter_to_pools(const LayerGradients& grads, const IndexMatrix& index_a,
                      const IndexMatrix& index_b, std::span<const double> row_scales,
                      LayerTypeGradient& into) {
  const std::size_t r = index_a.rank, l = index_a.shards_per_vector;
  if (grads.da.rows() != r || grads.db.cols() != r || index_b.rank != r ||
      index_b.shards_per_vector != l) {
    throw ShapeError("scatter_to_pools: gradient rank disagrees with index matrices");
  }
  if (!row_scales.empty() && row_scales.size() != r) {
    throw ShapeError("scatter_to_pools: row_scales length disagrees with rank");
  }
  const std::size_t len_a = into.a.data.cols(), len_b = into.b.data.cols();
  if (len_a * l != grads.da.cols() || len_b * l != grads.db.rows()) {
    throw ShapeError("scatter_to_pools: shard length disagrees with gradient width");
  }

  for (std::size_t i = 0; i < r; ++i) {
    const double scale = row_scales.empty() ? 1.0 : row_scales[i];
    const auto da_row = grads.da.row(i);
    for (std::size_t s = 0; s < l; ++s) {
      const std::uint32_t idx = index_a(s, i);
      if (idx >= into.a.data.rows()) throw RoutingError("scatter_to_pools: A index out of range");
      auto dst = into.a.data.row(idx);
      for (std::size_t j = 0; j < len_a; ++j) dst[j] += scale * da_row[s * len_a + j];
    }
    for (std::size_t s = 0; s < l; ++s) {
      const std::uint32_t idx = index_b(s, i);
      if (idx >= into.b.data.rows()) throw RoutingError("scatter_to_pools: B index out of range");
      auto dst = into.b.data.row(idx);
      for (std::size_t j = 0; j < len_b; ++j) dst[j] += grads.db(s * len_b + j, i);
    }
  }
}

std::vector<LayerTypeGradient> finite_diff_oracle(
    const std::function<double(const AdapterState&)>& loss, AdapterState& state, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_oracle: eps must be positive");
  std::vector<LayerTypeGradient> out = zero_gradients(state);
  for (std::size_t t = 0; t < state.layer_types.size(); ++t) {
    auto probe = [&](Matrix& params, Matrix& grad) {
      auto p = params.data();
      auto g = grad.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + eps;
        const double plus = loss(state);
        p[i] = saved - eps;
        const double minus = loss(state);
        p[i] = saved;
        g[i] = (plus - minus) / (2.0 * eps);
      }
    };
    probe(state.layer_types[t].pool_a.data, out[t].a.data);
    probe(state.layer_types[t].pool_b.data, out[t].b.data);
  }
  return out;
}

double max_relative_error(const std::vector<LayerTypeGradient>& analytic,
                          const std::vector<LayerTypeGradient>& numeric, double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: layer-type count");
  double worst = 0.0;
  auto compare = [&](const Matrix& a, const Matrix& n) {
    if (a.rows() != n.rows() || a.cols() != n.cols()) throw ShapeError("max_relative_error: shape");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double x = a.data()[i], y = n.data()[i];
      const double mag = std::max(std::abs(x), std::abs(y));
      if (mag < floor) continue;
      worst = std::max(worst, std::abs(x - y) / mag);
    }
  };
  for (std::size_t t = 0; t < analytic.size(); ++t) {
    compare(analytic[t].a.data, numeric[t].a.data);
    compare(analytic[t].b.data, numeric[t].b.data);
  }
  return worst;
}

}  // namespace mos
