#include "mos/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "mos/composer.hpp"
#include "mos/errors.hpp"
#include "mos/rng.hpp"

namespace mos {

std::string_view to_string(TaskKind k) noexcept {
  return k == TaskKind::teacher_student_linear ? "teacher_student_linear"
                                               : "random_feature_regression";
}

std::optional<TaskKind> parse_task_kind(std::string_view name) noexcept {
  if (name == "teacher_student_linear" || name == "teacher") return TaskKind::teacher_student_linear;
  if (name == "random_feature_regression" || name == "random_features") {
    return TaskKind::random_feature_regression;
  }
  return std::nullopt;
}

std::string_view to_string(Optimizer o) noexcept { return o == Optimizer::sgd ? "sgd" : "adam"; }

std::optional<Optimizer> parse_optimizer(std::string_view name) noexcept {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  return std::nullopt;
}

LayerTypeSpec ToyTask::layer_type() const {
  return {"proj", options.width, options.width, options.depth};
}

namespace {

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = stddev * rng.normal();
  return m;
}

// Modified Gram-Schmidt over the rows of a Gaussian matrix.
Matrix random_orthogonal(Rng& rng, std::size_t n) {
  Matrix q = gaussian(rng, n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto qi = q.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      const auto qj = q.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += qi[c] * qj[c];
      for (std::size_t c = 0; c < n; ++c) qi[c] -= dot * qj[c];
    }
    double norm = 0.0;
    for (double v : qi) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : qi) v /= norm;
  }
  return q;
}

Matrix run_stack(const std::vector<Matrix>& weights, const Matrix& x) {
  Matrix z = x;
  for (const Matrix& w : weights) z = matmul(w, z);
  return z;
}

}  // namespace

ToyTask make_task(const TaskOptions& options) {
  if (options.num_samples == 0) throw ConfigError("toy task needs at least one sample");
  if (options.width == 0 || options.depth == 0) throw ConfigError("toy task needs positive dims");

  ToyTask task;
  task.options = options;
  Rng rng(options.seed);
  const std::size_t d = options.width, n = options.num_samples;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  for (std::size_t k = 0; k < options.depth; ++k) task.base_weights.push_back(random_orthogonal(rng, d));
  task.inputs = gaussian(rng, d, n, 1.0);

  if (options.kind == TaskKind::teacher_student_linear) {
    std::vector<Matrix> teacher;
    for (std::size_t k = 0; k < options.depth; ++k) {
      // Independent rank-t update per block with singular values of order
      // teacher_scale.
      const Matrix u = gaussian(rng, d, options.teacher_rank, 1.0);
      const Matrix v = gaussian(rng, options.teacher_rank, d, 1.0);
      task.teacher_deltas.push_back((options.teacher_scale / static_cast<double>(d)) * matmul(u, v));
      teacher.push_back(task.base_weights[k] + task.teacher_deltas.back());
    }
    task.targets = run_stack(teacher, task.inputs);
  } else {
    const Matrix g = gaussian(rng, d, d, inv_sqrt_d);
    const Matrix m = gaussian(rng, d, d, options.teacher_scale * inv_sqrt_d);
    Matrix features = matmul(g, task.inputs);
    for (double& v : features.data()) v = std::tanh(v);
    task.targets = run_stack(task.base_weights, task.inputs) + matmul(m, features);
  }
  if (options.noise_std > 0.0) {
    for (double& v : task.targets.data()) v += options.noise_std * rng.normal();
  }
  return task;
}

double loss_and_gradients(const AdapterState& state, const ToyTask& task, bool training, Rng* rng,
                          std::vector<LayerTypeGradient>* grads) {
  if (state.layer_types.size() != 1 || state.layer_types[0].spec != task.layer_type()) {
    throw ShapeError("adapter layer type does not match the toy task stack");
  }
  const std::size_t L = task.options.depth;
  std::vector<ComposedAdapter> adapters = precompose_all(state, 0);
  std::vector<ForwardTrace> traces;
  traces.reserve(L);

  const Matrix* z = &task.inputs;
  for (std::size_t k = 0; k < L; ++k) {
    traces.push_back(forward_batch(adapters[k], task.base_weights[k], *z, training, rng));
    z = &traces.back().output;
  }

  const double denom = static_cast<double>(task.targets.size());
  Matrix residual = *z - task.targets;
  double loss = 0.0;
  for (double v : residual.data()) loss += v * v;
  loss /= denom;

  if (grads != nullptr) {
    Matrix upstream = (2.0 / denom) * residual;
    std::vector<LayerGradients> per_layer(L);
    for (std::size_t k = L; k-- > 0;) {
      per_layer[k] = backward_layer(adapters[k], task.base_weights[k], traces[k], upstream);
      upstream = std::move(per_layer[k].dx);
    }
    const LayerTypeState& lt = state.layer_types[0];
    for (std::size_t k = 0; k < L; ++k) {
      scatter_to_pools(per_layer[k], lt.index_a[k], lt.index_b[k], adapters[k].row_scales,
                       (*grads)[0]);
    }
  }
  return loss;
}

double evaluate_loss(const AdapterState& state, const ToyTask& task) {
  return loss_and_gradients(state, task, false, nullptr, nullptr);
}

namespace {

class PoolOptimizer {
 public:
  PoolOptimizer(const TrainOptions& opts, const AdapterState& state)
      : opts_(opts), m_(zero_gradients(state)), v_(zero_gradients(state)) {}

  void step(AdapterState& state, const std::vector<LayerTypeGradient>& grads) {
    ++t_;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      update(state.layer_types[i].pool_a.data, grads[i].a.data, m_[i].a.data, v_[i].a.data);
      update(state.layer_types[i].pool_b.data, grads[i].b.data, m_[i].b.data, v_[i].b.data);
    }
    state.mark_pools_modified();
  }

 private:
  void update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v) const {
    auto p = param.data();
    const auto g = grad.data();
    if (opts_.optimizer == Optimizer::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= opts_.lr * g[i];
      return;
    }
    auto md = m.data();
    auto vd = v.data();
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      md[i] = opts_.beta1 * md[i] + (1.0 - opts_.beta1) * g[i];
      vd[i] = opts_.beta2 * vd[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      p[i] -= opts_.lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + opts_.epsilon);
    }
  }

  TrainOptions opts_;
  std::vector<LayerTypeGradient> m_;
  std::vector<LayerTypeGradient> v_;
  std::size_t t_ = 0;
};

}  // namespace

TrainResult train(AdapterState state, const ToyTask& task, const TrainOptions& options) {
  PoolOptimizer optimizer(options, state);
  Rng dropout_rng(options.seed);
  TrainResult result;
  result.loss_trace.reserve(options.steps);
  for (std::size_t step = 0; step < options.steps; ++step) {
    auto grads = zero_gradients(state);
    const double loss = loss_and_gradients(state, task, true, &dropout_rng, &grads);
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("loss became non-finite at step " + std::to_string(step) + " (" +
                             std::string(to_string(state.config.variant)) +
                             ", lr=" + std::to_string(options.lr) + ")");
    }
    result.loss_trace.push_back(loss);
    optimizer.step(state, grads);
  }
  result.final_loss = evaluate_loss(state, task);
  if (!std::isfinite(result.final_loss)) {
    throw TrainingDiverged("final loss is non-finite (" +
                           std::string(to_string(state.config.variant)) + ")");
  }
  result.state = std::move(state);
  return result;
}

std::vector<AblationVariant> ablation_variants(std::size_t equivalent_rank, std::size_t num_blocks,
                                               std::size_t rank, std::size_t shards_per_vector,
                                               std::size_t private_rank) {
  const std::size_t e = equivalent_rank;
  const MosConfig full = MosConfig::mixture_of_shards(e, rank, shards_per_vector, private_rank);
  MosConfig no_privatization = full;
  no_privatization.private_rank = 0;
  MosConfig no_sharding = full;
  no_sharding.shards_per_vector = 1;
  MosConfig no_dissociation = full;
  no_dissociation.tied_indices = true;
  return {
      {"lora", MosConfig::lora(e)},
      {"pure_sharing", MosConfig::pure_sharing(e, num_blocks)},
      {"random_scaling", MosConfig::random_scaling(e, num_blocks)},
      {"subset_selection", MosConfig::subset_selection(e, rank)},
      {"mos", full},
      {"mos-sp", no_privatization},
      {"mos-vs", no_sharding},
      {"mos-pd", no_dissociation},
  };
}

double AblationEntry::standard_error() const noexcept {
  return final_losses.empty() ? 0.0 : stddev / std::sqrt(static_cast<double>(final_losses.size()));
}

const AblationEntry& AblationReport::at(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw ConfigError("ablation report has no variant '" + std::string(name) + "'");
}

double pooled_standard_error(const AblationEntry& a, const AblationEntry& b) noexcept {
  const double sa = a.standard_error(), sb = b.standard_error();
  return std::sqrt(sa * sa + sb * sb);
}

AblationOptions desk_ablation_options() {
  AblationOptions o;
  o.task.teacher_rank = 8;
  o.train.optimizer = Optimizer::adam;
  o.train.lr = 1e-2;
  o.train.steps = 1500;
  for (std::uint64_t s = 0; s < 8; ++s) o.seeds.push_back(s);
  return o;
}

AblationReport ablation_suite(const AblationOptions& options) {
  if (options.seeds.size() < 8) throw ConfigError("ablation suite needs at least 8 seeds");
  const auto variants =
      ablation_variants(options.equivalent_rank, options.task.depth, options.rank,
                        options.shards_per_vector, options.private_rank);

  std::vector<ToyTask> tasks;
  for (std::uint64_t seed : options.seeds) {
    TaskOptions t = options.task;
    t.seed = seed;
    tasks.push_back(make_task(t));
  }
  const LayerTypeSpec spec = tasks.front().layer_type();

  AblationReport report;
  for (const auto& v : variants) {
    AblationEntry entry;
    entry.name = v.name;
    entry.config = v.config;
    entry.trainable_params = trainable_params(spec, v.config);
    entry.final_losses.resize(options.seeds.size());
    report.entries.push_back(std::move(entry));
  }

  // Independent (variant, seed) runs; each writes only its own slot.
  auto run_one = [&](std::size_t job) {
    const std::size_t vi = job / options.seeds.size(), si = job % options.seeds.size();
    MosConfig cfg = variants[vi].config;
    cfg.seed = options.seeds[si] * 7919 + 17;
    TrainOptions topts = options.train;
    topts.seed = cfg.seed;
    AdapterState state = init_state(cfg, {spec});
    report.entries[vi].final_losses[si] = train(std::move(state), tasks[si], topts).final_loss;
  };
  const std::size_t jobs = variants.size() * options.seeds.size();
  if (options.threads <= 1) {
    for (std::size_t j = 0; j < jobs; ++j) run_one(j);
  } else {
    std::vector<std::future<void>> workers;
    const std::size_t t = std::min<std::size_t>(options.threads, jobs);
    for (std::size_t w = 0; w < t; ++w) {
      workers.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t j = w; j < jobs; j += t) run_one(j);
      }));
    }
    for (auto& f : workers) f.get();
  }

  for (auto& e : report.entries) {
    const double n = static_cast<double>(e.final_losses.size());
    e.mean = std::accumulate(e.final_losses.begin(), e.final_losses.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : e.final_losses) ss += (x - e.mean) * (x - e.mean);
    e.stddev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  }
  return report;
}

}  // namespace mos
