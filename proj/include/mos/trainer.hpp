#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mos/config.hpp"
#include "mos/gradient.hpp"
#include "mos/matrix.hpp"
#include "mos/pool.hpp"

namespace mos {

enum class TaskKind { teacher_student_linear, random_feature_regression };

std::string_view to_string(TaskKind k) noexcept;
std::optional<TaskKind> parse_task_kind(std::string_view name) noexcept;

struct TaskOptions {
  TaskKind kind = TaskKind::teacher_student_linear;
  std::size_t width = 16;       // h = o for every block
  std::size_t depth = 4;        // L
  std::size_t num_samples = 256;
  double noise_std = 0.0;
  std::size_t teacher_rank = 2;  // rank of each block's teacher update
  double teacher_scale = 1.0;
  std::uint64_t seed = 0;
};

// A frozen stack of `depth` square linear blocks and a regression target.
// Columns of `inputs` / `targets` are samples.
struct ToyTask {
  TaskOptions options;
  std::vector<Matrix> base_weights;    // W0 per block, orthogonal
  std::vector<Matrix> teacher_deltas;  // empty for random_feature_regression
  Matrix inputs;
  Matrix targets;

  LayerTypeSpec layer_type() const;
};

// Deterministic in options.seed. Throws ConfigError for empty tasks.
ToyTask make_task(const TaskOptions& options);

enum class Optimizer { sgd, adam };

std::string_view to_string(Optimizer o) noexcept;
std::optional<Optimizer> parse_optimizer(std::string_view name) noexcept;

struct TrainOptions {
  Optimizer optimizer = Optimizer::adam;
  double lr = 1e-3;
  std::size_t steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;  // dropout stream
};

struct TrainResult {
  AdapterState state;
  Vector loss_trace;  // loss before each update
  double final_loss = 0.0;
};

// Mean squared error of the adapted stack over all samples and outputs.
// With `grads` the pool gradients are accumulated into it (layer ascending).
double loss_and_gradients(const AdapterState& state, const ToyTask& task, bool training, Rng* rng,
                          std::vector<LayerTypeGradient>* grads);

double evaluate_loss(const AdapterState& state, const ToyTask& task);

// Only pool data changes; routing, scalars and masks stay frozen. Throws
// TrainingDiverged when the loss turns non-finite.
TrainResult train(AdapterState state, const ToyTask& task, const TrainOptions& options);

struct AblationVariant {
  std::string name;
  MosConfig config;
};

// The eight budget-matched configurations:
// lora, pure_sharing, random_scaling, subset_selection, mos, mos-sp, mos-vs, mos-pd.
std::vector<AblationVariant> ablation_variants(std::size_t equivalent_rank, std::size_t num_blocks,
                                               std::size_t rank, std::size_t shards_per_vector,
                                               std::size_t private_rank);

struct AblationOptions {
  TaskOptions task;
  TrainOptions train;
  std::size_t equivalent_rank = 2;
  std::size_t rank = 4;  // shared by subset_selection and the mos family
  std::size_t shards_per_vector = 2;
  std::size_t private_rank = 1;
  std::vector<std::uint64_t> seeds;
  unsigned threads = 1;
};

struct AblationEntry {
  std::string name;
  MosConfig config;
  std::size_t trainable_params = 0;
  Vector final_losses;  // one per seed, in seed order
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation

  double standard_error() const noexcept;
};

struct AblationReport {
  std::vector<AblationEntry> entries;

  const AblationEntry& at(std::string_view name) const;
};

// Every (variant, seed) run uses task seed `seed` and adapter seed derived
// from it, so variants see identical data. Requires at least 8 seeds.
// Desk-scale defaults: 16-wide, 4 blocks, teacher rank 8 so that the
// rank-2-equivalent budget cannot fit the teacher, Adam at 1e-2 for 1500
// steps, seeds 0..7.
AblationOptions desk_ablation_options();

AblationReport ablation_suite(const AblationOptions& options);

// Standard error of the difference of two means.
double pooled_standard_error(const AblationEntry& a, const AblationEntry& b) noexcept;

}  // namespace mos
