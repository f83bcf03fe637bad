#include <doctest.h>

#include <cmath>

#include "mos/adapter_io.hpp"
#include "mos/composer.hpp"
#include "mos/errors.hpp"
#include "mos/gradient.hpp"
#include "mos/trainer.hpp"

using namespace mos;

namespace {

TaskOptions small_task(std::uint64_t seed = 0) {
  TaskOptions t;
  t.width = 8;
  t.depth = 3;
  t.num_samples = 32;
  t.seed = seed;
  return t;
}

}  // namespace

TEST_CASE("task construction") {
  const ToyTask task = make_task(small_task());
  REQUIRE(task.base_weights.size() == 3);
  for (const Matrix& w : task.base_weights)
    CHECK(max_abs_diff(matmul_tn(w, w), Matrix::identity(8)) < 1e-12);
  CHECK(task.inputs.rows() == 8);
  CHECK(task.inputs.cols() == 32);
  CHECK(task.layer_type().num_blocks == 3);
  CHECK(make_task(small_task(4)).inputs == make_task(small_task(4)).inputs);

  TaskOptions empty = small_task();
  empty.num_samples = 0;
  CHECK_THROWS_AS(make_task(empty), ConfigError);
}

TEST_CASE("stacked loss gradients match finite differences") {
  const ToyTask task = make_task(small_task(1));
  for (const MosConfig& base : {MosConfig::lora(2), MosConfig::random_scaling(1, 3),
                                MosConfig::mixture_of_shards(3, 4, 2, 1)}) {
    MosConfig cfg = base;
    cfg.dropout = 0.2;
    AdapterState st = init_state(cfg, {task.layer_type()});
    Rng init(5);
    for (auto& lt : st.layer_types)
      for (double& v : lt.pool_b.data.data()) v = 0.3 * init.normal();
    auto loss = [&](const AdapterState& s, std::vector<LayerTypeGradient>* g) {
      Rng rng(17);
      return loss_and_gradients(s, task, true, &rng, g);
    };
    auto analytic = zero_gradients(st);
    loss(st, &analytic);
    const auto numeric =
        finite_diff_oracle([&](const AdapterState& s) { return loss(s, nullptr); }, st, 1e-5);
    CHECK(max_relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("zero learning rate keeps the loss constant") {
  const ToyTask task = make_task(small_task());
  TrainOptions opt;
  opt.lr = 0.0;
  opt.steps = 10;
  const AdapterState st = init_state(MosConfig::lora(2), {task.layer_type()});
  const TrainResult res = train(st, task, opt);
  REQUIRE(res.loss_trace.size() == 10);
  for (double v : res.loss_trace) CHECK(v == res.loss_trace.front());
  CHECK(res.final_loss == res.loss_trace.front());
}

TEST_CASE("training is deterministic and leaves routing frozen") {
  const ToyTask task = make_task(small_task(2));
  TrainOptions opt;
  opt.lr = 1e-2;
  opt.steps = 50;
  MosConfig cfg = MosConfig::mixture_of_shards(3, 4, 2, 1);
  cfg.dropout = 0.1;
  const AdapterState st = init_state(cfg, {task.layer_type()});
  const TrainResult a = train(st, task, opt), b = train(st, task, opt);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.state.layer_types == b.state.layer_types);
  CHECK(structure_digest(a.state) == structure_digest(st));
  CHECK(a.state.layer_types[0].pool_b.data != st.layer_types[0].pool_b.data);
  CHECK(a.final_loss < a.loss_trace.front());
}

TEST_CASE("LoRA fits a realizable teacher") {
  TaskOptions t = small_task(3);
  t.teacher_rank = 2;
  const ToyTask task = make_task(t);
  TrainOptions opt;
  opt.lr = 1e-2;
  opt.steps = 2000;
  const TrainResult res = train(init_state(MosConfig::lora(2), {task.layer_type()}), task, opt);
  CHECK(res.final_loss < 1e-3);
}

TEST_CASE("divergence is reported") {
  const ToyTask task = make_task(small_task());
  TrainOptions opt;
  opt.optimizer = Optimizer::sgd;
  opt.lr = 1e6;
  opt.steps = 200;
  CHECK_THROWS_AS(train(init_state(MosConfig::lora(2), {task.layer_type()}), task, opt),
                  TrainingDiverged);
}

TEST_CASE("ablation variants share one budget") {
  const LayerTypeSpec spec{"proj", 16, 16, 4};
  const auto variants = ablation_variants(2, 4, 4, 2, 1);
  REQUIRE(variants.size() == 8);
  for (const auto& v : variants) {
    CAPTURE(v.name);
    CHECK(trainable_params(spec, v.config) == 2 * 4 * 32);
  }
}

TEST_CASE("ablation suite needs enough seeds") {
  AblationOptions o = desk_ablation_options();
  o.seeds = {0, 1, 2};
  CHECK_THROWS_AS(ablation_suite(o), ConfigError);
}

TEST_CASE("pooled standard error") {
  AblationEntry a, b;
  a.final_losses = {1, 2, 3, 4};
  a.stddev = std::sqrt(5.0 / 3.0);
  b.final_losses = {1, 1, 1, 1};
  b.stddev = 0.0;
  CHECK(a.standard_error() == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(pooled_standard_error(a, b) == doctest::Approx(a.standard_error()));
}
