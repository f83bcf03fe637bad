#include "mos/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mos/adapter_io.hpp"
#include "mos/budget.hpp"
#include "mos/composer.hpp"
#include "mos/diversity.hpp"
#include "mos/errors.hpp"
#include "mos/pool.hpp"
#include "mos/serving.hpp"
#include "mos/trainer.hpp"

namespace mos {

namespace {

using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << doc.dump(2) << '\n';
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.at(0).size();
  std::vector<double> data;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix in JSON input");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return Matrix(r, c, std::move(data));
}

// Flags shared by every subcommand that builds a MosConfig from scratch.
struct ConfigFlags {
  std::string variant = "mos";
  std::size_t rank = 0;  // 0: variant default
  std::size_t equivalent_rank = 2;
  std::size_t shards = 2;
  std::size_t private_rank = 1;
  bool tied = false;
  double alpha = 16.0;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  void attach(CLI::App* app) {
    app->add_option("--variant", variant, "lora|pure_sharing|random_scaling|subset_selection|mos")
        ->capture_default_str();
    app->add_option("--rank", rank, "adapter rank r (default: variant-specific)");
    app->add_option("--equivalent-rank", equivalent_rank, "budget as an equivalent LoRA rank e")
        ->capture_default_str();
    app->add_option("--shards", shards, "shards per vector l (mos)")->capture_default_str();
    app->add_option("--private-rank", private_rank, "private rank positions p (mos)")
        ->capture_default_str();
    app->add_flag("--tied", tied, "share one index matrix between A and B (mos)");
    app->add_option("--alpha", alpha, "LoRA scaling numerator")->capture_default_str();
    app->add_option("--dropout", dropout, "adapter input dropout during training")
        ->capture_default_str();
    app->add_option("--seed", seed, "random seed")->capture_default_str();
  }

  MosConfig build(std::size_t num_blocks) const {
    const auto v = parse_variant(variant);
    if (!v) throw UsageError("unknown variant '" + variant + "'");
    const std::size_t e = equivalent_rank;
    MosConfig cfg;
    switch (*v) {
      case Variant::lora: cfg = MosConfig::lora(rank ? rank : e); break;
      case Variant::pure_sharing: cfg = MosConfig::pure_sharing(e, num_blocks); break;
      case Variant::random_scaling: cfg = MosConfig::random_scaling(e, num_blocks); break;
      case Variant::subset_selection: cfg = MosConfig::subset_selection(e, rank ? rank : 2 * e); break;
      case Variant::mos:
        cfg = MosConfig::mixture_of_shards(e, rank ? rank : 2 * e, shards, private_rank);
        cfg.tied_indices = tied;
        break;
    }
    cfg.alpha = alpha;
    cfg.dropout = dropout;
    cfg.seed = seed;
    return cfg;
  }
};

struct DimsFlags {
  std::string preset = "7b";
  std::size_t in_dim = 16;
  std::size_t out_dim = 16;
  std::size_t blocks = 4;
  std::size_t num_types = 1;

  void attach(CLI::App* app) {
    app->add_option("--dims-preset", preset, "7b | 70b-attn | custom")
        ->check(CLI::IsMember({"7b", "70b-attn", "custom"}))
        ->capture_default_str();
    app->add_option("--in-dim", in_dim, "custom preset: input dim h")->capture_default_str();
    app->add_option("--out-dim", out_dim, "custom preset: output dim o")->capture_default_str();
    app->add_option("--blocks", blocks, "custom preset: number of blocks L")->capture_default_str();
    app->add_option("--num-types", num_types, "custom preset: number of layer types")
        ->capture_default_str();
  }

  BudgetSpec build() const {
    if (preset == "7b") return presets::llama2_7b();
    if (preset == "70b-attn") return presets::llama2_70b_attention();
    BudgetSpec spec;
    for (std::size_t t = 0; t < num_types; ++t) {
      spec.layer_types.push_back({"proj" + std::to_string(t), in_dim, out_dim, blocks});
    }
    return spec;
  }
};

std::size_t find_type(const AdapterState& state, const std::string& name) {
  if (name.empty()) return 0;
  for (std::size_t t = 0; t < state.layer_types.size(); ++t)
    if (state.layer_types[t].spec.name == name) return t;
  throw UsageError("adapter has no layer type '" + name + "'");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"mosctl: mixture-of-shards adapter laboratory"};
  app.require_subcommand(1);

  // init
  auto* init = app.add_subcommand("init", "initialize an adapter and write it to a file");
  ConfigFlags init_cfg;
  init_cfg.attach(init);
  std::size_t init_in = 16, init_out = 16, init_blocks = 4;
  std::vector<std::string> init_types{"proj"};
  std::string init_path;
  init->add_option("--out", init_path, "output adapter file")->required();
  init->add_option("--in-dim", init_in, "input dim h")->capture_default_str();
  init->add_option("--out-dim", init_out, "output dim o")->capture_default_str();
  init->add_option("--blocks", init_blocks, "number of blocks L")->capture_default_str();
  init->add_option("--types", init_types, "layer type names")->delimiter(',');

  // train
  auto* train_cmd = app.add_subcommand("train", "train an adapter on a toy teacher-student task");
  std::string train_in, train_out, train_json, train_task = "teacher_student_linear",
                                               train_opt = "adam";
  std::size_t train_steps = 1000, train_samples = 256, train_teacher_rank = 2, train_every = 100;
  double train_lr = 1e-3, train_noise = 0.0;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--in", train_in, "adapter file (single square layer type)")->required();
  train_cmd->add_option("--out", train_out, "write the trained adapter here");
  train_cmd->add_option("--json", train_json, "machine-readable summary");
  train_cmd->add_option("--task", train_task, "teacher_student_linear | random_feature_regression")
      ->capture_default_str();
  train_cmd->add_option("--optimizer", train_opt, "adam | sgd")->capture_default_str();
  train_cmd->add_option("--steps", train_steps)->capture_default_str();
  train_cmd->add_option("--lr", train_lr)->capture_default_str();
  train_cmd->add_option("--samples", train_samples)->capture_default_str();
  train_cmd->add_option("--noise", train_noise)->capture_default_str();
  train_cmd->add_option("--teacher-rank", train_teacher_rank)->capture_default_str();
  train_cmd->add_option("--seed", train_seed, "task and dropout seed")->capture_default_str();
  train_cmd->add_option("--print-every", train_every, "loss line interval")->capture_default_str();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "budget-matched sharing/differentiation ablation");
  AblationOptions abl = desk_ablation_options();
  std::size_t abl_seeds = 8;
  std::uint64_t abl_first_seed = 0;
  std::string abl_json;
  ablate->add_option("--seeds", abl_seeds, "number of seeds (>= 8)")->capture_default_str();
  ablate->add_option("--first-seed", abl_first_seed)->capture_default_str();
  ablate->add_option("--steps", abl.train.steps)->capture_default_str();
  ablate->add_option("--lr", abl.train.lr)->capture_default_str();
  ablate->add_option("--width", abl.task.width)->capture_default_str();
  ablate->add_option("--depth", abl.task.depth)->capture_default_str();
  ablate->add_option("--samples", abl.task.num_samples)->capture_default_str();
  ablate->add_option("--teacher-rank", abl.task.teacher_rank)->capture_default_str();
  ablate->add_option("--equivalent-rank", abl.equivalent_rank)->capture_default_str();
  ablate->add_option("--rank", abl.rank)->capture_default_str();
  ablate->add_option("--shards", abl.shards_per_vector)->capture_default_str();
  ablate->add_option("--private-rank", abl.private_rank)->capture_default_str();
  ablate->add_option("--threads", abl.threads)->capture_default_str();
  ablate->add_option("--json", abl_json, "machine-readable summary");

  // compose / merge
  auto* compose_cmd = app.add_subcommand("compose", "print one block's composed A, B and delta W");
  auto* merge_cmd = app.add_subcommand("merge", "print W0 + delta W for one block");
  std::string cm_in, cm_type, merge_w0;
  std::size_t cm_layer = 0;
  for (auto* sub : {compose_cmd, merge_cmd}) {
    sub->add_option("--in", cm_in, "adapter file")->required();
    sub->add_option("--type", cm_type, "layer type name (default: first)");
    sub->add_option("--layer", cm_layer, "block index")->capture_default_str();
  }
  merge_cmd->add_option("--w0", merge_w0, "JSON file with the base weight rows (default: zeros)");

  // budget
  auto* budget_cmd = app.add_subcommand("budget", "LoRA parameter count or equivalent rank");
  DimsFlags budget_dims;
  budget_dims.attach(budget_cmd);
  std::optional<std::uint64_t> budget_rank, budget_params;
  budget_cmd->add_option("--rank", budget_rank, "LoRA rank to count");
  budget_cmd->add_option("--budget", budget_params, "parameter budget to solve for e");

  // diversity
  auto* div_cmd = app.add_subcommand("diversity", "combinational diversity of a routing scheme");
  std::string div_variant = "subset";
  std::uint64_t div_L = 1, div_e = 1, div_r = 1, div_l = 1;
  div_cmd->add_option("--variant", div_variant, "pure | subset | dissociation | sharding")
      ->capture_default_str();
  div_cmd->add_option("--L", div_L, "blocks")->capture_default_str();
  div_cmd->add_option("--e", div_e, "equivalent rank")->capture_default_str();
  div_cmd->add_option("--r", div_r, "rank")->capture_default_str();
  div_cmd->add_option("--l", div_l, "shards per vector")->capture_default_str();

  // simulate-serving
  auto* serve_cmd = app.add_subcommand("simulate-serving", "multi-tenant adapter memory report");
  DimsFlags serve_dims;
  serve_dims.attach(serve_cmd);
  std::uint64_t serve_tenants = 10000;
  std::string serve_method = "lora", serve_json;
  std::size_t serve_rank = 16, serve_precision = 4, serve_shards = 4, serve_private = 1;
  std::optional<std::uint64_t> serve_budget;
  serve_cmd->add_option("--tenants", serve_tenants)->capture_default_str();
  serve_cmd->add_option("--method", serve_method)
      ->check(CLI::IsMember({"lora", "mos"}))
      ->capture_default_str();
  serve_cmd->add_option("--rank", serve_rank, "lora rank, or mos rank r")->capture_default_str();
  serve_cmd->add_option("--budget", serve_budget, "mos: per-tenant parameter budget");
  serve_cmd->add_option("--shards", serve_shards, "mos: shards per vector")->capture_default_str();
  serve_cmd->add_option("--private-rank", serve_private, "mos: private rank")->capture_default_str();
  serve_cmd->add_option("--precision-bytes", serve_precision)
      ->check(CLI::IsMember({2, 4}))
      ->capture_default_str();
  serve_cmd->add_option("--json", serve_json, "machine-readable report");

  // validate / export / import
  auto* validate_cmd = app.add_subcommand("validate", "load an adapter file and check invariants");
  std::string validate_in;
  validate_cmd->add_option("--in", validate_in)->required();
  auto* export_cmd = app.add_subcommand("export", "adapter file to JSON");
  auto* import_cmd = app.add_subcommand("import", "JSON to adapter file");
  std::string io_in, io_out;
  for (auto* sub : {export_cmd, import_cmd}) {
    sub->add_option("--in", io_in)->required();
    sub->add_option("--out", io_out)->required();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*init) {
      const MosConfig cfg = init_cfg.build(init_blocks);
      std::vector<LayerTypeSpec> types;
      for (const auto& name : init_types) types.push_back({name, init_in, init_out, init_blocks});
      const AdapterState state = init_state(cfg, types);
      save_adapter(state, init_path);
      out << "wrote " << init_path << " variant=" << to_string(cfg.variant)
          << " trainable_params=" << state.trainable_params()
          << " digest=" << structure_digest(state) << '\n';
    } else if (*train_cmd) {
      AdapterState state = load_adapter(train_in);
      if (state.layer_types.size() != 1 ||
          state.layer_types[0].spec.in_dim != state.layer_types[0].spec.out_dim) {
        throw UsageError("train needs an adapter with one square layer type");
      }
      const auto kind = parse_task_kind(train_task);
      const auto opt = parse_optimizer(train_opt);
      if (!kind) throw UsageError("unknown task '" + train_task + "'");
      if (!opt) throw UsageError("unknown optimizer '" + train_opt + "'");
      TaskOptions topts;
      topts.kind = *kind;
      topts.width = state.layer_types[0].spec.in_dim;
      topts.depth = state.layer_types[0].spec.num_blocks;
      topts.num_samples = train_samples;
      topts.noise_std = train_noise;
      topts.teacher_rank = train_teacher_rank;
      topts.seed = train_seed;
      const ToyTask task = make_task(topts);
      TrainOptions run;
      run.optimizer = *opt;
      run.lr = train_lr;
      run.steps = train_steps;
      run.seed = train_seed;
      const std::uint32_t digest_before = structure_digest(state);
      const TrainResult result = train(std::move(state), task, run);
      for (std::size_t s = 0; s < result.loss_trace.size(); ++s) {
        if (train_every > 0 && s % train_every == 0) {
          out << "step=" << s << " loss=" << std::setprecision(10) << result.loss_trace[s] << '\n';
        }
      }
      out << "final_loss=" << std::setprecision(10) << result.final_loss
          << " structure_unchanged=" << (structure_digest(result.state) == digest_before ? "true" : "false")
          << '\n';
      if (!train_out.empty()) save_adapter(result.state, train_out);
      if (!train_json.empty()) {
        write_json(train_json, {{"variant", to_string(result.state.config.variant)},
                                {"task", to_string(topts.kind)},
                                {"optimizer", to_string(run.optimizer)},
                                {"lr", run.lr},
                                {"steps", run.steps},
                                {"seed", train_seed},
                                {"trainable_params", result.state.trainable_params()},
                                {"final_loss", result.final_loss},
                                {"loss_trace", result.loss_trace}});
      }
    } else if (*ablate) {
      abl.seeds.clear();
      for (std::uint64_t s = 0; s < abl_seeds; ++s) abl.seeds.push_back(abl_first_seed + s);
      const AblationReport report = ablation_suite(abl);
      json entries = json::array();
      for (const auto& e : report.entries) {
        out << "variant=" << e.name << " params=" << e.trainable_params
            << " mean=" << std::setprecision(6) << e.mean << " std=" << e.stddev
            << " se=" << e.standard_error() << '\n';
        entries.push_back({{"variant", e.name},
                           {"trainable_params", e.trainable_params},
                           {"final_losses", e.final_losses},
                           {"mean", e.mean},
                           {"stddev", e.stddev}});
      }
      json orderings = json::array();
      auto ordering = [&](const std::string& better, const std::string& worse) {
        const auto& a = report.at(better);
        const auto& b = report.at(worse);
        const double gap = a.mean - b.mean;
        const double se = pooled_standard_error(a, b);
        const bool holds = gap <= se;
        out << "ordering " << better << " <= " << worse << " gap=" << gap << " pooled_se=" << se
            << (holds ? " ok" : " VIOLATED") << '\n';
        orderings.push_back({{"better", better}, {"worse", worse}, {"gap", gap},
                             {"pooled_se", se}, {"holds", holds}});
      };
      ordering("subset_selection", "pure_sharing");
      ordering("mos", "mos-sp");
      ordering("mos", "mos-vs");
      ordering("mos", "mos-pd");
      if (!abl_json.empty()) {
        write_json(abl_json, {{"seeds", abl.seeds},
                              {"steps", abl.train.steps},
                              {"lr", abl.train.lr},
                              {"variants", entries},
                              {"orderings", orderings}});
      }
    } else if (*compose_cmd || *merge_cmd) {
      const AdapterState state = load_adapter(cm_in);
      const std::size_t t = find_type(state, cm_type);
      const ComposedAdapter adapter = compose_layer(state, t, cm_layer);
      if (*compose_cmd) {
        out << json{{"layer_type", adapter.layer_type},
                    {"layer", adapter.layer},
                    {"alpha_over_r", adapter.alpha_over_r},
                    {"A", matrix_json(adapter.a)},
                    {"B", matrix_json(adapter.b)},
                    {"delta_w", matrix_json(delta_w(adapter))}}
                   .dump(2)
            << '\n';
      } else {
        Matrix w0(adapter.b.rows(), adapter.a.cols());
        if (!merge_w0.empty()) {
          std::ifstream in(merge_w0);
          if (!in) throw Error("cannot open '" + merge_w0 + "'");
          w0 = matrix_from_json(json::parse(in));
        }
        out << json{{"layer_type", adapter.layer_type},
                    {"layer", adapter.layer},
                    {"merged", matrix_json(merge(adapter, w0))}}
                   .dump(2)
            << '\n';
      }
    } else if (*budget_cmd) {
      const BudgetSpec spec = budget_dims.build();
      if (!budget_rank && !budget_params) throw UsageError("budget needs --rank or --budget");
      if (budget_rank) {
        const std::uint64_t n = lora_param_count(spec, *budget_rank);
        out << "preset=" << budget_dims.preset << " rank=" << *budget_rank << " lora_params=" << n
            << " millions=" << fixed(static_cast<double>(n) / 1e6, 2) << '\n';
      }
      if (budget_params) {
        const EquivalentRank er = solve_equivalent_rank(spec, *budget_params);
        out << "preset=" << budget_dims.preset << " budget=" << *budget_params
            << " equivalent_rank=" << er.equivalent_rank;
        for (std::size_t t = 0; t < spec.layer_types.size(); ++t) {
          out << " pool_rank[" << spec.layer_types[t].name << "]=" << er.pool_rank[t];
        }
        out << '\n';
      }
    } else if (*div_cmd) {
      const auto scheme = parse_diversity_scheme(div_variant);
      if (!scheme) throw UsageError("unknown diversity variant '" + div_variant + "'");
      const DiversityReport rep = diversity(*scheme, div_L, div_e, div_r, div_l);
      out << "combinations=" << rep.combinations << '\n'
          << "formula=" << rep.formula << '\n'
          << "ordered_combinations=" << rep.ordered_combinations << '\n'
          << "ordered_formula=" << rep.ordered_formula << '\n'
          << "note=binomial counts treat selections as unordered sets\n";
    } else if (*serve_cmd) {
      const BudgetSpec base = serve_dims.build();
      MosConfig cfg;
      if (serve_method == "lora") {
        cfg = MosConfig::lora(serve_rank);
      } else {
        if (!serve_budget) throw UsageError("--method mos needs --budget");
        const EquivalentRank er = solve_equivalent_rank(base, *serve_budget);
        cfg = MosConfig::mixture_of_shards(er.equivalent_rank, serve_rank, serve_shards,
                                           serve_private);
      }
      const MemoryReport rep =
          simulate_memory(base, serve_dims.preset, cfg, serve_tenants, serve_precision);
      out << "method=" << serve_method << " preset=" << rep.preset << " tenants=" << rep.tenants
          << '\n'
          << "params_per_tenant=" << rep.params_per_tenant << '\n'
          << "bytes_per_tenant=" << rep.bytes_per_tenant << '\n'
          << "total_bytes=" << rep.total_bytes << '\n'
          << "total_tb=" << fixed(static_cast<double>(rep.total_bytes) / 1e12, 3) << '\n';
      for (const auto& a : rep.assumptions) out << "assumption: " << a << '\n';
      if (!serve_json.empty()) {
        write_json(serve_json, {{"method", serve_method},
                                {"preset", rep.preset},
                                {"tenants", rep.tenants},
                                {"params_per_tenant", rep.params_per_tenant},
                                {"bytes_per_param", rep.bytes_per_param},
                                {"bytes_per_tenant", rep.bytes_per_tenant},
                                {"total_bytes", rep.total_bytes},
                                {"assumptions", rep.assumptions}});
      }
    } else if (*validate_cmd) {
      const AdapterState state = load_adapter(validate_in);
      const ValidationReport rep = validate(state);
      out << rep.to_string();
      if (!rep.ok()) return 1;
      out << "ok trainable_params=" << state.trainable_params() << '\n';
    } else if (*export_cmd) {
      write_json(io_out, adapter_to_json(load_adapter(io_in)));
      out << "wrote " << io_out << '\n';
    } else if (*import_cmd) {
      std::ifstream in(io_in);
      if (!in) throw Error("cannot open '" + io_in + "'");
      json doc;
      try {
        doc = json::parse(in);
      } catch (const json::exception& e) {
        throw LoadError(LoadErrorKind::malformed, std::string("invalid JSON: ") + e.what());
      }
      save_adapter(adapter_from_json(doc), io_out);
      out << "wrote " << io_out << '\n';
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mos
