// unroll: experiment runner for unrolled recovery under operator mismatch.
//
// Exit codes: 0 success, 1 gradient check failed, 2 invalid configuration or
// arguments, 3 training failure, 4 I/O failure.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "unroll/experiment.hpp"
#include "unroll/log.hpp"

namespace {

using namespace unroll;

constexpr int kExitGradient = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;
constexpr int kExitIo = 4;

int exit_code(Errc code)
{
  switch (code) {
  case Errc::training_failure: return kExitTraining;
  case Errc::io_error:
  case Errc::format_error:
  case Errc::length_error: return kExitIo;
  default: return kExitConfig;
  }
}

struct Globals {
  std::optional<std::string> config;
  std::string out = "results";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scale;
  int threads = 1;
  std::optional<std::string> data_dir;
  std::string log_level = "info";
};

ExperimentConfig resolve_config(const Globals &g, ExperimentKind fallback)
{
  std::optional<Scale> scale;
  if (g.scale) {
    scale = parse_scale(*g.scale);
    if (!scale) { throw Error(Errc::invalid_configuration, "--scale must be paper or desk"); }
  }
  ExperimentConfig config = g.config ? load_experiment_config(*g.config, fallback, scale)
                                     : ExperimentConfig::preset(fallback, scale.value_or(Scale::desk));
  if (g.seed) { config.seed = *g.seed; }
  if (g.data_dir) { config.data_dir = std::filesystem::path(*g.data_dir); }
  config.validate();
  return config;
}

ExperimentKind kind_for(const std::string &task, bool distill)
{
  if (task == "spc") { return distill ? ExperimentKind::spc_distill : ExperimentKind::spc_sweep; }
  return distill ? ExperimentKind::mimo_distill : ExperimentKind::mimo_sweep;
}

void report(const ResultTable &table)
{
  for (auto const &r : table.records) {
    std::string where = "sigma=" + std::to_string(r.sigma);
    if (r.sigma_t) { where += " sigma_t=" + std::to_string(*r.sigma_t); }
    if (r.snr_db) { where += " snr=" + std::to_string(*r.snr_db); }
    std::printf("%-18s rep=%d %s %s=%.6g\n", to_string(r.variant), r.repetition, where.c_str(), r.metric.c_str(),
                r.value);
  }
}

int verify(const Globals &g, double eps, double tolerance)
{
  struct Case {
    const char *name;
    NetworkKind kind;
    LossKind loss;
    GradientCheckInstance instance;
    double tolerance;
  };
  GradientCheckInstance admm;
  GradientCheckInstance det;
  det.n = 4;
  GradientCheckInstance toy;
  toy.stages = 1;
  toy.linear = true;
  if (g.seed) { admm.seed = det.seed = toy.seed = *g.seed; }
  Case const cases[] = {
    {"admm_composite", NetworkKind::admm, LossKind::composite, admm, tolerance},
    {"detnet_composite", NetworkKind::detnet, LossKind::composite, det, tolerance},
    {"admm_linear_toy", NetworkKind::admm, LossKind::reconstruction, toy, 1e-8},
  };
  std::filesystem::create_directories(g.out);
  auto const path = std::filesystem::path(g.out) / "gradients.csv";
  std::ofstream csv(path);
  if (!csv) { throw Error(Errc::io_error, "cannot write " + path.string()); }
  csv << "case,network,n,stages,parameters,eps,max_relative_error,tolerance,pass\n";
  bool all = true;
  for (auto const &c : cases) {
    // The toy is piecewise quadratic, so a wide step loses nothing to truncation.
    double const step = c.instance.linear ? 1e-3 : eps;
    GradientCheck const r = verify_gradients(c.kind, c.loss, c.instance, step);
    bool const pass = r.max_relative_error <= c.tolerance;
    all = all && pass;
    std::printf("%-18s params=%-4ld max_rel_err=%.3e tol=%.0e %s\n", c.name, static_cast<long>(r.parameters),
                r.max_relative_error, c.tolerance, pass ? "PASS" : "FAIL");
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%ld,%d,%ld,%.17g,%.17g,%.17g,%d\n", c.name, to_string(c.kind),
                  static_cast<long>(c.instance.n), c.instance.stages, static_cast<long>(r.parameters), step,
                  r.max_relative_error, c.tolerance, pass ? 1 : 0);
    csv << line;
  }
  return all ? 0 : kExitGradient;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Unrolled recovery with inexact sensing operators: sweeps, distillation grids, plot data"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--scale", g.scale, "preset: paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  app.add_option("--threads", g.threads, "concurrent grid cells")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--data-dir", g.data_dir, "MNIST IDX directory (default $UNROLL_DATA_DIR)");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error")
    ->check(CLI::IsMember({"debug", "info", "warn", "error"}))
    ->capture_default_str();

  std::string task = "spc";
  auto task_option = [&](CLI::App *sub) {
    sub->add_option("--task", task, "spc or mimo, used when no config is given")
      ->check(CLI::IsMember({"spc", "mimo"}))
      ->capture_default_str();
  };

  auto *sweep = app.add_subcommand("sweep-sigma", "train and score networks across sigma");
  task_option(sweep);
  auto *grid = app.add_subcommand("distill-grid", "teachers, distilled and baseline students over (sigma, sigma_t)");
  task_option(grid);
  auto *teach = app.add_subcommand("train-teacher", "train and save the teachers of a distill config");
  task_option(teach);

  auto *eval = app.add_subcommand("eval", "score a saved network");
  task_option(eval);
  std::string model;
  double eval_sigma = 0.0;
  int eval_rep = 0;
  std::string eval_variant = "student_baseline";
  bool eval_distill = false;
  eval->add_option("--model", model, "saved network")->required();
  eval->add_option("--sigma", eval_sigma, "unknown-operator standard deviation")->required();
  eval->add_option("--repetition", eval_rep, "repetition whose seeds to use")->capture_default_str();
  eval->add_option("--variant", eval_variant, "label for the result rows")
    ->check(CLI::IsMember({"teacher", "student_distilled", "student_baseline"}))
    ->capture_default_str();
  eval->add_flag("--distill", eval_distill, "default to the distill preset when no config is given");

  auto *plot = app.add_subcommand("plot-data", "emit per-figure CSV, gnuplot data and schema");
  std::string results;
  std::string figure;
  plot->add_option("--results", results, "results.csv to read")->required();
  plot->add_option("--figure", figure, "sigma_psnr, sigma_ber, distill_psnr, distill_ber")
    ->required()
    ->check(CLI::IsMember({"sigma_psnr", "sigma_ber", "distill_psnr", "distill_ber"}));

  auto *grad = app.add_subcommand("verify-gradients", "analytic gradients against central differences");
  double eps = 1e-5;
  double tolerance = 1e-4;
  grad->add_option("--eps", eps, "finite-difference step")->capture_default_str();
  grad->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitConfig;
  }

  log::set_level(g.log_level == "debug"  ? log::Level::debug
                 : g.log_level == "warn" ? log::Level::warn
                 : g.log_level == "error" ? log::Level::error
                                          : log::Level::info);
  RunOptions options;
  options.out_dir = g.out;
  options.threads = g.threads;

  try {
    if (*sweep) {
      ExperimentConfig const config = resolve_config(g, kind_for(task, false));
      ResultTable const table = run_sigma_sweep(config, options);
      persist_results(table, config, options, "sweep-sigma");
      report(table);
    } else if (*grid) {
      ExperimentConfig const config = resolve_config(g, kind_for(task, true));
      ResultTable const table = run_distill_grid(config, options);
      persist_results(table, config, options, "distill-grid");
      report(table);
    } else if (*teach) {
      ExperimentConfig const config = resolve_config(g, kind_for(task, true));
      ResultTable const table = train_teachers(config, options);
      persist_results(table, config, options, "train-teacher");
      report(table);
    } else if (*eval) {
      ExperimentConfig const config = resolve_config(g, kind_for(task, eval_distill));
      NetworkParams const params = load_params(model);
      ResultTable const table = evaluate_saved(config, params, eval_sigma, eval_rep, *parse_variant(eval_variant));
      persist_results(table, config, options, "eval");
      report(table);
    } else if (*plot) {
      std::ifstream in(results);
      if (!in) { throw Error(Errc::io_error, "cannot read " + results); }
      ResultTable const table = ResultTable::read_csv(in);
      PlotOutput const out = emit_plot_data(table, *parse_figure(figure), g.out);
      for (auto const &f : out.files) { std::printf("%s\n", f.string().c_str()); }
    } else if (*grad) {
      return verify(g, eps, tolerance);
    }
  } catch (const TrainingFailure &e) {
    log::error("{} (last finite parameters kept from step {})", e.what(), e.step);
    return kExitTraining;
  } catch (const Error &e) {
    log::error("{}", e.what());
    return exit_code(e.code());
  } catch (const std::filesystem::filesystem_error &e) {
    log::error("{}", e.what());
    return kExitIo;
  }
  return 0;
}
