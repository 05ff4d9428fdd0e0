#pragma once

// Config-driven experiment runner: sigma sweeps, teacher/student grids,
// result persistence and plot data.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unroll/distill.hpp"

namespace unroll {

enum class Scale { desk, paper };
enum class ExperimentKind { spc_sweep, spc_distill, mimo_sweep, mimo_distill };

const char *to_string(Scale scale) noexcept;
const char *to_string(ExperimentKind kind) noexcept;
std::optional<Scale> parse_scale(std::string_view text);
std::optional<ExperimentKind> parse_experiment_kind(std::string_view text);

inline bool is_imaging(ExperimentKind kind)
{
  return kind == ExperimentKind::spc_sweep || kind == ExperimentKind::spc_distill;
}
inline bool is_distill(ExperimentKind kind)
{
  return kind == ExperimentKind::spc_distill || kind == ExperimentKind::mimo_distill;
}

struct SpcSettings {
  Eigen::Index side = 32;
  Eigen::Index measurements = 256;
  std::size_t train = 4000;
  std::size_t val = 1000;
  std::size_t test = 1000;
  int epochs = 10;
  int batch = 100;
  int stages = 10;
  Eigen::Index channels = 16;
  double learning_rate = 5e-4;
  double alpha_scaled = 1.0;
  double rho_scaled = 0.1;
  std::optional<double> snr_db;
  std::uint64_t split_seed = 1234;
};

struct MimoSettings {
  Eigen::Index tx = 8;
  Eigen::Index rx = 16;
  int stages = 20;
  Eigen::Index hidden = 0;
  Eigen::Index aux = 0;
  double t = 0.5;
  int batch = 500;
  int iterations = 300;
  double learning_rate = 0.9e-3;
  double lr_decay = 0.97;
  int lr_decay_every = 50;
  double snr_min_db = 7.0;
  double snr_max_db = 13.0;
  std::vector<double> test_snr_db{7, 8, 9, 10, 11, 12, 13};
  Eigen::Index eval_samples = 20000;
};

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  ExperimentKind kind = ExperimentKind::spc_sweep;
  Scale scale = Scale::desk;
  std::uint64_t seed = 2024;
  std::vector<double> sigmas;
  std::vector<double> sigma_ts;
  int repetitions = 3;
  double lambda_grad = 1e-3;
  double lambda_o = 1e-3;
  bool shared_noise = true;
  std::optional<std::filesystem::path> data_dir; // not part of the hash
  SpcSettings spc;
  MimoSettings mimo;

  static ExperimentConfig preset(ExperimentKind kind, Scale scale);

  /// Throws invalid_configuration naming every offending field.
  void validate() const;
  /// Canonical JSON: sorted keys, data_dir omitted.
  std::string canonical_json() const;
  /// SHA-256 of canonical_json(), lowercase hex.
  std::string hash() const;

  DistillationConfig training_config(double sigma, double sigma_t, bool distilled) const;
};

/// Reads a JSON config on top of the preset selected by its "experiment"
/// and "scale" keys (or the given fallbacks). A scale passed here overrides
/// the file. Unknown keys are errors.
ExperimentConfig parse_experiment_config(std::string_view json_text, ExperimentKind fallback_kind,
                                         std::optional<Scale> scale_override = std::nullopt);
ExperimentConfig load_experiment_config(const std::filesystem::path &path, ExperimentKind fallback_kind,
                                        std::optional<Scale> scale_override = std::nullopt);

std::string sha256_hex(std::string_view data);

/// Per-repetition seeds; every variant of a repetition shares them.
struct RepetitionSeeds {
  std::uint64_t unknown;
  std::uint64_t teacher_unknown;
  std::uint64_t train;
  std::uint64_t teacher_train;
  std::uint64_t noise;
};
RepetitionSeeds repetition_seeds(std::uint64_t seed, int repetition);

enum class Variant { teacher, student_distilled, student_baseline };
const char *to_string(Variant variant) noexcept;
std::optional<Variant> parse_variant(std::string_view text);

struct ResultRecord {
  std::string config_hash;
  std::string experiment;
  Variant variant = Variant::student_baseline;
  double sigma = 0.0;
  std::optional<double> sigma_t;
  std::optional<double> snr_db;
  int repetition = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  double wall_ms = 0.0;
};

struct ResultTable {
  std::vector<ResultRecord> records;
  std::string data_source; // manifest only: mnist, synthetic or generated

  /// config_hash,experiment,variant,sigma,sigma_t,snr_db,repetition,seed,metric,value
  void write_csv(std::ostream &out, bool header = true) const;
  /// config_hash,variant,sigma,sigma_t,repetition,metric,wall_ms
  void write_timings(std::ostream &out, bool header = true) const;
  static ResultTable read_csv(std::istream &in);
};

struct RunOptions {
  std::filesystem::path out_dir = "results";
  int threads = 1;
};

ResultTable run_sigma_sweep(const ExperimentConfig &config, const RunOptions &options);
ResultTable run_distill_grid(const ExperimentConfig &config, const RunOptions &options);

/// Trains (or loads from out_dir/models) every teacher of a distill config.
ResultTable train_teachers(const ExperimentConfig &config, const RunOptions &options);

/// Scores a saved network at one sigma using the repetition's seeds.
ResultTable evaluate_saved(const ExperimentConfig &config, const NetworkParams &params, double sigma, int repetition,
                           Variant variant);

/// Appends to results.csv and timings.csv and rewrites manifest.json.
void persist_results(const ResultTable &table, const ExperimentConfig &config, const RunOptions &options,
                     std::string_view verb);

enum class FigureId { sigma_psnr, sigma_ber, distill_psnr, distill_ber };
std::optional<FigureId> parse_figure(std::string_view text);
const char *to_string(FigureId figure) noexcept;

struct PlotOutput {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> missing; // absent (sigma, sigma_t) cells
};

/// Writes <figure>.csv, <figure>.dat (gnuplot blocks, one per series) and
/// <figure>.schema.json. An empty selection is an error and writes nothing.
PlotOutput emit_plot_data(const ResultTable &table, FigureId figure, const std::filesystem::path &out_dir);

} // namespace unroll
