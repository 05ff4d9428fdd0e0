#pragma once

// Teacher-student training for unrolled recovery under operator mismatch.
//
// The teacher trains on y_t = (A_k + A_ut) x + w with sigma_t < sigma and is
// frozen. The student trains on y = (A_k + A_u) x + w and minimizes
//   recon + lambda_grad * l_grad(G_s, G_t) + lambda_o * l_o(X_s, X_t)
// where both networks only ever see A_k. lambda_grad = lambda_o = 0 is the
// baseline student.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "unroll/admm_net.hpp"
#include "unroll/data.hpp"
#include "unroll/detnet.hpp"
#include "unroll/error.hpp"
#include "unroll/losses.hpp"

namespace unroll {

enum class NetworkKind { admm, detnet };

const char *to_string(NetworkKind kind) noexcept;

struct DistillationConfig {
  double sigma = 0.3;
  double sigma_t = 0.0;
  double lambda_grad = 1e-3;
  double lambda_o = 1e-3;
  int stages = 10;
  int epochs = 10;      // imaging: passes over the training set
  int iterations = 300; // detection: freshly generated batches
  int batch = 100;
  double learning_rate = 5e-4;
  double lr_decay = 1.0;
  int lr_decay_every = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int distill_weight_offset = 0;
  int recon_weight_offset = 1;
  std::uint64_t seed = 0;

  /// Student-side checks: sigma_t < sigma when distilling, lambdas >= 0, positive sizes.
  void validate() const;
  bool distills() const { return lambda_grad > 0.0 || lambda_o > 0.0; }
};

using NetworkParams = std::variant<AdmmParams, DetNetParams>;

struct TeacherSnapshot {
  NetworkKind kind = NetworkKind::admm;
  NetworkParams params;
  double sigma_t = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t unknown_seed = 0;
};

struct TrainingLogRow {
  long step = 0;
  int epoch = 0;
  double recon_loss = 0.0;
  double loss_grad = 0.0;
  double loss_output = 0.0;
  double composite = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainingLog {
  std::vector<TrainingLogRow> rows;

  /// step,epoch,recon_loss,loss_grad,loss_output,composite,lr,wall_ms
  void write_csv(std::ostream &out) const;
  double mean_composite(int epoch) const;
};

struct TrainedModel {
  NetworkParams params;
  TrainingLog log;
};

/// Non-finite loss or parameters; carries the last finite parameters.
class TrainingFailure : public Error {
public:
  TrainingFailure(const std::string &what, NetworkParams last_good, long step)
    : Error(Errc::training_failure, what)
    , last_good(std::move(last_good))
    , step(step)
  {
  }

  NetworkParams last_good;
  long step;
};

/// Single-pixel imaging problem: shared known operator plus image splits.
struct ImagingTask {
  Matrix known;
  std::shared_ptr<const ImageDataset> data;
  Eigen::Index channels = 16;
  AdmmInit init;
  std::optional<double> snr_db; // nullopt: noiseless
  bool shared_noise = true;
  std::uint64_t noise_seed = 0;
};

/// BPSK MIMO detection: fresh channels every batch, fixed unknown part per run.
struct DetectionTask {
  Eigen::Index tx = 8;  // complex transmit antennas
  Eigen::Index rx = 16; // complex receive antennas
  double snr_min_db = 7.0;
  double snr_max_db = 13.0;
  Eigen::Index hidden = 0;
  Eigen::Index aux = 0;
  double t = 0.5;
  bool shared_noise = true;

  Eigen::Index signal_size() const { return 2 * tx; }
  Eigen::Index measurement_size() const { return 2 * rx; }
};

/// One freshly generated detection batch as seen by student and teacher.
struct DetectionSample {
  Matrix symbols;
  DetectionBatch student;
  DetectionBatch teacher;
};

/// Generates batch `index` of a detection run. Pass sigma_t < 0 to skip the teacher view.
DetectionSample make_detection_sample(const DetectionTask &task, const Matrix &student_unknown,
                                      const Matrix *teacher_unknown, Eigen::Index batch, std::uint64_t seed,
                                      std::optional<double> fixed_snr_db = std::nullopt);

TeacherSnapshot train_teacher(const DistillationConfig &config, const ImagingTask &task, std::uint64_t unknown_seed,
                              TrainingLog *log = nullptr);
TeacherSnapshot train_teacher(const DistillationConfig &config, const DetectionTask &task,
                              std::uint64_t unknown_seed, TrainingLog *log = nullptr);

/// teacher may be null only when the config does not distill.
TrainedModel train_student(const DistillationConfig &config, const TeacherSnapshot *teacher,
                           const ImagingTask &task, std::uint64_t unknown_seed);
TrainedModel train_student(const DistillationConfig &config, const TeacherSnapshot *teacher,
                           const DetectionTask &task, std::uint64_t unknown_seed);

struct CompositeLoss {
  double recon = 0.0;
  double grad = 0.0;
  double output = 0.0;
  double total = 0.0;
};

/// recon + lambda_grad * l_grad + lambda_o * l_o. Without zf the
/// reconstruction term is the MSE of the final estimate; with zf it is the
/// DetNet stage-weighted loss. Fills adjoint when given.
CompositeLoss composite_student_loss(const StageTrace &student, const StageTrace *teacher, const Matrix &x,
                                     const DistillationConfig &config, const Matrix *zf = nullptr,
                                     TraceAdjoint *adjoint = nullptr);

struct ImagingScores {
  double psnr = 0.0; // mean of per-image PSNR
  double ssim = 0.0;
  std::vector<double> per_image_psnr;
};

/// Reconstructs `images` through A_k + A_u(sigma, unknown_seed); estimates
/// are clipped to [0, 1] before scoring.
ImagingScores evaluate_imaging(const AdmmParams &params, const ImagingTask &task, const Matrix &images, double sigma,
                               std::uint64_t unknown_seed);

struct DetectionScores {
  std::vector<double> snr_db;
  std::vector<double> ber;
};

DetectionScores evaluate_detection(const DetNetParams &params, const DetectionTask &task, double sigma,
                                   std::uint64_t unknown_seed, const std::vector<double> &snr_db,
                                   Eigen::Index samples, std::uint64_t seed);

enum class LossKind { reconstruction, composite };

struct GradientCheckInstance {
  Eigen::Index n = 16;
  int stages = 2;
  Eigen::Index width = 0; // denoiser channels or DetNet hidden size; 0 picks a small default
  Eigen::Index batch = 2;
  double lambda_grad = 0.5;
  double lambda_o = 0.5;
  std::uint64_t seed = 7;
  /// Biases every ReLU into its linear region so the loss is piecewise
  /// quadratic in each parameter and central differences are exact.
  bool linear = false;
};

struct GradientCheck {
  double max_relative_error = 0.0;
  Eigen::Index parameters = 0;
};

/// Analytic parameter gradients against central differences. Relative error
/// per coordinate is |a - f| / max(|a|, |f|, 1e-6).
GradientCheck verify_gradients(NetworkKind kind, LossKind loss, const GradientCheckInstance &instance, double eps);

void save_params(const std::filesystem::path &path, const NetworkParams &params);
NetworkParams load_params(const std::filesystem::path &path);

} // namespace unroll
