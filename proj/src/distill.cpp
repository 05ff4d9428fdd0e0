#include "unroll/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "unroll/binary_io.hpp"
#include "unroll/log.hpp"
#include "unroll/metrics.hpp"
#include "unroll/optim.hpp"
#include "unroll/random.hpp"
#include "unroll/sensing.hpp"

namespace unroll {

const char *to_string(NetworkKind kind) noexcept
{
  switch (kind) {
  case NetworkKind::admm: return "admm";
  case NetworkKind::detnet: return "detnet";
  }
  return "unknown";
}

void DistillationConfig::validate() const
{
  auto const bad = [](const std::string &msg) { throw Error(Errc::invalid_configuration, msg); };
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) { bad("sigma must be a finite value >= 0"); }
  if (!(sigma_t >= 0.0)) { bad("sigma_t must be >= 0"); }
  if (distills() && !(sigma_t < sigma)) {
    bad("teacher mismatch sigma_t = " + std::to_string(sigma_t) + " must be below student sigma = " +
        std::to_string(sigma));
  }
  if (!(lambda_grad >= 0.0) || !(lambda_o >= 0.0)) { bad("distillation weights must be >= 0"); }
  if (stages < 1) { bad("stages must be >= 1"); }
  if (epochs < 1 || iterations < 1 || batch < 1) { bad("epochs, iterations and batch must be >= 1"); }
  if (!(learning_rate > 0.0)) { bad("learning_rate must be > 0"); }
  if (!(lr_decay > 0.0)) { bad("lr_decay must be > 0"); }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    bad("Adam betas must lie in [0, 1) and epsilon must be > 0");
  }
  if (distill_weight_offset < 0 || recon_weight_offset < 0) { bad("stage weight offsets must be >= 0"); }
}

void TrainingLog::write_csv(std::ostream &out) const
{
  out << "step,epoch,recon_loss,loss_grad,loss_output,composite,lr,wall_ms\n";
  char buf[512];
  for (auto const &r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.step, r.epoch, r.recon_loss,
                  r.loss_grad, r.loss_output, r.composite, r.lr, r.wall_ms);
    out << buf;
  }
}

double TrainingLog::mean_composite(int epoch) const
{
  double sum = 0.0;
  long count = 0;
  for (auto const &r : rows) {
    if (r.epoch == epoch) {
      sum += r.composite;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

namespace {

// No validation: teacher training runs with sigma_t = sigma.
CompositeLoss composite_loss(const StageTrace &student, const StageTrace *teacher, const Matrix &x,
                             const DistillationConfig &config, const Matrix *zf, TraceAdjoint *adjoint)
{
  std::size_t const stages = student.stages();
  require(stages > 0, Errc::invalid_dimension, "empty stage trace");
  CompositeLoss loss;
  std::vector<Matrix> d;
  if (zf) {
    loss.recon = recon_loss_detnet(student, x, *zf, config.recon_weight_offset, adjoint ? &d : nullptr);
    if (adjoint) {
      for (std::size_t i = 0; i < stages; ++i) { accumulate(adjoint->d_estimates[i], d[i]); }
    }
  } else {
    Matrix dx;
    loss.recon = recon_loss_mse(student.estimates.back(), x, adjoint ? &dx : nullptr);
    if (adjoint) { accumulate(adjoint->d_estimates.back(), dx); }
  }
  loss.total = loss.recon;

  if (config.lambda_grad > 0.0) {
    require(teacher != nullptr, Errc::invalid_configuration, "gradient distillation needs a teacher trace");
    loss.grad = loss_grad(student.gradients, teacher->gradients, config.distill_weight_offset, adjoint ? &d : nullptr);
    loss.total += config.lambda_grad * loss.grad;
    if (adjoint) {
      for (std::size_t i = 0; i < stages; ++i) { accumulate(adjoint->d_gradients[i], config.lambda_grad * d[i]); }
    }
  }
  if (config.lambda_o > 0.0) {
    require(teacher != nullptr, Errc::invalid_configuration, "output distillation needs a teacher trace");
    loss.output =
      loss_output(student.estimates, teacher->estimates, config.distill_weight_offset, adjoint ? &d : nullptr);
    loss.total += config.lambda_o * loss.output;
    if (adjoint) {
      for (std::size_t i = 0; i < stages; ++i) { accumulate(adjoint->d_estimates[i], config.lambda_o * d[i]); }
    }
  }
  return loss;
}

template <class Params, class Step>
TrainedModel optimize(Params params, const DistillationConfig &config, long total_steps, long steps_per_epoch,
                      const Vector *scales, Step &&step)
{
  Adam adam(params.parameter_count(), {config.beta1, config.beta2, config.epsilon});
  Vector flat = pack(params);
  TrainedModel out;
  out.log.rows.reserve(static_cast<std::size_t>(total_steps));
  for (long s = 0; s < total_steps; ++s) {
    auto const t0 = std::chrono::steady_clock::now();
    Params grad;
    CompositeLoss const loss = step(params, s, grad);
    Vector const g = pack(grad);
    if (!std::isfinite(loss.total) || !g.allFinite()) {
      throw TrainingFailure("non-finite loss or gradient at step " + std::to_string(s), params, s);
    }
    double const lr = step_decay_lr(config.learning_rate, config.lr_decay, config.lr_decay_every, s);
    adam.step(flat, g, lr, scales);
    if (!flat.allFinite()) {
      throw TrainingFailure("non-finite parameters after step " + std::to_string(s), params, s);
    }
    unpack(flat, params);
    double const ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.log.rows.push_back({s, static_cast<int>(s / steps_per_epoch), loss.recon, loss.grad, loss.output, loss.total,
                            lr, ms});
  }
  out.params = std::move(params);
  return out;
}

// ---- imaging ----

Matrix measure_images(const Matrix &known, const Matrix &unknown, const Matrix &images, std::optional<double> snr_db,
                      std::uint64_t noise_seed)
{
  Matrix y = known * images;
  if (unknown.size() != 0) { y.noalias() += unknown * images; }
  if (snr_db) {
    Matrix const xi = standard_noise(y.rows(), y.cols(), noise_seed);
    y += scale_noise(y, Vector::Constant(y.cols(), *snr_db), xi);
  }
  return y;
}

std::uint64_t teacher_noise_seed(const ImagingTask &task)
{
  return task.shared_noise ? task.noise_seed : derive_seed(task.noise_seed, "teacher-noise");
}

std::vector<Eigen::Index> epoch_order(Eigen::Index count, std::uint64_t seed, long epoch)
{
  std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  CounterRng rng(seed, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

Matrix gather(const Matrix &m, const std::vector<Eigen::Index> &order, std::size_t begin, std::size_t end)
{
  Matrix out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) { out.col(static_cast<Eigen::Index>(i - begin)) = m.col(order[i]); }
  return out;
}

TrainedModel fit_admm(const DistillationConfig &config, const ImagingTask &task, double sigma,
                      std::uint64_t unknown_seed, std::uint64_t noise_seed, const TeacherSnapshot *teacher)
{
  require(task.data != nullptr, Errc::invalid_configuration, "imaging task has no dataset");
  Matrix const &images = task.data->train;
  Eigen::Index const n = task.known.cols();
  require(images.rows() == n && images.cols() > 0, Errc::invalid_dimension, "training images do not match operator");
  double const lipschitz = operator_norm_squared(task.known);
  AdmmInit init = task.init;
  init.stages = config.stages;
  init.channels = task.channels;
  AdmmParams params = init_admm_params(n, lipschitz, init, derive_seed(config.seed, "init"));
  Vector const scales = step_scales(params, lipschitz);

  Matrix const unknown = sample_unknown(task.known.rows(), n, sigma, unknown_seed);
  Matrix const y = measure_images(task.known, unknown, images, task.snr_db, noise_seed);

  AdmmParams const *teacher_params = nullptr;
  Matrix y_teacher;
  if (teacher && config.distills()) {
    teacher_params = &std::get<AdmmParams>(teacher->params);
    Matrix const teacher_unknown = sample_unknown(task.known.rows(), n, teacher->sigma_t, teacher->unknown_seed);
    y_teacher = measure_images(task.known, teacher_unknown, images, task.snr_db, teacher_noise_seed(task));
  }

  auto const count = static_cast<std::size_t>(images.cols());
  auto const batch = std::min(count, static_cast<std::size_t>(config.batch));
  long const per_epoch = static_cast<long>((count + batch - 1) / batch);
  std::uint64_t const shuffle_seed = derive_seed(config.seed, "shuffle");
  std::vector<Eigen::Index> order;
  long order_epoch = -1;

  auto step = [&](const AdmmParams &p, long s, AdmmParams &grad) {
    long const epoch = s / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(images.cols(), shuffle_seed, epoch);
      order_epoch = epoch;
    }
    std::size_t const begin = static_cast<std::size_t>(s % per_epoch) * batch;
    std::size_t const end = std::min(count, begin + batch);
    Matrix const xb = gather(images, order, begin, end);
    Matrix const yb = gather(y, order, begin, end);
    AdmmForward const fwd = admm_forward(yb, task.known, p);
    std::optional<AdmmForward> tfwd;
    if (teacher_params) { tfwd = admm_forward(gather(y_teacher, order, begin, end), task.known, *teacher_params); }
    TraceAdjoint adjoint(fwd.trace.stages());
    CompositeLoss const loss =
      composite_loss(fwd.trace, tfwd ? &tfwd->trace : nullptr, xb, config, nullptr, &adjoint);
    grad = admm_backward(yb, task.known, p, fwd, adjoint);
    return loss;
  };
  return optimize(std::move(params), config, per_epoch * config.epochs, per_epoch, &scales, step);
}

// ---- detection ----

Matrix detection_unknown(const DetectionTask &task, double sigma, std::uint64_t seed)
{
  return sample_unknown(task.measurement_size(), task.signal_size(), sigma, seed);
}

TrainedModel fit_detnet(const DistillationConfig &config, const DetectionTask &task, double sigma,
                        std::uint64_t unknown_seed, const TeacherSnapshot *teacher)
{
  require(task.tx > 0 && task.rx > 0, Errc::invalid_dimension, "antenna counts must be positive");
  DetNetInit init;
  init.stages = config.stages;
  init.hidden = task.hidden;
  init.aux = task.aux;
  init.t = task.t;
  DetNetParams params = init_detnet_params(task.signal_size(), init, derive_seed(config.seed, "init"));
  Matrix const unknown = detection_unknown(task, sigma, unknown_seed);

  DetNetParams const *teacher_params = nullptr;
  Matrix teacher_unknown;
  if (teacher && config.distills()) {
    teacher_params = &std::get<DetNetParams>(teacher->params);
    teacher_unknown = detection_unknown(task, teacher->sigma_t, teacher->unknown_seed);
  }
  std::uint64_t const data_seed = derive_seed(config.seed, "mimo-data");

  auto step = [&](const DetNetParams &p, long s, DetNetParams &grad) {
    DetectionSample const sample =
      make_detection_sample(task, unknown, teacher_params ? &teacher_unknown : nullptr, config.batch,
                            derive_seed(data_seed, static_cast<std::uint64_t>(s)));
    Matrix const zf = zero_forcing(sample.student);
    DetNetForward const fwd = detnet_forward(sample.student, p);
    std::optional<DetNetForward> tfwd;
    if (teacher_params) { tfwd = detnet_forward(sample.teacher, *teacher_params); }
    TraceAdjoint adjoint(fwd.trace.stages());
    CompositeLoss const loss =
      composite_loss(fwd.trace, tfwd ? &tfwd->trace : nullptr, sample.symbols, config, &zf, &adjoint);
    grad = detnet_backward(sample.student, p, fwd, adjoint);
    return loss;
  };
  return optimize(std::move(params), config, config.iterations, config.iterations, nullptr, step);
}

void check_teacher(const DistillationConfig &config, const TeacherSnapshot *teacher, NetworkKind kind)
{
  config.validate();
  if (!config.distills()) { return; }
  if (config.stages == 1 && config.distill_weight_offset == 0) {
    log::warn("single-stage network: distillation terms carry zero weight");
  }
  require(teacher != nullptr, Errc::invalid_configuration, "distillation weights are set but no teacher was given");
  require(teacher->kind == kind && static_cast<std::size_t>(teacher->params.index()) == static_cast<std::size_t>(kind),
          Errc::invalid_configuration, "teacher network kind does not match the student");
  require(teacher->sigma_t < config.sigma, Errc::invalid_configuration,
          "teacher mismatch sigma_t = " + std::to_string(teacher->sigma_t) + " must be below student sigma = " +
            std::to_string(config.sigma));
}

// The teacher is a plain reconstruction network trained at sigma_t.
DistillationConfig teacher_config(const DistillationConfig &config)
{
  DistillationConfig c = config;
  c.lambda_grad = 0.0;
  c.lambda_o = 0.0;
  c.sigma = config.sigma_t;
  c.validate();
  return c;
}

} // namespace

CompositeLoss composite_student_loss(const StageTrace &student, const StageTrace *teacher, const Matrix &x,
                                     const DistillationConfig &config, const Matrix *zf, TraceAdjoint *adjoint)
{
  config.validate();
  require(config.sigma_t < config.sigma, Errc::invalid_configuration,
          "teacher mismatch sigma_t must be below student sigma");
  return composite_loss(student, teacher, x, config, zf, adjoint);
}

DetectionSample make_detection_sample(const DetectionTask &task, const Matrix &student_unknown,
                                      const Matrix *teacher_unknown, Eigen::Index batch, std::uint64_t seed,
                                      std::optional<double> fixed_snr_db)
{
  Eigen::Index const n = task.signal_size();
  Eigen::Index const m = task.measurement_size();
  require_shape(student_unknown.rows(), student_unknown.cols(), m, n, "unknown channel part");
  if (teacher_unknown) { require_shape(teacher_unknown->rows(), teacher_unknown->cols(), m, n, "teacher unknown part"); }
  require(batch > 0, Errc::invalid_dimension, "batch must be positive");
  require(fixed_snr_db || task.snr_min_db <= task.snr_max_db, Errc::invalid_parameter, "SNR range is reversed");

  DetectionSample out;
  out.symbols = gen_bpsk_batch(n, batch, derive_seed(seed, "symbols"));
  std::vector<ComplexChannel> const channels = gen_channel_batch(task.rx, task.tx, batch, derive_seed(seed, "channels"));
  Vector snr(batch);
  CounterRng rng(derive_seed(seed, "snr"));
  for (Eigen::Index j = 0; j < batch; ++j) {
    snr[j] = fixed_snr_db ? *fixed_snr_db : rng.uniform(task.snr_min_db, task.snr_max_db);
  }

  std::vector<Matrix> known(static_cast<std::size_t>(batch));
  for (Eigen::Index j = 0; j < batch; ++j) { known[static_cast<std::size_t>(j)] = lift_channel(channels[j]); }

  auto view = [&](const Matrix &unknown, const Matrix &xi) {
    Matrix clean(m, batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
      clean.col(j) = (known[static_cast<std::size_t>(j)] + unknown) * out.symbols.col(j);
    }
    Matrix const y = clean + scale_noise(clean, snr, xi);
    return make_detection_batch(known, y);
  };

  Matrix const xi = standard_noise(m, batch, derive_seed(seed, "noise"));
  out.student = view(student_unknown, xi);
  if (teacher_unknown) {
    out.teacher = task.shared_noise ? view(*teacher_unknown, xi)
                                    : view(*teacher_unknown, standard_noise(m, batch, derive_seed(seed, "teacher-noise")));
  }
  return out;
}

TeacherSnapshot train_teacher(const DistillationConfig &config, const ImagingTask &task, std::uint64_t unknown_seed,
                              TrainingLog *log)
{
  TrainedModel model = fit_admm(teacher_config(config), task, config.sigma_t, unknown_seed, teacher_noise_seed(task), nullptr);
  if (log) { *log = std::move(model.log); }
  return {NetworkKind::admm, std::move(model.params), config.sigma_t, config.seed, unknown_seed};
}

TeacherSnapshot train_teacher(const DistillationConfig &config, const DetectionTask &task, std::uint64_t unknown_seed,
                              TrainingLog *log)
{
  TrainedModel model = fit_detnet(teacher_config(config), task, config.sigma_t, unknown_seed, nullptr);
  if (log) { *log = std::move(model.log); }
  return {NetworkKind::detnet, std::move(model.params), config.sigma_t, config.seed, unknown_seed};
}

TrainedModel train_student(const DistillationConfig &config, const TeacherSnapshot *teacher, const ImagingTask &task,
                           std::uint64_t unknown_seed)
{
  check_teacher(config, teacher, NetworkKind::admm);
  return fit_admm(config, task, config.sigma, unknown_seed, task.noise_seed, teacher);
}

TrainedModel train_student(const DistillationConfig &config, const TeacherSnapshot *teacher, const DetectionTask &task,
                           std::uint64_t unknown_seed)
{
  check_teacher(config, teacher, NetworkKind::detnet);
  return fit_detnet(config, task, config.sigma, unknown_seed, teacher);
}

ImagingScores evaluate_imaging(const AdmmParams &params, const ImagingTask &task, const Matrix &images, double sigma,
                               std::uint64_t unknown_seed)
{
  require(images.rows() == task.known.cols(), Errc::invalid_dimension, "evaluation images do not match operator");
  require(params.signal_size() == task.known.cols(), Errc::invalid_dimension, "network does not match operator");
  Matrix const unknown = sample_unknown(task.known.rows(), task.known.cols(), sigma, unknown_seed);
  Matrix const y = measure_images(task.known, unknown, images, task.snr_db, derive_seed(task.noise_seed, "eval"));

  ImagingScores scores;
  scores.per_image_psnr.reserve(static_cast<std::size_t>(images.cols()));
  double ssim_sum = 0.0;
  constexpr Eigen::Index chunk = 250;
  for (Eigen::Index begin = 0; begin < images.cols(); begin += chunk) {
    Eigen::Index const len = std::min(chunk, images.cols() - begin);
    Matrix const est = admm_forward(y.middleCols(begin, len), task.known, params).estimate.cwiseMax(0.0).cwiseMin(1.0);
    for (Eigen::Index j = 0; j < len; ++j) {
      scores.per_image_psnr.push_back(psnr(images.col(begin + j), est.col(j)));
      ssim_sum += ssim(unflatten_image(images.col(begin + j)), unflatten_image(est.col(j)));
    }
  }
  if (!scores.per_image_psnr.empty()) {
    double const count = static_cast<double>(scores.per_image_psnr.size());
    scores.psnr = std::accumulate(scores.per_image_psnr.begin(), scores.per_image_psnr.end(), 0.0) / count;
    scores.ssim = ssim_sum / count;
  }
  return scores;
}

DetectionScores evaluate_detection(const DetNetParams &params, const DetectionTask &task, double sigma,
                                   std::uint64_t unknown_seed, const std::vector<double> &snr_db,
                                   Eigen::Index samples, std::uint64_t seed)
{
  require(params.n == task.signal_size(), Errc::invalid_dimension, "network does not match antenna counts");
  require(samples > 0, Errc::invalid_dimension, "sample count must be positive");
  Matrix const unknown = detection_unknown(task, sigma, unknown_seed);
  DetectionScores scores;
  constexpr Eigen::Index chunk = 1000;
  for (std::size_t k = 0; k < snr_db.size(); ++k) {
    double errors = 0.0;
    for (Eigen::Index begin = 0, part = 0; begin < samples; begin += chunk, ++part) {
      Eigen::Index const len = std::min(chunk, samples - begin);
      std::uint64_t const key = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(k)),
                                            static_cast<std::uint64_t>(part));
      DetectionSample const sample = make_detection_sample(task, unknown, nullptr, len, key, snr_db[k]);
      Matrix const decided = hard_decision(detnet_forward(sample.student, params).estimate);
      errors += ber(sample.symbols, decided) * static_cast<double>(sample.symbols.size());
    }
    scores.snr_db.push_back(snr_db[k]);
    scores.ber.push_back(errors / static_cast<double>(samples * task.signal_size()));
  }
  return scores;
}

namespace {

void fill_uniform(Eigen::Ref<Matrix> m, CounterRng &rng, double lo, double hi)
{
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) { m(i, j) = rng.uniform(lo, hi); }
  }
}

AdmmParams random_admm(Eigen::Index n, int stages, Eigen::Index channels, double lipschitz, bool linear,
                       std::uint64_t seed)
{
  AdmmInit init;
  init.stages = stages;
  init.channels = channels;
  AdmmParams p = init_admm_params(n, lipschitz, init, seed);
  CounterRng rng(derive_seed(seed, "perturb"));
  for (auto &s : p.stages) {
    s.alpha = rng.uniform(0.3, 0.8) / lipschitz;
    s.rho = rng.uniform(0.05, 0.3) * lipschitz;
    fill_uniform(s.denoiser.w1, rng, -0.5, 0.5);
    fill_uniform(s.denoiser.b1, rng, -0.2, 0.2);
    fill_uniform(s.denoiser.w2, rng, -0.3, 0.3);
    s.denoiser.b2 = rng.uniform(-0.1, 0.1);
    if (linear) { s.denoiser.b1.setConstant(50.0); }
  }
  return p;
}

DetNetParams random_detnet(Eigen::Index n, int stages, Eigen::Index hidden, bool linear, std::uint64_t seed)
{
  DetNetInit init;
  init.stages = stages;
  init.hidden = hidden;
  init.aux = n;
  DetNetParams p = init_detnet_params(n, init, seed);
  CounterRng rng(derive_seed(seed, "perturb"));
  for (auto &s : p.stages) {
    fill_uniform(s.b1, rng, -0.1, 0.1);
    fill_uniform(s.b2, rng, -0.1, 0.1);
    fill_uniform(s.b3, rng, -0.1, 0.1);
    if (linear) { s.b1.setConstant(50.0); }
  }
  return p;
}

template <class Params, class LossFn, class GradFn>
GradientCheck compare(Params params, LossFn &&loss_of, GradFn &&grad_of, double eps)
{
  Vector const analytic = pack(grad_of(params));
  Vector const base = pack(params);
  GradientCheck out;
  out.parameters = base.size();
  Vector probe = base;
  for (Eigen::Index k = 0; k < base.size(); ++k) {
    probe[k] = base[k] + eps;
    unpack(probe, params);
    double const up = loss_of(params);
    probe[k] = base[k] - eps;
    unpack(probe, params);
    double const down = loss_of(params);
    probe[k] = base[k];
    double const fd = (up - down) / (2.0 * eps);
    double const denom = std::max({std::abs(analytic[k]), std::abs(fd), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic[k] - fd) / denom);
  }
  return out;
}

} // namespace

GradientCheck verify_gradients(NetworkKind kind, LossKind loss, const GradientCheckInstance &instance, double eps)
{
  require(eps > 0.0 && std::isfinite(eps), Errc::invalid_parameter, "finite-difference step must be positive");
  require(instance.n > 0 && instance.stages > 0 && instance.batch > 0, Errc::invalid_dimension,
          "gradient check sizes must be positive");
  DistillationConfig config;
  config.stages = instance.stages;
  config.lambda_grad = loss == LossKind::composite ? instance.lambda_grad : 0.0;
  config.lambda_o = loss == LossKind::composite ? instance.lambda_o : 0.0;

  std::uint64_t const seed = instance.seed;
  Eigen::Index const n = instance.n;
  Eigen::Index const b = instance.batch;

  if (kind == NetworkKind::admm) {
    auto const side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n))));
    require(side * side == n, Errc::invalid_dimension, "ADMM gradient check needs a square image size");
    Eigen::Index const m = std::max<Eigen::Index>(1, n / 2);
    Matrix const known = standard_noise(m, n, derive_seed(seed, "known")) / std::sqrt(static_cast<double>(m));
    Matrix x(n, b);
    CounterRng rng(derive_seed(seed, "signal"));
    fill_uniform(x, rng, 0.0, 1.0);
    Matrix const y = (known + sample_unknown(m, n, 0.3, derive_seed(seed, "unknown"))) * x;
    Matrix const y_t = (known + sample_unknown(m, n, 0.05, derive_seed(seed, "teacher-unknown"))) * x;
    double const lipschitz = operator_norm_squared(known);
    Eigen::Index const channels = instance.width > 0 ? instance.width : 8;
    AdmmParams const teacher =
      random_admm(n, instance.stages, channels, lipschitz, false, derive_seed(seed, "teacher"));
    StageTrace const teacher_trace = admm_forward(y_t, known, teacher).trace;
    AdmmParams const student =
      random_admm(n, instance.stages, channels, lipschitz, instance.linear, derive_seed(seed, "student"));

    auto loss_of = [&](const AdmmParams &p) {
      return composite_loss(admm_forward(y, known, p).trace, &teacher_trace, x, config, nullptr, nullptr).total;
    };
    auto grad_of = [&](const AdmmParams &p) {
      AdmmForward const fwd = admm_forward(y, known, p);
      TraceAdjoint adjoint(fwd.trace.stages());
      composite_loss(fwd.trace, &teacher_trace, x, config, nullptr, &adjoint);
      return admm_backward(y, known, p, fwd, adjoint);
    };
    return compare(student, loss_of, grad_of, eps);
  }

  Eigen::Index const m = 2 * n;
  Matrix const known = standard_noise(m, n, derive_seed(seed, "known")) / std::sqrt(static_cast<double>(m));
  Matrix const x = gen_bpsk_batch(n, b, derive_seed(seed, "symbols"));
  Matrix const noise = 0.05 * standard_noise(m, b, derive_seed(seed, "noise"));
  Matrix const y = (known + sample_unknown(m, n, 0.3, derive_seed(seed, "unknown"))) * x + noise;
  Matrix const y_t = (known + sample_unknown(m, n, 0.05, derive_seed(seed, "teacher-unknown"))) * x + noise;
  DetectionBatch const batch = make_detection_batch({known}, y);
  DetectionBatch const teacher_batch = make_detection_batch({known}, y_t);
  Matrix const zf = zero_forcing(batch);
  Eigen::Index const hidden = instance.width > 0 ? instance.width : 2 * n;
  DetNetParams const teacher = random_detnet(n, instance.stages, hidden, false, derive_seed(seed, "teacher"));
  StageTrace const teacher_trace = detnet_forward(teacher_batch, teacher).trace;
  DetNetParams const student = random_detnet(n, instance.stages, hidden, instance.linear, derive_seed(seed, "student"));

  auto loss_of = [&](const DetNetParams &p) {
    return composite_loss(detnet_forward(batch, p).trace, &teacher_trace, x, config, &zf, nullptr).total;
  };
  auto grad_of = [&](const DetNetParams &p) {
    DetNetForward const fwd = detnet_forward(batch, p);
    TraceAdjoint adjoint(fwd.trace.stages());
    composite_loss(fwd.trace, &teacher_trace, x, config, &zf, &adjoint);
    return detnet_backward(batch, p, fwd, adjoint);
  };
  return compare(student, loss_of, grad_of, eps);
}

void save_params(const std::filesystem::path &path, const NetworkParams &params)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw Error(Errc::io_error, "cannot open " + path.string() + " for writing"); }
  std::visit(
    [&](const auto &p) {
      if constexpr (std::is_same_v<std::decay_t<decltype(p)>, AdmmParams>) {
        write_admm(out, p);
      } else {
        write_detnet(out, p);
      }
    },
    params);
  if (!out) { throw Error(Errc::io_error, "write failed for " + path.string()); }
}

NetworkParams load_params(const std::filesystem::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw Error(Errc::io_error, "cannot open " + path.string()); }
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4) { throw Error(Errc::length_error, path.string() + " is truncated"); }
  in.seekg(0);
  std::string const tag(magic, 4);
  if (tag == "ADM1") { return read_admm(in); }
  if (tag == "DET1") { return read_detnet(in); }
  throw Error(Errc::format_error, path.string() + " is not a saved network");
}

} // namespace unroll
