#include "unroll/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/core.h>

#include "json.hpp"
#include "unroll/log.hpp"
#include "unroll/random.hpp"
#include "unroll/sensing.hpp"

namespace unroll {

using json = nlohmann::json;

const char *to_string(Scale scale) noexcept { return scale == Scale::paper ? "paper" : "desk"; }

const char *to_string(ExperimentKind kind) noexcept
{
  switch (kind) {
  case ExperimentKind::spc_sweep: return "spc_sweep";
  case ExperimentKind::spc_distill: return "spc_distill";
  case ExperimentKind::mimo_sweep: return "mimo_sweep";
  case ExperimentKind::mimo_distill: return "mimo_distill";
  }
  return "unknown";
}

std::optional<Scale> parse_scale(std::string_view text)
{
  if (text == "desk") { return Scale::desk; }
  if (text == "paper") { return Scale::paper; }
  return std::nullopt;
}

std::optional<ExperimentKind> parse_experiment_kind(std::string_view text)
{
  for (auto kind : {ExperimentKind::spc_sweep, ExperimentKind::spc_distill, ExperimentKind::mimo_sweep,
                    ExperimentKind::mimo_distill}) {
    if (text == to_string(kind)) { return kind; }
  }
  return std::nullopt;
}

const char *to_string(Variant variant) noexcept
{
  switch (variant) {
  case Variant::teacher: return "teacher";
  case Variant::student_distilled: return "student_distilled";
  case Variant::student_baseline: return "student_baseline";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view text)
{
  for (auto v : {Variant::teacher, Variant::student_distilled, Variant::student_baseline}) {
    if (text == to_string(v)) { return v; }
  }
  return std::nullopt;
}

const char *to_string(FigureId figure) noexcept
{
  switch (figure) {
  case FigureId::sigma_psnr: return "sigma_psnr";
  case FigureId::sigma_ber: return "sigma_ber";
  case FigureId::distill_psnr: return "distill_psnr";
  case FigureId::distill_ber: return "distill_ber";
  }
  return "unknown";
}

std::optional<FigureId> parse_figure(std::string_view text)
{
  for (auto f : {FigureId::sigma_psnr, FigureId::sigma_ber, FigureId::distill_psnr, FigureId::distill_ber}) {
    if (text == to_string(f)) { return f; }
  }
  return std::nullopt;
}

// ---- configuration ----

ExperimentConfig ExperimentConfig::preset(ExperimentKind kind, Scale scale)
{
  ExperimentConfig c;
  c.kind = kind;
  c.scale = scale;
  bool const distill = is_distill(kind);
  if (distill) {
    c.sigmas = {0.3, 0.5, 0.7, 0.9};
    c.sigma_ts = {0.0, 0.1, 0.5, 0.7};
  } else {
    c.sigmas = {0.0, 0.3, 0.5, 0.7, 0.9};
  }
  if (is_imaging(kind)) {
    c.lambda_grad = c.lambda_o = 1e-3;
  } else {
    c.lambda_grad = c.lambda_o = 1e-2;
  }
  if (scale == Scale::paper) {
    c.repetitions = 10;
    c.spc.train = 50000;
    c.spc.val = 10000;
    c.spc.test = 10000;
    c.spc.epochs = 50;
    c.spc.batch = 600;
    c.mimo.tx = 15;
    c.mimo.rx = 30;
    c.mimo.stages = 90;
    c.mimo.batch = 5000;
    c.mimo.iterations = 1000;
    c.mimo.eval_samples = 100000;
  }
  return c;
}

void ExperimentConfig::validate() const
{
  std::vector<std::string> bad;
  auto check = [&](bool ok, const char *field) {
    if (!ok) { bad.emplace_back(field); }
  };
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };

  check(schema_version == kSchemaVersion, "schema_version");
  check(repetitions >= 1, "repetitions");
  check(!sigmas.empty() && std::all_of(sigmas.begin(), sigmas.end(), finite_nonneg), "sigmas");
  check(finite_nonneg(lambda_grad), "lambda_grad");
  check(finite_nonneg(lambda_o), "lambda_o");
  if (is_distill(kind)) {
    bool const ok = !sigma_ts.empty() && std::all_of(sigma_ts.begin(), sigma_ts.end(), finite_nonneg);
    check(ok, "sigma_ts");
    bool admissible = false;
    for (double s : sigmas) {
      for (double t : sigma_ts) { admissible = admissible || t < s; }
    }
    check(!ok || admissible, "sigma_ts (no pair with sigma_t < sigma)");
  }
  if (is_imaging(kind)) {
    Eigen::Index const side = spc.side;
    check(side >= 2 && (side & (side - 1)) == 0, "spc.side");
    check(spc.measurements >= 1 && spc.measurements <= side * side, "spc.measurements");
    check(spc.train >= 1, "spc.train");
    check(spc.test >= 1, "spc.test");
    check(spc.epochs >= 1, "spc.epochs");
    check(spc.batch >= 1, "spc.batch");
    check(spc.stages >= 1, "spc.stages");
    check(spc.channels >= 1, "spc.channels");
    check(spc.learning_rate > 0.0, "spc.learning_rate");
    check(spc.alpha_scaled > 0.0, "spc.alpha_scaled");
    check(spc.rho_scaled > 0.0, "spc.rho_scaled");
    check(!spc.snr_db || std::isfinite(*spc.snr_db), "spc.snr_db");
  } else {
    check(mimo.tx >= 1, "mimo.tx");
    check(mimo.rx >= 1, "mimo.rx");
    check(mimo.stages >= 1, "mimo.stages");
    check(mimo.hidden >= 0, "mimo.hidden");
    check(mimo.aux >= 0, "mimo.aux");
    check(mimo.t > 0.0, "mimo.t");
    check(mimo.batch >= 1, "mimo.batch");
    check(mimo.iterations >= 1, "mimo.iterations");
    check(mimo.learning_rate > 0.0, "mimo.learning_rate");
    check(mimo.lr_decay > 0.0, "mimo.lr_decay");
    check(mimo.lr_decay_every >= 0, "mimo.lr_decay_every");
    check(std::isfinite(mimo.snr_min_db) && std::isfinite(mimo.snr_max_db) && mimo.snr_min_db <= mimo.snr_max_db,
          "mimo.snr_min_db/snr_max_db");
    check(!mimo.test_snr_db.empty(), "mimo.test_snr_db");
    check(mimo.eval_samples >= 1, "mimo.eval_samples");
  }
  if (!bad.empty()) {
    std::string msg = "invalid fields:";
    for (auto const &f : bad) { msg += " " + f; }
    throw Error(Errc::invalid_configuration, msg);
  }
}

namespace {

json to_json(const ExperimentConfig &c)
{
  json spc = {{"side", c.spc.side},
              {"measurements", c.spc.measurements},
              {"train", c.spc.train},
              {"val", c.spc.val},
              {"test", c.spc.test},
              {"epochs", c.spc.epochs},
              {"batch", c.spc.batch},
              {"stages", c.spc.stages},
              {"channels", c.spc.channels},
              {"learning_rate", c.spc.learning_rate},
              {"alpha_scaled", c.spc.alpha_scaled},
              {"rho_scaled", c.spc.rho_scaled},
              {"snr_db", c.spc.snr_db ? json(*c.spc.snr_db) : json(nullptr)},
              {"split_seed", c.spc.split_seed}};
  json mimo = {{"tx", c.mimo.tx},
               {"rx", c.mimo.rx},
               {"stages", c.mimo.stages},
               {"hidden", c.mimo.hidden},
               {"aux", c.mimo.aux},
               {"t", c.mimo.t},
               {"batch", c.mimo.batch},
               {"iterations", c.mimo.iterations},
               {"learning_rate", c.mimo.learning_rate},
               {"lr_decay", c.mimo.lr_decay},
               {"lr_decay_every", c.mimo.lr_decay_every},
               {"snr_min_db", c.mimo.snr_min_db},
               {"snr_max_db", c.mimo.snr_max_db},
               {"test_snr_db", c.mimo.test_snr_db},
               {"eval_samples", c.mimo.eval_samples}};
  return {{"schema_version", c.schema_version},
          {"experiment", to_string(c.kind)},
          {"scale", to_string(c.scale)},
          {"seed", c.seed},
          {"sigmas", c.sigmas},
          {"sigma_ts", c.sigma_ts},
          {"repetitions", c.repetitions},
          {"lambda_grad", c.lambda_grad},
          {"lambda_o", c.lambda_o},
          {"shared_noise", c.shared_noise},
          {"spc", spc},
          {"mimo", mimo}};
}

// Strict reader over one JSON object: every key must be consumed.
class Fields {
public:
  Fields(const json &obj, std::string prefix, std::vector<std::string> &errors)
    : obj_(obj)
    , prefix_(std::move(prefix))
    , errors_(errors)
  {
    if (!obj_.is_object()) { errors_.push_back(prefix_.empty() ? "<root> must be an object" : prefix_ + " must be an object"); }
  }

  template <class T> void read(const char *key, T &target)
  {
    if (!obj_.is_object() || !obj_.contains(key)) { return; }
    seen_.insert(key);
    try {
      target = obj_.at(key).get<T>();
    } catch (const json::exception &) {
      errors_.push_back(name(key) + " has the wrong type");
    }
  }

  void read_optional(const char *key, std::optional<double> &target)
  {
    if (!obj_.is_object() || !obj_.contains(key)) { return; }
    seen_.insert(key);
    json const &v = obj_.at(key);
    if (v.is_null()) {
      target.reset();
    } else if (v.is_number()) {
      target = v.get<double>();
    } else {
      errors_.push_back(name(key) + " must be a number or null");
    }
  }

  const json *child(const char *key)
  {
    if (!obj_.is_object() || !obj_.contains(key)) { return nullptr; }
    seen_.insert(key);
    return &obj_.at(key);
  }

  void mark(const char *key) { seen_.insert(key); }

  void finish()
  {
    if (!obj_.is_object()) { return; }
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) { errors_.push_back("unknown key " + name(it.key().c_str())); }
    }
  }

private:
  std::string name(const char *key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const json &obj_;
  std::string prefix_;
  std::vector<std::string> &errors_;
  std::set<std::string> seen_;
};

std::string format_double(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_optional(const std::optional<double> &v) { return v ? format_double(*v) : std::string(); }

std::string tag_value(double v) { return fmt::format("{:.2f}", v); }

} // namespace

std::string ExperimentConfig::canonical_json() const { return to_json(*this).dump(); }

std::string ExperimentConfig::hash() const { return sha256_hex(canonical_json()); }

DistillationConfig ExperimentConfig::training_config(double sigma, double sigma_t, bool distilled) const
{
  DistillationConfig d;
  d.sigma = sigma;
  d.sigma_t = sigma_t;
  d.lambda_grad = distilled ? lambda_grad : 0.0;
  d.lambda_o = distilled ? lambda_o : 0.0;
  if (is_imaging(kind)) {
    d.stages = spc.stages;
    d.epochs = spc.epochs;
    d.batch = spc.batch;
    d.learning_rate = spc.learning_rate;
  } else {
    d.stages = mimo.stages;
    d.iterations = mimo.iterations;
    d.batch = mimo.batch;
    d.learning_rate = mimo.learning_rate;
    d.lr_decay = mimo.lr_decay;
    d.lr_decay_every = mimo.lr_decay_every;
  }
  return d;
}

ExperimentConfig parse_experiment_config(std::string_view json_text, ExperimentKind fallback_kind,
                                         std::optional<Scale> scale_override)
{
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error &e) {
    throw Error(Errc::invalid_configuration, std::string("config is not valid JSON: ") + e.what());
  }
  std::vector<std::string> errors;
  ExperimentKind kind = fallback_kind;
  Scale scale = Scale::desk;
  if (root.is_object() && root.contains("experiment")) {
    auto const &v = root.at("experiment");
    auto parsed = v.is_string() ? parse_experiment_kind(v.get<std::string>()) : std::nullopt;
    if (parsed) {
      kind = *parsed;
    } else {
      errors.emplace_back("experiment must be one of spc_sweep, spc_distill, mimo_sweep, mimo_distill");
    }
  }
  if (root.is_object() && root.contains("scale")) {
    auto const &v = root.at("scale");
    auto parsed = v.is_string() ? parse_scale(v.get<std::string>()) : std::nullopt;
    if (parsed) {
      scale = *parsed;
    } else {
      errors.emplace_back("scale must be desk or paper");
    }
  }
  if (scale_override) { scale = *scale_override; }

  ExperimentConfig c = ExperimentConfig::preset(kind, scale);
  Fields top(root, "", errors);
  top.mark("experiment");
  top.mark("scale");
  if (!root.is_object() || !root.contains("schema_version")) {
    errors.emplace_back("schema_version is required");
  }
  top.read("schema_version", c.schema_version);
  top.read("seed", c.seed);
  top.read("sigmas", c.sigmas);
  top.read("sigma_ts", c.sigma_ts);
  top.read("repetitions", c.repetitions);
  top.read("lambda_grad", c.lambda_grad);
  top.read("lambda_o", c.lambda_o);
  top.read("shared_noise", c.shared_noise);
  if (const json *dir = top.child("data_dir")) {
    if (dir->is_string()) {
      c.data_dir = std::filesystem::path(dir->get<std::string>());
    } else if (!dir->is_null()) {
      errors.emplace_back("data_dir must be a string or null");
    }
  }
  if (const json *spc = top.child("spc")) {
    Fields f(*spc, "spc", errors);
    f.read("side", c.spc.side);
    f.read("measurements", c.spc.measurements);
    f.read("train", c.spc.train);
    f.read("val", c.spc.val);
    f.read("test", c.spc.test);
    f.read("epochs", c.spc.epochs);
    f.read("batch", c.spc.batch);
    f.read("stages", c.spc.stages);
    f.read("channels", c.spc.channels);
    f.read("learning_rate", c.spc.learning_rate);
    f.read("alpha_scaled", c.spc.alpha_scaled);
    f.read("rho_scaled", c.spc.rho_scaled);
    f.read_optional("snr_db", c.spc.snr_db);
    f.read("split_seed", c.spc.split_seed);
    f.finish();
  }
  if (const json *mimo = top.child("mimo")) {
    Fields f(*mimo, "mimo", errors);
    f.read("tx", c.mimo.tx);
    f.read("rx", c.mimo.rx);
    f.read("stages", c.mimo.stages);
    f.read("hidden", c.mimo.hidden);
    f.read("aux", c.mimo.aux);
    f.read("t", c.mimo.t);
    f.read("batch", c.mimo.batch);
    f.read("iterations", c.mimo.iterations);
    f.read("learning_rate", c.mimo.learning_rate);
    f.read("lr_decay", c.mimo.lr_decay);
    f.read("lr_decay_every", c.mimo.lr_decay_every);
    f.read("snr_min_db", c.mimo.snr_min_db);
    f.read("snr_max_db", c.mimo.snr_max_db);
    f.read("test_snr_db", c.mimo.test_snr_db);
    f.read("eval_samples", c.mimo.eval_samples);
    f.finish();
  }
  top.finish();
  if (!errors.empty()) {
    std::string msg = "config rejected:";
    for (auto const &e : errors) { msg += "\n  " + e; }
    throw Error(Errc::invalid_configuration, msg);
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path &path, ExperimentKind fallback_kind,
                                        std::optional<Scale> scale_override)
{
  std::ifstream in(path);
  if (!in) { throw Error(Errc::io_error, "cannot read config " + path.string()); }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), fallback_kind, scale_override);
}

std::string sha256_hex(std::string_view data)
{
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::io_error, "SHA-256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) { hex += fmt::format("{:02x}", digest[i]); }
  return hex;
}

RepetitionSeeds repetition_seeds(std::uint64_t seed, int repetition)
{
  auto const r = static_cast<std::uint64_t>(repetition);
  return {derive_seed(derive_seed(seed, "unknown"), r), derive_seed(derive_seed(seed, "teacher-unknown"), r),
          derive_seed(derive_seed(seed, "train"), r), derive_seed(derive_seed(seed, "teacher-train"), r),
          derive_seed(derive_seed(seed, "noise"), r)};
}

// ---- result table ----

void ResultTable::write_csv(std::ostream &out, bool header) const
{
  if (header) { out << "config_hash,experiment,variant,sigma,sigma_t,snr_db,repetition,seed,metric,value\n"; }
  for (auto const &r : records) {
    out << r.config_hash << ',' << r.experiment << ',' << to_string(r.variant) << ',' << format_double(r.sigma) << ','
        << format_optional(r.sigma_t) << ',' << format_optional(r.snr_db) << ',' << r.repetition << ',' << r.seed
        << ',' << r.metric << ',' << format_double(r.value) << '\n';
  }
}

void ResultTable::write_timings(std::ostream &out, bool header) const
{
  if (header) { out << "config_hash,variant,sigma,sigma_t,repetition,metric,wall_ms\n"; }
  for (auto const &r : records) {
    out << r.config_hash << ',' << to_string(r.variant) << ',' << format_double(r.sigma) << ','
        << format_optional(r.sigma_t) << ',' << r.repetition << ',' << r.metric << ','
        << fmt::format("{:.3f}", r.wall_ms) << '\n';
  }
}

ResultTable ResultTable::read_csv(std::istream &in)
{
  ResultTable table;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string &why) {
    throw Error(Errc::format_error, "results line " + std::to_string(line_no) + ": " + why);
  };
  auto number = [&](const std::string &s) {
    try {
      std::size_t used = 0;
      double const v = std::stod(s, &used);
      if (used != s.size()) { fail("bad number '" + s + "'"); }
      return v;
    } catch (const std::logic_error &) {
      fail("bad number '" + s + "'");
    }
    return 0.0;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) { continue; }
    if (line.rfind("config_hash,", 0) == 0) { continue; }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) { cells.push_back(cell); }
    if (!line.empty() && line.back() == ',') { cells.emplace_back(); }
    if (cells.size() != 10) { fail("expected 10 columns, got " + std::to_string(cells.size())); }
    ResultRecord r;
    r.config_hash = cells[0];
    r.experiment = cells[1];
    auto const variant = parse_variant(cells[2]);
    if (!variant) { fail("unknown variant '" + cells[2] + "'"); }
    r.variant = *variant;
    r.sigma = number(cells[3]);
    if (!cells[4].empty()) { r.sigma_t = number(cells[4]); }
    if (!cells[5].empty()) { r.snr_db = number(cells[5]); }
    r.repetition = static_cast<int>(number(cells[6]));
    try {
      r.seed = std::stoull(cells[7]);
    } catch (const std::logic_error &) {
      fail("bad seed '" + cells[7] + "'");
    }
    r.metric = cells[8];
    r.value = number(cells[9]);
    table.records.push_back(std::move(r));
  }
  return table;
}

// ---- runners ----

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since)
{
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

template <class Fn> void parallel_for(std::size_t count, int threads, Fn &&fn)
{
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  auto worker = [&] {
    for (;;) {
      std::size_t const i = next++;
      if (i >= count) { return; }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  auto const workers = static_cast<std::size_t>(std::clamp<long>(threads, 1, static_cast<long>(std::max<std::size_t>(count, 1))));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) { pool.emplace_back(worker); }
  }
  for (auto const &e : errors) {
    if (e) { std::rethrow_exception(e); }
  }
}

// Shared read-only state of one experiment.
struct Context {
  const ExperimentConfig &config;
  std::string hash;
  std::string data_source;
  ImagingTask imaging;
  DetectionTask detection;
  std::filesystem::path models;
};

Context make_context(const ExperimentConfig &config, const RunOptions &options)
{
  config.validate();
  Context ctx{config, config.hash(), "generated", {}, {}, options.out_dir / "models"};
  if (is_imaging(config.kind)) {
    auto const &s = config.spc;
    ctx.imaging.known = build_hadamard_cake_cutting(s.side * s.side, s.measurements);
    auto data = std::make_shared<ImageDataset>(
      load_image_dataset(resolve_data_dir(config.data_dir), {s.train, s.val, s.test}, s.split_seed));
    ctx.data_source = data->source;
    ctx.imaging.data = std::move(data);
    ctx.imaging.channels = s.channels;
    ctx.imaging.init.alpha_scaled = s.alpha_scaled;
    ctx.imaging.init.rho_scaled = s.rho_scaled;
    ctx.imaging.snr_db = s.snr_db;
    ctx.imaging.shared_noise = config.shared_noise;
  } else {
    auto const &s = config.mimo;
    ctx.detection.tx = s.tx;
    ctx.detection.rx = s.rx;
    ctx.detection.snr_min_db = s.snr_min_db;
    ctx.detection.snr_max_db = s.snr_max_db;
    ctx.detection.hidden = s.hidden;
    ctx.detection.aux = s.aux;
    ctx.detection.t = s.t;
    ctx.detection.shared_noise = config.shared_noise;
  }
  return ctx;
}

ImagingTask imaging_task(const Context &ctx, int repetition)
{
  ImagingTask task = ctx.imaging;
  task.noise_seed = repetition_seeds(ctx.config.seed, repetition).noise;
  return task;
}

std::vector<ResultRecord> score(const Context &ctx, const NetworkParams &params, double sigma,
                                std::optional<double> sigma_t, int repetition, std::uint64_t unknown_seed,
                                Variant variant, std::uint64_t seed)
{
  ResultRecord base;
  base.config_hash = ctx.hash;
  base.experiment = to_string(ctx.config.kind);
  base.variant = variant;
  base.sigma = sigma;
  base.sigma_t = sigma_t;
  base.repetition = repetition;
  base.seed = seed;
  std::vector<ResultRecord> out;
  if (is_imaging(ctx.config.kind)) {
    ImagingTask const task = imaging_task(ctx, repetition);
    ImagingScores const s =
      evaluate_imaging(std::get<AdmmParams>(params), task, task.data->test, sigma, unknown_seed);
    out.push_back(base);
    out.back().metric = "psnr";
    out.back().value = s.psnr;
    out.push_back(base);
    out.back().metric = "ssim";
    out.back().value = s.ssim;
  } else {
    auto const &m = ctx.config.mimo;
    DetectionScores const s = evaluate_detection(std::get<DetNetParams>(params), ctx.detection, sigma, unknown_seed,
                                                 m.test_snr_db, m.eval_samples, derive_seed(ctx.config.seed, "eval"));
    for (std::size_t k = 0; k < s.ber.size(); ++k) {
      out.push_back(base);
      out.back().snr_db = s.snr_db[k];
      out.back().metric = "ber";
      out.back().value = s.ber[k];
    }
  }
  return out;
}

TrainedModel train_student_cell(const Context &ctx, const DistillationConfig &dc, const TeacherSnapshot *teacher,
                                std::uint64_t unknown_seed, int repetition)
{
  if (is_imaging(ctx.config.kind)) { return train_student(dc, teacher, imaging_task(ctx, repetition), unknown_seed); }
  return train_student(dc, teacher, ctx.detection, unknown_seed);
}

std::filesystem::path model_path(const Context &ctx, const std::string &stem)
{
  return ctx.models / fmt::format("{}_{}.bin", ctx.hash.substr(0, 12), stem);
}

void save_model(const Context &ctx, const std::string &stem, const NetworkParams &params)
{
  std::error_code ec;
  std::filesystem::create_directories(ctx.models, ec);
  if (ec) { throw Error(Errc::io_error, "cannot create " + ctx.models.string() + ": " + ec.message()); }
  save_params(model_path(ctx, stem), params);
}

void stamp(std::vector<ResultRecord> &records, double ms)
{
  for (auto &r : records) { r.wall_ms = ms; }
}

void append(ResultTable &table, std::vector<std::vector<ResultRecord>> &cells)
{
  for (auto &cell : cells) {
    for (auto &r : cell) { table.records.push_back(std::move(r)); }
  }
}

struct TeacherCell {
  double sigma_t;
  int repetition;
};

// Trains or loads every teacher; fills records with their own-operator scores.
std::vector<TeacherSnapshot> teachers_for(const Context &ctx, const RunOptions &options,
                                          const std::vector<TeacherCell> &cells, ResultTable &table)
{
  std::vector<TeacherSnapshot> snapshots(cells.size());
  std::vector<std::vector<ResultRecord>> records(cells.size());
  NetworkKind const kind = is_imaging(ctx.config.kind) ? NetworkKind::admm : NetworkKind::detnet;
  parallel_for(cells.size(), options.threads, [&](std::size_t i) {
    auto const [sigma_t, rep] = cells[i];
    auto const seeds = repetition_seeds(ctx.config.seed, rep);
    std::string const stem = fmt::format("teacher_st{}_r{}", tag_value(sigma_t), rep);
    auto const path = model_path(ctx, stem);
    auto const t0 = Clock::now();
    TeacherSnapshot snap;
    if (std::filesystem::exists(path)) {
      log::info("loading teacher sigma_t={} rep={} from {}", sigma_t, rep, path.string());
      snap = {kind, load_params(path), sigma_t, seeds.teacher_train, seeds.teacher_unknown};
      require(static_cast<int>(snap.params.index()) == static_cast<int>(kind), Errc::format_error,
              path.string() + " holds the wrong network kind");
    } else {
      log::info("training teacher sigma_t={} rep={}", sigma_t, rep);
      DistillationConfig dc = ctx.config.training_config(sigma_t, sigma_t, false);
      dc.seed = seeds.teacher_train;
      snap = is_imaging(ctx.config.kind) ? train_teacher(dc, imaging_task(ctx, rep), seeds.teacher_unknown)
                                         : train_teacher(dc, ctx.detection, seeds.teacher_unknown);
      save_model(ctx, stem, snap.params);
    }
    records[i] = score(ctx, snap.params, sigma_t, sigma_t, rep, seeds.teacher_unknown, Variant::teacher,
                       seeds.teacher_train);
    stamp(records[i], elapsed_ms(t0));
    snapshots[i] = std::move(snap);
  });
  append(table, records);
  return snapshots;
}

std::vector<TeacherCell> teacher_cells(const ExperimentConfig &config)
{
  std::vector<TeacherCell> cells;
  double const max_sigma = *std::max_element(config.sigmas.begin(), config.sigmas.end());
  for (int rep = 0; rep < config.repetitions; ++rep) {
    for (double st : config.sigma_ts) {
      if (st < max_sigma) { cells.push_back({st, rep}); }
    }
  }
  return cells;
}

} // namespace

ResultTable run_sigma_sweep(const ExperimentConfig &config, const RunOptions &options)
{
  require(!is_distill(config.kind), Errc::invalid_configuration,
          std::string("sweep-sigma needs a sweep experiment, got ") + to_string(config.kind));
  Context const ctx = make_context(config, options);
  struct Cell {
    double sigma;
    int repetition;
  };
  std::vector<Cell> cells;
  for (int rep = 0; rep < config.repetitions; ++rep) {
    for (double s : config.sigmas) { cells.push_back({s, rep}); }
  }
  std::vector<std::vector<ResultRecord>> records(cells.size());
  parallel_for(cells.size(), options.threads, [&](std::size_t i) {
    auto const [sigma, rep] = cells[i];
    auto const seeds = repetition_seeds(config.seed, rep);
    log::info("sweep sigma={} rep={}", sigma, rep);
    auto const t0 = Clock::now();
    DistillationConfig dc = config.training_config(sigma, 0.0, false);
    dc.seed = seeds.train;
    TrainedModel const model = train_student_cell(ctx, dc, nullptr, seeds.unknown, rep);
    save_model(ctx, fmt::format("baseline_s{}_r{}", tag_value(sigma), rep), model.params);
    records[i] = score(ctx, model.params, sigma, std::nullopt, rep, seeds.unknown, Variant::student_baseline,
                       seeds.train);
    stamp(records[i], elapsed_ms(t0));
  });
  ResultTable table;
  table.data_source = ctx.data_source;
  append(table, records);
  return table;
}

ResultTable train_teachers(const ExperimentConfig &config, const RunOptions &options)
{
  require(is_distill(config.kind), Errc::invalid_configuration,
          std::string("train-teacher needs a distill experiment, got ") + to_string(config.kind));
  Context const ctx = make_context(config, options);
  ResultTable table;
  table.data_source = ctx.data_source;
  teachers_for(ctx, options, teacher_cells(config), table);
  return table;
}

ResultTable run_distill_grid(const ExperimentConfig &config, const RunOptions &options)
{
  require(is_distill(config.kind), Errc::invalid_configuration,
          std::string("distill-grid needs a distill experiment, got ") + to_string(config.kind));
  Context const ctx = make_context(config, options);
  ResultTable table;
  table.data_source = ctx.data_source;
  auto const tcells = teacher_cells(config);
  std::vector<TeacherSnapshot> const teachers = teachers_for(ctx, options, tcells, table);

  // Baselines do not depend on sigma_t: one per (sigma, repetition).
  struct Cell {
    double sigma;
    int repetition;
    std::optional<std::size_t> teacher;
  };
  std::vector<Cell> cells;
  for (int rep = 0; rep < config.repetitions; ++rep) {
    for (double s : config.sigmas) {
      cells.push_back({s, rep, std::nullopt});
      for (std::size_t t = 0; t < tcells.size(); ++t) {
        if (tcells[t].repetition == rep && tcells[t].sigma_t < s) { cells.push_back({s, rep, t}); }
      }
    }
  }
  std::vector<std::vector<ResultRecord>> records(cells.size());
  parallel_for(cells.size(), options.threads, [&](std::size_t i) {
    auto const &cell = cells[i];
    auto const seeds = repetition_seeds(config.seed, cell.repetition);
    auto const t0 = Clock::now();
    TeacherSnapshot const *teacher = cell.teacher ? &teachers[*cell.teacher] : nullptr;
    double const sigma_t = teacher ? teacher->sigma_t : 0.0;
    log::info("{} sigma={} sigma_t={} rep={}", teacher ? "distilled" : "baseline", cell.sigma,
              teacher ? tag_value(sigma_t) : std::string("-"), cell.repetition);
    DistillationConfig dc = config.training_config(cell.sigma, sigma_t, teacher != nullptr);
    dc.seed = seeds.train;
    TrainedModel const model = train_student_cell(ctx, dc, teacher, seeds.unknown, cell.repetition);
    std::string const stem =
      teacher ? fmt::format("distilled_s{}_st{}_r{}", tag_value(cell.sigma), tag_value(sigma_t), cell.repetition)
              : fmt::format("baseline_s{}_r{}", tag_value(cell.sigma), cell.repetition);
    save_model(ctx, stem, model.params);
    records[i] = score(ctx, model.params, cell.sigma, teacher ? std::optional<double>(sigma_t) : std::nullopt,
                       cell.repetition, seeds.unknown,
                       teacher ? Variant::student_distilled : Variant::student_baseline, seeds.train);
    stamp(records[i], elapsed_ms(t0));
  });
  append(table, records);
  return table;
}

ResultTable evaluate_saved(const ExperimentConfig &config, const NetworkParams &params, double sigma, int repetition,
                           Variant variant)
{
  require(repetition >= 0, Errc::invalid_parameter, "repetition must be >= 0");
  require(std::isfinite(sigma) && sigma >= 0.0, Errc::invalid_parameter, "sigma must be >= 0");
  bool const admm = std::holds_alternative<AdmmParams>(params);
  require(admm == is_imaging(config.kind), Errc::invalid_configuration,
          "saved network kind does not match the experiment");
  RunOptions const options;
  Context const ctx = make_context(config, options);
  auto const seeds = repetition_seeds(config.seed, repetition);
  bool const teacher = variant == Variant::teacher;
  auto const t0 = Clock::now();
  ResultTable table;
  table.data_source = ctx.data_source;
  table.records = score(ctx, params, sigma, teacher ? std::optional<double>(sigma) : std::nullopt, repetition,
                        teacher ? seeds.teacher_unknown : seeds.unknown, variant,
                        teacher ? seeds.teacher_train : seeds.train);
  stamp(table.records, elapsed_ms(t0));
  return table;
}

// ---- persistence ----

namespace {

std::string git_revision()
{
  std::string out;
  if (FILE *pipe = popen("git rev-parse HEAD 2>/dev/null", "r")) {
    char buf[128];
    while (std::fgets(buf, sizeof buf, pipe)) { out += buf; }
    pclose(pipe);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) { out.pop_back(); }
  return out.empty() ? "unknown" : out;
}

void append_file(const std::filesystem::path &path, const std::function<void(std::ostream &, bool)> &write)
{
  bool const fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) { throw Error(Errc::io_error, "cannot write " + path.string()); }
  write(out, fresh);
  if (!out) { throw Error(Errc::io_error, "write failed for " + path.string()); }
}

} // namespace

void persist_results(const ResultTable &table, const ExperimentConfig &config, const RunOptions &options,
                     std::string_view verb)
{
  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec || !std::filesystem::is_directory(options.out_dir)) {
    throw Error(Errc::io_error, "cannot create output directory " + options.out_dir.string());
  }
  append_file(options.out_dir / "results.csv", [&](std::ostream &o, bool h) { table.write_csv(o, h); });
  append_file(options.out_dir / "timings.csv", [&](std::ostream &o, bool h) { table.write_timings(o, h); });

  json seeds = json::array();
  for (int rep = 0; rep < config.repetitions; ++rep) {
    auto const s = repetition_seeds(config.seed, rep);
    seeds.push_back({{"repetition", rep},
                     {"unknown", s.unknown},
                     {"teacher_unknown", s.teacher_unknown},
                     {"train", s.train},
                     {"teacher_train", s.teacher_train},
                     {"noise", s.noise}});
  }
  json const manifest = {{"verb", std::string(verb)},
                         {"config", to_json(config)},
                         {"config_hash", config.hash()},
                         {"git_revision", git_revision()},
                         {"seed", config.seed},
                         {"repetition_seeds", seeds},
                         {"data_source", table.data_source},
                         {"records", table.records.size()},
                         {"psnr_aggregation", "mean of per-image PSNR over the test split"},
                         {"image_estimates", "clipped to [0, 1] before scoring"},
                         {"files", {"results.csv", "timings.csv"}}};
  std::ofstream out(options.out_dir / "manifest.json");
  if (!out) { throw Error(Errc::io_error, "cannot write manifest in " + options.out_dir.string()); }
  out << manifest.dump(2) << '\n';
}

// ---- plot data ----

namespace {

struct Series {
  std::map<double, std::vector<double>> points;
};

struct FigureSpec {
  const char *x_name;
  const char *x_units;
  const char *y_name;
  const char *y_scale;
};

FigureSpec figure_spec(FigureId figure)
{
  switch (figure) {
  case FigureId::sigma_psnr: return {"sigma", "", "psnr_db | ssim", "linear"};
  case FigureId::sigma_ber: return {"snr_db", "dB", "ber", "log"};
  case FigureId::distill_psnr: return {"sigma", "", "psnr_db", "linear"};
  case FigureId::distill_ber: return {"snr_db", "dB", "ber", "log"};
  }
  return {"", "", "", "linear"};
}

std::string series_label(const ResultRecord &r, FigureId figure)
{
  switch (figure) {
  case FigureId::sigma_psnr: return r.metric;
  case FigureId::sigma_ber: return "sigma=" + tag_value(r.sigma);
  case FigureId::distill_psnr:
    return r.variant == Variant::student_baseline ? std::string("baseline") : "sigma_t=" + tag_value(*r.sigma_t);
  case FigureId::distill_ber:
    return "sigma=" + tag_value(r.sigma) +
           (r.variant == Variant::student_baseline ? std::string(" baseline") : " sigma_t=" + tag_value(*r.sigma_t));
  }
  return "";
}

bool selected(const ResultRecord &r, FigureId figure)
{
  switch (figure) {
  case FigureId::sigma_psnr:
    return r.experiment == "spc_sweep" && (r.metric == "psnr" || r.metric == "ssim");
  case FigureId::sigma_ber: return r.experiment == "mimo_sweep" && r.metric == "ber" && r.snr_db.has_value();
  case FigureId::distill_psnr:
    return r.experiment == "spc_distill" && r.metric == "psnr" && r.variant != Variant::teacher;
  case FigureId::distill_ber:
    return r.experiment == "mimo_distill" && r.metric == "ber" && r.snr_db.has_value() &&
           r.variant != Variant::teacher;
  }
  return false;
}

} // namespace

PlotOutput emit_plot_data(const ResultTable &table, FigureId figure, const std::filesystem::path &out_dir)
{
  bool const over_snr = figure == FigureId::sigma_ber || figure == FigureId::distill_ber;
  std::map<std::string, Series> series;
  std::set<double> sigmas;
  std::set<double> sigma_ts;
  std::set<std::pair<double, double>> present;
  for (auto const &r : table.records) {
    if (!selected(r, figure)) { continue; }
    double const x = over_snr ? *r.snr_db : r.sigma;
    series[series_label(r, figure)].points[x].push_back(r.value);
    sigmas.insert(r.sigma);
    if (r.variant == Variant::student_distilled && r.sigma_t) {
      sigma_ts.insert(*r.sigma_t);
      present.insert({r.sigma, *r.sigma_t});
    }
  }
  if (series.empty()) {
    throw Error(Errc::invalid_parameter, std::string("no results for figure ") + to_string(figure));
  }

  PlotOutput out;
  if (figure == FigureId::distill_psnr || figure == FigureId::distill_ber) {
    for (double s : sigmas) {
      for (double t : sigma_ts) {
        if (t < s && !present.count({s, t})) {
          out.missing.push_back("(sigma=" + tag_value(s) + ", sigma_t=" + tag_value(t) + ")");
        }
      }
    }
    if (!out.missing.empty()) {
      std::string list;
      for (auto const &m : out.missing) { list += " " + m; }
      log::warn("partial data for {}: missing{}", to_string(figure), list);
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) { throw Error(Errc::io_error, "cannot create " + out_dir.string()); }
  std::string const stem = to_string(figure);
  FigureSpec const spec = figure_spec(figure);

  auto const csv_path = out_dir / (stem + ".csv");
  auto const dat_path = out_dir / (stem + ".dat");
  auto const schema_path = out_dir / (stem + ".schema.json");
  std::ofstream csv(csv_path);
  std::ofstream dat(dat_path);
  if (!csv || !dat) { throw Error(Errc::io_error, "cannot write plot data in " + out_dir.string()); }
  csv << "series," << spec.x_name << ",mean,std,count\n";
  bool first = true;
  for (auto const &[label, s] : series) {
    if (!first) { dat << "\n\n"; }
    first = false;
    dat << "# series: " << label << "\n# " << spec.x_name << " mean std count\n";
    for (auto const &[x, values] : s.points) {
      double mean = 0.0;
      for (double v : values) { mean += v; }
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) { var += (v - mean) * (v - mean); }
      double const sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
      csv << label << ',' << format_double(x) << ',' << format_double(mean) << ',' << format_double(sd) << ','
          << values.size() << '\n';
      dat << format_double(x) << ' ' << format_double(mean) << ' ' << format_double(sd) << ' ' << values.size()
          << '\n';
    }
  }
  json labels = json::array();
  for (auto const &[label, s] : series) { labels.push_back(label); }
  json const schema = {
    {"figure", stem},
    {"files", {{"csv", csv_path.filename().string()}, {"gnuplot", dat_path.filename().string()}}},
    {"columns",
     {{{"name", "series"}, {"description", "curve label"}},
      {{"name", spec.x_name}, {"description", "horizontal axis"}, {"units", spec.x_units}},
      {{"name", "mean"}, {"description", std::string("mean of ") + spec.y_name + " over repetitions"}},
      {{"name", "std"}, {"description", "sample standard deviation over repetitions (0 for one)"}},
      {{"name", "count"}, {"description", "number of repetitions"}}}},
    {"gnuplot_layout", "one index block per series, separated by two blank lines, in csv series order"},
    {"y_scale", spec.y_scale},
    {"series", labels},
    {"missing_cells", out.missing}};
  std::ofstream schema_out(schema_path);
  if (!schema_out) { throw Error(Errc::io_error, "cannot write " + schema_path.string()); }
  schema_out << schema.dump(2) << '\n';
  out.files = {csv_path, dat_path, schema_path};
  return out;
}

} // namespace unroll
