#include <doctest.h>

#include "unroll/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace unroll;
namespace fs = std::filesystem;

namespace {

const char *kTinySpc = R"({"schema_version":1,"experiment":"spc_distill","sigmas":[0.3],"sigma_ts":[0.0],
  "repetitions":1,"spc":{"train":200,"val":50,"test":100,"epochs":1,"batch":50,"stages":3,"channels":4}})";

const char *kTinySweep = R"({"schema_version":1,"experiment":"spc_sweep","sigmas":[0.0,0.5],"repetitions":1,
  "spc":{"train":200,"val":50,"test":60,"epochs":1,"batch":50,"stages":2,"channels":4}})";

const char *kTinyMimo = R"({"schema_version":1,"experiment":"mimo_distill","sigmas":[0.5],"sigma_ts":[0.0],
  "repetitions":1,"mimo":{"tx":2,"rx":4,"stages":3,"batch":50,"iterations":20,"eval_samples":500,
  "test_snr_db":[7,13]}})";

std::string slurp(const fs::path &p)
{
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const char *name)
{
  fs::path const dir = fs::temp_directory_path() / (std::string("unroll_exp_") + name);
  fs::remove_all(dir);
  return dir;
}

Errc code_of(const std::function<void()> &f)
{
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  return Errc::io_error;
}

ResultRecord record(const char *experiment, Variant v, double sigma, std::optional<double> st, int rep,
                    const char *metric, double value, std::optional<double> snr = std::nullopt)
{
  ResultRecord r;
  r.config_hash = "abc";
  r.experiment = experiment;
  r.variant = v;
  r.sigma = sigma;
  r.sigma_t = st;
  r.snr_db = snr;
  r.repetition = rep;
  r.seed = 7;
  r.metric = metric;
  r.value = value;
  return r;
}

int run_cli(const std::string &args)
{
  std::string const cmd = std::string(UNROLL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int const status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("SHA-256 known vectors")
{
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("presets")
{
  auto const spc = ExperimentConfig::preset(ExperimentKind::spc_distill, Scale::paper);
  CHECK(spc.sigmas == std::vector<double>{0.3, 0.5, 0.7, 0.9});
  CHECK(spc.sigma_ts == std::vector<double>{0.0, 0.1, 0.5, 0.7});
  CHECK(spc.repetitions == 10);
  CHECK(spc.spc.train == 50000);
  CHECK(spc.spc.batch == 600);
  CHECK(spc.spc.epochs == 50);
  CHECK(spc.lambda_grad == 1e-3);

  auto const mimo = ExperimentConfig::preset(ExperimentKind::mimo_sweep, Scale::paper);
  CHECK(mimo.sigmas == std::vector<double>{0.0, 0.3, 0.5, 0.7, 0.9});
  CHECK(mimo.mimo.tx == 15);
  CHECK(mimo.mimo.rx == 30);
  CHECK(mimo.mimo.stages == 90);
  CHECK(mimo.lambda_o == 1e-2);
  for (auto kind : {ExperimentKind::spc_sweep, ExperimentKind::spc_distill, ExperimentKind::mimo_sweep,
                    ExperimentKind::mimo_distill}) {
    for (auto scale : {Scale::desk, Scale::paper}) { CHECK_NOTHROW(ExperimentConfig::preset(kind, scale).validate()); }
  }
}

TEST_CASE("config parsing is strict")
{
  auto parse = [](const char *text) { return parse_experiment_config(text, ExperimentKind::spc_sweep); };
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"bogus":3})"), doctest::Contains("unknown key bogus"), Error);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"spc":{"sid":32}})"), doctest::Contains("unknown key spc.sid"),
                       Error);
  CHECK_THROWS_WITH_AS(parse(R"({"seed":1})"), doctest::Contains("schema_version is required"), Error);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"repetitions":"three"})"),
                       doctest::Contains("repetitions has the wrong type"), Error);
  CHECK_THROWS_WITH_AS(parse(R"({"schema_version":1,"experiment":"cats"})"), doctest::Contains("experiment must be"),
                       Error);
  CHECK_THROWS_WITH_AS(parse("{not json"), doctest::Contains("not valid JSON"), Error);
  CHECK(code_of([&] { parse(R"({"schema_version":2})"); }) == Errc::invalid_configuration);

  ExperimentConfig const c = parse(R"({"schema_version":1,"experiment":"mimo_distill","seed":9,"scale":"paper"})");
  CHECK(c.kind == ExperimentKind::mimo_distill);
  CHECK(c.scale == Scale::paper);
  CHECK(c.seed == 9);
  CHECK(c.mimo.tx == 15);
  ExperimentConfig const d = parse_experiment_config(R"({"schema_version":1,"scale":"paper"})",
                                                     ExperimentKind::spc_sweep, Scale::desk);
  CHECK(d.scale == Scale::desk);
}

TEST_CASE("validation names every offending field")
{
  ExperimentConfig c = ExperimentConfig::preset(ExperimentKind::spc_distill, Scale::desk);
  c.repetitions = 0;
  c.spc.side = 30;
  c.lambda_o = -1.0;
  try {
    c.validate();
    FAIL("expected rejection");
  } catch (const Error &e) {
    CHECK(e.code() == Errc::invalid_configuration);
    std::string const what = e.what();
    CHECK(what.find("repetitions") != std::string::npos);
    CHECK(what.find("spc.side") != std::string::npos);
    CHECK(what.find("lambda_o") != std::string::npos);
    CHECK(what.find("lambda_grad") == std::string::npos);
  }
  ExperimentConfig e = ExperimentConfig::preset(ExperimentKind::spc_distill, Scale::desk);
  e.sigmas = {0.3};
  e.sigma_ts = {0.5};
  CHECK_THROWS_WITH_AS(e.validate(), doctest::Contains("no pair"), Error);
}

TEST_CASE("config hash is the digest of canonical JSON")
{
  ExperimentConfig a = ExperimentConfig::preset(ExperimentKind::spc_sweep, Scale::desk);
  CHECK(a.hash() == sha256_hex(a.canonical_json()));
  CHECK(a.hash().size() == 64);
  ExperimentConfig b = a;
  b.data_dir = fs::path("/somewhere");
  CHECK(b.hash() == a.hash());
  b.seed += 1;
  CHECK(b.hash() != a.hash());

  ExperimentConfig const round = parse_experiment_config(a.canonical_json(), ExperimentKind::mimo_sweep);
  CHECK(round.canonical_json() == a.canonical_json());
}

TEST_CASE("result CSV round trip")
{
  ResultTable t;
  t.records.push_back(record("spc_distill", Variant::teacher, 0.1, 0.1, 0, "psnr", 25.123456789012345));
  t.records.push_back(record("mimo_sweep", Variant::student_baseline, 0.5, std::nullopt, 2, "ber", 1e-4, 9.0));
  std::stringstream buf;
  t.write_csv(buf);
  std::string const text = buf.str();
  CHECK(text.rfind("config_hash,experiment,variant,sigma,sigma_t,snr_db,repetition,seed,metric,value\n", 0) == 0);
  ResultTable const back = ResultTable::read_csv(buf);
  REQUIRE(back.records.size() == 2);
  CHECK(back.records[0].value == t.records[0].value);
  CHECK(back.records[0].sigma_t == 0.1);
  CHECK_FALSE(back.records[1].sigma_t.has_value());
  CHECK(back.records[1].snr_db == 9.0);
  CHECK(back.records[1].variant == Variant::student_baseline);
  std::stringstream again;
  back.write_csv(again);
  CHECK(again.str() == text);

  std::istringstream bad("abc,spc_sweep,nobody,0,,,0,1,psnr,3\n");
  CHECK_THROWS_WITH_AS(ResultTable::read_csv(bad), doctest::Contains("unknown variant"), Error);
  std::istringstream short_row("abc,spc_sweep\n");
  CHECK(code_of([&] { ResultTable::read_csv(short_row); }) == Errc::format_error);
}

TEST_CASE("plot data emission")
{
  fs::path const dir = scratch("plot");
  ResultTable empty;
  CHECK_THROWS_AS(emit_plot_data(empty, FigureId::sigma_psnr, dir), Error);
  CHECK_FALSE(fs::exists(dir));

  ResultTable t;
  for (int rep = 0; rep < 2; ++rep) {
    t.records.push_back(record("spc_distill", Variant::student_baseline, 0.5, std::nullopt, rep, "psnr", 20.0 + rep));
    t.records.push_back(record("spc_distill", Variant::student_distilled, 0.5, 0.0, rep, "psnr", 21.0 + rep));
    t.records.push_back(record("spc_distill", Variant::student_distilled, 0.9, 0.1, rep, "psnr", 18.0));
    t.records.push_back(record("spc_distill", Variant::teacher, 0.0, 0.0, rep, "psnr", 30.0));
  }
  PlotOutput const out = emit_plot_data(t, FigureId::distill_psnr, dir);
  REQUIRE(out.files.size() == 3);
  for (auto const &f : out.files) { CHECK(fs::exists(f)); }
  // (0.5, 0.1) and (0.9, 0.0) were never run.
  CHECK(out.missing == std::vector<std::string>{"(sigma=0.50, sigma_t=0.10)", "(sigma=0.90, sigma_t=0.00)"});
  std::string const csv = slurp(dir / "distill_psnr.csv");
  CHECK(csv.find("baseline,0.5,20.5,0.70710678118654757,2\n") != std::string::npos);
  CHECK(csv.find("sigma_t=0.00,0.5,21.5,") != std::string::npos);
  CHECK(csv.find("30") == std::string::npos);
  std::string const schema = slurp(dir / "distill_psnr.schema.json");
  CHECK(schema.find("missing_cells") != std::string::npos);
  CHECK_THROWS_AS(emit_plot_data(t, FigureId::sigma_ber, dir / "none"), Error);
  CHECK_FALSE(fs::exists(dir / "none"));
  fs::remove_all(dir);
}

TEST_CASE("tiny runs are reproducible and thread-count independent")
{
  ExperimentConfig const cfg = parse_experiment_config(kTinySpc, ExperimentKind::spc_distill);
  fs::path const d1 = scratch("rep1");
  fs::path const d2 = scratch("rep2");
  ResultTable const a = run_distill_grid(cfg, {d1, 1});
  ResultTable const b = run_distill_grid(cfg, {d2, 2});
  // teacher + baseline + distilled, two metrics each
  REQUIRE(a.records.size() == 6);
  std::ostringstream sa, sb;
  a.write_csv(sa);
  b.write_csv(sb);
  CHECK(sa.str() == sb.str());
  CHECK(a.data_source == "synthetic");

  persist_results(a, cfg, {d1, 1}, "distill-grid");
  persist_results(a, cfg, {d1, 1}, "distill-grid");
  std::string const csv = slurp(d1 / "results.csv");
  std::string const body = sa.str().substr(sa.str().find('\n') + 1);
  CHECK(csv == sa.str() + body);
  std::string const manifest = slurp(d1 / "manifest.json");
  CHECK(manifest.find(cfg.hash()) != std::string::npos);
  CHECK(manifest.find("\"repetition_seeds\"") != std::string::npos);
  CHECK(fs::exists(d1 / "timings.csv"));
  CHECK_FALSE(fs::is_empty(d1 / "models"));

  // Teachers found on disk are reused, not retrained.
  ResultTable const teachers = train_teachers(cfg, {d1, 1});
  REQUIRE(teachers.records.size() == 2);
  CHECK(teachers.records[0].value == a.records[0].value);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("a sweep baseline equals the grid baseline with lambda set to zero")
{
  ExperimentConfig sweep = parse_experiment_config(kTinySweep, ExperimentKind::spc_sweep);
  ExperimentConfig grid = sweep;
  grid.kind = ExperimentKind::spc_distill;
  grid.sigmas = {0.5};
  grid.sigma_ts = {0.0};
  grid.lambda_grad = grid.lambda_o = 0.0;
  fs::path const dir = scratch("lambda0");
  ResultTable const s = run_sigma_sweep(sweep, {dir / "s", 1});
  ResultTable const g = run_distill_grid(grid, {dir / "g", 1});
  auto value = [](const ResultTable &t, Variant v, double sigma, const char *metric) {
    for (auto const &r : t.records) {
      if (r.variant == v && r.sigma == sigma && r.metric == metric) { return r.value; }
    }
    return -1.0;
  };
  double const base = value(s, Variant::student_baseline, 0.5, "psnr");
  CHECK(base == value(g, Variant::student_baseline, 0.5, "psnr"));
  CHECK(base == value(g, Variant::student_distilled, 0.5, "psnr"));
  CHECK(value(s, Variant::student_baseline, 0.0, "psnr") > 0.0);
  CHECK(code_of([&] { run_sigma_sweep(grid, {dir, 1}); }) == Errc::invalid_configuration);
  CHECK(code_of([&] { run_distill_grid(sweep, {dir, 1}); }) == Errc::invalid_configuration);
  fs::remove_all(dir);
}

TEST_CASE("detection grid and saved-model evaluation")
{
  ExperimentConfig const cfg = parse_experiment_config(kTinyMimo, ExperimentKind::mimo_distill);
  fs::path const dir = scratch("mimo");
  ResultTable const t = run_distill_grid(cfg, {dir, 1});
  // three variants, two SNR points each
  REQUIRE(t.records.size() == 6);
  for (auto const &r : t.records) {
    CHECK(r.metric == "ber");
    CHECK(r.value >= 0.0);
    CHECK(r.value <= 1.0);
    REQUIRE(r.snr_db.has_value());
  }
  fs::path model;
  for (auto const &e : fs::directory_iterator(dir / "models")) {
    if (e.path().filename().string().find("baseline_s0.50_r0") != std::string::npos) { model = e.path(); }
  }
  REQUIRE_FALSE(model.empty());
  ResultTable const again = evaluate_saved(cfg, load_params(model), 0.5, 0, Variant::student_baseline);
  REQUIRE(again.records.size() == 2);
  for (auto const &r : t.records) {
    if (r.variant == Variant::student_baseline) {
      CHECK(r.value == (r.snr_db == 7.0 ? again.records[0].value : again.records[1].value));
    }
  }
  ExperimentConfig const spc = parse_experiment_config(kTinySpc, ExperimentKind::spc_distill);
  CHECK(code_of([&] { evaluate_saved(spc, load_params(model), 0.5, 0, Variant::student_baseline); }) ==
        Errc::invalid_configuration);
  fs::remove_all(dir);
}

TEST_CASE("command-line exit codes")
{
  fs::path const dir = scratch("cli");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "bad.json") << R"({"schema_version":1,"repetitions":0})";
    std::ofstream(dir / "tiny.json") << kTinySweep;
  }
  CHECK(run_cli("") == 2);
  CHECK(run_cli("no-such-verb") == 2);
  CHECK(run_cli("sweep-sigma --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string()) == 2);
  CHECK(run_cli("sweep-sigma --scale huge") == 2);
  CHECK(run_cli("sweep-sigma --config " + (dir / "tiny.json").string() + " --out /proc/nope") == 4);
  CHECK(run_cli("plot-data --results " + (dir / "missing.csv").string() + " --figure sigma_psnr --out " +
                (dir / "p").string()) == 4);
  CHECK(run_cli("sweep-sigma --config " + (dir / "tiny.json").string() + " --out " + (dir / "ok").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "results.csv"));
  CHECK(run_cli("plot-data --results " + (dir / "ok" / "results.csv").string() + " --figure sigma_ber --out " +
                (dir / "p").string()) == 2);
  CHECK(run_cli("plot-data --results " + (dir / "ok" / "results.csv").string() + " --figure sigma_psnr --out " +
                (dir / "p").string()) == 0);
  CHECK(fs::exists(dir / "p" / "sigma_psnr.dat"));
  fs::remove_all(dir);
}
