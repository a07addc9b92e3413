#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "relight/config.hpp"
#include "relight/error.hpp"
#include "relight/metrics.hpp"
#include "test_util.hpp"

using namespace relight;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoFailure;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny_run(const fs::path& run_dir) {
  RunConfig c;
  c.seed = 3;
  c.run_dir = run_dir.string();
  DatasetBuildConfig& b = c.data.build;
  b.n_subjects = 10;
  b.n_envs = 10;
  b.rotations_per_env = 1;
  b.render.resolution = 16;
  b.render.shadow_samples = 1;
  b.render.env_cosine_samples = 4;
  b.render.bright_texel_count = 4;
  b.env_height = 8;
  b.real_count = 3;
  c.model.base_channels = 8;
  c.model.channel_mults = {1, 2};
  c.model.embed_dim = 16;
  c.model.resolution = 16;
  c.train.steps = 2;
  c.train.batch_size = 2;
  c.train.checkpoint_every = 1;
  c.sample.steps = 3;
  c.eval.steps = 3;
  propagate_seed(c, c.seed);
  return c;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI with stdout and stderr captured to files beside `scratch`.
Run lab(const fs::path& scratch, const std::string& args, const std::string& env = {}) {
  const fs::path out = scratch / "stdout.txt";
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(RELIGHT_LAB_BIN) + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// One dataset and one 2-step checkpoint shared by the command cases.
struct Shared {
  testutil::TempDir dir{"cli_shared"};
  fs::path config;
  RunConfig run;
  bool ok = false;
  Shared() {
    run = tiny_run(dir.path / "run");
    config = dir.path / "config.json";
    write_text(config, run_config_to_text(run));
    ok = lab(dir.path, "gen-data --config " + config.string()).code == 0 &&
         lab(dir.path, "train --config " + config.string()).code == 0;
  }
};

Shared& shared() {
  static Shared s;
  return s;
}

}  // namespace

TEST_CASE("run config: JSON round trip and snapshot reload") {
  testutil::TempDir dir("cli_config");
  const RunConfig c = tiny_run(dir.path / "run");
  CHECK(run_config_from_json(to_json(c)) == c);
  write_snapshot(c);
  CHECK(load_run_config(dir.path / "run" / "config.json") == c);
  CHECK(run_config_to_text(load_run_config(dir.path / "run" / "config.json")) == run_config_to_text(c));
  // Defaults parse from an empty object.
  CHECK(run_config_from_json(json::object()) == RunConfig{});
}

TEST_CASE("run config: unknown keys, schema version, seeds, validation") {
  json j = to_json(RunConfig{});
  j["data"]["bogus"] = 1;
  CHECK(code_of([&] { run_config_from_json(j); }) == ErrorCode::UnknownConfigKey);
  CHECK(message_of([&] { run_config_from_json(j); }).find("data.bogus") != std::string::npos);

  json k = to_json(RunConfig{});
  k["train"]["seed"] = 4;
  CHECK(code_of([&] { run_config_from_json(k); }) == ErrorCode::UnknownConfigKey);

  json top = to_json(RunConfig{});
  top["extra"] = true;
  CHECK(message_of([&] { run_config_from_json(top); }).find("extra") != std::string::npos);

  json v = to_json(RunConfig{});
  v["schema_version"] = 2;
  CHECK(code_of([&] { run_config_from_json(v); }) == ErrorCode::VersionMismatch);

  json s = to_json(RunConfig{});
  s["seed"] = 77;
  const RunConfig seeded = run_config_from_json(s);
  CHECK(seeded.data.build.seed == 77);
  CHECK(seeded.train.seed == 77);

  RunConfig bad;
  bad.data.build.render.resolution = 32;
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::InvalidConfig);
  RunConfig steps;
  steps.sample.steps = 1001;
  CHECK(code_of([&] { validate(steps); }) == ErrorCode::InvalidConfig);
  CHECK_NOTHROW(validate(RunConfig{}));
}

TEST_CASE("cli gen-data: fresh build, refuse overwrite, force, bad key") {
  testutil::TempDir dir("cli_gen");
  const RunConfig c = tiny_run(dir.path / "run");
  const fs::path cfg = dir.path / "c.json";
  write_text(cfg, run_config_to_text(c));
  const Run first = lab(dir.path, "gen-data --config " + cfg.string());
  CHECK(first.code == 0);
  CHECK(fs::exists(c.data_dir() / "manifest.json"));
  CHECK(load_run_config(dir.path / "run" / "config.json") == c);

  const Run again = lab(dir.path, "gen-data --config " + cfg.string());
  CHECK(again.code == 2);
  CHECK(again.err.rfind("ERROR:RefuseOverwrite:", 0) == 0);
  CHECK(lab(dir.path, "gen-data --force --config " + cfg.string()).code == 0);

  json j = to_json(c);
  j["model"]["widths"] = 3;
  const fs::path bad = dir.path / "bad.json";
  write_text(bad, j.dump());
  const Run r = lab(dir.path, "gen-data --config " + bad.string());
  CHECK(r.code == 1);
  CHECK(r.err.rfind("ERROR:UnknownConfigKey:", 0) == 0);
  CHECK(r.err.find("model.widths") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("cli gen-data: same config, byte-identical datasets") {
  testutil::TempDir dir("cli_repro");
  for (const char* name : {"a", "b"}) {
    RunConfig c = tiny_run(dir.path / name);
    const fs::path cfg = dir.path / (std::string(name) + ".json");
    write_text(cfg, run_config_to_text(c));
    REQUIRE(lab(dir.path, "gen-data --jobs 1 --config " + cfg.string()).code == 0);
  }
  const fs::path a = tiny_run(dir.path / "a").data_dir();
  const fs::path b = tiny_run(dir.path / "b").data_dir();
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    CHECK(slurp(e.path()) == slurp(b / rel));
    ++compared;
  }
  CHECK(compared > 100);
}

TEST_CASE("cli seeds: flag beats config beats environment") {
  testutil::TempDir dir("cli_seed");
  RunConfig c = tiny_run(dir.path / "run");
  json with_seed = to_json(c);
  with_seed["seed"] = 5;
  json without_seed = to_json(c);
  without_seed.erase("seed");
  const fs::path cfg_with = dir.path / "with.json";
  const fs::path cfg_without = dir.path / "without.json";
  write_text(cfg_with, with_seed.dump());
  write_text(cfg_without, without_seed.dump());
  const fs::path snap = dir.path / "run" / "config.json";
  auto snapshot_seed = [&](const std::string& args, const std::string& env) {
    fs::remove_all(dir.path / "run");
    const Run r = lab(dir.path, "gen-data " + args, env);
    REQUIRE(r.code == 0);
    return load_run_config(snap).seed;
  };
  CHECK(snapshot_seed("--seed 9 --config " + cfg_with.string(), "RELIGHT_LAB_SEED=11") == 9);
  CHECK(snapshot_seed("--config " + cfg_with.string(), "RELIGHT_LAB_SEED=11") == 5);
  CHECK(snapshot_seed("--config " + cfg_without.string(), "RELIGHT_LAB_SEED=11") == 11);
  CHECK(snapshot_seed("--config " + cfg_without.string(), "") == 0);
  const Run bad = lab(dir.path, "gen-data --force --config " + cfg_without.string(), "RELIGHT_LAB_SEED=abc");
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("ERROR:InvalidConfig:", 0) == 0);
}

TEST_CASE("cli train and relight: default lambda_I is 3, reproducible outputs") {
  Shared& s = shared();
  REQUIRE(s.ok);
  CHECK(fs::exists(s.run.train_dir() / "final.rlck"));
  CHECK(fs::exists(s.run.train_dir() / "train_log.csv"));
  const std::string cfg = "--config " + s.config.string();
  const fs::path d = s.dir.path;
  REQUIRE(lab(d, "relight " + cfg + " --out " + (d / "r_default.png").string()).code == 0);
  REQUIRE(lab(d, "relight " + cfg + " --lambda-i 3 --out " + (d / "r_three.png").string()).code == 0);
  REQUIRE(lab(d, "relight " + cfg + " --lambda-i 1 --out " + (d / "r_one.png").string()).code == 0);
  REQUIRE(lab(d, "relight " + cfg + " --out " + (d / "r_again.png").string()).code == 0);
  CHECK(slurp(d / "r_default.png") == slurp(d / "r_three.png"));
  CHECK(slurp(d / "r_default.png") == slurp(d / "r_again.png"));
  CHECK(slurp(d / "r_default.png") != slurp(d / "r_one.png"));
  CHECK(fs::exists(d / "r_default_composited.png"));

  const Run missing = lab(d, "relight " + cfg + " --checkpoint " + (d / "nope.rlck").string());
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("ERROR:IoFailure:", 0) == 0);
}

TEST_CASE("cli sweep and rotate: structural outputs") {
  Shared& s = shared();
  REQUIRE(s.ok);
  const std::string cfg = "--config " + s.config.string();
  REQUIRE(lab(s.dir.path, "sweep " + cfg + " --lambdas 1,2,3,5").code == 0);
  const fs::path sweep = fs::path(s.run.run_dir) / "sweep";
  for (int i = 0; i < 4; ++i) CHECK(fs::exists(sweep / ("lambda_" + std::to_string(i) + ".png")));
  CHECK_FALSE(fs::exists(sweep / "lambda_4.png"));
  std::istringstream csv(slurp(sweep / "lambda_sweep.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 4);

  REQUIRE(lab(s.dir.path, "rotate " + cfg + " --n 3").code == 0);
  const fs::path rot = fs::path(s.run.run_dir) / "rotate";
  for (int i = 0; i < 3; ++i) CHECK(fs::exists(rot / ("frame_" + std::to_string(i) + ".png")));
  CHECK(fs::exists(rot / "rotation_sweep.csv"));
}

TEST_CASE("cli eval: copy stub reports psnr(input, target)") {
  Shared& s = shared();
  REQUIRE(s.ok);
  const std::string cfg = "--config " + s.config.string();
  REQUIRE(lab(s.dir.path, "eval " + cfg + " --stub copy").code == 0);
  const fs::path dir = fs::path(s.run.run_dir) / "eval";
  const EvalReport report = read_report_csv(dir / "report.csv");
  const LoadedDataset data(load_manifest(s.run.data_dir()));
  const std::vector<EvalPair> plan = pairing_plan(data.manifest(), s.run.eval.pairing_seed);
  REQUIRE(report.rows.size() == plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const EvalPair& p = plan[i];
    CHECK(report.rows[i].psnr_db ==
          psnr(data.image(p.subject, p.input_env, p.input_rotation), data.image(p.subject, p.target_env, p.target_rotation)));
  }
  const json summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary["mode"] == "copy");
  CHECK(std::abs(summary["mean_psnr_db"].get<double>() - report.mean_psnr) < 1e-9);

  REQUIRE(lab(s.dir.path, "eval " + cfg).code == 0);
  CHECK(json::parse(slurp(dir / "summary.json"))["mode"] == "model");
  const Run bad = lab(s.dir.path, "eval " + cfg + " --stub nope");
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("ERROR:InvalidConfig:", 0) == 0);
}
