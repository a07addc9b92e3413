// relight_lab: dataset generation, training, relighting, sweeps and evaluation.
//
// Exit codes: 0 ok, 1 error (stderr carries "ERROR:<code>:<message>"),
// 2 refused to overwrite an existing dataset.

#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "relight/config.hpp"
#include "relight/error.hpp"
#include "relight/metrics.hpp"
#include "relight/sampler.hpp"
#include "relight/trainer.hpp"

namespace fs = std::filesystem;
using namespace relight;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
};

struct RelightArgs {
  std::string checkpoint;
  std::string input;
  std::string mask;
  std::string env;
  double rotation = 0.0;
  std::optional<double> lambda_i;
  std::optional<double> lambda_t;
  std::optional<int> steps;
  std::optional<std::uint64_t> sample_seed;
  std::vector<int> label;
  std::string out;
};

RunConfig resolve_config(const Common& common) {
  RunConfig c;
  bool config_has_seed = false;
  if (!common.config_path.empty()) {
    std::ifstream in(common.config_path);
    if (!in) fail(ErrorCode::IoFailure, "cannot open config " + common.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
      j = json::parse(ss.str());
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidConfig, common.config_path + ": " + e.what());
    }
    config_has_seed = j.is_object() && j.contains("seed");
    c = run_config_from_json(j);
  }
  std::uint64_t seed = c.seed;
  if (common.seed) {
    seed = *common.seed;
  } else if (!config_has_seed) {
    if (const char* env = std::getenv("RELIGHT_LAB_SEED")) {
      try {
        seed = std::stoull(env);
      } catch (const std::exception&) {
        fail(ErrorCode::InvalidConfig, std::string("RELIGHT_LAB_SEED is not an integer: ") + env);
      }
    }
  }
  propagate_seed(c, seed);
  if (!common.run_dir.empty()) c.run_dir = common.run_dir;
  validate(c);
  if (common.jobs > 0) omp_set_num_threads(common.jobs);
  return c;
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

ImageRgb load_image(const std::string& path, int resolution) {
  ImageRgb img = to_float(read_png_rgb(path));
  if (img.width != resolution || img.height != resolution) img = resize_area(img, resolution, resolution);
  return img;
}

Mask load_mask(const std::string& path, int resolution) {
  Mask m = read_png_mask(path);
  if (m.width != resolution || m.height != resolution) {
    fail(ErrorCode::ShapeMismatch, "mask " + path + " is not " + std::to_string(resolution) + " square");
  }
  return m;
}

fs::path checkpoint_path(const RunConfig& c, const std::string& flag) {
  return flag.empty() ? c.train_dir() / "final.rlck" : fs::path(flag);
}

// Builds a request from flags, falling back to the first held-out pair of
// the dataset when no input portrait is given.
SampleRequest build_request(const RunConfig& c, const RelightArgs& a, int resolution) {
  SampleRequest r;
  if (a.input.empty()) {
    const LoadedDataset data(load_manifest(c.data_dir()));
    const std::vector<EvalPair> plan = pairing_plan(data.manifest(), c.eval.pairing_seed);
    if (plan.empty()) fail(ErrorCode::EmptySplit, "no --input given and the dataset has no held-out pair");
    EvalOptions opts;
    r = eval_request(data, plan.front(), opts, 0);
    r.seed = c.seed;
    if (!a.env.empty()) r.env = load_raster(a.env);
  } else {
    if (a.env.empty()) fail(ErrorCode::InvalidConfig, "--env is required with --input");
    r.input_image = load_image(a.input, resolution);
    if (!a.mask.empty()) r.input_mask = load_mask(a.mask, resolution);
    r.env = load_raster(a.env);
    r.clip_max = c.data.build.clip_max;
    r.seed = c.seed;
  }
  if (!a.label.empty()) {
    if (a.label.size() != 2) fail(ErrorCode::InvalidConfig, "--label takes two integers");
    r.label = {a.label[0], a.label[1]};
  }
  r.rotation = a.rotation;
  r.steps = a.steps.value_or(c.sample.steps);
  r.guidance = c.sample.guidance;
  if (a.lambda_i) r.guidance.lambda_I = *a.lambda_i;
  if (a.lambda_t) r.guidance.lambda_T = *a.lambda_t;
  if (a.sample_seed) r.seed = *a.sample_seed;
  return r;
}

struct LoadedModel {
  Checkpoint ckpt;
  NoiseSchedule schedule;
};

LoadedModel load_model(const RunConfig& c, const std::string& flag) {
  LoadedModel m{load_checkpoint(checkpoint_path(c, flag)), {}};
  const TrainConfig& t = m.ckpt.config;
  m.schedule = make_schedule(t.schedule_steps, t.beta_start, t.beta_end);
  return m;
}

int cmd_gen_data(const RunConfig& c, bool force) {
  const fs::path dir = c.data_dir();
  if (non_empty_dir(dir)) {
    if (!force) {
      std::cerr << "ERROR:RefuseOverwrite:" << dir.string() << " is not empty (pass --force to rebuild)\n";
      return 2;
    }
    fs::remove_all(dir);
  }
  write_snapshot(c);
  const DatasetManifest m = build_dataset(c.data.build, dir);
  for (const std::string& w : m.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "dataset " << dir.string() << " manifest_hash " << hex64(manifest_hash(m)) << "\n";
  return 0;
}

int cmd_train(const RunConfig& c, bool resume) {
  write_snapshot(c);
  const DatasetManifest manifest = load_manifest(c.data_dir());
  const LoadedDataset data(manifest);
  const RealDomainSet real = load_real_set(c.data_dir() / manifest.real_dir, data.resolution());
  Checkpoint start;
  const fs::path resume_path = c.train_dir() / "checkpoint.rlck";
  if (resume && fs::exists(resume_path)) {
    start = load_checkpoint(resume_path);
    start.config.steps = c.train.steps;
    start.config.time_budget_s = c.train.time_budget_s;
  } else {
    start = initial_checkpoint(c.model, c.train, manifest_hash(manifest));
  }
  std::cout << "parameters " << start.params.count() << "\n";
  TrainCallbacks cb;
  cb.on_step = [](int step, const StepLosses& l) {
    if (step % 100 == 0) std::printf("step %d loss %.5f\n", step, l.total), std::fflush(stdout);
  };
  const Checkpoint out = train(data, real, std::move(start), c.train_dir(), cb);
  std::cout << "trained to step " << out.step << " -> " << (c.train_dir() / "final.rlck").string() << "\n";
  return 0;
}

int cmd_relight(const RunConfig& c, const RelightArgs& a) {
  write_snapshot(c);
  const LoadedModel m = load_model(c, a.checkpoint);
  const UNetModel model(m.ckpt.sampling_params());
  const SampleRequest r = build_request(c, a, m.ckpt.params.config.resolution);
  const RelightResult res = relight::relight(model, m.schedule, r);
  const fs::path out = a.out.empty() ? fs::path(c.run_dir) / "relight" / "output.png" : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_png(out, quantize(res.output));
  fs::path comp = out;
  comp.replace_filename(out.stem().string() + "_composited.png");
  write_png(comp, quantize(res.composited));
  std::cout << out.string() << "\n";
  return 0;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, "bad number '" + item + "' in list");
    }
  }
  return out;
}

int cmd_sweep(const RunConfig& c, const RelightArgs& a, const std::string& lambdas) {
  write_snapshot(c);
  const LoadedModel m = load_model(c, a.checkpoint);
  const UNetModel model(m.ckpt.sampling_params());
  const SampleRequest r = build_request(c, a, m.ckpt.params.config.resolution);
  const LambdaSweep s = sweep_lambda(model, m.schedule, r, parse_list(lambdas));
  const fs::path dir = a.out.empty() ? fs::path(c.run_dir) / "sweep" : fs::path(a.out);
  write_sweep(s, dir);
  for (std::size_t i = 0; i < s.lambdas.size(); ++i) std::printf("lambda_I %g psnr_vs_input %.3f\n", s.lambdas[i], s.psnr_vs_input[i]);
  return 0;
}

int cmd_rotate(const RunConfig& c, const RelightArgs& a, int n) {
  write_snapshot(c);
  const LoadedModel m = load_model(c, a.checkpoint);
  const UNetModel model(m.ckpt.sampling_params());
  const SampleRequest r = build_request(c, a, m.ckpt.params.config.resolution);
  const RotationSweep s = rotation_sweep(model, m.schedule, r, n);
  const fs::path dir = a.out.empty() ? fs::path(c.run_dir) / "rotate" : fs::path(a.out);
  write_rotation_sweep(s, dir);
  std::printf("frames %d mean_frame_difference %.6f\n", n, s.mean_frame_difference);
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& checkpoint, const std::string& stub) {
  write_snapshot(c);
  const LoadedDataset data(load_manifest(c.data_dir()));
  const std::vector<EvalPair> plan = pairing_plan(data.manifest(), c.eval.pairing_seed);
  EvalOptions opts;
  opts.guidance = c.sample.guidance;
  opts.steps = c.eval.steps;
  opts.seed = c.seed;
  const fs::path dir = fs::path(c.run_dir) / "eval";
  if (c.eval.save_images) opts.image_dir = dir / "images";

  std::unique_ptr<Relighter> relighter;
  std::optional<LoadedModel> m;
  std::optional<UNetModel> model;
  NoiseSchedule stub_schedule = make_schedule(c.train.schedule_steps, c.train.beta_start, c.train.beta_end);
  if (stub == "copy") {
    relighter = std::make_unique<CopyInputRelighter>();
  } else if (stub == "oracle-eps") {
    relighter = std::make_unique<OracleEpsRelighter>(stub_schedule);
  } else if (stub.empty()) {
    m = load_model(c, checkpoint);
    model.emplace(m->ckpt.sampling_params());
    relighter = std::make_unique<DiffusionRelighter>(*model, m->schedule);
  } else {
    fail(ErrorCode::InvalidConfig, "--stub must be copy or oracle-eps");
  }
  const EvalReport report = eval_set(*relighter, data, plan, opts, dir / "report.csv");

  json summary{{"pairs", report.rows.size()},
               {"mean_psnr_db", report.mean_psnr},
               {"mean_ssim", report.mean_ssim},
               {"mean_identity_proxy", report.mean_identity},
               {"mode", stub.empty() ? "model" : stub}};
  if (!c.eval.external_metric.empty() && c.eval.save_images) {
    // The hook scores each saved output against its target.
    double total = 0.0;
    const fs::path tmp = dir / "hook";
    fs::create_directories(tmp);
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const EvalPair& p = plan[i];
      const ImageRgb& target = data.image(p.subject, p.target_env, p.target_rotation);
      const ImageRgb out = relighter->run(eval_request(data, p, opts, i), target);
      write_png(tmp / "a.png", quantize(out));
      write_png(tmp / "b.png", quantize(target));
      total += external_metric(c.eval.external_metric, tmp / "a.png", tmp / "b.png");
    }
    summary["mean_external_metric"] = total / static_cast<double>(plan.size());
  }
  std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relight_lab: desk-scale diffusion portrait relighting"};
  app.require_subcommand(1);
  Common common;
  std::uint64_t seed_value = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "run configuration (JSON)");
    sub->add_option("--run-dir", common.run_dir, "override run_dir");
    sub->add_option("--seed", seed_value, "global seed (wins over the config)");
    sub->add_option("--jobs", common.jobs, "thread cap for rendering, training and evaluation");
  };

  bool force = false;
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "render environment maps and the paired dataset");
  add_common(gen);
  gen->add_flag("--force", force, "rebuild a non-empty dataset directory");
  gen->add_option("--out", data_out, "dataset directory (overrides data.dir)");

  bool resume = false;
  std::optional<int> train_steps;
  std::optional<double> budget;
  auto* trn = app.add_subcommand("train", "train the conditional UNet");
  add_common(trn);
  trn->add_flag("--resume", resume, "continue from train/checkpoint.rlck");
  trn->add_option("--steps", train_steps, "override train.steps");
  trn->add_option("--time-budget", budget, "override train.time_budget_s");

  RelightArgs ra;
  std::string lambdas = "1,2,3,5";
  int n_rot = 36;
  auto add_relight = [&](CLI::App* sub) {
    add_common(sub);
    sub->add_option("--checkpoint", ra.checkpoint, "checkpoint (default run_dir/train/final.rlck)");
    sub->add_option("--input", ra.input, "input portrait PNG (default: first held-out pair)");
    sub->add_option("--mask", ra.mask, "foreground mask PNG for --input");
    sub->add_option("--env", ra.env, "target environment map (.envf)");
    sub->add_option("--rotation", ra.rotation, "environment rotation in radians");
    sub->add_option("--lambda-i", ra.lambda_i, "input-image guidance (default 3)");
    sub->add_option("--lambda-t", ra.lambda_t, "label guidance (default 2)");
    sub->add_option("--steps", ra.steps, "DDIM steps");
    sub->add_option("--sample-seed", ra.sample_seed, "noise seed for x_T (default: global seed)");
    sub->add_option("--label", ra.label, "attribute label (two integers)")->expected(2);
    sub->add_option("--out", ra.out, "output path");
  };
  auto* rel = app.add_subcommand("relight", "relight one portrait");
  add_relight(rel);
  auto* swp = app.add_subcommand("sweep", "sweep the input-image guidance scale");
  add_relight(swp);
  swp->add_option("--lambdas", lambdas, "comma-separated lambda_I values");
  auto* rot = app.add_subcommand("rotate", "relight under a rotating environment");
  add_relight(rot);
  rot->add_option("--n", n_rot, "number of evenly spaced rotations");

  std::string eval_ckpt;
  std::string stub;
  auto* evl = app.add_subcommand("eval", "score relighting on the held-out split");
  add_common(evl);
  evl->add_option("--checkpoint", eval_ckpt, "checkpoint (default run_dir/train/final.rlck)");
  evl->add_option("--stub", stub, "copy | oracle-eps: evaluate a built-in stub instead of a model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) {
      if (sub->count("--seed")) common.seed = seed_value;
    }
    RunConfig c = resolve_config(common);
    if (!data_out.empty()) c.data.dir = fs::absolute(data_out).string();
    if (train_steps) c.train.steps = *train_steps;
    if (budget) c.train.time_budget_s = *budget;
    validate(c);

    if (gen->parsed()) return cmd_gen_data(c, force);
    if (trn->parsed()) return cmd_train(c, resume);
    if (rel->parsed()) return cmd_relight(c, ra);
    if (swp->parsed()) return cmd_sweep(c, ra, lambdas);
    if (rot->parsed()) return cmd_rotate(c, ra, n_rot);
    if (evl->parsed()) return cmd_eval(c, eval_ckpt, stub);
  } catch (const Error& e) {
    std::cerr << "ERROR:" << to_string(e.code()) << ":" << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "ERROR:InvalidConfig:" << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR:Internal:" << e.what() << "\n";
    return 1;
  }
  return 1;
}
