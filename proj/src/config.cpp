#include "relight/config.hpp"

#include <fstream>
#include <sstream>

#include "relight/error.hpp"
#include "relight/serialization.hpp"

namespace relight {

namespace fs = std::filesystem;
using nlohmann::json;

bool DataSection::operator==(const DataSection& o) const {
  return to_json(build.render) == to_json(o.build.render) && build.n_subjects == o.build.n_subjects &&
         build.n_envs == o.build.n_envs && build.rotations_per_env == o.build.rotations_per_env &&
         build.seed == o.build.seed && build.env_height == o.build.env_height && build.clip_max == o.build.clip_max &&
         build.real_count == o.build.real_count && build.holdout_fraction == o.build.holdout_fraction && dir == o.dir;
}

bool RunConfig::operator==(const RunConfig& o) const { return to_json(*this) == to_json(o); }

fs::path RunConfig::data_dir() const {
  const fs::path d(data.dir);
  return d.is_absolute() ? d : fs::path(run_dir) / d;
}

json to_json(const RunConfig& c) {
  const DatasetBuildConfig& b = c.data.build;
  json data{{"dir", c.data.dir},
            {"n_subjects", b.n_subjects},
            {"n_envs", b.n_envs},
            {"rotations_per_env", b.rotations_per_env},
            {"render", to_json(b.render)},
            {"env_height", b.env_height},
            {"clip_max", b.clip_max},
            {"real_count", b.real_count},
            {"holdout_fraction", b.holdout_fraction}};
  json sample{{"steps", c.sample.steps},
              {"lambda_I", c.sample.guidance.lambda_I},
              {"lambda_T", c.sample.guidance.lambda_T},
              {"uncond_keeps_text", c.sample.guidance.uncond_keeps_text}};
  json eval{{"steps", c.eval.steps},
            {"pairing_seed", c.eval.pairing_seed},
            {"external_metric", c.eval.external_metric},
            {"save_images", c.eval.save_images}};
  json train = to_json(c.train);
  // The train seed follows the global seed and is not configured separately.
  train.erase("seed");
  return json{{"schema_version", c.schema_version},
              {"seed", c.seed},
              {"run_dir", c.run_dir},
              {"data", data},
              {"model", to_json(c.model)},
              {"train", train},
              {"sample", sample},
              {"eval", eval}};
}

RunConfig run_config_from_json(const json& j) {
  StrictObject o(j, "config");
  RunConfig c;
  o.get("schema_version", c.schema_version);
  if (c.schema_version != kRunConfigSchema) {
    fail(ErrorCode::VersionMismatch, "config schema_version " + std::to_string(c.schema_version) + ", expected " +
                                         std::to_string(kRunConfigSchema));
  }
  o.get("seed", c.seed);
  o.get("run_dir", c.run_dir);
  if (const json* d = o.child("data")) {
    StrictObject s(*d, "data");
    DatasetBuildConfig& b = c.data.build;
    s.get("dir", c.data.dir);
    s.get("n_subjects", b.n_subjects);
    s.get("n_envs", b.n_envs);
    s.get("rotations_per_env", b.rotations_per_env);
    if (const json* r = s.child("render")) b.render = render_config_from_json(*r, "data.render");
    s.get("env_height", b.env_height);
    s.get("clip_max", b.clip_max);
    s.get("real_count", b.real_count);
    s.get("holdout_fraction", b.holdout_fraction);
    s.finish();
  }
  if (const json* m = o.child("model")) c.model = unet_config_from_json(*m, "model");
  if (const json* t = o.child("train")) {
    if (t->is_object() && t->contains("seed")) fail(ErrorCode::UnknownConfigKey, "train.seed");
    c.train = train_config_from_json(*t, "train");
  }
  if (const json* s = o.child("sample")) {
    StrictObject so(*s, "sample");
    so.get("steps", c.sample.steps);
    so.get("lambda_I", c.sample.guidance.lambda_I);
    so.get("lambda_T", c.sample.guidance.lambda_T);
    so.get("uncond_keeps_text", c.sample.guidance.uncond_keeps_text);
    so.finish();
  }
  if (const json* e = o.child("eval")) {
    StrictObject eo(*e, "eval");
    eo.get("steps", c.eval.steps);
    eo.get("pairing_seed", c.eval.pairing_seed);
    eo.get("external_metric", c.eval.external_metric);
    eo.get("save_images", c.eval.save_images);
    eo.finish();
  }
  o.finish();
  propagate_seed(c, c.seed);
  return c;
}

void propagate_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.data.build.seed = seed;
  c.train.seed = seed;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string run_config_to_text(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

void write_snapshot(const RunConfig& c) {
  fs::create_directories(c.run_dir);
  const fs::path path = fs::path(c.run_dir) / "config.json";
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << run_config_to_text(c);
}

void validate(const RunConfig& c) {
  const DatasetBuildConfig& b = c.data.build;
  if (b.n_subjects < 1 || b.n_envs < 1 || b.rotations_per_env < 1) fail(ErrorCode::InvalidConfig, "data counts must be >= 1");
  if (b.env_height < 2) fail(ErrorCode::InvalidConfig, "data.env_height must be >= 2");
  if (!(b.clip_max > 0.0)) fail(ErrorCode::InvalidConfig, "data.clip_max must be > 0");
  if (!(b.holdout_fraction >= 0.0 && b.holdout_fraction < 1.0)) fail(ErrorCode::InvalidConfig, "data.holdout_fraction must be in [0,1)");
  if (b.real_count < 0) fail(ErrorCode::InvalidConfig, "data.real_count must be >= 0");
  if (b.render.resolution != c.model.resolution) {
    fail(ErrorCode::InvalidConfig, "data.render.resolution must equal model.resolution");
  }
  validate(c.model);
  validate(c.train);
  validate(c.sample.guidance);
  if (c.sample.steps < 1 || c.sample.steps > c.train.schedule_steps) fail(ErrorCode::InvalidConfig, "sample.steps out of range");
  if (c.eval.steps < 1 || c.eval.steps > c.train.schedule_steps) fail(ErrorCode::InvalidConfig, "eval.steps out of range");
}

}  // namespace relight
