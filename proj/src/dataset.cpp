#include "relight/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "relight/error.hpp"
#include "relight/serialization.hpp"

namespace relight {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  fail(ErrorCode::InvalidConfig, "unknown split " + s);
}

std::vector<Split> assign_split(int n, double fraction, Rng& rng, const std::string& what,
                                std::vector<std::string>& warnings) {
  std::vector<Split> split(static_cast<std::size_t>(n), Split::Train);
  const int held = holdout_count(n, fraction);
  if (n == 1) warnings.push_back("only one " + what + ": forced into the train split, test split is empty");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < held; ++i) split[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = Split::Test;
  return split;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

ImageRgb zeros(int res) { return ImageRgb(res, res, 0.0f); }

}  // namespace

int holdout_count(int n, double fraction) {
  if (n <= 1) return 0;
  const int k = static_cast<int>(std::ceil(fraction * n - 1e-9));
  return std::clamp(k, 0, n - 1);
}

std::vector<int> DatasetManifest::subjects_in(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < subject_split.size(); ++i)
    if (subject_split[i] == split) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> DatasetManifest::envs_in(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < env_split.size(); ++i)
    if (env_split[i] == split) out.push_back(static_cast<int>(i));
  return out;
}

std::string DatasetManifest::image_name(int s, int e, int r) const {
  return image_dir + "/s" + std::to_string(s) + "_e" + std::to_string(e) + "_r" + std::to_string(r) + ".png";
}

std::string DatasetManifest::mask_name(int s, int e, int r) const {
  return image_dir + "/s" + std::to_string(s) + "_e" + std::to_string(e) + "_r" + std::to_string(r) + "_mask.png";
}

std::string DatasetManifest::env_name(int e) const { return env_dir + "/e" + std::to_string(e) + ".envf"; }

bool DatasetManifest::operator==(const DatasetManifest& o) const { return manifest_to_text(*this) == manifest_to_text(o); }

DatasetManifest build_dataset(const DatasetBuildConfig& config, const fs::path& out_dir) {
  if (config.n_subjects < 1 || config.n_envs < 1 || config.rotations_per_env < 1) {
    fail(ErrorCode::InvalidConfig, "dataset counts must be >= 1");
  }
  DatasetManifest m;
  m.seed = config.seed;
  m.rotations_per_env = config.rotations_per_env;
  m.render = config.render;
  m.env_height = config.env_height;
  m.clip_max = config.clip_max;
  m.root = out_dir;

  Rng rng(derive_seed(config.seed, 0xD5));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int s = 0; s < config.n_subjects; ++s) m.subject_seeds.push_back(derive_seed(config.seed, 1000 + s));
  for (int e = 0; e < config.n_envs; ++e) {
    m.env_specs.push_back(random_env_spec(derive_seed(config.seed, 2000 + e)));
    const double offset = uni(rng) * kTwoPi;
    std::vector<double> rots;
    for (int r = 0; r < config.rotations_per_env; ++r) rots.push_back(offset + kTwoPi * r / config.rotations_per_env);
    m.rotations.push_back(std::move(rots));
  }
  m.subject_split = assign_split(config.n_subjects, config.holdout_fraction, rng, "subject", m.warnings);
  m.env_split = assign_split(config.n_envs, config.holdout_fraction, rng, "environment", m.warnings);

  ensure_dir(out_dir / m.image_dir);
  ensure_dir(out_dir / m.env_dir);

  std::vector<EnvMap> envs;
  for (int e = 0; e < config.n_envs; ++e) {
    envs.push_back(procedural_env(m.env_specs[static_cast<std::size_t>(e)], 2 * config.env_height, config.env_height));
    write_raster(out_dir / m.env_name(e), envs.back());
  }
  std::vector<SubjectParams> subjects;
  for (std::uint64_t seed : m.subject_seeds) subjects.push_back(make_subject(seed));

  const int per_subject = config.n_envs * config.rotations_per_env;
  const int total = config.n_subjects * per_subject;
  for (int job = 0; job < total; ++job) {
    const int s = job / per_subject;
    const int e = (job / config.rotations_per_env) % config.n_envs;
    const int r = job % config.rotations_per_env;
    RenderConfig rc = config.render;
    rc.rng_seed = derive_seed(config.seed, 0xA0000 + static_cast<std::uint64_t>(job));
    const LinearImage img = render(subjects[static_cast<std::size_t>(s)], envs[static_cast<std::size_t>(e)],
                                   m.rotations[static_cast<std::size_t>(e)][static_cast<std::size_t>(r)], rc);
    write_png(out_dir / m.image_name(s, e, r), linear_to_srgb(img));
    write_png(out_dir / m.mask_name(s, e, r), img.mask);
  }

  if (config.real_count > 0) {
    build_real_set(config.real_count, derive_seed(config.seed, 0x4EA1), config.render.resolution, out_dir / m.real_dir);
  }
  save_manifest(m, out_dir);
  return m;
}

DatasetManifest build_dataset(int n_subjects, int n_envs, int rotations_per_env, std::uint64_t seed,
                              const fs::path& out_dir) {
  DatasetBuildConfig c;
  c.n_subjects = n_subjects;
  c.n_envs = n_envs;
  c.rotations_per_env = rotations_per_env;
  c.seed = seed;
  return build_dataset(c, out_dir);
}

std::string manifest_to_text(const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["seed"] = m.seed;
  j["subject_seeds"] = m.subject_seeds;
  json envs = json::array();
  for (const EnvSpec& s : m.env_specs) envs.push_back(to_json(s));
  j["env_specs"] = envs;
  j["rotations_per_env"] = m.rotations_per_env;
  j["rotations"] = m.rotations;
  json ss = json::array();
  for (Split s : m.subject_split) ss.push_back(split_name(s));
  json es = json::array();
  for (Split s : m.env_split) es.push_back(split_name(s));
  j["split"] = {{"subjects", ss}, {"envs", es}};
  j["image_dir"] = m.image_dir;
  j["env_dir"] = m.env_dir;
  j["real_dir"] = m.real_dir;
  j["render"] = to_json(m.render);
  j["env_height"] = m.env_height;
  j["clip_max"] = m.clip_max;
  j["warnings"] = m.warnings;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("manifest is not valid JSON: ") + e.what());
  }
  StrictObject o(j, "manifest");
  DatasetManifest m;
  o.get("format_version", m.format_version);
  if (m.format_version != kManifestFormatVersion) {
    fail(ErrorCode::VersionMismatch, "manifest format_version " + std::to_string(m.format_version));
  }
  o.get("seed", m.seed);
  o.get("subject_seeds", m.subject_seeds);
  if (const json* envs = o.child("env_specs")) {
    for (std::size_t i = 0; i < envs->size(); ++i) {
      m.env_specs.push_back(env_spec_from_json(envs->at(i), "manifest.env_specs[" + std::to_string(i) + "]"));
    }
  }
  o.get("rotations_per_env", m.rotations_per_env);
  o.get("rotations", m.rotations);
  if (const json* split = o.child("split")) {
    StrictObject so(*split, "manifest.split");
    std::vector<std::string> ss;
    std::vector<std::string> es;
    so.get("subjects", ss);
    so.get("envs", es);
    so.finish();
    for (const auto& s : ss) m.subject_split.push_back(parse_split(s));
    for (const auto& s : es) m.env_split.push_back(parse_split(s));
  }
  o.get("image_dir", m.image_dir);
  o.get("env_dir", m.env_dir);
  o.get("real_dir", m.real_dir);
  if (const json* r = o.child("render")) m.render = render_config_from_json(*r, "manifest.render");
  o.get("env_height", m.env_height);
  o.get("clip_max", m.clip_max);
  o.get("warnings", m.warnings);
  o.finish();
  if (m.subject_split.size() != m.subject_seeds.size() || m.env_split.size() != m.env_specs.size() ||
      m.rotations.size() != m.env_specs.size()) {
    fail(ErrorCode::InvalidConfig, "manifest split/rotation tables do not match subject/env counts");
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& dir) {
  ensure_dir(dir);
  write_text(dir / "manifest.json", manifest_to_text(m));
}

DatasetManifest load_manifest(const fs::path& dir) {
  DatasetManifest m = manifest_from_text(read_text(dir / "manifest.json"));
  m.root = dir;
  for (std::size_t e = 0; e < m.env_specs.size(); ++e) {
    if (!fs::exists(dir / m.env_name(static_cast<int>(e)))) {
      fail(ErrorCode::IoFailure, "missing " + (dir / m.env_name(static_cast<int>(e))).string());
    }
  }
  for (std::size_t s = 0; s < m.subject_seeds.size(); ++s) {
    for (std::size_t e = 0; e < m.env_specs.size(); ++e) {
      for (int r = 0; r < m.rotations_per_env; ++r) {
        for (const std::string& name : {m.image_name(static_cast<int>(s), static_cast<int>(e), r),
                                        m.mask_name(static_cast<int>(s), static_cast<int>(e), r)}) {
          if (!fs::exists(dir / name)) fail(ErrorCode::IoFailure, "missing " + (dir / name).string());
        }
      }
    }
  }
  return m;
}

std::uint64_t manifest_hash(const DatasetManifest& m) {
  const std::string text = manifest_to_text(m);
  return fnv1a64(text.data(), text.size());
}

// ---------------------------------------------------------------------------

LoadedDataset::LoadedDataset(DatasetManifest manifest) : manifest_(std::move(manifest)) {
  const DatasetManifest& m = manifest_;
  const int res = m.render.resolution;
  for (std::size_t e = 0; e < m.env_specs.size(); ++e) {
    envs_.push_back(load_raster(m.root / m.env_name(static_cast<int>(e))));
    for (int r = 0; r < m.rotations_per_env; ++r) {
      ldr_.push_back(tonemap_ldr(rotate(envs_.back(), m.rotations[e][static_cast<std::size_t>(r)]), m.clip_max, res, res));
    }
  }
  for (std::size_t s = 0; s < m.subject_seeds.size(); ++s) {
    labels_.push_back(make_subject(m.subject_seeds[s]).label);
    for (std::size_t e = 0; e < m.env_specs.size(); ++e) {
      for (int r = 0; r < m.rotations_per_env; ++r) {
        images_.push_back(to_float(read_png_rgb(m.root / m.image_name(static_cast<int>(s), static_cast<int>(e), r))));
        masks_.push_back(read_png_mask(m.root / m.mask_name(static_cast<int>(s), static_cast<int>(e), r)));
      }
    }
  }
}

RealDomainSet build_real_set(int count, std::uint64_t seed, int resolution, const fs::path& dir) {
  ensure_dir(dir);
  RealDomainSet set;
  json labels = json::object();
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<float> noise(0.0f, 0.02f);
    const SubjectParams subject = make_subject(derive_seed(seed, 50000 + static_cast<std::uint64_t>(i)));
    const EnvMap env = procedural_env(random_env_spec(derive_seed(seed, 60000 + static_cast<std::uint64_t>(i))), 64, 32);
    RenderConfig rc;
    rc.resolution = resolution;
    rc.camera_distance = 6.0 * (0.8 + 0.45 * uni(rng));
    rc.head_frame_fraction = 0.55 + 0.3 * uni(rng);
    rc.rng_seed = derive_seed(seed, 70000 + static_cast<std::uint64_t>(i));
    const double rotation = uni(rng) * kTwoPi;
    const double gamma = 0.8 + 0.45 * uni(rng);
    ImageRgb img = linear_to_srgb_float(render(subject, env, rotation, rc).pixels);
    for (float& v : img.pixels) v = std::clamp(std::pow(v, static_cast<float>(gamma)) + noise(rng), 0.0f, 1.0f);
    char name[32];
    std::snprintf(name, sizeof name, "real_%04d.png", i);
    const ImageRgb8 q = quantize(img);
    write_png(dir / name, q);
    labels[name] = {subject.label[0], subject.label[1]};
    set.images.push_back(to_float(q));
    set.labels.push_back(subject.label);
  }
  write_text(dir / "labels.json", labels.dump(2) + "\n");
  return set;
}

RealDomainSet load_real_set(const fs::path& dir, int resolution) {
  RealDomainSet set;
  if (!fs::is_directory(dir)) return set;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  json labels = json::object();
  if (fs::exists(dir / "labels.json")) labels = json::parse(read_text(dir / "labels.json"));
  for (const fs::path& f : files) {
    ImageRgb img = to_float(read_png_rgb(f));
    if (img.width != resolution || img.height != resolution) img = resize_area(img, resolution, resolution);
    Label label{0, 0};
    const std::string key = f.filename().string();
    if (labels.contains(key)) {
      const auto v = labels.at(key).get<std::vector<int>>();
      for (std::size_t k = 0; k < std::min<std::size_t>(v.size(), label.size()); ++k) label[k] = v[k];
    }
    set.images.push_back(std::move(img));
    set.labels.push_back(label);
  }
  return set;
}

RelightTuple sample_tuple(const LoadedDataset& data, Rng& rng, Split split, const TupleOptions& options) {
  const DatasetManifest& m = data.manifest();
  const std::vector<int> subjects = m.subjects_in(split);
  const std::vector<int> envs = m.envs_in(split);
  if (subjects.empty() || envs.empty()) {
    fail(ErrorCode::EmptySplit, std::string("the ") + split_name(split) + " split has no subjects or no environments");
  }
  const int variants = static_cast<int>(envs.size()) * m.rotations_per_env;
  std::uniform_int_distribution<int> pick_subject(0, static_cast<int>(subjects.size()) - 1);
  std::uniform_int_distribution<int> pick_variant(0, variants - 1);
  const int s = subjects[static_cast<std::size_t>(pick_subject(rng))];
  const int i = pick_variant(rng);
  int j = pick_variant(rng);
  if (!options.allow_identity && variants > 1) {
    while (j == i) j = pick_variant(rng);
  }
  RelightTuple t;
  t.subject = s;
  t.input_env = envs[static_cast<std::size_t>(i / m.rotations_per_env)];
  t.input_rotation = i % m.rotations_per_env;
  t.target_env = envs[static_cast<std::size_t>(j / m.rotations_per_env)];
  t.target_rotation = j % m.rotations_per_env;
  t.input_image = data.image(s, t.input_env, t.input_rotation);
  t.input_mask = data.mask(s, t.input_env, t.input_rotation);
  t.target_image = data.image(s, t.target_env, t.target_rotation);
  t.ldr_env = data.ldr_env(t.target_env, t.target_rotation);
  t.label = data.label(s);
  t.task = Task::Relight;
  return t;
}

RelightTuple sample_t2i(const RealDomainSet& real, Rng& rng, int resolution) {
  if (real.empty()) fail(ErrorCode::EmptyRealSet, "the real-domain set is empty");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(real.size()) - 1);
  const int k = pick(rng);
  RelightTuple t;
  t.input_image = zeros(resolution);
  t.ldr_env = zeros(resolution);
  t.target_image = real.images[static_cast<std::size_t>(k)];
  t.label = real.labels[static_cast<std::size_t>(k)];
  t.task = Task::TextToImage;
  return t;
}

std::vector<RelightTuple> mix_batch(const LoadedDataset& data, const RealDomainSet& real, int batch_size,
                                    double relight_ratio, Rng& rng, const TupleOptions& options) {
  if (!(relight_ratio >= 0.0 && relight_ratio <= 1.0)) fail(ErrorCode::InvalidConfig, "relight_ratio must be in [0,1]");
  std::vector<RelightTuple> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int b = 0; b < batch_size; ++b) {
    if (uni(rng) < relight_ratio) {
      batch.push_back(sample_tuple(data, rng, Split::Train, options));
    } else {
      batch.push_back(sample_t2i(real, rng, data.resolution()));
    }
  }
  return batch;
}

}  // namespace relight
