#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relight/envmap.hpp"
#include "relight/image.hpp"
#include "relight/random.hpp"
#include "relight/renderer.hpp"

namespace relight {

enum class Split { Train, Test };
enum class Task { Relight, TextToImage };

inline constexpr int kManifestFormatVersion = 1;

struct DatasetBuildConfig {
  int n_subjects = 16;
  int n_envs = 8;
  int rotations_per_env = 8;
  std::uint64_t seed = 0;
  RenderConfig render{};
  int env_height = 32;
  double clip_max = 8.0;
  int real_count = 32;
  double holdout_fraction = 0.1;
};

struct DatasetManifest {
  int format_version = kManifestFormatVersion;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> subject_seeds;
  std::vector<EnvSpec> env_specs;
  int rotations_per_env = 1;
  /// rotations[e][r] in radians: a random initial offset plus r * 2pi / R.
  std::vector<std::vector<double>> rotations;
  std::vector<Split> subject_split;
  std::vector<Split> env_split;
  std::string image_dir = "images";
  std::string env_dir = "envs";
  std::string real_dir = "real";
  RenderConfig render{};
  int env_height = 32;
  double clip_max = 8.0;
  std::vector<std::string> warnings;

  /// Directory holding the manifest; not serialized.
  std::filesystem::path root;

  std::vector<int> subjects_in(Split split) const;
  std::vector<int> envs_in(Split split) const;
  std::string image_name(int subject, int env, int rotation) const;
  std::string mask_name(int subject, int env, int rotation) const;
  std::string env_name(int env) const;

  bool operator==(const DatasetManifest& o) const;
};

/// Number of held-out items for a pool of `n`: ceil(fraction * n), except
/// that a pool of one stays entirely in train.
int holdout_count(int n, double fraction);

DatasetManifest build_dataset(const DatasetBuildConfig& config, const std::filesystem::path& out_dir);
DatasetManifest build_dataset(int n_subjects, int n_envs, int rotations_per_env, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

std::string manifest_to_text(const DatasetManifest& manifest);
DatasetManifest manifest_from_text(const std::string& text);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
/// Loads `dir/manifest.json` and checks every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& dir);
/// Stable 64-bit digest of the serialized manifest.
std::uint64_t manifest_hash(const DatasetManifest& manifest);

struct RelightTuple {
  ImageRgb input_image;
  Mask input_mask;
  ImageRgb target_image;
  LdrEnvImage ldr_env;
  Label label{0, 0};
  Task task = Task::Relight;
  // Provenance; -1 for text-to-image tuples.
  int subject = -1;
  int input_env = -1;
  int input_rotation = -1;
  int target_env = -1;
  int target_rotation = -1;
};

/// All images, masks and environment maps of a manifest held in memory,
/// with tonemapped conditions precomputed per (env, rotation).
class LoadedDataset {
 public:
  explicit LoadedDataset(DatasetManifest manifest);

  const DatasetManifest& manifest() const { return manifest_; }
  int resolution() const { return manifest_.render.resolution; }
  const ImageRgb& image(int s, int e, int r) const { return images_[flat(s, e, r)]; }
  const Mask& mask(int s, int e, int r) const { return masks_[flat(s, e, r)]; }
  const EnvMap& env(int e) const { return envs_[static_cast<std::size_t>(e)]; }
  const LdrEnvImage& ldr_env(int e, int r) const {
    return ldr_[static_cast<std::size_t>(e) * manifest_.rotations_per_env + r];
  }
  Label label(int s) const { return labels_[static_cast<std::size_t>(s)]; }

 private:
  std::size_t flat(int s, int e, int r) const {
    return (static_cast<std::size_t>(s) * manifest_.env_specs.size() + e) * manifest_.rotations_per_env + r;
  }

  DatasetManifest manifest_;
  std::vector<ImageRgb> images_;
  std::vector<Mask> masks_;
  std::vector<EnvMap> envs_;
  std::vector<LdrEnvImage> ldr_;
  std::vector<Label> labels_;
};

/// Labeled images from a different style domain (the text-to-image task).
struct RealDomainSet {
  std::vector<ImageRgb> images;
  std::vector<Label> labels;
  bool empty() const { return images.empty(); }
  std::size_t size() const { return images.size(); }
};

/// Renders a style-perturbed procedural set (different framing, gamma and
/// added texture noise) into `dir` with a labels.json sidecar.
RealDomainSet build_real_set(int count, std::uint64_t seed, int resolution, const std::filesystem::path& dir);
/// Loads every PNG in `dir` (sorted by name), resized to `resolution`.
/// Labels come from labels.json when present, otherwise {0,0}.
RealDomainSet load_real_set(const std::filesystem::path& dir, int resolution);

struct TupleOptions {
  bool allow_identity = true;
};

RelightTuple sample_tuple(const LoadedDataset& data, Rng& rng, Split split, const TupleOptions& options = {});
RelightTuple sample_t2i(const RealDomainSet& real, Rng& rng, int resolution);
std::vector<RelightTuple> mix_batch(const LoadedDataset& data, const RealDomainSet& real, int batch_size,
                                    double relight_ratio, Rng& rng, const TupleOptions& options = {});

}  // namespace relight
