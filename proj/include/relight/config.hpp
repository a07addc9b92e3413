#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "relight/dataset.hpp"
#include "relight/network.hpp"
#include "relight/sampler.hpp"
#include "relight/trainer.hpp"

namespace relight {

inline constexpr int kRunConfigSchema = 1;

struct DataSection {
  DatasetBuildConfig build{};
  /// Dataset directory; relative paths resolve against run_dir.
  std::string dir = "data";
  bool operator==(const DataSection& o) const;
};

struct SampleSection {
  int steps = 50;
  GuidanceParams guidance{};
  bool operator==(const SampleSection&) const = default;
};

struct EvalSection {
  int steps = 50;
  std::uint64_t pairing_seed = 0;
  /// Optional `<cmd> <imgA> <imgB>` metric hook; empty disables it.
  std::string external_metric;
  bool save_images = true;
  bool operator==(const EvalSection&) const = default;
};

struct RunConfig {
  int schema_version = kRunConfigSchema;
  std::uint64_t seed = 0;
  std::string run_dir = "run";
  DataSection data{};
  UNetConfig model{};
  TrainConfig train{};
  SampleSection sample{};
  EvalSection eval{};

  std::filesystem::path data_dir() const;
  std::filesystem::path train_dir() const { return std::filesystem::path(run_dir) / "train"; }
  bool operator==(const RunConfig& o) const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict parse: unknown keys raise UnknownConfigKey naming the path,
/// a wrong schema_version raises VersionMismatch.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_text(const RunConfig& config);
/// Writes run_dir/config.json.
void write_snapshot(const RunConfig& config);

/// Copies the global seed into every module seed that follows it.
void propagate_seed(RunConfig& config, std::uint64_t seed);

/// Checks every section; raises InvalidConfig.
void validate(const RunConfig& config);

}  // namespace relight
