#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "relight/dataset.hpp"
#include "relight/image.hpp"
#include "relight/sampler.hpp"

namespace relight {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 8;

/// 10 log10(1 / MSE) for [0,1] images; 99 dB when identical.
double psnr(const ImageRgb& a, const ImageRgb& b);

/// Single-scale SSIM with a uniform 8x8 window at stride 1 (valid windows
/// only), C1 = 0.01^2, C2 = 0.03^2, averaged over windows and channels.
double ssim(const ImageRgb& a, const ImageRgb& b);

/// RMS difference over masked pixels of a three-band Laplacian stack. The
/// low-pass residual is left out so smooth shading changes count less than
/// albedo texture and silhouette detail. Both images are masked first.
/// To compare two different subjects, pass images that are already black
/// outside their own subject and the union of the two masks, so the
/// silhouette difference counts.
double identity_proxy(const ImageRgb& a, const ImageRgb& b, const Mask& mask);

/// Band-pass features, three bands of 3 channels each, at full resolution.
std::vector<ImageRgb> laplacian_bands(const ImageRgb& image);

/// Runs `<command> <a> <b>` and parses one float from its stdout.
double external_metric(const std::string& command, const std::filesystem::path& a, const std::filesystem::path& b);

struct EvalPair {
  int subject = 0;
  int input_env = 0;
  int input_rotation = 0;
  int target_env = 0;
  int target_rotation = 0;
};

/// Every test subject toward every test env x rotation, each with an input
/// drawn (seeded) from that subject's other renders.
std::vector<EvalPair> pairing_plan(const DatasetManifest& manifest, std::uint64_t seed);

struct EvalRow {
  int subject = 0;
  int env = 0;
  int rotation = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double identity_proxy = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_identity = 0.0;
};

struct EvalOptions {
  GuidanceParams guidance{};
  int steps = 50;
  std::uint64_t seed = 0;
  /// Optional directory for per-pair output PNGs.
  std::filesystem::path image_dir;
};

/// Relights every pair, scores the output against the ground-truth target
/// render and writes `subject,env,rotation,psnr_db,ssim,identity_proxy` to
/// out_csv when it is non-empty.
EvalReport eval_set(const Relighter& relighter, const LoadedDataset& data, std::span<const EvalPair> plan,
                    const EvalOptions& options, const std::filesystem::path& out_csv);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
/// Reads a report CSV back and recomputes the means from its rows.
EvalReport read_report_csv(const std::filesystem::path& path);

/// The request eval_set issues for a pair.
SampleRequest eval_request(const LoadedDataset& data, const EvalPair& pair, const EvalOptions& options,
                           std::size_t index);

}  // namespace relight
