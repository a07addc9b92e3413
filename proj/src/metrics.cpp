#include "relight/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "relight/error.hpp"

namespace relight {

namespace fs = std::filesystem;

namespace {

void check_same(const ImageRgb& a, const ImageRgb& b) {
  if (a.width != b.width || a.height != b.height) {
    fail(ErrorCode::ShapeMismatch, std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                       std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

}  // namespace

double psnr(const ImageRgb& a, const ImageRgb& b) {
  check_same(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.pixels.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageRgb& a, const ImageRgb& b) {
  check_same(a, b);
  const int w = a.width;
  const int h = a.height;
  const int k = kSsimWindow;
  if (w < k || h < k) fail(ErrorCode::TooSmall, "image smaller than the 8x8 SSIM window");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double n = static_cast<double>(k) * k;

  // Summed-area tables of a, b, a^2, b^2, ab with a zero border.
  const std::size_t stride = static_cast<std::size_t>(w) + 1;
  std::vector<double> sa(stride * (h + 1)), sb(sa.size()), saa(sa.size()), sbb(sa.size()), sab(sa.size());
  auto at = [&](int x, int y) { return static_cast<std::size_t>(y) * stride + x; };
  auto box = [&](const std::vector<double>& s, int x, int y) {
    return s[at(x + k, y + k)] - s[at(x, y + k)] - s[at(x + k, y)] + s[at(x, y)];
  };

  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double va = a.at(x, y, c);
        const double vb = b.at(x, y, c);
        const std::size_t i = at(x + 1, y + 1);
        const std::size_t up = at(x + 1, y);
        const std::size_t left = at(x, y + 1);
        const std::size_t diag = at(x, y);
        sa[i] = va + sa[up] + sa[left] - sa[diag];
        sb[i] = vb + sb[up] + sb[left] - sb[diag];
        saa[i] = va * va + saa[up] + saa[left] - saa[diag];
        sbb[i] = vb * vb + sbb[up] + sbb[left] - sbb[diag];
        sab[i] = va * vb + sab[up] + sab[left] - sab[diag];
      }
    }
    double sum = 0.0;
    for (int y = 0; y + k <= h; ++y) {
      for (int x = 0; x + k <= w; ++x) {
        const double ma = box(sa, x, y) / n;
        const double mb = box(sb, x, y) / n;
        const double va = box(saa, x, y) / n - ma * ma;
        const double vb = box(sbb, x, y) / n - mb * mb;
        const double cov = box(sab, x, y) / n - ma * mb;
        sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
    total += sum / (static_cast<double>(w - k + 1) * (h - k + 1));
  }
  return total / 3.0;
}

std::vector<ImageRgb> laplacian_bands(const ImageRgb& image) {
  constexpr int kBands = 3;
  std::vector<ImageRgb> gauss{image};
  for (int l = 0; l < kBands; ++l) {
    const ImageRgb& g = gauss.back();
    gauss.push_back(resize_area(g, std::max(1, (g.width + 1) / 2), std::max(1, (g.height + 1) / 2)));
  }
  std::vector<ImageRgb> bands;
  for (int l = 0; l < kBands; ++l) {
    const ImageRgb& g = gauss[static_cast<std::size_t>(l)];
    ImageRgb band = resize_area(gauss[static_cast<std::size_t>(l) + 1], g.width, g.height);
    for (std::size_t i = 0; i < band.pixels.size(); ++i) band.pixels[i] = g.pixels[i] - band.pixels[i];
    if (l > 0) band = resize_area(band, image.width, image.height);
    bands.push_back(std::move(band));
  }
  return bands;
}

double identity_proxy(const ImageRgb& a, const ImageRgb& b, const Mask& mask) {
  check_same(a, b);
  if (mask.width != a.width || mask.height != a.height) fail(ErrorCode::ShapeMismatch, "mask size differs from image");
  const std::size_t count = mask.count();
  if (count == 0) fail(ErrorCode::EmptyMask, "identity proxy needs at least one masked pixel");
  const std::vector<ImageRgb> fa = laplacian_bands(apply_mask(a, mask));
  const std::vector<ImageRgb> fb = laplacian_bands(apply_mask(b, mask));
  double sum = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        if (!mask.at(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          const double d = static_cast<double>(fa[l].at(x, y, c)) - fb[l].at(x, y, c);
          sum += d * d;
        }
      }
    }
  }
  return std::sqrt(sum / (static_cast<double>(count) * 3.0 * static_cast<double>(fa.size())));
}

double external_metric(const std::string& command, const fs::path& a, const fs::path& b) {
  auto quote = [](const std::string& s) {
    std::string q = "'";
    for (char ch : s) q += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
    return q + "'";
  };
  const std::string cmd = command + " " + quote(a.string()) + " " + quote(b.string());
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) fail(ErrorCode::IoFailure, "cannot run " + command);
  char buf[256];
  std::string out;
  while (std::fgets(buf, sizeof buf, pipe.get())) out += buf;
  std::istringstream in(out);
  double v = 0.0;
  if (!(in >> v)) fail(ErrorCode::IoFailure, "external metric printed no number: " + out);
  return v;
}

std::vector<EvalPair> pairing_plan(const DatasetManifest& m, std::uint64_t seed) {
  std::vector<EvalPair> plan;
  const int n_envs = static_cast<int>(m.env_specs.size());
  const int variants = n_envs * m.rotations_per_env;
  for (int s : m.subjects_in(Split::Test)) {
    for (int e : m.envs_in(Split::Test)) {
      for (int r = 0; r < m.rotations_per_env; ++r) {
        if (variants < 2) continue;
        Rng rng(derive_seed(seed, plan.size()));
        std::uniform_int_distribution<int> pick(0, variants - 2);
        int v = pick(rng);
        if (v >= e * m.rotations_per_env + r) ++v;  // skip the target itself
        plan.push_back({s, v / m.rotations_per_env, v % m.rotations_per_env, e, r});
      }
    }
  }
  return plan;
}

SampleRequest eval_request(const LoadedDataset& data, const EvalPair& p, const EvalOptions& options,
                           std::size_t index) {
  const DatasetManifest& m = data.manifest();
  SampleRequest r;
  r.input_image = data.image(p.subject, p.input_env, p.input_rotation);
  r.input_mask = data.mask(p.subject, p.input_env, p.input_rotation);
  r.env = data.env(p.target_env);
  r.rotation = m.rotations[static_cast<std::size_t>(p.target_env)][static_cast<std::size_t>(p.target_rotation)];
  r.clip_max = m.clip_max;
  r.label = data.label(p.subject);
  r.steps = options.steps;
  r.guidance = options.guidance;
  r.seed = derive_seed(options.seed, 0xE7A1000000ull + index);
  return r;
}

namespace {

void finalize(EvalReport& report) {
  double p = 0.0, s = 0.0, d = 0.0;
  for (const EvalRow& row : report.rows) {
    p += row.psnr_db;
    s += row.ssim;
    d += row.identity_proxy;
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean_psnr = n > 0 ? p / n : 0.0;
  report.mean_ssim = n > 0 ? s / n : 0.0;
  report.mean_identity = n > 0 ? d / n : 0.0;
}

}  // namespace

EvalReport eval_set(const Relighter& relighter, const LoadedDataset& data, std::span<const EvalPair> plan,
                    const EvalOptions& options, const fs::path& out_csv) {
  if (plan.empty()) fail(ErrorCode::EmptySplit, "the pairing plan is empty (no held-out subject/env pairs)");
  if (!options.image_dir.empty()) fs::create_directories(options.image_dir);
  EvalReport report;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const EvalPair& p = plan[i];
    const ImageRgb& target = data.image(p.subject, p.target_env, p.target_rotation);
    const ImageRgb out = relighter.run(eval_request(data, p, options, i), target);
    EvalRow row;
    row.subject = p.subject;
    row.env = p.target_env;
    row.rotation = p.target_rotation;
    row.psnr_db = psnr(out, target);
    row.ssim = ssim(out, target);
    row.identity_proxy = identity_proxy(out, target, data.mask(p.subject, p.target_env, p.target_rotation));
    report.rows.push_back(row);
    if (!options.image_dir.empty()) {
      write_png(options.image_dir / ("pair_" + std::to_string(i) + ".png"), quantize(montage({
          data.image(p.subject, p.input_env, p.input_rotation), out, target}, 3)));
    }
  }
  finalize(report);
  if (!out_csv.empty()) write_report_csv(report, out_csv);
  return report;
}

void write_report_csv(const EvalReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "subject,env,rotation,psnr_db,ssim,identity_proxy\n";
  for (const EvalRow& r : report.rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%d,%d,%d,%.17g,%.17g,%.17g\n", r.subject, r.env, r.rotation, r.psnr_db, r.ssim,
                  r.identity_proxy);
    out << line;
  }
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

EvalReport read_report_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  EvalReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EvalRow r;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf,%lf", &r.subject, &r.env, &r.rotation, &r.psnr_db, &r.ssim,
                    &r.identity_proxy) != 6) {
      fail(ErrorCode::MalformedHeader, "bad report row: " + line);
    }
    report.rows.push_back(r);
  }
  finalize(report);
  return report;
}

}  // namespace relight
