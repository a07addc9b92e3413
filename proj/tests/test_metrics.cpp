#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

#include "relight/error.hpp"
#include "relight/metrics.hpp"
#include "test_util.hpp"

using namespace relight;
namespace fs = std::filesystem;

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

ImageRgb constant_image(int w, int h, float v) {
  ImageRgb img(w, h);
  for (float& p : img.pixels) p = v;
  return img;
}

// Direct windowed sums, no summed-area tables.
double ssim_brute(const ImageRgb& a, const ImageRgb& b) {
  const int k = 8;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    int windows = 0;
    for (int y0 = 0; y0 + k <= a.height; ++y0) {
      for (int x0 = 0; x0 + k <= a.width; ++x0) {
        double ma = 0, mb = 0;
        for (int y = y0; y < y0 + k; ++y)
          for (int x = x0; x < x0 + k; ++x) {
            ma += a.at(x, y, c);
            mb += b.at(x, y, c);
          }
        ma /= k * k;
        mb /= k * k;
        double va = 0, vb = 0, cov = 0;
        for (int y = y0; y < y0 + k; ++y)
          for (int x = x0; x < x0 + k; ++x) {
            const double da = a.at(x, y, c) - ma, db = b.at(x, y, c) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= k * k;
        vb /= k * k;
        cov /= k * k;
        sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
    total += sum / windows;
  }
  return total / 3.0;
}

DatasetBuildConfig small_build(int subjects, int envs, int rotations, int res, std::uint64_t seed) {
  DatasetBuildConfig c;
  c.n_subjects = subjects;
  c.n_envs = envs;
  c.rotations_per_env = rotations;
  c.seed = seed;
  c.render.resolution = res;
  c.render.shadow_samples = 2;
  c.render.env_cosine_samples = 16;
  c.render.bright_texel_count = 8;
  c.env_height = 16;
  c.real_count = 2;
  return c;
}

}  // namespace

TEST_CASE("psnr: cap, derived values, symmetry, shape errors") {
  const ImageRgb z = constant_image(8, 8, 0.0f);
  const ImageRgb o = constant_image(8, 8, 1.0f);
  CHECK(psnr(z, z) == 99.0);
  CHECK(psnr(z, o) == doctest::Approx(0.0).epsilon(1e-12));
  // constant offset 0.1 -> MSE 0.01
  const ImageRgb a = constant_image(8, 8, 0.3f);
  const ImageRgb b = constant_image(8, 8, 0.4f);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const ImageRgb x = testutil::random_image(rng, 9, 9);
    const ImageRgb y = testutil::random_image(rng, 9, 9);
    CHECK(psnr(x, y) == psnr(y, x));
    CHECK(psnr(x, y) > 0.0);
    CHECK(psnr(x, y) <= 99.0);
  }
  CHECK(code_of([&] { psnr(z, constant_image(8, 9, 0.0f)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("ssim: identity, luminance-only value, brute-force equivalence, errors") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const ImageRgb x = testutil::random_image(rng, 10, 12);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  }
  const double expected = (2 * 0.0 * 1.0 + 1e-4) / (0.0 + 1.0 + 1e-4);
  CHECK(ssim(constant_image(8, 8, 0.0f), constant_image(8, 8, 1.0f)) == doctest::Approx(expected).epsilon(1e-9));

  for (int i = 0; i < 10; ++i) {
    const ImageRgb x = testutil::random_image(rng, 13, 11);
    ImageRgb y = x;
    std::normal_distribution<float> n(0.0f, 0.2f);
    for (float& v : y.pixels) v = std::clamp(v + n(rng), 0.0f, 1.0f);
    CHECK(std::abs(ssim(x, y) - ssim_brute(x, y)) < 1e-6);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
  }
  CHECK(code_of([] { ssim(constant_image(7, 8, 0.f), constant_image(7, 8, 0.f)); }) == ErrorCode::TooSmall);
  CHECK(code_of([] { ssim(constant_image(8, 8, 0.f), constant_image(9, 8, 0.f)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("identity_proxy: zero on equal, symmetric, mask-only, empty mask") {
  Rng rng(3);
  const Mask full = testutil::full_mask(16, 16);
  for (int i = 0; i < 100; ++i) {
    const ImageRgb x = testutil::random_image(rng, 16, 16);
    const ImageRgb y = testutil::random_image(rng, 16, 16);
    CHECK(identity_proxy(x, x, full) == 0.0);
    CHECK(identity_proxy(x, y, full) == identity_proxy(y, x, full));
    CHECK(identity_proxy(x, y, full) > 0.0);
  }
  // Only masked pixels count: differences outside the mask vanish.
  Mask half(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 8; ++x) half.at(x, y) = 1;
  const ImageRgb a = testutil::random_image(rng, 16, 16);
  ImageRgb b = a;
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x)
      for (int c = 0; c < 3; ++c) b.at(x, y, c) = 0.5f;
  CHECK(identity_proxy(a, b, half) == 0.0);
  CHECK(identity_proxy(a, b, full) > 0.0);
  CHECK(code_of([&] { identity_proxy(a, a, Mask(16, 16)); }) == ErrorCode::EmptyMask);
}

TEST_CASE("identity_proxy: same subject under new light beats new subject under same light") {
  testutil::TempDir dir("metrics_identity");
  // 50 subjects -> 5 held out
  const DatasetManifest m = build_dataset(small_build(50, 10, 1, 32, 11), dir.path / "d");
  const LoadedDataset data(m);
  const std::vector<int> test_subjects = m.subjects_in(Split::Test);
  REQUIRE(test_subjects.size() == 5);
  // Renders composited black outside their own subject, scored over the union.
  auto cut = [&](int s, int e) { return apply_mask(data.image(s, e, 0), data.mask(s, e, 0)); };
  auto both = [&](const Mask& a, const Mask& b) {
    Mask u = a;
    for (std::size_t i = 0; i < u.values.size(); ++i) u.values[i] = a.values[i] | b.values[i];
    return u;
  };
  Rng rng(17);
  std::uniform_int_distribution<int> env(0, 9);
  std::uniform_int_distribution<int> pick(0, 4);
  double same_subject = 0.0, same_light = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int s = test_subjects[static_cast<std::size_t>(pick(rng))];
    int other = s;
    while (other == s) other = test_subjects[static_cast<std::size_t>(pick(rng))];
    const int e1 = env(rng);
    int e2 = env(rng);
    while (e2 == e1) e2 = env(rng);
    const ImageRgb anchor = cut(s, e1);
    same_subject += identity_proxy(anchor, cut(s, e2), both(data.mask(s, e1, 0), data.mask(s, e2, 0)));
    same_light += identity_proxy(anchor, cut(other, e1), both(data.mask(s, e1, 0), data.mask(other, e1, 0)));
  }
  MESSAGE("mean d(same subject) = " << same_subject / 20 << ", mean d(same light) = " << same_light / 20);
  CHECK(same_subject < same_light);
}

TEST_CASE("eval_set: copy baseline, oracle stub, CSV round trip, aggregates") {
  testutil::TempDir dir("metrics_eval");
  const DatasetManifest m = build_dataset(small_build(10, 10, 2, 16, 4), dir.path / "d");
  const LoadedDataset data(m);
  const std::vector<EvalPair> plan = pairing_plan(m, 9);
  // 1 test subject x 1 test env x 2 rotations
  REQUIRE(plan.size() == 2);
  CHECK(pairing_plan(m, 9).size() == plan.size());
  for (const EvalPair& p : plan) {
    CHECK(m.subject_split[static_cast<std::size_t>(p.subject)] == Split::Test);
    CHECK(m.env_split[static_cast<std::size_t>(p.target_env)] == Split::Test);
    CHECK_FALSE((p.input_env == p.target_env && p.input_rotation == p.target_rotation));
  }

  EvalOptions opt;
  opt.steps = 10;
  const fs::path csv = dir.path / "copy.csv";
  const EvalReport copy = eval_set(CopyInputRelighter{}, data, plan, opt, csv);
  REQUIRE(copy.rows.size() == plan.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const EvalPair& p = plan[i];
    CHECK(copy.rows[i].psnr_db ==
          psnr(data.image(p.subject, p.input_env, p.input_rotation), data.image(p.subject, p.target_env, p.target_rotation)));
    mean += copy.rows[i].psnr_db;
  }
  CHECK(std::abs(copy.mean_psnr - mean / plan.size()) < 1e-9);

  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "subject,env,rotation,psnr_db,ssim,identity_proxy");
  const EvalReport back = read_report_csv(csv);
  REQUIRE(back.rows.size() == copy.rows.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    CHECK(back.rows[i].psnr_db == copy.rows[i].psnr_db);
    CHECK(back.rows[i].ssim == copy.rows[i].ssim);
    CHECK(back.rows[i].identity_proxy == copy.rows[i].identity_proxy);
  }
  CHECK(std::abs(back.mean_psnr - copy.mean_psnr) < 1e-9);
  CHECK(std::abs(back.mean_ssim - copy.mean_ssim) < 1e-9);
  CHECK(std::abs(back.mean_identity - copy.mean_identity) < 1e-9);

  const NoiseSchedule schedule = make_schedule();
  const EvalReport oracle = eval_set(OracleEpsRelighter(schedule), data, plan, opt, {});
  CHECK(oracle.mean_psnr > 60.0);
  CHECK(oracle.mean_ssim > copy.mean_ssim);
  const EvalReport again = eval_set(OracleEpsRelighter(schedule), data, plan, opt, {});
  CHECK(again.mean_psnr == oracle.mean_psnr);

  CHECK(code_of([&] { eval_set(CopyInputRelighter{}, data, std::span<const EvalPair>{}, opt, {}); }) ==
        ErrorCode::EmptySplit);
}

TEST_CASE("external_metric: one float from a subprocess") {
  testutil::TempDir dir("metrics_ext");
  CHECK(external_metric("echo 0.25 #", dir.path / "a b.png", dir.path / "c.png") == doctest::Approx(0.25));
  CHECK(code_of([&] { external_metric("true", dir.path / "a.png", dir.path / "b.png"); }) == ErrorCode::IoFailure);
}
