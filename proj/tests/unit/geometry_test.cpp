// ============================================================================
// geometry_test.cpp
//
// Axis fitting, closest-point contact, calibration and the model file.
// Random oblique rigs are built from a known contact parameter and inverted.
// ============================================================================

#include "helpers.hpp"

#include "bowtrace/errors.hpp"
#include "bowtrace/geometry.hpp"
#include "bowtrace/synth.hpp"

#include <Eigen/Geometry>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace bowtrace;
using namespace bowtrace::geometry;

namespace {

const std::vector<double> kOffsets{0.0, 0.15, 0.3, 0.45, 0.6};

InstrumentModel offset_model(double frog = 0.05, double tip = 0.70) {
  InstrumentModel m;
  m.assignment.string_markers = {0, 1, 2};
  m.assignment.bow_markers = {5, 6, 7, 8, 9};
  m.assignment.bow_offsets = kOffsets;
  m.frog_param = frog;
  m.tip_param = tip;
  return m;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do v = Vec3(n(rng), n(rng), n(rng));
  while (v.norm() < 1e-3);
  return v.normalized();
}

// Markers for a bow whose hair crosses the string at bow parameter `s`,
// separated from it by `gap` along the common normal.
MarkerSet rig(const Vec3& string_origin, const Vec3& string_dir, const Vec3& bow_dir, double s, double gap,
              double string_at = 0.1) {
  MarkerSet m{};
  for (std::size_t i = 0; i < 3; ++i) m[i] = string_origin + (0.12 * static_cast<double>(i)) * string_dir;
  const Vec3 normal = string_dir.cross(bow_dir).normalized();
  const Vec3 contact = string_origin + string_at * string_dir + gap * normal;
  const Vec3 bow_origin = contact - s * bow_dir;
  for (std::size_t i = 0; i < kOffsets.size(); ++i) m[5 + i] = bow_origin + kOffsets[i] * bow_dir;
  return m;
}

// Independent closest-point oracle: golden-section search of the distance
// from the bow line to the string line (convex in the bow parameter).
double brute_force_param(const Line3& string_line, const Line3& bow_line) {
  auto dist = [&](double s) {
    const Vec3 p = bow_line.at(s);
    const Vec3 d = p - string_line.origin;
    return (d - d.dot(string_line.direction) * string_line.direction).norm();
  };
  double lo = -10.0, hi = 10.0;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 200; ++i) {
    const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    if (dist(a) < dist(b)) hi = b;
    else lo = a;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_SUITE("geometry") {

// ---------------------------------------------------------------------------
// fit_line / fit_axes
// ---------------------------------------------------------------------------

TEST_CASE("two points define the line exactly") {
  const std::vector<Vec3> pts{Vec3(1, 2, 3), Vec3(4, 6, 3)};
  const auto l = fit_line(pts);
  CHECK((l.direction - Vec3(0.6, 0.8, 0.0)).norm() < 1e-12);
  const Vec3 d = pts[0] - l.origin;
  CHECK((d - d.dot(l.direction) * l.direction).norm() < 1e-12);
}

TEST_CASE("least-squares line stays within the perturbation") {
  const Vec3 origin(0.1, -0.3, 0.2);
  const Vec3 dir = Vec3(1, 2, -1).normalized();
  std::vector<Vec3> pts{origin, origin + 0.1 * dir, origin + 0.2 * dir};
  pts[1] += 1e-3 * Vec3(0, 1, 2).cross(dir).normalized();
  const auto l = fit_line(pts);
  for (const double s : {-0.1, 0.0, 0.1, 0.2, 0.3}) {
    const Vec3 d = (origin + s * dir) - l.origin;
    CHECK((d - d.dot(l.direction) * l.direction).norm() < 1e-3);
  }
}

TEST_CASE("line orientation follows marker order") {
  const std::vector<Vec3> fwd{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)};
  const std::vector<Vec3> back{Vec3(2, 0, 0), Vec3(1, 0, 0), Vec3(0, 0, 0)};
  CHECK(fit_line(fwd).direction.x() > 0.0);
  CHECK(fit_line(back).direction.x() < 0.0);
}

TEST_CASE("missing bow markers raise an occlusion error") {
  auto m = rig(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 0.3, 0.0);
  for (std::size_t i = 5; i < 10; ++i) m[i].reset();
  CHECK_THROWS_AS(fit_axes(m, offset_model().assignment), OcclusionError);
  auto one = rig(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), 0.3, 0.0);
  for (std::size_t i = 6; i < 10; ++i) one[i].reset();
  CHECK_THROWS_AS(solve(one, offset_model()), OcclusionError);
}

TEST_CASE("any two visible bow markers give the same contact") {
  const auto model = offset_model();
  const auto full = rig(Vec3(0.1, 0.2, 0.3), Vec3(1, 0, 0.2).normalized(), Vec3(0.1, 1, 0).normalized(), 0.4, 0.0);
  const double expected = solve(full, model).position;
  for (std::size_t a = 5; a < 10; ++a) {
    for (std::size_t b = a + 1; b < 10; ++b) {
      MarkerSet m = full;
      for (std::size_t i = 5; i < 10; ++i)
        if (i != a && i != b) m[i].reset();
      CHECK(solve(m, model).position == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

// ---------------------------------------------------------------------------
// contact
// ---------------------------------------------------------------------------

TEST_CASE("perpendicular crossing at the midpoint gives 0.5") {
  InstrumentModel model;  // frog_param 0, tip_param 1
  const Line3 string_line{Vec3(0.5, 0.0, 0.0), Vec3::UnitY()};
  const Line3 bow_line{Vec3::Zero(), Vec3::UnitX()};
  const auto sol = contact(string_line, bow_line, model);
  CHECK(sol.position == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sol.gap == doctest::Approx(0.0));
  CHECK(sol.raw_param == doctest::Approx(0.5));
}

TEST_CASE("crossing at the frog gives 0") {
  InstrumentModel model;
  const Line3 string_line{Vec3::Zero(), Vec3::UnitY()};
  const Line3 bow_line{Vec3::Zero(), Vec3::UnitX()};
  CHECK(contact(string_line, bow_line, model).position == 0.0);
}

TEST_CASE("parallel axes are degenerate") {
  InstrumentModel model;
  const Line3 a{Vec3::Zero(), Vec3::UnitX()};
  const Line3 b{Vec3(0, 1, 0), Vec3::UnitX()};
  CHECK_THROWS_AS(contact(a, b, model), DegenerateGeometryError);
}

TEST_CASE("large gaps attach a warning but still solve") {
  InstrumentModel model;
  const Line3 string_line{Vec3(0.5, 0.0, 0.08), Vec3::UnitY()};
  const Line3 bow_line{Vec3::Zero(), Vec3::UnitX()};
  const auto sol = contact(string_line, bow_line, model);
  CHECK(sol.gap == doctest::Approx(0.08));
  CHECK(sol.gap_warning);
  CHECK(sol.position == doctest::Approx(0.5));
}

TEST_CASE("random oblique rigs invert to the ground truth") {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto model = offset_model();
  double worst = 0.0, worst_oracle = 0.0;
  for (int i = 0; i < 500; ++i) {
    const Vec3 sdir = random_unit(rng);
    Vec3 bdir = random_unit(rng);
    if (sdir.cross(bdir).norm() < 0.2) continue;
    const double truth = u(rng);
    const double s = model.frog_param + truth * (model.tip_param - model.frog_param);
    const Vec3 origin(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    const auto m = rig(origin, sdir, bdir, s, 0.01 * u(rng));
    const auto sol = solve(m, model);
    worst = std::max(worst, std::abs(sol.position - truth));
    const auto axes = fit_axes(m, model.assignment);
    worst_oracle = std::max(worst_oracle, std::abs(sol.raw_param - brute_force_param(axes.string_line, axes.bow_line)));
  }
  CHECK(worst < 1e-9);
  CHECK(worst_oracle < 1e-6);
}

TEST_CASE("property: rigid motions leave the position unchanged") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto model = offset_model();
  const auto base = rig(Vec3(0.0, 0.1, 0.0), Vec3(1, 0.1, 0).normalized(), Vec3(0.2, 1, 0.3).normalized(), 0.37, 0.003);
  const double expected = solve(base, model).position;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Quaterniond q = Eigen::Quaterniond::UnitRandom();
    const Vec3 shift(u(rng), u(rng), u(rng));
    MarkerSet moved = base;
    for (auto& p : moved)
      if (p) p = q * *p + shift;
    CHECK(std::abs(solve(moved, model).position - expected) < 1e-9);
  }
}

TEST_CASE("property: sliding the contact toward the tip is monotone") {
  const auto model = offset_model();
  const Vec3 sdir = Vec3(1, 0.2, 0.1).normalized();
  const Vec3 bdir = Vec3(-0.3, 1, 0.2).normalized();
  double last = -1.0;
  for (int k = 0; k <= 200; ++k) {
    const double s = -0.1 + 0.9 * k / 200.0;
    const double p = solve(rig(Vec3::Zero(), sdir, bdir, s, 0.001), model).position;
    CHECK(p >= last);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    last = p;
  }
  CHECK(solve(rig(Vec3::Zero(), sdir, bdir, -0.1, 0.0), model).position == 0.0);
  CHECK(solve(rig(Vec3::Zero(), sdir, bdir, 0.8, 0.0), model).position == 1.0);
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

TEST_CASE("single exact frames at each end calibrate to their parameters") {
  auto model = offset_model(0.0, 1.0);
  const Vec3 sdir = Vec3::UnitX(), bdir = Vec3::UnitY();
  const std::vector<MarkerSet> frog{rig(Vec3::Zero(), sdir, bdir, 0.0, 0.0)};
  const std::vector<MarkerSet> tip{rig(Vec3::Zero(), sdir, bdir, 1.0, 0.0)};
  const auto cal = calibrate(frog, tip, model);
  CHECK(cal.frog_param == doctest::Approx(0.0));
  CHECK(cal.tip_param == doctest::Approx(1.0));
}

TEST_CASE("noisy calibration frames give medians within the noise bound") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 2e-4);
  auto model = offset_model();
  const Vec3 sdir = Vec3(1, 0, 0.1).normalized(), bdir = Vec3(0.1, 1, 0).normalized();
  auto noisy = [&](double s) {
    auto m = rig(Vec3::Zero(), sdir, bdir, s, 0.0);
    for (auto& p : m)
      if (p) *p += Vec3(noise(rng), noise(rng), noise(rng));
    return m;
  };
  std::vector<MarkerSet> frog, tip;
  for (int i = 0; i < 11; ++i) {
    frog.push_back(noisy(0.05));
    tip.push_back(noisy(0.70));
  }
  const auto cal = calibrate(frog, tip, model);
  CHECK(std::abs(cal.frog_param - 0.05) < 2e-3);
  CHECK(std::abs(cal.tip_param - 0.70) < 2e-3);
}

TEST_CASE("swapped calibration frames are detected") {
  auto model = offset_model();
  const Vec3 sdir = Vec3::UnitX(), bdir = Vec3::UnitY();
  const std::vector<MarkerSet> frog{rig(Vec3::Zero(), sdir, bdir, 0.05, 0.0)};
  const std::vector<MarkerSet> tip{rig(Vec3::Zero(), sdir, bdir, 0.70, 0.0)};
  CHECK_THROWS_AS(calibrate(tip, frog, model), CalibrationError);
}

TEST_CASE("overlapping calibration frames fail") {
  auto model = offset_model();
  const Vec3 sdir = Vec3::UnitX(), bdir = Vec3::UnitY();
  const std::vector<MarkerSet> frog{rig(Vec3::Zero(), sdir, bdir, 0.30, 0.0), rig(Vec3::Zero(), sdir, bdir, 0.36, 0.0)};
  const std::vector<MarkerSet> tip{rig(Vec3::Zero(), sdir, bdir, 0.33, 0.0), rig(Vec3::Zero(), sdir, bdir, 0.40, 0.0)};
  CHECK_THROWS_AS(calibrate(frog, tip, model), CalibrationError);
}

// ---------------------------------------------------------------------------
// Model file and synthetic rig
// ---------------------------------------------------------------------------

TEST_CASE("model file round trip") {
  const auto model = synth::rig_model();
  const auto back = parse_model(format_model(model));
  CHECK(back.assignment.string_markers == model.assignment.string_markers);
  CHECK(back.assignment.bow_markers == model.assignment.bow_markers);
  CHECK(back.assignment.bow_offsets == model.assignment.bow_offsets);
  CHECK(back.frog_param == model.frog_param);
  CHECK(back.tip_param == model.tip_param);
  CHECK(back.gap_warning == model.gap_warning);
  CHECK_THROWS_AS(parse_model("frog_param=0.2\ntip_param=0.2\n"), ParseError);
  CHECK_THROWS_AS(parse_model("bow_markers=b0,z9\n"), ParseError);
}

TEST_CASE("synthetic marker streams invert exactly at zero noise") {
  const auto trace = testing::make_trace(
      600, [](double t) { return testing::triangle(t, 6.4); }, [](double) { return 0.8; });
  const auto model = synth::rig_model();
  const auto frames = synth::generate_marker_stream(trace, model, 0.0);
  REQUIRE(frames.size() == trace.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < frames.size(); ++k)
    worst = std::max(worst, std::abs(solve(frames[k].points, model).position - *trace[k].position));
  CHECK(worst < 1e-9);
}

}  // TEST_SUITE
