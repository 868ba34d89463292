// ============================================================================
// synth_test.cpp
//
// Synthetic performer traces, marker streams, profiles and cohorts.
// ============================================================================

#include "helpers.hpp"

#include "bowtrace/analytics.hpp"
#include "bowtrace/errors.hpp"
#include "bowtrace/geometry.hpp"
#include "bowtrace/kinematics.hpp"
#include "bowtrace/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

using namespace bowtrace;
using namespace bowtrace::synth;

TEST_SUITE("synth") {

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

TEST_CASE("builtin profiles encode the expected ordering") {
  const auto e = expert_profile();
  const auto b = beginner_profile();
  CHECK(e.base_pressure == 0.8);
  CHECK(e.pressure_floor == 0.5);
  CHECK(e.frog_attack_boost == 1.15);
  CHECK(b.tip_attenuation == 0.6);
  CHECK(b.speed_bulge == 1.4);
  CHECK_FALSE(b.pressure_floor.has_value());
  CHECK(e.tip_attenuation > b.tip_attenuation);
  CHECK(e.turn_sharpness < b.turn_sharpness);
  CHECK(resolve_profile("expert") == e);
  CHECK(resolve_profile("beginner") == b);
}

TEST_CASE("profile text round trip") {
  auto p = beginner_profile();
  p.name = "mine";
  p.seed = 123456789012345ull;
  CHECK(parse_profile(format_profile(p)) == p);
  const auto path = std::filesystem::temp_directory_path() / "bowtrace_profile_test.profile";
  save_profile(expert_profile(), path);
  CHECK(resolve_profile(path.string()) == expert_profile());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(parse_profile("tip_attenuation=3\n"), ParseError);
  CHECK_THROWS_AS(parse_profile("colour=red\n"), ParseError);
}

// ---------------------------------------------------------------------------
// generate_trace
// ---------------------------------------------------------------------------

TEST_CASE("protocol trace has 1500 frames and three round trips") {
  const auto t = generate_trace(expert_profile());
  CHECK(t.size() == 1500);
  CHECK(t.header().nominal_rate == 60.0);
  const auto seg = kinematics::segment(t, kinematics::detect_turns(t));
  CHECK(seg.round_trips.size() >= 3);
}

TEST_CASE("all modulation off gives constant pressure") {
  PerformerProfile p;
  p.base_pressure = 0.84;
  p.noise_sigma = 0.0;
  p.occlusion_rate = 0.0;
  p.tip_attenuation = 1.0;
  p.frog_attack_boost = 1.0;
  const auto t = generate_trace(p);
  for (const auto& s : t.samples()) CHECK(s.pressure == doctest::Approx(0.84).epsilon(1e-12));
}

TEST_CASE("same profile and seed give identical traces") {
  CHECK(generate_trace(beginner_profile()) == generate_trace(beginner_profile()));
  auto other = beginner_profile();
  other.seed += 1;
  CHECK_FALSE(generate_trace(other) == generate_trace(beginner_profile()));
}

TEST_CASE("pressures sit on the 0.06 N grid") {
  for (const auto& p : {expert_profile(), beginner_profile()}) {
    const auto t = generate_trace(p);
    std::set<long> levels;
    for (const auto& s : t.samples()) {
      const double steps = s.pressure / kPressureStep;
      CHECK(std::abs(steps - std::round(steps)) < 1e-9);
      levels.insert(std::lround(steps));
    }
    CHECK(levels.size() >= 3);
  }
}

TEST_CASE("expert floor holds under noise") {
  auto p = expert_profile();
  p.noise_sigma = 0.2;
  const auto t = generate_trace(p);
  for (const auto& s : t.samples()) CHECK(s.pressure >= 0.5);
  CHECK(analytics::achievement_rate(t, 0.5) == 1.0);
}

TEST_CASE("occlusion rate and burst structure") {
  auto p = beginner_profile();
  p.occlusion_rate = 0.1;
  TraceSpec spec;
  spec.duration = 300.0;
  const auto t = generate_trace(p, spec);
  std::size_t occluded = 0, run = 0;
  std::map<std::size_t, std::size_t> runs;
  for (const auto& s : t.samples()) {
    if (!s.valid_position) {
      ++occluded;
      ++run;
      CHECK_FALSE(s.position.has_value());
    } else if (run) {
      ++runs[run];
      run = 0;
    }
  }
  const double rate = static_cast<double>(occluded) / static_cast<double>(t.size());
  CHECK(rate == doctest::Approx(0.1).epsilon(0.25));
  CHECK(runs.begin()->first >= 3);
}

TEST_CASE("stroke progress covers the unit interval monotonically") {
  for (const double bulge : {0.6, 1.0, 1.4}) {
    for (const double ramp : {0.0, 0.05, 0.4}) {
      CHECK(stroke_progress(0.0, 3.2, ramp, bulge) == doctest::Approx(0.0));
      CHECK(stroke_progress(3.2, 3.2, ramp, bulge) == doctest::Approx(1.0));
      double last = -1.0;
      for (int i = 0; i <= 320; ++i) {
        const double u = stroke_progress(i * 0.01, 3.2, ramp, bulge);
        CHECK(u >= last);
        last = u;
      }
    }
  }
}

TEST_CASE("beginner middle speed exceeds end speed") {
  auto p = beginner_profile();
  p.occlusion_rate = 0.0;
  const auto t = kinematics::with_speed(generate_trace(p));
  const auto bins = analytics::bin_regions(t, {}, {});
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  CHECK(mean(bins[analytics::Region::Middle].speed) > 1.2 * mean(bins[analytics::Region::Frog].speed));
  CHECK(mean(bins[analytics::Region::Middle].speed) > 1.2 * mean(bins[analytics::Region::Tip].speed));
}

// ---------------------------------------------------------------------------
// Marker streams
// ---------------------------------------------------------------------------

TEST_CASE("marker stream inverts through geometry") {
  const auto t = generate_trace(beginner_profile());
  const auto model = rig_model();
  const auto frames = generate_marker_stream(t, model, 0.0);
  REQUIRE(frames.size() == t.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(frames[k].t_rx == t[k].t);
    if (!t[k].position) {
      for (std::size_t m = 5; m < 10; ++m) CHECK_FALSE(frames[k].points[m].has_value());
      CHECK(frames[k].points[0].has_value());
      continue;
    }
    worst = std::max(worst, std::abs(geometry::solve(frames[k].points, model).position - *t[k].position));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("half-millimetre marker noise keeps the position RMS small") {
  auto p = expert_profile();
  p.occlusion_rate = 0.0;
  const auto t = generate_trace(p);
  const auto model = rig_model();
  const auto frames = generate_marker_stream(t, model, 5e-4);
  double sq = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double e = geometry::solve(frames[k].points, model).position - *t[k].position;
    sq += e * e;
  }
  CHECK(std::sqrt(sq / static_cast<double>(t.size())) < 2e-3);
}

TEST_CASE("marker noise is seeded") {
  const auto t = generate_trace(expert_profile());
  const auto a = generate_marker_stream(t, rig_model(), 5e-4, 3);
  const auto b = generate_marker_stream(t, rig_model(), 5e-4, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].points == b[k].points);
}

// ---------------------------------------------------------------------------
// generate_cohort
// ---------------------------------------------------------------------------

TEST_CASE("default cohort has 24 traces per group") {
  const auto c = generate_cohort();
  CHECK(c.experts.size() == 24);
  CHECK(c.beginners.size() == 24);
  std::set<std::string> ids;
  for (const auto& t : c.experts) ids.insert(t.meta().participant);
  CHECK(ids.size() == 8);
  CHECK(ids.count("E01") == 1);
  CHECK(c.beginners.front().meta().participant == "B01");
  CHECK(c.beginners.back().meta().trial == 3);
}

TEST_CASE("cohorts are deterministic per seed") {
  CohortSpec spec;
  spec.n_per_group = 3;
  spec.trials_per_subject = 2;
  const auto a = generate_cohort(spec);
  const auto b = generate_cohort(spec);
  CHECK(a.experts == b.experts);
  CHECK(a.beginners == b.beginners);
  spec.seed += 1;
  CHECK_FALSE(generate_cohort(spec).experts == a.experts);
  spec.n_per_group = 1;
  CHECK_THROWS_AS(generate_cohort(spec), InvariantError);
}

}  // TEST_SUITE
