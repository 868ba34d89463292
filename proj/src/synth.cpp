#include "bowtrace/synth.hpp"

#include "bowtrace/errors.hpp"
#include "bowtrace/recording.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace bowtrace::synth {

namespace {

bool in_fraction_range(double v) { return v > 0.0 && v <= 2.0; }

double to_double(std::string_view s, std::string_view key, std::size_t lineno) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ParseError(fmt::format("invalid number '{}' for {}", s, key), lineno);
  return v;
}

}  // namespace

void PerformerProfile::validate() const {
  if (!(base_pressure > 0.0)) throw InvariantError("base_pressure must be > 0");
  if (pressure_floor && !(*pressure_floor >= 0.0)) throw InvariantError("pressure_floor must be >= 0");
  if (!in_fraction_range(tip_attenuation)) throw InvariantError("tip_attenuation must be in (0, 2]");
  if (!in_fraction_range(frog_attack_boost)) throw InvariantError("frog_attack_boost must be in (0, 2]");
  if (!in_fraction_range(speed_bulge)) throw InvariantError("speed_bulge must be in (0, 2]");
  if (!(turn_sharpness >= 0.0)) throw InvariantError("turn_sharpness must be >= 0");
  if (!(noise_sigma >= 0.0)) throw InvariantError("noise_sigma must be >= 0");
  if (!(occlusion_rate >= 0.0 && occlusion_rate < 1.0)) throw InvariantError("occlusion_rate must be in [0, 1)");
}

PerformerProfile expert_profile() {
  PerformerProfile p;
  p.name = "expert";
  p.base_pressure = 0.8;
  p.pressure_floor = 0.5;
  p.tip_attenuation = 1.0;
  p.frog_attack_boost = 1.15;
  p.turn_sharpness = 0.05;
  p.speed_bulge = 1.0;
  p.noise_sigma = 0.03;
  p.occlusion_rate = 0.01;
  p.seed = 11;
  return p;
}

PerformerProfile beginner_profile() {
  PerformerProfile p;
  p.name = "beginner";
  p.base_pressure = 0.6;
  p.tip_attenuation = 0.6;
  p.frog_attack_boost = 1.0;
  p.turn_sharpness = 0.4;
  p.speed_bulge = 1.4;
  p.noise_sigma = 0.05;
  p.occlusion_rate = 0.01;
  p.seed = 23;
  return p;
}

PerformerProfile resolve_profile(std::string_view name_or_path) {
  if (name_or_path == "expert") return expert_profile();
  if (name_or_path == "beginner") return beginner_profile();
  return load_profile(std::filesystem::path(name_or_path));
}

std::string format_profile(const PerformerProfile& p) {
  std::string out;
  out += fmt::format("name={}\n", p.name);
  out += fmt::format("base_pressure_N={}\n", format_number(p.base_pressure));
  out += fmt::format("pressure_floor_N={}\n", p.pressure_floor ? format_number(*p.pressure_floor) : "");
  out += fmt::format("tip_attenuation={}\n", format_number(p.tip_attenuation));
  out += fmt::format("frog_attack_boost={}\n", format_number(p.frog_attack_boost));
  out += fmt::format("turn_sharpness_s={}\n", format_number(p.turn_sharpness));
  out += fmt::format("speed_bulge={}\n", format_number(p.speed_bulge));
  out += fmt::format("noise_sigma_N={}\n", format_number(p.noise_sigma));
  out += fmt::format("occlusion_rate={}\n", format_number(p.occlusion_rate));
  out += fmt::format("seed={}\n", p.seed);
  return out;
}

PerformerProfile parse_profile(std::string_view text) {
  PerformerProfile p;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", lineno);
    const std::string_view key = std::string_view(line).substr(0, eq);
    const std::string_view value = std::string_view(line).substr(eq + 1);
    if (key == "name") p.name = std::string(value);
    else if (key == "base_pressure_N") p.base_pressure = to_double(value, key, lineno);
    else if (key == "pressure_floor_N") {
      if (value.empty()) p.pressure_floor.reset();
      else p.pressure_floor = to_double(value, key, lineno);
    } else if (key == "tip_attenuation") p.tip_attenuation = to_double(value, key, lineno);
    else if (key == "frog_attack_boost") p.frog_attack_boost = to_double(value, key, lineno);
    else if (key == "turn_sharpness_s") p.turn_sharpness = to_double(value, key, lineno);
    else if (key == "speed_bulge") p.speed_bulge = to_double(value, key, lineno);
    else if (key == "noise_sigma_N") p.noise_sigma = to_double(value, key, lineno);
    else if (key == "occlusion_rate") p.occlusion_rate = to_double(value, key, lineno);
    else if (key == "seed") {
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), p.seed);
      if (ec != std::errc{} || ptr != value.data() + value.size())
        throw ParseError(fmt::format("invalid seed '{}'", value), lineno);
    } else throw ParseError(fmt::format("unknown key '{}'", key), lineno);
  }
  try {
    p.validate();
  } catch (const InvariantError& e) {
    throw ParseError(e.what());
  }
  return p;
}

PerformerProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()), 0);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_profile(buf.str());
}

void save_profile(const PerformerProfile& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << format_profile(p);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()), 0);
}

double stroke_progress(double tau, double stroke, double ramp, double bulge) {
  tau = std::clamp(tau, 0.0, stroke);
  ramp = std::min(ramp, 0.5 * stroke);
  double u;
  if (ramp <= 0.0) {
    u = tau / stroke;
  } else {
    const double v = 1.0 / (stroke - ramp);
    if (tau < ramp) u = v * tau * tau / (2.0 * ramp);
    else if (tau > stroke - ramp) u = 1.0 - v * (stroke - tau) * (stroke - tau) / (2.0 * ramp);
    else u = v * (tau - 0.5 * ramp);
  }
  // Speed weight 1 + (bulge - 1) sin^2(pi u), integrated and normalized.
  const double k = bulge - 1.0;
  const double warped = u + k * (0.5 * u - std::sin(2.0 * std::numbers::pi * u) / (4.0 * std::numbers::pi));
  return warped / (1.0 + 0.5 * k);
}

Trace generate_trace(const PerformerProfile& profile, const TraceSpec& spec) {
  profile.validate();
  if (!(spec.tempo_bpm > 0.0) || spec.counts_per_stroke <= 0) throw InvariantError("tempo and counts must be > 0");
  if (!(spec.duration > 0.0) || !(spec.rate > 0.0)) throw InvariantError("duration and rate must be > 0");

  std::mt19937_64 rng(profile.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> burst_len(3, 8);
  const double burst_start = profile.occlusion_rate / (5.5 * (1.0 - profile.occlusion_rate) + profile.occlusion_rate);

  const double stroke = spec.counts_per_stroke * 60.0 / spec.tempo_bpm;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.rate));
  const double travel = kTravelHigh - kTravelLow;
  const double floor_level = profile.pressure_floor ? std::ceil(*profile.pressure_floor / kPressureStep - 1e-9) * kPressureStep : 0.0;

  std::vector<Sample> samples;
  samples.reserve(n);
  int occluded_left = 0;
  for (std::size_t k = 0; k < n; ++k) {
    Sample s;
    s.t = static_cast<double>(k) / spec.rate;
    const auto index = static_cast<long long>(std::floor(s.t / stroke + 1e-12));
    const double tau = s.t - static_cast<double>(index) * stroke;
    const bool down = index % 2 == 0;
    const double u = stroke_progress(tau, stroke, profile.turn_sharpness, profile.speed_bulge);
    const double position = down ? kTravelLow + travel * u : kTravelHigh - travel * u;

    double factor = 1.0 + (profile.tip_attenuation - 1.0) * position;
    if (down) factor *= 1.0 + (profile.frog_attack_boost - 1.0) * std::exp(-position / kAttackDecay);
    double p = profile.base_pressure * factor + profile.noise_sigma * noise(rng);
    p = std::max(0.0, std::round(p / kPressureStep)) * kPressureStep;
    if (profile.pressure_floor) p = std::max(p, floor_level);
    s.pressure = p;

    if (occluded_left == 0 && profile.occlusion_rate > 0.0 && unit(rng) < burst_start) occluded_left = burst_len(rng);
    if (occluded_left > 0) {
      --occluded_left;
    } else {
      s.position = position;
      s.valid_position = true;
    }
    samples.push_back(std::move(s));
  }

  TraceHeader header;
  header.meta.participant = spec.participant;
  header.meta.session = spec.session;
  header.meta.trial = spec.trial;
  header.meta.tempo_bpm = spec.tempo_bpm;
  header.nominal_rate = spec.rate;
  header.calibration_factor = 1.0;
  header.tare_offset = 0.0;
  return Trace(std::move(header), std::move(samples));
}

namespace {

struct Rig {
  Vec3 string_origin{0.1, -0.05, 0.9};
  Vec3 string_dir = Vec3(0.05, 1.0, 0.1).normalized();
  Vec3 bow_dir = Vec3(1.0, -0.1, 0.05).normalized();
  double contact_along_string = 0.06;
  double gap = 0.002;
  std::array<double, 3> string_marker_params{0.0, 0.1, 0.2};
  std::array<Vec3, 2> body_markers{Vec3(0.25, 0.05, 0.85), Vec3(-0.05, 0.12, 0.82)};
  std::array<double, 5> bow_offsets{0.0, 0.15, 0.3, 0.45, 0.6};
  double frog_param = 0.05;
  double tip_param = 0.70;
};

const Rig kRig;

}  // namespace

geometry::InstrumentModel rig_model() {
  geometry::InstrumentModel model;
  model.assignment.string_markers = {0, 1, 2};
  model.assignment.bow_markers = {5, 6, 7, 8, 9};
  model.assignment.bow_offsets.assign(kRig.bow_offsets.begin(), kRig.bow_offsets.end());
  model.frog_param = kRig.frog_param;
  model.tip_param = kRig.tip_param;
  return model;
}

std::vector<ingestion::MarkerFrame> generate_marker_stream(const Trace& trace, const geometry::InstrumentModel& model,
                                                           double marker_noise, std::uint64_t seed) {
  model.validate();
  if (marker_noise < 0.0) throw InvariantError("marker noise must be >= 0");
  const auto& a = model.assignment;
  if (a.string_markers.size() > kRig.string_marker_params.size() || a.bow_markers.size() > kRig.bow_offsets.size())
    throw InvariantError("marker assignment does not fit the synthetic rig");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, marker_noise > 0.0 ? marker_noise : 1.0);
  auto jitter = [&](const Vec3& p) {
    if (marker_noise == 0.0) return p;
    return Vec3(p.x() + noise(rng), p.y() + noise(rng), p.z() + noise(rng));
  };

  const Vec3 contact = kRig.string_origin + kRig.contact_along_string * kRig.string_dir;
  const Vec3 normal = kRig.string_dir.cross(kRig.bow_dir).normalized();
  const Vec3 bow_contact = contact + kRig.gap * normal;

  std::vector<bool> used(kMarkerCount, false);
  for (const auto s : a.string_markers) used[s] = true;
  for (const auto s : a.bow_markers) used[s] = true;

  std::vector<ingestion::MarkerFrame> frames;
  frames.reserve(trace.size());
  for (const auto& sample : trace.samples()) {
    ingestion::MarkerFrame f;
    f.t_rx = sample.t;
    for (std::size_t i = 0; i < a.string_markers.size(); ++i)
      f.points[a.string_markers[i]] = jitter(kRig.string_origin + kRig.string_marker_params[i] * kRig.string_dir);
    std::size_t body = 0;
    for (std::size_t slot = 0; slot < kViolinMarkers && body < kRig.body_markers.size(); ++slot) {
      if (used[slot]) continue;
      f.points[slot] = jitter(kRig.body_markers[body++]);
    }
    if (sample.position) {
      const double raw = model.frog_param + *sample.position * (model.tip_param - model.frog_param);
      const Vec3 origin = bow_contact - raw * kRig.bow_dir;
      for (std::size_t i = 0; i < a.bow_markers.size(); ++i) {
        const double offset = a.bow_offsets.empty() ? kRig.bow_offsets[i] - kRig.bow_offsets[0] : a.bow_offsets[i];
        f.points[a.bow_markers[i]] = jitter(origin + offset * kRig.bow_dir);
      }
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

Cohort generate_cohort(const CohortSpec& spec) {
  if (spec.n_per_group < 2) throw InvariantError("cohort needs at least two subjects per group");
  if (spec.trials_per_subject < 1) throw InvariantError("cohort needs at least one trial per subject");
  std::mt19937_64 rng(spec.seed);
  auto spread = [&](double half_width) {
    return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
  };
  const auto& j = spec.jitter;

  Cohort cohort;
  auto build = [&](const PerformerProfile& group, char prefix, std::vector<Trace>& out) {
    for (std::size_t subject = 0; subject < spec.n_per_group; ++subject) {
      PerformerProfile p = group;
      p.base_pressure *= 1.0 + spread(j.base_pressure);
      p.tip_attenuation = std::clamp(p.tip_attenuation + spread(j.tip_attenuation), 0.05, 2.0);
      p.turn_sharpness *= 1.0 + spread(j.turn_sharpness);
      p.speed_bulge = std::clamp(p.speed_bulge + spread(j.speed_bulge), 0.05, 2.0);
      p.noise_sigma *= 1.0 + spread(j.noise_sigma);
      const std::uint64_t subject_seed = rng();
      for (std::size_t trial = 0; trial < spec.trials_per_subject; ++trial) {
        p.seed = subject_seed + trial;
        TraceSpec ts = spec.trace;
        ts.participant = fmt::format("{}{:02}", prefix, subject + 1);
        ts.trial = static_cast<int>(trial + 1);
        out.push_back(generate_trace(p, ts));
      }
    }
  };
  build(spec.expert, 'E', cohort.experts);
  build(spec.beginner, 'B', cohort.beginners);
  return cohort;
}

}  // namespace bowtrace::synth
