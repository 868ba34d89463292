#pragma once

#include "bowtrace/trace.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(BOWTRACE_FIXTURE_DIR) / name;
}

inline bowtrace::TraceHeader header(double rate = 60.0) {
  bowtrace::TraceHeader h;
  h.meta.participant = "T01";
  h.meta.session = "S0";
  h.meta.trial = 1;
  h.nominal_rate = rate;
  h.tare_offset = 0.0;
  return h;
}

/// Trace on a k/rate grid with position(t) and pressure(t).
inline bowtrace::Trace make_trace(std::size_t n, const std::function<double(double)>& position,
                                  const std::function<double(double)>& pressure, double rate = 60.0) {
  std::vector<bowtrace::Sample> samples(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& s = samples[k];
    s.t = static_cast<double>(k) / rate;
    s.pressure = pressure(s.t);
    s.position = position(s.t);
    s.valid_position = true;
  }
  return bowtrace::Trace(header(rate), std::move(samples));
}

/// Triangle wave between 0 and 1 starting at 0, rising for the first half period.
inline double triangle(double t, double period) {
  const double phase = std::fmod(t, period) / period;
  return phase < 0.5 ? 2.0 * phase : 2.0 - 2.0 * phase;
}

/// Random trace including occluded frames, partial marker sets and absent speeds.
inline bowtrace::Trace random_trace(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> coord(-2.0, 2.0);
  auto h = header(u(rng) < 0.5 ? 60.0 : 120.0);
  h.meta.participant = "P" + std::to_string(rng() % 100);
  h.meta.session = "S" + std::to_string(rng() % 4);
  h.meta.trial = static_cast<int>(rng() % 5);
  h.meta.tempo_bpm = 40.0 + 80.0 * u(rng);
  h.calibration_factor = 1e-3 + u(rng);
  if (u(rng) < 0.3) h.tare_offset.reset();
  else h.tare_offset = u(rng) - 0.5;

  std::vector<bowtrace::Sample> samples(n);
  double t = 0.0;
  for (auto& s : samples) {
    t += 1e-4 + u(rng) / h.nominal_rate;
    s.t = t;
    s.pressure = 2.0 * u(rng) - 0.2;
    for (auto& m : s.markers)
      if (u(rng) < 0.8) m = bowtrace::Vec3(coord(rng), coord(rng), coord(rng));
    s.valid_position = u(rng) < 0.85;
    if (s.valid_position) {
      const double r = u(rng);
      s.position = r < 0.05 ? 0.0 : r > 0.95 ? 1.0 : u(rng);
      if (u(rng) < 0.7) s.speed = 3.0 * u(rng);
    }
  }
  return bowtrace::Trace(h, std::move(samples));
}

}  // namespace testing
