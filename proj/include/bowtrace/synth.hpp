#pragma once

#include "bowtrace/geometry.hpp"
#include "bowtrace/ingestion.hpp"
#include "bowtrace/trace.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bowtrace::synth {

/// Generative parameters of a synthetic performer.
struct PerformerProfile {
  std::string name = "custom";
  double base_pressure = 0.8;                 // N
  std::optional<double> pressure_floor;       // N, clip from below
  double tip_attenuation = 1.0;               // pressure retained at the tip relative to the frog
  double frog_attack_boost = 1.0;             // down-bow pressure multiplier at the frog
  double turn_sharpness = 0.05;               // s, acceleration ramp at each reversal
  double speed_bulge = 1.0;                   // middle-of-stroke speed multiplier
  double noise_sigma = 0.03;                  // N
  double occlusion_rate = 0.0;                // fraction of frames
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const PerformerProfile&, const PerformerProfile&) = default;
};

PerformerProfile expert_profile();
PerformerProfile beginner_profile();

/// "expert", "beginner", or a profile file path.
PerformerProfile resolve_profile(std::string_view name_or_path);

std::string format_profile(const PerformerProfile& p);
PerformerProfile parse_profile(std::string_view text);
PerformerProfile load_profile(const std::filesystem::path& path);
void save_profile(const PerformerProfile& p, const std::filesystem::path& path);

/// Pressure sensor resolution applied to every generated sample.
inline constexpr double kPressureStep = 0.06;
/// Bow travel between the marked reversal zones.
inline constexpr double kTravelLow = 0.02;
inline constexpr double kTravelHigh = 0.98;
/// Decay length (in bow position) of the down-bow frog attack.
inline constexpr double kAttackDecay = 0.08;

struct TraceSpec {
  double tempo_bpm = 75.0;
  int counts_per_stroke = 4;
  double duration = 25.0;  // s
  double rate = 60.0;      // fps
  std::string participant = "SYN";
  std::string session = "S0";
  int trial = 1;
};

/// Bow position along a stroke with trapezoidal velocity: ramps of length
/// `ramp` at both reversals, followed by the middle-speed warp. `tau` in
/// [0, stroke]; result in [0, 1].
double stroke_progress(double tau, double stroke, double ramp, double bulge);

/// Deterministic given the profile (including its seed).
Trace generate_trace(const PerformerProfile& profile, const TraceSpec& spec = {});

/// Fixed marker rig: string markers v0..v2, body markers v3..v4, bow markers
/// b0..b4 at known offsets. The model inverts the rig exactly.
geometry::InstrumentModel rig_model();

/// Marker frames reproducing each sample's position on the rig. Samples
/// without a position keep the violin markers but omit the bow markers.
std::vector<ingestion::MarkerFrame> generate_marker_stream(const Trace& trace, const geometry::InstrumentModel& model,
                                                           double marker_noise, std::uint64_t seed = 7);

/// Spread of the per-subject random effects applied in generate_cohort.
struct SubjectJitter {
  double base_pressure = 0.08;    // relative, uniform +/-
  double tip_attenuation = 0.1;   // absolute, uniform +/-
  double turn_sharpness = 0.2;    // relative, uniform +/-
  double speed_bulge = 0.05;      // absolute, uniform +/-
  double noise_sigma = 0.2;       // relative, uniform +/-
};

struct CohortSpec {
  std::size_t n_per_group = 8;
  std::size_t trials_per_subject = 3;
  PerformerProfile expert = expert_profile();
  PerformerProfile beginner = beginner_profile();
  SubjectJitter jitter;
  TraceSpec trace;
  std::uint64_t seed = 2024;
};

struct Cohort {
  std::vector<Trace> experts;
  std::vector<Trace> beginners;
};

/// Per-subject jittered copies of each group profile, `trials_per_subject`
/// traces per subject. Participants are named E01.. and B01...
Cohort generate_cohort(const CohortSpec& spec = {});

}  // namespace bowtrace::synth
