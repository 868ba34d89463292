#pragma once

// Text recording format (.bowtrace), version 1:
//
//   #version=1
//   #participant=P01
//   #session=S0
//   #trial=1
//   #tempo_bpm=75
//   #rate_fps=60
//   #tare_offset_N=0.31        (empty when the trace has not been tared)
//   #calibration_factor=0.01
//   #wall_clock_start=...      (informational)
//   #columns=t,pressure_N,vx0,vy0,vz0,...,bx4,by4,bz4,position,speed,valid
//   0,0.54,0.1,0.2,0.3,...,0.5,,1
//
// Absent values are empty cells. A marker is either fully present (three
// cells) or fully absent. Numbers use the shortest decimal form that
// round-trips, so write followed by read is lossless.
//
// A session directory holds one file per trial plus `session.manifest`:
//
//   #label=S0
//   #group=explanation-plus-system
//   P01_S0_trial1.bowtrace

#include "bowtrace/trace.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace bowtrace {

inline constexpr int kRecordingVersion = 1;
inline constexpr const char* kRecordingExtension = ".bowtrace";
inline constexpr const char* kSessionManifest = "session.manifest";

/// The `#columns=` value written by write_recording.
std::string recording_columns();

/// Writes `trace`; returns bytes written. Throws IoError naming the offset
/// of the first failed write.
std::size_t write_recording(const Trace& trace, std::ostream& out);

/// Parses a recording; throws ParseError naming the offending line.
Trace read_recording(std::istream& in);

void save_recording(const Trace& trace, const std::filesystem::path& path);
Trace load_recording(const std::filesystem::path& path);

std::string format_number(double value);

/// Writes every trace plus a manifest into `dir` (created if needed).
void write_session(const Session& session, const std::filesystem::path& dir);
Session read_session(const std::filesystem::path& dir);

}  // namespace bowtrace
