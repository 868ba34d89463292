#include "bowtrace/trace.hpp"

#include "bowtrace/errors.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>

namespace bowtrace {

std::string marker_label(std::size_t slot) {
  if (slot >= kMarkerCount) throw InvariantError(fmt::format("marker slot {} out of range", slot));
  return slot < kViolinMarkers ? fmt::format("v{}", slot) : fmt::format("b{}", slot - kViolinMarkers);
}

std::optional<std::size_t> marker_slot(std::string_view label) {
  if (label.size() != 2) return std::nullopt;
  const char digit = label[1];
  if (digit < '0' || digit > '4') return std::nullopt;
  const std::size_t n = static_cast<std::size_t>(digit - '0');
  if (label[0] == 'v') return n;
  if (label[0] == 'b') return kViolinMarkers + n;
  return std::nullopt;
}

void validate_sample(const Sample& s, std::size_t index) {
  if (!std::isfinite(s.t) || s.t < 0.0)
    throw InvariantError(fmt::format("negative or non-finite timestamp at sample {}", index));
  if (!std::isfinite(s.pressure)) throw InvariantError(fmt::format("non-finite pressure at sample {}", index));
  if (s.position && !(*s.position >= 0.0 && *s.position <= 1.0))
    throw InvariantError(fmt::format("position outside [0,1] at sample {}", index));
  if (!s.valid_position && (s.position || s.speed))
    throw InvariantError(fmt::format("invalid sample {} carries position or speed", index));
  if (s.speed && !std::isfinite(*s.speed)) throw InvariantError(fmt::format("non-finite speed at sample {}", index));
}

namespace {

void validate_header(const TraceHeader& h) {
  if (!(h.nominal_rate > 0.0) || !std::isfinite(h.nominal_rate)) throw InvariantError("nominal_rate must be > 0");
  if (!(h.calibration_factor > 0.0) || !std::isfinite(h.calibration_factor))
    throw InvariantError("calibration_factor must be > 0");
  if (h.tare_offset && !std::isfinite(*h.tare_offset)) throw InvariantError("tare_offset must be finite");
}

void validate_samples(std::span<const Sample> samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    validate_sample(samples[i], i);
    if (i > 0 && !(samples[i].t > samples[i - 1].t))
      throw InvariantError(fmt::format("non-monotonic timestamp at sample {}", i));
  }
}

}  // namespace

Trace::Trace(TraceHeader header, std::vector<Sample> samples)
    : header_(std::move(header)), samples_(std::move(samples)) {
  validate_header(header_);
  validate_samples(samples_);
}

Trace Trace::with_samples(std::vector<Sample> samples) const { return Trace(header_, std::move(samples)); }

Trace Trace::with_header(TraceHeader header) const { return Trace(std::move(header), samples_); }

std::string_view to_string(PracticeGroup g) {
  switch (g) {
    case PracticeGroup::ExplanationOnly:
      return "explanation-only";
    case PracticeGroup::ExplanationPlusSystem:
      return "explanation-plus-system";
  }
  return "unknown";
}

PracticeGroup parse_group(std::string_view text) {
  if (text == "explanation-only" || text == "E") return PracticeGroup::ExplanationOnly;
  if (text == "explanation-plus-system" || text == "E+S") return PracticeGroup::ExplanationPlusSystem;
  throw ParseError(fmt::format("unknown practice group '{}'", text));
}

SessionLabel::SessionLabel(std::string_view text) : name_(text) {
  if (text.size() < 2 || text[0] != 'S') throw ParseError(fmt::format("session label '{}' is not of the form S<n>", text));
  const char* first = text.data() + 1;
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, ordinal_);
  if (ec != std::errc{} || ptr != last || ordinal_ < 0)
    throw ParseError(fmt::format("session label '{}' is not of the form S<n>", text));
}

void Session::validate() const {
  for (const auto& trace : traces) {
    if (trace.meta().session != label.name())
      throw InvariantError(fmt::format("trace labelled '{}' in session {}", trace.meta().session, label.name()));
  }
}

}  // namespace bowtrace
