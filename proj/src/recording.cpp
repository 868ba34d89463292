#include "bowtrace/recording.hpp"

#include "bowtrace/errors.hpp"

#include <fmt/format.h>

#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace bowtrace {

namespace {

constexpr std::size_t kColumnCount = 2 + 3 * kMarkerCount + 3;

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(std::string_view cell, std::size_t line, std::string_view what) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError(fmt::format("bad {} value '{}'", what, cell), line);
  return value;
}

int parse_int(std::string_view cell, std::size_t line, std::string_view what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError(fmt::format("bad {} value '{}'", what, cell), line);
  return value;
}

std::optional<double> optional_cell(std::string_view cell, std::size_t line, std::string_view what) {
  if (cell.empty()) return std::nullopt;
  return parse_double(cell, line, what);
}

std::string optional_text(const std::optional<double>& v) { return v ? format_number(*v) : std::string{}; }

void check_meta_text(const std::string& s, std::string_view key) {
  if (s.find_first_of("\r\n") != std::string::npos)
    throw InvariantError(fmt::format("metadata field '{}' contains a line break", key));
}

class CountingWriter {
public:
  explicit CountingWriter(std::ostream& out) : out_(out) {}

  void line(std::string_view text) {
    out_.write(text.data(), static_cast<std::streamsize>(text.size()));
    out_.put('\n');
    if (!out_) throw IoError("recording write failed", bytes_);
    bytes_ += text.size() + 1;
  }

  std::size_t bytes() const noexcept { return bytes_; }

private:
  std::ostream& out_;
  std::size_t bytes_ = 0;
};

}  // namespace

std::string format_number(double value) { return fmt::format("{}", value); }

std::string recording_columns() {
  std::string cols = "t,pressure_N";
  for (std::size_t slot = 0; slot < kMarkerCount; ++slot) {
    const char prefix = slot < kViolinMarkers ? 'v' : 'b';
    const std::size_t n = slot < kViolinMarkers ? slot : slot - kViolinMarkers;
    for (const char axis : {'x', 'y', 'z'}) cols += fmt::format(",{}{}{}", prefix, axis, n);
  }
  cols += ",position,speed,valid";
  return cols;
}

std::size_t write_recording(const Trace& trace, std::ostream& out) {
  const auto& h = trace.header();
  check_meta_text(h.meta.participant, "participant");
  check_meta_text(h.meta.session, "session");
  check_meta_text(h.meta.wall_clock_start, "wall_clock_start");

  CountingWriter w(out);
  w.line(fmt::format("#version={}", kRecordingVersion));
  w.line("#participant=" + h.meta.participant);
  w.line("#session=" + h.meta.session);
  w.line(fmt::format("#trial={}", h.meta.trial));
  w.line("#tempo_bpm=" + format_number(h.meta.tempo_bpm));
  w.line("#rate_fps=" + format_number(h.nominal_rate));
  w.line("#tare_offset_N=" + optional_text(h.tare_offset));
  w.line("#calibration_factor=" + format_number(h.calibration_factor));
  w.line("#wall_clock_start=" + h.meta.wall_clock_start);
  w.line("#columns=" + recording_columns());

  std::string row;
  for (const auto& s : trace.samples()) {
    row.clear();
    row += format_number(s.t);
    row += ',';
    row += format_number(s.pressure);
    for (const auto& m : s.markers) {
      if (m) {
        row += fmt::format(",{},{},{}", format_number(m->x()), format_number(m->y()), format_number(m->z()));
      } else {
        row += ",,,";
      }
    }
    row += ',';
    row += optional_text(s.position);
    row += ',';
    row += optional_text(s.speed);
    row += s.valid_position ? ",1" : ",0";
    w.line(row);
  }
  out.flush();
  if (!out) throw IoError("recording flush failed", w.bytes());
  return w.bytes();
}

Trace read_recording(std::istream& in) {
  TraceHeader header;
  std::map<std::string, std::string, std::less<>> keys;
  std::vector<Sample> samples;
  std::string line;
  std::size_t lineno = 0;
  bool have_version = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    if (line.front() == '#') {
      if (!samples.empty()) throw ParseError("header line after sample data", lineno);
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 1) throw ParseError("malformed header line", lineno);
      std::string key = line.substr(1, eq - 1);
      std::string value = line.substr(eq + 1);
      if (!have_version) {
        if (key != "version") throw ParseError("recording must start with #version", lineno);
        const int version = parse_int(value, lineno, "version");
        if (version != kRecordingVersion)
          throw ParseError(fmt::format("unsupported recording version {}", value), lineno);
        have_version = true;
      }
      if (key == "columns" && value != recording_columns()) throw ParseError("unexpected column layout", lineno);
      if (key == "participant") header.meta.participant = value;
      else if (key == "session") header.meta.session = value;
      else if (key == "trial") header.meta.trial = parse_int(value, lineno, "trial");
      else if (key == "tempo_bpm") header.meta.tempo_bpm = parse_double(value, lineno, "tempo_bpm");
      else if (key == "rate_fps") header.nominal_rate = parse_double(value, lineno, "rate_fps");
      else if (key == "tare_offset_N") header.tare_offset = optional_cell(value, lineno, "tare_offset_N");
      else if (key == "calibration_factor") header.calibration_factor = parse_double(value, lineno, "calibration_factor");
      else if (key == "wall_clock_start") header.meta.wall_clock_start = value;
      keys.emplace(std::move(key), std::move(value));
      continue;
    }

    if (!have_version) throw ParseError("missing #version header", lineno);
    const auto cells = split(line, ',');
    if (cells.size() != kColumnCount)
      throw ParseError(fmt::format("expected {} columns, found {}", kColumnCount, cells.size()), lineno);

    Sample s;
    s.t = parse_double(cells[0], lineno, "t");
    s.pressure = parse_double(cells[1], lineno, "pressure_N");
    for (std::size_t slot = 0; slot < kMarkerCount; ++slot) {
      const auto x = optional_cell(cells[2 + 3 * slot], lineno, "marker x");
      const auto y = optional_cell(cells[3 + 3 * slot], lineno, "marker y");
      const auto z = optional_cell(cells[4 + 3 * slot], lineno, "marker z");
      const int present = int(x.has_value()) + int(y.has_value()) + int(z.has_value());
      if (present == 3) s.markers[slot] = Vec3(*x, *y, *z);
      else if (present != 0) throw ParseError(fmt::format("partially present marker {}", marker_label(slot)), lineno);
    }
    s.position = optional_cell(cells[kColumnCount - 3], lineno, "position");
    s.speed = optional_cell(cells[kColumnCount - 2], lineno, "speed");
    const auto valid = cells[kColumnCount - 1];
    if (valid == "1") s.valid_position = true;
    else if (valid == "0") s.valid_position = false;
    else throw ParseError(fmt::format("bad valid flag '{}'", valid), lineno);

    const std::size_t index = samples.size();
    if (index > 0 && !(s.t > samples.back().t))
      throw ParseError(fmt::format("non-monotonic timestamp at sample {}", index), lineno);
    try {
      validate_sample(s, index);
    } catch (const InvariantError& e) {
      throw ParseError(e.what(), lineno);
    }
    samples.push_back(std::move(s));
  }
  if (in.bad()) throw IoError("recording read failed", 0);
  if (!have_version) throw ParseError("missing #version header", lineno);
  for (const char* required : {"rate_fps", "calibration_factor"}) {
    if (!keys.contains(required)) throw ParseError(fmt::format("missing #{} header", required));
  }
  try {
    return Trace(std::move(header), std::move(samples));
  } catch (const InvariantError& e) {
    throw ParseError(e.what());
  }
}

void save_recording(const Trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()), 0);
  write_recording(trace, out);
}

Trace load_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()), 0);
  try {
    return read_recording(in);
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

namespace {

std::string trial_file_name(const Trace& trace, std::size_t index) {
  std::string who = trace.meta().participant.empty() ? "anon" : trace.meta().participant;
  for (auto& c : who) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return fmt::format("{}_{}_trial{}_{:03}{}", who, trace.meta().session, trace.meta().trial, index,
                     kRecordingExtension);
}

}  // namespace

void write_session(const Session& session, const std::filesystem::path& dir) {
  session.validate();
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kSessionManifest, std::ios::binary);
  if (!manifest) throw IoError(fmt::format("cannot write manifest in '{}'", dir.string()), 0);
  manifest << "#label=" << session.label.name() << '\n' << "#group=" << to_string(session.group) << '\n';
  for (std::size_t i = 0; i < session.traces.size(); ++i) {
    const auto name = trial_file_name(session.traces[i], i);
    save_recording(session.traces[i], dir / name);
    manifest << name << '\n';
  }
  manifest.flush();
  if (!manifest) throw IoError("manifest write failed", 0);
}

Session read_session(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / kSessionManifest, std::ios::binary);
  if (!manifest) throw IoError(fmt::format("no {} in '{}'", kSessionManifest, dir.string()), 0);
  std::optional<SessionLabel> label;
  std::optional<PracticeGroup> group;
  std::vector<Trace> traces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#label=", 0) == 0) label.emplace(line.substr(7));
    else if (line.rfind("#group=", 0) == 0) group = parse_group(line.substr(7));
    else if (line.front() == '#') throw ParseError("unknown manifest header", lineno);
    else traces.push_back(load_recording(dir / line));
  }
  if (!label || !group) throw ParseError(fmt::format("manifest in '{}' lacks #label or #group", dir.string()));
  Session session{*label, *group, std::move(traces)};
  session.validate();
  return session;
}

}  // namespace bowtrace
