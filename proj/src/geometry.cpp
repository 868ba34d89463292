#include "bowtrace/geometry.hpp"

#include "bowtrace/errors.hpp"
#include "bowtrace/recording.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bowtrace::geometry {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_slots(const std::vector<std::size_t>& slots, std::string_view axis) {
  if (slots.size() < 2) throw InvariantError(fmt::format("{} axis needs at least two markers", axis));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i] >= kMarkerCount) throw InvariantError(fmt::format("{} axis marker slot out of range", axis));
    for (std::size_t j = 0; j < i; ++j) {
      if (slots[i] == slots[j]) throw InvariantError(fmt::format("{} axis lists a marker twice", axis));
    }
  }
}

}  // namespace

void MarkerAssignment::validate() const {
  check_slots(string_markers, "string");
  check_slots(bow_markers, "bow");
  if (!bow_offsets.empty() && bow_offsets.size() != bow_markers.size())
    throw InvariantError("bow_offsets must have one entry per bow marker");
}

void InstrumentModel::validate() const {
  assignment.validate();
  if (!std::isfinite(frog_param) || !std::isfinite(tip_param) || frog_param == tip_param)
    throw InvariantError("frog_param and tip_param must be finite and distinct");
  if (!(gap_warning > 0.0)) throw InvariantError("gap_warning must be > 0");
}

Line3 fit_line(std::span<const Vec3> points) {
  if (points.size() < 2) throw OcclusionError("line fit needs at least two points");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - centroid;
    scatter += d * d.transpose();
  }
  if (scatter.trace() <= 0.0) throw DegenerateGeometryError("line fit points coincide");

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(scatter);
  Vec3 direction = solver.eigenvectors().col(2).normalized();
  if (direction.dot(points.back() - points.front()) < 0.0) direction = -direction;
  return {centroid, direction};
}

Axes fit_axes(const MarkerSet& markers, const MarkerAssignment& assignment) {
  std::vector<Vec3> string_pts;
  for (const auto slot : assignment.string_markers) {
    if (markers[slot]) string_pts.push_back(*markers[slot]);
  }
  std::vector<Vec3> bow_pts;
  std::vector<double> offsets;
  for (std::size_t i = 0; i < assignment.bow_markers.size(); ++i) {
    const auto& m = markers[assignment.bow_markers[i]];
    if (!m) continue;
    bow_pts.push_back(*m);
    if (!assignment.bow_offsets.empty()) offsets.push_back(assignment.bow_offsets[i]);
  }
  if (string_pts.size() < 2) throw OcclusionError("fewer than two string-axis markers visible");
  if (bow_pts.size() < 2) throw OcclusionError("fewer than two bow-axis markers visible");

  Axes axes{fit_line(string_pts), fit_line(bow_pts)};
  Line3& bow = axes.bow_line;
  if (!assignment.bow_offsets.empty()) {
    double shift = 0.0;
    for (std::size_t i = 0; i < bow_pts.size(); ++i) shift += (bow_pts[i] - bow.origin).dot(bow.direction) - offsets[i];
    bow.origin = bow.at(shift / static_cast<double>(bow_pts.size()));
  } else {
    const auto& ref = markers[assignment.bow_markers.front()];
    if (!ref) throw OcclusionError("bow reference marker not visible");
    bow.origin = bow.at((*ref - bow.origin).dot(bow.direction));
  }
  return axes;
}

ContactSolution contact(const Line3& string_line, const Line3& bow_line, const InstrumentModel& model) {
  const Vec3& u = bow_line.direction;
  const Vec3& v = string_line.direction;
  if (u.cross(v).norm() < std::sin(model.parallel_tolerance))
    throw DegenerateGeometryError("bow and string axes are parallel");

  const Vec3 w0 = bow_line.origin - string_line.origin;
  const double b = u.dot(v);
  const double d = u.dot(w0);
  const double e = v.dot(w0);
  const double denom = 1.0 - b * b;
  const double s = (b * e - d) / denom;
  const double t = (e - b * d) / denom;

  ContactSolution sol;
  sol.raw_param = s;
  sol.gap = (bow_line.at(s) - string_line.at(t)).norm();
  sol.position = std::clamp((s - model.frog_param) / (model.tip_param - model.frog_param), 0.0, 1.0);
  sol.gap_warning = sol.gap > model.gap_warning;
  return sol;
}

ContactSolution solve(const MarkerSet& markers, const InstrumentModel& model) {
  const Axes axes = fit_axes(markers, model.assignment);
  return contact(axes.string_line, axes.bow_line, model);
}

Calibration calibrate(std::span<const MarkerSet> frog_frames, std::span<const MarkerSet> tip_frames,
                      const InstrumentModel& model) {
  if (frog_frames.empty() || tip_frames.empty()) throw CalibrationError("calibration needs frames at both ends");
  auto params = [&](std::span<const MarkerSet> frames) {
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(solve(f, model).raw_param);
    return out;
  };
  const auto frog = params(frog_frames);
  const auto tip = params(tip_frames);
  auto range = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
  };
  const double spread = std::max(range(frog), range(tip));
  Calibration cal{median(frog), median(tip)};
  if (std::abs(cal.tip_param - cal.frog_param) < 10.0 * spread)
    throw CalibrationError(fmt::format("frog and tip parameters overlap (distance {:.4g}, spread {:.4g})",
                                       std::abs(cal.tip_param - cal.frog_param), spread));
  if (cal.frog_param > cal.tip_param)
    throw CalibrationError("frog lies beyond the tip along the bow axis; frog and tip frames are swapped");
  return cal;
}

namespace {

std::string join_slots(const std::vector<std::size_t>& slots) {
  std::string out;
  for (std::size_t i = 0; i < slots.size(); ++i) out += (i ? "," : "") + marker_label(slots[i]);
  return out;
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

double to_double(std::string_view s, std::string_view key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ParseError(fmt::format("bad number '{}' for {}", s, key));
  return v;
}

std::vector<std::size_t> to_slots(std::string_view s, std::string_view key) {
  std::vector<std::size_t> out;
  for (const auto label : split_commas(s)) {
    const auto slot = marker_slot(label);
    if (!slot) throw ParseError(fmt::format("unknown marker label '{}' in {}", label, key));
    out.push_back(*slot);
  }
  return out;
}

}  // namespace

std::string format_model(const InstrumentModel& model) {
  std::string offsets;
  for (std::size_t i = 0; i < model.assignment.bow_offsets.size(); ++i)
    offsets += (i ? "," : "") + format_number(model.assignment.bow_offsets[i]);
  return fmt::format(
      "string_markers={}\nbow_markers={}\nbow_offsets={}\nfrog_param={}\ntip_param={}\ngap_warning_m={}\n",
      join_slots(model.assignment.string_markers), join_slots(model.assignment.bow_markers), offsets,
      format_number(model.frog_param), format_number(model.tip_param), format_number(model.gap_warning));
}

InstrumentModel parse_model(std::string_view text) {
  InstrumentModel model;
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
    if (key == "string_markers") model.assignment.string_markers = to_slots(value, key);
    else if (key == "bow_markers") model.assignment.bow_markers = to_slots(value, key);
    else if (key == "bow_offsets") {
      model.assignment.bow_offsets.clear();
      for (const auto v : split_commas(value)) model.assignment.bow_offsets.push_back(to_double(v, key));
    } else if (key == "frog_param") model.frog_param = to_double(value, key);
    else if (key == "tip_param") model.tip_param = to_double(value, key);
    else if (key == "gap_warning_m") model.gap_warning = to_double(value, key);
    else throw ParseError(fmt::format("unknown key '{}'", key), lineno);
  }
  try {
    model.validate();
  } catch (const InvariantError& e) {
    throw ParseError(e.what());
  }
  return model;
}

InstrumentModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()), 0);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

void save_model(const InstrumentModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << format_model(model);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()), 0);
}

}  // namespace bowtrace::geometry
