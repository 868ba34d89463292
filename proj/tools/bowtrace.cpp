#include "bowtrace/analytics.hpp"
#include "bowtrace/errors.hpp"
#include "bowtrace/feedback.hpp"
#include "bowtrace/geometry.hpp"
#include "bowtrace/ingestion.hpp"
#include "bowtrace/live.hpp"
#include "bowtrace/recording.hpp"
#include "bowtrace/server.hpp"
#include "bowtrace/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

namespace fs = std::filesystem;
using namespace bowtrace;

namespace {

std::atomic<bool> g_interrupted{false};

struct SharedOptions {
  double floor = 0.5;
  double ceiling = 0.17;
  double exclusion = 0.05;
  double prominence = 0.1;
  std::size_t smooth = 5;
  std::size_t curv_window = 9;

  void add_to(CLI::App* app) {
    app->add_option("--floor", floor, "pressure floor, N")->capture_default_str();
    app->add_option("--ceiling", ceiling, "region difference ceiling, N")->capture_default_str();
    app->add_option("--exclusion", exclusion, "reversal margin excluded from regions")->capture_default_str();
    app->add_option("--prominence", prominence, "minimum turn prominence")->capture_default_str();
    app->add_option("--smooth", smooth, "speed smoothing window, samples")->capture_default_str();
    app->add_option("--curv-window", curv_window, "curvature half window, samples")->capture_default_str();
  }
  analytics::Thresholds thresholds() const { return {floor, ceiling}; }
  kinematics::KinematicsConfig kinematics() const {
    kinematics::KinematicsConfig k;
    k.prominence = prominence;
    k.smoothing_window = smooth;
    k.curvature_half_window = curv_window;
    return k;
  }
  feedback::EngineConfig engine() const {
    feedback::EngineConfig c;
    c.thresholds = thresholds();
    c.regions.exclusion = exclusion;
    c.kinematics = kinematics();
    return c;
  }
};

std::vector<Trace> load_traces(const fs::path& path) {
  if (fs::is_regular_file(path)) return {load_recording(path)};
  if (fs::exists(path / kSessionManifest)) return read_session(path).traces;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.path().extension() == kRecordingExtension) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Trace> traces;
  for (const auto& f : files) traces.push_back(load_recording(f));
  if (traces.empty()) throw IoError(fmt::format("no recordings in '{}'", path.string()), 0);
  return traces;
}

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : "-"; }

struct TraceAnalysis {
  double achievement = 0.0;
  std::vector<analytics::TripMetrics> trips;
  std::optional<double> improvement;
  std::optional<double> mean_diff;
};

TraceAnalysis analyse(const Trace& trace, const SharedOptions& o) {
  TraceAnalysis a;
  const auto cfg = o.kinematics();
  const auto turns = kinematics::detect_turns(trace, cfg);
  const auto seg = kinematics::segment(trace, turns, cfg);
  analytics::RegionConfig regions{o.exclusion};
  a.achievement = analytics::achievement_rate(trace, o.floor);
  std::vector<double> diffs;
  for (const auto& rt : seg.round_trips) {
    a.trips.push_back(analytics::trip_metrics(rt, trace, regions, o.thresholds()));
    if (a.trips.back().diff) diffs.push_back(*a.trips.back().diff);
  }
  a.improvement = analytics::improvement_rate(a.trips, o.thresholds());
  if (!diffs.empty()) a.mean_diff = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
  return a;
}

std::vector<ingestion::PressureFrame> read_pressure_file(const fs::path& path, double rate) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()), 0);
  std::vector<ingestion::PressureFrame> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto p = ingestion::parse_pressure_line(line);
    frames.push_back({p.seq, p.raw, static_cast<double>(frames.size()) / rate});
  }
  return frames;
}

std::vector<ingestion::MarkerFrame> read_marker_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()), 0);
  ingestion::MarkerFrameAssembler assembler;
  std::vector<ingestion::MarkerFrame> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto m = ingestion::parse_marker_line(line);
    if (auto f = assembler.feed(m, m.t)) frames.push_back(std::move(*f));
  }
  if (auto f = assembler.flush()) frames.push_back(std::move(*f));
  return frames;
}

void print_event_line(const feedback::Event& e) { std::cout << feedback::transcript_line(e) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bowing telemetry and practice feedback"};
  app.require_subcommand(1);
  SharedOptions shared;

  // record
  auto* record = app.add_subcommand("record", "fuse pressure and marker captures into a recording");
  std::string rec_pressure, rec_markers, rec_model, rec_out, rec_participant = "P01", rec_session = "S0";
  int rec_trial = 1, rec_pressure_udp = 0, rec_marker_udp = 0;
  double rec_rate = 60.0, rec_factor = 1.0, rec_duration = 25.0, rec_tempo = 75.0;
  std::size_t rec_tare_frames = 0;
  record->add_option("--pressure", rec_pressure, "pressure capture, one seq,raw line per reading");
  record->add_option("--markers", rec_markers, "marker capture, t,label,x,y,z lines");
  record->add_option("--pressure-udp", rec_pressure_udp, "record live: UDP port for pressure lines");
  record->add_option("--marker-udp", rec_marker_udp, "record live: UDP port for marker lines");
  record->add_option("--duration", rec_duration, "live recording length, s")->capture_default_str();
  record->add_option("--model", rec_model, "instrument model file");
  record->add_option("--rate", rec_rate, "sample rate, fps")->capture_default_str();
  record->add_option("--calibration", rec_factor, "newtons per raw count")->capture_default_str();
  record->add_option("--tare-frames", rec_tare_frames, "leading at-rest pressure readings used for taring");
  record->add_option("--participant", rec_participant)->capture_default_str();
  record->add_option("--session", rec_session)->capture_default_str();
  record->add_option("--trial", rec_trial)->capture_default_str();
  record->add_option("--tempo", rec_tempo, "metronome tempo, bpm")->capture_default_str();
  record->add_option("--out", rec_out, "output recording")->required();

  // replay
  auto* replay = app.add_subcommand("replay", "replay a recording through the feedback loop");
  std::string replay_file, replay_transcript_out;
  double replay_speed = 0.0;
  replay->add_option("recording", replay_file)->required()->check(CLI::ExistingFile);
  replay->add_option("--speed", replay_speed, "x real time; 0 runs unpaced")->capture_default_str();
  replay->add_option("--transcript", replay_transcript_out, "write the event transcript here instead of stdout");
  shared.add_to(replay);

  // serve
  auto* serve = app.add_subcommand("serve", "serve the feedback event stream over HTTP");
  int serve_port = feedback::default_port(), serve_pressure_udp = 0, serve_marker_udp = 0;
  std::string serve_host = "127.0.0.1", serve_replay, serve_model;
  double serve_speed = 1.0, serve_factor = 1.0, serve_tare = 0.0;
  bool serve_autostart = false;
  serve->add_option("--port", serve_port, "listen port (env BOWTRACE_PORT)")->capture_default_str();
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--replay", serve_replay, "serve sessions replayed from this recording");
  serve->add_option("--speed", serve_speed, "replay speed")->capture_default_str();
  serve->add_option("--pressure-udp", serve_pressure_udp, "live: UDP port for pressure lines");
  serve->add_option("--marker-udp", serve_marker_udp, "live: UDP port for marker lines");
  serve->add_option("--model", serve_model, "instrument model file for live input");
  serve->add_option("--calibration", serve_factor, "newtons per raw count for live input");
  serve->add_option("--tare", serve_tare, "tare offset for live input, N");
  serve->add_flag("--autostart", serve_autostart, "start a session immediately");
  shared.add_to(serve);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "per-trip metrics of recordings");
  std::vector<std::string> analyze_paths;
  analyze->add_option("paths", analyze_paths, "recordings or session directories")->required();
  shared.add_to(analyze);

  // compare
  auto* compare = app.add_subcommand("compare", "paired comparison of sessions");
  std::vector<std::string> compare_dirs;
  std::string compare_metric = "mean-pressure";
  compare->add_option("--sessions", compare_dirs, "session directories")->required()->expected(2, 16);
  compare->add_option("--metric", compare_metric, "mean-pressure, achievement or mean-diff")
      ->check(CLI::IsMember({"mean-pressure", "achievement", "mean-diff"}))
      ->capture_default_str();
  shared.add_to(compare);

  // cohort
  auto* cohort = app.add_subcommand("cohort", "expert vs beginner analysis report (CSV)");
  std::string cohort_experts, cohort_beginners;
  cohort->add_option("--experts", cohort_experts)->required();
  cohort->add_option("--beginners", cohort_beginners)->required();
  shared.add_to(cohort);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic recordings");
  std::string synth_profile = "expert", synth_out, synth_participant, synth_session = "S0";
  std::uint64_t synth_seed = 0;
  int synth_trials = 1;
  double synth_duration = 25.0, synth_tempo = 75.0, synth_rate = 60.0;
  double synth_marker_noise = -1.0;
  bool synth_cohort = false;
  synth_cmd->add_option("--profile", synth_profile, "expert, beginner or a profile file")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "overrides the profile seed");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--trials", synth_trials)->capture_default_str();
  synth_cmd->add_option("--participant", synth_participant);
  synth_cmd->add_option("--session", synth_session)->capture_default_str();
  synth_cmd->add_option("--duration", synth_duration)->capture_default_str();
  synth_cmd->add_option("--tempo", synth_tempo)->capture_default_str();
  synth_cmd->add_option("--rate", synth_rate)->capture_default_str();
  synth_cmd->add_option("--marker-noise", synth_marker_noise, "also write marker and pressure captures, m");
  synth_cmd->add_flag("--cohort", synth_cohort, "write an 8 vs 8 cohort into experts/ and beginners/");

  CLI11_PARSE(app, argc, argv);

  try {
    if (record->parsed()) {
      ingestion::FuseConfig fc;
      fc.rate = rec_rate;
      fc.calibration_factor = rec_factor;
      if (!rec_model.empty()) fc.model = geometry::load_model(rec_model);
      TraceHeader header;
      header.meta = {rec_participant, rec_session, rec_trial, rec_tempo, ""};
      header.nominal_rate = rec_rate;
      header.calibration_factor = rec_factor;

      std::vector<Sample> samples;
      std::size_t faults = 0;
      if (rec_pressure_udp > 0) {
        live::LiveFusion fusion(fc);
        live::UdpLineListener pressure(rec_pressure_udp, [&](std::string_view l) {
          if (!l.empty()) fusion.push_pressure_line(l);
        });
        std::optional<live::UdpLineListener> markers;
        if (rec_marker_udp > 0) {
          markers.emplace(rec_marker_udp, [&](std::string_view l) {
            if (l.empty()) fusion.flush_markers();
            else fusion.push_marker_line(l);
          });
        }
        std::atomic<bool> stop{false};
        auto src = fusion.source(header).open(stop);
        while (auto item = src()) {
          if (const auto* s = std::get_if<Sample>(&*item)) {
            samples.push_back(*s);
            if (s->t >= rec_duration) stop = true;
          } else {
            ++faults;
            std::cerr << "fault: " << std::get<ingestion::StreamFault>(*item).reason << '\n';
          }
        }
      } else {
        if (rec_pressure.empty()) throw InvariantError("record needs --pressure or --pressure-udp");
        auto pressure = read_pressure_file(rec_pressure, rec_rate);
        if (rec_tare_frames > 0) {
          if (rec_tare_frames >= pressure.size()) throw InvariantError("tare frames exceed the capture");
          std::vector<double> rest;
          for (std::size_t i = 0; i < rec_tare_frames; ++i)
            rest.push_back(ingestion::decode_pressure(pressure[i].raw, rec_factor));
          const auto tare = ingestion::capture_tare(rest);
          if (tare.unstable) std::cerr << "warning: unstable tare (spread " << tare.spread << " N)\n";
          fc.tare_offset = tare.offset;
          pressure.erase(pressure.begin(), pressure.begin() + static_cast<std::ptrdiff_t>(rec_tare_frames));
        }
        std::vector<ingestion::MarkerFrame> markers;
        if (!rec_markers.empty()) markers = read_marker_file(rec_markers);
        auto result = ingestion::fuse(pressure, markers, fc);
        for (const auto& f : result.faults) std::cerr << "fault at tick " << f.tick << ": " << f.reason << '\n';
        faults = result.faults.size();
        samples = std::move(result.samples);
      }
      header.tare_offset = fc.tare_offset;
      const Trace trace(header, std::move(samples));
      save_recording(trace, rec_out);
      std::cout << fmt::format("wrote {} samples to {} ({} faults)\n", trace.size(), rec_out, faults);
      return 0;
    }

    if (replay->parsed()) {
      const Trace trace = load_recording(replay_file);
      std::ofstream file;
      if (!replay_transcript_out.empty()) file.open(replay_transcript_out, std::ios::binary);
      std::ostream& out = replay_transcript_out.empty() ? std::cout : file;
      const auto r = feedback::replay_session(trace, replay_speed, shared.engine(),
                                              [&](const feedback::Event& e) { out << feedback::transcript_line(e) << '\n'; });
      std::cerr << fmt::format("samples {} trips {} achievement {} improvement {} p99 tick {:.3f} ms\n",
                               r.summary.samples, r.summary.trips.size(), opt(r.summary.achievement_rate),
                               opt(r.summary.improvement_rate), r.latency.p99 * 1e3);
      return 0;
    }

    if (serve->parsed()) {
      feedback::SessionSource source;
      std::optional<live::LiveFusion> fusion;
      std::vector<std::unique_ptr<live::UdpLineListener>> listeners;
      if (!serve_replay.empty()) {
        source = feedback::replay_source(load_recording(serve_replay), serve_speed);
      } else if (serve_pressure_udp > 0) {
        ingestion::FuseConfig fc;
        fc.calibration_factor = serve_factor;
        fc.tare_offset = serve_tare;
        if (!serve_model.empty()) fc.model = geometry::load_model(serve_model);
        fusion.emplace(fc);
        listeners.push_back(std::make_unique<live::UdpLineListener>(serve_pressure_udp, [&](std::string_view l) {
          if (!l.empty()) fusion->push_pressure_line(l);
        }));
        if (serve_marker_udp > 0) {
          listeners.push_back(std::make_unique<live::UdpLineListener>(serve_marker_udp, [&](std::string_view l) {
            if (l.empty()) fusion->flush_markers();
            else fusion->push_marker_line(l);
          }));
        }
        source = fusion->source(TraceHeader{});
      } else {
        source = feedback::replay_source(synth::generate_trace(synth::expert_profile()), serve_speed);
      }
      auto config = shared.engine();
      config.wall_clock = true;
      feedback::FeedbackService service(config, std::move(source));
      feedback::HttpServer http(service, {serve_host, serve_port});
      const int port = http.start();
      std::cerr << fmt::format("serving on http://{}:{} (GET /events, POST /command)\n", serve_host, port);
      if (serve_autostart) service.start_session();
      std::signal(SIGINT, [](int) { g_interrupted = true; });
      std::signal(SIGTERM, [](int) { g_interrupted = true; });
      while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      service.stop_session();
      http.stop();
      return 0;
    }

    if (analyze->parsed()) {
      for (const auto& p : analyze_paths) {
        for (const auto& trace : load_traces(p)) {
          const auto a = analyse(trace, shared);
          std::cout << fmt::format("{} {} trial {}: samples {} achievement {:.4f} trips {} improvement {}\n",
                                   trace.meta().participant, trace.meta().session, trace.meta().trial, trace.size(),
                                   a.achievement, a.trips.size(), opt(a.improvement));
          for (const auto& t : a.trips) {
            std::cout << fmt::format("  trip {} frog {} middle {} tip {} diff {}{}\n", t.trip_index,
                                     opt(t[analytics::Region::Frog].box ? std::optional(t[analytics::Region::Frog].box->mean) : std::nullopt),
                                     opt(t[analytics::Region::Middle].box ? std::optional(t[analytics::Region::Middle].box->mean) : std::nullopt),
                                     opt(t[analytics::Region::Tip].box ? std::optional(t[analytics::Region::Tip].box->mean) : std::nullopt),
                                     opt(t.diff), t.exceeds ? " (exceeds)" : "");
          }
        }
      }
      return 0;
    }

    if (compare->parsed()) {
      std::vector<std::pair<std::string, std::vector<double>>> sessions;
      std::vector<std::string> participants;
      for (const auto& dir : compare_dirs) {
        const Session s = read_session(dir);
        std::map<std::string, std::vector<double>> per;
        for (const auto& t : s.traces) {
          double v = 0.0;
          if (compare_metric == "mean-pressure") {
            for (const auto& x : t.samples()) v += x.pressure;
            v /= static_cast<double>(std::max<std::size_t>(1, t.size()));
          } else if (compare_metric == "achievement") {
            v = analytics::achievement_rate(t, shared.floor);
          } else {
            const auto a = analyse(t, shared);
            if (!a.mean_diff) continue;
            v = *a.mean_diff;
          }
          per[t.meta().participant].push_back(v);
        }
        if (participants.empty())
          for (const auto& [k, _] : per) participants.push_back(k);
        std::vector<double> values;
        for (const auto& id : participants) {
          const auto it = per.find(id);
          if (it == per.end()) throw InvariantError(fmt::format("participant {} missing from {}", id, dir));
          values.push_back(std::accumulate(it->second.begin(), it->second.end(), 0.0) /
                           static_cast<double>(it->second.size()));
        }
        sessions.emplace_back(s.label.name(), std::move(values));
      }
      const auto report = analytics::compare_sessions(sessions);
      std::cout << "first,second,mean_first,mean_second,statistic,p,p_adjusted,significant\n";
      for (const auto& c : report.pairs) {
        std::cout << fmt::format("{},{},{:.6g},{:.6g},{},{:.6g},{:.6g},{}\n", c.first, c.second, c.mean_first,
                                 c.mean_second, c.test ? fmt::format("{:.6g}", c.test->statistic) : "",
                                 c.p_value, c.p_adjusted, c.significant ? 1 : 0);
      }
      return 0;
    }

    if (cohort->parsed()) {
      analytics::CohortConfig cfg;
      cfg.regions.exclusion = shared.exclusion;
      cfg.kinematics = shared.kinematics();
      const auto report = analytics::cohort_report(load_traces(cohort_experts), load_traces(cohort_beginners), cfg);
      std::cout << report.to_csv();
      return 0;
    }

    if (synth_cmd->parsed()) {
      const fs::path out(synth_out);
      if (synth_cohort) {
        synth::CohortSpec spec;
        if (synth_seed) spec.seed = synth_seed;
        const auto c = synth::generate_cohort(spec);
        for (const auto& [name, traces] : {std::pair{"experts", &c.experts}, std::pair{"beginners", &c.beginners}}) {
          Session s;
          s.traces = *traces;
          write_session(s, out / name);
        }
        std::cout << fmt::format("wrote {} + {} traces under {}\n", c.experts.size(), c.beginners.size(), out.string());
        return 0;
      }
      auto profile = synth::resolve_profile(synth_profile);
      if (synth_seed) profile.seed = synth_seed;
      Session session{SessionLabel(synth_session), PracticeGroup::ExplanationOnly, {}};
      for (int trial = 1; trial <= synth_trials; ++trial) {
        synth::TraceSpec ts;
        ts.tempo_bpm = synth_tempo;
        ts.duration = synth_duration;
        ts.rate = synth_rate;
        ts.participant = synth_participant.empty() ? profile.name : synth_participant;
        ts.session = synth_session;
        ts.trial = trial;
        auto p = profile;
        p.seed = profile.seed + static_cast<std::uint64_t>(trial - 1);
        session.traces.push_back(synth::generate_trace(p, ts));
      }
      write_session(session, out);
      if (synth_marker_noise >= 0.0) {
        const auto model = synth::rig_model();
        geometry::save_model(model, out / "rig.model");
        const auto& trace = session.traces.front();
        std::ofstream markers(out / "markers.txt"), pressure(out / "pressure.txt");
        for (const auto& f : synth::generate_marker_stream(trace, model, synth_marker_noise, profile.seed)) {
          for (std::size_t slot = 0; slot < kMarkerCount; ++slot) {
            if (f.points[slot]) markers << ingestion::format_marker_line({f.t_rx, slot, *f.points[slot]}) << '\n';
          }
        }
        std::uint32_t seq = 0;
        for (const auto& s : trace.samples()) pressure << ingestion::format_pressure_line({seq++, s.pressure}) << '\n';
      }
      std::cout << fmt::format("wrote {} trace(s) to {}\n", session.traces.size(), out.string());
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
