#pragma once

#include "bowtrace/ingestion.hpp"
#include "bowtrace/server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <variant>

namespace bowtrace::live {

using Frame = std::variant<ingestion::PressureFrame, ingestion::MarkerFrame>;

/// Live front end of the fusion stage. Producers (sensor readers on their own
/// threads) push wire lines; frames are stamped with the receive time and
/// queued. A single consumer drains the queue into a Fuser and hands the
/// fused samples and faults to the session.
class LiveFusion {
public:
  explicit LiveFusion(ingestion::FuseConfig config);

  /// Seconds since construction on the steady clock.
  double now() const;

  void push_pressure_line(std::string_view line);
  void push_marker_line(std::string_view line);
  /// Completes the marker frame being assembled (end of a datagram).
  void flush_markers();
  void push(Frame frame);

  /// Session source draining this fusion front end. Idle periods advance the
  /// fusion clock so stale streams raise faults.
  feedback::SessionSource source(TraceHeader header);

  std::size_t rejected_lines() const noexcept { return rejected_; }

private:
  std::optional<Frame> pop(std::chrono::milliseconds timeout);

  ingestion::FuseConfig config_;
  std::chrono::steady_clock::time_point start_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Frame> queue_;
  ingestion::MarkerFrameAssembler assembler_;
  std::atomic<std::size_t> rejected_{0};
};

/// Receives UDP datagrams of newline-separated text lines on a background
/// thread and passes each line to the handler, followed by an empty line at
/// the end of every datagram.
class UdpLineListener {
public:
  using Handler = std::function<void(std::string_view line)>;

  /// Throws IoError when the port cannot be bound. Port 0 picks a free port.
  UdpLineListener(int port, Handler handler);
  ~UdpLineListener();

  int port() const noexcept { return port_; }
  void stop();

private:
  int fd_ = -1;
  int port_ = 0;
  Handler handler_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

/// Sends one datagram to 127.0.0.1:port (test and demo helper).
void send_udp(int port, std::string_view payload);

}  // namespace bowtrace::live
