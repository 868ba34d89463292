#include "bowtrace/live.hpp"

#include "bowtrace/errors.hpp"

#include <arpa/inet.h>
#include <fmt/format.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

namespace bowtrace::live {

LiveFusion::LiveFusion(ingestion::FuseConfig config)
    : config_(std::move(config)), start_(std::chrono::steady_clock::now()) {}

double LiveFusion::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void LiveFusion::push(Frame frame) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(frame));
  }
  cv_.notify_one();
}

void LiveFusion::push_pressure_line(std::string_view line) {
  try {
    const auto p = ingestion::parse_pressure_line(line);
    push(ingestion::PressureFrame{p.seq, p.raw, now()});
  } catch (const ParseError&) {
    ++rejected_;
  }
}

void LiveFusion::push_marker_line(std::string_view line) {
  std::optional<ingestion::MarkerFrame> done;
  try {
    const auto m = ingestion::parse_marker_line(line);
    std::lock_guard lock(mu_);
    done = assembler_.feed(m, now());
  } catch (const ParseError&) {
    ++rejected_;
    return;
  }
  if (done) push(std::move(*done));
}

void LiveFusion::flush_markers() {
  std::optional<ingestion::MarkerFrame> done;
  {
    std::lock_guard lock(mu_);
    done = assembler_.flush();
  }
  if (done) push(std::move(*done));
}

std::optional<Frame> LiveFusion::pop(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  Frame f = std::move(queue_.front());
  queue_.pop_front();
  return f;
}

feedback::SessionSource LiveFusion::source(TraceHeader header) {
  header.nominal_rate = config_.rate;
  header.calibration_factor = config_.calibration_factor;
  header.tare_offset = config_.tare_offset;
  feedback::SessionSource src;
  src.header = header;
  src.open = [this](const std::atomic<bool>& stop) -> feedback::SampleSource {
    auto pending = std::make_shared<std::deque<feedback::SourceItem>>();
    auto fuser = std::make_shared<ingestion::Fuser>(
        config_, [pending](const Sample& s) { pending->push_back(s); },
        [pending](const ingestion::StreamFault& f) { pending->push_back(f); });
    return [this, &stop, pending, fuser]() -> std::optional<feedback::SourceItem> {
      while (pending->empty()) {
        if (stop) {
          fuser->finish();
          if (pending->empty()) return std::nullopt;
          break;
        }
        const auto frame = pop(std::chrono::milliseconds(5));
        try {
          if (!frame) fuser->advance_to(now() - 1.0 / config_.rate);
          else std::visit([&](const auto& f) { fuser->push(f); }, *frame);
        } catch (const DecodeError& e) {
          pending->push_back(ingestion::StreamFault{fuser->ticks_emitted(), now(), "decode", e.what()});
        }
      }
      auto item = std::move(pending->front());
      pending->pop_front();
      return item;
    };
  };
  return src;
}

UdpLineListener::UdpLineListener(int port, Handler handler) : handler_(std::move(handler)) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw IoError(fmt::format("socket: {}", std::strerror(errno)), 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    const std::string err = std::strerror(errno);
    ::close(fd_);
    throw IoError(fmt::format("cannot bind UDP port {}: {}", port, err), 0);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  timeval tv{0, 100000};
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);

  thread_ = std::thread([this] {
    std::array<char, 65536> buf{};
    while (!stop_) {
      const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
      if (n <= 0) continue;
      std::string_view data(buf.data(), static_cast<std::size_t>(n));
      while (!data.empty()) {
        const auto nl = data.find('\n');
        auto line = data.substr(0, nl);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) handler_(line);
        if (nl == std::string_view::npos) break;
        data.remove_prefix(nl + 1);
      }
      handler_({});
    }
  });
}

UdpLineListener::~UdpLineListener() { stop(); }

void UdpLineListener::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void send_udp(int port, std::string_view payload) {
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) throw IoError(fmt::format("socket: {}", std::strerror(errno)), 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  const auto n = ::sendto(fd, payload.data(), payload.size(), 0, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  ::close(fd);
  if (n < 0) throw IoError(fmt::format("sendto: {}", std::strerror(errno)), 0);
}

}  // namespace bowtrace::live
