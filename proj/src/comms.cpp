#include "mrmpc/comms.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

namespace mrmpc {

namespace {

constexpr uint8_t kMagic[4] = {0x44, 0x4D, 0x50, 0x43};  // "DMPC"
constexpr uint8_t kVersion = 1;
constexpr uint8_t kTypeTrajectory = 1;
constexpr uint8_t kTypeReport = 2;
constexpr uint8_t kTypeCommand = 3;

static_assert(sizeof(double) == 8, "wire format requires 8-byte doubles");

class Writer {
 public:
  explicit Writer(std::vector<uint8_t>& out) : out_(out) {}
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    out_.push_back(static_cast<uint8_t>(v & 0xFF));
    out_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i)
      out_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void reals(const std::vector<double>& vs) {
    for (double v : vs) f64(v);
  }

 private:
  std::vector<uint8_t>& out_;
};

class Reader {
 public:
  Reader(const std::vector<uint8_t>& in, size_t offset)
      : in_(in), pos_(offset) {}
  size_t remaining() const { return in_.size() - pos_; }
  uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(in_[pos_]) |
                 static_cast<uint16_t>(in_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::vector<double> reals(size_t count) {
    need(8 * count);
    std::vector<double> vs(count);
    for (size_t i = 0; i < count; ++i) vs[i] = f64();
    return vs;
  }

 private:
  void need(size_t bytes) const {
    if (pos_ + bytes > in_.size())
      throw DecodeFailure(CodecError::truncated, "frame truncated");
  }
  const std::vector<uint8_t>& in_;
  size_t pos_;
};

}  // namespace

std::vector<uint8_t> encode(const Message& message) {
  std::vector<uint8_t> out;
  Writer w(out);
  for (uint8_t b : kMagic) w.u8(b);
  w.u8(kVersion);
  if (const auto* t = std::get_if<TrajectoryMessage>(&message)) {
    w.u8(kTypeTrajectory);
    w.u16(t->robot_id);
    w.u64(t->step_index);
    w.u8(t->joints);
    w.u16(t->horizon);
    if (t->states.size() !=
        static_cast<size_t>(t->horizon + 1) * 2 * t->joints)
      throw std::invalid_argument("trajectory states have the wrong length");
    w.reals(t->states);
  } else if (const auto* r = std::get_if<DeadlockReport>(&message)) {
    w.u8(kTypeReport);
    w.u16(r->robot_id);
    w.u64(r->step_index);
    w.u8(r->gamma_d ? 1 : 0);
    if (r->x_current.size() != r->x_target.size() || r->x_current.empty() ||
        r->x_current.size() % 2 != 0)
      throw std::invalid_argument("report states have the wrong length");
    w.reals(r->x_current);
    w.reals(r->x_target);
  } else {
    const auto& c = std::get<CoordinatorCommand>(message);
    w.u8(kTypeCommand);
    w.u16(c.robot_id);
    w.u64(c.step_index);
    w.u8(c.gamma_r ? 1 : 0);
    w.u8(c.has_override ? 1 : 0);
    if (c.has_override) {
      if (c.override_target.empty() || c.override_target.size() % 2 != 0)
        throw std::invalid_argument("override target has the wrong length");
      w.reals(c.override_target);
    } else if (!c.override_target.empty()) {
      throw std::invalid_argument("override target present without flag");
    }
  }
  return out;
}

Message decode(const std::vector<uint8_t>& frame) {
  if (frame.size() < 6)
    throw DecodeFailure(CodecError::truncated, "frame shorter than header");
  for (int i = 0; i < 4; ++i)
    if (frame[i] != kMagic[i])
      throw DecodeFailure(CodecError::bad_magic, "bad magic");
  if (frame[4] != kVersion)
    throw DecodeFailure(CodecError::bad_version, "unsupported version");
  const uint8_t type = frame[5];
  Reader r(frame, 6);
  switch (type) {
    case kTypeTrajectory: {
      TrajectoryMessage m;
      m.robot_id = r.u16();
      m.step_index = r.u64();
      m.joints = r.u8();
      m.horizon = r.u16();
      const size_t expected =
          static_cast<size_t>(m.horizon + 1) * 2 * m.joints;
      if (r.remaining() != 8 * expected)
        throw DecodeFailure(CodecError::length_mismatch,
                            "trajectory payload length mismatch");
      m.states = r.reals(expected);
      return m;
    }
    case kTypeReport: {
      DeadlockReport m;
      m.robot_id = r.u16();
      m.step_index = r.u64();
      m.gamma_d = r.u8() != 0;
      const size_t rem = r.remaining();
      if (rem == 0 || rem % 32 != 0)
        throw DecodeFailure(CodecError::length_mismatch,
                            "report payload length mismatch");
      const size_t two_n = rem / 16;
      m.x_current = r.reals(two_n);
      m.x_target = r.reals(two_n);
      return m;
    }
    case kTypeCommand: {
      CoordinatorCommand m;
      m.robot_id = r.u16();
      m.step_index = r.u64();
      m.gamma_r = r.u8() != 0;
      m.has_override = r.u8() != 0;
      if (m.has_override) {
        const size_t rem = r.remaining();
        if (rem == 0 || rem % 16 != 0)
          throw DecodeFailure(CodecError::length_mismatch,
                              "command payload length mismatch");
        m.override_target = r.reals(rem / 8);
      } else if (r.remaining() != 0) {
        throw DecodeFailure(CodecError::length_mismatch,
                            "unexpected bytes after command");
      }
      return m;
    }
    default:
      throw DecodeFailure(CodecError::bad_type, "unknown message type");
  }
}

void InProcessTransport::send(int dest, const std::vector<uint8_t>& frame) {
  {
    std::lock_guard lock(mutex_);
    queues_[dest].push_back(frame);
  }
  cv_.notify_all();
}

std::optional<std::vector<uint8_t>> InProcessTransport::receive(
    int self, double timeout_seconds) {
  std::unique_lock lock(mutex_);
  auto& queue = queues_[self];
  if (!cv_.wait_for(lock,
                    std::chrono::duration<double>(timeout_seconds),
                    [&] { return !queue.empty(); }))
    return std::nullopt;
  auto frame = std::move(queue.front());
  queue.pop_front();
  return frame;
}

UdpTransport::UdpTransport(const std::vector<int>& endpoint_ids) {
  for (int id : endpoint_ids) {
    Endpoint ep;
    ep.fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (ep.fd < 0)
      throw std::runtime_error("udp: cannot create socket for endpoint " +
                               std::to_string(id));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;  // ephemeral
    if (::bind(ep.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
      ::close(ep.fd);
      throw std::runtime_error("udp: cannot bind loopback socket for endpoint " +
                               std::to_string(id));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(ep.fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ep.port = ntohs(addr.sin_port);
    endpoints_[id] = ep;
  }
}

UdpTransport::~UdpTransport() {
  for (auto& [id, ep] : endpoints_)
    if (ep.fd >= 0) ::close(ep.fd);
}

void UdpTransport::send(int dest, const std::vector<uint8_t>& frame) {
  auto it = endpoints_.find(dest);
  if (it == endpoints_.end())
    throw std::runtime_error("udp: unknown endpoint " + std::to_string(dest));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(it->second.port);
  const ssize_t sent =
      ::sendto(endpoints_.begin()->second.fd, frame.data(), frame.size(), 0,
               reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (sent != static_cast<ssize_t>(frame.size()))
    throw std::runtime_error("udp: sendto 127.0.0.1:" +
                             std::to_string(it->second.port) + " failed");
}

std::optional<std::vector<uint8_t>> UdpTransport::receive(
    int self, double timeout_seconds) {
  auto it = endpoints_.find(self);
  if (it == endpoints_.end())
    throw std::runtime_error("udp: unknown endpoint " + std::to_string(self));
  pollfd pfd{it->second.fd, POLLIN, 0};
  const int ms = static_cast<int>(timeout_seconds * 1000.0);
  const int ready = ::poll(&pfd, 1, ms);
  if (ready <= 0) return std::nullopt;
  std::vector<uint8_t> buffer(65536);
  const ssize_t got =
      ::recvfrom(it->second.fd, buffer.data(), buffer.size(), 0, nullptr,
                 nullptr);
  if (got < 0) return std::nullopt;
  buffer.resize(static_cast<size_t>(got));
  return buffer;
}

std::optional<Message> MessageEndpoint::receive_where(
    const std::function<bool(const Message&)>& predicate,
    double timeout_seconds) {
  for (auto it = stash_.begin(); it != stash_.end(); ++it) {
    if (predicate(*it)) {
      Message m = std::move(*it);
      stash_.erase(it);
      return m;
    }
  }
  for (;;) {
    auto frame = transport_.receive(self_, timeout_seconds);
    if (!frame) return std::nullopt;
    Message m = decode(*frame);
    if (predicate(m)) return m;
    stash_.push_back(std::move(m));
  }
}

}  // namespace mrmpc
