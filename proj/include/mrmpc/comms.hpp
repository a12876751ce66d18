#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <variant>
#include <vector>

namespace mrmpc {

/// Optimal state sequence broadcast to the neighbouring robots.
struct TrajectoryMessage {
  uint16_t robot_id = 0;
  uint64_t step_index = 0;
  uint8_t joints = 0;     // N
  uint16_t horizon = 0;   // Np
  std::vector<double> states;  // (Np+1) * 2N, stacked [q, qd] per step

  bool operator==(const TrajectoryMessage&) const = default;
};

/// Per-step deadlock status sent from an agent to the coordinator.
struct DeadlockReport {
  uint16_t robot_id = 0;
  uint64_t step_index = 0;
  bool gamma_d = false;
  std::vector<double> x_current;  // 2N
  std::vector<double> x_target;   // 2N

  bool operator==(const DeadlockReport&) const = default;
};

/// Activation command sent from the coordinator to an agent.
struct CoordinatorCommand {
  uint16_t robot_id = 0;
  uint64_t step_index = 0;
  bool gamma_r = true;
  bool has_override = false;
  std::vector<double> override_target;  // 2N, present iff has_override

  bool operator==(const CoordinatorCommand&) const = default;
};

using Message =
    std::variant<TrajectoryMessage, DeadlockReport, CoordinatorCommand>;

enum class CodecError {
  bad_magic,
  bad_version,
  bad_type,
  truncated,
  length_mismatch,
};

class DecodeFailure : public std::runtime_error {
 public:
  DecodeFailure(CodecError code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CodecError code() const { return code_; }

 private:
  CodecError code_;
};

/// Wire format, little-endian: magic "DMPC" (0x44 0x4D 0x50 0x43), version
/// byte 1, type byte (1 trajectory, 2 report, 3 command), then the message
/// fields in declared order with reals as IEEE-754 binary64.
std::vector<uint8_t> encode(const Message& message);
Message decode(const std::vector<uint8_t>& frame);

/// Point-to-point datagram transport between integer endpoint ids.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(int dest, const std::vector<uint8_t>& frame) = 0;
  /// Blocks up to timeout_seconds; nullopt on timeout.
  virtual std::optional<std::vector<uint8_t>> receive(
      int self, double timeout_seconds) = 0;
};

/// Lossless, ordered in-process queues; the deterministic test transport.
class InProcessTransport : public Transport {
 public:
  void send(int dest, const std::vector<uint8_t>& frame) override;
  std::optional<std::vector<uint8_t>> receive(int self,
                                              double timeout_seconds) override;

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::map<int, std::deque<std::vector<uint8_t>>> queues_;
};

/// UDP datagrams over the loopback interface, one socket per endpoint.
class UdpTransport : public Transport {
 public:
  explicit UdpTransport(const std::vector<int>& endpoint_ids);
  ~UdpTransport() override;
  UdpTransport(const UdpTransport&) = delete;
  UdpTransport& operator=(const UdpTransport&) = delete;

  void send(int dest, const std::vector<uint8_t>& frame) override;
  std::optional<std::vector<uint8_t>> receive(int self,
                                              double timeout_seconds) override;

 private:
  struct Endpoint {
    int fd = -1;
    uint16_t port = 0;
  };
  std::map<int, Endpoint> endpoints_;
};

/// Deterministic fault injection: drops the n-th send overall for every n in
/// the drop schedule. Wraps any transport.
class LossyTransport : public Transport {
 public:
  LossyTransport(Transport& inner, std::set<uint64_t> drop_sends)
      : inner_(inner), drop_(std::move(drop_sends)) {}

  void send(int dest, const std::vector<uint8_t>& frame) override {
    const uint64_t seq = sends_++;
    if (drop_.count(seq)) return;
    inner_.send(dest, frame);
  }
  std::optional<std::vector<uint8_t>> receive(int self,
                                              double timeout_seconds) override {
    return inner_.receive(self, timeout_seconds);
  }
  uint64_t sends() const { return sends_; }

 private:
  Transport& inner_;
  std::set<uint64_t> drop_;
  uint64_t sends_ = 0;
};

/// Typed send/receive on one endpoint with a stash for out-of-phase frames.
class MessageEndpoint {
 public:
  MessageEndpoint(Transport& transport, int self_id)
      : transport_(transport), self_(self_id) {}

  void send(int dest, const Message& message) {
    transport_.send(dest, encode(message));
  }

  /// First message matching the predicate, stashing mismatches for later
  /// calls. Returns nullopt once the underlying receive times out.
  std::optional<Message> receive_where(
      const std::function<bool(const Message&)>& predicate,
      double timeout_seconds);

 private:
  Transport& transport_;
  int self_;
  std::deque<Message> stash_;
};

}  // namespace mrmpc
