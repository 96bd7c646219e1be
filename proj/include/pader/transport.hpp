#pragma once

#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "pader/circuit.hpp"
#include "pader/paillier.hpp"

namespace pader {

enum class MessageType : std::uint8_t { Cipher = 1, CipherBatch = 2, Plain = 3, Control = 4 };

inline const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::Cipher: return "CIPHER";
    case MessageType::CipherBatch: return "CIPHER_BATCH";
    case MessageType::Plain: return "PLAIN";
    case MessageType::Control: return "CONTROL";
  }
  return "?";
}

// Wire format: 1-byte type, 4-byte big-endian payload length, payload.
//   CIPHER        one fixed-width ciphertext (2 * key_bits / 8 bytes)
//   CIPHER_BATCH  u32 count, then count fixed-width ciphertexts
//   PLAIN         sequence of (u32 length, minimal big-endian integer)
//   CONTROL       opaque bytes
inline constexpr std::size_t kFrameHeaderBytes = 5;

struct Frame {
  MessageType type = MessageType::Control;
  std::vector<std::uint8_t> payload;

  bool operator==(const Frame&) const = default;
};

namespace wire {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  if (at + 4 > in.size()) throw TransportError("truncated length field");
  return (std::uint32_t{in[at]} << 24) | (std::uint32_t{in[at + 1]} << 16) | (std::uint32_t{in[at + 2]} << 8) |
         std::uint32_t{in[at + 3]};
}

inline std::vector<std::uint8_t> encode_frame(const Frame& f) {
  if (f.payload.size() > UINT32_MAX) throw TransportError("frame payload too large");
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderBytes + f.payload.size());
  out.push_back(static_cast<std::uint8_t>(f.type));
  put_u32(out, static_cast<std::uint32_t>(f.payload.size()));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

inline MessageType check_type(std::uint8_t t) {
  if (t < 1 || t > 4) throw TransportError("unknown message type " + std::to_string(t));
  return static_cast<MessageType>(t);
}

// Parses one frame from the front of `bytes`; returns its length or nullopt if incomplete.
inline std::optional<std::size_t> frame_length(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderBytes) return std::nullopt;
  check_type(bytes[0]);
  std::size_t total = kFrameHeaderBytes + get_u32(bytes, 1);
  if (bytes.size() < total) return std::nullopt;
  return total;
}

inline Frame decode_frame(std::span<const std::uint8_t> bytes) {
  auto len = frame_length(bytes);
  if (!len || *len != bytes.size()) throw TransportError("malformed frame");
  return Frame{check_type(bytes[0]), {bytes.begin() + kFrameHeaderBytes, bytes.end()}};
}

inline Frame cipher(const paillier::PublicKey& pk, const paillier::Ciphertext& c) {
  return Frame{MessageType::Cipher, paillier::serialize(pk, c)};
}

inline Frame cipher_batch(const paillier::PublicKey& pk, std::span<const paillier::Ciphertext> cs) {
  Frame f{MessageType::CipherBatch, {}};
  const std::size_t width = pk.ciphertext_bytes();
  f.payload.reserve(4 + cs.size() * width);
  put_u32(f.payload, static_cast<std::uint32_t>(cs.size()));
  f.payload.resize(4 + cs.size() * width);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (cs[i].key_id != pk.id) throw KeyMismatch("ciphertext belongs to a different key");
    write_fixed(cs[i].value, std::span<std::uint8_t>(f.payload).subspan(4 + i * width, width));
  }
  return f;
}

inline Frame plain(std::span<const BigInt> values) {
  Frame f{MessageType::Plain, {}};
  for (const auto& v : values) {
    auto bytes = to_bytes_minimal(v);
    put_u32(f.payload, static_cast<std::uint32_t>(bytes.size()));
    f.payload.insert(f.payload.end(), bytes.begin(), bytes.end());
  }
  return f;
}

inline Frame control(std::string_view text) {
  return Frame{MessageType::Control, std::vector<std::uint8_t>(text.begin(), text.end())};
}

inline std::vector<paillier::Ciphertext> read_ciphers(const paillier::PublicKey& pk, const Frame& f) {
  const std::size_t width = pk.ciphertext_bytes();
  std::span<const std::uint8_t> p(f.payload);
  if (f.type == MessageType::Cipher) return {paillier::deserialize(pk, p)};
  if (f.type != MessageType::CipherBatch) throw ProtocolError(std::string("expected ciphertexts, got ") + to_string(f.type));
  const std::uint32_t count = get_u32(p, 0);
  if (p.size() != 4 + std::size_t{count} * width) throw TransportError("ciphertext batch has wrong length");
  std::vector<paillier::Ciphertext> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(paillier::deserialize(pk, p.subspan(4 + i * width, width)));
  return out;
}

inline std::vector<BigInt> read_plain(const Frame& f) {
  if (f.type != MessageType::Plain) throw ProtocolError(std::string("expected plaintexts, got ") + to_string(f.type));
  std::span<const std::uint8_t> p(f.payload);
  std::vector<BigInt> out;
  std::size_t at = 0;
  while (at < p.size()) {
    const std::uint32_t len = get_u32(p, at);
    at += 4;
    if (at + len > p.size()) throw TransportError("truncated plaintext entry");
    out.push_back(from_bytes(p.subspan(at, len)));
    at += len;
  }
  return out;
}

inline std::string read_control(const Frame& f) {
  if (f.type != MessageType::Control) throw ProtocolError(std::string("expected control, got ") + to_string(f.type));
  return std::string(f.payload.begin(), f.payload.end());
}

// Ciphertexts or plaintext integers carried by a frame; CONTROL counts zero.
inline std::size_t units(const Frame& f) {
  switch (f.type) {
    case MessageType::Cipher: return 1;
    case MessageType::CipherBatch: return get_u32(f.payload, 0);
    case MessageType::Plain: {
      std::size_t n = 0, at = 0;
      while (at < f.payload.size()) {
        at += 4 + get_u32(f.payload, at);
        ++n;
      }
      return n;
    }
    case MessageType::Control: return 0;
  }
  return 0;
}

}  // namespace wire

enum class Direction : std::uint8_t { AtoB, BtoA };

inline Direction direction_from(Party sender) { return sender == Party::A ? Direction::AtoB : Direction::BtoA; }

struct DirectionMeters {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;          // framed bytes, header included
  std::uint64_t units = 0;          // ciphertexts + plaintext integers
  std::uint64_t cipher_units = 0;
  std::uint64_t transmissions = 0;  // maximal runs of frames in this direction

  DirectionMeters& operator+=(const DirectionMeters& o) {
    messages += o.messages;
    bytes += o.bytes;
    units += o.units;
    cipher_units += o.cipher_units;
    transmissions += o.transmissions;
    return *this;
  }
};

struct Meters {
  DirectionMeters a_to_b;
  DirectionMeters b_to_a;

  DirectionMeters total() const {
    DirectionMeters t = a_to_b;
    t += b_to_a;
    return t;
  }

  Meters& operator+=(const Meters& o) {
    a_to_b += o.a_to_b;
    b_to_a += o.b_to_a;
    return *this;
  }
};

struct TranscriptEntry {
  Direction direction;
  Frame frame;
};

struct BandwidthModel {
  double bits_per_second = 10e6;
};

inline double estimate_wallclock(std::uint64_t bytes, double pure_seconds, const BandwidthModel& model) {
  if (!(model.bits_per_second > 0)) throw ParameterError("bandwidth must be positive");
  return pure_seconds + static_cast<double>(bytes) * 8.0 / model.bits_per_second;
}

inline double estimate_wallclock(const Meters& m, double pure_seconds, const BandwidthModel& model) {
  return estimate_wallclock(m.total().bytes, pure_seconds, model);
}

// Frame transport between the two parties. Subclasses move bytes; metering
// and the optional transcript live here so every transport counts alike.
class Channel {
 public:
  virtual ~Channel() = default;

  void send(Party from, const Frame& f) {
    const Direction d = direction_from(from);
    auto bytes = wire::encode_frame(f);
    {
      std::lock_guard<std::mutex> lock(meter_mu_);
      if (closed_) throw TransportError("channel closed");
      DirectionMeters& m = d == Direction::AtoB ? meters_.a_to_b : meters_.b_to_a;
      if (!last_ || *last_ != d) ++m.transmissions;
      last_ = d;
      ++m.messages;
      m.bytes += bytes.size();
      const std::size_t u = wire::units(f);
      m.units += u;
      if (f.type == MessageType::Cipher || f.type == MessageType::CipherBatch) m.cipher_units += u;
      if (record_) transcript_.push_back({d, f});
    }
    deliver(d, std::move(bytes));
  }

  Frame recv(Party at) {
    const Direction d = at == Party::B ? Direction::AtoB : Direction::BtoA;
    return wire::decode_frame(take(d));
  }

  Meters meters() const {
    std::lock_guard<std::mutex> lock(meter_mu_);
    return meters_;
  }

  void reset_meters() {
    std::lock_guard<std::mutex> lock(meter_mu_);
    meters_ = {};
    last_.reset();
    transcript_.clear();
  }

  void record_transcript(bool on) {
    std::lock_guard<std::mutex> lock(meter_mu_);
    record_ = on;
  }

  std::vector<TranscriptEntry> transcript() const {
    std::lock_guard<std::mutex> lock(meter_mu_);
    return transcript_;
  }

  virtual void close() {
    std::lock_guard<std::mutex> lock(meter_mu_);
    closed_ = true;
  }

  bool closed() const {
    std::lock_guard<std::mutex> lock(meter_mu_);
    return closed_;
  }

 protected:
  virtual void deliver(Direction d, std::vector<std::uint8_t> bytes) = 0;
  virtual std::vector<std::uint8_t> take(Direction d) = 0;

 private:
  mutable std::mutex meter_mu_;
  Meters meters_;
  std::optional<Direction> last_;
  bool record_ = false;
  bool closed_ = false;
  std::vector<TranscriptEntry> transcript_;
};

class LoopbackChannel : public Channel {
 public:
  explicit LoopbackChannel(std::chrono::milliseconds recv_timeout = std::chrono::seconds(30))
      : timeout_(recv_timeout) {}

  void close() override {
    Channel::close();
    cv_.notify_all();
  }

 protected:
  void deliver(Direction d, std::vector<std::uint8_t> bytes) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      queue(d).push_back(std::move(bytes));
    }
    cv_.notify_all();
  }

  std::vector<std::uint8_t> take(Direction d) override {
    std::unique_lock<std::mutex> lock(mu_);
    auto& q = queue(d);
    if (!cv_.wait_for(lock, timeout_, [&] { return !q.empty() || closed(); })) {
      throw TransportError("no frame pending");
    }
    if (q.empty()) throw TransportError("channel closed");
    auto out = std::move(q.front());
    q.pop_front();
    return out;
  }

 private:
  std::deque<std::vector<std::uint8_t>>& queue(Direction d) { return d == Direction::AtoB ? a_to_b_ : b_to_a_; }

  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> a_to_b_, b_to_a_;
};

// Stream-socket transport. Both descriptors are non-blocking; a writer that
// would block drains the peer's socket into its inbound buffer, so one thread
// may drive both parties without deadlocking on full kernel buffers.
class SocketChannel : public Channel {
 public:
  static std::unique_ptr<SocketChannel> unix_pair(std::chrono::milliseconds timeout = std::chrono::seconds(30)) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw TransportError(std::strerror(errno));
    return std::unique_ptr<SocketChannel>(new SocketChannel(fds[0], fds[1], timeout));
  }

  static std::unique_ptr<SocketChannel> tcp_loopback(std::chrono::milliseconds timeout = std::chrono::seconds(30)) {
    int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener < 0) throw TransportError(std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof(addr);
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listener, 1) != 0 ||
        ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
      ::close(listener);
      throw TransportError(std::strerror(errno));
    }
    int a = ::socket(AF_INET, SOCK_STREAM, 0);
    if (a < 0 || ::connect(a, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(listener);
      if (a >= 0) ::close(a);
      throw TransportError(std::strerror(errno));
    }
    int b = ::accept(listener, nullptr, nullptr);
    ::close(listener);
    if (b < 0) {
      ::close(a);
      throw TransportError(std::strerror(errno));
    }
    return std::unique_ptr<SocketChannel>(new SocketChannel(a, b, timeout));
  }

  ~SocketChannel() override { shutdown_fds(); }

  void close() override {
    Channel::close();
    shutdown_fds();
  }

 protected:
  void deliver(Direction d, std::vector<std::uint8_t> bytes) override {
    const int fd = d == Direction::AtoB ? fd_a_ : fd_b_;
    std::size_t off = 0;
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (off < bytes.size()) {
      ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n > 0) {
        off += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
        throw TransportError(std::string("send failed: ") + std::strerror(errno));
      }
      drain(d);
      if (std::chrono::steady_clock::now() > deadline) throw TransportError("send timed out");
      pollfd p{fd, POLLOUT, 0};
      ::poll(&p, 1, 5);
    }
  }

  std::vector<std::uint8_t> take(Direction d) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      {
        std::lock_guard<std::mutex> lock(inbound_mu_[idx(d)]);
        auto& buf = inbound_[idx(d)];
        read_available(d, buf);
        if (auto len = wire::frame_length(buf)) {
          std::vector<std::uint8_t> out(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(*len));
          buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(*len));
          return out;
        }
        if (eof_[idx(d)]) throw TransportError("channel closed");
      }
      if (closed()) throw TransportError("channel closed");
      if (std::chrono::steady_clock::now() > deadline) throw TransportError("no frame pending");
      pollfd p{reader_fd(d), POLLIN, 0};
      ::poll(&p, 1, 20);
    }
  }

 private:
  SocketChannel(int a, int b, std::chrono::milliseconds timeout) : fd_a_(a), fd_b_(b), timeout_(timeout) {
    for (int fd : {a, b}) ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
  }

  static std::size_t idx(Direction d) { return d == Direction::AtoB ? 0 : 1; }
  int reader_fd(Direction d) const { return d == Direction::AtoB ? fd_b_ : fd_a_; }

  void drain(Direction d) {
    std::lock_guard<std::mutex> lock(inbound_mu_[idx(d)]);
    read_available(d, inbound_[idx(d)]);
  }

  void read_available(Direction d, std::vector<std::uint8_t>& buf) {
    std::array<std::uint8_t, 1 << 16> chunk;
    for (;;) {
      ssize_t n = ::recv(reader_fd(d), chunk.data(), chunk.size(), 0);
      if (n > 0) {
        buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
        continue;
      }
      if (n == 0) eof_[idx(d)] = true;
      return;
    }
  }

  void shutdown_fds() {
    if (fd_a_ >= 0) ::close(fd_a_);
    if (fd_b_ >= 0) ::close(fd_b_);
    fd_a_ = fd_b_ = -1;
  }

  int fd_a_, fd_b_;
  std::chrono::milliseconds timeout_;
  std::array<std::mutex, 2> inbound_mu_;
  std::array<std::vector<std::uint8_t>, 2> inbound_;
  std::array<bool, 2> eof_{false, false};
};

}  // namespace pader
