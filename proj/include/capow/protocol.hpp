#pragma once

// Binary wire format for the admission protocol.
//
// frame    := length:u32be type:u8 payload      (length counts type + payload)
// REQUEST  := ulen:u16be user_id arrival_min:f64be n:u16be feature:f64be * n
// CHALLENGE:= d:u8 t:u64be seed:16B expiry_ms:u32be
// SOLUTION := seed:16B nonce:u64be
// ACCEPT   := queue_position:u32be
// REJECT   := reason:u8
//
// f64be is the IEEE-754 bit pattern in big-endian order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "capow/error.hpp"
#include "capow/pow.hpp"

namespace capow::wire {

inline constexpr std::size_t kMaxFrameBytes = 1u << 20;
inline constexpr std::size_t kHeaderBytes = 4;

enum class MsgType : std::uint8_t { request = 1, challenge = 2, solution = 3, accept = 4, reject = 5 };

enum class RejectReason : std::uint8_t {
  bad_request = 1,
  unavailable = 2,
  expired = 3,
  replay = 4,
  wrong_solution = 5,
  overloaded = 6,
};

inline const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::bad_request: return "bad-request";
    case RejectReason::unavailable: return "unavailable";
    case RejectReason::expired: return "expired";
    case RejectReason::replay: return "replay";
    case RejectReason::wrong_solution: return "wrong-solution";
    case RejectReason::overloaded: return "overloaded";
  }
  return "?";
}

struct RequestMsg {
  std::string user_id;
  double arrival_min = 0.0;
  std::vector<double> flow_features;
  bool operator==(const RequestMsg&) const = default;
};

struct ChallengeMsg {
  std::uint8_t difficulty = 0;
  std::uint64_t issue_time_ms = 0;
  Seed seed{};
  std::uint32_t expiry_ms = 0;
  bool operator==(const ChallengeMsg&) const = default;
};

struct SolutionMsg {
  Seed seed{};
  std::uint64_t nonce = 0;
  bool operator==(const SolutionMsg&) const = default;
};

struct AcceptMsg {
  std::uint32_t queue_position = 0;
  bool operator==(const AcceptMsg&) const = default;
};

struct RejectMsg {
  RejectReason reason = RejectReason::bad_request;
  bool operator==(const RejectMsg&) const = default;
};

using Message = std::variant<RequestMsg, ChallengeMsg, SolutionMsg, AcceptMsg, RejectMsg>;

inline MsgType type_of(const Message& m) { return static_cast<MsgType>(m.index() + 1); }

/// Rebuilds the full challenge from its wire form and the requester's id.
inline Challenge to_challenge(const ChallengeMsg& m, std::string user_id) {
  return Challenge{std::move(user_id), m.issue_time_ms, m.seed, m.difficulty, m.expiry_ms};
}

inline ChallengeMsg to_message(const Challenge& c) {
  return ChallengeMsg{static_cast<std::uint8_t>(c.difficulty), c.issue_time_ms, c.seed, c.expiry_ms};
}

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void be(std::uint64_t v, int bytes) {
    for (int i = bytes - 1; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { be(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint64_t be(int bytes) {
    const auto p = need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (auto b : p) v = (v << 8) | b;
    return v;
  }
  double f64() { return std::bit_cast<double>(be(8)); }
  std::span<const std::uint8_t> bytes(std::size_t n) { return need(n); }
  void finish() const {
    if (pos_ != data_.size()) throw Error(ErrorKind::protocol, "trailing bytes after payload");
  }

 private:
  std::span<const std::uint8_t> need(std::size_t n) {
    if (data_.size() - pos_ < n) throw Error(ErrorKind::protocol, "truncated payload");
    const auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Encodes a message as a complete frame.
inline std::vector<std::uint8_t> encode(const Message& msg) {
  detail::Writer w;
  w.be(0, 4);
  w.u8(static_cast<std::uint8_t>(type_of(msg)));
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, RequestMsg>) {
          if (m.user_id.size() > 0xFFFF) throw Error(ErrorKind::protocol, "user id too long");
          if (m.flow_features.size() > 0xFFFF) throw Error(ErrorKind::protocol, "too many flow features");
          w.be(m.user_id.size(), 2);
          w.bytes({reinterpret_cast<const std::uint8_t*>(m.user_id.data()), m.user_id.size()});
          w.f64(m.arrival_min);
          w.be(m.flow_features.size(), 2);
          for (double f : m.flow_features) w.f64(f);
        } else if constexpr (std::is_same_v<T, ChallengeMsg>) {
          w.u8(m.difficulty);
          w.be(m.issue_time_ms, 8);
          w.bytes(m.seed);
          w.be(m.expiry_ms, 4);
        } else if constexpr (std::is_same_v<T, SolutionMsg>) {
          w.bytes(m.seed);
          w.be(m.nonce, 8);
        } else if constexpr (std::is_same_v<T, AcceptMsg>) {
          w.be(m.queue_position, 4);
        } else {
          w.u8(static_cast<std::uint8_t>(m.reason));
        }
      },
      msg);
  auto& buf = w.buffer();
  const auto len = static_cast<std::uint32_t>(buf.size() - kHeaderBytes);
  if (len > kMaxFrameBytes) throw Error(ErrorKind::protocol, "frame too large");
  for (int i = 0; i < 4; ++i) buf[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(len >> (8 * (3 - i)));
  return std::move(buf);
}

/// Decodes a frame body: the type byte followed by its payload.
inline Message decode_body(std::span<const std::uint8_t> body) {
  detail::Reader r(body);
  const auto type = r.u8();
  Message out;
  switch (static_cast<MsgType>(type)) {
    case MsgType::request: {
      RequestMsg m;
      const auto ulen = static_cast<std::size_t>(r.be(2));
      const auto ub = r.bytes(ulen);
      m.user_id.assign(reinterpret_cast<const char*>(ub.data()), ub.size());
      m.arrival_min = r.f64();
      const auto n = static_cast<std::size_t>(r.be(2));
      m.flow_features.reserve(n);
      for (std::size_t i = 0; i < n; ++i) m.flow_features.push_back(r.f64());
      out = std::move(m);
      break;
    }
    case MsgType::challenge: {
      ChallengeMsg m;
      m.difficulty = r.u8();
      m.issue_time_ms = r.be(8);
      const auto s = r.bytes(16);
      std::memcpy(m.seed.data(), s.data(), 16);
      m.expiry_ms = static_cast<std::uint32_t>(r.be(4));
      out = m;
      break;
    }
    case MsgType::solution: {
      SolutionMsg m;
      const auto s = r.bytes(16);
      std::memcpy(m.seed.data(), s.data(), 16);
      m.nonce = r.be(8);
      out = m;
      break;
    }
    case MsgType::accept:
      out = AcceptMsg{static_cast<std::uint32_t>(r.be(4))};
      break;
    case MsgType::reject: {
      const auto code = r.u8();
      if (code < 1 || code > 6) throw Error(ErrorKind::protocol, "unknown reject reason " + std::to_string(code));
      out = RejectMsg{static_cast<RejectReason>(code)};
      break;
    }
    default:
      throw Error(ErrorKind::protocol, "unknown message type " + std::to_string(type));
  }
  r.finish();
  return out;
}

/// Body length announced by a 4-byte frame header.
inline std::size_t frame_length(std::span<const std::uint8_t, kHeaderBytes> header) {
  std::size_t len = 0;
  for (auto b : header) len = (len << 8) | b;
  if (len == 0 || len > kMaxFrameBytes) throw Error(ErrorKind::protocol, "invalid frame length " + std::to_string(len));
  return len;
}

/// Decodes one complete frame; the span must hold exactly one frame.
inline Message decode(std::span<const std::uint8_t> frame) {
  if (frame.size() < kHeaderBytes + 1) throw Error(ErrorKind::protocol, "frame shorter than header");
  const auto len = frame_length(frame.first<kHeaderBytes>());
  if (frame.size() - kHeaderBytes != len) throw Error(ErrorKind::protocol, "frame length mismatch");
  return decode_body(frame.subspan(kHeaderBytes));
}

}  // namespace capow::wire
