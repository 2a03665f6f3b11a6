#pragma once

// Minimal blocking TCP helpers (POSIX) for framed protocol messages.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capow/error.hpp"
#include "capow/protocol.hpp"

namespace capow::net {

using Clock = std::chrono::steady_clock;

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses "host:port".
inline Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size())
    throw Error(ErrorKind::config, "endpoint '" + text + "' is not host:port");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.empty()) ep.host = "0.0.0.0";
  try {
    std::size_t used = 0;
    const int port = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, "endpoint '" + text + "' has an invalid port");
  }
  return ep;
}

namespace detail {

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

inline AddrInfo resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo info;
  const auto port = std::to_string(ep.port);
  if (const int rc = getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &info.head); rc != 0)
    throw TransportError("cannot resolve '" + ep.host + "': " + gai_strerror(rc));
  return info;
}

inline int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 100));
}

}  // namespace detail

inline Socket listen_tcp(const Endpoint& ep, int backlog = 128) {
  auto info = detail::resolve(ep, true);
  for (auto* ai = info.head; ai; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!s.valid()) continue;
    const int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(s.fd(), backlog) == 0) return s;
  }
  throw TransportError("cannot listen on " + ep.host + ":" + std::to_string(ep.port) + ": " + std::strerror(errno));
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw TransportError("getsockname failed");
  if (addr.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  return ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
}

inline Socket connect_tcp(const Endpoint& ep) {
  auto info = detail::resolve(ep, false);
  int last_errno = 0;
  for (auto* ai = info.head; ai; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!s.valid()) continue;
    if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
      const int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return s;
    }
    last_errno = errno;
  }
  throw TransportError("cannot connect to " + ep.host + ":" + std::to_string(ep.port) + ": " +
                       std::strerror(last_errno));
}

/// Waits until `fd` is readable. Returns false on deadline or stop request.
inline bool wait_readable(int fd, Clock::time_point deadline, const std::atomic<bool>* stop = nullptr) {
  while (true) {
    if (stop && stop->load()) return false;
    pollfd p{fd, POLLIN, 0};
    const int timeout = detail::remaining_ms(deadline);
    const int rc = ::poll(&p, 1, timeout);
    if (rc > 0) return true;
    if (rc < 0 && errno != EINTR) throw TransportError(std::string("poll failed: ") + std::strerror(errno));
    if (Clock::now() >= deadline) return false;
  }
}

inline void read_exact(const Socket& s, std::uint8_t* out, std::size_t n, Clock::time_point deadline,
                       const std::atomic<bool>* stop = nullptr) {
  std::size_t got = 0;
  while (got < n) {
    if (!wait_readable(s.fd(), deadline, stop)) throw TransportError("read timed out");
    const auto r = ::recv(s.fd(), out + got, n - got, 0);
    if (r == 0) throw TransportError("connection closed by peer");
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
}

inline void write_all(const Socket& s, std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const auto r = ::send(s.fd(), data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(r);
  }
}

inline void send_message(const Socket& s, const wire::Message& m) { write_all(s, wire::encode(m)); }

/// Reads one frame. Transport problems throw TransportError; malformed bytes
/// throw Error(protocol).
inline wire::Message read_message(const Socket& s, Clock::time_point deadline,
                                  const std::atomic<bool>* stop = nullptr) {
  std::array<std::uint8_t, wire::kHeaderBytes> header{};
  read_exact(s, header.data(), header.size(), deadline, stop);
  const auto len = wire::frame_length(header);
  std::vector<std::uint8_t> body(len);
  read_exact(s, body.data(), len, deadline, stop);
  return wire::decode_body(body);
}

}  // namespace capow::net
