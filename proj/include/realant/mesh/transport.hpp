#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "realant/mesh/wire.hpp"

namespace realant::mesh {

using Clock = std::chrono::steady_clock;
using Millis = std::chrono::milliseconds;

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `tcp://host:port`; a bare `host:port` is accepted too.
struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view url) {
    if (url.starts_with("tcp://")) url.remove_prefix(6);
    const auto colon = url.rfind(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == url.size())
      throw std::invalid_argument("endpoint must look like tcp://host:port, got '" + std::string(url) + "'");
    Endpoint e;
    e.host = std::string(url.substr(0, colon));
    const std::string port(url.substr(colon + 1));
    std::size_t used = 0;
    unsigned long p = 0;
    try {
      p = std::stoul(port, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != port.size() || p > 65535) throw std::invalid_argument("bad port in endpoint '" + port + "'");
    e.port = static_cast<std::uint16_t>(p);
    return e;
  }

  std::string str() const { return "tcp://" + host + ":" + std::to_string(port); }
};

/// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) reset(o.release());
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() { return std::exchange(fd_, -1); }
  void reset(int fd = -1) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_ = -1;
};

namespace detail {

inline sockaddr_in resolve(const Endpoint& e) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(e.port);
  if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw TransportError("cannot resolve host " + e.host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

inline int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

/// Waits for `events` on `fd`; false on timeout.
inline bool wait_fd(int fd, short events, int timeout_ms) {
  pollfd p{fd, events, 0};
  while (true) {
    const int r = ::poll(&p, 1, timeout_ms);
    if (r > 0) return true;
    if (r == 0) return false;
    if (errno != EINTR) throw TransportError(std::string("poll: ") + std::strerror(errno));
  }
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace detail

inline void send_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        detail::wait_fd(fd, POLLOUT, 1000);
        continue;
      }
      throw TransportError(std::string("send: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

inline void send_message(int fd, const Message& m) {
  const auto bytes = encode(m);
  send_all(fd, bytes.data(), bytes.size());
}

/// Reads exactly n bytes before `deadline`.
inline void recv_all(int fd, std::uint8_t* out, std::size_t n, Clock::time_point deadline) {
  while (n > 0) {
    if (!detail::wait_fd(fd, POLLIN, detail::remaining_ms(deadline))) throw TransportError("receive timed out mid-frame");
    const ssize_t r = ::recv(fd, out, n, 0);
    if (r == 0) throw TransportError("connection closed by peer");
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(std::string("recv: ") + std::strerror(errno));
    }
    out += r;
    n -= static_cast<std::size_t>(r);
  }
}

/// Next frame from a stream socket. Returns nullopt if nothing arrives within
/// `timeout`; a frame that has started must complete within `frame_timeout`.
/// Malformed frames raise DecodeError, after which the stream is unusable.
inline std::optional<Message> recv_message(int fd, Millis timeout, Millis frame_timeout = Millis(30000)) {
  if (!detail::wait_fd(fd, POLLIN, static_cast<int>(timeout.count()))) return std::nullopt;
  std::uint8_t header[kHeaderSize];
  const auto deadline = Clock::now() + frame_timeout;
  recv_all(fd, header, kHeaderSize, deadline);
  const FrameHeader h = decode_header(header);
  util::Bytes payload(h.length);
  recv_all(fd, payload.data(), payload.size(), deadline);
  return decode_payload(h, payload.data());
}

inline Socket listen_on(const Endpoint& e) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw TransportError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = detail::resolve(e);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw TransportError("bind " + e.str() + ": " + std::strerror(errno));
  if (::listen(s.fd(), 16) != 0) throw TransportError(std::string("listen: ") + std::strerror(errno));
  return s;
}

inline std::uint16_t local_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

/// Accepts one pending connection, or returns an invalid socket on timeout.
inline Socket accept_one(int listen_fd, Millis timeout) {
  if (!detail::wait_fd(listen_fd, POLLIN, static_cast<int>(timeout.count()))) return Socket();
  Socket c(::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC));
  if (c.valid()) detail::set_nodelay(c.fd());
  return c;
}

/// Connects with a timeout; throws TransportError on failure.
inline Socket connect_to(const Endpoint& e, Millis timeout) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!s.valid()) throw TransportError(std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr = detail::resolve(e);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    if (errno != EINPROGRESS) throw TransportError("connect " + e.str() + ": " + std::strerror(errno));
    if (!detail::wait_fd(s.fd(), POLLOUT, static_cast<int>(timeout.count())))
      throw TransportError("connect " + e.str() + ": timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw TransportError("connect " + e.str() + ": " + std::strerror(err));
  }
  ::fcntl(s.fd(), F_SETFL, ::fcntl(s.fd(), F_GETFL) & ~O_NONBLOCK);
  detail::set_nodelay(s.fd());
  return s;
}

/// Publish side of a topic: every connected subscriber receives every frame
/// published after it connected. Never blocks on absent subscribers.
class Publisher {
 public:
  explicit Publisher(const Endpoint& bind) : listener_(listen_on(bind)), port_(local_port(listener_.fd())) {}

  std::uint16_t port() const { return port_; }

  std::size_t subscribers() {
    accept_pending(Millis(0));
    return subs_.size();
  }

  bool wait_for_subscribers(std::size_t n, Millis timeout, const std::atomic<bool>* stop = nullptr) {
    const auto deadline = Clock::now() + timeout;
    while (subscribers() < n) {
      if (Clock::now() >= deadline || (stop && *stop)) return false;
      accept_pending(Millis(20));
    }
    return true;
  }

  void publish(const Message& m) {
    accept_pending(Millis(0));
    const auto bytes = encode(m);
    for (auto it = subs_.begin(); it != subs_.end();) {
      try {
        send_all(it->fd(), bytes.data(), bytes.size());
        ++it;
      } catch (const TransportError&) {
        it = subs_.erase(it);
      }
    }
  }

 private:
  void accept_pending(Millis timeout) {
    while (true) {
      Socket c = accept_one(listener_.fd(), timeout);
      if (!c.valid()) return;
      subs_.push_back(std::move(c));
      timeout = Millis(0);
    }
  }

  Socket listener_;
  std::uint16_t port_;
  std::vector<Socket> subs_;
};

/// Subscribe side of a topic. A background reader keeps the connection up,
/// reconnecting after failures, and queues frames in arrival order.
class Subscriber {
 public:
  explicit Subscriber(Endpoint e, std::size_t max_queue = 4096) : endpoint_(std::move(e)), max_queue_(max_queue) {
    thread_ = std::thread([this] { run(); });
  }
  Subscriber(const Subscriber&) = delete;
  Subscriber& operator=(const Subscriber&) = delete;
  ~Subscriber() {
    stop_ = true;
    cv_.notify_all();
    thread_.join();
  }

  bool connected() const { return connected_; }
  std::uint64_t connections() const { return connections_; }

  bool wait_connected(Millis timeout, const std::atomic<bool>* stop = nullptr) {
    const auto deadline = Clock::now() + timeout;
    while (!connected_) {
      if (Clock::now() >= deadline || (stop && *stop)) return false;
      std::this_thread::sleep_for(Millis(5));
    }
    return true;
  }

  /// Oldest queued frame, waiting up to `timeout`.
  std::optional<Message> next(Millis timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || stop_; }) || queue_.empty()) return std::nullopt;
    Message m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

  /// Drains the queue and returns everything in arrival order.
  std::vector<Message> drain() {
    std::lock_guard lock(mu_);
    std::vector<Message> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
    queue_.clear();
    return out;
  }

  std::uint64_t dropped() const { return dropped_; }

 private:
  void run() {
    while (!stop_) {
      Socket s;
      try {
        s = connect_to(endpoint_, Millis(200));
      } catch (const TransportError&) {
        std::this_thread::sleep_for(Millis(50));
        continue;
      }
      connected_ = true;
      ++connections_;
      try {
        while (!stop_) {
          auto m = recv_message(s.fd(), Millis(50));
          if (!m) continue;
          std::lock_guard lock(mu_);
          if (queue_.size() >= max_queue_) {
            queue_.pop_front();
            ++dropped_;
          }
          queue_.push_back(std::move(*m));
          cv_.notify_all();
        }
      } catch (const std::exception&) {
        // peer gone or stream corrupt: reconnect
      }
      connected_ = false;
    }
  }

  Endpoint endpoint_;
  std::size_t max_queue_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> connected_{false};
  std::atomic<std::uint64_t> connections_{0};
  std::atomic<std::uint64_t> dropped_{0};
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Message> queue_;
  std::thread thread_;
};

/// Reply side: serves one client connection at a time. The handler returns
/// the frames to send back for each request.
class ReplyServer {
 public:
  using Handler = std::function<std::vector<Message>(const Message&)>;

  explicit ReplyServer(const Endpoint& bind) : listener_(listen_on(bind)), port_(local_port(listener_.fd())) {}

  std::uint16_t port() const { return port_; }

  /// Serves until `stop` is set.
  void serve(const Handler& handler, const std::atomic<bool>& stop) {
    while (!stop) {
      Socket c = accept_one(listener_.fd(), Millis(100));
      if (!c.valid()) continue;
      try {
        while (!stop) {
          auto req = recv_message(c.fd(), Millis(100));
          if (!req) continue;
          for (const auto& reply : handler(*req)) send_message(c.fd(), reply);
        }
      } catch (const util::DecodeError& e) {
        try {
          send_message(c.fd(), Error{error_codes::bad_request, e.what()});
        } catch (const TransportError&) {
        }
      } catch (const TransportError&) {
      }
    }
  }

 private:
  Socket listener_;
  std::uint16_t port_;
};

/// Request side with lazy (re)connection.
class RequestClient {
 public:
  explicit RequestClient(Endpoint e) : endpoint_(std::move(e)) {}

  const Endpoint& endpoint() const { return endpoint_; }

  void send(const Message& m) {
    ensure_connected();
    try {
      send_message(sock_.fd(), m);
    } catch (...) {
      sock_.reset();
      throw;
    }
  }

  Message receive(Millis timeout) {
    if (!sock_.valid()) throw TransportError("not connected");
    try {
      auto m = recv_message(sock_.fd(), timeout);
      if (!m) throw TransportError("no reply from " + endpoint_.str() + " within " + std::to_string(timeout.count()) + " ms");
      return std::move(*m);
    } catch (...) {
      sock_.reset();
      throw;
    }
  }

  Message request(const Message& m, Millis timeout) {
    send(m);
    return receive(timeout);
  }

  void disconnect() { sock_.reset(); }

 private:
  void ensure_connected() {
    if (!sock_.valid()) sock_ = connect_to(endpoint_, Millis(2000));
  }

  Endpoint endpoint_;
  Socket sock_;
};

}  // namespace realant::mesh
