#pragma once

// Blocking TCP server: one thread per connection, each running a Session.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include "twinfuse/fusion/session.hpp"

namespace twinfuse::fusion {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "expected HOST:PORT, got " + s);
  Endpoint e;
  e.host = s.substr(0, colon);
  if (e.host.empty()) e.host = "0.0.0.0";
  int port = -1;
  try {
    port = std::stoi(s.substr(colon + 1));
  } catch (...) {
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "bad port in " + s);
  e.port = static_cast<std::uint16_t>(port);
  return e;
}

namespace net {

inline void send_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::ConnectionLost, std::string("send: ") + std::strerror(errno));
    off += static_cast<std::size_t>(n);
  }
}

inline sockaddr_in resolve(const Endpoint& e) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(e.port);
  if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw Error(ErrorCode::InvalidArgument, "cannot resolve " + e.host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

}  // namespace net

class Server {
 public:
  Server(Store& store, IngestConfig cfg = {}) : ctx_(store, cfg) {}
  ~Server() { stop(); }

  /// Binds and starts accepting. Port 0 picks a free port (see port()).
  void start(const Endpoint& bind) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::IoError, "socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr = net::resolve(bind);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 64) != 0) {
      const std::string msg = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error(ErrorCode::IoError, "bind " + bind.host + ":" + std::to_string(bind.port) + ": " + msg);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  std::uint16_t port() const { return port_; }
  IngestContext& context() { return ctx_; }

  void stop() {
    if (!running_.exchange(false)) return;
    if (acceptor_.joinable()) acceptor_.join();
    ::close(listen_fd_);
    listen_fd_ = -1;
    std::list<Conn> conns;
    {
      std::lock_guard l(mu_);
      for (auto& c : conns_) ::shutdown(c.fd, SHUT_RDWR);
      conns.splice(conns.end(), conns_);
    }
    for (auto& c : conns)
      if (c.worker.joinable()) c.worker.join();
  }

  /// Blocks until stop() is called from another thread or `flag` becomes false.
  void wait(const std::atomic<bool>& flag) {
    while (flag && running_) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }

 private:
  struct Conn {
    int fd = -1;
    std::thread worker;
    std::atomic<bool> done{false};
  };

  void accept_loop() {
    while (running_) {
      pollfd p{listen_fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, 100);
      reap();
      if (r <= 0) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard l(mu_);
      auto& c = conns_.emplace_back();
      c.fd = fd;
      c.worker = std::thread([this, &c] { serve_connection(c); });
    }
  }

  void reap() {
    std::lock_guard l(mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (it->done) {
        it->worker.join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void serve_connection(Conn& c) {
    Session session(ctx_);
    std::uint8_t buf[1 << 16];
    try {
      while (running_ && !session.closed()) {
        const ssize_t n = ::recv(c.fd, buf, sizeof(buf), 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        for (const auto& resp : session.feed(std::span(buf, static_cast<std::size_t>(n)))) net::send_all(c.fd, resp);
      }
    } catch (const std::exception&) {
      // connection dropped mid-send; nothing more to do for this peer
    }
    ::shutdown(c.fd, SHUT_RDWR);
    ::close(c.fd);
    c.done = true;
  }

  IngestContext ctx_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<Conn> conns_;
};

}  // namespace twinfuse::fusion
