#pragma once

#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include "twinfuse/fusion/protocol.hpp"
#include "twinfuse/fusion/server.hpp"

namespace twinfuse::fusion {

/// Synchronous request/response client.
class Client {
 public:
  /// Connects, retrying up to `attempts` times before ConnectionLost.
  explicit Client(const Endpoint& ep, int attempts = 5, std::chrono::milliseconds backoff = std::chrono::milliseconds(100)) {
    const sockaddr_in addr = net::resolve(ep);
    for (int i = 0; i < attempts; ++i) {
      fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd_ >= 0 && ::connect(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) return;
      if (fd_ >= 0) ::close(fd_);
      fd_ = -1;
      std::this_thread::sleep_for(backoff * (i + 1));
    }
    throw Error(ErrorCode::ConnectionLost, "cannot connect to " + ep.host + ":" + std::to_string(ep.port));
  }
  ~Client() {
    if (fd_ >= 0) ::close(fd_);
  }
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void send_raw(std::span<const std::uint8_t> bytes) { net::send_all(fd_, bytes); }

  proto::Frame receive() {
    std::uint8_t buf[1 << 16];
    for (;;) {
      if (auto r = decoder_.next()) {
        if (auto* f = std::get_if<proto::Frame>(&*r)) return std::move(*f);
        throw Error(ErrorCode::MalformedPayload, "bad frame from server");
      }
      const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(ErrorCode::ConnectionLost, "server closed the connection");
      decoder_.feed(std::span(buf, static_cast<std::size_t>(n)));
    }
  }

  proto::Frame request(proto::Kind kind, std::span<const std::uint8_t> payload) {
    send_raw(proto::encode(kind, payload));
    return receive();
  }

  proto::Frame request(proto::Kind kind, const Bytes& payload) {
    return request(kind, std::span<const std::uint8_t>(payload));
  }

  proto::Frame request(proto::Kind kind, const nlohmann::json& j) {
    send_raw(proto::encode(kind, j));
    return receive();
  }

  /// Sends a request and returns the JSON body of the reply; ERROR replies throw.
  nlohmann::json call(proto::Kind kind, std::span<const std::uint8_t> payload) {
    return expect_ok(request(kind, payload));
  }
  nlohmann::json call(proto::Kind kind, const Bytes& payload) { return call(kind, std::span<const std::uint8_t>(payload)); }
  nlohmann::json call(proto::Kind kind, const nlohmann::json& j) { return expect_ok(request(kind, j)); }

  std::string hello(const std::string& client) {
    return call(proto::Kind::Hello, nlohmann::json{{"client", client}, {"proto", 1}}).at("session").get<std::string>();
  }

 private:
  static nlohmann::json expect_ok(const proto::Frame& f) {
    const auto j = proto::parse_json(f.payload);
    if (f.kind == static_cast<std::uint8_t>(proto::Kind::Error)) {
      const auto code = error_code_from_string(j.value("code", std::string()));
      throw Error(code.value_or(ErrorCode::MalformedPayload), "server replied: " + j.value("message", std::string()));
    }
    return j;
  }

  int fd_ = -1;
  proto::Decoder decoder_;
};

}  // namespace twinfuse::fusion
