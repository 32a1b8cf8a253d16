// Wire-level transport: a blocking TCP server that drives the identical round
// loop over loopback or remote sockets, and the matching client. One
// connection per client, request/response per round, 30 s idle timeout.
#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "fedlap/harness.hpp"
#include "fedlap/wire.hpp"

namespace fedlap {

namespace detail {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close_fd();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close_fd(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close_fd() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void set_timeout(int seconds) {
    timeval tv{};
    tv.tv_sec = seconds;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
  }

  void send_all(const Bytes& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) throw std::runtime_error("tcp: send failed (connection lost)");
      sent += static_cast<std::size_t>(n);
    }
  }

  void recv_all(std::uint8_t* out, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
      const ssize_t n = ::recv(fd_, out + got, len - got, 0);
      if (n <= 0) throw std::runtime_error("tcp: recv failed (connection lost or timeout)");
      got += static_cast<std::size_t>(n);
    }
  }

  // Read one length-prefixed frame.
  Bytes recv_frame() {
    std::uint8_t hdr[4];
    recv_all(hdr, 4);
    const std::uint32_t len = (std::uint32_t(hdr[0]) << 24) | (std::uint32_t(hdr[1]) << 16) |
                              (std::uint32_t(hdr[2]) << 8) | std::uint32_t(hdr[3]);
    if (len > (1u << 30)) throw std::runtime_error("tcp: frame length overflow");
    Bytes payload(len);
    if (len) recv_all(payload.data(), len);
    return payload;
  }

 private:
  int fd_ = -1;
};

inline Socket connect_to(const std::string& host, std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw std::runtime_error("tcp: socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw std::runtime_error("tcp: bad address " + host);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw std::runtime_error("tcp: cannot connect to " + host + ":" + std::to_string(port));
  s.set_timeout(30);
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

}  // namespace detail

// Listens, accepts exactly K distinct clients (duplicate ids are rejected),
// then runs the round loop over the wire for every seed. Produces the same
// RunResult stream as the in-process transport.
class TcpServer {
 public:
  TcpServer(const ExperimentConfig& cfg, std::uint16_t port) : cfg_(cfg) {
    listener_ = detail::Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_.valid()) throw std::runtime_error("tcp: socket() failed");
    int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw std::runtime_error("tcp: cannot bind port " + std::to_string(port));
    if (::listen(listener_.fd(), 64) != 0) throw std::runtime_error("tcp: listen failed");
    socklen_t len = sizeof(addr);
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  std::uint16_t port() const { return port_; }

  std::vector<RunResult> serve() {
    accept_clients();
    std::vector<RunResult> results;
    for (const std::uint64_t seed : cfg_.seeds) results.push_back(serve_seed(seed));
    if (!cfg_.output.empty()) {
      std::ofstream os = open_results_file(cfg_.output);
      write_results(os, cfg_, results);
    }
    return results;
  }

 private:
  void accept_clients() {
    const std::size_t expected = expected_clients();
    conns_.clear();
    conns_.resize(expected);
    std::set<std::uint32_t> seen;
    while (seen.size() < expected) {
      detail::Socket conn(::accept(listener_.fd(), nullptr, nullptr));
      if (!conn.valid()) throw std::runtime_error("tcp: accept failed");
      conn.set_timeout(30);
      int one = 1;
      ::setsockopt(conn.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      try {
        const WireMsg hello = decode_msg(conn.recv_frame());
        const std::uint32_t id = hello.client.client_id;
        if (hello.kind != 1 || id >= expected || seen.count(id)) {
          std::cerr << "tcp: rejecting connection (bad or duplicate client id "
                    << id << ")\n";
          continue;  // socket closes on scope exit
        }
        seen.insert(id);
        conns_[id] = std::move(conn);
      } catch (const std::exception& e) {
        std::cerr << "tcp: rejecting connection (" << e.what() << ")\n";
      }
    }
  }

  std::size_t expected_clients() const {
    if (cfg_.dataset.kind == DatasetKind::Quadratic) return cfg_.dataset.quad_clients;
    return cfg_.split.clients;
  }

  RunResult serve_seed(std::uint64_t seed) {
    RunResult out;
    out.seed = seed;
    FederatedRun run(cfg_, seed);
    const auto t0 = std::chrono::steady_clock::now();
    auto push_record = [&](RoundRecord rec) {
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      out.records.push_back(rec);
      detail::fill_trailing_stats(out.records);
    };

    GlobalMsg msg = run.initial_msg();
    push_record(run.evaluate(0));
    try {
      for (std::size_t round = 1; round <= cfg_.rounds; ++round) {
        const Bytes frame_bytes = frame(encode_msg(msg));
        for (auto& conn : conns_) conn.send_all(frame_bytes);
        std::vector<ClientMsg> msgs;
        for (auto& conn : conns_) {
          WireMsg wm = decode_msg(conn.recv_frame());
          if (wm.kind != 1) throw std::runtime_error("tcp: expected a client message");
          msgs.push_back(std::move(wm.client));
        }
        msg = run.server_round(std::move(msgs), round);
        if (round % cfg_.eval_every == 0 || round == cfg_.rounds) push_record(run.evaluate(round));
      }
      out.final_w_g = run.w_g();
    } catch (const std::exception& e) {
      std::cerr << "tcp: aborting run: " << e.what() << "\n";
      out.failed = true;
      out.error = e.what();
    }
    return out;
  }

  ExperimentConfig cfg_;
  detail::Socket listener_;
  std::vector<detail::Socket> conns_;
  std::uint16_t port_ = 0;
};

// One federated client over TCP: connects, announces its id, then answers
// round requests until every seed's rounds are done.
inline void tcp_client(const ExperimentConfig& cfg, const std::string& host, std::uint16_t port,
                       std::size_t client_id) {
  detail::Socket conn = detail::connect_to(host, port);
  ClientMsg hello;
  hello.client_id = static_cast<std::uint32_t>(client_id);
  conn.send_all(frame(encode_msg(hello)));

  for (const std::uint64_t seed : cfg.seeds) {
    FederatedRun run(cfg, seed);
    if (client_id >= run.client_count())
      throw std::runtime_error("tcp client: client id out of range");
    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
      WireMsg wm = decode_msg(conn.recv_frame());
      if (wm.kind != 0) throw std::runtime_error("tcp client: expected a global message");
      ClientMsg reply = run.client_round(client_id, wm.global);
      conn.send_all(frame(encode_msg(reply, wm.round)));
    }
  }
}

}  // namespace fedlap
