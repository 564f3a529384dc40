// Newline-delimited JSON predictor service over TCP.
//
// request : {"id": <any>, "features": [x0, x1, ...]}
// response: {"id": <same>, "disclosure": "top-r", "num_classes": K,
//            "topk": [[class, prob], ...]}
// error   : {"id": <same or null>, "error": "message"}
//
// Each response depends on its request only; a malformed request gets an
// error line and the connection stays open.
#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "dine/blackbox.hpp"

namespace dine {

namespace wire {

inline nlohmann::json encode_output(const nlohmann::json& id, const DisclosedOutput& out) {
  nlohmann::json topk = nlohmann::json::array();
  for (const auto& e : out.entries) topk.push_back({e.label, quantize(e.prob)});
  return {{"id", id}, {"disclosure", to_string(out.mode)}, {"num_classes", out.num_classes}, {"topk", topk}};
}

inline DisclosedOutput decode_output(const nlohmann::json& j) {
  if (j.contains("error")) throw RequestError("predictor service: " + j.at("error").get<std::string>());
  DisclosedOutput out;
  out.mode = parse_disclosure_mode(j.at("disclosure").get<std::string>());
  out.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& pair : j.at("topk")) out.entries.push_back({pair.at(0).get<std::size_t>(), pair.at(1).get<double>()});
  if (out.entries.empty()) throw FormatError("predictor service: empty topk");
  return out;
}

inline nlohmann::json encode_request(std::size_t id, std::span<const double> features) {
  return {{"id", id}, {"features", std::vector<double>(features.begin(), features.end())}};
}

}  // namespace wire

/// Request-line handler shared by the server loop and tests.
inline std::string handle_request_line(const Predictor& predictor, const std::string& line) {
  nlohmann::json id = nullptr;
  try {
    const auto req = nlohmann::json::parse(line);
    if (!req.is_object()) throw RequestError("request must be a JSON object");
    if (req.contains("id")) id = req.at("id");
    const auto& feats = req.at("features");
    if (!feats.is_array()) throw RequestError("features must be an array");
    std::vector<double> x;
    for (const auto& v : feats) {
      if (!v.is_number()) throw RequestError("features must be numbers");
      x.push_back(v.get<double>());
    }
    if (x.size() != predictor.input_dim())
      throw DimensionError("expected " + std::to_string(predictor.input_dim()) + " features, got " +
                           std::to_string(x.size()));
    return wire::encode_output(id, predictor.predict(0, x)).dump();
  } catch (const std::exception& e) {
    return nlohmann::json{{"id", id}, {"error", e.what()}}.dump();
  }
}

namespace net_detail {

inline void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

/// Buffered line reader over a socket.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  /// False on orderly EOF before a complete line.
  bool read_line(std::string& line) {
    for (;;) {
      const auto pos = buf_.find('\n');
      if (pos != std::string::npos) {
        line.assign(buf_, 0, pos);
        buf_.erase(0, pos + 1);
        return true;
      }
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n == 0) return false;
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("recv: ") + std::strerror(errno));
      }
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buf_;
};

}  // namespace net_detail

/// Serves one predictor on host:port. Port 0 picks a free port.
class PredictorServer {
 public:
  PredictorServer(PredictorHandle predictor, std::string host, std::uint16_t port)
      : predictor_(std::move(predictor)), host_(std::move(host)), port_(port) {}
  PredictorServer(const PredictorServer&) = delete;
  PredictorServer& operator=(const PredictorServer&) = delete;
  ~PredictorServer() { stop(); }

  /// Binds and starts accepting. Throws TransportError if the address is taken.
  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("socket failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
      close_listener();
      throw TransportError("invalid listen address " + host_);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 64) < 0) {
      const std::string err = std::strerror(errno);
      close_listener();
      throw TransportError("cannot listen on " + host_ + ":" + std::to_string(port_) + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  std::uint16_t port() const { return port_; }
  const std::string& host() const { return host_; }

  /// Blocks the calling thread until stop() is called from elsewhere.
  void wait() {
    if (acceptor_.joinable()) acceptor_.join();
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (acceptor_.joinable()) acceptor_.join();
    close_listener();
    std::list<Connection> conns;
    {
      std::lock_guard lock(conn_mutex_);
      for (auto& c : connections_)
        if (c.fd >= 0) ::shutdown(c.fd, SHUT_RDWR);
      conns.splice(conns.end(), connections_);
    }
    for (auto& c : conns)
      if (c.worker.joinable()) c.worker.join();
  }

 private:
  struct Connection {
    int fd;
    std::thread worker;
    bool done = false;
  };

  void close_listener() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
  }

  void accept_loop() {
    while (running_) {
      reap_finished();
      pollfd pfd{listen_fd_, POLLIN, 0};
      if (::poll(&pfd, 1, 100) <= 0) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(conn_mutex_);
      auto& c = connections_.emplace_back(Connection{fd, {}});
      c.worker = std::thread([this, conn = &c] { serve(*conn); });
    }
  }

  void reap_finished() {
    std::list<Connection> finished;
    {
      std::lock_guard lock(conn_mutex_);
      for (auto it = connections_.begin(); it != connections_.end();) {
        auto next = std::next(it);
        if (it->done) finished.splice(finished.end(), connections_, it);
        it = next;
      }
    }
    for (auto& c : finished) c.worker.join();
  }

  void serve(Connection& conn) {
    const int fd = conn.fd;
    try {
      net_detail::LineReader reader(fd);
      std::string line;
      while (running_ && reader.read_line(line)) {
        if (line.empty()) continue;
        net_detail::write_all(fd, handle_request_line(*predictor_, line) + "\n");
      }
    } catch (const TransportError&) {
      // Peer went away.
    }
    std::lock_guard lock(conn_mutex_);
    ::close(fd);
    conn.fd = -1;
    conn.done = true;
  }

  PredictorHandle predictor_;
  std::string host_;
  std::uint16_t port_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex conn_mutex_;
  std::list<Connection> connections_;
};

/// Client side of the service. One persistent connection, serialized by a mutex.
class RemotePredictor final : public Predictor {
 public:
  /// Connects and probes the service once to learn K and the disclosure mode.
  RemotePredictor(std::string host, std::uint16_t port, std::size_t input_dim)
      : host_(std::move(host)), port_(port), input_dim_(input_dim) {
    if (port_ == 0) throw ContractError("cannot connect to port 0");
    connect();
    const std::vector<double> zeros(input_dim_, 0.0);
    const auto probe = query({&zeros, 1}, 0).front();
    num_classes_ = probe.num_classes;
    disclosure_ = {probe.mode, probe.mode == DisclosureMode::kFull ? num_classes_ : probe.entries.size()};
  }
  ~RemotePredictor() override {
    if (fd_ >= 0) ::close(fd_);
  }

  /// Parses "host:port". Port 0 is accepted here (a server may bind it) but
  /// cannot be connected to.
  static std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
    const auto colon = endpoint.rfind(':');
    if (colon == std::string::npos || colon == 0)
      throw ContractError("endpoint must be host:port, got '" + endpoint + "'");
    unsigned port = 0;
    const char* first = endpoint.data() + colon + 1;
    const char* last = endpoint.data() + endpoint.size();
    const auto [ptr, ec] = std::from_chars(first, last, port);
    if (ec != std::errc{} || ptr != last || first == last || port > 65535)
      throw ContractError("bad port in endpoint '" + endpoint + "'");
    return {endpoint.substr(0, colon), static_cast<std::uint16_t>(port)};
  }

  std::size_t num_classes() const override { return num_classes_; }
  std::size_t input_dim() const override { return input_dim_; }
  Disclosure disclosure() const override { return disclosure_; }

  std::vector<DisclosedOutput> predict_batch(std::span<const std::size_t> ids, const Tensor& x) const override {
    if (x.rank() != 2 || x.cols() != input_dim_) throw DimensionError("feature width does not match predictor");
    if (ids.size() != x.rows()) throw DimensionError("id count does not match feature rows");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < x.rows(); ++i) rows.emplace_back(x.row(i).begin(), x.row(i).end());
    return query(rows, 0);
  }

 private:
  void connect() {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host_.c_str(), std::to_string(port_).c_str(), &hints, &res) != 0 || !res)
      throw TransportError("cannot resolve " + host_);
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc < 0) {
      if (fd_ >= 0) ::close(fd_);
      fd_ = -1;
      throw TransportError("cannot connect to " + host_ + ":" + std::to_string(port_));
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    reader_ = std::make_unique<net_detail::LineReader>(fd_);
  }

  // Requests are pipelined in chunks so neither side's socket buffer fills.
  std::vector<DisclosedOutput> query(std::span<const std::vector<double>> rows, std::size_t first_id) const {
    constexpr std::size_t kChunk = 128;
    std::lock_guard lock(mutex_);
    std::vector<DisclosedOutput> out;
    out.reserve(rows.size());
    for (std::size_t start = 0; start < rows.size(); start += kChunk) {
      const std::size_t end = std::min(rows.size(), start + kChunk);
      std::string batch;
      for (std::size_t i = start; i < end; ++i) batch += wire::encode_request(first_id + i, rows[i]).dump() + "\n";
      net_detail::write_all(fd_, batch);
      std::string line;
      for (std::size_t i = start; i < end; ++i) {
        if (!reader_->read_line(line)) throw TransportError("predictor service closed the connection");
        const auto j = nlohmann::json::parse(line);
        if (j.at("id") != nlohmann::json(first_id + i)) throw TransportError("predictor service: response id mismatch");
        out.push_back(wire::decode_output(j));
      }
    }
    return out;
  }

  std::string host_;
  std::uint16_t port_;
  std::size_t input_dim_;
  std::size_t num_classes_ = 0;
  Disclosure disclosure_;
  int fd_ = -1;
  std::unique_ptr<net_detail::LineReader> reader_;
  mutable std::mutex mutex_;
};

}  // namespace dine
