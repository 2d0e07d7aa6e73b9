#include "fogcycle/tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace fogcycle::tcp {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8)
    out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::uint16_t get_u16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>((static_cast<unsigned char>(b[at]) << 8) |
                                    static_cast<unsigned char>(b[at + 1]));
}

std::uint64_t get_u64(std::string_view b, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i)
    v = (v << 8) | static_cast<unsigned char>(b[at + i]);
  return v;
}

bool send_all(int fd, std::string_view data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

int connect_to(const std::string& host, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    return -1;
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    return -1;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

}  // namespace

std::string wrap_delivery(const broker::Delivery& d) {
  std::string out;
  out.reserve(2 + d.producer.size() + 8 + d.payload.size());
  put_u16(out, static_cast<std::uint16_t>(d.producer.size()));
  out += d.producer;
  put_u64(out, d.cursor);
  out += d.payload;
  return out;
}

std::optional<broker::Delivery> unwrap_delivery(const broker::Envelope& e) {
  const std::string_view p = e.payload;
  if (p.size() < 10) return std::nullopt;
  const std::uint16_t producer_len = get_u16(p, 0);
  if (2ull + producer_len + 8ull > p.size()) return std::nullopt;
  broker::Delivery d;
  d.producer = std::string(p.substr(2, producer_len));
  d.cursor = get_u64(p, 2 + producer_len);
  d.topic = e.topic;
  d.seq = e.seq;
  d.payload = std::string(p.substr(2 + producer_len + 8));
  return d;
}

// ---- server ----

struct TcpBrokerServer::Session {
  int fd = -1;
  std::string name;
  std::atomic<bool> open{true};
  std::mutex write_mu;
  std::thread reader;
  std::thread pusher;
};

TcpBrokerServer::TcpBrokerServer(broker::Broker& core, const std::string& host,
                                 std::uint16_t port)
    : core_(core) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw std::runtime_error("bad listen address: " + host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw std::runtime_error("bind failed on " + host + ":" + std::to_string(port));
  if (::listen(listen_fd_, 64) != 0) throw std::runtime_error("listen failed");
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpBrokerServer::~TcpBrokerServer() { stop(); }

void TcpBrokerServer::start() {
  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void TcpBrokerServer::stop() {
  if (!running_.exchange(false)) {
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
    return;
  }
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::shared_ptr<Session>> sessions;
  {
    std::lock_guard lock(mu_);
    sessions = sessions_;
  }
  for (auto& s : sessions) {
    if (s->fd >= 0) ::shutdown(s->fd, SHUT_RDWR);
  }
  for (auto& s : sessions) {
    if (s->reader.joinable()) s->reader.join();
    if (s->pusher.joinable()) s->pusher.join();
  }
  {
    std::lock_guard lock(mu_);
    sessions_.clear();
  }
}

void TcpBrokerServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;  // listen socket closed
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto session = std::make_shared<Session>();
    session->fd = fd;
    {
      // Register and launch under the lock so stop() never sees a session
      // whose reader thread is still being assigned.
      std::lock_guard lock(mu_);
      sessions_.push_back(session);
      session->reader = std::thread([this, session] { reader_loop(session); });
    }
  }
}

void TcpBrokerServer::close_session(const std::shared_ptr<Session>& session) {
  if (!session->open.exchange(false)) return;
  ::shutdown(session->fd, SHUT_RDWR);
  if (!session->name.empty()) core_.detach(session->name);
}

void TcpBrokerServer::reader_loop(std::shared_ptr<Session> session) {
  std::string rx;
  char buf[16384];
  while (session->open) {
    const ssize_t n = ::recv(session->fd, buf, sizeof(buf), 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      break;
    }
    rx.append(buf, static_cast<std::size_t>(n));
    for (;;) {
      const auto frame = broker::decode_frame(rx);
      if (frame.status == broker::DecodeStatus::NeedMore) break;
      if (frame.status != broker::DecodeStatus::Ok) {
        session->open = false;  // corrupt stream
        break;
      }
      rx.erase(0, frame.consumed);
      const auto& e = frame.envelope;
      if (e.topic == "$hello") {
        session->name = e.payload;
        session->pusher = std::thread([this, session] { pusher_loop(session); });
      } else if (e.topic == "$sub") {
        if (!session->name.empty()) core_.subscribe(session->name, e.payload);
      } else if (e.topic == "$dack") {
        const auto nl = e.payload.find('\n');
        if (nl != std::string::npos) {
          const std::string topic = e.payload.substr(0, nl);
          const std::uint64_t cursor = std::strtoull(e.payload.c_str() + nl + 1, nullptr, 10);
          core_.ack(session->name, topic, cursor);
        }
      } else if (!e.topic.empty() && e.topic.front() != '$') {
        const auto result =
            core_.publish_blocking(session->name, e.topic, e.payload, e.seq);
        if (std::holds_alternative<broker::Ack>(result)) {
          broker::Envelope ack;
          ack.topic = "$ack";
          ack.seq = std::get<broker::Ack>(result).seq;
          ack.payload = e.topic;
          std::lock_guard wl(session->write_mu);
          if (!send_all(session->fd, broker::encode_frame(ack))) session->open = false;
        }
      }
    }
  }
  close_session(session);
  if (session->pusher.joinable()) session->pusher.join();
}

void TcpBrokerServer::pusher_loop(std::shared_ptr<Session> session) {
  const std::string name = session->name;
  while (session->open) {
    if (!core_.wait_for_records(name, std::chrono::milliseconds(50))) continue;
    if (!session->open) break;
    const auto batch = core_.fetch(name, 64);
    if (batch.empty()) continue;
    bool ok = true;
    for (const auto& d : batch) {
      broker::Envelope e{d.topic, d.seq, wrap_delivery(d)};
      std::lock_guard wl(session->write_mu);
      if (!send_all(session->fd, broker::encode_frame(e))) {
        ok = false;
        break;
      }
    }
    if (!ok || !session->open) {
      // Whatever was fetched but not delivered must go out again later.
      core_.detach(name);
      break;
    }
  }
  if (session->open) return;
  core_.detach(name);
}

bool TcpBrokerServer::kill_connection(const std::string& client_name) {
  std::shared_ptr<Session> target;
  {
    std::lock_guard lock(mu_);
    for (auto& s : sessions_) {
      if (s->open && s->name == client_name) {
        target = s;
        break;
      }
    }
  }
  if (!target) return false;
  close_session(target);
  return true;
}

std::size_t TcpBrokerServer::connections() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& s : sessions_)
    if (s->open) ++n;
  return n;
}

// ---- client ----

TcpBrokerClient::TcpBrokerClient(std::string name, std::string host, std::uint16_t port,
                                 TcpClientOptions opts)
    : name_(std::move(name)), host_(std::move(host)), port_(port), opts_(opts) {}

TcpBrokerClient::~TcpBrokerClient() { close(); }

void TcpBrokerClient::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

bool TcpBrokerClient::ensure_connected() {
  if (fd_ >= 0) return true;
  auto backoff = opts_.backoff_initial;
  for (int attempt = 0; attempt < opts_.max_reconnect_attempts; ++attempt) {
    fd_ = connect_to(host_, port_);
    if (fd_ >= 0) {
      rx_.clear();
      if (!send_frame(broker::Envelope{"$hello", 0, name_})) {
        close();
        continue;
      }
      bool subs_ok = true;
      for (const auto& pattern : subscriptions_) {
        if (!send_frame(broker::Envelope{"$sub", 0, pattern})) {
          subs_ok = false;
          break;
        }
      }
      if (!subs_ok) {
        close();
        continue;
      }
      return true;
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::min(backoff * 2, opts_.backoff_cap);
  }
  return false;
}

void TcpBrokerClient::reconnect() {
  close();
  if (!ensure_connected()) throw std::runtime_error("broker unreachable: " + host_);
}

bool TcpBrokerClient::send_frame(const broker::Envelope& e) {
  if (fd_ < 0) return false;
  return send_all(fd_, broker::encode_frame(e));
}

bool TcpBrokerClient::read_dispatch(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto frame = broker::decode_frame(rx_);
    if (frame.status == broker::DecodeStatus::Ok) {
      rx_.erase(0, frame.consumed);
      const auto& e = frame.envelope;
      if (e.topic == "$ack") {
        if (awaited_ack_ && awaited_ack_->first == e.payload &&
            awaited_ack_->second == e.seq) {
          awaited_ack_.reset();
          unacked_publish_.reset();
        }
      } else if (auto d = unwrap_delivery(e)) {
        inbox_.push_back(std::move(*d));
      }
      return true;
    }
    if (frame.status != broker::DecodeStatus::NeedMore) {
      reconnect();
      return false;
    }
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) return false;
    const auto wait =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
    pollfd pfd{fd_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, static_cast<int>(std::max<std::int64_t>(1, wait.count())));
    if (pr < 0) {
      if (errno == EINTR) continue;
      reconnect();
      return false;
    }
    if (pr == 0) return false;  // timeout
    char buf[16384];
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      reconnect();
      return false;
    }
    rx_.append(buf, static_cast<std::size_t>(n));
  }
}

broker::Ack TcpBrokerClient::publish(const std::string& topic, std::string payload) {
  const std::uint64_t seq = ++pub_seq_[topic];
  broker::Envelope e{topic, seq, std::move(payload)};
  unacked_publish_ = e;
  awaited_ack_ = std::make_pair(topic, seq);
  for (int attempt = 0; attempt < opts_.max_reconnect_attempts; ++attempt) {
    if (!ensure_connected()) break;
    if (!send_frame(*unacked_publish_)) {
      reconnect();
      continue;
    }
    // Drain until our ack shows up; deliveries pile into the inbox.
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    while (awaited_ack_) {
      if (std::chrono::steady_clock::now() >= deadline) break;
      read_dispatch(std::chrono::milliseconds(200));
      if (fd_ < 0) break;
    }
    if (!awaited_ack_) return broker::Ack{seq};
    reconnect();
  }
  throw std::runtime_error("publish failed after retries: " + topic);
}

void TcpBrokerClient::subscribe(const std::string& pattern) {
  subscriptions_.push_back(pattern);
  if (!ensure_connected()) throw std::runtime_error("broker unreachable: " + host_);
  if (!send_frame(broker::Envelope{"$sub", 0, pattern})) reconnect();
}

std::optional<broker::Delivery> TcpBrokerClient::poll(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    while (!inbox_.empty()) {
      broker::Delivery d = std::move(inbox_.front());
      inbox_.erase(inbox_.begin());
      // Cumulative ack, then dedup by (producer, topic, seq).
      if (!send_frame(broker::Envelope{"$dack", 0,
                                       d.topic + "\n" + std::to_string(d.cursor)})) {
        reconnect();
      }
      auto& last = last_seq_[{d.producer, d.topic}];
      if (last != 0 && d.seq <= last) continue;
      last = d.seq;
      return d;
    }
    if (!ensure_connected()) return std::nullopt;
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) return std::nullopt;
    read_dispatch(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now));
  }
}

}  // namespace fogcycle::tcp
