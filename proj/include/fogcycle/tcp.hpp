#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fogcycle/broker.hpp"

namespace fogcycle::tcp {

// Distributed mode. Every message on the wire is one frame (broker.hpp's
// normative layout). Reserved topics carry the session protocol:
//
//   client -> broker   "$hello"  payload = client name (first frame)
//                      "$sub"    payload = topic pattern
//                      "$dack"   payload = "<topic>\n<cursor>" cumulative ack
//                      any other topic: publish; seq is the producer's own
//                      per-topic counter (redelivery keeps the original seq)
//   broker -> client   "$ack"    payload = "<topic>\n<seq>"
//                      deliveries: the real topic; payload is wrapped as
//                      [2B producer length][producer][8B cursor][payload]
//
// At-least-once: publishers retransmit unacknowledged frames after a
// reconnect; the broker keeps per-consumer cursors and resends everything
// past the last cumulative ack; consumers dedup by (producer, topic, seq).

std::string wrap_delivery(const broker::Delivery& d);
std::optional<broker::Delivery> unwrap_delivery(const broker::Envelope& e);

class TcpBrokerServer {
 public:
  // Binds immediately; port 0 picks an ephemeral port (see port()).
  TcpBrokerServer(broker::Broker& core, const std::string& host, std::uint16_t port);
  ~TcpBrokerServer();

  void start();
  void stop();
  std::uint16_t port() const { return port_; }

  // Test hook: hard-drop a named client's connection.
  bool kill_connection(const std::string& client_name);
  std::size_t connections() const;

 private:
  struct Session;
  void accept_loop();
  void reader_loop(std::shared_ptr<Session> session);
  void pusher_loop(std::shared_ptr<Session> session);
  void close_session(const std::shared_ptr<Session>& session);

  broker::Broker& core_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Session>> sessions_;
};

struct TcpClientOptions {
  std::chrono::milliseconds backoff_initial{20};
  std::chrono::milliseconds backoff_cap{30000};  // capped exponential backoff
  int max_reconnect_attempts = 200;
};

// Blocking client used by the pipeline nodes in distributed mode. publish()
// waits for the broker ack and survives connection loss by reconnecting,
// re-subscribing and retransmitting the unacknowledged frame.
class TcpBrokerClient final : public broker::Client {
 public:
  TcpBrokerClient(std::string name, std::string host, std::uint16_t port,
                  TcpClientOptions opts = {});
  ~TcpBrokerClient() override;

  const std::string& name() const override { return name_; }
  broker::Ack publish(const std::string& topic, std::string payload) override;
  void subscribe(const std::string& pattern) override;
  std::optional<broker::Delivery> poll(std::chrono::milliseconds timeout) override;
  void close();

 private:
  bool ensure_connected();
  void reconnect();
  bool send_frame(const broker::Envelope& e);
  // Reads one frame within the deadline; dispatches acks vs deliveries.
  bool read_dispatch(std::chrono::milliseconds timeout);

  std::string name_;
  std::string host_;
  std::uint16_t port_;
  TcpClientOptions opts_;
  int fd_ = -1;
  std::string rx_;
  std::vector<std::string> subscriptions_;
  std::map<std::string, std::uint64_t> pub_seq_;          // per topic
  std::map<std::pair<std::string, std::string>, std::uint64_t> last_seq_;
  std::vector<broker::Delivery> inbox_;
  std::optional<std::pair<std::string, std::uint64_t>> awaited_ack_;
  std::optional<broker::Envelope> unacked_publish_;
};

}  // namespace fogcycle::tcp
