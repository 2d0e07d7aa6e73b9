#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fogcycle/model.hpp"

namespace fogcycle::broker {

inline constexpr std::size_t kMaxTopicBytes = 65535;
inline constexpr std::size_t kDefaultMaxFrameBytes = 16 * 1024 * 1024;

// The unit of transport. seq is strictly increasing per (producer, topic);
// the producer itself is connection/delivery metadata, not part of the
// envelope.
struct Envelope {
  std::string topic;
  std::uint64_t seq = 0;
  std::string payload;

  bool operator==(const Envelope&) const = default;
};

enum class PublishStatus { Ok, TopicInvalid, WouldBlock };

struct Ack {
  std::uint64_t seq = 0;
};

// What a consumer receives. cursor is the broker-side log position used for
// cumulative acknowledgement; dedup is by (producer, topic, seq).
struct Delivery {
  std::string producer;
  std::string topic;
  std::uint64_t seq = 0;
  std::uint64_t cursor = 0;
  std::string payload;
};

// ---- framed wire protocol ---------------------------------------------------
//
// Frame layout (big-endian): 4-byte total envelope length N, then N bytes of
// [2-byte topic length][topic UTF-8][8-byte seq][payload]. Normative and
// bit-exact.

std::string encode_frame(const Envelope& e);

enum class DecodeStatus { Ok, NeedMore, FrameTooLarge, BadTopicLength };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::NeedMore;
  Envelope envelope;
  std::size_t consumed = 0;  // bytes to drop from the buffer head
};

DecodeResult decode_frame(std::string_view buffer,
                          std::size_t max_frame_bytes = kDefaultMaxFrameBytes);

// ---- aggregation --------------------------------------------------------------
//
// Batches share the topic of their members and are marked by a 4-byte payload
// magic; payloads published on aggregated topics must not begin with it.
// A single message whose wrapped size would exceed max_bytes passes through
// byte-unchanged.

inline constexpr std::string_view kBatchMagic = "AGB1";

// nullopt on mixed topics.
std::optional<std::vector<Envelope>> aggregate(const std::vector<Envelope>& messages,
                                               std::size_t max_bytes);
std::vector<Envelope> decompose(const Envelope& e);
bool is_batch(const Envelope& e);

// ---- topic patterns -----------------------------------------------------------

// pattern is an exact topic or a prefix wildcard "prefix/*".
bool topic_matches(std::string_view pattern, std::string_view topic);
bool valid_topic(std::string_view topic);

// ---- broker core ----------------------------------------------------------------
//
// Topic-based pub/sub with per-(producer, topic) FIFO, retained history with a
// TTL for late subscribers, per-consumer cumulative-ack cursors (at-least-once
// across detach/reattach), and a high-water-mark backpressure contract. Safe
// for concurrent producers and consumers; delivery to one consumer is
// sequential by construction (it pulls).

struct BrokerOptions {
  Timestamp retained_ttl_seconds = 3600;
  std::size_t high_water_mark = 1u << 20;  // pending records per consumer
};

class Broker {
 public:
  explicit Broker(BrokerOptions opts = {});

  // Non-blocking; returns WouldBlock when any matching attached consumer is
  // above the high-water mark. declared_seq == 0 lets the broker assign the
  // next per-(producer, topic) seq; republished messages keep their original.
  std::variant<Ack, PublishStatus> publish(const std::string& producer,
                                           const std::string& topic,
                                           std::string payload,
                                           std::uint64_t declared_seq = 0);

  // Blocks until capacity frees up (threaded mode).
  std::variant<Ack, PublishStatus> publish_blocking(const std::string& producer,
                                                    const std::string& topic,
                                                    std::string payload,
                                                    std::uint64_t declared_seq = 0);

  void subscribe(const std::string& consumer, const std::string& pattern);

  // Up to max_records deliveries in log order across matching topics.
  std::vector<Delivery> fetch(const std::string& consumer, std::size_t max_records);

  // Cumulative: everything on topic up to and including cursor is done.
  void ack(const std::string& consumer, const std::string& topic, std::uint64_t cursor);

  // Connection lost: rewind unacked deliveries so they go out again on the
  // next fetch. Subscriptions and acked cursors survive.
  void detach(const std::string& consumer);

  // Drives retained-history expiry; also wakes blocked publishers.
  void advance_time(Timestamp now);

  // Wakes a waiting fetch/publish (used by pollers and shutdown paths).
  void shutdown();
  bool wait_for_records(const std::string& consumer, std::chrono::milliseconds timeout);

  std::size_t pending(const std::string& consumer) const;
  std::uint64_t retained_records(const std::string& topic) const;

 private:
  struct Record {
    std::string producer;
    std::uint64_t seq = 0;
    std::string payload;
    Timestamp published_at = 0;
    std::uint64_t global = 0;  // publish order across topics
  };
  struct TopicLog {
    std::deque<Record> records;
    std::uint64_t base = 0;  // cursor of records.front()
    std::map<std::string, std::uint64_t> next_seq;  // per producer
    std::uint64_t end() const { return base + records.size(); }
  };
  struct Cursor {
    std::uint64_t next = 0;   // next record to hand out
    std::uint64_t acked = 0;  // everything below this is done
  };
  struct Consumer {
    std::vector<std::string> patterns;
    std::map<std::string, Cursor> cursors;  // by topic
  };

  bool matches_any_locked(const Consumer& c, std::string_view topic) const;
  std::size_t pending_locked(const Consumer& c) const;
  bool over_high_water_locked(const std::string& topic) const;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  BrokerOptions opts_;
  std::map<std::string, TopicLog> topics_;
  std::map<std::string, Consumer> consumers_;
  Timestamp now_ = 0;
  std::uint64_t publish_counter_ = 0;
  bool shutdown_ = false;
};

// ---- client abstraction -----------------------------------------------------------
//
// Nodes talk to the broker through this so the pipeline runs unchanged over
// the in-process core or a TCP link. poll() applies consumer-side dedup by
// (producer, topic, seq) and acknowledges what it hands out.

class Client {
 public:
  virtual ~Client() = default;
  virtual const std::string& name() const = 0;
  virtual Ack publish(const std::string& topic, std::string payload) = 0;
  virtual void subscribe(const std::string& pattern) = 0;
  virtual std::optional<Delivery> poll(std::chrono::milliseconds timeout) = 0;
};

class InProcessClient final : public Client {
 public:
  InProcessClient(Broker& broker, std::string name);

  const std::string& name() const override { return name_; }
  Ack publish(const std::string& topic, std::string payload) override;
  void subscribe(const std::string& pattern) override;
  std::optional<Delivery> poll(std::chrono::milliseconds timeout) override;

  // Acknowledge every n-th delivery instead of each one (default 1); a wider
  // window leaves deliveries unacked so disconnect tests can observe
  // redelivery plus dedup.
  void set_ack_every(std::size_t n);
  void flush_acks();

  // Test hook: simulate a connection drop (unacked deliveries repeat).
  void simulate_disconnect();

 private:
  Broker& broker_;
  std::string name_;
  std::size_t ack_every_ = 1;
  std::size_t since_ack_ = 0;
  std::map<std::string, std::uint64_t> unacked_cursor_;  // per topic, max handed out
  std::map<std::pair<std::string, std::string>, std::uint64_t> last_seq_;
  std::deque<Delivery> staged_;
};

}  // namespace fogcycle::broker
