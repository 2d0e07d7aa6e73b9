#include "fogcycle/broker.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <stdexcept>

namespace fogcycle::broker {

// ---- big-endian helpers ----

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8)
    out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8)
    out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::uint16_t get_u16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>((static_cast<unsigned char>(b[at]) << 8) |
                                    static_cast<unsigned char>(b[at + 1]));
}

std::uint32_t get_u32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i)
    v = (v << 8) | static_cast<unsigned char>(b[at + i]);
  return v;
}

std::uint64_t get_u64(std::string_view b, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i)
    v = (v << 8) | static_cast<unsigned char>(b[at + i]);
  return v;
}

}  // namespace

// ---- frame codec ----

std::string encode_frame(const Envelope& e) {
  if (e.topic.size() > kMaxTopicBytes)
    throw std::length_error("topic exceeds 65535 bytes");
  const std::uint64_t body = 2 + e.topic.size() + 8 + e.payload.size();
  if (body > 0xffffffffULL) throw std::length_error("frame exceeds u32 length");
  std::string out;
  out.reserve(4 + body);
  put_u32(out, static_cast<std::uint32_t>(body));
  put_u16(out, static_cast<std::uint16_t>(e.topic.size()));
  out += e.topic;
  put_u64(out, e.seq);
  out += e.payload;
  return out;
}

DecodeResult decode_frame(std::string_view buffer, std::size_t max_frame_bytes) {
  DecodeResult r;
  if (buffer.size() < 4) {
    r.status = DecodeStatus::NeedMore;
    return r;
  }
  const std::uint32_t body = get_u32(buffer, 0);
  if (body > max_frame_bytes) {
    r.status = DecodeStatus::FrameTooLarge;
    return r;
  }
  if (body < 10) {  // topic length + seq cannot fit
    r.status = DecodeStatus::BadTopicLength;
    return r;
  }
  if (buffer.size() < 4ull + body) {
    r.status = DecodeStatus::NeedMore;
    return r;
  }
  const std::uint16_t topic_len = get_u16(buffer, 4);
  if (2ull + topic_len + 8ull > body) {
    r.status = DecodeStatus::BadTopicLength;
    return r;
  }
  r.envelope.topic = std::string(buffer.substr(6, topic_len));
  r.envelope.seq = get_u64(buffer, 6 + topic_len);
  r.envelope.payload = std::string(buffer.substr(6 + topic_len + 8, body - 2 - topic_len - 8));
  r.consumed = 4ull + body;
  r.status = DecodeStatus::Ok;
  return r;
}

// ---- aggregation ----

namespace {

constexpr std::size_t kBatchHeader = 8;       // magic + u32 count
constexpr std::size_t kEntryOverhead = 12;    // u64 seq + u32 length

std::size_t wrapped_singleton_size(const Envelope& e) {
  return kBatchHeader + kEntryOverhead + e.payload.size();
}

Envelope make_batch(const std::string& topic, const std::vector<const Envelope*>& members) {
  Envelope out;
  out.topic = topic;
  out.seq = members.front()->seq;
  out.payload.reserve(kBatchHeader);
  out.payload += kBatchMagic;
  put_u32(out.payload, static_cast<std::uint32_t>(members.size()));
  for (const Envelope* m : members) {
    put_u64(out.payload, m->seq);
    put_u32(out.payload, static_cast<std::uint32_t>(m->payload.size()));
    out.payload += m->payload;
  }
  return out;
}

// Strict structural parse; anything inconsistent means "not a batch".
std::optional<std::vector<Envelope>> parse_batch(const Envelope& e) {
  const std::string_view p = e.payload;
  if (p.size() < kBatchHeader || p.substr(0, 4) != kBatchMagic) return std::nullopt;
  const std::uint32_t count = get_u32(p, 4);
  std::vector<Envelope> members;
  members.reserve(count);
  std::size_t at = kBatchHeader;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (at + kEntryOverhead > p.size()) return std::nullopt;
    const std::uint64_t seq = get_u64(p, at);
    const std::uint32_t len = get_u32(p, at + 8);
    at += kEntryOverhead;
    if (at + len > p.size()) return std::nullopt;
    members.push_back(Envelope{e.topic, seq, std::string(p.substr(at, len))});
    at += len;
  }
  if (at != p.size()) return std::nullopt;
  return members;
}

}  // namespace

std::optional<std::vector<Envelope>> aggregate(const std::vector<Envelope>& messages,
                                               std::size_t max_bytes) {
  std::vector<Envelope> out;
  if (messages.empty()) return out;
  const std::string& topic = messages.front().topic;
  for (const auto& m : messages)
    if (m.topic != topic) return std::nullopt;  // MixedTopics

  std::vector<const Envelope*> batch;
  std::size_t batch_size = kBatchHeader;
  auto flush = [&] {
    if (!batch.empty()) {
      out.push_back(make_batch(topic, batch));
      batch.clear();
      batch_size = kBatchHeader;
    }
  };
  for (const auto& m : messages) {
    if (wrapped_singleton_size(m) > max_bytes) {
      // Alone it exceeds the cap: pass through unwrapped, order preserved.
      flush();
      out.push_back(m);
      continue;
    }
    const std::size_t added = kEntryOverhead + m.payload.size();
    if (batch_size + added > max_bytes) flush();
    batch.push_back(&m);
    batch_size += added;
  }
  flush();
  return out;
}

std::vector<Envelope> decompose(const Envelope& e) {
  if (auto members = parse_batch(e)) return std::move(*members);
  return {e};
}

bool is_batch(const Envelope& e) { return parse_batch(e).has_value(); }

// ---- topic patterns ----

bool valid_topic(std::string_view topic) {
  return !topic.empty() && topic.size() <= kMaxTopicBytes && topic.front() != '$';
}

bool topic_matches(std::string_view pattern, std::string_view topic) {
  if (pattern.size() >= 2 && pattern.substr(pattern.size() - 2) == "/*") {
    const std::string_view prefix = pattern.substr(0, pattern.size() - 1);  // keep '/'
    return topic.size() > prefix.size() && topic.substr(0, prefix.size()) == prefix;
  }
  return pattern == topic;
}

// ---- broker core ----

Broker::Broker(BrokerOptions opts) : opts_(opts) {}

bool Broker::matches_any_locked(const Consumer& c, std::string_view topic) const {
  for (const auto& p : c.patterns)
    if (topic_matches(p, topic)) return true;
  return false;
}

std::size_t Broker::pending_locked(const Consumer& c) const {
  std::size_t n = 0;
  for (const auto& [topic, log] : topics_) {
    if (!matches_any_locked(c, topic)) continue;
    const auto it = c.cursors.find(topic);
    const std::uint64_t acked = it == c.cursors.end() ? log.base : std::max(it->second.acked, log.base);
    n += log.end() - std::min(log.end(), acked);
  }
  return n;
}

bool Broker::over_high_water_locked(const std::string& topic) const {
  for (const auto& [name, c] : consumers_) {
    if (!matches_any_locked(c, topic)) continue;
    if (pending_locked(c) >= opts_.high_water_mark) return true;
  }
  return false;
}

std::variant<Ack, PublishStatus> Broker::publish(const std::string& producer,
                                                 const std::string& topic,
                                                 std::string payload,
                                                 std::uint64_t declared_seq) {
  if (!valid_topic(topic)) return PublishStatus::TopicInvalid;
  std::lock_guard lock(mu_);
  if (over_high_water_locked(topic)) return PublishStatus::WouldBlock;
  auto& log = topics_[topic];
  std::uint64_t& next = log.next_seq[producer];
  const std::uint64_t seq = declared_seq == 0 ? next + 1 : declared_seq;
  next = std::max(next, seq);
  log.records.push_back(Record{producer, seq, std::move(payload), now_, ++publish_counter_});
  cv_.notify_all();
  return Ack{seq};
}

std::variant<Ack, PublishStatus> Broker::publish_blocking(const std::string& producer,
                                                          const std::string& topic,
                                                          std::string payload,
                                                          std::uint64_t declared_seq) {
  if (!valid_topic(topic)) return PublishStatus::TopicInvalid;
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return shutdown_ || !over_high_water_locked(topic); });
  if (shutdown_) return PublishStatus::WouldBlock;
  auto& log = topics_[topic];
  std::uint64_t& next = log.next_seq[producer];
  const std::uint64_t seq = declared_seq == 0 ? next + 1 : declared_seq;
  next = std::max(next, seq);
  log.records.push_back(Record{producer, seq, std::move(payload), now_, ++publish_counter_});
  cv_.notify_all();
  return Ack{seq};
}

void Broker::subscribe(const std::string& consumer, const std::string& pattern) {
  std::lock_guard lock(mu_);
  auto& c = consumers_[consumer];
  if (std::find(c.patterns.begin(), c.patterns.end(), pattern) == c.patterns.end())
    c.patterns.push_back(pattern);
  cv_.notify_all();
}

std::vector<Delivery> Broker::fetch(const std::string& consumer, std::size_t max_records) {
  std::lock_guard lock(mu_);
  std::vector<Delivery> out;
  const auto cit = consumers_.find(consumer);
  if (cit == consumers_.end()) return out;
  auto& c = cit->second;

  // Candidate topics and their live cursors.
  std::vector<std::pair<const std::string*, TopicLog*>> live;
  for (auto& [topic, log] : topics_) {
    if (!matches_any_locked(c, topic)) continue;
    auto& cur = c.cursors[topic];
    cur.next = std::max(cur.next, log.base);
    cur.acked = std::max(cur.acked, log.base);
    live.emplace_back(&topic, &log);
  }
  // Merge across topics in global publish order; FIFO per topic falls out.
  while (out.size() < max_records) {
    const std::string* pick_topic = nullptr;
    TopicLog* pick_log = nullptr;
    std::uint64_t best_global = 0;
    for (auto& [topic, log] : live) {
      const Cursor& cur = c.cursors[*topic];
      if (cur.next >= log->end()) continue;
      const Record& r = log->records[cur.next - log->base];
      if (!pick_topic || r.global < best_global) {
        pick_topic = topic;
        pick_log = log;
        best_global = r.global;
      }
    }
    if (!pick_topic) break;
    Cursor& cur = c.cursors[*pick_topic];
    const Record& r = pick_log->records[cur.next - pick_log->base];
    out.push_back(Delivery{r.producer, *pick_topic, r.seq, cur.next, r.payload});
    ++cur.next;
  }
  return out;
}

void Broker::ack(const std::string& consumer, const std::string& topic, std::uint64_t cursor) {
  std::lock_guard lock(mu_);
  const auto cit = consumers_.find(consumer);
  if (cit == consumers_.end()) return;
  auto& cur = cit->second.cursors[topic];
  cur.acked = std::max(cur.acked, cursor + 1);
  cur.next = std::max(cur.next, cur.acked);
  cv_.notify_all();
}

void Broker::detach(const std::string& consumer) {
  std::lock_guard lock(mu_);
  const auto cit = consumers_.find(consumer);
  if (cit == consumers_.end()) return;
  for (auto& [topic, cur] : cit->second.cursors) cur.next = cur.acked;
  cv_.notify_all();
}

void Broker::advance_time(Timestamp now) {
  std::lock_guard lock(mu_);
  now_ = std::max(now_, now);
  for (auto& [topic, log] : topics_) {
    while (!log.records.empty() &&
           log.records.front().published_at + opts_.retained_ttl_seconds <= now_) {
      log.records.pop_front();
      ++log.base;
    }
  }
  cv_.notify_all();
}

void Broker::shutdown() {
  std::lock_guard lock(mu_);
  shutdown_ = true;
  cv_.notify_all();
}

bool Broker::wait_for_records(const std::string& consumer, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  const auto has_records = [&] {
    if (shutdown_) return true;
    const auto cit = consumers_.find(consumer);
    if (cit == consumers_.end()) return false;
    for (const auto& [topic, log] : topics_) {
      if (!matches_any_locked(cit->second, topic)) continue;
      const auto it = cit->second.cursors.find(topic);
      const std::uint64_t next = it == cit->second.cursors.end()
                                     ? log.base
                                     : std::max(it->second.next, log.base);
      if (next < log.end()) return true;
    }
    return false;
  };
  if (timeout.count() <= 0) return has_records();
  return cv_.wait_for(lock, timeout, has_records) && !shutdown_;
}

std::size_t Broker::pending(const std::string& consumer) const {
  std::lock_guard lock(mu_);
  const auto cit = consumers_.find(consumer);
  if (cit == consumers_.end()) return 0;
  return pending_locked(cit->second);
}

std::uint64_t Broker::retained_records(const std::string& topic) const {
  std::lock_guard lock(mu_);
  const auto it = topics_.find(topic);
  return it == topics_.end() ? 0 : it->second.records.size();
}

// ---- in-process client ----

InProcessClient::InProcessClient(Broker& broker, std::string name)
    : broker_(broker), name_(std::move(name)) {}

Ack InProcessClient::publish(const std::string& topic, std::string payload) {
  auto result = broker_.publish(name_, topic, std::move(payload));
  if (auto* status = std::get_if<PublishStatus>(&result)) {
    throw std::runtime_error("publish to '" + topic + "' failed: " +
                             (*status == PublishStatus::TopicInvalid ? "invalid topic"
                                                                     : "would block"));
  }
  return std::get<Ack>(result);
}

void InProcessClient::subscribe(const std::string& pattern) {
  broker_.subscribe(name_, pattern);
}

std::optional<Delivery> InProcessClient::poll(std::chrono::milliseconds timeout) {
  for (;;) {
    if (staged_.empty()) {
      auto batch = broker_.fetch(name_, 64);
      if (batch.empty()) {
        if (timeout.count() <= 0) return std::nullopt;
        if (!broker_.wait_for_records(name_, timeout)) return std::nullopt;
        batch = broker_.fetch(name_, 64);
        if (batch.empty()) return std::nullopt;
      }
      for (auto& d : batch) staged_.push_back(std::move(d));
    }
    Delivery d = std::move(staged_.front());
    staged_.pop_front();
    auto& pending = unacked_cursor_[d.topic];
    pending = std::max(pending, d.cursor);
    if (++since_ack_ >= ack_every_) flush_acks();
    auto& last = last_seq_[{d.producer, d.topic}];
    if (last != 0 && d.seq <= last) continue;  // redelivered duplicate
    last = d.seq;
    return d;
  }
}

void InProcessClient::set_ack_every(std::size_t n) { ack_every_ = n == 0 ? 1 : n; }

void InProcessClient::flush_acks() {
  for (const auto& [topic, cursor] : unacked_cursor_)
    broker_.ack(name_, topic, cursor);
  unacked_cursor_.clear();
  since_ack_ = 0;
}

void InProcessClient::simulate_disconnect() {
  staged_.clear();
  unacked_cursor_.clear();
  since_ack_ = 0;
  broker_.detach(name_);
}

}  // namespace fogcycle::broker
