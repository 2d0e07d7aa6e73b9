#include "fogcycle/edge.hpp"

namespace fogcycle::edge {

EdgeNode::EdgeNode(EdgeConfig cfg, std::vector<std::string> records)
    : cfg_(std::move(cfg)), records_(std::move(records)) {
  if (cfg_.package_period_seconds == 0) cfg_.package_period_seconds = 1;
}

std::optional<Timestamp> EdgeNode::record_timestamp(const std::string& line) const {
  const auto fields = split_csv_line(line);
  if (!fields || fields->size() != kFieldCount) return std::nullopt;
  return parse_timestamp((*fields)[kTimestamp]);
}

void EdgeNode::publish_package(broker::Client& bus, std::vector<std::string> records) {
  StreamPackage pkg;
  pkg.edge_id = cfg_.edge_id;
  pkg.window_start = window_start_;
  pkg.window_end = window_end_;
  pkg.seq = ++seq_;
  pkg.records = std::move(records);
  records_published_ += pkg.records.size();
  ++packages_published_;
  bus.publish(std::string(kPackagesPrefix) + cfg_.edge_id, encode_package(pkg));
}

void EdgeNode::publish_eos(broker::Client& bus) {
  bus.publish(std::string(kControlPrefix) + cfg_.edge_id,
              encode_edge_eos(cfg_.edge_id, packages_published_, records_published_));
  finished_ = true;
}

bool EdgeNode::step(broker::Client& bus) {
  if (finished_) return false;
  const Timestamp period = cfg_.package_period_seconds;

  if (!window_open_) {
    // Records ahead of the first parseable timestamp cannot be placed yet;
    // they join the first window once the clock is set.
    while (cursor_ < records_.size()) {
      const auto ts = record_timestamp(records_[cursor_]);
      if (ts) {
        window_start_ = (*ts >= 0 ? *ts / period : (*ts - period + 1) / period) * period;
        window_end_ = window_start_ + period;
        window_open_ = true;
        break;
      }
      pending_.push_back(records_[cursor_]);
      ++cursor_;
    }
    if (!window_open_) {
      // Source had no usable timestamps at all.
      if (!pending_.empty()) {
        window_start_ = 0;
        window_end_ = period;
        publish_package(bus, std::move(pending_));
        pending_.clear();
        return true;
      }
      publish_eos(bus);
      return false;
    }
  }

  if (cursor_ >= records_.size()) {
    if (!pending_.empty()) {  // final partial package
      publish_package(bus, std::move(pending_));
      pending_.clear();
      return true;
    }
    publish_eos(bus);
    return false;
  }

  // Build one package: everything arriving before the window closes.
  std::vector<std::string> current = std::move(pending_);
  pending_.clear();
  while (cursor_ < records_.size()) {
    const auto ts = record_timestamp(records_[cursor_]);
    if (ts && *ts >= window_end_) break;  // first record of a later window
    current.push_back(std::move(records_[cursor_]));
    ++cursor_;
  }
  publish_package(bus, std::move(current));
  window_start_ = window_end_;
  window_end_ += period;

  if (cursor_ >= records_.size()) {
    publish_eos(bus);
    return false;
  }
  return true;
}

void EdgeNode::run(broker::Client& bus) {
  while (step(bus)) {
  }
}

}  // namespace fogcycle::edge
