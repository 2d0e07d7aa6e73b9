#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fogcycle/broker.hpp"
#include "fogcycle/model.hpp"

namespace fogcycle::edge {

struct EdgeConfig {
  std::string edge_id;
  std::uint32_t package_period_seconds = 300;
};

// Edge node emulator. Acquires records from its source in arrival order,
// batches them into fixed-period packages and publishes them; it never parses
// beyond the timestamp column, never reorders and never cleans.
//
// The replay clock for a file source is feed-driven: arrival time is the
// running maximum of record timestamps, so a scrambled record whose timestamp
// lies in an already-closed window simply joins the package open when it
// arrives (arrival-time windowing). Records whose timestamp column does not
// parse cannot advance the clock and also join the open package.
class EdgeNode {
 public:
  EdgeNode(EdgeConfig cfg, std::vector<std::string> records);

  // Publishes the next package (possibly an empty one for a quiet window) or,
  // once the source is exhausted, the final partial package and then the
  // end-of-stream marker. Returns false when there is nothing left to do.
  bool step(broker::Client& bus);
  void run(broker::Client& bus);

  bool finished() const { return finished_; }
  std::uint64_t records_total() const { return records_.size(); }
  std::uint64_t records_published() const { return records_published_; }
  std::uint64_t packages_published() const { return packages_published_; }

  static constexpr const char* kPackagesPrefix = "packages/";
  static constexpr const char* kControlPrefix = "control/";

 private:
  std::optional<Timestamp> record_timestamp(const std::string& line) const;
  void publish_package(broker::Client& bus, std::vector<std::string> records);
  void publish_eos(broker::Client& bus);

  EdgeConfig cfg_;
  std::vector<std::string> records_;
  std::size_t cursor_ = 0;
  bool window_open_ = false;
  Timestamp window_start_ = 0;
  Timestamp window_end_ = 0;
  std::vector<std::string> pending_;  // records seen before the clock first set
  std::uint64_t seq_ = 0;
  std::uint64_t records_published_ = 0;
  std::uint64_t packages_published_ = 0;
  bool finished_ = false;
};

}  // namespace fogcycle::edge
