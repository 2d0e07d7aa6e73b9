#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "fogcycle/broker.hpp"
#include "fogcycle/feedgen.hpp"
#include "fogcycle/model.hpp"

namespace fogcycle::cloud {

// ---- upload wire format -----------------------------------------------------
//
// 'U' header line, then one canonical tuple line per record. (fog_id, seq)
// identifies the batch for replay detection under at-least-once delivery.

struct UploadHeader {
  std::string fog_id;
  Timestamp window_start = 0;
  Timestamp window_end = 0;
  std::uint64_t upload_seq = 0;
  std::uint64_t fog_id_lo = 0;
  std::uint64_t fog_id_hi = 0;
};

std::string encode_upload(const UploadHeader& h, const std::vector<CanonicalTuple>& tuples);

struct UploadBatch {
  UploadHeader header;
  std::vector<CanonicalTuple> tuples;
};
std::optional<UploadBatch> decode_upload(std::string_view payload);

std::string encode_fog_eos(const std::string& fog_id, std::uint64_t uploads,
                           std::uint64_t survivors);
struct FogEos {
  std::string fog_id;
  std::uint64_t uploads = 0;
  std::uint64_t survivors = 0;
};
std::optional<FogEos> decode_fog_eos(std::string_view payload);

// ---- store ---------------------------------------------------------------------

struct IngestStats {
  std::uint64_t accepted = 0;
  std::uint64_t duplicate_keys = 0;  // content duplicates rejected
  bool replayed_batch = false;       // whole batch seen before; ignored
};

struct StoredBatch {
  UploadHeader header;
  std::vector<CanonicalTuple> tuples;  // only the accepted ones
};

// Append-only accumulation with global TupleKey dedup, so at-least-once
// delivery never double-counts and duplicates that straddled the fog's dedup
// horizon are still caught here.
class CloudStore {
 public:
  std::variant<IngestStats, std::string> ingest_batch(std::string_view payload);

  const std::vector<StoredBatch>& batches() const { return batches_; }
  std::uint64_t accepted() const { return accepted_; }
  std::uint64_t content_duplicates_dropped() const { return content_dups_; }
  std::uint64_t batches_replayed() const { return replays_; }

 private:
  std::vector<StoredBatch> batches_;
  std::unordered_set<TupleKey, TupleKeyHash> seen_keys_;
  std::set<std::pair<std::string, std::uint64_t>> seen_batches_;
  std::uint64_t accepted_ = 0;
  std::uint64_t content_dups_ = 0;
  std::uint64_t replays_ = 0;
};

// ---- batch aggregation ------------------------------------------------------------

inline constexpr std::string_view kUnknownRouteLabel = "(unknown)";

// Map phase keys stored tuples by (route_id_rta, trip_id_br); reduce counts
// tuples per trip and a trip is performed once its count reaches
// min_tuples_per_trip. Tuples outside the schedule land in one residual
// "(unknown)" row appended after the per-route rows.
std::vector<TripReportRow> map_reduce_trips(const CloudStore& store,
                                            const feedgen::Schedule& schedule,
                                            std::uint64_t min_tuples_per_trip = 1);

// ---- pipeline totals -----------------------------------------------------------------

// What each fog reports at end of run; serialized as JSON lines so reports can
// be re-rendered without re-running the pipeline.
struct FogTotalsSnapshot {
  std::string fog_id;
  std::uint64_t records_received = 0;
  std::uint64_t malformed_quarantined = 0;
  std::uint64_t dropped_missing_attribute = 0;
  std::uint64_t dropped_wrong_value = 0;
  std::uint64_t dropped_duplicate = 0;
  std::uint64_t survivors = 0;
  std::uint64_t alarms = 0;
};

std::string fog_snapshot_to_json(const FogTotalsSnapshot& s);
std::optional<FogTotalsSnapshot> fog_snapshot_from_json(std::string_view line);

struct Totals {
  std::uint64_t received_at_fog = 0;
  std::uint64_t deleted_total = 0;  // fog drops + cloud content duplicates
  std::uint64_t arrived_at_cloud = 0;
  std::uint64_t quarantined = 0;
  std::uint64_t deleted_at_fog = 0;
  std::uint64_t deleted_at_cloud = 0;
};

// The arithmetic identity every run must satisfy.
bool totals_identity_holds(std::uint64_t received, std::uint64_t deleted,
                           std::uint64_t arrived, std::uint64_t quarantined = 0);

// InconsistentSnapshots (an error string) when the identity fails.
std::variant<Totals, std::string> totals(const CloudStore& store,
                                         const std::vector<FogTotalsSnapshot>& fogs);

// ---- report rendering ------------------------------------------------------------------

std::string render_trips_csv(const std::vector<TripReportRow>& rows);
std::string render_totals_text(const Totals& t,
                               const std::vector<FogTotalsSnapshot>& fogs);

// ---- subscription wrapper ----------------------------------------------------------------

// Cloud sink node: subscribes to cloud/upload, ingests batches, optionally
// persists every accepted batch payload for later re-rendering, and finishes
// once all expected fogs sent their end-of-stream marker.
class CloudNode {
 public:
  CloudNode(std::size_t expected_fogs, std::filesystem::path batches_dir = {});

  void attach(broker::Client& bus);
  bool pump(broker::Client& bus, std::chrono::milliseconds timeout);
  bool finished() const { return eos_seen_ >= expected_fogs_; }

  CloudStore& store() { return store_; }
  const CloudStore& store() const { return store_; }
  std::uint64_t decode_errors() const { return decode_errors_; }

 private:
  void persist(const StoredBatch& batch, std::string_view payload);

  CloudStore store_;
  std::size_t expected_fogs_;
  std::atomic<std::size_t> eos_seen_{0};
  std::filesystem::path batches_dir_;
  std::uint64_t decode_errors_ = 0;
};

}  // namespace fogcycle::cloud
