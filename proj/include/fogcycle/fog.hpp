#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "fogcycle/broker.hpp"
#include "fogcycle/model.hpp"

namespace fogcycle::fog {

// ---- acquisition ------------------------------------------------------------

struct AcquireResult {
  std::vector<RawTuple> tuples;
  std::vector<MalformedRecord> malformed;
};

// Parses a package's records; malformed ones are quarantined, never lost.
AcquireResult acquire(const StreamPackage& pkg);

// ---- id assignment ------------------------------------------------------------

// Monotone per-node sequence, first id is 1.
class IdCounter {
 public:
  std::uint64_t next() { return ++last_; }
  std::uint64_t last() const { return last_; }

 private:
  std::uint64_t last_ = 0;
};

using NumberedTuple = std::pair<std::uint64_t, RawTuple>;
std::vector<NumberedTuple> assign_ids(std::vector<RawTuple> tuples, IdCounter& counter);

// ---- cleaning -------------------------------------------------------------------

struct CleanConfig {
  std::uint32_t cadence_seconds = 5;
  Timestamp slack_seconds = 120;  // tolerance around [trip_start, trip_finish]
  Timestamp emitted_at = 0;       // stamped on alarms
};

// Keys seen in the current and previous window; duplicates older than that
// are the cloud's problem.
class DedupIndex {
 public:
  // Advances the horizon when window_start moves forward; a jump of more than
  // one period discards both generations.
  void rotate(Timestamp window_start, Timestamp period = 0);
  bool contains(const TupleKey& k) const;
  void insert(const TupleKey& k);
  std::size_t size() const { return current_.size() + previous_.size(); }

 private:
  std::unordered_set<TupleKey, TupleKeyHash> current_;
  std::unordered_set<TupleKey, TupleKeyHash> previous_;
  std::optional<Timestamp> window_;
};

// Last observed tick per trip scope, carried across packages for the gap scan.
class TripIndex {
 public:
  std::optional<Timestamp> last_seen(const TripScope& s) const;
  void update(const TripScope& s, Timestamp t);
  std::size_t size() const { return last_seen_.size(); }

 private:
  std::unordered_map<TripScope, Timestamp, TripScopeHash> last_seen_;
};

struct CleanResult {
  std::vector<CanonicalTuple> survivors;  // arrival order preserved
  std::vector<std::pair<RawTuple, DropReason>> drops;
  std::vector<AlarmEvent> alarms;
};

// The processing block. Per tuple, in order: (a) missing-attribute check over
// key + lat/lng/trip_start/trip_finish, (b) wrong-value check (parse, ranges,
// timestamp inside the trip plus slack), (c) duplicate check by TupleKey
// (first occurrence survives, one DuplicateTuples alarm per offending key per
// window), (d) projection to CanonicalTuple. Afterwards (e) a per-trip gap
// scan over this batch's observed ticks: gap >= 2 * cadence raises a
// MissingTuples alarm estimating floor(gap / cadence) - 1 lost tuples.
//
// The gap timeline deliberately includes ticks of tuples dropped in (a)/(b)
// whose trip identity and timestamp are themselves valid: those tuples were
// observed, so their ticks are not missing - only their attributes were bad.
CleanResult clean(const std::vector<NumberedTuple>& tuples, const CleanConfig& cfg,
                  DedupIndex& dedup, TripIndex& trips);

// Stable lexicographic sort by (route_id_rta, trip_id_br, timestamp); ties
// keep fog_id order.
std::vector<CanonicalTuple> sort_window(std::vector<CanonicalTuple> tuples);
bool is_sorted_window(const std::vector<CanonicalTuple>& tuples);

// ---- stream database -----------------------------------------------------------

enum class TableState { Retained, Uploaded, Evicted };

enum class DbError { UnknownWindow, EvictBeforeUpload, AlreadyUploaded };

// Windowed in-memory store. A table moves Retained -> Uploaded -> Evicted and
// never backwards; evicted windows stay known so late tuples can be detected.
class StreamDatabase {
 public:
  void store_tuple(Timestamp window_start, Timestamp window_end, CanonicalTuple t);
  void store_table(Timestamp window_start, Timestamp window_end,
                   std::vector<CanonicalTuple> tuples);

  // Sorted survivors of a Retained table, exactly once per upload cycle.
  std::variant<std::vector<CanonicalTuple>, DbError> leverage(Timestamp window_start);
  std::optional<DbError> mark_uploaded(Timestamp window_start, Timestamp now);

  // Explicit evict honours the state machine (refused before upload).
  std::optional<DbError> evict(Timestamp window_start);
  // Removes Uploaded tables whose upload is older than the retention TTL.
  std::size_t evict_expired(Timestamp now);

  std::optional<TableState> state(Timestamp window_start) const;
  std::vector<Timestamp> retained_windows() const;  // ascending
  std::size_t tuples_in(Timestamp window_start) const;

  void set_retention_ttl(Timestamp ttl) { retention_ttl_ = ttl; }
  Timestamp retention_ttl() const { return retention_ttl_; }

 private:
  struct Table {
    Timestamp window_end = 0;
    TableState state = TableState::Retained;
    Timestamp uploaded_at = 0;
    std::vector<CanonicalTuple> tuples;
  };
  std::map<Timestamp, Table> tables_;
  Timestamp retention_ttl_ = 86400;
};

// ---- monitoring / control ---------------------------------------------------------

enum class Task { Transportation, Processing, Acquisition, Storage, Leverage, Control };
std::string_view task_name(Task t);

struct TaskStatus {
  TaskStatus() = default;
  explicit TaskStatus(Task t) : task(t) {}

  Task task = Task::Transportation;
  std::uint64_t tuples_in = 0;
  std::uint64_t tuples_out = 0;
  std::map<DropReason, std::uint64_t> tuples_dropped;
  std::uint64_t alarms_emitted = 0;
  Timestamp last_completed_window = 0;

  std::uint64_t dropped_total() const;
  bool conserved() const { return tuples_in == tuples_out + dropped_total(); }
};

enum class AdminCommand { Pause, Resume, Flush, SetRetention };

// ---- the fog node ---------------------------------------------------------------

struct FogConfig {
  std::string fog_id = "fog1";
  std::vector<std::string> edge_ids;  // edges this node is responsible for
  Timestamp package_period_seconds = 300;
  std::uint32_t cadence_seconds = 5;
  Timestamp slack_seconds = 120;
  Timestamp retention_ttl_seconds = 86400;
  std::filesystem::path quarantine_dir;  // empty disables quarantine files
  std::size_t alarm_batch_max_bytes = 4096;
};

// One fog node = one sequential life-cycle loop. Packages come in, the four
// blocks run (acquire, assign ids, clean+sort+alarm, table upkeep), survivors
// land in event-time tables and are uploaded once the watermark passes them.
class FogNode {
 public:
  explicit FogNode(FogConfig cfg);

  void attach(broker::Client& bus);  // subscribes to this node's topics
  // Handles one delivery if available; returns false when none arrived.
  bool pump(broker::Client& bus, std::chrono::milliseconds timeout);

  void handle_package(const StreamPackage& pkg, broker::Client& bus);
  void handle_edge_eos(const EdgeEos& eos, broker::Client& bus);

  // Admin surface (data control task).
  void admin(AdminCommand cmd, broker::Client& bus, Timestamp retention_ttl = 0);
  bool paused() const { return paused_; }

  bool finished() const { return finished_; }
  std::vector<TaskStatus> monitor_snapshot() const;

  const FogConfig& config() const { return cfg_; }
  StreamDatabase& database() { return db_; }
  const StreamDatabase& database() const { return db_; }

  // Totals used by the cloud's conservation identity.
  std::uint64_t records_received() const { return acquisition_.tuples_in; }
  std::uint64_t malformed_quarantined() const;
  std::uint64_t dropped(DropCode code) const;
  std::uint64_t survivors_out() const { return processing_.tuples_out; }
  std::uint64_t uploads_published() const { return uploads_published_; }
  std::uint64_t alarms_emitted() const { return processing_.alarms_emitted; }

 private:
  void route_survivors(std::vector<CanonicalTuple> survivors, Timestamp arrival_window);
  void upload_ready(broker::Client& bus);
  void upload_window(Timestamp window_start, Timestamp now, broker::Client& bus);
  void flush_all(broker::Client& bus);
  void publish_alarms(const std::vector<AlarmEvent>& alarms, broker::Client& bus);
  void quarantine(const StreamPackage& pkg, const std::vector<MalformedRecord>& bad);
  Timestamp watermark() const;
  void maybe_finish(broker::Client& bus);

  FogConfig cfg_;
  IdCounter ids_;
  DedupIndex dedup_;
  TripIndex trips_;
  StreamDatabase db_;

  struct EdgeProgress {
    Timestamp latest_window_end = 0;
    std::uint64_t packages = 0;
    bool eos = false;
  };
  std::map<std::string, EdgeProgress> edges_;

  Timestamp open_window_ = 0;
  Timestamp logical_now_ = 0;  // max window_end observed; drives eviction
  bool saw_any_package_ = false;
  bool paused_ = false;
  bool finished_ = false;
  std::uint64_t upload_seq_ = 0;
  std::uint64_t uploads_published_ = 0;
  std::uint64_t alarm_local_seq_ = 0;
  std::uint64_t commands_handled_ = 0;

  TaskStatus transportation_{Task::Transportation};
  TaskStatus acquisition_{Task::Acquisition};
  TaskStatus processing_{Task::Processing};
  TaskStatus storage_{Task::Storage};
  TaskStatus leverage_{Task::Leverage};
  TaskStatus control_{Task::Control};
};

// Topics this node publishes on.
inline constexpr std::string_view kUploadTopic = "cloud/upload";
inline constexpr std::string_view kAlarmTopic = "alarms";

// Alarm events travel as one JSON object per line; helpers shared with the
// report writers.
std::string alarm_to_json(const AlarmEvent& a, const std::string& fog_id);

}  // namespace fogcycle::fog
