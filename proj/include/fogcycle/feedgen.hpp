#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fogcycle/model.hpp"

namespace fogcycle::feedgen {

struct TripSpec {
  std::string trip_id_br;
  Timestamp trip_start = 0;
  Timestamp trip_finish = 0;
  std::string vehicle_id_vlr;
};

struct RouteSchedule {
  std::string route_id_rta;
  std::string route_name;  // defaults to "Route <id>" when empty
  std::vector<TripSpec> trips;
};

struct Schedule {
  std::uint32_t cadence_seconds = 5;
  std::vector<RouteSchedule> routes;

  // nullopt when valid, otherwise a description of the first violation.
  std::optional<std::string> validate() const;
  std::uint64_t scheduled_trip_total() const;
};

struct InvalidSchedule : std::runtime_error {
  explicit InvalidSchedule(const std::string& what) : std::runtime_error(what) {}
};

// Bounding box the synthetic vehicle paths stay inside.
struct GeoBox {
  double lat_min = 46.05;
  double lat_max = 46.15;
  double lng_min = -64.90;
  double lng_max = -64.70;
};

struct TripManifestRow {
  TripScope scope;
  Timestamp first_ts = 0;
  Timestamp last_ts = 0;
  std::uint64_t tuple_count = 0;
};

struct FeedManifest {
  std::uint32_t cadence_seconds = 5;
  std::vector<TripManifestRow> trips;
  std::uint64_t total_tuples = 0;
};

struct Feed {
  std::vector<RawTuple> tuples;
};

// One tuple per vehicle per cadence tick per trip, merged into a single
// arrival-ordered stream. Throws InvalidSchedule on a bad schedule.
Feed generate_clean_feed(const Schedule& s, FeedManifest* manifest = nullptr,
                         const GeoBox& box = GeoBox{});

// ---- corruption -----------------------------------------------------------

enum class DefectType { Duplicate, Drop, BlankField, WrongValue };
std::string_view defect_type_name(DefectType t);

struct DefectEntry {
  DefectType type = DefectType::Drop;
  std::uint64_t original_index = 0;  // index into the clean feed
  std::string field;                 // blanked or corrupted field, if any
  TupleKey key;
};

struct DefectLedger {
  std::vector<DefectEntry> entries;

  std::uint64_t count(DefectType t) const;
  std::uint64_t count_wrong(std::string_view field) const;
};

// Rates are per clean tuple and mutually exclusive: a tuple receives at most
// one defect, so the ledger is an exact oracle. Blanks target
// lat/lng/trip_start/trip_finish (blanking a key field would make the tuple
// unattributable, turning the defect into a missing tuple as well).
// wrong_value_field selects what the wrong-value defect corrupts: "lat"
// (spatial, the default) or "timestamp" (which also knocks the tick out of
// its trip's timeline - a deliberately overlapping stress mode).
struct CorruptionPlan {
  double duplicate_rate = 0.0;
  double drop_rate = 0.0;
  double blank_field_rate = 0.0;
  double wrong_value_rate = 0.0;
  std::string wrong_value_field = "lat";
  std::uint32_t shuffle_window = 0;  // max positional displacement
  std::uint64_t rng_seed = 0;

  std::optional<std::string> validate() const;
};

Feed corrupt_feed(const Feed& feed, const CorruptionPlan& plan,
                  DefectLedger* ledger = nullptr);

// ---- files ------------------------------------------------------------------

void write_csv(const Feed& feed, const std::filesystem::path& path,
               bool header = true);
std::variant<Feed, MalformedRecord> read_csv(const std::filesystem::path& path);

// Raw lines (header skipped), for byte-verbatim replay through edges.
std::vector<std::string> read_feed_lines(const std::filesystem::path& path);

void write_manifest(const FeedManifest& m, const std::filesystem::path& path);
std::optional<FeedManifest> read_manifest(const std::filesystem::path& path);

void write_ledger(const DefectLedger& l, const std::filesystem::path& path);
std::optional<DefectLedger> read_ledger(const std::filesystem::path& path);

// Schedule file: JSON with either explicit trips or a compact generator form
// (trip_count / first_start / headway_seconds / duration_seconds / vehicles).
std::variant<Schedule, std::string> load_schedule(const std::filesystem::path& path);
std::variant<Schedule, std::string> parse_schedule_json(std::string_view text);
void write_schedule(const Schedule& s, const std::filesystem::path& path);

}  // namespace fogcycle::feedgen
