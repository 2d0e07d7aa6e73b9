#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fogcycle {

// Seconds since the Unix epoch, UTC. The wire format also accepts
// "YYYY-MM-DD HH:MM:SS"; everything internal is integer seconds.
using Timestamp = std::int64_t;

inline constexpr std::size_t kFieldCount = 17;

// Column order of a vehicle location report. This order is normative for the
// CSV wire format.
enum FieldIndex : std::size_t {
  kVlrId = 0,
  kRouteIdVlr,
  kRouteName,
  kRouteIdRta,
  kRouteNickname,
  kTripIdBr,
  kServiceTimeId,
  kTripIdTta,
  kTripStart,
  kTripFinish,
  kVehicleIdYab,
  kVehicleIdVlr,
  kVehicleIdVlrTa,
  kBdescription,
  kLat,
  kLng,
  kTimestamp,
};

const std::array<std::string_view, kFieldCount>& field_names();

// One raw 17-field record exactly as received. Values stay unparsed strings
// and any of them may be empty; validation is the fog's job, not the parser's.
struct RawTuple {
  std::array<std::string, kFieldCount> fields{};

  const std::string& operator[](std::size_t i) const { return fields[i]; }
  std::string& operator[](std::size_t i) { return fields[i]; }

  const std::string& route_name() const { return fields[kRouteName]; }
  const std::string& route_id_rta() const { return fields[kRouteIdRta]; }
  const std::string& trip_id_br() const { return fields[kTripIdBr]; }
  const std::string& trip_start() const { return fields[kTripStart]; }
  const std::string& trip_finish() const { return fields[kTripFinish]; }
  const std::string& vehicle_id_vlr() const { return fields[kVehicleIdVlr]; }
  const std::string& lat() const { return fields[kLat]; }
  const std::string& lng() const { return fields[kLng]; }
  const std::string& timestamp() const { return fields[kTimestamp]; }

  bool operator==(const RawTuple&) const = default;
};

struct MalformedRecord {
  std::string line;
  std::size_t line_no = 0;  // 1-based when known, 0 otherwise
  std::string why;
};

// Equality of this key defines the duplicate relation.
struct TupleKey {
  std::string vehicle_id_vlr;
  std::string route_id_rta;
  std::string trip_id_br;
  Timestamp timestamp = 0;

  auto operator<=>(const TupleKey&) const = default;
  bool operator==(const TupleKey&) const = default;
};

struct TupleKeyHash {
  std::size_t operator()(const TupleKey& k) const;
};

// One trip as driven by one vehicle: the scope of gap and duplicate alarms.
struct TripScope {
  std::string route_id_rta;
  std::string trip_id_br;
  std::string vehicle_id_vlr;

  auto operator<=>(const TripScope&) const = default;
  bool operator==(const TripScope&) const = default;
};

struct TripScopeHash {
  std::size_t operator()(const TripScope& s) const;
};

// Validated, projected tuple carrying the fog-assigned sequence number; the
// unit that reaches the cloud.
struct CanonicalTuple {
  std::uint64_t fog_id = 0;
  TupleKey key;
  std::string route_name;
  Timestamp trip_start = 0;
  Timestamp trip_finish = 0;
  double lat = 0.0;
  double lng = 0.0;
  bool late = false;

  bool operator==(const CanonicalTuple&) const = default;
};

// A batch of raw records for one collection window from one edge node.
// Records are raw CSV lines forwarded byte-verbatim.
struct StreamPackage {
  std::string edge_id;
  Timestamp window_start = 0;
  Timestamp window_end = 0;
  std::uint64_t seq = 0;  // strictly increasing per edge
  std::vector<std::string> records;

  bool operator==(const StreamPackage&) const = default;
};

enum class AlarmKind { MissingTuples, DuplicateTuples };

struct AlarmEvent {
  AlarmKind kind = AlarmKind::MissingTuples;
  TripScope scope;
  // MissingTuples detail: the surviving timestamps bounding the hole.
  Timestamp gap_start = 0;
  Timestamp gap_end = 0;
  std::uint64_t estimated_missing = 0;
  // DuplicateTuples detail.
  Timestamp key_timestamp = 0;
  std::uint64_t duplicate_count = 0;
  Timestamp emitted_at = 0;
};

enum class DropCode {
  MissingAttributeValue,
  DuplicateTuple,
  WrongAttributeValue,
  MalformedRecord,
};

std::string_view drop_code_name(DropCode code);

struct DropReason {
  DropCode code = DropCode::MalformedRecord;
  std::string field_name;  // set for Missing/Wrong, empty for the others

  auto operator<=>(const DropReason&) const = default;
  bool operator==(const DropReason&) const = default;
};

// One row of the trip-completeness report.
struct TripReportRow {
  std::string route_id_rta;
  std::uint64_t scheduled_trips = 0;
  std::uint64_t performed_trips = 0;
  std::int64_t percent_hundredths = 0;

  bool operator==(const TripReportRow&) const = default;
};

// round(100 * performed / scheduled, 2) as integer hundredths, half-up;
// 0 when nothing is scheduled.
std::int64_t percent_hundredths(std::uint64_t performed, std::uint64_t scheduled);
std::string format_percent(std::int64_t hundredths);  // "6.45"

// ---- timestamps ----------------------------------------------------------

// Accepts integer epoch seconds or "YYYY-MM-DD HH:MM:SS" (UTC).
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_datetime(Timestamp t);

// ---- decimals ------------------------------------------------------------

std::optional<double> parse_decimal(std::string_view text);
std::string format_decimal(double v);  // fixed, 6 fractional digits

// ---- CSV wire format -----------------------------------------------------
//
// 17 comma-separated columns in schema order, UTF-8, '\n' line endings,
// RFC-style double-quote escaping. Fields never contain raw newlines; a
// quote left open at end of line is unbalanced quoting.

std::optional<std::vector<std::string>> split_csv_line(std::string_view line);
std::string csv_field(std::string_view value);  // quotes only when needed
std::string join_csv_line(const std::vector<std::string>& fields);

using ParsedRecord = std::variant<RawTuple, MalformedRecord>;
ParsedRecord parse_raw_record(std::string_view line);
std::string serialize_record(const RawTuple& t);  // normalized quoting
std::string csv_header_line();
bool looks_like_header(std::string_view line);

// Returns the four-component key, or MissingAttributeValue naming the first
// empty component in schema order. A present-but-unparseable timestamp is a
// WrongAttributeValue.
std::variant<TupleKey, DropReason> tuple_key(const RawTuple& t);

// ---- broker payload codecs -----------------------------------------------
//
// StreamPackage payload ('P' header line, then the raw records) and the
// end-of-stream control marker. Both are plain text, one logical line each
// plus the verbatim records.

std::string encode_package(const StreamPackage& pkg);
std::optional<StreamPackage> decode_package(std::string_view payload);

std::string encode_edge_eos(const std::string& edge_id, std::uint64_t packages,
                            std::uint64_t records);
struct EdgeEos {
  std::string edge_id;
  std::uint64_t packages = 0;
  std::uint64_t records = 0;
};
std::optional<EdgeEos> decode_edge_eos(std::string_view payload);

// Canonical tuple line used inside upload payloads.
std::string canonical_to_line(const CanonicalTuple& t);
std::optional<CanonicalTuple> canonical_from_line(std::string_view line);

}  // namespace fogcycle
