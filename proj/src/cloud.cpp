#include "fogcycle/cloud.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

namespace fogcycle::cloud {

using ordered_json = nlohmann::ordered_json;

// ---- upload codec ----

namespace {

bool take_line(std::string_view& rest, std::string_view& line) {
  if (rest.empty()) return false;
  const auto pos = rest.find('\n');
  if (pos == std::string_view::npos) {
    line = rest;
    rest = {};
  } else {
    line = rest.substr(0, pos);
    rest = rest.substr(pos + 1);
  }
  return true;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

std::optional<Timestamp> parse_i64(std::string_view s) {
  const bool neg = !s.empty() && s.front() == '-';
  const auto mag = parse_u64(neg ? s.substr(1) : s);
  if (!mag) return std::nullopt;
  return neg ? -static_cast<Timestamp>(*mag) : static_cast<Timestamp>(*mag);
}

}  // namespace

std::string encode_upload(const UploadHeader& h, const std::vector<CanonicalTuple>& tuples) {
  std::string out = "U " + h.fog_id + ' ' + std::to_string(h.window_start) + ' ' +
                    std::to_string(h.window_end) + ' ' + std::to_string(h.upload_seq) +
                    ' ' + std::to_string(h.fog_id_lo) + ' ' + std::to_string(h.fog_id_hi) +
                    ' ' + std::to_string(tuples.size()) + '\n';
  for (const auto& t : tuples) {
    out += canonical_to_line(t);
    out.push_back('\n');
  }
  return out;
}

std::optional<UploadBatch> decode_upload(std::string_view payload) {
  std::string_view rest = payload;
  std::string_view header;
  if (!take_line(rest, header)) return std::nullopt;
  const auto parts = split_ws(header);
  if (parts.size() != 8 || parts[0] != "U") return std::nullopt;
  UploadBatch b;
  b.header.fog_id = std::string(parts[1]);
  const auto ws = parse_i64(parts[2]);
  const auto we = parse_i64(parts[3]);
  const auto seq = parse_u64(parts[4]);
  const auto lo = parse_u64(parts[5]);
  const auto hi = parse_u64(parts[6]);
  const auto count = parse_u64(parts[7]);
  if (!ws || !we || !seq || !lo || !hi || !count) return std::nullopt;
  b.header.window_start = *ws;
  b.header.window_end = *we;
  b.header.upload_seq = *seq;
  b.header.fog_id_lo = *lo;
  b.header.fog_id_hi = *hi;
  b.tuples.reserve(*count);
  for (std::uint64_t i = 0; i < *count; ++i) {
    std::string_view line;
    if (!take_line(rest, line)) return std::nullopt;
    auto t = canonical_from_line(line);
    if (!t) return std::nullopt;
    b.tuples.push_back(std::move(*t));
  }
  if (!rest.empty()) return std::nullopt;
  return b;
}

std::string encode_fog_eos(const std::string& fog_id, std::uint64_t uploads,
                           std::uint64_t survivors) {
  return "F " + fog_id + ' ' + std::to_string(uploads) + ' ' + std::to_string(survivors);
}

std::optional<FogEos> decode_fog_eos(std::string_view payload) {
  const auto parts = split_ws(payload);
  if (parts.size() != 4 || parts[0] != "F") return std::nullopt;
  const auto uploads = parse_u64(parts[2]);
  const auto survivors = parse_u64(parts[3]);
  if (!uploads || !survivors) return std::nullopt;
  return FogEos{std::string(parts[1]), *uploads, *survivors};
}

// ---- store ----

std::variant<IngestStats, std::string> CloudStore::ingest_batch(std::string_view payload) {
  auto batch = decode_upload(payload);
  if (!batch) return std::string("undecodable upload payload");
  IngestStats stats;
  if (!seen_batches_.emplace(batch->header.fog_id, batch->header.upload_seq).second) {
    // At-least-once redelivery of a whole batch; ignore it entirely.
    stats.replayed_batch = true;
    ++replays_;
    return stats;
  }
  StoredBatch stored;
  stored.header = batch->header;
  for (auto& t : batch->tuples) {
    if (!seen_keys_.insert(t.key).second) {
      ++stats.duplicate_keys;
      ++content_dups_;
      continue;
    }
    stored.tuples.push_back(std::move(t));
    ++stats.accepted;
  }
  accepted_ += stats.accepted;
  batches_.push_back(std::move(stored));
  return stats;
}

// ---- map-reduce ----

std::vector<TripReportRow> map_reduce_trips(const CloudStore& store,
                                            const feedgen::Schedule& schedule,
                                            std::uint64_t min_tuples_per_trip) {
  if (min_tuples_per_trip == 0) min_tuples_per_trip = 1;

  // Map: key tuples by (route, trip).
  std::map<std::pair<std::string, std::string>, std::uint64_t> counts;
  for (const auto& batch : store.batches())
    for (const auto& t : batch.tuples)
      ++counts[{t.key.route_id_rta, t.key.trip_id_br}];

  // Reduce: per scheduled route, count trips that performed.
  std::vector<TripReportRow> rows;
  std::set<std::pair<std::string, std::string>> scheduled;
  for (const auto& route : schedule.routes) {
    TripReportRow row;
    row.route_id_rta = route.route_id_rta;
    row.scheduled_trips = route.trips.size();
    for (const auto& trip : route.trips) {
      scheduled.emplace(route.route_id_rta, trip.trip_id_br);
      const auto it = counts.find({route.route_id_rta, trip.trip_id_br});
      if (it != counts.end() && it->second >= min_tuples_per_trip) ++row.performed_trips;
    }
    row.percent_hundredths = percent_hundredths(row.performed_trips, row.scheduled_trips);
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const TripReportRow& a, const TripReportRow& b) {
    return a.route_id_rta < b.route_id_rta;
  });

  // Tuples outside the schedule are reported, not dropped.
  std::uint64_t unknown_trips = 0;
  for (const auto& [key, count] : counts) {
    if (!scheduled.contains(key) && count >= min_tuples_per_trip) ++unknown_trips;
  }
  if (unknown_trips > 0) {
    TripReportRow residual;
    residual.route_id_rta = std::string(kUnknownRouteLabel);
    residual.scheduled_trips = 0;
    residual.performed_trips = unknown_trips;
    residual.percent_hundredths = 0;
    rows.push_back(std::move(residual));
  }
  return rows;
}

// ---- totals ----

std::string fog_snapshot_to_json(const FogTotalsSnapshot& s) {
  ordered_json j;
  j["fog"] = s.fog_id;
  j["records_received"] = s.records_received;
  j["malformed_quarantined"] = s.malformed_quarantined;
  j["dropped_missing_attribute"] = s.dropped_missing_attribute;
  j["dropped_wrong_value"] = s.dropped_wrong_value;
  j["dropped_duplicate"] = s.dropped_duplicate;
  j["survivors"] = s.survivors;
  j["alarms"] = s.alarms;
  return j.dump();
}

std::optional<FogTotalsSnapshot> fog_snapshot_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  FogTotalsSnapshot s;
  s.fog_id = j.value("fog", "");
  s.records_received = j.value("records_received", 0ull);
  s.malformed_quarantined = j.value("malformed_quarantined", 0ull);
  s.dropped_missing_attribute = j.value("dropped_missing_attribute", 0ull);
  s.dropped_wrong_value = j.value("dropped_wrong_value", 0ull);
  s.dropped_duplicate = j.value("dropped_duplicate", 0ull);
  s.survivors = j.value("survivors", 0ull);
  s.alarms = j.value("alarms", 0ull);
  return s;
}

bool totals_identity_holds(std::uint64_t received, std::uint64_t deleted,
                           std::uint64_t arrived, std::uint64_t quarantined) {
  return received == deleted + arrived + quarantined;
}

std::variant<Totals, std::string> totals(const CloudStore& store,
                                         const std::vector<FogTotalsSnapshot>& fogs) {
  Totals t;
  for (const auto& f : fogs) {
    t.received_at_fog += f.records_received;
    t.quarantined += f.malformed_quarantined;
    t.deleted_at_fog +=
        f.dropped_missing_attribute + f.dropped_wrong_value + f.dropped_duplicate;
  }
  t.deleted_at_cloud = store.content_duplicates_dropped();
  t.deleted_total = t.deleted_at_fog + t.deleted_at_cloud;
  t.arrived_at_cloud = store.accepted();
  if (!totals_identity_holds(t.received_at_fog, t.deleted_total, t.arrived_at_cloud,
                             t.quarantined)) {
    return std::string("InconsistentSnapshots: received=") +
           std::to_string(t.received_at_fog) + " deleted=" + std::to_string(t.deleted_total) +
           " arrived=" + std::to_string(t.arrived_at_cloud) +
           " quarantined=" + std::to_string(t.quarantined);
  }
  return t;
}

// ---- report rendering ----

std::string render_trips_csv(const std::vector<TripReportRow>& rows) {
  std::string out = "route_id_rta,scheduled,performed,percent\n";
  for (const auto& r : rows) {
    out += csv_field(r.route_id_rta);
    out += ',' + std::to_string(r.scheduled_trips);
    out += ',' + std::to_string(r.performed_trips);
    out += ',' + format_percent(r.percent_hundredths);
    out += '\n';
  }
  return out;
}

std::string render_totals_text(const Totals& t,
                               const std::vector<FogTotalsSnapshot>& fogs) {
  std::string out;
  out += "tuples received at fog:   " + std::to_string(t.received_at_fog) + '\n';
  out += "tuples deleted:           " + std::to_string(t.deleted_total) + '\n';
  out += "  at fog (clean rules):   " + std::to_string(t.deleted_at_fog) + '\n';
  out += "  at cloud (late dups):   " + std::to_string(t.deleted_at_cloud) + '\n';
  out += "tuples arrived at cloud:  " + std::to_string(t.arrived_at_cloud) + '\n';
  out += "records quarantined:      " + std::to_string(t.quarantined) + '\n';
  out += "identity received == deleted + arrived + quarantined: ";
  out += totals_identity_holds(t.received_at_fog, t.deleted_total, t.arrived_at_cloud,
                               t.quarantined)
             ? "OK"
             : "VIOLATED";
  out += '\n';
  for (const auto& f : fogs) {
    out += "fog " + f.fog_id + ": received=" + std::to_string(f.records_received) +
           " missing=" + std::to_string(f.dropped_missing_attribute) +
           " wrong=" + std::to_string(f.dropped_wrong_value) +
           " duplicate=" + std::to_string(f.dropped_duplicate) +
           " survivors=" + std::to_string(f.survivors) +
           " quarantined=" + std::to_string(f.malformed_quarantined) +
           " alarms=" + std::to_string(f.alarms) + '\n';
  }
  return out;
}

// ---- cloud node ----

CloudNode::CloudNode(std::size_t expected_fogs, std::filesystem::path batches_dir)
    : expected_fogs_(expected_fogs), batches_dir_(std::move(batches_dir)) {
  if (!batches_dir_.empty()) std::filesystem::create_directories(batches_dir_);
}

void CloudNode::attach(broker::Client& bus) { bus.subscribe("cloud/upload"); }

bool CloudNode::pump(broker::Client& bus, std::chrono::milliseconds timeout) {
  const auto delivery = bus.poll(timeout);
  if (!delivery) return false;
  if (delivery->topic != "cloud/upload") return true;
  if (delivery->payload.starts_with("F ")) {
    if (decode_fog_eos(delivery->payload)) ++eos_seen_;
    return true;
  }
  const auto result = store_.ingest_batch(delivery->payload);
  if (std::holds_alternative<std::string>(result)) {
    ++decode_errors_;
    return true;
  }
  const auto& stats = std::get<IngestStats>(result);
  if (!stats.replayed_batch && !batches_dir_.empty()) {
    persist(store_.batches().back(), delivery->payload);
  }
  return true;
}

void CloudNode::persist(const StoredBatch& batch, std::string_view payload) {
  char name[64];
  std::snprintf(name, sizeof(name), "%s_%09llu.upload", batch.header.fog_id.c_str(),
                static_cast<unsigned long long>(batch.header.upload_seq));
  std::ofstream f(batches_dir_ / name, std::ios::binary);
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

}  // namespace fogcycle::cloud
